//! Command-line front end for experiments and self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnucb::harness::{
    emit_outputs, instance_environment, ntk_subsample, run_experiment, ExperimentConfig,
    NtkDiagSpec,
};
use bnucb::ntk::{check_assumption1, effective_dimension, ntk_gram};
use bnucb::{diagnostics, Error};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "bnucb",
    version,
    about = "Batched neural contextual bandit experiments"
)]
struct Cli {
    /// Overrides the master seed of the config (and seeds the self-checks).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every configured (instance, algorithm) pair and writes CSV/JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// NTK gram matrix, smallest eigenvalue and effective dimension on a
    /// subsample of the first instance's contexts.
    Ntk {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Network gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 50)]
        nets: usize,
    },
    /// Covariance inverse, log-determinant and NTK Monte Carlo checks.
    OracleCheck {
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config(msg) => Failure::Config(format!("{}: {msg}", path.display())),
        other => Failure::Config(other.to_string()),
    })?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: String) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let result = run_experiment(&cfg)?;
    emit_outputs(&result, out)?;
    let aborted = result
        .records
        .iter()
        .filter(|r| r.aborted.is_some())
        .count();
    println!(
        "{}",
        json!({"status": "ok", "runs": result.records.len(), "aborted": aborted, "out": out})
    );
    Ok(())
}

fn cmd_ntk(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let diag = cfg.ntk_diag.unwrap_or(NtkDiagSpec {
        subsample: 50,
        lambda: cfg.net.lambda,
    });
    let (env, s) = instance_environment(&cfg, 0)?;
    let contexts = ntk_subsample(&env, diag.subsample, s);
    let gram = ntk_gram(&contexts, cfg.net.depth)?;
    let d = effective_dimension(&gram, diag.lambda)?;
    let (pd, min_eig) = check_assumption1(&gram);

    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let mut csv = String::new();
    for i in 0..gram.n() {
        let row: Vec<String> = (0..gram.n())
            .map(|j| format!("{:?}", gram.h[(i, j)]))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&out.join("ntk_gram.csv"), csv)?;
    let eig: String = gram
        .eigenvalues
        .iter()
        .map(|v| format!("{v:?}\n"))
        .collect();
    write_file(
        &out.join("ntk_eigenvalues.csv"),
        format!("eigenvalue\n{eig}"),
    )?;
    let summary = json!({
        "n_contexts": gram.n(),
        "depth": cfg.net.depth,
        "lambda": diag.lambda,
        "min_eig": min_eig,
        "positive_definite": pd,
        "d_tilde": d.d_tilde,
        "seed": s,
    });
    write_file(&out.join("ntk.json"), format!("{:#}\n", summary))?;
    println!("{summary}");
    Ok(())
}

fn cmd_grad_check(nets: usize, seed: u64) -> Result<(), Failure> {
    let r = diagnostics::grad_check_suite(nets, seed)?;
    println!(
        "{}",
        serde_json::to_string(&r).expect("serializable report")
    );
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed: max relative error {:e} > {:e}",
            r.max_rel_error,
            diagnostics::GRAD_REL_TOL
        )))
    }
}

fn cmd_oracle_check(mc_samples: usize, seed: u64) -> Result<(), Failure> {
    let reports = diagnostics::oracle_check_suite(mc_samples, seed)?;
    for r in &reports {
        println!("{}", serde_json::to_string(r).expect("serializable report"));
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "oracle checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out, cli.seed),
        Command::Ntk { config, out } => cmd_ntk(config, out, cli.seed),
        Command::GradCheck { nets } => cmd_grad_check(*nets, cli.seed.unwrap_or(0)),
        Command::OracleCheck { mc_samples } => cmd_oracle_check(*mc_samples, cli.seed.unwrap_or(0)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{}", json!({"error": "config", "message": msg}));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("{}", json!({"error": "runtime", "message": msg}));
            ExitCode::from(3)
        }
    }
}
