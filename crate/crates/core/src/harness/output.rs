use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::run::{ExperimentResult, RunRecord};
use crate::error::{Error, Result};

pub const PER_ROUND_HEADER: &str = "run_id,t,batch_index,action,reward,inst_regret,cum_regret";
pub const SUMMARY_HEADER: &str = "run_id,algo,total_regret,n_updates,wall_time_ms";
pub const BATCHES_HEADER: &str = "run_id,batch_index,t_start,t_end";

pub fn per_round_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{PER_ROUND_HEADER}\n");
    for r in records {
        for row in &r.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{:?},{:?}",
                r.run_id,
                row.t,
                row.batch_index,
                row.action,
                row.reward,
                row.inst_regret,
                row.cum_regret
            );
        }
    }
    out
}

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:?},{},{:.3}",
            r.run_id, r.algo, r.total_regret, r.n_policy_updates, r.wall_time_ms
        );
    }
    out
}

/// Batch `b` (1-based) spans `[t_b, t_{b+1} − 1]`; the last ends at the final
/// played round.
pub fn batches_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{BATCHES_HEADER}\n");
    for r in records {
        let last = r.rows.last().map_or(0, |row| row.t);
        for (b, &start) in r.batch_starts.iter().enumerate() {
            let end = r.batch_starts.get(b + 1).map_or(last, |next| next - 1);
            let _ = writeln!(out, "{},{},{},{}", r.run_id, b + 1, start, end);
        }
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `per_round.csv`, `summary.csv`, `batches.csv`, `config.json` and
/// `diagnostics.json` into `out_dir`, creating it if needed.
pub fn emit_outputs(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = &result.records;
    write(out_dir, "per_round.csv", &per_round_csv(records))?;
    write(out_dir, "summary.csv", &summary_csv(records))?;
    write(out_dir, "batches.csv", &batches_csv(records))?;

    let aborted: Vec<_> = records
        .iter()
        .filter_map(|r| {
            r.aborted
                .as_ref()
                .map(|e| json!({"run_id": r.run_id, "algo": r.algo, "error": e}))
        })
        .collect();
    let config = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": result.config,
        "master_seed": result.config.master_seed,
        "instance_seeds": result.instances.iter().map(|i| i.seed).collect::<Vec<_>>(),
        "runs": records.iter().map(|r| json!({
            "run_id": r.run_id, "algo": r.algo, "instance": r.instance, "seed": r.seed,
        })).collect::<Vec<_>>(),
        "aborted_runs": aborted,
    });
    let diagnostics = json!({
        "instances": result.instances,
        "runs": records,
    });
    let pretty =
        |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("JSON values serialize");
    write(out_dir, "config.json", &(pretty(&config) + "\n"))?;
    write(out_dir, "diagnostics.json", &(pretty(&diagnostics) + "\n"))?;
    Ok(())
}
