use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{AlgoSpec, ExperimentConfig};
use crate::env::{
    classification_env, gen_cosine, gen_quadratic, read_dataset, ClassificationData, DatasetKind,
    EnvKind, Environment,
};
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, NetworkParams};
use crate::ntk::{effective_dimension, ntk_gram};
use crate::policy::{
    BanditPolicy, BatchNeuralUcb, BnucbConfig, LinUcb, SequentialNeuralUcb, UniformRandom,
};
use crate::seed::{instance_seed, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRow {
    pub t: usize,
    pub batch_index: usize,
    pub action: usize,
    pub reward: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub algo: String,
    pub instance: usize,
    pub seed: u64,
    #[serde(skip)]
    pub rows: Vec<RoundRow>,
    pub batch_starts: Vec<usize>,
    pub n_policy_updates: usize,
    #[serde(skip)]
    pub wall_time_ms: f64,
    pub total_regret: f64,
    pub aborted: Option<String>,
    /// Dimension of the covariance, when the policy keeps one.
    pub covariance_dim: Option<usize>,
    /// `log(det Z_final / det λI)`.
    pub final_logdet_gain: Option<f64>,
    /// `final_logdet_gain / (d̃ log(1 + TK/λ) + 1)`, with NTK diagnostics on.
    pub potential_ratio: Option<f64>,
}

/// Per-instance environment facts reported alongside the runs.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceInfo {
    pub instance: usize,
    pub seed: u64,
    pub mean_min: f64,
    pub mean_max: f64,
    pub means_outside_unit_interval: bool,
    pub d_tilde: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub instances: Vec<InstanceInfo>,
    pub records: Vec<RunRecord>,
}

fn dataset_kind(kind: EnvKind) -> Option<DatasetKind> {
    match kind {
        EnvKind::Mushroom => Some(DatasetKind::Mushroom),
        EnvKind::Magic => Some(DatasetKind::Magic),
        _ => None,
    }
}

/// Builds the network config for `env` from the experiment's net settings.
pub fn network_config(cfg: &ExperimentConfig, input_dim: usize) -> NetworkConfig {
    NetworkConfig {
        input_dim,
        width: cfg.net.width,
        depth: cfg.net.depth,
        step_size: cfg.net.step_size,
        gd_steps: cfg.net.gd_steps,
        reg: cfg.net.lambda,
        train_mode: cfg.net.train_mode,
        warm_start: cfg.net.warm_start,
    }
}

/// Constructs the policy for one run. All neural policies of an instance share
/// the same initialization and training streams.
pub fn build_policy(
    cfg: &ExperimentConfig,
    algo: AlgoSpec,
    env: &Environment,
    seed: u64,
) -> Result<Box<dyn BanditPolicy>> {
    let net = network_config(cfg, env.feature_dim());
    Ok(match algo {
        AlgoSpec::BnucbFixed { .. } | AlgoSpec::BnucbAdaptive { .. } => {
            let bcfg = BnucbConfig {
                net,
                scheme: algo.scheme().expect("batched algorithm"),
                beta: cfg.beta,
                horizon: env.horizon(),
            };
            Box::new(BatchNeuralUcb::new(
                bcfg,
                NetworkParams::init_symmetric(&net, seed)?,
                seed,
            )?)
        }
        AlgoSpec::NeuralUcb => Box::new(SequentialNeuralUcb::new(
            net,
            cfg.beta,
            NetworkParams::init_symmetric(&net, seed)?,
            seed,
        )?),
        AlgoSpec::LinUcb => Box::new(LinUcb::new(
            env.feature_dim(),
            cfg.linucb_lambda,
            cfg.linucb_beta,
        )?),
        AlgoSpec::UniformRandom => Box::new(UniformRandom::new(seed)),
    })
}

/// Plays `policy` on `env`. Only policy calls count towards the wall time.
/// On error the rounds played so far are kept and the message recorded.
pub fn play(
    policy: &mut dyn BanditPolicy,
    env: &Environment,
) -> (Vec<RoundRow>, f64, Option<String>) {
    let mut rows = Vec::with_capacity(env.horizon());
    let mut elapsed = std::time::Duration::ZERO;
    let mut cum = 0.0;
    for t in 1..=env.horizon() {
        let round = env.round(t);
        let start = Instant::now();
        let step = policy
            .begin_round(t)
            .and_then(|_| policy.select(&round.arms));
        elapsed += start.elapsed();
        let action = match step {
            Ok(a) if a < round.n_arms() => a,
            Ok(a) => {
                return (
                    rows,
                    ms(elapsed),
                    Some(format!("round {t}: arm {a} out of range")),
                )
            }
            Err(e) => return (rows, ms(elapsed), Some(format!("round {t}: {e}"))),
        };
        let reward = match env.reward(t, action) {
            Ok(r) => r,
            Err(e) => return (rows, ms(elapsed), Some(format!("round {t}: {e}"))),
        };
        let start = Instant::now();
        let obs = policy.observe(t, action, reward);
        elapsed += start.elapsed();
        if let Err(e) = obs {
            return (rows, ms(elapsed), Some(format!("round {t}: {e}")));
        }
        let inst_regret = env.regret(t, action);
        cum += inst_regret;
        rows.push(RoundRow {
            t,
            batch_index: policy.batch_index(),
            action,
            reward,
            inst_regret,
            cum_regret: cum,
        });
    }
    (rows, ms(elapsed), None)
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn build_env(
    cfg: &ExperimentConfig,
    data: Option<&ClassificationData>,
    seed: u64,
) -> Result<Environment> {
    let e = &cfg.env;
    match e.kind {
        EnvKind::Cosine => gen_cosine(e.horizon, e.dim, e.arms, e.noise_std, seed),
        EnvKind::Quadratic => gen_quadratic(e.horizon, e.dim, e.arms, e.noise_std, seed),
        EnvKind::Mushroom | EnvKind::Magic => {
            classification_env(data.expect("dataset loaded"), e.horizon, seed)
        }
    }
}

/// Seeded subsample of `n` arm contexts of `env`, in round-major order.
pub fn ntk_subsample(env: &Environment, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let all: Vec<&Vec<f64>> = env.all_features().collect();
    let n = n.min(all.len());
    let mut rng = substream(seed, "ntk-subsample", 0);
    let mut picks = index::sample(&mut rng, all.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| all[i].clone()).collect()
}

/// `d̃` of the NTK on a seeded subsample of the instance's arm contexts.
fn instance_d_tilde(cfg: &ExperimentConfig, env: &Environment, seed: u64) -> Result<Option<f64>> {
    let Some(diag) = cfg.ntk_diag else {
        return Ok(None);
    };
    let gram = ntk_gram(&ntk_subsample(env, diag.subsample, seed), cfg.net.depth)?;
    Ok(Some(effective_dimension(&gram, diag.lambda)?.d_tilde))
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<ClassificationData>> {
    match (dataset_kind(cfg.env.kind), &cfg.env.dataset_path) {
        (Some(kind), Some(path)) => {
            let data = read_dataset(path, kind)?;
            if data.skipped_rows > 0 {
                log::warn!(
                    "{}: skipped {} malformed rows",
                    path.display(),
                    data.skipped_rows
                );
            }
            if cfg.env.horizon > data.len() {
                return Err(Error::config(format!(
                    "horizon: {} exceeds the {} usable rows of {}",
                    cfg.env.horizon,
                    data.len(),
                    path.display()
                )));
            }
            Ok(Some(data))
        }
        (Some(_), None) => Err(Error::config(
            "dataset_path: required for dataset environments",
        )),
        _ => Ok(None),
    }
}

/// Environment of instance `instance`, generated exactly as [`run_experiment`] does.
pub fn instance_environment(cfg: &ExperimentConfig, instance: usize) -> Result<(Environment, u64)> {
    let seed = instance_seed(cfg.master_seed, instance as u64);
    let data = load_dataset(cfg)?;
    Ok((build_env(cfg, data.as_ref(), seed)?, seed))
}

/// Runs every (instance, algorithm) pair. Runs execute concurrently and are
/// returned sorted by `run_id = instance · n_algos + algo_index`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let data = load_dataset(cfg)?;

    let seeds: Vec<u64> = (0..cfg.n_instances)
        .map(|i| instance_seed(cfg.master_seed, i as u64))
        .collect();
    let envs: Vec<Result<Environment>> = seeds
        .par_iter()
        .map(|&s| build_env(cfg, data.as_ref(), s))
        .collect();

    let instances: Vec<InstanceInfo> = envs
        .par_iter()
        .zip(&seeds)
        .enumerate()
        .map(|(i, (env, &seed))| match env {
            Ok(env) => {
                let (lo, hi) = env.mean_range();
                if env.means_outside_unit_interval() {
                    log::info!("instance {i}: means span [{lo}, {hi}], outside [0, 1]");
                }
                let (d_tilde, error) = match instance_d_tilde(cfg, env, seed) {
                    Ok(d) => (d, None),
                    Err(e) => (None, Some(format!("ntk diagnostics: {e}"))),
                };
                InstanceInfo {
                    instance: i,
                    seed,
                    mean_min: lo,
                    mean_max: hi,
                    means_outside_unit_interval: env.means_outside_unit_interval(),
                    d_tilde,
                    error,
                }
            }
            Err(e) => InstanceInfo {
                instance: i,
                seed,
                mean_min: f64::NAN,
                mean_max: f64::NAN,
                means_outside_unit_interval: false,
                d_tilde: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let n_algos = cfg.algos.len();
    let jobs: Vec<(usize, usize)> = (0..cfg.n_instances)
        .flat_map(|i| (0..n_algos).map(move |a| (i, a)))
        .collect();
    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(i, a)| {
            let algo = cfg.algos[a];
            let seed = seeds[i];
            let mut rec = RunRecord {
                run_id: i * n_algos + a,
                algo: algo.label(),
                instance: i,
                seed,
                rows: Vec::new(),
                batch_starts: Vec::new(),
                n_policy_updates: 0,
                wall_time_ms: 0.0,
                total_regret: 0.0,
                aborted: None,
                covariance_dim: None,
                final_logdet_gain: None,
                potential_ratio: None,
            };
            let env = match &envs[i] {
                Ok(env) => env,
                Err(e) => {
                    rec.aborted = Some(format!("environment: {e}"));
                    return rec;
                }
            };
            let mut policy = match build_policy(cfg, algo, env, seed) {
                Ok(p) => p,
                Err(e) => {
                    rec.aborted = Some(format!("policy: {e}"));
                    return rec;
                }
            };
            let (rows, wall, aborted) = play(policy.as_mut(), env);
            if let Some(msg) = &aborted {
                log::error!("run {} ({}) aborted: {msg}", rec.run_id, rec.algo);
            }
            rec.total_regret = rows.last().map_or(0.0, |r| r.cum_regret);
            rec.rows = rows;
            rec.wall_time_ms = wall;
            rec.aborted = aborted;
            rec.batch_starts = policy.batch_starts().to_vec();
            rec.n_policy_updates = policy.n_policy_updates();
            if let Some(cov) = policy.covariance() {
                rec.covariance_dim = Some(cov.dim());
                rec.final_logdet_gain = Some(cov.logdet_gain());
                let neural = !matches!(algo, AlgoSpec::LinUcb | AlgoSpec::UniformRandom);
                if let (true, Some(d), Some(diag)) = (neural, instances[i].d_tilde, cfg.ntk_diag) {
                    let tk = (env.horizon() * env.n_arms()) as f64;
                    rec.potential_ratio =
                        Some(cov.logdet_gain() / (d * (tk / diag.lambda).ln_1p() + 1.0));
                }
            }
            rec
        })
        .collect();
    records.sort_by_key(|r| r.run_id);

    Ok(ExperimentResult {
        config: cfg.clone(),
        instances,
        records,
    })
}
