//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; blank lines and text after `#` are ignored.
//! Unknown keys and malformed values are rejected with the offending key in
//! the message. Keys left unset take profile- and environment-dependent
//! defaults, and the resolved values are echoed into `config.json`.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `profile` | `ci` (width 20) or `paper` (per-environment width) | `ci` |
//! | `env` | `cosine`, `quadratic`, `mushroom`, `magic` | required |
//! | `horizon` | rounds T | 2000 |
//! | `dim`, `arms` | synthetic d and K | cosine 10/4, quadratic 4/10 |
//! | `noise_std` | synthetic noise standard deviation | 0.5 |
//! | `dataset_path` | CSV for `mushroom` / `magic` | required for those |
//! | `algos` | comma list of `bnucb_fixed:B`, `bnucb_adaptive:B:log_q`, `neural_ucb`, `linucb`, `uniform` | required |
//! | `width`, `depth` | m and L | profile, 2 |
//! | `lambda` | λ | per environment |
//! | `step_size`, `gd_steps` | η and J | per environment, 200 |
//! | `train_mode` | `sgd` or `full` | `sgd` |
//! | `sgd_batch` | minibatch size | 64 |
//! | `warm_start` | resume training from the previous batch | `false` |
//! | `beta_mode` | `constant` or `theoretical` | `constant` |
//! | `beta` | constant β | per environment |
//! | `beta_nu`, `beta_delta`, `beta_s`, `beta_c1` | theoretical β constants | 1, 0.1, 1, 1 |
//! | `linucb_lambda`, `linucb_beta` | LinUCB ridge and radius | `lambda`, `beta` |
//! | `n_instances` | independent instances | 10 |
//! | `master_seed` | seed of all instances | 0 |
//! | `ntk_subsample`, `ntk_lambda` | enable NTK diagnostics | off, `lambda` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::network::TrainMode;
use crate::policy::{BatchScheme, BetaSchedule, TheoreticalBeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Ci,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgoSpec {
    BnucbFixed { batches: usize },
    BnucbAdaptive { batches: usize, log_q: f64 },
    NeuralUcb,
    LinUcb,
    UniformRandom,
}

impl AlgoSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let bad = || Error::config(format!("algos: cannot parse '{s}'"));
        let batches = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["bnucb_fixed", b] => AlgoSpec::BnucbFixed {
                batches: batches(b)?,
            },
            ["bnucb_adaptive", b, q] => AlgoSpec::BnucbAdaptive {
                batches: batches(b)?,
                log_q: q.parse().map_err(|_| bad())?,
            },
            ["neural_ucb"] => AlgoSpec::NeuralUcb,
            ["linucb"] => AlgoSpec::LinUcb,
            ["uniform"] => AlgoSpec::UniformRandom,
            _ => return Err(bad()),
        };
        if let Some(scheme) = spec.scheme() {
            scheme
                .validate()
                .map_err(|e| Error::config(format!("algos: '{s}': {e}")))?;
        }
        Ok(spec)
    }

    pub fn label(&self) -> String {
        match *self {
            AlgoSpec::BnucbFixed { batches } => format!("bnucb_fixed:{batches}"),
            AlgoSpec::BnucbAdaptive { batches, log_q } => {
                format!("bnucb_adaptive:{batches}:{log_q}")
            }
            AlgoSpec::NeuralUcb => "neural_ucb".into(),
            AlgoSpec::LinUcb => "linucb".into(),
            AlgoSpec::UniformRandom => "uniform".into(),
        }
    }

    pub fn scheme(&self) -> Option<BatchScheme> {
        match *self {
            AlgoSpec::BnucbFixed { batches } => Some(BatchScheme::Fixed { batches }),
            AlgoSpec::BnucbAdaptive { batches, log_q } => {
                Some(BatchScheme::Adaptive { batches, log_q })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub horizon: usize,
    pub dim: usize,
    pub arms: usize,
    pub noise_std: f64,
    pub dataset_path: Option<PathBuf>,
}

/// Hidden-layer shape and training settings; the input dimension comes from
/// the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetSpec {
    pub width: usize,
    pub depth: usize,
    pub lambda: f64,
    pub step_size: f64,
    pub gd_steps: usize,
    pub train_mode: TrainMode,
    pub warm_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NtkDiagSpec {
    pub subsample: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub env: EnvSpec,
    pub algos: Vec<AlgoSpec>,
    pub net: NetSpec,
    pub beta: BetaSchedule,
    pub linucb_lambda: f64,
    pub linucb_beta: f64,
    pub n_instances: usize,
    pub master_seed: u64,
    pub ntk_diag: Option<NtkDiagSpec>,
}

/// `(λ, β, η, full-scale width)` per environment.
fn env_defaults(kind: EnvKind) -> (f64, f64, f64, usize) {
    match kind {
        EnvKind::Cosine => (0.01, 0.001, 0.01, 200),
        EnvKind::Quadratic => (0.01, 0.01, 0.005, 100),
        EnvKind::Mushroom => (0.001, 0.001, 0.05, 100),
        EnvKind::Magic => (0.001, 0.001, 0.05, 400),
    }
}

/// Width used by the `ci` profile.
pub const CI_WIDTH: usize = 20;

const KEYS: &[&str] = &[
    "profile",
    "env",
    "horizon",
    "dim",
    "arms",
    "noise_std",
    "dataset_path",
    "algos",
    "width",
    "depth",
    "lambda",
    "step_size",
    "gd_steps",
    "train_mode",
    "sgd_batch",
    "warm_start",
    "beta_mode",
    "beta",
    "beta_nu",
    "beta_delta",
    "beta_s",
    "beta_c1",
    "linucb_lambda",
    "linucb_beta",
    "n_instances",
    "master_seed",
    "ntk_subsample",
    "ntk_lambda",
];

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::config(format!("line {}: unknown key '{k}'", i + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(format!(
                    "line {}: duplicate key '{k}'",
                    i + 1
                )));
            }
        }
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(format!("{key}: invalid value '{v}'")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(format!("{key}: must be positive, got {v}")))
    }
}

fn nonneg(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::config(format!(
            "{key}: must be nonnegative, got {v}"
        )))
    }
}

fn count(key: &str, v: usize) -> Result<usize> {
    if v > 0 {
        Ok(v)
    } else {
        Err(Error::config(format!("{key}: must be at least 1")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let f = Fields::parse(text)?;

        let profile = match f.raw("profile").unwrap_or("ci") {
            "ci" => Profile::Ci,
            "paper" => Profile::Paper,
            other => {
                return Err(Error::config(format!(
                    "profile: expected ci or paper, got '{other}'"
                )))
            }
        };
        let kind_str = f.raw("env").ok_or_else(|| Error::config("env: missing"))?;
        let kind = EnvKind::parse(kind_str)
            .ok_or_else(|| Error::config(format!("env: unknown environment '{kind_str}'")))?;
        let (def_lambda, def_beta, def_eta, full_width) = env_defaults(kind);
        let (def_t, def_d, def_k) = match kind {
            EnvKind::Cosine => crate::env::COSINE_DEFAULTS,
            EnvKind::Quadratic => crate::env::QUADRATIC_DEFAULTS,
            EnvKind::Mushroom | EnvKind::Magic => (2000, 0, 2),
        };

        let dataset_path = f.raw("dataset_path").map(PathBuf::from);
        let synthetic = matches!(kind, EnvKind::Cosine | EnvKind::Quadratic);
        if !synthetic {
            if dataset_path.is_none() {
                return Err(Error::config(
                    "dataset_path: required for dataset environments",
                ));
            }
            if f.raw("dim").is_some() || f.raw("arms").is_some() {
                return Err(Error::config("dim/arms: fixed by the dataset"));
            }
        }
        let env = EnvSpec {
            kind,
            horizon: count("horizon", f.or("horizon", def_t)?)?,
            dim: if synthetic {
                count("dim", f.or("dim", def_d)?)?
            } else {
                0
            },
            arms: if synthetic {
                count("arms", f.or("arms", def_k)?)?
            } else {
                def_k
            },
            noise_std: if synthetic {
                nonneg(
                    "noise_std",
                    f.or("noise_std", crate::env::DEFAULT_NOISE_STD)?,
                )?
            } else {
                0.0
            },
            dataset_path,
        };

        let algos = f
            .raw("algos")
            .ok_or_else(|| Error::config("algos: missing"))?
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(AlgoSpec::parse)
            .collect::<Result<Vec<_>>>()?;
        if algos.is_empty() {
            return Err(Error::config("algos: empty list"));
        }

        let width = f.or(
            "width",
            match profile {
                Profile::Ci => CI_WIDTH,
                Profile::Paper => full_width,
            },
        )?;
        if width == 0 || width % 2 != 0 {
            return Err(Error::config(format!(
                "width: must be positive and even, got {width}"
            )));
        }
        let depth: usize = f.or("depth", 2)?;
        if depth < 2 {
            return Err(Error::config(format!(
                "depth: must be at least 2, got {depth}"
            )));
        }
        let lambda = positive("lambda", f.or("lambda", def_lambda)?)?;
        let step_size = positive("step_size", f.or("step_size", def_eta)?)?;
        let train_mode = match f.raw("train_mode").unwrap_or("sgd") {
            "sgd" => TrainMode::Stochastic {
                batch_size: count("sgd_batch", f.or("sgd_batch", 64)?)?,
            },
            "full" => TrainMode::FullGradient,
            other => {
                return Err(Error::config(format!(
                    "train_mode: expected sgd or full, got '{other}'"
                )))
            }
        };
        let net = NetSpec {
            width,
            depth,
            lambda,
            step_size,
            gd_steps: f.or("gd_steps", 200)?,
            train_mode,
            warm_start: f.or("warm_start", false)?,
        };

        let beta_const = nonneg("beta", f.or("beta", def_beta)?)?;
        let beta = match f.raw("beta_mode").unwrap_or("constant") {
            "constant" => BetaSchedule::Constant { beta: beta_const },
            "theoretical" => BetaSchedule::Theoretical(TheoreticalBeta {
                nu: f.or("beta_nu", 1.0)?,
                delta: f.or("beta_delta", 0.1)?,
                s: f.or("beta_s", 1.0)?,
                c1: f.or("beta_c1", 1.0)?,
                eta: step_size,
                gd_steps: net.gd_steps,
                depth,
            }),
            other => {
                return Err(Error::config(format!(
                    "beta_mode: expected constant or theoretical, got '{other}'"
                )))
            }
        };
        beta.validate(width, lambda)
            .map_err(|e| Error::config(format!("beta_mode: {e}")))?;

        let ntk_diag = f
            .get::<usize>("ntk_subsample")?
            .map(|n| -> Result<NtkDiagSpec> {
                Ok(NtkDiagSpec {
                    subsample: count("ntk_subsample", n)?,
                    lambda: positive("ntk_lambda", f.or("ntk_lambda", lambda)?)?,
                })
            })
            .transpose()?;
        if ntk_diag.is_none() && f.raw("ntk_lambda").is_some() {
            return Err(Error::config("ntk_lambda: requires ntk_subsample"));
        }

        Ok(Self {
            profile,
            env,
            algos,
            net,
            beta,
            linucb_lambda: positive("linucb_lambda", f.or("linucb_lambda", lambda)?)?,
            linucb_beta: nonneg("linucb_beta", f.or("linucb_beta", beta_const)?)?,
            n_instances: count("n_instances", f.or("n_instances", 10)?)?,
            master_seed: f.or("master_seed", 0)?,
            ntk_diag,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "env = cosine\nalgos = bnucb_fixed:40, neural_ucb # comment\n";

    #[test]
    fn defaults_follow_environment_and_profile() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.profile, Profile::Ci);
        assert_eq!((c.env.horizon, c.env.dim, c.env.arms), (2000, 10, 4));
        assert_eq!(c.env.noise_std, 0.5);
        assert_eq!(c.net.width, 20);
        assert_eq!(c.net.lambda, 0.01);
        assert_eq!(c.net.gd_steps, 200);
        assert_eq!(c.beta, BetaSchedule::Constant { beta: 0.001 });
        assert_eq!(c.net.train_mode, TrainMode::Stochastic { batch_size: 64 });
        assert_eq!(
            c.algos,
            vec![AlgoSpec::BnucbFixed { batches: 40 }, AlgoSpec::NeuralUcb]
        );

        let p = ExperimentConfig::parse(&format!("{BASE}profile = paper\n")).unwrap();
        assert_eq!(p.net.width, 200);
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            ("algos = neural_ucb\n", "env"),
            ("env = cosine\n", "algos"),
            ("env = cosine\nalgos = bnucb_fixed:0\n", "algos"),
            ("env = cosine\nalgos = bnucb_adaptive:4:0\n", "algos"),
            ("env = cosine\nalgos = warp\n", "algos"),
            (&format!("{BASE}width = 7\n"), "width"),
            (&format!("{BASE}lambda = -1\n"), "lambda"),
            (&format!("{BASE}horizon = x\n"), "horizon"),
            (&format!("{BASE}colour = red\n"), "colour"),
            (
                &format!("{BASE}beta_mode = theoretical\nlambda = 1\nstep_size = 0.1\n"),
                "beta_mode",
            ),
            ("env = mushroom\nalgos = uniform\n", "dataset_path"),
        ];
        for (text, key) in cases {
            match ExperimentConfig::parse(text) {
                Err(Error::Config(msg)) => assert!(msg.contains(key), "{msg} lacks {key}"),
                other => panic!("expected config error for {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        for s in [
            "bnucb_fixed:40",
            "bnucb_adaptive:40:25",
            "neural_ucb",
            "linucb",
            "uniform",
        ] {
            assert_eq!(AlgoSpec::parse(s).unwrap().label(), s);
        }
    }
}
