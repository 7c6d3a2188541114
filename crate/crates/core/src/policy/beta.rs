use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceState;
use crate::error::{Error, Result};

/// Constants of the theory-driven confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBeta {
    pub nu: f64,
    pub delta: f64,
    pub s: f64,
    pub c1: f64,
    pub eta: f64,
    pub gd_steps: usize,
    pub depth: usize,
}

/// Confidence radius `β_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant {
        beta: f64,
    },
    /// `β_t = C₁[(ν√(log(det Z_t/det λI) − 2 log δ) + √λ S)
    ///        + (λ + tL)(1 − ηmλ)^{J/2} √(t/λ)]`.
    Theoretical(TheoreticalBeta),
}

impl BetaSchedule {
    pub fn validate(&self, width: usize, lambda: f64) -> Result<()> {
        match *self {
            BetaSchedule::Constant { beta } => {
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::config(format!(
                        "beta must be nonnegative, got {beta}"
                    )));
                }
            }
            BetaSchedule::Theoretical(tb) => {
                if !(tb.nu > 0.0 && tb.s > 0.0 && tb.c1 > 0.0 && tb.eta > 0.0) {
                    return Err(Error::config("nu, S, C1 and eta must be positive"));
                }
                if !(tb.delta > 0.0 && tb.delta < 1.0) {
                    return Err(Error::config("delta must lie in (0, 1)"));
                }
                let contraction = tb.eta * width as f64 * lambda;
                if contraction.is_nan() || contraction >= 1.0 {
                    return Err(Error::config(format!(
                        "eta·m·lambda must be below 1, got {contraction}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Radius at round `t` given the current covariance.
    pub fn evaluate(&self, cov: &CovarianceState, t: usize, width: usize) -> Result<f64> {
        let lambda = cov.lambda();
        self.validate(width, lambda)?;
        Ok(match *self {
            BetaSchedule::Constant { beta } => beta,
            BetaSchedule::Theoretical(tb) => {
                let inner = (cov.logdet_gain() - 2.0 * tb.delta.ln()).max(0.0);
                let t = t as f64;
                let decay = (1.0 - tb.eta * width as f64 * lambda).powf(tb.gd_steps as f64 / 2.0);
                tb.c1
                    * ((tb.nu * inner.sqrt() + lambda.sqrt() * tb.s)
                        + (lambda + t * tb.depth as f64) * decay * (t / lambda).sqrt())
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theory(gd_steps: usize) -> BetaSchedule {
        BetaSchedule::Theoretical(TheoreticalBeta {
            nu: 0.5,
            delta: 0.1,
            s: 2.0,
            c1: 1.5,
            eta: 0.01,
            gd_steps,
            depth: 2,
        })
    }

    #[test]
    fn constant_mode() {
        let cov = CovarianceState::new(3, 0.01).unwrap();
        let b = BetaSchedule::Constant { beta: 0.001 };
        assert_eq!(b.evaluate(&cov, 17, 20).unwrap(), 0.001);
    }

    #[test]
    fn theoretical_at_initial_covariance() {
        let lambda = 0.25;
        let cov = CovarianceState::new(5, lambda).unwrap();
        let (m, t) = (8usize, 10usize);
        let got = theory(4).evaluate(&cov, t, m).unwrap();
        let decay = (1.0 - 0.01 * m as f64 * lambda).powf(2.0);
        let expected = 1.5
            * ((0.5 * (-2.0 * 0.1f64.ln()).sqrt() + lambda.sqrt() * 2.0)
                + (lambda + 10.0 * 2.0) * decay * (10.0 / lambda).sqrt());
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn theoretical_tail_vanishes_with_many_steps() {
        let lambda = 0.25;
        let mut cov = CovarianceState::new(2, lambda).unwrap();
        cov.rank_one_update(&[1.0, 0.5]).unwrap();
        let got = theory(1_000_000).evaluate(&cov, 50, 8).unwrap();
        let expected =
            1.5 * (0.5 * (cov.logdet_gain() - 2.0 * 0.1f64.ln()).sqrt() + lambda.sqrt() * 2.0);
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn rejects_noncontracting_step() {
        let cov = CovarianceState::new(2, 1.0).unwrap();
        // η·m·λ = 0.01 · 100 · 1 = 1.
        assert!(matches!(
            theory(4).evaluate(&cov, 1, 100),
            Err(Error::Config(_))
        ));
    }
}
