use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How batch boundaries are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchScheme {
    /// Batches start at `t = b·⌊T/B⌋ + 1` for `b = 0, …, B−1`.
    Fixed { batches: usize },
    /// A batch opens at round 1, then whenever `log det Z_t` exceeds its
    /// value at the current batch start by more than `log q`, for at most
    /// `batches` batches in total.
    Adaptive { batches: usize, log_q: f64 },
}

impl BatchScheme {
    pub fn budget(&self) -> usize {
        match *self {
            BatchScheme::Fixed { batches } | BatchScheme::Adaptive { batches, .. } => batches,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget() == 0 {
            return Err(Error::config("batch budget B must be at least 1"));
        }
        if let BatchScheme::Adaptive { log_q, .. } = *self {
            if !(log_q.is_finite() && log_q > 0.0) {
                return Err(Error::config(format!(
                    "log q must be positive (q > 1), got {log_q}"
                )));
            }
        }
        Ok(())
    }

    /// Grid round that opens batch `opened` (0-based) under the fixed scheme.
    pub fn fixed_start(horizon: usize, batches: usize, opened: usize) -> Option<usize> {
        let batches = batches.min(horizon);
        (opened < batches).then(|| opened * (horizon / batches) + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(horizon: usize, batches: usize) -> Vec<usize> {
        (0..)
            .map_while(|b| BatchScheme::fixed_start(horizon, batches, b))
            .collect()
    }

    #[test]
    fn fixed_grid() {
        let g = grid(2000, 40);
        assert_eq!(g.len(), 40);
        assert_eq!(&g[..3], &[1, 51, 101]);
        assert_eq!(*g.last().unwrap(), 1951);
        assert_eq!(grid(10, 10), (1..=10).collect::<Vec<_>>());
        // ⌊T/B⌋ leaves a longer final batch rather than an extra one.
        assert_eq!(grid(2000, 30).len(), 30);
        assert_eq!(grid(5, 9).len(), 5);
    }

    #[test]
    fn validation() {
        assert!(BatchScheme::Fixed { batches: 0 }.validate().is_err());
        assert!(BatchScheme::Adaptive {
            batches: 4,
            log_q: 0.0
        }
        .validate()
        .is_err());
        assert!(BatchScheme::Adaptive {
            batches: 4,
            log_q: 2.0
        }
        .validate()
        .is_ok());
    }
}
