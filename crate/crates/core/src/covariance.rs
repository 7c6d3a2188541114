//! Regularized covariance of gradient features.
//!
//! `Z = λI + Σ φφᵀ` is kept together with its inverse and `log det Z`. Each
//! rank-one update costs O(p²): the inverse follows the Sherman–Morrison
//! identity and the log-determinant follows the matrix determinant lemma,
//! `log det(Z + φφᵀ) = log det Z + log(1 + φᵀZ⁻¹φ)`.
//!
//! Two exact storage layouts are available. The dense layout holds `Z` and
//! `Z⁻¹` as p×p matrices. The dual layout holds the n accumulated features
//! `Φ` (n×p) and the inverse of the n×n gram matrix `λI + ΦΦᵀ`, and answers
//! queries through the push-through identity
//! `Z⁻¹ = (I − Φᵀ(λI + ΦΦᵀ)⁻¹Φ)/λ`. It is selected automatically when p is
//! too large for p×p storage (one-hot dataset contexts) and is exact, not an
//! approximation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};

/// Updates between direct re-factorizations of the maintained inverse.
pub const REFRESH_INTERVAL: u64 = 1_000;

/// Largest dimension stored densely when the layout is chosen automatically.
pub const DENSE_MAX_DIM: usize = 2_048;

/// Largest dimension accepted by [`CovarianceState::write_csv`].
pub const CSV_DUMP_MAX_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Dense,
    Dual,
}

impl Representation {
    pub fn for_dim(dim: usize) -> Self {
        if dim <= DENSE_MAX_DIM {
            Representation::Dense
        } else {
            Representation::Dual
        }
    }
}

/// Log-determinant recorded at a batch start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSnapshot {
    pub logdet_at_snapshot: f64,
    pub round_index: usize,
}

#[derive(Debug, Clone)]
enum Store {
    Dense {
        z: DMatrix<f64>,
        z_inv: DMatrix<f64>,
    },
    Dual {
        // Row-major n×p.
        features: Vec<f64>,
        rows: usize,
        gram_inv: DMatrix<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct CovarianceState {
    dim: usize,
    lambda: f64,
    logdet: f64,
    update_count: u64,
    since_refresh: u64,
    store: Store,
}

/// A copy of `Z⁻¹` taken at some point of a state's lineage, used to score
/// arms against `Z_{t_b}` while the live state keeps accumulating.
#[derive(Debug, Clone)]
pub struct FrozenInverse {
    dim: usize,
    update_count: u64,
    store: FrozenStore,
}

#[derive(Debug, Clone)]
enum FrozenStore {
    Dense(DMatrix<f64>),
    Dual { rows: usize, gram_inv: DMatrix<f64> },
}

impl FrozenInverse {
    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Order-sensitive fingerprint of the stored numbers.
    pub fn fingerprint(&self) -> u64 {
        let data = match &self.store {
            FrozenStore::Dense(m) => m.as_slice(),
            FrozenStore::Dual { gram_inv, .. } => gram_inv.as_slice(),
        };
        data.iter().fold(self.update_count, |h, v| {
            crate::seed::splitmix64(h ^ v.to_bits())
        })
    }
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    // m is symmetric, so vᵀ m v = Σ_j v_j (m_{·j} · v) walks columns contiguously.
    m.column_iter()
        .zip(v.iter())
        .map(|(col, vj)| vj * col.dot(v))
        .sum()
}

impl CovarianceState {
    /// `Z = λI` with the layout chosen from `dim`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Self::with_representation(dim, lambda, Representation::for_dim(dim))
    }

    pub fn with_representation(dim: usize, lambda: f64, repr: Representation) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("covariance dimension must be at least 1"));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::config(format!(
                "covariance lambda must be positive and finite, got {lambda}"
            )));
        }
        let store = match repr {
            Representation::Dense => Store::Dense {
                z: DMatrix::from_diagonal_element(dim, dim, lambda),
                z_inv: DMatrix::from_diagonal_element(dim, dim, 1.0 / lambda),
            },
            Representation::Dual => Store::Dual {
                features: Vec::new(),
                rows: 0,
                gram_inv: DMatrix::zeros(0, 0),
            },
        };
        Ok(Self {
            dim,
            lambda,
            logdet: dim as f64 * lambda.ln(),
            update_count: 0,
            since_refresh: 0,
            store,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `log det Z`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `log(det Z / det λI)`.
    pub fn logdet_gain(&self) -> f64 {
        self.logdet - self.dim as f64 * self.lambda.ln()
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn representation(&self) -> Representation {
        match self.store {
            Store::Dense { .. } => Representation::Dense,
            Store::Dual { .. } => Representation::Dual,
        }
    }

    fn check_feature(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.dim {
            return Err(Error::input(format!(
                "feature length {} does not match covariance dimension {}",
                phi.len(),
                self.dim
            )));
        }
        ensure_finite(phi, "gradient feature")
    }

    /// Adds `φφᵀ` to `Z`. Returns `log(1 + φᵀZ⁻¹φ)` evaluated before the update.
    pub fn rank_one_update(&mut self, phi: &[f64]) -> Result<f64> {
        self.check_feature(phi)?;
        let lambda = self.lambda;
        let gain = match &mut self.store {
            Store::Dense { z, z_inv } => {
                let v = DVector::from_column_slice(phi);
                let u = &*z_inv * &v;
                let s = v.dot(&u).max(0.0);
                z_inv.ger(-1.0 / (1.0 + s), &u, &u, 1.0);
                z.ger(1.0, &v, &v, 1.0);
                s.ln_1p()
            }
            Store::Dual {
                features,
                rows,
                gram_inv,
            } => {
                let n = *rows;
                let k = DVector::from_iterator(
                    n,
                    features.chunks_exact(self.dim).map(|row| dot(row, phi)),
                );
                let self_dot = dot(phi, phi);
                let next = if n == 0 {
                    let s = lambda + self_dot;
                    let q = self_dot / lambda;
                    (DMatrix::from_element(1, 1, 1.0 / s), q)
                } else {
                    let v = &*gram_inv * &k;
                    let q = ((self_dot - k.dot(&v)) / lambda).max(0.0);
                    let s = lambda * (1.0 + q);
                    let mut g = DMatrix::zeros(n + 1, n + 1);
                    g.view_mut((0, 0), (n, n)).copy_from(gram_inv);
                    g.view_mut((0, 0), (n, n)).ger(1.0 / s, &v, &v, 1.0);
                    for i in 0..n {
                        g[(i, n)] = -v[i] / s;
                        g[(n, i)] = -v[i] / s;
                    }
                    g[(n, n)] = 1.0 / s;
                    (g, q)
                };
                *gram_inv = next.0;
                features.extend_from_slice(phi);
                *rows += 1;
                next.1.ln_1p()
            }
        };
        self.logdet += gain;
        self.update_count += 1;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh()?;
        }
        Ok(gain)
    }

    /// Recomputes the maintained inverse from a direct Cholesky factorization.
    pub fn refresh(&mut self) -> Result<()> {
        match &mut self.store {
            Store::Dense { z, z_inv } => {
                let chol = z
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::numerical("covariance lost positive definiteness"))?;
                *z_inv = chol.inverse();
            }
            Store::Dual {
                features,
                rows,
                gram_inv,
            } => {
                if *rows > 0 {
                    let phi = DMatrix::from_row_slice(*rows, self.dim, features);
                    let gram = &phi * phi.transpose()
                        + DMatrix::from_diagonal_element(*rows, *rows, self.lambda);
                    let chol = gram.cholesky().ok_or_else(|| {
                        Error::numerical("dual gram matrix lost positive definiteness")
                    })?;
                    *gram_inv = chol.inverse();
                }
            }
        }
        self.since_refresh = 0;
        Ok(())
    }

    /// `‖φ‖_{Z⁻¹} = √(φᵀZ⁻¹φ)` against the live state.
    pub fn mahalanobis(&self, phi: &[f64]) -> Result<f64> {
        self.check_feature(phi)?;
        Ok(match &self.store {
            Store::Dense { z_inv, .. } => quad_form(z_inv, &DVector::from_column_slice(phi))
                .max(0.0)
                .sqrt(),
            Store::Dual {
                features,
                rows,
                gram_inv,
            } => self.dual_quad(features, *rows, gram_inv, phi).sqrt(),
        })
    }

    fn dual_quad(
        &self,
        features: &[f64],
        rows: usize,
        gram_inv: &DMatrix<f64>,
        phi: &[f64],
    ) -> f64 {
        let self_dot = dot(phi, phi);
        if rows == 0 {
            return self_dot / self.lambda;
        }
        let k = DVector::from_iterator(
            rows,
            features[..rows * self.dim]
                .chunks_exact(self.dim)
                .map(|row| dot(row, phi)),
        );
        ((self_dot - quad_form(gram_inv, &k)) / self.lambda).max(0.0)
    }

    /// `Z⁻¹v` from the maintained inverse.
    pub fn inverse_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_feature(v)?;
        Ok(match &self.store {
            Store::Dense { z_inv, .. } => {
                (z_inv * DVector::from_column_slice(v)).as_slice().to_vec()
            }
            Store::Dual {
                features,
                rows,
                gram_inv,
            } => {
                let k = DVector::from_iterator(
                    *rows,
                    features.chunks_exact(self.dim).map(|row| dot(row, v)),
                );
                let coeff = gram_inv * k;
                let mut out = v.to_vec();
                for (row, c) in features.chunks_exact(self.dim).zip(coeff.iter()) {
                    for (o, r) in out.iter_mut().zip(row) {
                        *o -= c * r;
                    }
                }
                out.iter_mut().for_each(|o| *o /= self.lambda);
                out
            }
        })
    }

    /// Copies the current inverse for later scoring.
    pub fn freeze_inverse(&self) -> FrozenInverse {
        let store = match &self.store {
            Store::Dense { z_inv, .. } => FrozenStore::Dense(z_inv.clone()),
            Store::Dual { rows, gram_inv, .. } => FrozenStore::Dual {
                rows: *rows,
                gram_inv: gram_inv.clone(),
            },
        };
        FrozenInverse {
            dim: self.dim,
            update_count: self.update_count,
            store,
        }
    }

    /// `‖φ‖_{Z_s⁻¹}` where `Z_s` is the state at the time `frozen` was taken.
    ///
    /// `frozen` must come from this state's lineage: the dual layout reads
    /// the first rows of the live feature store.
    pub fn mahalanobis_frozen(&self, frozen: &FrozenInverse, phi: &[f64]) -> Result<f64> {
        self.check_feature(phi)?;
        if frozen.dim != self.dim || frozen.update_count > self.update_count {
            return Err(Error::input(
                "frozen inverse is not from this covariance lineage",
            ));
        }
        Ok(match (&frozen.store, &self.store) {
            (FrozenStore::Dense(z_inv), _) => quad_form(z_inv, &DVector::from_column_slice(phi))
                .max(0.0)
                .sqrt(),
            (FrozenStore::Dual { rows, gram_inv }, Store::Dual { features, .. }) => {
                self.dual_quad(features, *rows, gram_inv, phi).sqrt()
            }
            (FrozenStore::Dual { .. }, Store::Dense { .. }) => {
                return Err(Error::input("frozen inverse layout does not match state"))
            }
        })
    }

    pub fn snapshot(&self, round_index: usize) -> CovarianceSnapshot {
        CovarianceSnapshot {
            logdet_at_snapshot: self.logdet,
            round_index,
        }
    }

    /// `det Z > q · det Z_snap`, evaluated on log-determinants.
    pub fn det_ratio_exceeds(&self, snap: &CovarianceSnapshot, q: f64) -> Result<bool> {
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::config(format!(
                "determinant ratio threshold q must exceed 1, got {q}"
            )));
        }
        self.log_det_ratio_exceeds(snap, q.ln())
    }

    /// Same as [`Self::det_ratio_exceeds`] with the threshold given as `log q`,
    /// which keeps thresholds like `q = e³⁰` exact.
    pub fn log_det_ratio_exceeds(&self, snap: &CovarianceSnapshot, log_q: f64) -> Result<bool> {
        if !(log_q.is_finite() && log_q > 0.0) {
            return Err(Error::config(format!(
                "log q must be positive and finite, got {log_q}"
            )));
        }
        Ok(self.logdet - snap.logdet_at_snapshot > log_q)
    }

    /// Materializes `Z`.
    pub fn z_dense(&self) -> DMatrix<f64> {
        match &self.store {
            Store::Dense { z, .. } => z.clone(),
            Store::Dual { features, rows, .. } => {
                let phi = DMatrix::from_row_slice(*rows, self.dim, features);
                phi.transpose() * &phi
                    + DMatrix::from_diagonal_element(self.dim, self.dim, self.lambda)
            }
        }
    }

    /// Materializes the maintained `Z⁻¹`.
    pub fn z_inv_dense(&self) -> DMatrix<f64> {
        match &self.store {
            Store::Dense { z_inv, .. } => z_inv.clone(),
            Store::Dual {
                features,
                rows,
                gram_inv,
            } => {
                let phi = DMatrix::from_row_slice(*rows, self.dim, features);
                let eye = DMatrix::<f64>::identity(self.dim, self.dim);
                (eye - phi.transpose() * gram_inv * &phi) / self.lambda
            }
        }
    }

    /// Writes `Z` as dense row-major CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if self.dim > CSV_DUMP_MAX_DIM {
            return Err(Error::config(format!(
                "covariance dump is limited to p <= {CSV_DUMP_MAX_DIM}, got p = {}",
                self.dim
            )));
        }
        let z = self.z_dense();
        let mut out = String::new();
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim).map(|j| format!("{:?}", z[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn init_values() {
        let c = CovarianceState::new(3, 1.0).unwrap();
        assert_eq!(c.logdet(), 0.0);
        let c = CovarianceState::new(2, 0.01).unwrap();
        assert_abs_diff_eq!(c.logdet(), -9.210_340_371_976_182, epsilon = 1e-12);
        let c = CovarianceState::new(220, 0.01).unwrap();
        let inv = c.z_inv_dense();
        assert_abs_diff_eq!(
            inv,
            DMatrix::from_diagonal_element(220, 220, 100.0),
            epsilon = 1e-12
        );
        assert_eq!(c.update_count(), 0);
    }

    #[test]
    fn init_rejects_bad_config() {
        assert!(matches!(
            CovarianceState::new(0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CovarianceState::new(3, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CovarianceState::new(3, -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_update_only_counts() {
        for repr in [Representation::Dense, Representation::Dual] {
            let mut c = CovarianceState::with_representation(4, 0.5, repr).unwrap();
            let before = c.z_inv_dense();
            let gain = c.rank_one_update(&[0.0; 4]).unwrap();
            assert_eq!(gain, 0.0);
            assert_eq!(c.update_count(), 1);
            assert_abs_diff_eq!(c.logdet(), 4.0 * 0.5f64.ln(), epsilon = 1e-15);
            assert_abs_diff_eq!(c.z_inv_dense(), before, epsilon = 1e-15);
        }
    }

    #[test]
    fn unit_update_doubles_determinant() {
        for repr in [Representation::Dense, Representation::Dual] {
            let mut c = CovarianceState::with_representation(2, 1.0, repr).unwrap();
            c.rank_one_update(&[1.0, 0.0]).unwrap();
            assert_abs_diff_eq!(c.logdet(), 2f64.ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_features() {
        let mut c = CovarianceState::new(3, 1.0).unwrap();
        assert!(matches!(
            c.rank_one_update(&[1.0, 2.0]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            c.rank_one_update(&[1.0, f64::NAN, 0.0]),
            Err(Error::Numerical(_))
        ));
        assert!(c.mahalanobis(&[f64::INFINITY, 0.0, 0.0]).is_err());
        assert_eq!(c.update_count(), 0);
    }

    #[test]
    fn mahalanobis_isotropic_and_zero() {
        let c = CovarianceState::new(3, 0.25).unwrap();
        let phi = [1.0, -2.0, 2.0];
        assert_abs_diff_eq!(c.mahalanobis(&phi).unwrap(), 3.0 / 0.5, epsilon = 1e-12);
        assert_eq!(c.mahalanobis(&[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn maintained_inverse_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = CovarianceState::new(50, 0.1).unwrap();
        for phi in random_stream(&mut rng, 100, 50) {
            c.rank_one_update(&phi).unwrap();
        }
        let direct = c.z_dense().try_inverse().unwrap();
        assert_abs_diff_eq!(c.z_inv_dense(), direct, epsilon = 1e-8);
    }

    #[test]
    fn mahalanobis_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c = CovarianceState::new(20, 0.5).unwrap();
        for phi in random_stream(&mut rng, 40, 20) {
            c.rank_one_update(&phi).unwrap();
        }
        let z = c.z_dense();
        for phi in random_stream(&mut rng, 10, 20) {
            let v = DVector::from_column_slice(&phi);
            let sol = z.clone().lu().solve(&v).unwrap();
            let expected = v.dot(&sol).sqrt();
            assert_abs_diff_eq!(c.mahalanobis(&phi).unwrap(), expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn dual_layout_agrees_with_dense_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut dense =
            CovarianceState::with_representation(12, 0.2, Representation::Dense).unwrap();
        let mut dual = CovarianceState::with_representation(12, 0.2, Representation::Dual).unwrap();
        let frozen_at = 7;
        let mut frozen = None;
        for (i, phi) in random_stream(&mut rng, 30, 12).iter().enumerate() {
            if i == frozen_at {
                frozen = Some((dense.freeze_inverse(), dual.freeze_inverse()));
            }
            let g1 = dense.rank_one_update(phi).unwrap();
            let g2 = dual.rank_one_update(phi).unwrap();
            assert_abs_diff_eq!(g1, g2, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(dense.logdet(), dual.logdet(), epsilon = 1e-9);
        assert_abs_diff_eq!(dense.z_inv_dense(), dual.z_inv_dense(), epsilon = 1e-9);
        let (fd, fu) = frozen.unwrap();
        for phi in random_stream(&mut rng, 5, 12) {
            let a = dense.mahalanobis_frozen(&fd, &phi).unwrap();
            let b = dual.mahalanobis_frozen(&fu, &phi).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn det_ratio_threshold() {
        let mut c = CovarianceState::new(2, 1.0).unwrap();
        let snap = c.snapshot(1);
        assert!(!c.det_ratio_exceeds(&snap, 2.0).unwrap());
        // log(1 + φᵀφ) = 0.8 for φ = (√(e^0.8 − 1), 0).
        let a = (0.8f64.exp() - 1.0).sqrt();
        c.rank_one_update(&[a, 0.0]).unwrap();
        assert!(c.det_ratio_exceeds(&snap, 2.0).unwrap());
        assert!(!c.det_ratio_exceeds(&snap, 3.0).unwrap());
        assert!(matches!(
            c.det_ratio_exceeds(&snap, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            c.det_ratio_exceeds(&snap, 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frozen_inverse_is_independent_of_later_updates() {
        let mut c = CovarianceState::new(3, 1.0).unwrap();
        let frozen = c.freeze_inverse();
        let fp = frozen.fingerprint();
        c.rank_one_update(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(frozen.fingerprint(), fp);
        let phi = [1.0, 0.0, 0.0];
        assert_abs_diff_eq!(
            c.mahalanobis_frozen(&frozen, &phi).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(c.mahalanobis(&phi).unwrap() < 1.0);
    }

    #[test]
    fn csv_dump_is_limited() {
        let c = CovarianceState::new(301, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(c.write_csv(&dir.path().join("z.csv")).is_err());
        let c = CovarianceState::new(2, 1.5).unwrap();
        let path = dir.path().join("z2.csv");
        c.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "1.5,0.0\n0.0,1.5\n");
    }
}
