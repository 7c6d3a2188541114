//! Context preprocessing: ℓ₂ normalization followed by symmetrization
//! `x' = [x; x]/√2`, giving unit contexts whose halves are equal.

use crate::error::{ensure_finite, Error, Result};

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn normalize(x: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(x, "context")?;
    let norm = l2_norm(x);
    if norm == 0.0 {
        return Err(Error::input("cannot normalize a zero context"));
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// `[x; x]/√2`. Unit-norm input gives unit-norm output.
pub fn symmetrize(x: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(x, "context")?;
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::input("cannot symmetrize a zero context"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(x.iter().chain(x).map(|v| v * s).collect())
}

/// Canonical pipeline applied to every raw context: normalize, then symmetrize.
pub fn preprocess(x: &[f64]) -> Result<Vec<f64>> {
    symmetrize(&normalize(x)?)
}
