//! Weight interpolation between two trained students, and spherical
//! interpolation of noise or condition vectors.

use ndarray::{Array1, ArrayView1};

use crate::error::{invalid, Result};
use crate::metrics::MetricReport;
use crate::tensor::ParamSet;

/// Below this angle (radians) slerp falls back to linear interpolation.
pub const SLERP_MIN_ANGLE: f64 = 1e-6;

/// Elementwise `λ·a + (1 − λ)·b`.
pub fn lerp_weights(a: &ParamSet, b: &ParamSet, lambda: f64) -> Result<ParamSet> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda must be in [0, 1], got {lambda}")));
    }
    a.check_compatible(b)?;
    let mut out = a.clone();
    out.zip_apply(b, |x, y| lambda * x + (1.0 - lambda) * y)?;
    Ok(out)
}

/// Spherical interpolation from `v0` (s = 0) to `v1` (s = 1).
pub fn slerp(v0: ArrayView1<'_, f64>, v1: ArrayView1<'_, f64>, s: f64) -> Result<Array1<f64>> {
    if v0.len() != v1.len() {
        return Err(invalid("slerp operands differ in length"));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(format!("slerp parameter must be in [0, 1], got {s}")));
    }
    let (n0, n1) = (v0.dot(&v0).sqrt(), v1.dot(&v1).sqrt());
    if n0 == 0.0 || n1 == 0.0 {
        return Err(invalid("slerp of a zero vector"));
    }
    let cos = (v0.dot(&v1) / (n0 * n1)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega < SLERP_MIN_ANGLE {
        return Ok(&v0 * (1.0 - s) + &v1 * s);
    }
    let sin = omega.sin();
    let w0 = ((1.0 - s) * omega).sin() / sin;
    let w1 = (s * omega).sin() / sin;
    Ok(&v0 * w0 + &v1 * w1)
}

/// `steps + 1` evenly spaced values `i / steps`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// 21 points, Δλ = 0.05.
pub fn default_grid() -> Vec<f64> {
    uniform_grid(20)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) || grid.last() != Some(&1.0) {
        return Err(invalid("lambda grid must start at 0 and end at 1"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("lambda grid must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationCurve {
    pub lambdas: Vec<f64>,
    pub rows: Vec<MetricReport>,
}

impl InterpolationCurve {
    /// Index and FID of the lowest-FID grid point.
    pub fn best_fid(&self) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.fid))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Evaluates `lerp_weights(a, b, λ)` at every grid point.
///
/// `evaluate` receives the merged weights; it must be deterministic for the
/// curve endpoints to reproduce direct evaluations of `b` (λ = 0) and `a`
/// (λ = 1).
pub fn interp_sweep(
    a: &ParamSet,
    b: &ParamSet,
    grid: &[f64],
    mut evaluate: impl FnMut(&ParamSet) -> Result<MetricReport>,
) -> Result<InterpolationCurve> {
    validate_grid(grid)?;
    a.check_compatible(b)?;
    let rows = grid
        .iter()
        .map(|&l| evaluate(&lerp_weights(a, b, l)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolationCurve {
        lambdas: grid.to_vec(),
        rows,
    })
}
