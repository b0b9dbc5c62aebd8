//! Clamped image/prompt alignment loss `max(0, τ − ⟨E_img(D(x̂0)), E_txt(y)⟩)`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::student::Student;
use crate::error::{invalid, Result};
use crate::tensor::ParamSet;
use crate::toy::{Decoder, JointEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipSchedule {
    #[default]
    LinearToZero,
    CosineToZero,
}

impl ClipSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear_to_zero" => Ok(Self::LinearToZero),
            "cosine_to_zero" => Ok(Self::CosineToZero),
            other => Err(invalid(format!("unknown clip schedule `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LinearToZero => "linear_to_zero",
            Self::CosineToZero => "cosine_to_zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipLossConfig {
    pub tau: f64,
    pub initial_weight: f64,
    pub schedule: ClipSchedule,
}

impl Default for ClipLossConfig {
    fn default() -> Self {
        Self {
            tau: 0.35,
            initial_weight: 0.1,
            schedule: ClipSchedule::LinearToZero,
        }
    }
}

impl ClipLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if !(self.initial_weight >= 0.0 && self.initial_weight.is_finite()) {
            return Err(invalid("initial clip weight must be non-negative"));
        }
        Ok(())
    }
}

/// Weight of the alignment loss at `step`, decaying to zero at `total_steps`.
pub fn clip_weight_schedule(step: usize, total_steps: usize, cfg: &ClipLossConfig) -> Result<f64> {
    if step > total_steps {
        return Err(invalid(format!("step {step} beyond total {total_steps}")));
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(match cfg.schedule {
        ClipSchedule::LinearToZero => cfg.initial_weight * (1.0 - frac),
        ClipSchedule::CosineToZero => cfg.initial_weight * 0.5 * (1.0 + (PI * frac).cos()),
    })
}

/// The frozen models the alignment loss differentiates through.
#[derive(Debug, Clone, Copy)]
pub struct ClipModels<'a> {
    pub embedder: &'a JointEmbedder,
    pub decoder: &'a Decoder,
}

/// Per-row loss `max(0, τ − s)`; rows with `s ≥ τ` are inactive.
pub fn clamp_rows(similarities: &Array1<f64>, tau: f64) -> (Array1<f64>, Vec<bool>) {
    let active: Vec<bool> = similarities.iter().map(|&s| s < tau).collect();
    let loss = similarities.mapv(|s| if s < tau { tau - s } else { 0.0 });
    (loss, active)
}

#[derive(Debug, Clone)]
pub struct ClipLatentGrad {
    /// Batch-mean clamped loss.
    pub loss: f64,
    /// Gradient of `loss` with respect to the latent batch.
    pub grad_latent: Array2<f64>,
    pub similarities: Array1<f64>,
}

/// Clamped loss of latent samples and its gradient through `E_img ∘ D`.
pub fn clamped_clip_latent(
    x0_latent: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    models: ClipModels<'_>,
    tau: f64,
) -> Result<ClipLatentGrad> {
    let n = x0_latent.nrows();
    if n == 0 || y.nrows() != n {
        return Err(invalid("latent and prompt batches must be non-empty and equal length"));
    }
    let img = models.decoder.apply(x0_latent)?;
    let it = models.embedder.image_trace(img.view())?;
    let v = models.embedder.embed_texts(y)?;
    let sims = (&it.unit * &v).sum_axis(Axis(1));
    let (rows, active) = clamp_rows(&sims, tau);
    let mut cot = Array2::<f64>::zeros(v.dim());
    for (r, &a) in active.iter().enumerate() {
        if a {
            cot.row_mut(r).assign(&(&v.row(r) * (-1.0 / n as f64)));
        }
    }
    let d_img = models.embedder.image_input_vjp(&it, &cot)?;
    let mut grad_latent = models.decoder.input_vjp(x0_latent, d_img.view())?;
    // inactive rows carry exactly zero gradient
    for (r, &a) in active.iter().enumerate() {
        if !a {
            grad_latent.row_mut(r).fill(0.0);
        }
    }
    Ok(ClipLatentGrad {
        loss: rows.mean().unwrap_or(0.0),
        grad_latent,
        similarities: sims,
    })
}

#[derive(Debug, Clone)]
pub struct ClipGrad {
    pub loss: f64,
    pub grads: ParamSet,
    pub similarities: Array1<f64>,
}

/// Clamped alignment loss of `f_θ(z, y)` and its gradient over the student's trainable set.
pub fn clamped_clip_loss(
    student: &Student,
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    models: ClipModels<'_>,
    tau: f64,
) -> Result<ClipGrad> {
    let trace = student.trace(z, y)?;
    let lat = clamped_clip_latent(trace.output.view(), y, models, tau)?;
    let grads = student.backward(&trace, lat.grad_latent.view())?;
    Ok(ClipGrad {
        loss: lat.loss,
        grads,
        similarities: lat.similarities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clamp_hand_values() {
        let (loss, active) = clamp_rows(&array![0.5, 0.15, 0.35], 0.35);
        assert_eq!(loss[0], 0.0);
        assert!((loss[1] - 0.20).abs() < 1e-15);
        assert_eq!(loss[2], 0.0);
        assert_eq!(active, vec![false, true, false]);
    }

    #[test]
    fn schedule_endpoints() {
        for schedule in [ClipSchedule::LinearToZero, ClipSchedule::CosineToZero] {
            let cfg = ClipLossConfig {
                schedule,
                ..Default::default()
            };
            assert_eq!(clip_weight_schedule(0, 100, &cfg).unwrap(), 0.1);
            assert_eq!(clip_weight_schedule(100, 100, &cfg).unwrap(), 0.0);
            assert!(clip_weight_schedule(101, 100, &cfg).is_err());
            assert!((clip_weight_schedule(50, 100, &cfg).unwrap() - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn tau_range_checked() {
        let cfg = ClipLossConfig {
            tau: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ClipLossConfig::default().validate().is_ok());
    }
}
