//! Variational score distillation: the student gradient and the LoRA
//! teacher that tracks the student's output distribution.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::student::Student;
use crate::diffusion::{add_noise, guided_eps, AdaptedDenoiser, Cond, Denoiser, DiffusionBatch, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::lora::LoraAdapterSet;
use crate::optim::AdamWState;
use crate::rng::LabRng;
use crate::tensor::ParamSet;

/// Per-timestep loss weight `w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFn {
    #[default]
    SigmaSq,
    Constant,
    /// `α_t² / σ_t²`
    Snr,
}

impl WeightFn {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigma_sq" => Ok(Self::SigmaSq),
            "constant" => Ok(Self::Constant),
            "snr" => Ok(Self::Snr),
            other => Err(invalid(format!("unknown weight function `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SigmaSq => "sigma_sq",
            Self::Constant => "constant",
            Self::Snr => "snr",
        }
    }

    pub fn eval(self, t: usize, schedule: &NoiseSchedule) -> f64 {
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        match self {
            Self::SigmaSq => s * s,
            Self::Constant => 1.0,
            Self::Snr => a * a / (s * s).max(1e-12),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsdConfig {
    pub guidance_gamma: f64,
    pub weight_fn: WeightFn,
    /// Multiply the coefficient by `α_t`, the chain factor of `x_t` in `x̂0`.
    pub include_alpha: bool,
    pub t_min: usize,
    pub t_max: usize,
    pub student_lr: f64,
    pub lora_lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Fraction of rows the LoRA teacher trains with the null embedding.
    pub lora_cond_dropout: f64,
    pub seed: u64,
}

impl VsdConfig {
    /// Defaults for a schedule with horizon `T`: timesteps in `[0.02T, 0.98T]`.
    pub fn for_horizon(t_max: usize) -> Self {
        let tf = t_max as f64;
        Self {
            guidance_gamma: 4.5,
            weight_fn: WeightFn::SigmaSq,
            include_alpha: false,
            t_min: ((0.02 * tf).round() as usize).max(1),
            t_max: ((0.98 * tf).round() as usize).max(1),
            student_lr: 3e-5,
            lora_lr: 1e-3,
            steps: 1000,
            batch_size: 256,
            lora_cond_dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(1 <= self.t_min && self.t_min <= self.t_max && self.t_max <= horizon) {
            return Err(invalid(format!(
                "need 1 <= t_min <= t_max <= {horizon}, got {}..{}",
                self.t_min, self.t_max
            )));
        }
        if !(self.student_lr > 0.0 && self.lora_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lora_cond_dropout) {
            return Err(invalid("lora_cond_dropout must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn draw_timesteps(&self, n: usize, rng: &mut LabRng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(self.t_min..=self.t_max)).collect()
    }
}

/// Result of one VSD gradient evaluation.
#[derive(Debug, Clone)]
pub struct VsdGrad {
    /// Gradient over the student's trainable set.
    pub grads: ParamSet,
    /// Per-row cotangent `w(t)·(ε̂_φ − ε̂_ψ)` (times `α_t` when configured),
    /// already divided by the batch size.
    pub coefficient: Array2<f64>,
    pub x0_hat: Array2<f64>,
}

/// `∇θ = E[w(t)(ε̂_φ − ε̂_ψ) ∂f_θ/∂θ]` with both scores guided at the same γ.
///
/// The coefficient is a constant: no gradient flows through either teacher
/// or through `x_t`.
#[allow(clippy::too_many_arguments)]
pub fn vsd_student_grad(
    phi: &Denoiser,
    psi: &AdaptedDenoiser<'_>,
    student: &Student,
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    cfg: &VsdConfig,
    schedule: &NoiseSchedule,
) -> Result<VsdGrad> {
    let trace = student.trace(z, y)?;
    let x0_hat = trace.output.clone();
    let x_t = add_noise(x0_hat.view(), eps, t, schedule)?;
    let e_phi = guided_eps(phi, x_t.view(), t, y, cfg.guidance_gamma)?;
    let e_psi = guided_eps(psi, x_t.view(), t, y, cfg.guidance_gamma)?;
    let mut c = e_phi - e_psi;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            name: "teacher score difference".into(),
        });
    }
    let n = t.len() as f64;
    for (mut row, w) in c.rows_mut().into_iter().zip(row_weights(t, cfg, schedule)) {
        row *= w / n;
    }
    let grads = student.backward(&trace, c.view())?;
    Ok(VsdGrad {
        grads,
        coefficient: c,
        x0_hat,
    })
}

/// `Σ_rows ⟨c, f_θ(z, y)⟩`, whose θ-gradient is the VSD gradient for fixed `c`.
pub fn vsd_surrogate(student: &Student, z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, c: &Array2<f64>) -> Result<f64> {
    let out = student.trace(z, y)?.output;
    Ok((&out * c).sum())
}

/// Diffusion loss of the adapted teacher on a fixed batch and its adapter gradient.
///
/// Rows flagged in `null_mask` see the base model's null embedding.
pub fn lora_teacher_loss(
    base: &Denoiser,
    adapters: &LoraAdapterSet,
    batch: &DiffusionBatch,
    null_mask: Option<&[bool]>,
    schedule: &NoiseSchedule,
) -> Result<(f64, ParamSet)> {
    let psi = AdaptedDenoiser::new(base, adapters);
    let n = batch.x0.nrows();
    let y = base.condition_rows(Cond::Embedding(batch.y.view()), n, null_mask);
    let x_t = add_noise(batch.x0.view(), batch.eps.view(), &batch.t, schedule)?;
    let trace = psi.trace(x_t.view(), &batch.t, y.view())?;
    let diff = &trace.output - &batch.eps;
    let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            name: "LoRA teacher loss".into(),
        });
    }
    let cot = diff * (2.0 / (n * batch.x0.ncols()) as f64);
    let g = psi.backward(&trace, cot.view())?;
    Ok((loss, adapters.grads_from(&g)?))
}

/// One AdamW step of the LoRA teacher on student samples `x̂0` (held constant).
#[allow(clippy::too_many_arguments)]
pub fn lora_teacher_step(
    base: &Denoiser,
    adapters: &mut LoraAdapterSet,
    opt: &mut AdamWState,
    x0_hat: Array2<f64>,
    y: Array2<f64>,
    cond_dropout: f64,
    schedule: &NoiseSchedule,
    rng: &mut LabRng,
) -> Result<f64> {
    let n = x0_hat.nrows();
    let batch = DiffusionBatch::draw(x0_hat, y, schedule.t_max(), rng);
    let mask: Vec<bool> = if cond_dropout > 0.0 {
        (0..n).map(|_| rng.random::<f64>() < cond_dropout).collect()
    } else {
        Vec::new()
    };
    let mask_ref = (!mask.is_empty()).then_some(&mask[..]);
    let (loss, grads) = lora_teacher_loss(base, adapters, &batch, mask_ref, schedule)?;
    opt.step(adapters.params_mut(), &grads)?;
    Ok(loss)
}

/// `w(t)` per row, times `α_t` when configured.
pub fn row_weights(t: &[usize], cfg: &VsdConfig, schedule: &NoiseSchedule) -> Array1<f64> {
    t.iter()
        .map(|&tr| {
            let w = cfg.weight_fn.eval(tr, schedule);
            if cfg.include_alpha {
                w * schedule.alpha(tr)
            } else {
                w
            }
        })
        .collect()
}
