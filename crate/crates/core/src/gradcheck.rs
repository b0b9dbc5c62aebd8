//! Central finite-difference checks for every hand-written gradient path.
//!
//! Each scenario builds small random models from a seed, computes the
//! analytic gradient and compares it with central differences of the
//! corresponding scalar objective. Errors are norm-wise:
//! `|g_analytic − g_fd| / max(|g_analytic|, |g_fd|)`.

use ndarray::Array2;
use rand::Rng;

use crate::diffusion::{make_schedule, AdaptedDenoiser, Denoiser, DenoiserSpec, DiffusionBatch, ScheduleKind};
use crate::distill::clip::{clamped_clip_loss, ClipModels};
use crate::distill::vsd::{lora_teacher_loss, vsd_student_grad, vsd_surrogate, VsdConfig};
use crate::distill::{image_regularizer, Student};
use crate::error::Result;
use crate::lora::{hidden_layer_names, init_lora, LoraAdapterSet};
use crate::netcore::{mlp_forward, mlp_vjp, Activation, Architecture, Mlp};
use crate::rng::{self, LabRng};
use crate::tensor::{ParamSet, Tensor};
use crate::toy::{Coder, JointEmbedder, COND_DIM};

/// Step used by every scenario.
pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` with respect to every scalar in `params`.
pub fn numeric_gradient(params: &ParamSet, h: f64, mut f: impl FnMut(&ParamSet) -> Result<f64>) -> Result<ParamSet> {
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.require(name)?.len();
        for i in 0..len {
            let orig = params.require(name)?.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig + h;
            let up = f(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig - h;
            let down = f(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig;
            grad.get_mut(name).expect("same names").data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Norm-wise relative difference of two gradient sets.
pub fn relative_error(analytic: &ParamSet, numeric: &ParamSet) -> Result<f64> {
    analytic.check_compatible(numeric)?;
    let mut diff = analytic.clone();
    diff.add_scaled(numeric, -1.0)?;
    let scale = analytic.l2_norm().max(numeric.l2_norm());
    Ok(if scale == 0.0 { 0.0 } else { diff.l2_norm() / scale })
}

fn single(name: &str, m: &Array2<f64>) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(name, Tensor::from_matrix(m.clone())).expect("fresh set");
    p
}

fn randomize(params: &mut ParamSet, scale: f64, r: &mut LabRng) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = scale * rng::normal(r);
        }
    }
}

/// Parameter and input gradients of `<c, mlp(x)>` for every activation.
pub fn check_mlp_vjp(seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for act in [Activation::Silu, Activation::Tanh, Activation::Identity] {
        let arch = Architecture::new(vec![5, 7, 6, 3], act)?;
        let params = arch.init_params(r.random());
        let x = rng::normal_matrix(&mut r, 4, 5);
        let c = rng::normal_matrix(&mut r, 4, 3);
        let (gx, gp) = mlp_vjp(&params, &arch, x.view(), c.view())?;
        let obj = |p: &ParamSet, x: &Array2<f64>| -> Result<f64> { Ok((&mlp_forward(p, &arch, x.view())? * &c).sum()) };
        let fp = numeric_gradient(&params, FD_STEP, |p| obj(p, &x))?;
        let fx = numeric_gradient(&single("x", &x), FD_STEP, |p| {
            obj(&params, &p.require("x")?.as_matrix().expect("matrix").to_owned())
        })?;
        worst = worst
            .max(relative_error(&gp, &fp)?)
            .max(relative_error(&single("x", &gx), &fx)?);
    }
    Ok(worst)
}

fn small_teacher(r: &mut LabRng) -> Result<Denoiser> {
    let spec = DenoiserSpec::new(2, COND_DIM, 50, &[16, 16], Activation::Silu)?;
    let mut d = Denoiser::init(spec, r.random());
    randomize_named(&mut d.params, "null_embedding", 0.5, r);
    Ok(d)
}

fn randomize_named(params: &mut ParamSet, name: &str, scale: f64, r: &mut LabRng) {
    if let Some(t) = params.get_mut(name) {
        for v in t.data_mut() {
            *v = scale * rng::normal(r);
        }
    }
}

fn perturbed_lora(arch: &Architecture, rank: usize, gamma: f64, r: &mut LabRng) -> Result<LoraAdapterSet> {
    let mut a = init_lora(arch, &hidden_layer_names(arch), rank, gamma, r.random())?;
    randomize(a.params_mut(), 0.2, r);
    Ok(a)
}

fn small_student(adapters: bool, r: &mut LabRng) -> Result<Student> {
    let arch = Student::architecture(2, COND_DIM, &[12, 12], Activation::Silu)?;
    let mut s = Student::init(arch, COND_DIM, r.random())?;
    if adapters {
        s.adapters = Some(perturbed_lora(&s.arch, 2, 4.0, r)?);
    }
    Ok(s)
}

fn with_trainable(s: &Student, p: &ParamSet) -> Student {
    let mut out = s.clone();
    *out.trainable_mut() = p.clone();
    out
}

/// The VSD student gradient against the surrogate `<c, f_θ(z, y)>` with the
/// returned coefficient held fixed; plain and adapter students.
pub fn check_vsd_surrogate(seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let phi = small_teacher(&mut r)?;
    let psi = perturbed_lora(&phi.spec.arch, 2, 4.0, &mut r)?;
    let schedule = make_schedule(50, ScheduleKind::Cosine)?;
    let mut worst: f64 = 0.0;
    for (adapters, include_alpha) in [(false, false), (true, true)] {
        let student = small_student(adapters, &mut r)?;
        let n = 6;
        let z = rng::normal_matrix(&mut r, n, 2);
        let y = rng::normal_matrix(&mut r, n, COND_DIM);
        let eps = rng::normal_matrix(&mut r, n, 2);
        let mut cfg = VsdConfig::for_horizon(50);
        cfg.include_alpha = include_alpha;
        let t = cfg.draw_timesteps(n, &mut r);
        let g = vsd_student_grad(
            &phi,
            &AdaptedDenoiser::new(&phi, &psi),
            &student,
            z.view(),
            y.view(),
            &t,
            eps.view(),
            &cfg,
            &schedule,
        )?;
        let fd = numeric_gradient(student.trainable(), FD_STEP, |p| {
            vsd_surrogate(&with_trainable(&student, p), z.view(), y.view(), &g.coefficient)
        })?;
        worst = worst.max(relative_error(&g.grads, &fd)?);
    }
    Ok(worst)
}

/// Diffusion loss of the LoRA teacher with respect to its adapters, with
/// some rows routed to the null embedding.
pub fn check_lora_teacher_loss(seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let base = small_teacher(&mut r)?;
    let adapters = perturbed_lora(&base.spec.arch, 3, 6.0, &mut r)?;
    let schedule = make_schedule(50, ScheduleKind::Cosine)?;
    let n = 8;
    let batch = DiffusionBatch::draw(rng::normal_matrix(&mut r, n, 2), rng::normal_matrix(&mut r, n, COND_DIM), 50, &mut r);
    let mask: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let (_, grads) = lora_teacher_loss(&base, &adapters, &batch, Some(&mask), &schedule)?;
    let fd = numeric_gradient(adapters.params(), FD_STEP, |p| {
        let mut a = adapters.clone();
        *a.params_mut() = p.clone();
        Ok(lora_teacher_loss(&base, &a, &batch, Some(&mask), &schedule)?.0)
    })?;
    relative_error(&grads, &fd)
}

fn small_clip_models(r: &mut LabRng) -> Result<(Coder, JointEmbedder)> {
    let decoder = Coder::Net(Mlp::init(Architecture::new(vec![2, 6, 5], Activation::Silu)?, r.random()));
    let image = Mlp::init(Architecture::new(vec![5, 8, 4], Activation::Silu)?, r.random());
    let text = Mlp::init(Architecture::new(vec![COND_DIM, 4, 4], Activation::Silu)?, r.random());
    Ok((decoder, JointEmbedder::new(image, text)?))
}

/// Clamped alignment loss through embedder, decoder and student, with every
/// row active and with a threshold splitting the batch.
pub fn check_clamped_clip(seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let (decoder, embedder) = small_clip_models(&mut r)?;
    let models = ClipModels {
        embedder: &embedder,
        decoder: &decoder,
    };
    let mut worst: f64 = 0.0;
    for adapters in [false, true] {
        let student = small_student(adapters, &mut r)?;
        let n = 8;
        let z = rng::normal_matrix(&mut r, n, 2);
        let y = rng::normal_matrix(&mut r, n, COND_DIM);
        let sims = clamped_clip_loss(&student, z.view(), y.view(), models, 1.0)?.similarities;
        let mut sorted = sims.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        let taus = if sorted[n / 2] - sorted[n / 2 - 1] > 1e-3 { vec![1.0, mid] } else { vec![1.0] };
        for tau in taus {
            let g = clamped_clip_loss(&student, z.view(), y.view(), models, tau)?;
            let fd = numeric_gradient(student.trainable(), FD_STEP, |p| {
                Ok(clamped_clip_loss(&with_trainable(&student, p), z.view(), y.view(), models, tau)?.loss)
            })?;
            worst = worst.max(relative_error(&g.grads, &fd)?);
        }
    }
    Ok(worst)
}

/// Weighted paired MSE regularizer, plain and adapter students.
pub fn check_image_regularizer(seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for adapters in [false, true] {
        let student = small_student(adapters, &mut r)?;
        let n = 5;
        let z = rng::normal_matrix(&mut r, n, 2);
        let y = rng::normal_matrix(&mut r, n, COND_DIM);
        let x = rng::normal_matrix(&mut r, n, 2);
        let (_, g) = image_regularizer(&student, z.view(), y.view(), x.view(), 0.7)?;
        let fd = numeric_gradient(student.trainable(), FD_STEP, |p| {
            Ok(image_regularizer(&with_trainable(&student, p), z.view(), y.view(), x.view(), 0.7)?.0)
        })?;
        worst = worst.max(relative_error(&g, &fd)?);
    }
    Ok(worst)
}

/// Runs one scenario at a seed and returns the worst relative error.
pub type Scenario = fn(u64) -> Result<f64>;

/// Every scenario by name.
pub const SCENARIOS: [(&str, Scenario); 5] = [
    ("mlp_vjp", check_mlp_vjp),
    ("vsd_surrogate", check_vsd_surrogate),
    ("lora_teacher_loss", check_lora_teacher_loss),
    ("clamped_clip_loss", check_clamped_clip),
    ("image_regularizer", check_image_regularizer),
];
