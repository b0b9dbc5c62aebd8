//! Noise schedules, the forward process, ε-prediction teachers,
//! classifier-free guidance and a deterministic multi-step sampler.

use std::f64::consts::FRAC_PI_2;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::lora::{lora_trace, LoraAdapterSet};
use crate::netcore::{backward, forward_trace, Activation, Architecture, Gradients, Trace};
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng::{self, LabRng};
use crate::tensor::{ParamSet, Tensor};

/// Coefficient floor used when reconstructing `x0` from an ε prediction.
pub const ALPHA_FLOOR: f64 = 1e-3;

/// Parameter name of the learned unconditional embedding.
pub const NULL_EMBEDDING: &str = "null_embedding";

/// Number of sinusoidal time features fed to denoisers.
pub const TIME_FEATURES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Cosine,
    /// Variance grows linearly: `σ_t² = t / T`.
    LinearVp,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear_vp" => Ok(Self::LinearVp),
            other => Err(invalid(format!("unknown schedule `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::LinearVp => "linear_vp",
        }
    }
}

/// Per-timestep `(α_t, σ_t)` for `t ∈ 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

pub fn make_schedule(t_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_max < 2 {
        return Err(invalid(format!("schedule needs T >= 2, got {t_max}")));
    }
    let mut alphas = Vec::with_capacity(t_max + 1);
    let mut sigmas = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let s = t as f64 / t_max as f64;
        let (a, sg) = match kind {
            ScheduleKind::Cosine => ((FRAC_PI_2 * s).cos(), (FRAC_PI_2 * s).sin()),
            ScheduleKind::LinearVp => ((1.0 - s).sqrt(), s.sqrt()),
        };
        alphas.push(a);
        sigmas.push(sg);
    }
    // cos(π/2) is not exactly zero in floating point.
    alphas[0] = 1.0;
    sigmas[0] = 0.0;
    alphas[t_max] = 0.0;
    sigmas[t_max] = 1.0;
    Ok(NoiseSchedule {
        kind,
        alphas,
        sigmas,
    })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `T`, the last timestep index.
    pub fn t_max(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t_max() {
            return Err(invalid(format!("timestep {t} outside 0..={}", self.t_max())));
        }
        Ok(())
    }
}

fn check_same_shape(name: &str, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            name: name.into(),
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `x_t = α_t·x0 + σ_t·ε`, one timestep per row.
pub fn add_noise(
    x0: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    t: &[usize],
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    check_same_shape("eps", &x0, &eps)?;
    if t.len() != x0.nrows() {
        return Err(invalid(format!(
            "{} timesteps for {} rows",
            t.len(),
            x0.nrows()
        )));
    }
    let mut out = Array2::zeros(x0.dim());
    for (r, &tr) in t.iter().enumerate() {
        schedule.check_t(tr)?;
        let (a, sg) = (schedule.alpha(tr), schedule.sigma(tr));
        let mut row = out.row_mut(r);
        row.assign(&x0.row(r));
        row *= a;
        row.scaled_add(sg, &eps.row(r));
    }
    Ok(out)
}

/// Sinusoidal features of `t / T`.
pub fn time_features(t: usize, t_max: usize) -> [f64; TIME_FEATURES] {
    let s = t as f64 / t_max as f64;
    let mut f = [0.0; TIME_FEATURES];
    for j in 0..TIME_FEATURES / 2 {
        let w = std::f64::consts::PI * (1 << j) as f64 * s;
        f[2 * j] = w.sin();
        f[2 * j + 1] = w.cos();
    }
    f
}

/// Layout of an ε-prediction network: input is `[x_t | time features | y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub t_max: usize,
    pub arch: Architecture,
}

impl DenoiserSpec {
    pub fn new(
        data_dim: usize,
        cond_dim: usize,
        t_max: usize,
        hidden: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let mut dims = vec![data_dim + TIME_FEATURES + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        Ok(Self {
            data_dim,
            cond_dim,
            t_max,
            arch: Architecture::new(dims, activation)?,
        })
    }

    pub fn from_arch(arch: Architecture, cond_dim: usize, t_max: usize) -> Result<Self> {
        let data_dim = arch.output_dim();
        if arch.input_dim() != data_dim + TIME_FEATURES + cond_dim {
            return Err(invalid(format!(
                "denoiser architecture {} does not fit data_dim {data_dim}, cond_dim {cond_dim}",
                arch.descriptor()
            )));
        }
        Ok(Self {
            data_dim,
            cond_dim,
            t_max,
            arch,
        })
    }

    fn input(&self, x_t: ArrayView2<'_, f64>, t: &[usize], y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = x_t.nrows();
        if x_t.ncols() != self.data_dim {
            return Err(Error::Shape {
                name: "x_t".into(),
                expected: vec![n, self.data_dim],
                actual: x_t.shape().to_vec(),
            });
        }
        if y.dim() != (n, self.cond_dim) {
            return Err(Error::Shape {
                name: "condition".into(),
                expected: vec![n, self.cond_dim],
                actual: y.shape().to_vec(),
            });
        }
        if t.len() != n {
            return Err(invalid(format!("{} timesteps for {n} rows", t.len())));
        }
        let d = self.data_dim;
        let mut inp = Array2::zeros((n, self.arch.input_dim()));
        inp.slice_mut(s![.., ..d]).assign(&x_t);
        for (r, &tr) in t.iter().enumerate() {
            if tr > self.t_max {
                return Err(invalid(format!("timestep {tr} outside 0..={}", self.t_max)));
            }
            let f = time_features(tr, self.t_max);
            for (j, v) in f.iter().enumerate() {
                inp[[r, d + j]] = *v;
            }
        }
        inp.slice_mut(s![.., d + TIME_FEATURES..]).assign(&y);
        Ok(inp)
    }
}

/// Conditioning for one denoiser call.
#[derive(Debug, Clone, Copy)]
pub enum Cond<'a> {
    Embedding(ArrayView2<'a, f64>),
    Null,
}

/// Anything that predicts the added noise.
pub trait EpsModel {
    fn predict(&self, x_t: ArrayView2<'_, f64>, t: &[usize], cond: Cond<'_>) -> Result<Array2<f64>>;
}

/// ε-prediction network with a learned null embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub spec: DenoiserSpec,
    pub params: ParamSet,
}

impl Denoiser {
    pub fn init(spec: DenoiserSpec, seed: u64) -> Self {
        let mut params = spec.arch.init_params(seed);
        params
            .insert(NULL_EMBEDDING, Tensor::zeros(vec![spec.cond_dim]))
            .expect("fresh name");
        Self { spec, params }
    }

    pub fn from_params(spec: DenoiserSpec, params: ParamSet) -> Result<Self> {
        spec.arch.check_params(&params)?;
        params.vector(NULL_EMBEDDING, spec.cond_dim)?;
        Ok(Self { spec, params })
    }

    pub fn null_embedding(&self) -> Array1<f64> {
        self.params
            .vector(NULL_EMBEDDING, self.spec.cond_dim)
            .expect("checked at construction")
            .to_owned()
    }

    /// Condition matrix with the null embedding substituted where requested.
    pub fn condition_rows(&self, cond: Cond<'_>, n: usize, null_mask: Option<&[bool]>) -> Array2<f64> {
        let null = self.null_embedding();
        let mut y = match cond {
            Cond::Embedding(y) => y.to_owned(),
            Cond::Null => Array2::zeros((n, self.spec.cond_dim)),
        };
        for r in 0..y.nrows() {
            let use_null = matches!(cond, Cond::Null) || null_mask.is_some_and(|m| m[r]);
            if use_null {
                y.row_mut(r).assign(&null);
            }
        }
        y
    }

    fn trace(&self, x_t: ArrayView2<'_, f64>, t: &[usize], y: ArrayView2<'_, f64>) -> Result<Trace> {
        let inp = self.spec.input(x_t, t, y)?;
        forward_trace(&self.params, &self.spec.arch, &[], inp.view())
    }
}

impl EpsModel for Denoiser {
    fn predict(&self, x_t: ArrayView2<'_, f64>, t: &[usize], cond: Cond<'_>) -> Result<Array2<f64>> {
        let y = self.condition_rows(cond, x_t.nrows(), None);
        Ok(self.trace(x_t, t, y.view())?.output)
    }
}

/// A frozen denoiser with trainable low-rank adapters on top.
#[derive(Debug, Clone, Copy)]
pub struct AdaptedDenoiser<'a> {
    pub base: &'a Denoiser,
    pub adapters: &'a LoraAdapterSet,
}

impl<'a> AdaptedDenoiser<'a> {
    pub fn new(base: &'a Denoiser, adapters: &'a LoraAdapterSet) -> Self {
        Self { base, adapters }
    }

    pub(crate) fn trace(&self, x_t: ArrayView2<'_, f64>, t: &[usize], y: ArrayView2<'_, f64>) -> Result<Trace> {
        let inp = self.base.spec.input(x_t, t, y)?;
        lora_trace(&self.base.params, self.adapters, &self.base.spec.arch, inp.view())
    }

    pub(crate) fn backward(&self, trace: &Trace, cotangent: ArrayView2<'_, f64>) -> Result<Gradients> {
        backward(
            &self.base.params,
            &self.base.spec.arch,
            &self.adapters.low_ranks(&self.base.spec.arch)?,
            trace,
            cotangent,
        )
    }
}

impl EpsModel for AdaptedDenoiser<'_> {
    fn predict(&self, x_t: ArrayView2<'_, f64>, t: &[usize], cond: Cond<'_>) -> Result<Array2<f64>> {
        let y = self.base.condition_rows(cond, x_t.nrows(), None);
        Ok(self.trace(x_t, t, y.view())?.output)
    }
}

/// Classifier-free guidance: `ε(y) + γ·(ε(y) − ε(∅))`.
///
/// `gamma = 0` returns the conditional prediction unchanged.
pub fn guided_eps(
    model: &dyn EpsModel,
    x_t: ArrayView2<'_, f64>,
    t: &[usize],
    y: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<Array2<f64>> {
    let cond = model.predict(x_t, t, Cond::Embedding(y))?;
    if gamma == 0.0 {
        return Ok(cond);
    }
    let uncond = model.predict(x_t, t, Cond::Null)?;
    Ok(combine_guidance(&cond, &uncond, gamma))
}

pub fn combine_guidance(cond: &Array2<f64>, uncond: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let mut out = cond - uncond;
    out *= gamma;
    out += cond;
    out
}

/// Uniformly strided timesteps from `T` down to `0` (length `num_steps + 1`).
pub fn sampler_grid(t_max: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 || num_steps > t_max {
        return Err(invalid(format!(
            "num_steps must be in 1..={t_max}, got {num_steps}"
        )));
    }
    Ok((0..=num_steps)
        .map(|i| {
            let v = (t_max * (num_steps - i)) as f64 / num_steps as f64;
            v.round() as usize
        })
        .collect())
}

/// `x̂0 = (x_t − σ_t·ε̂) / max(α_t, ALPHA_FLOOR)`.
pub fn predict_x0(x_t: &Array2<f64>, eps_hat: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Array2<f64> {
    let a = schedule.alpha(t).max(ALPHA_FLOOR);
    let mut x0 = x_t.clone();
    x0.scaled_add(-schedule.sigma(t), eps_hat);
    x0 /= a;
    x0
}

/// Deterministic DDIM-style guided sampler (η = 0); returns the final `x̂0`.
///
/// The step out of a timestep with `α_t < ALPHA_FLOOR` (only `t = T`) moves
/// to `σ_next·ε̂`, dropping the singular `x̂0` term.
pub fn sample_multistep(
    model: &dyn EpsModel,
    schedule: &NoiseSchedule,
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    gamma: f64,
    num_steps: usize,
) -> Result<Array2<f64>> {
    let grid = sampler_grid(schedule.t_max(), num_steps)?;
    let n = z.nrows();
    let mut x = z.to_owned();
    let mut x0 = x.clone();
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let ts = vec![t; n];
        let eps_hat = guided_eps(model, x.view(), &ts, y, gamma)?;
        x0 = predict_x0(&x, &eps_hat, t, schedule);
        // At α_t < ALPHA_FLOOR the x̂0 estimate is dominated by ε̂'s error
        // amplified by 1/ALPHA_FLOOR; step along ε̂ alone instead.
        let mut next = if schedule.alpha(t) < ALPHA_FLOOR {
            Array2::zeros(x0.dim())
        } else {
            &x0 * schedule.alpha(t_next)
        };
        next.scaled_add(schedule.sigma(t_next), &eps_hat);
        x = next;
    }
    Ok(x0)
}

/// One draw of the diffusion training objective.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    pub x0: Array2<f64>,
    pub eps: Array2<f64>,
    pub t: Vec<usize>,
    pub y: Array2<f64>,
}

impl DiffusionBatch {
    /// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` for the given clean rows.
    pub fn draw(x0: Array2<f64>, y: Array2<f64>, t_max: usize, rng: &mut LabRng) -> Self {
        let n = x0.nrows();
        let t = (0..n).map(|_| rng.random_range(1..=t_max)).collect();
        let eps = rng::normal_matrix(rng, n, x0.ncols());
        Self { x0, eps, t, y }
    }
}

/// Mean squared ε error over rows and dimensions.
pub fn diffusion_loss(model: &dyn EpsModel, batch: &DiffusionBatch, schedule: &NoiseSchedule) -> Result<f64> {
    let x_t = add_noise(batch.x0.view(), batch.eps.view(), &batch.t, schedule)?;
    let pred = model.predict(x_t.view(), &batch.t, Cond::Embedding(batch.y.view()))?;
    let diff = pred - &batch.eps;
    Ok(diff.mapv(|v| v * v).mean().unwrap_or(0.0))
}

/// Source of `(x0, y)` training pairs.
pub trait ConditionalData {
    fn data_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    /// Draws `n` clean samples and their condition embeddings.
    fn sample(&self, n: usize, rng: &mut LabRng) -> Result<(Array2<f64>, Array2<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Fraction of rows trained with the null embedding.
    pub cond_dropout: f64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 256,
            optimizer: AdamWConfig::with_lr(2e-3),
            cond_dropout: 0.1,
        }
    }
}

/// Trains an ε-prediction teacher on `data` and returns it with its loss curve.
pub fn train_teacher(
    spec: &DenoiserSpec,
    schedule: &NoiseSchedule,
    data: &dyn ConditionalData,
    cfg: &TeacherTrainConfig,
    seed: u64,
) -> Result<(Denoiser, Vec<f64>)> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(invalid("teacher training needs steps >= 1 and batch_size >= 1"));
    }
    if data.data_dim() != spec.data_dim || data.cond_dim() != spec.cond_dim {
        return Err(invalid("dataset dimensions do not match the denoiser"));
    }
    if spec.t_max != schedule.t_max() {
        return Err(invalid("denoiser and schedule disagree on T"));
    }
    let mut model = Denoiser::init(spec.clone(), rng::derive(seed, 1));
    let mut opt = AdamWState::new(&model.params, cfg.optimizer);
    let mut rng = rng::seeded(rng::derive(seed, 2));
    let mut losses = Vec::with_capacity(cfg.steps);
    let (d, c) = (spec.data_dim, spec.cond_dim);
    for step in 0..cfg.steps {
        let (x0, y) = data.sample(cfg.batch_size, &mut rng)?;
        let batch = DiffusionBatch::draw(x0, y, schedule.t_max(), &mut rng);
        let mask: Vec<bool> = (0..cfg.batch_size)
            .map(|_| rng.random::<f64>() < cfg.cond_dropout)
            .collect();
        let y = model.condition_rows(Cond::Embedding(batch.y.view()), cfg.batch_size, Some(&mask));
        let x_t = add_noise(batch.x0.view(), batch.eps.view(), &batch.t, schedule)?;
        let trace = model.trace(x_t.view(), &batch.t, y.view())?;
        let diff = &trace.output - &batch.eps;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "teacher diffusion loss".into(),
            });
        }
        losses.push(loss);
        let cot = diff * (2.0 / (cfg.batch_size * d) as f64);
        let g = backward(&model.params, &spec.arch, &[], &trace, cot.view())?;
        let mut grads = g.params;
        let mut null_grad = Array1::<f64>::zeros(c);
        for (r, &m) in mask.iter().enumerate() {
            if m {
                null_grad += &g.input.slice(s![r, d + TIME_FEATURES..]);
            }
        }
        grads.insert(NULL_EMBEDDING, Tensor::from_vector(null_grad))?;
        opt.step(&mut model.params, &grads).map_err(|e| match e {
            Error::NonFinite { name } => Error::Diverged {
                step,
                what: format!("gradient of `{name}`"),
            },
            other => other,
        })?;
    }
    Ok((model, losses))
}

/// Empirical variance of each column.
pub fn column_variance(x: &Array2<f64>) -> Array1<f64> {
    x.var_axis(Axis(0), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_boundaries() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::LinearVp] {
            let s = make_schedule(1000, kind).unwrap();
            assert_eq!((s.alpha(0), s.sigma(0)), (1.0, 0.0));
            assert_eq!((s.alpha(1000), s.sigma(1000)), (0.0, 1.0));
            for t in 0..1000 {
                assert!(s.alpha(t + 1) <= s.alpha(t));
                assert!(s.sigma(t + 1) >= s.sigma(t));
                let norm = s.alpha(t).powi(2) + s.sigma(t).powi(2);
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
        assert!(make_schedule(1, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn cosine_midpoint() {
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.alpha(500) - h).abs() < 1e-15);
        assert!((s.sigma(500) - h).abs() < 1e-15);
    }

    #[test]
    fn add_noise_boundaries_and_hand_value() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let x0 = array![[1.5, -2.0]];
        let eps = array![[0.25, 4.0]];
        assert_eq!(add_noise(x0.view(), eps.view(), &[0], &s).unwrap(), x0);
        assert_eq!(add_noise(x0.view(), eps.view(), &[10], &s).unwrap(), eps);
        assert!(add_noise(x0.view(), eps.view(), &[11], &s).is_err());
        assert!(add_noise(x0.view(), eps.view(), &[1, 2], &s).is_err());

        // A schedule row with (α, σ) = (0.6, 0.8).
        let hand = NoiseSchedule {
            kind: ScheduleKind::Cosine,
            alphas: vec![1.0, 0.6, 0.0],
            sigmas: vec![0.0, 0.8, 1.0],
        };
        let xt = add_noise(array![[1.0]].view(), array![[-1.0]].view(), &[1], &hand).unwrap();
        assert!((xt[[0, 0]] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn grid_strides_from_t_to_zero() {
        assert_eq!(sampler_grid(1000, 4).unwrap(), vec![1000, 750, 500, 250, 0]);
        assert_eq!(sampler_grid(10, 1).unwrap(), vec![10, 0]);
        assert!(sampler_grid(10, 11).is_err());
        assert!(sampler_grid(10, 0).is_err());
    }

    struct Fixed(f64, f64);

    impl EpsModel for Fixed {
        fn predict(&self, x_t: ArrayView2<'_, f64>, _t: &[usize], cond: Cond<'_>) -> Result<Array2<f64>> {
            let v = match cond {
                Cond::Embedding(_) => self.0,
                Cond::Null => self.1,
            };
            Ok(Array2::from_elem(x_t.dim(), v))
        }
    }

    #[test]
    fn guidance_hand_values() {
        let x = array![[0.0]];
        let y = array![[0.0]];
        let out = guided_eps(&Fixed(1.0, 0.5), x.view(), &[3], y.view(), 2.0).unwrap();
        assert_eq!(out[[0, 0]], 2.0);
        let out = guided_eps(&Fixed(1.0, 0.5), x.view(), &[3], y.view(), 0.0).unwrap();
        assert_eq!(out[[0, 0]], 1.0);
        for g in [0.0, 1.0, 4.5, -3.0] {
            let out = guided_eps(&Fixed(0.7, 0.7), x.view(), &[3], y.view(), g).unwrap();
            assert_eq!(out[[0, 0]], 0.7);
        }
    }

    struct Oracle(Array2<f64>);

    impl EpsModel for Oracle {
        fn predict(&self, _x: ArrayView2<'_, f64>, _t: &[usize], _c: Cond<'_>) -> Result<Array2<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn exact_noise_predictor_has_zero_loss() {
        let mut r = rng::seeded(0);
        let x0 = rng::normal_matrix(&mut r, 6, 3);
        let y = Array2::zeros((6, 2));
        let batch = DiffusionBatch::draw(x0, y, 100, &mut r);
        let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
        let loss = diffusion_loss(&Oracle(batch.eps.clone()), &batch, &s).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_step_sampler_is_one_shot_reconstruction() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let z = array![[0.3, -1.2], [2.0, 0.1]];
        let y = Array2::zeros((2, 1));
        let model = Fixed(0.25, -0.5);
        let out = sample_multistep(&model, &s, z.view(), y.view(), 1.5, 1).unwrap();
        let eps = guided_eps(&model, z.view(), &[50, 50], y.view(), 1.5).unwrap();
        let expected = (&z - &eps) / ALPHA_FLOOR;
        assert_eq!(out, expected);
    }
}
