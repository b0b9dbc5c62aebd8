//! Regression initialization onto fixed teacher samples, and the paired
//! image regularizer.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::student::Student;
use crate::diffusion::{sample_multistep, Denoiser, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::netcore::Architecture;
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng::{self, LabRng};
use crate::tensor::ParamSet;
use crate::toy::{draw_prompts, Prompt, PromptVocabulary};

/// Noise/condition/target triples produced by the multi-step teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPairs {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub x: Array2<f64>,
}

impl TeacherPairs {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            x: self.x.select(Axis(0), idx),
        }
    }
}

/// Draws `n` prompts from `prompts` and runs the guided sampler from fresh noise.
#[allow(clippy::too_many_arguments)]
pub fn teacher_pairs(
    teacher: &Denoiser,
    schedule: &NoiseSchedule,
    prompts: &[Prompt],
    vocab: &PromptVocabulary,
    n: usize,
    gamma: f64,
    num_steps: usize,
    rng: &mut LabRng,
) -> Result<TeacherPairs> {
    let chosen = draw_prompts(prompts, n, rng)?;
    let y = vocab.embed_all(&chosen)?;
    let z = rng::normal_matrix(rng, n, teacher.spec.data_dim);
    let x = sample_multistep(teacher, schedule, z.view(), y.view(), gamma, num_steps)?;
    Ok(TeacherPairs { z, y, x })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub pairs: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub teacher_steps: usize,
    pub guidance_gamma: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            pairs: 1024,
            steps: 1500,
            batch_size: 128,
            lr: 1e-3,
            teacher_steps: 25,
            guidance_gamma: 4.5,
        }
    }
}

/// Weighted mean squared error against paired targets and its gradient.
///
/// `weight = 0` returns an all-zero gradient set without evaluating the model.
pub fn image_regularizer(
    student: &Student,
    z: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    x_target: ArrayView2<'_, f64>,
    weight: f64,
) -> Result<(f64, ParamSet)> {
    if weight == 0.0 {
        return Ok((0.0, student.trainable().zeros_like()));
    }
    let trace = student.trace(z, y)?;
    if trace.output.dim() != x_target.dim() {
        return Err(Error::Shape {
            name: "x_target".into(),
            expected: trace.output.shape().to_vec(),
            actual: x_target.shape().to_vec(),
        });
    }
    let diff = &trace.output - &x_target;
    let loss = weight * diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    let cot = diff * (2.0 * weight / x_target.len() as f64);
    Ok((loss, student.backward(&trace, cot.view())?))
}

/// Fits a fresh student to the teacher's multi-step samples on a fixed pair set.
///
/// Returns the student and the MSE over all pairs after training.
#[allow(clippy::too_many_arguments)]
pub fn train_one_step_baseline(
    teacher: &Denoiser,
    schedule: &NoiseSchedule,
    prompts: &[Prompt],
    vocab: &PromptVocabulary,
    arch: Architecture,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<(Student, f64)> {
    if cfg.pairs == 0 || cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(invalid("baseline needs pairs, steps and batch_size >= 1"));
    }
    let mut r = rng::seeded(rng::derive(seed, 1));
    let pairs = teacher_pairs(
        teacher,
        schedule,
        prompts,
        vocab,
        cfg.pairs,
        cfg.guidance_gamma,
        cfg.teacher_steps,
        &mut r,
    )?;
    let mut student = Student::init(arch, teacher.spec.cond_dim, rng::derive(seed, 2))?;
    let mut opt = AdamWState::new(&student.params, AdamWConfig::with_lr(cfg.lr));
    let b = cfg.batch_size.min(cfg.pairs);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..b).map(|_| r.random_range(0..cfg.pairs)).collect();
        let batch = pairs.select(&idx);
        let (loss, grads) = image_regularizer(&student, batch.z.view(), batch.y.view(), batch.x.view(), 1.0)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "baseline regression loss".into(),
            });
        }
        opt.step(&mut student.params, &grads)?;
    }
    let (mse, _) = image_regularizer(&student, pairs.z.view(), pairs.y.view(), pairs.x.view(), 1.0)?;
    Ok((student, mse))
}
