//! One-step distillation: the student, the VSD gradient with its LoRA
//! teacher, the clamped alignment loss, regression initialization and the
//! two training schemes.

pub mod baseline;
pub mod clip;
pub mod student;
pub mod vsd;

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;

use crate::diffusion::{AdaptedDenoiser, Denoiser, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::lora::{self, LoraAdapterSet};
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng;
use crate::toy::{draw_prompts, Prompt, PromptVocabulary};

pub use baseline::{image_regularizer, teacher_pairs, train_one_step_baseline, BaselineConfig, TeacherPairs};
pub use clip::{clamped_clip_loss, clip_weight_schedule, ClipLossConfig, ClipModels, ClipSchedule};
pub use student::{student_generate, Student};
pub use vsd::{lora_teacher_step, vsd_student_grad, VsdConfig, WeightFn};

/// How often the efficient scheme re-verifies that base weights are untouched.
pub const FREEZE_CHECK_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterSpec {
    pub rank: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainingScheme {
    /// Every student weight is trained; no alignment loss.
    Full,
    /// Only student adapters are trained, with the scheduled alignment loss.
    Efficient { adapters: AdapterSpec, clip: ClipLossConfig },
}

impl TrainingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Efficient { .. } => "efficient",
        }
    }
}

/// Paired regularization data and its weight.
#[derive(Debug, Clone)]
pub struct Regularization {
    pub pairs: TeacherPairs,
    pub weight: f64,
    pub batch_size: usize,
}

/// Read-only inputs shared by every step.
#[derive(Clone, Copy)]
pub struct DistillContext<'a> {
    pub teacher: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub vocab: &'a PromptVocabulary,
    pub prompts: &'a [Prompt],
    pub lora_teacher: AdapterSpec,
    pub clip_models: Option<ClipModels<'a>>,
    pub regularization: Option<&'a Regularization>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub vsd_grad_norm: f64,
    pub clip_loss_weighted: f64,
    pub reg_loss: f64,
    pub wall_ms: u128,
}

pub const LOG_HEADER: &str = "step,vsd_grad_norm,clip_loss_weighted,reg_loss,wall_ms";

/// Training log as CSV text with a header line.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.vsd_grad_norm, r.clip_loss_weighted, r.reg_loss, r.wall_ms
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct DistillOutput {
    pub student: Student,
    pub lora_teacher: LoraAdapterSet,
    pub log: Vec<LogRow>,
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { name } => Error::Diverged { step, what: name },
        other => other,
    }
}

/// Alternates one student update and one LoRA-teacher update per step.
pub fn distill(init: Student, ctx: DistillContext<'_>, scheme: &TrainingScheme, vsd: &VsdConfig) -> Result<DistillOutput> {
    vsd.validate(ctx.schedule.t_max())?;
    if init.has_adapters() {
        return Err(invalid("distillation starts from a plain student without adapters"));
    }
    if init.cond_dim != ctx.teacher.spec.cond_dim || init.latent_dim() != ctx.teacher.spec.data_dim {
        return Err(invalid("student and teacher disagree on latent or condition width"));
    }
    let mut student = init;
    let clip = match scheme {
        TrainingScheme::Full => None,
        TrainingScheme::Efficient { adapters, clip } => {
            clip.validate()?;
            let models = ctx
                .clip_models
                .ok_or_else(|| invalid("efficient scheme needs an embedder and a tiny decoder"))?;
            student.attach_adapters(adapters.rank, adapters.gamma, rng::derive(vsd.seed, 11))?;
            Some((clip, models))
        }
    };
    let base_checksum = student.params.checksum();

    let arch = &ctx.teacher.spec.arch;
    let mut psi = lora::init_lora(
        arch,
        &lora::hidden_layer_names(arch),
        ctx.lora_teacher.rank,
        ctx.lora_teacher.gamma,
        rng::derive(vsd.seed, 10),
    )?;
    let mut student_opt = AdamWState::new(student.trainable(), AdamWConfig::with_lr(vsd.student_lr));
    let mut psi_opt = AdamWState::new(psi.params(), AdamWConfig::with_lr(vsd.lora_lr));
    let mut r = rng::seeded(rng::derive(vsd.seed, 12));
    let (b, l) = (vsd.batch_size, student.latent_dim());
    let start = Instant::now();
    let mut log = Vec::with_capacity(vsd.steps);

    for step in 0..vsd.steps {
        let y = ctx.vocab.embed_all(&draw_prompts(ctx.prompts, b, &mut r)?)?;
        let z = rng::normal_matrix(&mut r, b, l);
        let t = vsd.draw_timesteps(b, &mut r);
        let eps = rng::normal_matrix(&mut r, b, l);
        let g = vsd_student_grad(
            ctx.teacher,
            &AdaptedDenoiser::new(ctx.teacher, &psi),
            &student,
            z.view(),
            y.view(),
            &t,
            eps.view(),
            vsd,
            ctx.schedule,
        )
        .map_err(|e| diverged(step, e))?;
        let vsd_grad_norm = g.grads.l2_norm();
        let mut total = g.grads;

        let mut clip_loss_weighted = 0.0;
        if let Some((cfg, models)) = clip {
            let w = clip_weight_schedule(step, vsd.steps, cfg)?;
            if w > 0.0 {
                let cg = clamped_clip_loss(&student, z.view(), y.view(), models, cfg.tau)?;
                total.add_scaled(&cg.grads, w)?;
                clip_loss_weighted = w * cg.loss;
            }
        }

        let mut reg_loss = 0.0;
        if let Some(reg) = ctx.regularization {
            if reg.weight != 0.0 && !reg.pairs.is_empty() {
                let idx: Vec<usize> = (0..reg.batch_size.max(1))
                    .map(|_| r.random_range(0..reg.pairs.len()))
                    .collect();
                let batch = reg.pairs.select(&idx);
                let (loss, grads) = image_regularizer(&student, batch.z.view(), batch.y.view(), batch.x.view(), reg.weight)?;
                total.add_scaled(&grads, 1.0)?;
                reg_loss = loss;
            }
        }

        student_opt
            .step(student.trainable_mut(), &total)
            .map_err(|e| diverged(step, e))?;

        let y2 = ctx.vocab.embed_all(&draw_prompts(ctx.prompts, b, &mut r)?)?;
        let z2 = rng::normal_matrix(&mut r, b, l);
        let x0 = student_generate(&student, z2.view(), y2.view())?;
        lora_teacher_step(
            ctx.teacher,
            &mut psi,
            &mut psi_opt,
            x0,
            y2,
            vsd.lora_cond_dropout,
            ctx.schedule,
            &mut r,
        )
        .map_err(|e| diverged(step, e))?;

        if student.has_adapters() && (step + 1) % FREEZE_CHECK_EVERY == 0 && student.params.checksum() != base_checksum {
            return Err(invalid(format!("base student weights changed by step {step}")));
        }
        log.push(LogRow {
            step,
            vsd_grad_norm,
            clip_loss_weighted,
            reg_loss,
            wall_ms: start.elapsed().as_millis(),
        });
    }
    if student.params.checksum() != base_checksum && student.has_adapters() {
        return Err(invalid("base student weights changed during adapter training"));
    }
    Ok(DistillOutput {
        student,
        lora_teacher: psi,
        log,
    })
}
