//! Sample generation and metric computation for trained generators.
//!
//! Prompts, real samples and generator noise come from streams derived from
//! one evaluation seed, so every generator evaluated with the same seed sees
//! the same prompts, the same real set and the same noise.

use ndarray::Array2;

use crate::diffusion::{sample_multistep, Denoiser, NoiseSchedule};
use crate::distill::{student_generate, Student};
use crate::error::{invalid, Result};
use crate::metrics::{self, FeatureSpace, MetricReport};
use crate::rng;
use crate::toy::{draw_prompts, gauss2d, Decoder, JointEmbedder, Prompt, PromptVocabulary, ToyTask};

/// Radius around a gauss2d mode mean that counts toward its coverage.
pub const COVERAGE_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 0,
            k: metrics::DEFAULT_K,
        }
    }
}

/// Something that turns latent noise and conditions into latent samples.
#[derive(Clone, Copy)]
pub enum Generator<'a> {
    /// One network evaluation per sample (adapters are folded in first).
    OneStep(&'a Student),
    /// Guided multi-step sampling from the teacher.
    MultiStep {
        teacher: &'a Denoiser,
        schedule: &'a NoiseSchedule,
        steps: usize,
        gamma: f64,
    },
    /// An independent draw from the data distribution (self-evaluation).
    Data,
}

impl Generator<'_> {
    pub fn role(&self) -> &'static str {
        match self {
            Self::OneStep(s) if s.has_adapters() => "student_lora",
            Self::OneStep(_) => "student_full",
            Self::MultiStep { .. } => "teacher",
            Self::Data => "data",
        }
    }
}

#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub task: ToyTask,
    pub prompts: &'a [Prompt],
    pub vocab: &'a PromptVocabulary,
    pub decoder: &'a Decoder,
    pub embedder: &'a JointEmbedder,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Generated samples in data space.
    pub samples: Array2<f64>,
    /// gauss2d only: covered modes and per-mode counts.
    pub coverage: Option<(usize, Vec<usize>)>,
}

pub fn feature_space(task: ToyTask) -> FeatureSpace {
    match task {
        ToyTask::Gauss2d => FeatureSpace::Identity,
        ToyTask::Shapes16 => FeatureSpace::Encoder,
    }
}

fn features(ctx: &EvalContext<'_>, data: &Array2<f64>) -> Result<Array2<f64>> {
    match feature_space(ctx.task) {
        FeatureSpace::Identity => Ok(data.clone()),
        FeatureSpace::Encoder => ctx.embedder.embed_images(data.view()),
    }
}

pub fn evaluate(generator: Generator<'_>, ctx: EvalContext<'_>, cfg: &EvalConfig) -> Result<Evaluation> {
    let n = cfg.n_samples;
    if n <= cfg.k {
        return Err(invalid(format!("need more than k = {} samples", cfg.k)));
    }
    let prompts = draw_prompts(ctx.prompts, n, &mut rng::seeded(rng::derive(cfg.seed, 1)))?;
    let y = ctx.vocab.embed_all(&prompts)?;
    let real = ctx
        .task
        .sample_for_prompts(&prompts, &mut rng::seeded(rng::derive(cfg.seed, 2)))?;
    let latent_dim = ctx.task.latent_dim();
    let z = rng::normal_matrix(&mut rng::seeded(rng::derive(cfg.seed, 3)), n, latent_dim);
    let fake = match generator {
        Generator::OneStep(s) => {
            let plain = Student::from_params(s.arch.clone(), s.cond_dim, s.effective_params()?)?;
            ctx.decoder.apply(student_generate(&plain, z.view(), y.view())?.view())?
        }
        Generator::MultiStep {
            teacher,
            schedule,
            steps,
            gamma,
        } => {
            let lat = sample_multistep(teacher, schedule, z.view(), y.view(), gamma, steps)?;
            ctx.decoder.apply(lat.view())?
        }
        Generator::Data => ctx
            .task
            .sample_for_prompts(&prompts, &mut rng::seeded(rng::derive(cfg.seed, 4)))?,
    };
    let (fr, ff) = (features(&ctx, &real)?, features(&ctx, &fake)?);
    let fid = metrics::frechet_fid(fr.view(), ff.view())?;
    let (precision, recall) = metrics::precision_recall(fr.view(), ff.view(), cfg.k)?;
    let clip_score = metrics::clip_score(fake.view(), y.view(), ctx.embedder)?;
    let coverage = (ctx.task == ToyTask::Gauss2d)
        .then(|| metrics::mode_coverage(fake.view(), &gauss2d::mode_means(), COVERAGE_RADIUS));
    let report = MetricReport {
        fid,
        clip_score,
        precision,
        recall,
        n_real: real.nrows(),
        n_fake: fake.nrows(),
        feature_space: feature_space(ctx.task),
    };
    if !report.is_finite() {
        return Err(crate::Error::NonFinite {
            name: "evaluation metrics".into(),
        });
    }
    Ok(Evaluation {
        report,
        samples: fake,
        coverage,
    })
}

pub const REPORT_HEADER: &str = "lambda,fid,clip_score,precision,recall,n_real,n_fake,seed,role";

/// One report row; `lambda` is left empty for direct evaluations.
pub fn report_row(lambda: Option<f64>, r: &MetricReport, seed: u64, role: &str) -> String {
    let l = lambda.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{l},{},{},{},{},{},{},{seed},{role}",
        r.fid, r.clip_score, r.precision, r.recall, r.n_real, r.n_fake
    )
}
