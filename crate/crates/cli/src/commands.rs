//! Subcommand implementations. Every command is a pure function of the
//! resolved config, the seed and its input checkpoints.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use onestep_core::checkpoint::{self as ckpt, Checkpoint, Role};
use onestep_core::config::ExperimentConfig;
use onestep_core::diffusion::{make_schedule, train_teacher, Denoiser, DenoiserSpec, NoiseSchedule};
use onestep_core::distill::{
    self, student_generate, teacher_pairs, train_one_step_baseline, ClipModels, DistillContext, Regularization, Student,
    TrainingScheme,
};
use onestep_core::eval::{self, EvalContext, Generator, REPORT_HEADER};
use onestep_core::merging::{interp_sweep, lerp_weights, slerp, uniform_grid};
use onestep_core::rng;
use onestep_core::toy::autoencoder::{random_images, EncodedImages};
use onestep_core::toy::embedder::similarity_gap;
use onestep_core::toy::{
    distill_tiny_decoder, parse_prompt_set, shapes16, train_autoencoder, train_toy_clip, Autoencoder, Coder, JointEmbedder,
    Prompt, PromptVocabulary, TaskData, ToyTask, COND_DIM,
};
use onestep_core::Error;

use crate::{Init, Scheme};

pub const CONFIG_ERROR: u8 = 2;
pub const MISSING_ARTIFACT: u8 = 3;
pub const NUMERIC_FAILURE: u8 = 4;

const TAG_TEACHER: u64 = 101;
const TAG_AUTOENCODER: u64 = 102;
const TAG_TINY: u64 = 103;
const TAG_EMBEDDER: u64 = 104;
const TAG_BASELINE: u64 = 105;
const TAG_DISTILL: u64 = 106;
const TAG_REG: u64 = 107;
const TAG_SCRATCH: u64 = 108;
const TAG_SLERP: u64 = 109;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    msg: String,
}

impl CliError {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }

    fn config(msg: impl Into<String>) -> Self {
        Self::new(CONFIG_ERROR, msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } => CONFIG_ERROR,
            Error::NonFinite { .. } | Error::Diverged { .. } => NUMERIC_FAILURE,
            Error::Format(_) => MISSING_ARTIFACT,
            _ => 1,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(1, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    vocab: PromptVocabulary,
}

impl Run {
    pub fn open(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match config {
            Some(p) if !p.is_file() => {
                return Err(CliError::config(format!("config file not found: {}", p.display())));
            }
            Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
            None => ExperimentConfig::defaults(ToyTask::Gauss2d),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out_dir = o.display().to_string();
        }
        for (key, set) in [
            ("teacher_prompts", &cfg.teacher_prompts),
            ("prompts", &cfg.prompts),
            ("eval_prompts", &cfg.eval_prompts),
        ] {
            parse_prompt_set(cfg.task, set).map_err(|e| CliError::config(format!("`{key}`: {e}")))?;
        }
        let out = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&out)?;
        Ok(Self {
            vocab: cfg.task.vocabulary(),
            cfg,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self, tag: u64) -> u64 {
        rng::derive(self.cfg.seed, tag)
    }

    fn prompts(&self, set: &str) -> Vec<Prompt> {
        parse_prompt_set(self.cfg.task, set).expect("validated on open")
    }

    fn echo(&self, command: &str) -> CliResult {
        fs::write(self.path(&format!("config_{command}.txt")), self.cfg.echo())?;
        Ok(())
    }

    fn write(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text)?;
        Ok(p)
    }

    fn save(&self, name: &str, c: &Checkpoint) -> CliResult<PathBuf> {
        let p = self.path(name);
        c.save(&p)?;
        println!("wrote {}", p.display());
        Ok(p)
    }

    fn require(&self, path: &Path, what: &str, hint: &str) -> CliResult {
        if path.is_file() {
            Ok(())
        } else {
            Err(CliError::new(
                MISSING_ARTIFACT,
                format!("missing {what}: {} (run `onestep {hint}` first)", path.display()),
            ))
        }
    }

    fn load(&self, path: &Path, what: &str, hint: &str) -> CliResult<Checkpoint> {
        self.require(path, what, hint)?;
        let c = Checkpoint::load(path).map_err(|e| CliError::new(MISSING_ARTIFACT, format!("{}: {e}", path.display())))?;
        if c.task != self.cfg.task.name() {
            return Err(CliError::config(format!(
                "{} was trained for task `{}`, config selects `{}`",
                path.display(),
                c.task,
                self.cfg.task.name()
            )));
        }
        Ok(c)
    }

    fn teacher(&self) -> CliResult<(Denoiser, NoiseSchedule)> {
        let c = self.load(&self.path("teacher.ckpt"), "teacher checkpoint", "train-teacher")?;
        Ok(ckpt::load_teacher(&c)?)
    }

    fn autoencoder(&self) -> CliResult<Autoencoder> {
        let c = self.load(&self.path("autoencoder.ckpt"), "autoencoder checkpoint", "train-aux")?;
        Ok(ckpt::load_autoencoder(&c)?)
    }

    fn embedder(&self) -> CliResult<JointEmbedder> {
        let c = self.load(&self.path("embedder.ckpt"), "embedder checkpoint", "train-aux")?;
        Ok(ckpt::load_embedder(&c)?)
    }

    fn tiny_decoder(&self) -> CliResult<Coder> {
        let c = self.load(&self.path("tiny_decoder.ckpt"), "tiny decoder checkpoint", "train-aux")?;
        Ok(ckpt::load_tiny_decoder(&c)?)
    }

    fn student(&self, path: &Path) -> CliResult<(Student, Role)> {
        let c = self.load(path, "student checkpoint", "distill")?;
        if !c.role.is_student() {
            return Err(CliError::config(format!(
                "{} holds a `{}`, not a student",
                path.display(),
                c.role.name()
            )));
        }
        Ok((ckpt::load_student(&c)?, c.role))
    }

    fn student_arch(&self) -> CliResult<onestep_core::netcore::Architecture> {
        Ok(Student::architecture(
            self.cfg.task.latent_dim(),
            COND_DIM,
            &self.cfg.student_hidden,
            self.cfg.activation,
        )?)
    }

    pub fn train_teacher(&self) -> CliResult {
        self.echo("train-teacher")?;
        let task = self.cfg.task;
        let encoder = match task {
            ToyTask::Gauss2d => Coder::Identity,
            ToyTask::Shapes16 => self.autoencoder()?.encoder,
        };
        let prompts = self.prompts(&self.cfg.teacher_prompts);
        let spec = DenoiserSpec::new(
            task.latent_dim(),
            COND_DIM,
            self.cfg.t_max,
            &self.cfg.teacher_hidden,
            self.cfg.activation,
        )?;
        let schedule = make_schedule(self.cfg.t_max, self.cfg.schedule)?;
        let data = TaskData {
            task,
            prompts: &prompts,
            vocab: &self.vocab,
            encoder: &encoder,
        };
        let (teacher, losses) = train_teacher(&spec, &schedule, &data, &self.cfg.teacher_train(), self.seed(TAG_TEACHER))?;
        self.save("teacher.ckpt", &ckpt::teacher_checkpoint(task, &teacher, &schedule))?;
        let mut log = String::from("step,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(log, "{i},{l}");
        }
        self.write("teacher_log.csv", &log)?;
        let tail = &losses[losses.len().saturating_sub(100)..];
        println!("final loss (mean of last {}) {}", tail.len(), tail.iter().sum::<f64>() / tail.len() as f64);
        Ok(())
    }

    pub fn train_aux(&self) -> CliResult {
        self.echo("train-aux")?;
        let task = self.cfg.task;
        let ae = train_autoencoder(task, &self.cfg.autoencoder(), self.seed(TAG_AUTOENCODER))?;
        let x = random_images(task, 1000, &mut rng::seeded(self.seed(TAG_AUTOENCODER) ^ 1))?;
        println!("autoencoder reconstruction mse {}", ae.reconstruction_mse(x.view())?);
        self.save("autoencoder.ckpt", &ckpt::autoencoder_checkpoint(task, &ae)?)?;
        let sampler = EncodedImages {
            task,
            encoder: &ae.encoder,
            jitter: self.cfg.tiny_jitter,
        };
        let tiny = distill_tiny_decoder(&ae.decoder, &sampler, &self.cfg.tiny_decoder(), self.seed(TAG_TINY))?;
        println!(
            "tiny decoder parameters {} (full decoder {})",
            tiny.num_params(),
            ae.decoder.num_params()
        );
        self.save("tiny_decoder.ckpt", &ckpt::tiny_decoder_checkpoint(task, &tiny)?)?;
        let emb = train_toy_clip(task, self.cfg.clip_pairs, &self.cfg.clip_train(), self.seed(TAG_EMBEDDER))?;
        let (matched, mismatched) = similarity_gap(&emb, task, 1000, self.seed(TAG_EMBEDDER) ^ 1)?;
        println!("embedder similarity matched {matched} mismatched {mismatched}");
        self.save("embedder.ckpt", &ckpt::embedder_checkpoint(task, &emb)?)?;
        Ok(())
    }

    fn train_baseline(&self, teacher: &Denoiser, schedule: &NoiseSchedule) -> CliResult<(Student, f64)> {
        let prompts = self.prompts(&self.cfg.prompts);
        Ok(train_one_step_baseline(
            teacher,
            schedule,
            &prompts,
            &self.vocab,
            self.student_arch()?,
            &self.cfg.baseline(),
            self.seed(TAG_BASELINE),
        )?)
    }

    pub fn baseline(&self) -> CliResult {
        self.echo("baseline")?;
        let (teacher, schedule) = self.teacher()?;
        let (student, mse) = self.train_baseline(&teacher, &schedule)?;
        println!("baseline regression mse {mse}");
        self.save("baseline.ckpt", &ckpt::student_checkpoint(self.cfg.task, &student, None)?)?;
        Ok(())
    }

    pub fn distill(&self, scheme: Scheme, init: Init, regularize: bool) -> CliResult {
        self.echo("distill")?;
        let task = self.cfg.task;
        if regularize && (self.cfg.reg_pairs == 0 || self.cfg.reg_weight <= 0.0) {
            return Err(CliError::config("--regularize needs reg_pairs >= 1 and reg_weight > 0"));
        }
        let efficient = matches!(scheme, Scheme::Efficient);
        if efficient {
            for (name, what) in [("embedder.ckpt", "embedder checkpoint"), ("tiny_decoder.ckpt", "tiny decoder checkpoint")] {
                self.require(&self.path(name), what, "train-aux")?;
            }
        }
        let (teacher, schedule) = self.teacher()?;
        let aux = if efficient {
            Some((self.embedder()?, self.tiny_decoder()?))
        } else {
            None
        };
        let start = match init {
            Init::TeacherRegression => self.train_baseline(&teacher, &schedule)?.0,
            Init::Scratch => Student::init(self.student_arch()?, COND_DIM, self.seed(TAG_SCRATCH))?,
        };
        let prompts = self.prompts(&self.cfg.prompts);
        let reg = if regularize {
            let mut r = rng::seeded(self.seed(TAG_REG));
            let pairs = teacher_pairs(
                &teacher,
                &schedule,
                &prompts,
                &self.vocab,
                self.cfg.reg_pairs,
                self.cfg.guidance_gamma,
                self.cfg.sampler_steps,
                &mut r,
            )?;
            Some(Regularization {
                pairs,
                weight: self.cfg.reg_weight,
                batch_size: self.cfg.reg_batch,
            })
        } else {
            None
        };
        let ctx = DistillContext {
            teacher: &teacher,
            schedule: &schedule,
            vocab: &self.vocab,
            prompts: &prompts,
            lora_teacher: self.cfg.lora_teacher(),
            clip_models: aux.as_ref().map(|(embedder, decoder)| ClipModels { embedder, decoder }),
            regularization: reg.as_ref(),
        };
        let training = if efficient {
            TrainingScheme::Efficient {
                adapters: self.cfg.student_adapters(),
                clip: self.cfg.clip(),
            }
        } else {
            TrainingScheme::Full
        };
        let mut vsd = self.cfg.vsd();
        vsd.seed = self.seed(TAG_DISTILL);
        let out = distill::distill(start, ctx, &training, &vsd)?;
        self.write(&format!("distill_{}_log.csv", training.name()), &distill::log_csv(&out.log))?;
        self.save(
            if efficient { "student_lora.ckpt" } else { "student_full.ckpt" },
            &ckpt::student_checkpoint(task, &out.student, None)?,
        )?;
        if efficient {
            self.save("merged.ckpt", &ckpt::merged_checkpoint(task, &out.student)?)?;
        }
        Ok(())
    }

    fn eval_parts(&self) -> CliResult<(Autoencoder, JointEmbedder, Vec<Prompt>)> {
        Ok((self.autoencoder()?, self.embedder()?, self.prompts(&self.cfg.eval_prompts)))
    }

    pub fn eval(&self, path: &Path) -> CliResult {
        self.echo("eval")?;
        let c = self.load(path, "checkpoint", "distill")?;
        let (ae, embedder, prompts) = self.eval_parts()?;
        let ctx = EvalContext {
            task: self.cfg.task,
            prompts: &prompts,
            vocab: &self.vocab,
            decoder: &ae.decoder,
            embedder: &embedder,
        };
        let ecfg = self.cfg.eval();
        let e = match c.role {
            Role::Teacher => {
                let (teacher, schedule) = ckpt::load_teacher(&c)?;
                let g = Generator::MultiStep {
                    teacher: &teacher,
                    schedule: &schedule,
                    steps: self.cfg.sampler_steps,
                    gamma: self.cfg.guidance_gamma,
                };
                eval::evaluate(g, ctx, &ecfg)?
            }
            r if r.is_student() => eval::evaluate(Generator::OneStep(&ckpt::load_student(&c)?), ctx, &ecfg)?,
            r => return Err(CliError::config(format!("cannot evaluate a `{}` checkpoint", r.name()))),
        };
        let row = eval::report_row(None, &e.report, ecfg.seed, c.role.name());
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        let p = self.write(&format!("eval_{stem}.csv"), &format!("{REPORT_HEADER}\n{row}\n"))?;
        println!("{REPORT_HEADER}\n{row}");
        if let Some((covered, hist)) = e.coverage {
            println!("mode coverage {covered}/8 {hist:?}");
        }
        println!("wrote {}", p.display());
        Ok(())
    }

    fn merge_operands(&self, a: &Path, b: &Path) -> CliResult<(Student, Student)> {
        let (sa, _) = self.student(a)?;
        let (sb, _) = self.student(b)?;
        let plain = |s: &Student| -> CliResult<Student> {
            Ok(Student::from_params(s.arch.clone(), s.cond_dim, s.effective_params()?)?)
        };
        let (pa, pb) = (plain(&sa)?, plain(&sb)?);
        if pa.arch != pb.arch || pa.cond_dim != pb.cond_dim {
            return Err(CliError::config(format!(
                "students are not merge-compatible: {} vs {}",
                pa.arch.descriptor(),
                pb.arch.descriptor()
            )));
        }
        Ok((pa, pb))
    }

    pub fn merge(&self, a: &Path, b: &Path, lambda: Option<f64>, output: Option<&Path>) -> CliResult {
        self.echo("merge")?;
        let lambda = lambda.unwrap_or(self.cfg.merge_lambda);
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CliError::config(format!("lambda must be in [0, 1], got {lambda}")));
        }
        let (pa, pb) = self.merge_operands(a, b)?;
        let merged = Student::from_params(pa.arch.clone(), pa.cond_dim, lerp_weights(&pa.params, &pb.params, lambda)?)?;
        let c = ckpt::student_checkpoint(self.cfg.task, &merged, Some(Role::Merged))?;
        match output {
            Some(p) => {
                c.save(p)?;
                println!("wrote {}", p.display());
            }
            None => {
                self.save(&format!("merge_lambda_{lambda}.ckpt"), &c)?;
            }
        }
        Ok(())
    }

    pub fn sweep(&self, a: &Path, b: &Path) -> CliResult {
        self.echo("sweep")?;
        let (pa, pb) = self.merge_operands(a, b)?;
        let (ae, embedder, prompts) = self.eval_parts()?;
        let ctx = EvalContext {
            task: self.cfg.task,
            prompts: &prompts,
            vocab: &self.vocab,
            decoder: &ae.decoder,
            embedder: &embedder,
        };
        let ecfg = self.cfg.eval();
        let curve = interp_sweep(&pa.params, &pb.params, &uniform_grid(self.cfg.sweep_steps), |p| {
            let s = Student::from_params(pa.arch.clone(), pa.cond_dim, p.clone())?;
            Ok(eval::evaluate(Generator::OneStep(&s), ctx, &ecfg)?.report)
        })?;
        let mut csv = format!("{REPORT_HEADER}\n");
        for (l, r) in curve.lambdas.iter().zip(&curve.rows) {
            let _ = writeln!(csv, "{}", eval::report_row(Some(*l), r, ecfg.seed, Role::Merged.name()));
        }
        print!("{csv}");
        if let Some((i, fid)) = curve.best_fid() {
            println!("lowest fid {fid} at lambda {}", curve.lambdas[i]);
        }
        let p = self.write("sweep.csv", &csv)?;
        println!("wrote {}", p.display());
        Ok(())
    }

    pub fn slerp_demo(&self, path: &Path, from: Option<&str>, to: Option<&str>) -> CliResult {
        self.echo("slerp-demo")?;
        let (student, _) = self.student(path)?;
        let ae = self.autoencoder()?;
        let task = self.cfg.task;
        let set = self.prompts(&self.cfg.eval_prompts);
        let pick = |s: Option<&str>, default: &Prompt| -> CliResult<Prompt> {
            match s {
                Some(text) => {
                    let p = Prompt::parse(text);
                    task.check_prompt(&p).map_err(|e| CliError::config(e.to_string()))?;
                    Ok(p)
                }
                None => Ok(default.clone()),
            }
        };
        let p0 = pick(from, set.first().expect("non-empty prompt set"))?;
        let p1 = pick(to, set.last().expect("non-empty prompt set"))?;
        let y0 = self.vocab.embed_all(std::slice::from_ref(&p0))?;
        let y1 = self.vocab.embed_all(std::slice::from_ref(&p1))?;
        let z = rng::normal_matrix(&mut rng::seeded(self.seed(TAG_SLERP)), 2, task.latent_dim());
        let n = self.cfg.slerp_steps;
        let (mut zs, mut ys_noise, mut ys_prompt) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..=n {
            let s = i as f64 / n as f64;
            zs.push(slerp(z.row(0), z.row(1), s)?);
            ys_noise.push(y0.row(0).to_owned());
            ys_prompt.push(slerp(y0.row(0), y1.row(0), s)?);
        }
        let stack = |rows: &[ndarray::Array1<f64>]| -> Array2<f64> {
            ndarray::stack(Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>()).expect("equal widths")
        };
        let z_noise = stack(&zs);
        let z_prompt = Array2::from_shape_fn((n + 1, task.latent_dim()), |(_, j)| z[[0, j]]);
        let plain = Student::from_params(student.arch.clone(), student.cond_dim, student.effective_params()?)?;
        let noise_path = ae.decoder.apply(student_generate(&plain, z_noise.view(), stack(&ys_noise).view())?.view())?;
        let prompt_path = ae.decoder.apply(student_generate(&plain, z_prompt.view(), stack(&ys_prompt).view())?.view())?;

        let d = task.data_dim();
        let mut csv = String::from("path,s");
        for j in 0..d {
            let _ = write!(csv, ",v{j}");
        }
        csv.push('\n');
        for (name, x) in [("noise", &noise_path), ("prompt", &prompt_path)] {
            for (i, row) in x.rows().into_iter().enumerate() {
                let _ = write!(csv, "{name},{}", i as f64 / n as f64);
                for v in row {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
                if task == ToyTask::Shapes16 {
                    let mut f = fs::File::create(self.path(&format!("slerp_{name}_{i:02}.pgm")))?;
                    shapes16::write_pgm(&mut f, row.as_slice().expect("contiguous row"))?;
                }
            }
        }
        let p = self.write("slerp.csv", &csv)?;
        println!("noise path under `{p0}`, prompt path `{p0}` -> `{p1}`; wrote {}", p.display());
        Ok(())
    }
}
