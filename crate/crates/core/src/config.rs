//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known and may
//! appear once; anything else is rejected with its line number before any
//! computation starts. Defaults depend on `task`, which may appear anywhere
//! in the file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::diffusion::{ScheduleKind, TeacherTrainConfig};
use crate::distill::{AdapterSpec, BaselineConfig, ClipLossConfig, ClipSchedule, VsdConfig, WeightFn};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::netcore::Activation;
use crate::optim::AdamWConfig;
use crate::toy::autoencoder::AutoencoderConfig;
use crate::toy::embedder::ClipTrainConfig;
use crate::toy::ToyTask;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: ToyTask,
    pub seed: u64,
    pub out_dir: String,

    pub schedule: ScheduleKind,
    pub t_max: usize,
    pub activation: Activation,
    pub teacher_hidden: Vec<usize>,
    pub teacher_steps: usize,
    pub teacher_batch: usize,
    pub teacher_lr: f64,
    pub cond_dropout: f64,
    pub teacher_prompts: String,

    pub ae_steps: usize,
    pub ae_hidden: usize,
    pub ae_lr: f64,
    pub tiny_hidden: usize,
    pub tiny_steps: usize,
    pub tiny_jitter: f64,
    pub clip_pairs: usize,
    pub clip_steps: usize,
    pub clip_hidden: usize,
    pub clip_lr: f64,

    pub student_hidden: Vec<usize>,
    pub baseline_pairs: usize,
    pub baseline_steps: usize,
    pub baseline_batch: usize,
    pub baseline_lr: f64,
    pub sampler_steps: usize,
    pub guidance_gamma: f64,

    pub prompts: String,
    pub distill_steps: usize,
    pub batch_size: usize,
    pub student_lr: f64,
    pub lora_lr: f64,
    pub weight_fn: WeightFn,
    pub include_alpha: bool,
    pub vsd_t_min: usize,
    pub vsd_t_max: usize,
    pub lora_cond_dropout: f64,
    pub lora_teacher_rank: usize,
    pub lora_teacher_gamma: f64,
    pub student_lora_rank: usize,
    pub student_lora_gamma: f64,
    pub clip_tau: f64,
    pub clip_weight: f64,
    pub clip_schedule: ClipSchedule,
    pub reg_pairs: usize,
    pub reg_weight: f64,
    pub reg_batch: usize,

    pub eval_samples: usize,
    pub eval_k: usize,
    pub eval_prompts: String,
    pub sweep_steps: usize,
    pub merge_lambda: f64,
    pub slerp_steps: usize,
}

impl ExperimentConfig {
    pub fn defaults(task: ToyTask) -> Self {
        let t_max = 1000;
        let vsd = VsdConfig::for_horizon(t_max);
        let base = BaselineConfig::default();
        let clip = ClipLossConfig::default();
        let teacher = TeacherTrainConfig::default();
        let ae = AutoencoderConfig::default();
        let ct = ClipTrainConfig::default();
        let shapes = task == ToyTask::Shapes16;
        Self {
            task,
            seed: 0,
            out_dir: format!("runs/{}", task.name()),
            schedule: ScheduleKind::Cosine,
            t_max,
            activation: Activation::Silu,
            teacher_hidden: if shapes { vec![256; 3] } else { vec![128; 3] },
            teacher_steps: if shapes { 4000 } else { teacher.steps },
            teacher_batch: teacher.batch_size,
            teacher_lr: teacher.optimizer.lr,
            cond_dropout: teacher.cond_dropout,
            teacher_prompts: if shapes { "full" } else { "full,all8" }.into(),
            ae_steps: 3000,
            ae_hidden: ae.hidden,
            ae_lr: ae.lr,
            tiny_hidden: ae.tiny_hidden,
            tiny_steps: 2000,
            tiny_jitter: 0.1,
            clip_pairs: if shapes { 8192 } else { 4096 },
            clip_steps: if shapes { 1500 } else { 300 },
            clip_hidden: ct.hidden,
            clip_lr: ct.lr,
            student_hidden: if shapes { vec![256; 2] } else { vec![128; 2] },
            baseline_pairs: base.pairs,
            baseline_steps: base.steps,
            baseline_batch: base.batch_size,
            baseline_lr: base.lr,
            sampler_steps: base.teacher_steps,
            guidance_gamma: vsd.guidance_gamma,
            prompts: "full".into(),
            distill_steps: vsd.steps,
            batch_size: vsd.batch_size,
            student_lr: vsd.student_lr,
            lora_lr: vsd.lora_lr,
            weight_fn: vsd.weight_fn,
            include_alpha: vsd.include_alpha,
            vsd_t_min: vsd.t_min,
            vsd_t_max: vsd.t_max,
            lora_cond_dropout: vsd.lora_cond_dropout,
            lora_teacher_rank: 4,
            lora_teacher_gamma: 8.0,
            student_lora_rank: 8,
            student_lora_gamma: 16.0,
            clip_tau: clip.tau,
            clip_weight: clip.initial_weight,
            clip_schedule: clip.schedule,
            reg_pairs: 0,
            reg_weight: 0.0,
            reg_batch: 64,
            eval_samples: EvalConfig::default().n_samples,
            eval_k: EvalConfig::default().k,
            eval_prompts: "full".into(),
            sweep_steps: 20,
            merge_lambda: 0.5,
            slerp_steps: 8,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got `{body}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config { line, msg: "empty key".into() });
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, key, _)| *key == k) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key `{k}` (first set on line {first})"),
                });
            }
            entries.push((line, k, v));
        }
        let task = match entries.iter().find(|(_, k, _)| *k == "task") {
            Some(&(line, _, v)) => ToyTask::parse(v).map_err(|e| Error::Config { line, msg: e.to_string() })?,
            None => ToyTask::Gauss2d,
        };
        let mut cfg = Self::defaults(task);
        let mut t_bounds_set = false;
        for &(line, k, v) in &entries {
            cfg.set(k, v).map_err(|msg| Error::Config { line, msg })?;
            t_bounds_set |= k == "vsd_t_min" || k == "vsd_t_max";
        }
        if !t_bounds_set {
            let v = VsdConfig::for_horizon(cfg.t_max);
            (cfg.vsd_t_min, cfg.vsd_t_max) = (v.t_min, v.t_max);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
            v.split(',').map(|p| num(key, p.trim())).collect()
        }
        fn boolean(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("`{key}`: expected true or false, got `{v}`")),
            }
        }
        let lib = |r: Result<()>| r.map_err(|e| format!("`{key}`: {e}"));
        match key {
            "task" => {}
            "seed" => self.seed = num(key, v)?,
            "out_dir" => self.out_dir = v.to_string(),
            "schedule" => lib(ScheduleKind::parse(v).map(|s| self.schedule = s))?,
            "t_max" => self.t_max = num(key, v)?,
            "activation" => lib(Activation::parse(v).map(|a| self.activation = a))?,
            "teacher_hidden" => self.teacher_hidden = list(key, v)?,
            "teacher_steps" => self.teacher_steps = num(key, v)?,
            "teacher_batch" => self.teacher_batch = num(key, v)?,
            "teacher_lr" => self.teacher_lr = num(key, v)?,
            "cond_dropout" => self.cond_dropout = num(key, v)?,
            "teacher_prompts" => self.teacher_prompts = v.to_string(),
            "ae_steps" => self.ae_steps = num(key, v)?,
            "ae_hidden" => self.ae_hidden = num(key, v)?,
            "ae_lr" => self.ae_lr = num(key, v)?,
            "tiny_hidden" => self.tiny_hidden = num(key, v)?,
            "tiny_steps" => self.tiny_steps = num(key, v)?,
            "tiny_jitter" => self.tiny_jitter = num(key, v)?,
            "clip_pairs" => self.clip_pairs = num(key, v)?,
            "clip_steps" => self.clip_steps = num(key, v)?,
            "clip_hidden" => self.clip_hidden = num(key, v)?,
            "clip_lr" => self.clip_lr = num(key, v)?,
            "student_hidden" => self.student_hidden = list(key, v)?,
            "baseline_pairs" => self.baseline_pairs = num(key, v)?,
            "baseline_steps" => self.baseline_steps = num(key, v)?,
            "baseline_batch" => self.baseline_batch = num(key, v)?,
            "baseline_lr" => self.baseline_lr = num(key, v)?,
            "sampler_steps" => self.sampler_steps = num(key, v)?,
            "guidance_gamma" => self.guidance_gamma = num(key, v)?,
            "prompts" => self.prompts = v.to_string(),
            "distill_steps" => self.distill_steps = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "student_lr" => self.student_lr = num(key, v)?,
            "lora_lr" => self.lora_lr = num(key, v)?,
            "weight_fn" => lib(WeightFn::parse(v).map(|w| self.weight_fn = w))?,
            "include_alpha" => self.include_alpha = boolean(key, v)?,
            "vsd_t_min" => self.vsd_t_min = num(key, v)?,
            "vsd_t_max" => self.vsd_t_max = num(key, v)?,
            "lora_cond_dropout" => self.lora_cond_dropout = num(key, v)?,
            "lora_teacher_rank" => self.lora_teacher_rank = num(key, v)?,
            "lora_teacher_gamma" => self.lora_teacher_gamma = num(key, v)?,
            "student_lora_rank" => self.student_lora_rank = num(key, v)?,
            "student_lora_gamma" => self.student_lora_gamma = num(key, v)?,
            "clip_tau" => self.clip_tau = num(key, v)?,
            "clip_weight" => self.clip_weight = num(key, v)?,
            "clip_schedule" => lib(ClipSchedule::parse(v).map(|s| self.clip_schedule = s))?,
            "reg_pairs" => self.reg_pairs = num(key, v)?,
            "reg_weight" => self.reg_weight = num(key, v)?,
            "reg_batch" => self.reg_batch = num(key, v)?,
            "eval_samples" => self.eval_samples = num(key, v)?,
            "eval_k" => self.eval_k = num(key, v)?,
            "eval_prompts" => self.eval_prompts = v.to_string(),
            "sweep_steps" => self.sweep_steps = num(key, v)?,
            "merge_lambda" => self.merge_lambda = num(key, v)?,
            "slerp_steps" => self.slerp_steps = num(key, v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Range checks that do not need any artifact; line 0 marks whole-file errors.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        let positive = [
            ("t_max", self.t_max),
            ("teacher_steps", self.teacher_steps),
            ("teacher_batch", self.teacher_batch),
            ("baseline_pairs", self.baseline_pairs),
            ("baseline_steps", self.baseline_steps),
            ("baseline_batch", self.baseline_batch),
            ("sampler_steps", self.sampler_steps),
            ("batch_size", self.batch_size),
            ("lora_teacher_rank", self.lora_teacher_rank),
            ("student_lora_rank", self.student_lora_rank),
            ("sweep_steps", self.sweep_steps),
            ("slerp_steps", self.slerp_steps),
        ];
        for (k, v) in positive {
            if v == 0 {
                return bad(format!("`{k}` must be >= 1"));
            }
        }
        for (k, v) in [("cond_dropout", self.cond_dropout), ("lora_cond_dropout", self.lora_cond_dropout), ("merge_lambda", self.merge_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("`{k}` must be in [0, 1], got {v}"));
            }
        }
        if self.teacher_hidden.is_empty() || self.student_hidden.is_empty() {
            return bad("hidden layer lists must not be empty".into());
        }
        if self.eval_samples <= self.eval_k {
            return bad("`eval_samples` must exceed `eval_k`".into());
        }
        self.vsd().validate(self.t_max).map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        self.clip().validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        Ok(())
    }

    pub fn vsd(&self) -> VsdConfig {
        VsdConfig {
            guidance_gamma: self.guidance_gamma,
            weight_fn: self.weight_fn,
            include_alpha: self.include_alpha,
            t_min: self.vsd_t_min,
            t_max: self.vsd_t_max,
            student_lr: self.student_lr,
            lora_lr: self.lora_lr,
            steps: self.distill_steps,
            batch_size: self.batch_size,
            lora_cond_dropout: self.lora_cond_dropout,
            seed: self.seed,
        }
    }

    pub fn clip(&self) -> ClipLossConfig {
        ClipLossConfig {
            tau: self.clip_tau,
            initial_weight: self.clip_weight,
            schedule: self.clip_schedule,
        }
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            pairs: self.baseline_pairs,
            steps: self.baseline_steps,
            batch_size: self.baseline_batch,
            lr: self.baseline_lr,
            teacher_steps: self.sampler_steps,
            guidance_gamma: self.guidance_gamma,
        }
    }

    pub fn teacher_train(&self) -> TeacherTrainConfig {
        TeacherTrainConfig {
            steps: self.teacher_steps,
            batch_size: self.teacher_batch,
            optimizer: AdamWConfig::with_lr(self.teacher_lr),
            cond_dropout: self.cond_dropout,
        }
    }

    pub fn autoencoder(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            steps: self.ae_steps,
            lr: self.ae_lr,
            hidden: self.ae_hidden,
            tiny_hidden: self.tiny_hidden,
            ..AutoencoderConfig::default()
        }
    }

    pub fn tiny_decoder(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            steps: self.tiny_steps,
            ..self.autoencoder()
        }
    }

    pub fn clip_train(&self) -> ClipTrainConfig {
        ClipTrainConfig {
            steps: self.clip_steps,
            hidden: self.clip_hidden,
            lr: self.clip_lr,
            ..ClipTrainConfig::default()
        }
    }

    pub fn lora_teacher(&self) -> AdapterSpec {
        AdapterSpec {
            rank: self.lora_teacher_rank,
            gamma: self.lora_teacher_gamma,
        }
    }

    pub fn student_adapters(&self) -> AdapterSpec {
        AdapterSpec {
            rank: self.student_lora_rank,
            gamma: self.student_lora_gamma,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            n_samples: self.eval_samples,
            seed: self.seed,
            k: self.eval_k,
        }
    }

    /// Every key with its resolved value, in a form `parse` reads back.
    pub fn echo(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let rows: Vec<(&str, String)> = vec![
            ("task", self.task.name().into()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.clone()),
            ("schedule", self.schedule.name().into()),
            ("t_max", self.t_max.to_string()),
            ("activation", self.activation.name().into()),
            ("teacher_hidden", join(&self.teacher_hidden)),
            ("teacher_steps", self.teacher_steps.to_string()),
            ("teacher_batch", self.teacher_batch.to_string()),
            ("teacher_lr", self.teacher_lr.to_string()),
            ("cond_dropout", self.cond_dropout.to_string()),
            ("teacher_prompts", self.teacher_prompts.clone()),
            ("ae_steps", self.ae_steps.to_string()),
            ("ae_hidden", self.ae_hidden.to_string()),
            ("ae_lr", self.ae_lr.to_string()),
            ("tiny_hidden", self.tiny_hidden.to_string()),
            ("tiny_steps", self.tiny_steps.to_string()),
            ("tiny_jitter", self.tiny_jitter.to_string()),
            ("clip_pairs", self.clip_pairs.to_string()),
            ("clip_steps", self.clip_steps.to_string()),
            ("clip_hidden", self.clip_hidden.to_string()),
            ("clip_lr", self.clip_lr.to_string()),
            ("student_hidden", join(&self.student_hidden)),
            ("baseline_pairs", self.baseline_pairs.to_string()),
            ("baseline_steps", self.baseline_steps.to_string()),
            ("baseline_batch", self.baseline_batch.to_string()),
            ("baseline_lr", self.baseline_lr.to_string()),
            ("sampler_steps", self.sampler_steps.to_string()),
            ("guidance_gamma", self.guidance_gamma.to_string()),
            ("prompts", self.prompts.clone()),
            ("distill_steps", self.distill_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("student_lr", self.student_lr.to_string()),
            ("lora_lr", self.lora_lr.to_string()),
            ("weight_fn", self.weight_fn.name().into()),
            ("include_alpha", self.include_alpha.to_string()),
            ("vsd_t_min", self.vsd_t_min.to_string()),
            ("vsd_t_max", self.vsd_t_max.to_string()),
            ("lora_cond_dropout", self.lora_cond_dropout.to_string()),
            ("lora_teacher_rank", self.lora_teacher_rank.to_string()),
            ("lora_teacher_gamma", self.lora_teacher_gamma.to_string()),
            ("student_lora_rank", self.student_lora_rank.to_string()),
            ("student_lora_gamma", self.student_lora_gamma.to_string()),
            ("clip_tau", self.clip_tau.to_string()),
            ("clip_weight", self.clip_weight.to_string()),
            ("clip_schedule", self.clip_schedule.name().into()),
            ("reg_pairs", self.reg_pairs.to_string()),
            ("reg_weight", self.reg_weight.to_string()),
            ("reg_batch", self.reg_batch.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_k", self.eval_k.to_string()),
            ("eval_prompts", self.eval_prompts.clone()),
            ("sweep_steps", self.sweep_steps.to_string()),
            ("merge_lambda", self.merge_lambda.to_string()),
            ("slerp_steps", self.slerp_steps.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
