//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Seeds and tolerances below are fixed; the desk-scale thresholds were
//! confirmed by oracle runs with exactly these setups.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{array, Array1, Array2, Axis};

use onestep_core::diffusion::{
    add_noise, guided_eps, make_schedule, Cond, Denoiser, DenoiserSpec, EpsModel, NoiseSchedule, ScheduleKind,
    TeacherTrainConfig, train_teacher,
};
use onestep_core::distill::clip::{clamp_rows, clamped_clip_latent};
use onestep_core::distill::{
    clip_weight_schedule, distill, AdapterSpec, train_one_step_baseline, BaselineConfig, ClipLossConfig, ClipModels, ClipSchedule,
    DistillContext, Student, TrainingScheme, VsdConfig,
};
use onestep_core::eval::{evaluate, EvalConfig, EvalContext, Evaluation, Generator};
use onestep_core::gradcheck::SCENARIOS;
use onestep_core::lora::{hidden_layer_names, init_lora, lora_forward, merged_copy};
use onestep_core::merging::{interp_sweep, lerp_weights, uniform_grid};
use onestep_core::metrics::{frechet_distance, frechet_fid, knn_radii_sq, precision_recall, GaussianMoments};
use onestep_core::netcore::{mlp_forward, Activation, Architecture};
use onestep_core::rng;
use onestep_core::toy::autoencoder::{distill_tiny_decoder, random_images, train_autoencoder, AutoencoderConfig, EncodedImages};
use onestep_core::toy::embedder::{similarity_gap, ClipTrainConfig};
use onestep_core::toy::gauss2d::{gen_gauss2d, nearest_mode};
use onestep_core::toy::{embed_prompt, parse_prompt_set, train_toy_clip, Coder, Prompt, PromptVocabulary, TaskData, ToyTask};

type Outcome = Result<String, String>;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const MACHINE_TOL: f64 = 1e-12;
const FID_ZERO_TOL: f64 = 1e-8;
const FID_CLOSED_TOL: f64 = 1e-6;
const COLLAPSE_RECALL_MAX: f64 = 0.2;
const MERGE_TOL: f64 = 1e-10;
const TEACHER_COVERAGE_MIN: usize = 7;
const RECALL_GAIN_MIN: f64 = 0.05;
const TRADEOFF_BUDGET: Duration = Duration::from_secs(15 * 60);
const MERGE_BUDGET: Duration = Duration::from_secs(10 * 60);
const SHAPES_CLIP_GAIN_MIN: f64 = 0.002;
const SHAPES_FID_TOL: f64 = 0.005;
const SHAPES_BUDGET: Duration = Duration::from_secs(30 * 60);

const EVAL_SEED: u64 = 77;
const TEACHER_SEED: u64 = 1;
const EMBEDDER_SEED: u64 = 2;
const BASELINE_SEED: u64 = 3;
const VSD_SEED: u64 = 5;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: onestep_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, d| m.max(d.abs()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (name, check) in SCENARIOS {
        for seed in GRAD_SEEDS {
            let err = ok(check(seed))?;
            ensure(err <= GRAD_TOL, || format!("{name} seed {seed}: relative error {err:.3e}"))?;
            worst = worst.max(err);
        }
    }
    let took = start.elapsed();
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{} paths x {} seeds, worst rel err {worst:.2e}, {:.1}s", SCENARIOS.len(), GRAD_SEEDS.len(), took.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let schedule = ok(make_schedule(1000, ScheduleKind::Cosine))?;
    let mut r = rng::seeded(21);
    let x0 = rng::normal_matrix(&mut r, 6, 2);
    let eps = rng::normal_matrix(&mut r, 6, 2);
    let at0 = ok(add_noise(x0.view(), eps.view(), &[0; 6], &schedule))?;
    let at_t = ok(add_noise(x0.view(), eps.view(), &[1000; 6], &schedule))?;
    ensure(at0 == x0, || "t=0 does not return x0".into())?;
    ensure(at_t == eps, || "t=T does not return eps".into())?;

    let spec = ok(DenoiserSpec::new(2, 8, 1000, &[32, 32], Activation::Silu))?;
    let model = Denoiser::init(spec, 22);
    let x_t = rng::normal_matrix(&mut r, 6, 2);
    let y = rng::normal_matrix(&mut r, 6, 8);
    let t = [0, 1, 250, 500, 999, 1000];
    let cond = ok(model.predict(x_t.view(), &t, Cond::Embedding(y.view())))?;
    let uncond = ok(model.predict(x_t.view(), &t, Cond::Null))?;
    let g0 = ok(guided_eps(&model, x_t.view(), &t, y.view(), 0.0))?;
    ensure(g0 == cond, || "gamma=0 differs from the conditional prediction".into())?;

    let mut worst = 0.0f64;
    for (g1, g2, w) in [(1.0, 7.5, 0.3), (-2.0, 4.5, 0.5), (0.5, 12.0, 0.9)] {
        let mix = ok(guided_eps(&model, x_t.view(), &t, y.view(), w * g1 + (1.0 - w) * g2))?;
        let sep = ok(guided_eps(&model, x_t.view(), &t, y.view(), g1))? * w
            + ok(guided_eps(&model, x_t.view(), &t, y.view(), g2))? * (1.0 - w);
        worst = worst.max(max_abs_diff(&mix, &sep));
        let explicit = &cond + &((&cond - &uncond) * g1);
        worst = worst.max(max_abs_diff(&ok(guided_eps(&model, x_t.view(), &t, y.view(), g1))?, &explicit));
    }
    ensure(worst <= MACHINE_TOL, || format!("affinity residual {worst:.3e}"))?;
    Ok(format!("boundaries exact, gamma=0 exact, affinity residual {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let g = |mu: Array1<f64>, s: Array2<f64>| ok(GaussianMoments::new(mu, s));
    let same = ok(frechet_distance(&g(array![0.3, -1.0], array![[2.0, 0.4], [0.4, 1.0]])?, &g(array![0.3, -1.0], array![[2.0, 0.4], [0.4, 1.0]])?))?;
    let shift = ok(frechet_distance(&g(array![0.0], array![[1.0]])?, &g(array![1.0], array![[1.0]])?))?;
    let scale = ok(frechet_distance(&g(array![0.0, 0.0], Array2::eye(2))?, &g(array![0.0, 0.0], Array2::eye(2) * 4.0)?))?;
    ensure(same.abs() <= FID_ZERO_TOL, || format!("identical gives {same:e}"))?;
    ensure((shift - 1.0).abs() <= FID_CLOSED_TOL, || format!("unit shift gives {shift}"))?;
    ensure((scale - 2.0).abs() <= FID_CLOSED_TOL, || format!("scale 2 gives {scale}"))?;

    let mut r = rng::seeded(31);
    let a = rng::normal_matrix(&mut r, 400, 2);
    let b = rng::normal_matrix(&mut r, 300, 2) * 1.5 + 0.7;
    let self_fid = ok(frechet_fid(a.view(), a.view()))?;
    ensure(self_fid.abs() <= FID_ZERO_TOL, || format!("identical sample sets give {self_fid:e}"))?;
    let ab = ok(frechet_fid(a.view(), b.view()))?;
    let ba = ok(frechet_fid(b.view(), a.view()))?;
    ensure((ab - ba).abs() <= FID_CLOSED_TOL * ab, || format!("asymmetric: {ab} vs {ba}"))?;
    let (s, c) = 0.9f64.sin_cos();
    let q = array![[c, -s], [s, c]];
    let rot = ok(frechet_fid(a.dot(&q).view(), b.dot(&q).view()))?;
    ensure((ab - rot).abs() <= FID_CLOSED_TOL * ab, || format!("rotation changes {ab} to {rot}"))?;
    Ok(format!("0 -> {same:.1e}, 1 -> {shift:.9}, 2 -> {scale:.9}, sym/rot ok, {:.2}s", start.elapsed().as_secs_f64()))
}

/// Membership count by full sort of pairwise distances.
fn brute_members(centers: &Array2<f64>, queries: &Array2<f64>, k: usize) -> usize {
    let d2 = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| (&a - &b).mapv(|v| v * v).sum();
    let radii: Vec<f64> = centers
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut d: Vec<f64> = centers.rows().into_iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| d2(c, o)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    queries
        .rows()
        .into_iter()
        .filter(|q| centers.rows().into_iter().zip(&radii).any(|(c, r)| d2(*q, c) <= *r))
        .count()
}

fn criterion_4() -> Outcome {
    let k = 3;
    let real = ok(gen_gauss2d("all8", 800, 41))?;
    let pr_same = ok(precision_recall(real.view(), real.view(), k))?;
    ensure(pr_same == (1.0, 1.0), || format!("identical sets give {pr_same:?}"))?;
    let far = &real + 1000.0;
    let pr_far = ok(precision_recall(real.view(), far.view(), k))?;
    ensure(pr_far == (0.0, 0.0), || format!("separated sets give {pr_far:?}"))?;

    let idx: Vec<usize> = real.rows().into_iter().enumerate().filter(|(_, p)| nearest_mode([p[0], p[1]]) == 0).map(|(i, _)| i).collect();
    let collapsed = real.select(Axis(0), &idx);
    let (p, rc) = ok(precision_recall(real.view(), collapsed.view(), k))?;
    ensure(p == 1.0, || format!("collapse precision {p}"))?;
    ensure(rc <= COLLAPSE_RECALL_MAX, || format!("collapse recall {rc}"))?;
    let in_real = brute_members(&real, &collapsed, k);
    let in_fake = brute_members(&collapsed, &real, k);
    ensure(in_real == collapsed.nrows(), || format!("oracle precision count {in_real}/{}", collapsed.nrows()))?;
    let got = (rc * real.nrows() as f64).round() as usize;
    ensure(got == in_fake, || format!("recall count {got} vs oracle {in_fake}"))?;
    let radii = ok(knn_radii_sq(collapsed.view(), k))?;
    ensure(radii.iter().all(|r| r.is_finite()), || "non-finite radius".into())?;
    Ok(format!("same (1,1), far (0,0), collapse p={p} r={rc:.4} ({in_fake}/{} oracle)", real.nrows()))
}

fn criterion_5() -> Outcome {
    let emb = ok(train_toy_clip(ToyTask::Gauss2d, 256, &ClipTrainConfig { steps: 20, ..Default::default() }, 51))?;
    let dec = Coder::Identity;
    let models = ClipModels { embedder: &emb, decoder: &dec };
    let mut r = rng::seeded(52);
    let x = rng::normal_matrix(&mut r, 16, 2) * 3.0;
    let vocab = ToyTask::Gauss2d.vocabulary();
    let prompts = ok(parse_prompt_set(ToyTask::Gauss2d, "all8,mode0,mode1,mode2,mode3,mode4,mode5,mode6,mode7"))?;
    let y = embed_rows(&vocab, &prompts, 16)?;
    let sims = ok(clamped_clip_latent(x.view(), y.view(), models, 1.0))?.similarities;
    let mut sorted = sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tau = sorted[8];
    let lat = ok(clamped_clip_latent(x.view(), y.view(), models, tau))?;
    let (rows, active) = clamp_rows(&sims, tau);
    let mut dead = 0;
    for i in 0..sims.len() {
        if sims[i] >= tau {
            dead += 1;
            ensure(!active[i] && rows[i] == 0.0, || format!("row {i} above tau has loss {}", rows[i]))?;
            ensure(lat.grad_latent.row(i).iter().all(|g| *g == 0.0), || format!("row {i} above tau has gradient"))?;
        }
    }
    let all_dead = ok(clamped_clip_latent(x.view(), y.view(), models, sorted[0]))?;
    ensure(all_dead.loss == 0.0 && all_dead.grad_latent.iter().all(|g| *g == 0.0), || "fully aligned batch not inert".into())?;

    for schedule in [ClipSchedule::LinearToZero, ClipSchedule::CosineToZero] {
        let cfg = ClipLossConfig { schedule, ..Default::default() };
        let w0 = ok(clip_weight_schedule(0, 1000, &cfg))?;
        let w1 = ok(clip_weight_schedule(1000, 1000, &cfg))?;
        ensure(w0 == 0.1 && w1 == 0.0, || format!("{} endpoints {w0}, {w1}", schedule.name()))?;
    }

    let arch = ok(Architecture::new(vec![10, 16, 16, 2], Activation::Silu))?;
    let a = arch.init_params(53);
    let b = arch.init_params(54);
    ensure(ok(lerp_weights(&a, &b, 1.0))? == a && ok(lerp_weights(&a, &b, 0.0))? == b, || "lerp endpoints".into())?;
    let mid = ok(lerp_weights(&a, &b, 0.5))?;
    for (name, t) in mid.iter() {
        let (ta, tb) = (ok(a.require(name))?, ok(b.require(name))?);
        let exact = t.data().iter().zip(ta.data().iter().zip(tb.data())).all(|(m, (x, y))| *m == (x + y) / 2.0);
        ensure(exact, || format!("lambda=0.5 is not the average on {name}"))?;
    }

    let input = rng::normal_matrix(&mut r, 12, 10);
    let mut adapters = ok(init_lora(&arch, &hidden_layer_names(&arch), 4, 8.0, 55))?;
    let plain = ok(mlp_forward(&a, &arch, input.view()))?;
    ensure(ok(lora_forward(&a, &adapters, &arch, input.view()))? == plain, || "fresh adapters change the output".into())?;
    for (_, t) in adapters.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng::normal(&mut r);
        }
    }
    let adapted = ok(lora_forward(&a, &adapters, &arch, input.view()))?;
    let merged = ok(mlp_forward(&ok(merged_copy(&a, &adapters))?, &arch, input.view()))?;
    let gap = max_abs_diff(&adapted, &merged);
    ensure(gap <= MERGE_TOL, || format!("merge mismatch {gap:e}"))?;
    ensure(max_abs_diff(&adapted, &plain) > 1e-3, || "perturbed adapters had no effect".into())?;
    Ok(format!("{dead}/16 clamped rows inert, weight endpoints 0.1/0, lerp exact, merge gap {gap:.1e}"))
}

fn embed_rows(vocab: &PromptVocabulary, prompts: &[Prompt], n: usize) -> Result<Array2<f64>, String> {
    let mut y = Array2::zeros((n, vocab.dim()));
    for i in 0..n {
        y.row_mut(i).assign(&ok(embed_prompt(vocab, &prompts[i % prompts.len()]))?);
    }
    Ok(y)
}

struct Gauss {
    task: ToyTask,
    vocab: PromptVocabulary,
    eval_prompts: Vec<Prompt>,
    schedule: NoiseSchedule,
    teacher: Denoiser,
    embedder: onestep_core::toy::JointEmbedder,
    decoder: Coder,
    arch: Architecture,
    setup: Duration,
}

impl Gauss {
    fn build() -> Result<Self, String> {
        let start = Instant::now();
        let task = ToyTask::Gauss2d;
        let vocab = task.vocabulary();
        let teacher_prompts = ok(parse_prompt_set(task, "full,all8"))?;
        let schedule = ok(make_schedule(1000, ScheduleKind::Cosine))?;
        let spec = ok(DenoiserSpec::new(2, 8, 1000, &[128, 128, 128], Activation::Silu))?;
        let encoder = Coder::Identity;
        let data = TaskData { task, prompts: &teacher_prompts, vocab: &vocab, encoder: &encoder };
        let cfg = TeacherTrainConfig { steps: 3000, ..Default::default() };
        let (teacher, _) = ok(train_teacher(&spec, &schedule, &data, &cfg, TEACHER_SEED))?;
        let embedder = ok(train_toy_clip(task, 4096, &ClipTrainConfig { steps: 300, ..Default::default() }, EMBEDDER_SEED))?;
        Ok(Self {
            task,
            eval_prompts: ok(parse_prompt_set(task, "full"))?,
            vocab,
            schedule,
            teacher,
            embedder,
            decoder: Coder::Identity,
            arch: ok(Student::architecture(2, 8, &[128, 128], Activation::Silu))?,
            setup: start.elapsed(),
        })
    }

    fn eval(&self, g: Generator<'_>) -> Result<Evaluation, String> {
        ok(evaluate(g, self.ctx(), &EvalConfig { n_samples: 5000, seed: EVAL_SEED, k: 3 }))
    }

    fn ctx(&self) -> EvalContext<'_> {
        EvalContext { task: self.task, prompts: &self.eval_prompts, vocab: &self.vocab, decoder: &self.decoder, embedder: &self.embedder }
    }

    fn dctx<'a>(&'a self, prompts: &'a [Prompt], clip: bool) -> DistillContext<'a> {
        DistillContext {
            teacher: &self.teacher,
            schedule: &self.schedule,
            vocab: &self.vocab,
            prompts,
            lora_teacher: AdapterSpec { rank: 4, gamma: 8.0 },
            clip_models: clip.then_some(ClipModels { embedder: &self.embedder, decoder: &self.decoder }),
            regularization: None,
        }
    }

    fn baseline(&self, prompts: &[Prompt]) -> Result<Student, String> {
        let cfg = BaselineConfig::default();
        Ok(ok(train_one_step_baseline(&self.teacher, &self.schedule, prompts, &self.vocab, self.arch.clone(), &cfg, BASELINE_SEED))?.0)
    }

    fn vsd(&self) -> VsdConfig {
        let mut v = VsdConfig::for_horizon(1000);
        v.seed = VSD_SEED;
        v
    }

    fn full_vsd(&self, prompts: &[Prompt], init: Student) -> Result<Student, String> {
        Ok(ok(distill(init, self.dctx(prompts, false), &TrainingScheme::Full, &self.vsd()))?.student)
    }
}

fn coverage(e: &Evaluation) -> usize {
    e.coverage.as_ref().map_or(0, |c| c.0)
}

struct Trained {
    baseline: Student,
    full: Student,
    full_eval: Evaluation,
}

fn criterion_6(g: &Gauss) -> Result<(String, Trained), String> {
    let start = Instant::now();
    let teacher = g.eval(Generator::MultiStep { teacher: &g.teacher, schedule: &g.schedule, steps: 25, gamma: 4.5 })?;
    let prompts = g.eval_prompts.clone();
    let baseline = g.baseline(&prompts)?;
    let base = g.eval(Generator::OneStep(&baseline))?;
    let full = g.full_vsd(&prompts, baseline.clone())?;
    let full_eval = g.eval(Generator::OneStep(&full))?;
    let took = start.elapsed() + g.setup;
    let (t, b, f) = (&teacher.report, &base.report, &full_eval.report);
    let line = format!(
        "teacher cov {}/8 r={:.3}; baseline r={:.3} fid={:.4}; vsd r={:.3} fid={:.4}; {:.0}s",
        coverage(&teacher), t.recall, b.recall, b.fid, f.recall, f.fid, took.as_secs_f64()
    );
    ensure(coverage(&teacher) >= TEACHER_COVERAGE_MIN, || format!("teacher coverage too low: {line}"))?;
    ensure(b.recall < t.recall, || format!("baseline recall not below teacher: {line}"))?;
    ensure(f.recall >= b.recall + RECALL_GAIN_MIN, || format!("recall gain too small: {line}"))?;
    ensure(f.fid < b.fid, || format!("fid did not improve: {line}"))?;
    ensure(took < TRADEOFF_BUDGET, || format!("over budget: {line}"))?;
    Ok((line, Trained { baseline, full, full_eval }))
}

fn criterion_7(g: &Gauss, tr: &Trained) -> Outcome {
    let start = Instant::now();
    let scheme = TrainingScheme::Efficient { adapters: AdapterSpec { rank: 8, gamma: 16.0 }, clip: ClipLossConfig::default() };
    let eff = ok(distill(tr.baseline.clone(), g.dctx(&g.eval_prompts, true), &scheme, &g.vsd()))?.student;
    let eff_eval = g.eval(Generator::OneStep(&eff))?;
    let effp = ok(eff.effective_params())?;
    let ecfg = EvalConfig { n_samples: 5000, seed: EVAL_SEED, k: 3 };
    let curve = ok(interp_sweep(&tr.full.params, &effp, &uniform_grid(20), |p| {
        let s = Student::from_params(tr.full.arch.clone(), 8, p.clone())?;
        Ok(evaluate(Generator::OneStep(&s), g.ctx(), &ecfg)?.report)
    }))?;
    let n = curve.rows.len();
    ensure(curve.lambdas[0] == 0.0 && curve.lambdas[n - 1] == 1.0, || "grid endpoints".into())?;
    ensure(curve.rows[n - 1] == tr.full_eval.report, || "lambda=1 row differs from direct eval of the full student".into())?;
    ensure(curve.rows[0] == eff_eval.report, || "lambda=0 row differs from direct eval of the efficient student".into())?;
    let ends = curve.rows[0].fid.min(curve.rows[n - 1].fid);
    let (best_i, best) = (1..n - 1).map(|i| (i, curve.rows[i].fid)).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let took = start.elapsed();
    let line = format!(
        "fid full {:.4}, efficient {:.4}, interior min {best:.4} at lambda {:.2}; endpoints exact; {:.0}s",
        curve.rows[n - 1].fid, curve.rows[0].fid, curve.lambdas[best_i], took.as_secs_f64()
    );
    ensure(best <= ends, || format!("no interior improvement: {line}"))?;
    ensure(took < MERGE_BUDGET, || format!("over budget: {line}"))?;
    Ok(line)
}

fn criterion_8(g: &Gauss, tr: &Trained) -> Outcome {
    let four = ok(parse_prompt_set(g.task, "mode0,mode1,mode2,mode3"))?;
    let init = g.baseline(&four)?;
    let s4 = g.full_vsd(&four, init)?;
    let c4 = coverage(&g.eval(Generator::OneStep(&s4))?);
    let c8 = coverage(&tr.full_eval);
    let line = format!("coverage all-8 prompts {c8}/8, 4-mode prompts {c4}/8");
    ensure(c8 >= c4, || line.clone())?;
    Ok(line)
}

const TINY_CONFIG: &str = "\
teacher_hidden = 32,32
teacher_steps = 50
clip_steps = 20
clip_pairs = 256
student_hidden = 16,16
baseline_pairs = 32
baseline_steps = 20
sampler_steps = 5
distill_steps = 10
batch_size = 32
eval_samples = 200
sweep_steps = 4
";

fn run_cli(config: &Path, out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_onestep"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
}

/// Drops the wall-clock column from training logs.
fn strip_wall(text: &str) -> String {
    text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let bytes = if name.ends_with("_log.csv") && String::from_utf8_lossy(&bytes).starts_with("step,vsd") {
            strip_wall(&String::from_utf8_lossy(&bytes)).into_bytes()
        } else if name.starts_with("config_") {
            String::from_utf8_lossy(&bytes).lines().filter(|l| !l.starts_with("out_dir")).collect::<Vec<_>>().join("\n").into_bytes()
        } else {
            bytes
        };
        out.insert(name, bytes);
    }
    Ok(out)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("tiny.conf");
    std::fs::write(&config, TINY_CONFIG).map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let ck = |n: &str| out.join(n).to_string_lossy().into_owned();
        let steps: Vec<Vec<String>> = vec![
            vec!["train-aux".into()],
            vec!["train-teacher".into()],
            vec!["baseline".into()],
            vec!["distill".into(), "--scheme".into(), "full".into()],
            vec!["distill".into(), "--scheme".into(), "efficient".into()],
            vec!["eval".into(), ck("teacher.ckpt")],
            vec!["eval".into(), ck("student_full.ckpt")],
            vec!["merge".into(), ck("student_full.ckpt"), ck("student_lora.ckpt"), "--lambda".into(), "0.5".into()],
            vec!["sweep".into(), ck("student_full.ckpt"), ck("student_lora.ckpt")],
            vec!["slerp-demo".into(), ck("student_full.ckpt")],
        ];
        for s in &steps {
            let args: Vec<&str> = s.iter().map(String::as_str).collect();
            run_cli(&config, &out, &args)?;
        }
        snaps.push(snapshot(&out)?);
    }
    let (a, b) = (&snaps[0], &snaps[1]);
    ensure(a.keys().eq(b.keys()), || format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys()))?;
    for (name, bytes) in a {
        ensure(b[name] == *bytes, || format!("{name} differs between reruns"))?;
    }
    let ckpts = a.keys().filter(|k| k.ends_with(".ckpt")).count();
    let csvs = a.keys().filter(|k| k.ends_with(".csv")).count();
    Ok(format!("{ckpts} checkpoints and {csvs} csv files byte-identical across reruns"))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let task = ToyTask::Shapes16;
    let vocab = task.vocabulary();
    let prompts = task.full_prompts();
    let ae = ok(train_autoencoder(task, &AutoencoderConfig { steps: 3000, ..Default::default() }, 1))?;
    let held_out = ok(random_images(task, 1000, &mut rng::seeded(9)))?;
    let mse = ok(ae.reconstruction_mse(held_out.view()))?;
    let tiny = ok(distill_tiny_decoder(
        &ae.decoder,
        &EncodedImages { task, encoder: &ae.encoder, jitter: 0.1 },
        &AutoencoderConfig { steps: 2000, ..Default::default() },
        2,
    ))?;
    let emb = ok(train_toy_clip(task, 8192, &ClipTrainConfig { steps: 1500, ..Default::default() }, 3))?;
    let (matched, mismatched) = ok(similarity_gap(&emb, task, 1000, 5))?;
    let schedule = ok(make_schedule(1000, ScheduleKind::Cosine))?;
    let spec = ok(DenoiserSpec::new(16, 8, 1000, &[256, 256, 256], Activation::Silu))?;
    let data = TaskData { task, prompts: &prompts, vocab: &vocab, encoder: &ae.encoder };
    let (teacher, _) = ok(train_teacher(&spec, &schedule, &data, &TeacherTrainConfig { steps: 4000, ..Default::default() }, 4))?;
    let ctx = EvalContext { task, prompts: &prompts, vocab: &vocab, decoder: &ae.decoder, embedder: &emb };
    let ecfg = EvalConfig { n_samples: 2000, seed: EVAL_SEED, k: 3 };
    let arch = ok(Student::architecture(16, 8, &[256, 256], Activation::Silu))?;
    let (base, _) = ok(train_one_step_baseline(&teacher, &schedule, &prompts, &vocab, arch, &BaselineConfig::default(), BASELINE_SEED))?;
    let dctx = DistillContext {
        teacher: &teacher,
        schedule: &schedule,
        vocab: &vocab,
        prompts: &prompts,
        lora_teacher: AdapterSpec { rank: 4, gamma: 8.0 },
        clip_models: Some(ClipModels { embedder: &emb, decoder: &tiny }),
        regularization: None,
    };
    let mut v = VsdConfig::for_horizon(1000);
    v.student_lr = 3e-4;
    v.seed = VSD_SEED;
    let mut reports = Vec::new();
    for w in [0.0, 1.0] {
        let scheme = TrainingScheme::Efficient {
            adapters: AdapterSpec { rank: 8, gamma: 16.0 },
            clip: ClipLossConfig { initial_weight: w, ..Default::default() },
        };
        let s = ok(distill(base.clone(), dctx, &scheme, &v))?.student;
        reports.push(ok(evaluate(Generator::OneStep(&s), ctx, &ecfg))?.report);
    }
    let (plain, clip) = (&reports[0], &reports[1]);
    let took = start.elapsed();
    let line = format!(
        "ae mse {mse:.4}, embedder gap {matched:.3}/{mismatched:.3}; clip {:.4} -> {:.4}, fid {:.4} -> {:.4}; {:.0}s",
        plain.clip_score, clip.clip_score, plain.fid, clip.fid, took.as_secs_f64()
    );
    ensure(clip.clip_score >= plain.clip_score + SHAPES_CLIP_GAIN_MIN, || format!("clip gain too small: {line}"))?;
    ensure(clip.fid <= plain.fid + SHAPES_FID_TOL, || format!("fid degraded: {line}"))?;
    ensure(took < SHAPES_BUDGET, || format!("over budget: {line}"))?;
    Ok(line)
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into())),
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, title: &str, r: Outcome| {
        match &r {
            Ok(msg) => println!("criterion {n:2} PASS  {title}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:2} FAIL  {title}: {msg}");
            }
        }
    };
    report(1, "gradient paths vs finite differences", guarded(criterion_1));
    report(2, "forward-process and guidance exactness", guarded(criterion_2));
    report(3, "FID closed forms and invariances", guarded(criterion_3));
    report(4, "precision/recall oracle", guarded(criterion_4));
    report(5, "clamp, weight schedule, merge exactness", guarded(criterion_5));

    match guarded(Gauss::build) {
        Ok(g) => {
            let trained = match guarded(|| criterion_6(&g)) {
                Ok((line, t)) => {
                    report(6, "quality-diversity trade-off", Ok(line));
                    Some(t)
                }
                Err(e) => {
                    report(6, "quality-diversity trade-off", Err(e));
                    None
                }
            };
            match &trained {
                Some(t) => {
                    report(7, "merging benefit", guarded(|| criterion_7(&g, t)));
                    report(8, "prompt-set scaling", guarded(|| criterion_8(&g, t)));
                }
                None => {
                    report(7, "merging benefit", Err("needs the criterion 6 students".into()));
                    report(8, "prompt-set scaling", Err("needs the criterion 6 students".into()));
                }
            }
        }
        Err(e) => {
            for (n, title) in [(6, "quality-diversity trade-off"), (7, "merging benefit"), (8, "prompt-set scaling")] {
                report(n, title, Err(format!("gauss2d setup failed: {e}")));
            }
        }
    }

    report(9, "CLI reproducibility", guarded(criterion_9));
    report(10, "shapes16 clamped alignment loss", guarded(criterion_10));

    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
