//! Contrastive image/prompt embedder with unit-norm outputs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{draw_prompts, Prompt, PromptVocabulary, ToyTask, COND_DIM};
use crate::error::{invalid, Error, Result};
use crate::netcore::{Activation, Architecture, Mlp, Trace};
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng;

pub const EMBED_DIM: usize = 32;
pub const TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedder {
    pub image: Mlp,
    pub text: Mlp,
}

/// Row-wise `h / |h|` together with the norms.
fn normalize_rows(h: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = h.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let mut u = h.clone();
    for (mut row, n) in u.rows_mut().into_iter().zip(norms.iter()) {
        row /= *n;
    }
    (u, norms)
}

/// Reverse pass of row normalization: `(g − u·<u, g>) / |h|`.
fn normalize_vjp(u: &Array2<f64>, norms: &Array1<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = g.clone();
    for ((mut o, ur), n) in out.rows_mut().into_iter().zip(u.rows()).zip(norms.iter()) {
        let dot = ur.dot(&o);
        o.scaled_add(-dot, &ur);
        o /= *n;
    }
    out
}

/// Image-side forward state kept for the reverse pass.
pub struct ImageTrace {
    trace: Trace,
    pub unit: Array2<f64>,
    norms: Array1<f64>,
}

impl JointEmbedder {
    pub fn new(image: Mlp, text: Mlp) -> Result<Self> {
        if image.arch.output_dim() != text.arch.output_dim() {
            return Err(invalid("image and text encoders disagree on embedding width"));
        }
        Ok(Self { image, text })
    }

    pub fn embed_images(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(&self.image.forward(x)?).0)
    }

    pub fn embed_texts(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(&self.text.forward(y)?).0)
    }

    pub fn image_trace(&self, x: ArrayView2<'_, f64>) -> Result<ImageTrace> {
        let trace = self.image.trace(x)?;
        let (unit, norms) = normalize_rows(&trace.output);
        Ok(ImageTrace { trace, unit, norms })
    }

    /// Gradient with respect to the image input of `<cotangent, unit embedding>`.
    pub fn image_input_vjp(&self, t: &ImageTrace, cotangent: &Array2<f64>) -> Result<Array2<f64>> {
        let gh = normalize_vjp(&t.unit, &t.norms, cotangent);
        Ok(self.image.backward(&t.trace, gh.view())?.input)
    }

    /// Row-wise cosine similarity of images and condition embeddings.
    pub fn similarities(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.nrows() != y.nrows() {
            return Err(invalid("image and prompt batches differ in length"));
        }
        let u = self.embed_images(x)?;
        let v = self.embed_texts(y)?;
        Ok((&u * &v).sum_axis(Axis(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
}

impl Default for ClipTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            lr: 2e-3,
            hidden: 64,
        }
    }
}

/// Symmetric batch-softmax contrastive loss and its gradients with respect to
/// the unit image and text embeddings. Rows sharing a prompt id count as
/// positives for each other.
pub fn contrastive_loss(u: &Array2<f64>, v: &Array2<f64>, ids: &[usize]) -> (f64, Array2<f64>, Array2<f64>) {
    let b = u.nrows();
    let logits = u.dot(&v.t()) / TEMPERATURE;
    let mut target = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            if ids[i] == ids[j] {
                target[[i, j]] = 1.0;
            }
        }
    }
    let counts = target.sum_axis(Axis(1));
    for (mut row, c) in target.rows_mut().into_iter().zip(counts.iter()) {
        row /= *c;
    }
    let softmax = |m: &Array2<f64>| {
        let mut p = m.clone();
        for mut row in p.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            row.mapv_inplace(|x| (x - mx).exp());
            let s = row.sum();
            row /= s;
        }
        p
    };
    let p_rows = softmax(&logits);
    let p_cols = softmax(&logits.t().to_owned());
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..b {
            if target[[i, j]] > 0.0 {
                loss -= target[[i, j]] * (p_rows[[i, j]].ln() + p_cols[[j, i]].ln());
            }
        }
    }
    loss /= 2.0 * b as f64;
    // target is symmetric, so the column term's target transposes onto itself
    let d_logits = ((&p_rows - &target) + (&p_cols - &target).t()) / (2.0 * b as f64);
    let du = d_logits.dot(v) / TEMPERATURE;
    let dv = d_logits.t().dot(u) / TEMPERATURE;
    (loss, du, dv)
}

/// Trains the image and text encoders on a fixed pool of `pair_count` pairs.
pub fn train_toy_clip(task: ToyTask, pair_count: usize, cfg: &ClipTrainConfig, seed: u64) -> Result<JointEmbedder> {
    if pair_count < 2 || cfg.steps == 0 || cfg.batch_size < 2 {
        return Err(invalid("contrastive training needs >= 2 pairs, >= 1 step, batch >= 2"));
    }
    let vocab = PromptVocabulary::for_task(task);
    let all = task.full_prompts();
    let mut r = rng::seeded(rng::derive(seed, 1));
    let prompt_ids: Vec<usize> = (0..pair_count).map(|_| r.random_range(0..all.len())).collect();
    let prompts: Vec<Prompt> = prompt_ids.iter().map(|&i| all[i].clone()).collect();
    let images = task.sample_for_prompts(&prompts, &mut r)?;
    let conds = vocab.embed_all(&prompts)?;

    let mut image = Mlp::init(
        Architecture::new(vec![task.data_dim(), cfg.hidden, EMBED_DIM], Activation::Silu)?,
        rng::derive(seed, 2),
    );
    let mut text = Mlp::init(
        Architecture::new(vec![COND_DIM, EMBED_DIM, EMBED_DIM], Activation::Silu)?,
        rng::derive(seed, 3),
    );
    let opt = AdamWConfig::with_lr(cfg.lr);
    let mut image_opt = AdamWState::new(&image.params, opt);
    let mut text_opt = AdamWState::new(&text.params, opt);
    let b = cfg.batch_size.min(pair_count);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..b).map(|_| r.random_range(0..pair_count)).collect();
        let x = images.select(Axis(0), &idx);
        let y = conds.select(Axis(0), &idx);
        let ids: Vec<usize> = idx.iter().map(|&i| prompt_ids[i]).collect();
        let it = image.trace(x.view())?;
        let tt = text.trace(y.view())?;
        let (u, un) = normalize_rows(&it.output);
        let (v, vn) = normalize_rows(&tt.output);
        let (loss, du, dv) = contrastive_loss(&u, &v, &ids);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "contrastive loss".into(),
            });
        }
        let gi = image.backward(&it, normalize_vjp(&u, &un, &du).view())?;
        let gt = text.backward(&tt, normalize_vjp(&v, &vn, &dv).view())?;
        image_opt.step(&mut image.params, &gi.params)?;
        text_opt.step(&mut text.params, &gt.params)?;
    }
    JointEmbedder::new(image, text)
}

/// Mean matched and mean mismatched similarity on fresh pairs.
pub fn similarity_gap(embedder: &JointEmbedder, task: ToyTask, n: usize, seed: u64) -> Result<(f64, f64)> {
    let vocab = PromptVocabulary::for_task(task);
    let all = task.full_prompts();
    let mut r = rng::seeded(seed);
    let prompts = draw_prompts(&all, n, &mut r)?;
    let images = task.sample_for_prompts(&prompts, &mut r)?;
    let others: Vec<Prompt> = prompts
        .iter()
        .map(|p| loop {
            let q = &all[r.random_range(0..all.len())];
            if q != p {
                break q.clone();
            }
        })
        .collect();
    let matched = embedder.similarities(images.view(), vocab.embed_all(&prompts)?.view())?;
    let mismatched = embedder.similarities(images.view(), vocab.embed_all(&others)?.view())?;
    Ok((matched.mean().unwrap_or(0.0), mismatched.mean().unwrap_or(0.0)))
}
