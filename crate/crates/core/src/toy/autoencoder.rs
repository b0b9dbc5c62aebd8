//! Latent autoencoder for shapes16 and its distilled tiny decoder.
//!
//! gauss2d has no autoencoder: its latent space is the data space and both
//! maps are the identity.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{draw_prompts, ToyTask};
use crate::error::{invalid, Error, Result};
use crate::netcore::{Activation, Architecture, Mlp};
use crate::optim::{AdamWConfig, AdamWState};
use crate::rng::{self, LabRng};
use crate::tensor::Tensor;

/// A map between latent and data space.
#[derive(Debug, Clone, PartialEq)]
pub enum Coder {
    Identity,
    Net(Mlp),
}

pub type Decoder = Coder;
pub type Encoder = Coder;

impl Coder {
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Coder::Identity => Ok(x.to_owned()),
            Coder::Net(m) => m.forward(x),
        }
    }

    /// Gradient with respect to the input of `<cotangent, apply(x)>`.
    pub fn input_vjp(&self, x: ArrayView2<'_, f64>, cotangent: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Coder::Identity => {
                if x.dim() != cotangent.dim() {
                    return Err(Error::Shape {
                        name: "cotangent".into(),
                        expected: x.shape().to_vec(),
                        actual: cotangent.shape().to_vec(),
                    });
                }
                Ok(cotangent.to_owned())
            }
            Coder::Net(m) => Ok(m.vjp(x, cotangent)?.0),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Coder::Identity => 0,
            Coder::Net(m) => m.num_params(),
        }
    }

    pub fn net(&self) -> Option<&Mlp> {
        match self {
            Coder::Identity => None,
            Coder::Net(m) => Some(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Autoencoder {
    pub fn identity() -> Self {
        Self {
            encoder: Coder::Identity,
            decoder: Coder::Identity,
        }
    }

    /// Mean squared per-element error of `decode(encode(x))`.
    pub fn reconstruction_mse(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let z = self.encoder.apply(x)?;
        let xr = self.decoder.apply(z.view())?;
        Ok(mse(&xr, &x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderPair {
    pub full: Decoder,
    pub tiny: Decoder,
}

pub(crate) fn mse(a: &Array2<f64>, b: &ArrayView2<'_, f64>) -> f64 {
    let d = a - b;
    d.mapv(|v| v * v).mean().unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub tiny_hidden: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 128,
            lr: 2e-3,
            hidden: 128,
            tiny_hidden: 24,
        }
    }
}

/// Renders `n` images from uniformly drawn full prompts.
pub fn random_images(task: ToyTask, n: usize, rng: &mut LabRng) -> Result<Array2<f64>> {
    let prompts = draw_prompts(&task.full_prompts(), n, rng)?;
    task.sample_for_prompts(&prompts, rng)
}

/// MSE-trained encoder/decoder; latents are standardized afterwards.
pub fn train_autoencoder(task: ToyTask, cfg: &AutoencoderConfig, seed: u64) -> Result<Autoencoder> {
    if task == ToyTask::Gauss2d {
        return Ok(Autoencoder::identity());
    }
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(invalid("autoencoder training needs steps >= 1 and batch_size >= 1"));
    }
    let (d, l) = (task.data_dim(), task.latent_dim());
    let mut enc = Mlp::init(Architecture::new(vec![d, cfg.hidden, l], Activation::Silu)?, rng::derive(seed, 1));
    let mut dec = Mlp::init(Architecture::new(vec![l, cfg.hidden, d], Activation::Silu)?, rng::derive(seed, 2));
    let opt_cfg = AdamWConfig::with_lr(cfg.lr);
    let mut enc_opt = AdamWState::new(&enc.params, opt_cfg);
    let mut dec_opt = AdamWState::new(&dec.params, opt_cfg);
    let mut r = rng::seeded(rng::derive(seed, 3));
    for step in 0..cfg.steps {
        let x = random_images(task, cfg.batch_size, &mut r)?;
        let et = enc.trace(x.view())?;
        let dt = dec.trace(et.output.view())?;
        let diff = &dt.output - &x;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "autoencoder reconstruction loss".into(),
            });
        }
        let cot = diff * (2.0 / (cfg.batch_size * d) as f64);
        let dg = dec.backward(&dt, cot.view())?;
        let eg = enc.backward(&et, dg.input.view())?;
        dec_opt.step(&mut dec.params, &dg.params)?;
        enc_opt.step(&mut enc.params, &eg.params)?;
    }
    standardize_latents(&mut enc, &mut dec, task, &mut r)?;
    Ok(Autoencoder {
        encoder: Coder::Net(enc),
        decoder: Coder::Net(dec),
    })
}

/// Folds `z' = (z − μ) / s` into the encoder's last and decoder's first layer.
///
/// The composed autoencoder computes the same function; only the latent
/// coordinates change, to zero mean and unit average variance.
fn standardize_latents(enc: &mut Mlp, dec: &mut Mlp, task: ToyTask, r: &mut LabRng) -> Result<()> {
    let x = random_images(task, 2048, r)?;
    let z = enc.forward(x.view())?;
    let mu: Array1<f64> = z.mean_axis(Axis(0)).expect("non-empty");
    let s = z.var_axis(Axis(0), 1.0).mean().unwrap_or(1.0).sqrt().max(1e-8);

    let last = enc.arch.num_layers() - 1;
    let (fi, fo) = enc.arch.layer_shape(last);
    let w = enc.params.matrix(&Architecture::weight_name(last), fo, fi)?.to_owned() / s;
    let b = (&enc.params.vector(&Architecture::bias_name(last), fo)?.to_owned() - &mu) / s;
    enc.params.replace(&Architecture::weight_name(last), Tensor::from_matrix(w))?;
    enc.params.replace(&Architecture::bias_name(last), Tensor::from_vector(b))?;

    let (fi, fo) = dec.arch.layer_shape(0);
    let w = dec.params.matrix(&Architecture::weight_name(0), fo, fi)?.to_owned();
    let b = &dec.params.vector(&Architecture::bias_name(0), fo)?.to_owned() + &w.dot(&mu);
    dec.params.replace(&Architecture::weight_name(0), Tensor::from_matrix(w * s))?;
    dec.params.replace(&Architecture::bias_name(0), Tensor::from_vector(b))?;
    Ok(())
}

/// Source of latents to distill a decoder on.
pub trait LatentSampler {
    fn sample_latents(&self, n: usize, rng: &mut LabRng) -> Result<Array2<f64>>;
}

/// Encoded random images plus isotropic Gaussian jitter.
pub struct EncodedImages<'a> {
    pub task: ToyTask,
    pub encoder: &'a Encoder,
    pub jitter: f64,
}

impl LatentSampler for EncodedImages<'_> {
    fn sample_latents(&self, n: usize, rng: &mut LabRng) -> Result<Array2<f64>> {
        let x = random_images(self.task, n, rng)?;
        let mut z = self.encoder.apply(x.view())?;
        if self.jitter > 0.0 {
            let noise = rng::normal_matrix(rng, n, z.ncols());
            z.scaled_add(self.jitter, &noise);
        }
        Ok(z)
    }
}

/// Trains a smaller decoder to reproduce `full` on sampled latents.
pub fn distill_tiny_decoder(
    full: &Decoder,
    sampler: &dyn LatentSampler,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<Decoder> {
    let Coder::Net(full_net) = full else {
        return Ok(Coder::Identity);
    };
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(invalid("tiny decoder training needs steps >= 1 and batch_size >= 1"));
    }
    let (l, d) = (full_net.arch.input_dim(), full_net.arch.output_dim());
    let arch = Architecture::new(vec![l, cfg.tiny_hidden, d], Activation::Silu)?;
    if arch.num_params() >= full_net.num_params() {
        return Err(invalid(format!(
            "tiny decoder {} is not smaller than {}",
            arch.descriptor(),
            full_net.arch.descriptor()
        )));
    }
    let mut tiny = Mlp::init(arch, rng::derive(seed, 1));
    let mut opt = AdamWState::new(&tiny.params, AdamWConfig::with_lr(cfg.lr));
    let mut r = rng::seeded(rng::derive(seed, 2));
    for step in 0..cfg.steps {
        let z = sampler.sample_latents(cfg.batch_size, &mut r)?;
        let target = full_net.forward(z.view())?;
        let t = tiny.trace(z.view())?;
        let diff = &t.output - &target;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "tiny decoder agreement loss".into(),
            });
        }
        let cot = diff * (2.0 / (cfg.batch_size * d) as f64);
        let g = tiny.backward(&t, cot.view())?;
        opt.step(&mut tiny.params, &g.params)?;
    }
    Ok(Coder::Net(tiny))
}
