//! One-step generator `x̂0 = f_θ(z, y)`.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::lora::{self, init_lora, LoraAdapterSet};
use crate::netcore::{self, Activation, Architecture, Gradients, Trace};
use crate::tensor::ParamSet;

/// Student network over `[z | y]`, optionally carrying trainable adapters.
///
/// With adapters attached the base weights are frozen and only the adapters
/// receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub arch: Architecture,
    pub params: ParamSet,
    pub cond_dim: usize,
    pub adapters: Option<LoraAdapterSet>,
}

impl Student {
    pub fn architecture(latent_dim: usize, cond_dim: usize, hidden: &[usize], act: Activation) -> Result<Architecture> {
        let mut dims = vec![latent_dim + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        Architecture::new(dims, act)
    }

    pub fn init(arch: Architecture, cond_dim: usize, seed: u64) -> Result<Self> {
        let params = arch.init_params(seed);
        Self::from_params(arch, cond_dim, params)
    }

    pub fn from_params(arch: Architecture, cond_dim: usize, params: ParamSet) -> Result<Self> {
        if arch.input_dim() != arch.output_dim() + cond_dim {
            return Err(invalid(format!(
                "student architecture {} does not map latent+{cond_dim} to latent",
                arch.descriptor()
            )));
        }
        arch.check_params(&params)?;
        Ok(Self {
            arch,
            params,
            cond_dim,
            adapters: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.output_dim()
    }

    /// Attaches fresh adapters (zero delta) to every hidden layer.
    pub fn attach_adapters(&mut self, rank: usize, gamma: f64, seed: u64) -> Result<()> {
        let names = lora::hidden_layer_names(&self.arch);
        self.adapters = Some(init_lora(&self.arch, &names, rank, gamma, seed)?);
        Ok(())
    }

    pub fn has_adapters(&self) -> bool {
        self.adapters.is_some()
    }

    /// Parameters that receive gradients: the adapters if present, else θ.
    pub fn trainable(&self) -> &ParamSet {
        match &self.adapters {
            Some(a) => a.params(),
            None => &self.params,
        }
    }

    pub fn trainable_mut(&mut self) -> &mut ParamSet {
        match &mut self.adapters {
            Some(a) => a.params_mut(),
            None => &mut self.params,
        }
    }

    /// Plain weights computing the same function (adapters folded in).
    pub fn effective_params(&self) -> Result<ParamSet> {
        match &self.adapters {
            Some(a) => lora::merged_copy(&self.params, a),
            None => Ok(self.params.clone()),
        }
    }

    fn input(&self, z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (n, l) = (z.nrows(), self.latent_dim());
        if z.ncols() != l {
            return Err(Error::Shape {
                name: "z".into(),
                expected: vec![n, l],
                actual: z.shape().to_vec(),
            });
        }
        if y.dim() != (n, self.cond_dim) {
            return Err(Error::Shape {
                name: "condition".into(),
                expected: vec![n, self.cond_dim],
                actual: y.shape().to_vec(),
            });
        }
        let mut inp = Array2::zeros((n, l + self.cond_dim));
        inp.slice_mut(s![.., ..l]).assign(&z);
        inp.slice_mut(s![.., l..]).assign(&y);
        Ok(inp)
    }

    pub fn trace(&self, z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Trace> {
        let inp = self.input(z, y)?;
        match &self.adapters {
            Some(a) => lora::lora_trace(&self.params, a, &self.arch, inp.view()),
            None => netcore::forward_trace(&self.params, &self.arch, &[], inp.view()),
        }
    }

    /// Gradients of `<cotangent, f_θ>` with respect to the trainable set.
    pub fn backward(&self, trace: &Trace, cotangent: ArrayView2<'_, f64>) -> Result<ParamSet> {
        Ok(match &self.adapters {
            Some(a) => {
                let g = self.backward_full(trace, cotangent)?;
                a.grads_from(&g)?
            }
            None => self.backward_full(trace, cotangent)?.params,
        })
    }

    fn backward_full(&self, trace: &Trace, cotangent: ArrayView2<'_, f64>) -> Result<Gradients> {
        match &self.adapters {
            Some(a) => netcore::backward(&self.params, &self.arch, &a.low_ranks(&self.arch)?, trace, cotangent),
            None => netcore::backward(&self.params, &self.arch, &[], trace, cotangent),
        }
    }
}

/// A single network evaluation: `x̂0 = f_θ(z, y)`.
pub fn student_generate(student: &Student, z: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(student.trace(z, y)?.output)
}
