//! Low-rank adapters over the linear layers of a [`netcore`](crate::netcore) network.
//!
//! An adapted layer computes `(W + (gamma / r) · B·A)·x + b`, where `A` is
//! `(r, fan_in)` and `B` is `(fan_out, r)`. `B` starts at zero so the adapted
//! network equals its base at initialization.

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::netcore::{self, glorot, Architecture, Gradients, LowRank, Trace};
use crate::rng;
use crate::tensor::{ParamSet, Tensor};

/// Name prefix used when adapters are stored next to base weights.
pub const ADAPTER_PREFIX: &str = "lora.";

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapterSet {
    rank: usize,
    gamma: f64,
    layers: Vec<usize>,
    params: ParamSet,
    merged: bool,
}

pub fn down_name(layer: usize) -> String {
    format!("layers.{layer}.lora_down")
}

pub fn up_name(layer: usize) -> String {
    format!("layers.{layer}.lora_up")
}

/// Every linear layer except the output projection, as `layers.{i}`.
pub fn hidden_layer_names(arch: &Architecture) -> Vec<String> {
    (0..arch.num_layers().saturating_sub(1))
        .map(|i| format!("layers.{i}"))
        .collect()
}

fn parse_layer_name(arch: &Architecture, name: &str) -> Result<usize> {
    name.strip_prefix("layers.")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&i| i < arch.num_layers())
        .ok_or_else(|| invalid(format!("unknown layer `{name}`")))
}

/// Creates adapters with random `A` and zero `B` on the named layers.
pub fn init_lora(
    arch: &Architecture,
    layer_names: &[String],
    rank: usize,
    gamma: f64,
    seed: u64,
) -> Result<LoraAdapterSet> {
    if rank == 0 {
        return Err(invalid("LoRA rank must be positive"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("LoRA scaling must be positive"));
    }
    let mut layers = layer_names
        .iter()
        .map(|n| parse_layer_name(arch, n))
        .collect::<Result<Vec<_>>>()?;
    layers.sort_unstable();
    layers.dedup();
    let mut rng = rng::seeded(seed);
    let mut params = ParamSet::new();
    for &i in &layers {
        let (fi, fo) = arch.layer_shape(i);
        if rank > fi.min(fo) {
            return Err(invalid(format!(
                "rank {rank} exceeds min(fan_in, fan_out) = {} on layers.{i}",
                fi.min(fo)
            )));
        }
        params.insert(down_name(i), Tensor::from_matrix(glorot(&mut rng, rank, fi)))?;
        params.insert(up_name(i), Tensor::zeros(vec![fo, rank]))?;
    }
    Ok(LoraAdapterSet {
        rank,
        gamma,
        layers,
        params,
        merged: false,
    })
}

impl LoraAdapterSet {
    /// Rebuilds an adapter set from stored tensors.
    pub fn from_params(arch: &Architecture, rank: usize, gamma: f64, params: ParamSet) -> Result<Self> {
        let mut layers = Vec::new();
        for name in params.names() {
            if let Some(layer) = name.strip_suffix(".lora_down") {
                layers.push(parse_layer_name(arch, layer)?);
            }
        }
        layers.sort_unstable();
        let set = Self {
            rank,
            gamma,
            layers,
            params,
            merged: false,
        };
        set.check(arch)?;
        if set.params.len() != 2 * set.layers.len() {
            return Err(invalid("adapter tensors do not pair up"));
        }
        Ok(set)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn effective_scale(&self) -> f64 {
        self.gamma / self.rank as f64
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_merged(&self) -> bool {
        self.merged
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        for &i in &self.layers {
            let (fi, fo) = arch.layer_shape(i);
            self.params.matrix(&down_name(i), self.rank, fi)?;
            self.params.matrix(&up_name(i), fo, self.rank)?;
        }
        Ok(())
    }

    /// Per-layer low-rank views in the form netcore consumes.
    pub fn low_ranks(&self, arch: &Architecture) -> Result<Vec<Option<LowRank<'_>>>> {
        self.check(arch)?;
        let scale = self.effective_scale();
        let mut out = vec![None; arch.num_layers()];
        for &i in &self.layers {
            let (fi, fo) = arch.layer_shape(i);
            out[i] = Some(LowRank {
                down: self.params.matrix(&down_name(i), self.rank, fi)?,
                up: self.params.matrix(&up_name(i), fo, self.rank)?,
                scale,
            });
        }
        Ok(out)
    }

    /// Collects adapter gradients from a netcore backward pass, in `params` order.
    pub fn grads_from(&self, grads: &Gradients) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for &i in &self.layers {
            let (d_down, d_up) = grads
                .adapters
                .get(i)
                .and_then(|g| g.as_ref())
                .ok_or_else(|| invalid(format!("no adapter gradient for layers.{i}")))?;
            out.insert(down_name(i), Tensor::from_matrix(d_down.clone()))?;
            out.insert(up_name(i), Tensor::from_matrix(d_up.clone()))?;
        }
        Ok(out)
    }
}

pub fn lora_trace(
    base: &ParamSet,
    adapters: &LoraAdapterSet,
    arch: &Architecture,
    input: ArrayView2<'_, f64>,
) -> Result<Trace> {
    netcore::forward_trace(base, arch, &adapters.low_ranks(arch)?, input)
}

/// Adapted forward pass.
pub fn lora_forward(
    base: &ParamSet,
    adapters: &LoraAdapterSet,
    arch: &Architecture,
    input: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    Ok(lora_trace(base, adapters, arch, input)?.output)
}

/// Materializes `W + scale·B·A` into a copy of `base` and marks the adapters merged.
///
/// Merging the same adapter set a second time is refused, since it would add
/// the delta again.
pub fn merge_lora(base: &ParamSet, adapters: &mut LoraAdapterSet) -> Result<ParamSet> {
    if adapters.merged {
        return Err(Error::AlreadyMerged);
    }
    let merged = merged_copy(base, adapters)?;
    adapters.merged = true;
    Ok(merged)
}

/// Same arithmetic as [`merge_lora`] without touching the merged flag.
pub fn merged_copy(base: &ParamSet, adapters: &LoraAdapterSet) -> Result<ParamSet> {
    let mut out = base.clone();
    let scale = adapters.effective_scale();
    for &i in &adapters.layers {
        let wname = Architecture::weight_name(i);
        let w = base.require(&wname)?;
        let down = adapters.params.require(&down_name(i))?;
        let up = adapters.params.require(&up_name(i))?;
        let (Some(w), Some(a), Some(b)) = (w.as_matrix(), down.as_matrix(), up.as_matrix()) else {
            return Err(Error::Incompatible(format!("`{wname}` is not a matrix")));
        };
        if b.nrows() != w.nrows() || a.ncols() != w.ncols() {
            return Err(Error::Incompatible(format!(
                "adapter on `{wname}` has shape {}x{} for weight {}x{}",
                b.nrows(),
                a.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        let mut merged = w.to_owned();
        merged.scaled_add(scale, &b.dot(&a));
        out.replace(&wname, Tensor::from_matrix(merged))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{mlp_forward, Activation};
    use ndarray::array;

    fn arch() -> Architecture {
        Architecture::new(vec![6, 12, 12, 3], Activation::Silu).unwrap()
    }

    #[test]
    fn effective_scale_matches_rank_and_gamma() {
        let wide = Architecture::new(vec![512, 512, 4], Activation::Silu).unwrap();
        let names = hidden_layer_names(&wide);
        assert_eq!(init_lora(&wide, &names, 64, 128.0, 0).unwrap().effective_scale(), 2.0);
        assert_eq!(init_lora(&wide, &names, 256, 512.0, 0).unwrap().effective_scale(), 2.0);
    }

    #[test]
    fn zero_delta_at_init() {
        let a = arch();
        let base = a.init_params(1);
        let lora = init_lora(&a, &hidden_layer_names(&a), 4, 8.0, 2).unwrap();
        let x = crate::rng::normal_matrix(&mut crate::rng::seeded(3), 5, 6);
        assert_eq!(
            lora_forward(&base, &lora, &a, x.view()).unwrap(),
            mlp_forward(&base, &a, x.view()).unwrap()
        );
        let mut l2 = lora.clone();
        assert_eq!(merge_lora(&base, &mut l2).unwrap(), base);
    }

    #[test]
    fn rank_and_layer_validation() {
        let a = arch();
        assert!(init_lora(&a, &["layers.0".into()], 7, 1.0, 0).is_err());
        assert!(init_lora(&a, &["layers.9".into()], 2, 1.0, 0).is_err());
        assert!(init_lora(&a, &["head".into()], 2, 1.0, 0).is_err());
        assert!(init_lora(&a, &["layers.2".into()], 3, 1.0, 0).is_ok());
        assert!(init_lora(&a, &["layers.2".into()], 4, 1.0, 0).is_err());
    }

    #[test]
    fn rank_one_hand_evaluation() {
        let a = Architecture::new(vec![2, 2], Activation::Identity).unwrap();
        let mut base = a.init_params(0);
        base.replace(
            "layers.0.weight",
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        )
        .unwrap();
        base.replace("layers.0.bias", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap())
            .unwrap();
        let mut lora = init_lora(&a, &["layers.0".into()], 1, 3.0, 0).unwrap();
        lora.params_mut()
            .replace(&down_name(0), Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        lora.params_mut()
            .replace(&up_name(0), Tensor::new(vec![2, 1], vec![2.0, 0.5]).unwrap())
            .unwrap();
        // W + 3·B·A = [[1+6, 2-6], [3+1.5, 4-1.5]]
        let x = array![[1.0, 2.0]];
        let y = lora_forward(&base, &lora, &a, x.view()).unwrap();
        assert_eq!(y, array![[7.0 - 8.0 + 0.5, 4.5 + 5.0 - 0.5]]);
    }

    #[test]
    fn merge_twice_is_refused() {
        let a = arch();
        let base = a.init_params(0);
        let mut lora = init_lora(&a, &hidden_layer_names(&a), 2, 4.0, 1).unwrap();
        merge_lora(&base, &mut lora).unwrap();
        assert!(matches!(merge_lora(&base, &mut lora), Err(Error::AlreadyMerged)));
    }
}
