//! Dense feed-forward networks with exact forward and reverse passes.
//!
//! Weights are stored as `layers.{i}.weight` with shape `(out, in)` and
//! `layers.{i}.bias` with shape `(out,)`. Batches are row-major
//! `(batch, features)` matrices. An optional low-rank term can be attached to
//! any linear layer; the LoRA module builds on that hook.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Layer widths plus the activation used between layers (never after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(invalid("architecture needs at least one layer"));
        }
        if layer_dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(fan_in, fan_out)` of linear layer `i`.
    pub fn layer_shape(&self, i: usize) -> (usize, usize) {
        (self.layer_dims[i], self.layer_dims[i + 1])
    }

    pub fn weight_name(i: usize) -> String {
        format!("layers.{i}.weight")
    }

    pub fn bias_name(i: usize) -> String {
        format!("layers.{i}.bias")
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers())
            .map(|i| {
                let (fi, fo) = self.layer_shape(i);
                fi * fo + fo
            })
            .sum()
    }

    /// Uniform Glorot weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = rng::seeded(seed);
        let mut p = ParamSet::new();
        for i in 0..self.num_layers() {
            let (fi, fo) = self.layer_shape(i);
            let w = glorot(&mut rng, fo, fi);
            p.insert(Self::weight_name(i), Tensor::from_matrix(w))
                .expect("fresh names");
            p.insert(Self::bias_name(i), Tensor::zeros(vec![fo]))
                .expect("fresh names");
        }
        p
    }

    /// Verifies every layer's weight and bias are present with the right shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        for i in 0..self.num_layers() {
            let (fi, fo) = self.layer_shape(i);
            params.matrix(&Self::weight_name(i), fo, fi)?;
            params.vector(&Self::bias_name(i), fo)?;
        }
        Ok(())
    }

    /// Compact text form, e.g. `silu:10-64-64-2`.
    pub fn descriptor(&self) -> String {
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        format!("{}:{}", self.activation.name(), dims.join("-"))
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let (act, dims) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("bad architecture descriptor `{s}`")))?;
        let dims = dims
            .split('-')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| invalid(format!("bad layer width `{d}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, Activation::parse(act)?)
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, shape `(rows, cols)`.
pub(crate) fn glorot(rng: &mut rng::LabRng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Low-rank additive term on a linear layer: `scale * up · down`.
///
/// `down` has shape `(rank, fan_in)` and `up` has shape `(fan_out, rank)`.
#[derive(Debug, Clone, Copy)]
pub struct LowRank<'a> {
    pub down: ArrayView2<'a, f64>,
    pub up: ArrayView2<'a, f64>,
    pub scale: f64,
}

/// Intermediate values recorded by [`forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of each linear layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// `input · downᵀ` for adapted layers.
    low: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Array2<f64>,
    pub params: ParamSet,
    /// `(d_down, d_up)` per adapted layer.
    pub adapters: Vec<Option<(Array2<f64>, Array2<f64>)>>,
}

fn check_input(arch: &Architecture, input: &ArrayView2<f64>) -> Result<()> {
    if input.ncols() != arch.input_dim() {
        return Err(Error::Shape {
            name: "input".into(),
            expected: vec![input.nrows(), arch.input_dim()],
            actual: input.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_adapters(arch: &Architecture, adapters: &[Option<LowRank<'_>>]) -> Result<()> {
    if adapters.is_empty() {
        return Ok(());
    }
    if adapters.len() != arch.num_layers() {
        return Err(invalid(format!(
            "adapter list has {} entries for {} layers",
            adapters.len(),
            arch.num_layers()
        )));
    }
    for (i, a) in adapters.iter().enumerate() {
        if let Some(a) = a {
            let (fi, fo) = arch.layer_shape(i);
            let r = a.down.nrows();
            if a.down.ncols() != fi || a.up.nrows() != fo || a.up.ncols() != r {
                return Err(Error::Shape {
                    name: format!("layers.{i} adapter"),
                    expected: vec![r, fi, fo, r],
                    actual: vec![a.down.nrows(), a.down.ncols(), a.up.nrows(), a.up.ncols()],
                });
            }
        }
    }
    Ok(())
}

/// Forward pass that keeps every intermediate needed by [`backward`].
pub fn forward_trace(
    params: &ParamSet,
    arch: &Architecture,
    adapters: &[Option<LowRank<'_>>],
    input: ArrayView2<'_, f64>,
) -> Result<Trace> {
    check_input(arch, &input)?;
    check_adapters(arch, adapters)?;
    let n = arch.num_layers();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n.saturating_sub(1));
    let mut low = Vec::with_capacity(n);
    let mut h = input.to_owned();
    for i in 0..n {
        let (fi, fo) = arch.layer_shape(i);
        let w = params.matrix(&Architecture::weight_name(i), fo, fi)?;
        let b = params.vector(&Architecture::bias_name(i), fo)?;
        let mut z = h.dot(&w.t());
        z += &b;
        let u = match adapters.get(i).copied().flatten() {
            Some(a) => {
                let u = h.dot(&a.down.t());
                z.scaled_add(a.scale, &u.dot(&a.up.t()));
                Some(u)
            }
            None => None,
        };
        low.push(u);
        inputs.push(h);
        if i + 1 < n {
            let act = arch.activation;
            h = z.mapv(|v| act.apply(v));
            pre.push(z);
        } else {
            h = z;
        }
    }
    Ok(Trace {
        inputs,
        pre,
        low,
        output: h,
    })
}

/// Reverse pass: gradients of `<cotangent, output>` for a recorded trace.
pub fn backward(
    params: &ParamSet,
    arch: &Architecture,
    adapters: &[Option<LowRank<'_>>],
    trace: &Trace,
    cotangent: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    if cotangent.dim() != trace.output.dim() {
        return Err(Error::Shape {
            name: "cotangent".into(),
            expected: trace.output.shape().to_vec(),
            actual: cotangent.shape().to_vec(),
        });
    }
    check_adapters(arch, adapters)?;
    let n = arch.num_layers();
    let mut weight_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n);
    let mut adapter_grads = vec![None; if adapters.is_empty() { 0 } else { n }];
    let mut g = cotangent.to_owned();
    for i in (0..n).rev() {
        let (fi, fo) = arch.layer_shape(i);
        if i + 1 < n {
            let act = arch.activation;
            Zip::from(&mut g)
                .and(&trace.pre[i])
                .for_each(|gv, &z| *gv *= act.derivative(z));
        }
        let x = &trace.inputs[i];
        let w = params.matrix(&Architecture::weight_name(i), fo, fi)?;
        let dw = g.t().dot(x);
        let db = g.sum_axis(Axis(0));
        let mut dx = g.dot(&w);
        if let Some(a) = adapters.get(i).copied().flatten() {
            let u = trace.low[i].as_ref().expect("trace recorded adapter");
            let d_up = g.t().dot(u) * a.scale;
            let du = g.dot(&a.up) * a.scale;
            let d_down = du.t().dot(x);
            dx += &du.dot(&a.down);
            adapter_grads[i] = Some((d_down, d_up));
        }
        weight_grads.push((dw, db));
        g = dx;
    }
    weight_grads.reverse();
    let mut pg = ParamSet::new();
    for (i, (dw, db)) in weight_grads.into_iter().enumerate() {
        pg.insert(Architecture::weight_name(i), Tensor::from_matrix(dw))?;
        pg.insert(Architecture::bias_name(i), Tensor::from_vector(db))?;
    }
    Ok(Gradients {
        input: g,
        params: pg,
        adapters: adapter_grads,
    })
}

/// Plain forward evaluation.
pub fn mlp_forward(
    params: &ParamSet,
    arch: &Architecture,
    input: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    Ok(forward_trace(params, arch, &[], input)?.output)
}

/// Vector-Jacobian product of the network at `input` with `cotangent`.
///
/// Returns `(input_grad, param_grads)` where `param_grads` holds only the
/// `layers.*` entries of `params`, in layer order.
pub fn mlp_vjp(
    params: &ParamSet,
    arch: &Architecture,
    input: ArrayView2<'_, f64>,
    cotangent: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ParamSet)> {
    let trace = forward_trace(params, arch, &[], input)?;
    let g = backward(params, arch, &[], &trace, cotangent)?;
    Ok((g.input, g.params))
}

/// An architecture bundled with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: Architecture,
    pub params: ParamSet,
}

impl Mlp {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let params = arch.init_params(seed);
        Self { arch, params }
    }

    pub fn from_params(arch: Architecture, params: ParamSet) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        mlp_forward(&self.params, &self.arch, input)
    }

    pub fn trace(&self, input: ArrayView2<'_, f64>) -> Result<Trace> {
        forward_trace(&self.params, &self.arch, &[], input)
    }

    pub fn backward(&self, trace: &Trace, cotangent: ArrayView2<'_, f64>) -> Result<Gradients> {
        backward(&self.params, &self.arch, &[], trace, cotangent)
    }

    pub fn vjp(&self, input: ArrayView2<'_, f64>, cotangent: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ParamSet)> {
        mlp_vjp(&self.params, &self.arch, input, cotangent)
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_output_bias() {
        let arch = Architecture::new(vec![3, 2], Activation::Silu).unwrap();
        let mut p = arch.init_params(1);
        p.replace("layers.0.weight", Tensor::zeros(vec![2, 3])).unwrap();
        p.replace("layers.0.bias", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap())
            .unwrap();
        let x = array![[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]];
        let y = mlp_forward(&p, &arch, x.view()).unwrap();
        assert_eq!(y, array![[0.5, -1.5], [0.5, -1.5]]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = Architecture::new(vec![2, 2], Activation::Tanh).unwrap();
        let mut p = arch.init_params(0);
        p.replace(
            "layers.0.weight",
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let x = array![[0.3, -7.0]];
        assert_eq!(mlp_forward(&p, &arch, x.view()).unwrap(), x);
    }

    #[test]
    fn shape_errors_name_parameter() {
        let arch = Architecture::new(vec![3, 4, 2], Activation::Silu).unwrap();
        let mut p = arch.init_params(0);
        p.replace("layers.1.bias", Tensor::zeros(vec![2])).unwrap();
        let bad = Architecture::new(vec![3, 4, 3], Activation::Silu).unwrap();
        let err = mlp_forward(&p, &bad, array![[0.0, 0.0, 0.0]].view()).unwrap_err();
        assert!(err.to_string().contains("layers.1.weight"), "{err}");

        let err = mlp_forward(&p, &arch, array![[0.0, 0.0]].view()).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let arch = Architecture::new(vec![3, 5, 2], Activation::Silu).unwrap();
        let p = arch.init_params(4);
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let (gx, gp) = mlp_vjp(&p, &arch, x.view(), Array2::zeros((2, 2)).view()).unwrap();
        assert!(gx.iter().all(|v| *v == 0.0));
        assert_eq!(gp.l2_norm(), 0.0);
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product_sum() {
        let arch = Architecture::new(vec![2, 3], Activation::Identity).unwrap();
        let p = arch.init_params(9);
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let c = array![[0.5, 0.0, 1.0], [-1.0, 2.0, 0.25]];
        let (_, gp) = mlp_vjp(&p, &arch, x.view(), c.view()).unwrap();
        let mut expected = Array2::<f64>::zeros((3, 2));
        for r in 0..2 {
            for o in 0..3 {
                for i in 0..2 {
                    expected[[o, i]] += c[[r, o]] * x[[r, i]];
                }
            }
        }
        assert_eq!(gp.matrix("layers.0.weight", 3, 2).unwrap(), expected);
        assert_eq!(
            gp.vector("layers.0.bias", 3).unwrap(),
            array![-0.5, 2.0, 1.25]
        );
    }

    #[test]
    fn descriptor_round_trip() {
        let arch = Architecture::new(vec![10, 64, 64, 2], Activation::Silu).unwrap();
        assert_eq!(arch.descriptor(), "silu:10-64-64-2");
        assert_eq!(Architecture::parse_descriptor("silu:10-64-64-2").unwrap(), arch);
        assert!(Architecture::parse_descriptor("relu:1-2").is_err());
        assert!(Architecture::new(vec![4], Activation::Silu).is_err());
        assert!(Architecture::new(vec![4, 0, 1], Activation::Silu).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Architecture::new(vec![6, 10], Activation::Silu).unwrap();
        let a = arch.init_params(3);
        assert_eq!(a, arch.init_params(3));
        assert_ne!(a, arch.init_params(4));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a
            .require("layers.0.weight")
            .unwrap()
            .data()
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(a.require("layers.0.bias").unwrap().data().iter().all(|b| *b == 0.0));
    }
}
