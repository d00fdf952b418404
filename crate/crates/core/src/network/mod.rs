//! Feed-forward classifiers built from dense, convolutional and pooling
//! layers, with hand-derived reverse-mode gradients.

mod activation;
mod layers;
mod spec;

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use activation::Activation;
pub use spec::{allocate_units, LayerSpec, NetworkSpec, PoolMode, Shape};

use crate::error::{shape_err, Error, Result};
use crate::matrix::{Dims, Matrix};
use layers::ConvGeometry;

/// Weights and biases of one layer. Pooling layers hold an empty `0 x 0`
/// weight matrix and no bias.
///
/// Dense weights are `inputs x units`; conv weights are
/// `(channels * kernel_rows * kernel_cols) x filters`. Either way column `j`
/// holds the incoming weights of unit (or filter) `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams {
            weights: Matrix::zeros(0, 0),
            bias: Vec::new(),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: alloc::vec![0.0; self.bias.len()],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Parameter gradients, congruent with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

/// Which flat parameter a coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCoord {
    pub layer: usize,
    pub is_bias: bool,
    pub index: usize,
}

/// Intermediate values of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub pre: Matrix,
    pub post: Matrix,
    /// Max-pool only: flat input index of the winning entry for every pooled output.
    pub argmax: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
    #[serde(skip)]
    shapes: Vec<Shape>,
}

#[derive(Deserialize)]
struct RawNetwork {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let raw = RawNetwork::deserialize(d)?;
        Network::from_params(raw.spec, raw.params).map_err(serde::de::Error::custom)
    }
}

impl Network {
    /// Instantiates `spec` with weights drawn i.i.d. uniform on `[-r, r]`,
    /// `r = sqrt(6 / (fan_in + fan_out))`, and zero biases.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = shapes[i];
            let (rows, cols, fan_in, fan_out) = match *layer {
                LayerSpec::Dense { out, .. } => (input.size(), out, input.size(), out),
                LayerSpec::Conv {
                    filters,
                    kernel: [kh, kw],
                    ..
                } => {
                    let taps = input.channels * kh * kw;
                    (taps, filters, taps, filters * kh * kw)
                }
                LayerSpec::Pool { .. } => {
                    params.push(LayerParams::empty());
                    continue;
                }
            };
            let r = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let weights = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-r..=r));
            let bias = if spec.use_bias {
                alloc::vec![0.0; cols]
            } else {
                Vec::new()
            };
            params.push(LayerParams { weights, bias });
        }
        Ok(Network { spec, params, shapes })
    }

    /// Assembles a network from explicit parameters, checking their shapes.
    pub fn from_params(spec: NetworkSpec, params: Vec<LayerParams>) -> Result<Self> {
        let shapes = spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(shape_err("Network::from_params", spec.layers.len(), params.len()));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params).enumerate() {
            let (want, units) = match *layer {
                LayerSpec::Dense { out, .. } => (Dims(shapes[i].size(), out), out),
                LayerSpec::Conv {
                    filters,
                    kernel: [kh, kw],
                    ..
                } => (Dims(shapes[i].channels * kh * kw, filters), filters),
                LayerSpec::Pool { .. } => (Dims(0, 0), 0),
            };
            if p.weights.dims() != want {
                return Err(shape_err("layer weights", want, p.weights.dims()));
            }
            let want_bias = if spec.use_bias { units } else { 0 };
            if p.bias.len() != want_bias {
                return Err(shape_err("layer bias", want_bias, p.bias.len()));
            }
            if p.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i}: non-finite bias")));
            }
        }
        Ok(Network { spec, params, shapes })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    /// Shape chain: input followed by every layer's output.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(LayerParams::num_params).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.params.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Flat coordinates of every parameter, layer by layer, weights before biases.
    pub fn param_coords(&self) -> impl Iterator<Item = ParamCoord> + '_ {
        self.params.iter().enumerate().flat_map(|(layer, p)| {
            let w = (0..p.weights.len()).map(move |index| ParamCoord {
                layer,
                is_bias: false,
                index,
            });
            let b = (0..p.bias.len()).map(move |index| ParamCoord {
                layer,
                is_bias: true,
                index,
            });
            w.chain(b)
        })
    }

    pub fn param(&self, c: ParamCoord) -> f64 {
        let p = &self.params[c.layer];
        if c.is_bias {
            p.bias[c.index]
        } else {
            p.weights.as_slice()[c.index]
        }
    }

    pub fn param_mut(&mut self, c: ParamCoord) -> &mut f64 {
        let p = &mut self.params[c.layer];
        if c.is_bias {
            &mut p.bias[c.index]
        } else {
            &mut p.weights.as_mut_slice()[c.index]
        }
    }

    fn conv_geometry(&self, i: usize) -> ConvGeometry {
        let LayerSpec::Conv { kernel, stride, .. } = self.spec.layers[i] else {
            unreachable!("conv geometry requested for a non-conv layer")
        };
        ConvGeometry {
            input: self.shapes[i],
            output: self.shapes[i + 1],
            kernel,
            stride,
        }
    }

    /// Runs `batch` (one sample per row) through the network. Returns the
    /// `b x K` outputs and the trace required for [`Network::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        if batch.cols() != self.spec.input_dim {
            return Err(shape_err(
                "forward input",
                Dims(batch.rows(), self.spec.input_dim),
                batch.dims(),
            ));
        }
        let bound = self.spec.input_bound;
        if batch.max_abs() > bound + 1e-9 {
            log::warn!("input magnitude {} exceeds the declared bound {bound}", batch.max_abs());
        }
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = traces.last().map_or(batch, |t| &t.post);
            let p = &self.params[i];
            let (pre, argmax) = match *layer {
                LayerSpec::Dense { .. } => (layers::dense_forward(x, &p.weights, &p.bias), Vec::new()),
                LayerSpec::Conv { .. } => (
                    layers::conv_forward(x, &self.conv_geometry(i), &p.weights, &p.bias),
                    Vec::new(),
                ),
                LayerSpec::Pool { mode, region } => layers::pool_forward(x, mode, region),
            };
            debug_assert_eq!(pre.cols(), self.shapes[i + 1].size());
            let act = layer.activation();
            let post = if act == Activation::Identity {
                pre.clone()
            } else {
                let data = pre.as_slice().iter().map(|&t| act.apply(t)).collect();
                Matrix::new(pre.rows(), pre.cols(), data)
                    .map_err(|_| Error::InvalidArgument(format!("layer {i}: non-finite activation")))?
            };
            traces.push(LayerTrace { pre, post, argmax });
        }
        let outputs = traces.last().expect("validated spec has layers").post.clone();
        Ok((
            outputs,
            ForwardTrace {
                input: batch.clone(),
                layers: traces,
            },
        ))
    }

    /// Network outputs without keeping a trace.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Exact gradients of `sum_i <output_grad_i, f(x_i, .)>` with respect to
    /// every parameter, and with respect to the input batch.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        let (grads, dx) = self.backward_impl(trace, output_grad, true)?;
        Ok((grads, dx.expect("input gradient requested")))
    }

    /// Parameter gradients only; skips the input-gradient product of the first layer.
    pub fn param_gradients(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<Gradients> {
        self.backward_impl(trace, output_grad, false).map(|(g, _)| g)
    }

    fn check_trace(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<()> {
        let n = self.spec.layers.len();
        if trace.layers.len() != n {
            return Err(shape_err("trace layer count", n, trace.layers.len()));
        }
        let b = trace.input.rows();
        if trace.input.cols() != self.spec.input_dim {
            return Err(shape_err(
                "trace input",
                Dims(b, self.spec.input_dim),
                trace.input.dims(),
            ));
        }
        for (i, t) in trace.layers.iter().enumerate() {
            let want = Dims(b, self.shapes[i + 1].size());
            if t.pre.dims() != want || t.post.dims() != want {
                return Err(shape_err("trace layer", want, t.post.dims()));
            }
            if let LayerSpec::Pool {
                mode: PoolMode::Max,
                region,
            } = self.spec.layers[i]
            {
                let out_cols = want.1;
                let ok = t.argmax.len() == b * out_cols
                    && t.argmax.iter().enumerate().all(|(k, &a)| a / region == k % out_cols);
                if !ok {
                    return Err(shape_err("max-pool argmax", b * out_cols, t.argmax.len()));
                }
            }
        }
        let want = Dims(b, self.spec.num_classes);
        if output_grad.dims() != want {
            return Err(shape_err("output gradient", want, output_grad.dims()));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        output_grad: &Matrix,
        need_input_grad: bool,
    ) -> Result<(Gradients, Option<Matrix>)> {
        self.check_trace(trace, output_grad)?;
        let n = self.spec.layers.len();
        let mut grads = self.zero_gradients();
        let mut upstream = output_grad.clone();
        for i in (0..n).rev() {
            let layer = &self.spec.layers[i];
            let t = &trace.layers[i];
            let act = layer.activation();
            // gradient at the pre-activation
            let mut delta = upstream;
            if act != Activation::Identity {
                for ((d, &pre), &post) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(t.pre.as_slice())
                    .zip(t.post.as_slice())
                {
                    *d *= act.derivative(pre, post);
                }
            }
            let x = if i == 0 {
                &trace.input
            } else {
                &trace.layers[i - 1].post
            };
            let want_dx = i > 0 || need_input_grad;
            let p = &self.params[i];
            let with_bias = !p.bias.is_empty();
            let dx = match *layer {
                LayerSpec::Dense { .. } => {
                    let (dw, db, dx) = layers::dense_backward(x, &delta, &p.weights, with_bias, want_dx);
                    grads.layers[i] = LayerParams { weights: dw, bias: db };
                    dx
                }
                LayerSpec::Conv { .. } => {
                    let g = self.conv_geometry(i);
                    let (dw, db, dx) = layers::conv_backward(x, &delta, &g, &p.weights, with_bias, want_dx);
                    grads.layers[i] = LayerParams { weights: dw, bias: db };
                    dx
                }
                LayerSpec::Pool { mode, region } => {
                    Some(layers::pool_backward(&delta, x.cols(), mode, region, &t.argmax))
                }
            };
            match dx {
                Some(dx) => upstream = dx,
                None => return Ok((grads, None)),
            }
        }
        Ok((grads, Some(upstream)))
    }

    /// L1 norm of each unit's incoming weights, per layer (biases excluded).
    /// Pooling layers report an empty list.
    pub fn unit_l1_norms(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| {
                let w = &p.weights;
                let mut norms = alloc::vec![0.0; w.cols()];
                for row in w.row_iter() {
                    for (n, v) in norms.iter_mut().zip(row) {
                        *n += v.abs();
                    }
                }
                norms
            })
            .collect()
    }

    /// Largest per-layer unit L1 norm, one entry per layer (0 for pooling layers).
    pub fn layer_weight_bounds(&self) -> Vec<f64> {
        self.unit_l1_norms()
            .iter()
            .map(|n| n.iter().fold(0.0_f64, |m, &v| m.max(v)))
            .collect()
    }

    /// The measured weight constraint `A`: max over all units of all layers
    /// of the L1 norm of the unit's incoming weights.
    pub fn effective_weight_bound(&self) -> f64 {
        self.layer_weight_bounds().into_iter().fold(0.0, f64::max)
    }
}

impl Gradients {
    /// Flat gradient value at `c`.
    pub fn get(&self, c: ParamCoord) -> f64 {
        let p = &self.layers[c.layer];
        if c.is_bias {
            p.bias[c.index]
        } else {
            p.weights.as_slice()[c.index]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}
