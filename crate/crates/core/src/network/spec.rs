use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// One layer of the network.
///
/// Pooling layers carry no activation of their own: the nonlinearity of the
/// preceding convolution is applied before pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        out: usize,
        activation: Activation,
    },
    /// Valid cross-correlation over a `(channels, height, width)` input.
    Conv {
        filters: usize,
        /// `[rows, cols]`
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: usize,
        activation: Activation,
    },
    /// Non-overlapping pooling over `region` consecutive entries along the width axis.
    Pool {
        mode: PoolMode,
        region: usize,
    },
}

fn default_stride() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn dense(out: usize, activation: Activation) -> Self {
        LayerSpec::Dense { out, activation }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv { activation, .. } => activation,
            LayerSpec::Pool { .. } => Activation::Identity,
        }
    }

    /// Whether the layer owns weights (dense and conv layers do, pooling does not).
    pub fn has_weights(&self) -> bool {
        !matches!(self, LayerSpec::Pool { .. })
    }
}

/// Activation tensor layout, flattened channel-major: `(c, h, w) -> c*h*w + h*W + w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Shape {
            channels: 1,
            height: 1,
            width: n,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Architecture of a classifier with inputs in `[-M, M]^d` and `K` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub input_bound: f64,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// `[channels, height, width]` view of the input for convolutional layers.
    /// Defaults to a flat `1 x 1 x input_dim` vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
}

impl NetworkSpec {
    /// Fully connected network: `hidden` widths with a shared activation,
    /// then a linear output layer of width `num_classes`.
    pub fn mlp(
        input_dim: usize,
        input_bound: f64,
        hidden: &[usize],
        activation: Activation,
        num_classes: usize,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&n| LayerSpec::dense(n, activation)).collect();
        layers.push(LayerSpec::dense(num_classes, Activation::Identity));
        NetworkSpec {
            input_dim,
            input_bound,
            use_bias: true,
            num_classes,
            layers,
            input_shape: None,
        }
    }

    pub fn input_tensor_shape(&self) -> Shape {
        match self.input_shape {
            Some([c, h, w]) => Shape {
                channels: c,
                height: h,
                width: w,
            },
            None => Shape::flat(self.input_dim),
        }
    }

    /// Depth `L`: the number of layers that own weights. A pooling layer is
    /// folded into the convolution it follows.
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.has_weights()).count()
    }

    /// Largest pooling region `p` (1 when the network has no pooling).
    pub fn max_pool_region(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Pool { region, .. } => Some(*region),
                _ => None,
            })
            .max()
            .unwrap_or(1)
    }

    /// Checks every invariant and returns the shape chain: the input shape
    /// followed by the output shape of each layer.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if !(self.input_bound.is_finite() && self.input_bound >= 0.0) {
            return bad(format!("input_bound must be finite and >= 0, got {}", self.input_bound));
        }
        let input = self.input_tensor_shape();
        if input.size() != self.input_dim {
            return bad(format!(
                "input_shape {input} has {} entries but input_dim is {}",
                input.size(),
                self.input_dim
            ));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { out, activation }) => {
                if *out != self.num_classes {
                    return bad(format!(
                        "output layer has {out} units but num_classes is {}",
                        self.num_classes
                    ));
                }
                if *activation != Activation::Identity {
                    return bad("output layer must use the identity activation".into());
                }
            }
            Some(_) => return bad("last layer must be dense".into()),
            None => return bad("network has no layers".into()),
        }

        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push(input);
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Dense { out, .. } => {
                    if out == 0 {
                        return bad(format!("layer {i}: dense layer needs out >= 1"));
                    }
                    Shape::flat(out)
                }
                LayerSpec::Conv {
                    filters,
                    kernel: [kh, kw],
                    stride,
                    ..
                } => {
                    if filters == 0 || kh == 0 || kw == 0 || stride == 0 {
                        return bad(format!("layer {i}: conv filters, kernel dims and stride must be >= 1"));
                    }
                    if kh > cur.height || kw > cur.width {
                        return bad(format!("layer {i}: kernel {kh}x{kw} larger than input {cur}"));
                    }
                    Shape {
                        channels: filters,
                        height: (cur.height - kh) / stride + 1,
                        width: (cur.width - kw) / stride + 1,
                    }
                }
                LayerSpec::Pool { region, .. } => {
                    if region == 0 {
                        return bad(format!("layer {i}: pooling region must be >= 1"));
                    }
                    if !cur.width.is_multiple_of(region) {
                        return bad(format!(
                            "layer {i}: width {} not divisible by pooling region {region}",
                            cur.width
                        ));
                    }
                    Shape {
                        width: cur.width / region,
                        ..cur
                    }
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }
}

/// Per-hidden-layer width when `total_hidden` units are split evenly over the
/// `depth - 1` hidden layers of a depth-`depth` network.
pub fn allocate_units(total_hidden: usize, depth: usize) -> Result<usize> {
    if depth < 2 {
        return Err(Error::InvalidArgument(format!(
            "depth must be >= 2 to have hidden layers, got {depth}"
        )));
    }
    if total_hidden < depth - 1 {
        return Err(Error::InvalidArgument(format!(
            "{total_hidden} hidden units cannot fill {} hidden layers",
            depth - 1
        )));
    }
    Ok(total_hidden / (depth - 1))
}
