use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, ParameterVector, TensorShape};
use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of a dense network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths including input and output, e.g. `[2, 32, 4]`.
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    /// When set, the last layer is drawn from `U(-s, s)` instead of Glorot.
    #[serde(default)]
    pub final_layer_scale: Option<f64>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::config("sizes", "need at least input and output width"));
        }
        if self.sizes.contains(&0) {
            return Err(Error::config("sizes", "layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layout(&self) -> Vec<TensorShape> {
        let mut layout = Vec::new();
        for (l, w) in self.sizes.windows(2).enumerate() {
            layout.push(TensorShape {
                name: format!("layer{l}.weight"),
                shape: vec![w[1], w[0]],
            });
            layout.push(TensorShape {
                name: format!("layer{l}.bias"),
                shape: vec![w[1]],
            });
        }
        layout
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    input: usize,
    output: usize,
    weight: usize,
    bias: usize,
}

/// Multilayer perceptron over a flat [`ParameterVector`]. Weights are stored
/// per layer as `(out, in)` row-major followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParameterVector,
}

/// Activations retained by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` is layer `l`'s output.
    pub activations: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    /// Hidden layers use He-uniform, biases start at zero.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterVector::zeros(spec.layout());
        let mut net = Self {
            spec: spec.clone(),
            params: ParameterVector::zeros(Vec::new()),
        };
        let layers = spec.sizes.len() - 1;
        let offsets = net_offsets(&spec);
        for (l, off) in offsets.iter().enumerate() {
            let bound = if l + 1 == layers {
                spec.final_layer_scale
                    .unwrap_or_else(|| (6.0 / (off.input + off.output) as f64).sqrt())
            } else {
                (6.0 / off.input as f64).sqrt()
            };
            for v in &mut params.values[off.weight..off.weight + off.input * off.output] {
                *v = if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                };
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn from_params(spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        spec.validate()?;
        if params.layout != spec.layout() {
            return Err(Error::InvalidInput(
                "parameter layout does not match architecture".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_final_layer(&mut self) {
        let off = *net_offsets(&self.spec).last().unwrap();
        let end = off.bias + off.output;
        self.params.values[off.weight..end].fill(0.0);
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(input)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<ForwardCache> {
        ensure_len("mlp input width", self.input_dim(), input.cols())?;
        let offsets = net_offsets(&self.spec);
        let layers = offsets.len();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(input.clone());
        for (l, off) in offsets.iter().enumerate() {
            let act = if l + 1 == layers {
                self.spec.output
            } else {
                self.spec.hidden
            };
            let a_in = &activations[l];
            let w = &self.params.values[off.weight..off.weight + off.input * off.output];
            let b = &self.params.values[off.bias..off.bias + off.output];
            let mut z = Matrix::zeros(a_in.rows(), off.output);
            let mut a = Matrix::zeros(a_in.rows(), off.output);
            for r in 0..a_in.rows() {
                let x = a_in.row(r);
                let zr = z.row_mut(r);
                for o in 0..off.output {
                    let wr = &w[o * off.input..(o + 1) * off.input];
                    let mut s = b[o];
                    for i in 0..off.input {
                        s += wr[i] * x[i];
                    }
                    zr[o] = s;
                }
                let ar = a.row_mut(r);
                for o in 0..off.output {
                    ar[o] = act.apply(z.get(r, o));
                }
            }
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Backpropagates `d_output` (gradient w.r.t. the network output) and
    /// returns the parameter gradient and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &Matrix,
    ) -> Result<(ParameterVector, Matrix)> {
        let out = cache.output();
        ensure_len("mlp d_output rows", out.rows(), d_output.rows())?;
        ensure_len("mlp d_output cols", out.cols(), d_output.cols())?;
        let offsets = net_offsets(&self.spec);
        let layers = offsets.len();
        let mut grads = self.params.zeros_like();
        let mut delta = d_output.clone();
        for l in (0..layers).rev() {
            let off = offsets[l];
            let act = if l + 1 == layers {
                self.spec.output
            } else {
                self.spec.hidden
            };
            let z = &cache.pre_activations[l];
            let a = &cache.activations[l + 1];
            for r in 0..delta.rows() {
                for o in 0..off.output {
                    let d = delta.get(r, o) * act.derivative(z.get(r, o), a.get(r, o));
                    delta.set(r, o, d);
                }
            }
            let a_in = &cache.activations[l];
            {
                let (gw, gb) = grads.values[off.weight..off.bias + off.output]
                    .split_at_mut(off.input * off.output);
                for r in 0..delta.rows() {
                    let x = a_in.row(r);
                    let dr = delta.row(r);
                    for o in 0..off.output {
                        let d = dr[o];
                        gb[o] += d;
                        let gwr = &mut gw[o * off.input..(o + 1) * off.input];
                        for i in 0..off.input {
                            gwr[i] += d * x[i];
                        }
                    }
                }
            }
            let w = &self.params.values[off.weight..off.weight + off.input * off.output];
            let mut d_in = Matrix::zeros(delta.rows(), off.input);
            for r in 0..delta.rows() {
                let dr = delta.row(r);
                let di = d_in.row_mut(r);
                for o in 0..off.output {
                    let d = dr[o];
                    let wr = &w[o * off.input..(o + 1) * off.input];
                    for i in 0..off.input {
                        di[i] += d * wr[i];
                    }
                }
            }
            delta = d_in;
        }
        Ok((grads, delta))
    }
}

fn net_offsets(spec: &MlpSpec) -> Vec<LayerOffsets> {
    let mut pos = 0;
    spec.sizes
        .windows(2)
        .map(|w| {
            let off = LayerOffsets {
                input: w[0],
                output: w[1],
                weight: pos,
                bias: pos + w[0] * w[1],
            };
            pos += w[0] * w[1] + w[1];
            off
        })
        .collect()
}
