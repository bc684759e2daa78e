use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    focal_loss_and_grad, softmax_cross_entropy, Activation, ForwardCache, Matrix, Mlp, MlpSpec,
    ParameterVector, SoftmaxOutput,
};
use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub class_count: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: vec![32],
            class_count: 4,
        }
    }
}

impl ClassifierSpec {
    pub fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.class_count);
        MlpSpec {
            sizes,
            hidden: Activation::Relu,
            output: Activation::Identity,
            final_layer_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("classifier.class_count", "must be >= 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("classifier.input_dim", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("classifier.hidden", "widths must be positive"));
        }
        Ok(())
    }
}

/// Per-sample loss used to train a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64 },
}

/// Classification network producing `class_count` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    spec: ClassifierSpec,
    mlp: Mlp,
}

impl ClassifierNet {
    pub fn new<R: Rng + ?Sized>(spec: ClassifierSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mlp = Mlp::new(spec.mlp_spec(), rng)?;
        Ok(Self { spec, mlp })
    }

    pub fn from_params(spec: ClassifierSpec, params: ParameterVector) -> Result<Self> {
        spec.validate()?;
        let mlp = Mlp::from_params(spec.mlp_spec(), params)?;
        Ok(Self { spec, mlp })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn params(&self) -> &ParameterVector {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        self.mlp.params_mut()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Independent copy with identical architecture and parameters.
    pub fn copy_parameters(&self) -> ClassifierNet {
        self.clone()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        self.mlp.forward(inputs)
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        self.mlp.forward_cached(inputs)
    }

    pub fn per_sample_loss(logits: &Matrix, labels: &[usize]) -> Result<SoftmaxOutput> {
        softmax_cross_entropy(logits, labels)
    }

    /// Gradient of `(1/B) * sum_i weights[i] * ce_i` given a cached forward
    /// pass and its softmax output.
    pub fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        softmax: &SoftmaxOutput,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<ParameterVector> {
        let b = labels.len();
        ensure_len("weights", b, weights.len())?;
        ensure_len("softmax rows", b, softmax.probs.rows())?;
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("sample weight {w}")));
        }
        let inv_b = 1.0 / b as f64;
        let mut d_logits = softmax.probs.clone();
        for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            let scale = w * inv_b;
            let row = d_logits.row_mut(r);
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        Ok(self.mlp.backward(cache, &d_logits)?.0)
    }

    /// Exact gradient of `(1/B) * sum_i weights[i] * loss_i` w.r.t. all parameters.
    pub fn backward_weighted(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<ParameterVector> {
        self.backward_loss(inputs, labels, weights, LossKind::CrossEntropy)
    }

    pub fn backward_loss(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        weights: &[f64],
        loss: LossKind,
    ) -> Result<ParameterVector> {
        ensure_len("labels", inputs.rows(), labels.len())?;
        let cache = self.forward_cached(inputs)?;
        match loss {
            LossKind::CrossEntropy => {
                let sm = softmax_cross_entropy(cache.output(), labels)?;
                self.backward_from_cache(&cache, &sm, labels, weights)
            }
            LossKind::Focal { gamma } if gamma == 0.0 => {
                let sm = softmax_cross_entropy(cache.output(), labels)?;
                self.backward_from_cache(&cache, &sm, labels, weights)
            }
            LossKind::Focal { gamma } => {
                ensure_len("weights", labels.len(), weights.len())?;
                let (_, mut g) = focal_loss_and_grad(cache.output(), labels, gamma)?;
                let inv_b = 1.0 / labels.len() as f64;
                for (r, &w) in weights.iter().enumerate() {
                    let scale = w * inv_b;
                    for v in g.row_mut(r) {
                        *v *= scale;
                    }
                }
                Ok(self.mlp.backward(&cache, &g)?.0)
            }
        }
    }

    /// Argmax predictions, ties resolved to the lowest class index.
    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
