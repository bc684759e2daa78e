use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// Optimizer hyperparameters. `beta2`/`eps` are ignored by SGD and
/// `momentum` by Adam, which reads `beta1` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |what: &str| Error::config(format!("{field}.{what}"), "out of range");
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate"));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(name));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("weight_decay"));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps"));
        }
        Ok(())
    }
}

/// Optimizer with its per-parameter accumulators.
///
/// SGD-momentum: `v <- m*v + g + wd*w; w <- w - lr*v`.
/// Adam: bias-corrected moments, L2 weight decay folded into `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    /// Velocity for SGD, first moment for Adam.
    pub first: Vec<f64>,
    /// Second moment (Adam only; empty for SGD).
    pub second: Vec<f64>,
    pub steps: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, num_params: usize) -> Self {
        let second = match spec.kind {
            OptimizerKind::Adam => vec![0.0; num_params],
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Self {
            spec,
            first: vec![0.0; num_params],
            second,
            steps: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.spec.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.spec.learning_rate = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_len("optimizer params", self.first.len(), params.len())?;
        ensure_len("optimizer grads", params.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient component {i} is {} (diverged)",
                grads[i]
            )));
        }
        let lr = self.spec.learning_rate;
        let wd = self.spec.weight_decay;
        self.steps += 1;
        match self.spec.kind {
            OptimizerKind::SgdMomentum => {
                let m = self.spec.momentum;
                for ((w, v), &g) in params.iter_mut().zip(&mut self.first).zip(grads) {
                    *v = m * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.spec.beta1, self.spec.beta2, self.spec.eps);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((w, m), v), &g) in params
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grads)
                {
                    let g = g + wd * *w;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        if let Some(i) = params.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!(
                "parameter {i} became {} after step",
                params[i]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params() {
        let mut opt = Optimizer::new(OptimizerSpec::sgd(0.0, 0.9, 0.1), 3);
        let mut w = vec![1.0, -2.0, 3.0];
        opt.step(&mut w, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
        let mut adam = Optimizer::new(OptimizerSpec::adam(0.0), 3);
        adam.step(&mut w, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn vanilla_descent_moves_by_lr_times_g() {
        let mut opt = Optimizer::new(OptimizerSpec::sgd(0.5, 0.0, 0.0), 1);
        let mut w = vec![4.0];
        for k in 1..=4 {
            opt.step(&mut w, &[0.25]).unwrap();
            assert_eq!(w[0], 4.0 - 0.125 * k as f64);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = Optimizer::new(OptimizerSpec::adam(0.1), 2);
        let mut w = vec![0.0, 0.0];
        let err = opt.step(&mut w, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // f(w) = w^2, grad 2w
        let mut opt = Optimizer::new(OptimizerSpec::adam(0.1), 1);
        let mut w = vec![1.0];
        let (mut rw, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * w[0];
            opt.step(&mut w, &[g]).unwrap();

            let rg = 2.0 * rw;
            m = 0.9 * m + 0.1 * rg;
            v = 0.999 * v + 0.001 * rg * rg;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            rw -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((w[0] - rw).abs() < 1e-12, "step {t}: {} vs {rw}", w[0]);
        }
    }
}
