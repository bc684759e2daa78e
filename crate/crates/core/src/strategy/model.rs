use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Column};
use crate::error::{ensure_len, Error, Result};
use crate::features::{PhaseDescriptor, StageEmbedding, FEATURE_COUNT};
use crate::nn::{Activation, Matrix, Mlp, MlpSpec, Optimizer, OptimizerSpec, ParameterVector};

/// Four feature coefficients plus the bias `b`.
pub const THETA_DIM: usize = FEATURE_COUNT + 1;

/// Largest double strictly below 2.
const WEIGHT_MAX: f64 = 1.999_999_999_999_999_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,
    /// When false the bias output of the actor is forced to zero.
    pub learn_bias: bool,
    /// Soft target networks for bootstrapping; `None` bootstraps from the live nets.
    pub target_tau: Option<f64>,
    /// Uniform init bound for the last actor/critic layer.
    pub final_layer_scale: f64,
    /// When set, the actor emits `bound * tanh(.)` instead of a linear output.
    pub theta_bound: Option<f64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            hidden: vec![64, 64, 32],
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            gamma: 0.99,
            batch_size: 32,
            epochs: 4,
            buffer_capacity: 2048,
            learn_bias: true,
            target_tau: None,
            final_layer_scale: 3e-3,
            theta_bound: None,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: &str| Err(Error::config(format!("strategy.{f}"), r));
        if self.embedding_dim == 0 {
            return err("embedding_dim", "must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return err("hidden", "need positive hidden widths");
        }
        if !(self.actor_lr >= 0.0) || !(self.critic_lr >= 0.0) {
            return err("actor_lr", "learning rates must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err("gamma", "must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.buffer_capacity == 0 {
            return err("batch_size", "batch size, epochs and capacity must be positive");
        }
        if let Some(b) = self.theta_bound {
            if !(b > 0.0 && b.is_finite()) {
                return err("theta_bound", "must be positive and finite");
            }
        }
        if let Some(tau) = self.target_tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return err("target_tau", "must lie in (0, 1]");
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.embedding_dim + 2
    }

    pub fn actor_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.state_dim()];
        sizes.extend(&self.hidden);
        sizes.push(THETA_DIM);
        MlpSpec {
            sizes,
            hidden: Activation::Relu,
            output: if self.theta_bound.is_some() {
                Activation::Tanh
            } else {
                Activation::Identity
            },
            final_layer_scale: Some(self.final_layer_scale),
        }
    }

    /// Factor applied to the actor network's output.
    pub fn theta_scale(&self) -> f64 {
        self.theta_bound.unwrap_or(1.0)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.state_dim() + THETA_DIM];
        sizes.extend(&self.hidden);
        sizes.push(1);
        MlpSpec {
            sizes,
            hidden: Activation::Relu,
            output: Activation::Identity,
            final_layer_scale: Some(self.final_layer_scale),
        }
    }
}

/// Weighting function `K_i = 1 + tanh(theta[..4] . f_i + theta[4])`, evaluated
/// as `2 sigmoid(2x)` and kept inside the open interval `(0, 2)`.
pub fn weight(features: &Matrix, theta: &[f64]) -> Vec<f64> {
    assert_eq!(theta.len(), THETA_DIM, "theta must have {THETA_DIM} entries");
    assert_eq!(features.cols(), FEATURE_COUNT);
    features
        .iter_rows()
        .map(|f| {
            let x: f64 = f.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[FEATURE_COUNT];
            (2.0 / (1.0 + (-2.0 * x).exp())).clamp(f64::MIN_POSITIVE, WEIGHT_MAX)
        })
        .collect()
}

/// Adds i.i.d. `N(0, sigma^2)` to each coefficient.
pub fn explore<R: Rng + ?Sized>(theta: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return theta.to_vec();
    }
    theta
        .iter()
        .map(|&t| {
            let z: f64 = StandardNormal.sample(rng);
            t + sigma * z
        })
        .collect()
}

/// Actor output for a batch of states: scaled when bounded, bias column
/// zeroed when the bias is fixed.
pub(crate) fn actor_batch(actor: &Mlp, states: &Matrix, cfg: &StrategyConfig) -> Result<Matrix> {
    let mut theta = actor.forward(states)?;
    finish_theta(&mut theta, cfg);
    Ok(theta)
}

pub(crate) fn finish_theta(theta: &mut Matrix, cfg: &StrategyConfig) {
    if let Some(bound) = cfg.theta_bound {
        theta.as_mut_slice().iter_mut().for_each(|v| *v *= bound);
    }
    if !cfg.learn_bias {
        for r in 0..theta.rows() {
            theta.set(r, FEATURE_COUNT, 0.0);
        }
    }
}

/// Linear annealing of the exploration scale across search rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub sigma_start: f64,
    pub sigma_min: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            sigma_start: 0.5,
            sigma_min: 0.05,
        }
    }
}

impl ExplorationSchedule {
    pub fn sigma(&self, round: usize, total_rounds: usize) -> f64 {
        let frac = round as f64 / total_rounds.max(1) as f64;
        self.sigma_start + (self.sigma_min - self.sigma_start) * frac.min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TargetNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub embedding: StageEmbedding,
}

/// Actor, critic, stage embedding and their Adam states.
///
/// The actor optimizer covers `[actor params | embedding]`, the critic
/// optimizer `[critic params | embedding]`; the embedding is the only shared
/// tensor and is updated by both steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyModel {
    pub config: StrategyConfig,
    pub(crate) actor: Mlp,
    pub(crate) critic: Mlp,
    pub(crate) embedding: StageEmbedding,
    pub(crate) actor_opt: Optimizer,
    pub(crate) critic_opt: Optimizer,
    pub(crate) targets: Option<TargetNets>,
    /// Completed search rounds; also the exploration schedule position.
    pub episode_counter: u64,
    pub update_counter: u64,
}

impl StrategyModel {
    pub fn new<R: Rng + ?Sized>(config: StrategyConfig, stages: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if stages == 0 {
            return Err(Error::config("episode.stages", "must be positive"));
        }
        let actor = Mlp::new(config.actor_spec(), rng)?;
        let critic = Mlp::new(config.critic_spec(), rng)?;
        let embedding = StageEmbedding::new(stages, config.embedding_dim, rng);
        let emb_len = embedding.values.len();
        let actor_opt = Optimizer::new(OptimizerSpec::adam(config.actor_lr), actor.params().len() + emb_len);
        let critic_opt =
            Optimizer::new(OptimizerSpec::adam(config.critic_lr), critic.params().len() + emb_len);
        let targets = config.target_tau.map(|_| TargetNets {
            actor: actor.clone(),
            critic: critic.clone(),
            embedding: embedding.clone(),
        });
        Ok(Self {
            config,
            actor,
            critic,
            embedding,
            actor_opt,
            critic_opt,
            targets,
            episode_counter: 0,
            update_counter: 0,
        })
    }

    pub fn stages(&self) -> usize {
        self.embedding.stages
    }

    pub fn embedding(&self) -> &StageEmbedding {
        &self.embedding
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    /// Makes the actor emit `theta = 0` for every state (the null policy).
    pub fn zero_actor(&mut self) {
        self.actor.zero_final_layer();
        if let Some(t) = &mut self.targets {
            t.actor.zero_final_layer();
        }
    }

    /// Zeroes the critic's last layer so that `Q = 0` everywhere.
    pub fn zero_critic(&mut self) {
        self.critic.zero_final_layer();
        if let Some(t) = &mut self.targets {
            t.critic.zero_final_layer();
        }
    }

    pub fn state_vector(&self, phase: &PhaseDescriptor) -> Result<Vec<f64>> {
        phase.vector(&self.embedding)
    }

    pub fn actor_forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        ensure_len("actor state", self.config.state_dim(), s.len())?;
        let states = Matrix::from_vec(1, s.len(), s.to_vec())?;
        Ok(actor_batch(&self.actor, &states, &self.config)?.into_vec())
    }

    /// `theta_T = mu(s_T)` for a phase descriptor.
    pub fn policy(&self, phase: &PhaseDescriptor) -> Result<Vec<f64>> {
        self.actor_forward(&self.state_vector(phase)?)
    }

    pub fn critic_forward(&self, s: &[f64], theta: &[f64]) -> Result<f64> {
        ensure_len("critic state", self.config.state_dim(), s.len())?;
        ensure_len("critic theta", THETA_DIM, theta.len())?;
        let mut x = s.to_vec();
        x.extend_from_slice(theta);
        let out = self.critic.forward(&Matrix::from_vec(1, x.len(), x)?)?;
        Ok(out.get(0, 0))
    }

    /// Checksum over every trainable tensor.
    pub fn checksum(&self) -> u64 {
        let mut all = self.actor.params().values.clone();
        all.extend(&self.critic.params().values);
        all.extend(&self.embedding.values);
        crate::nn::ParameterVector {
            values: all,
            layout: Vec::new(),
        }
        .checksum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        self.actor.params().ensure_finite("actor")?;
        self.critic.params().ensure_finite("critic")?;
        if self.embedding.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stage embedding".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            stages: self.stages(),
            state_dim: self.config.state_dim(),
            theta_dim: THETA_DIM,
            episode_counter: self.episode_counter,
            update_counter: self.update_counter,
            actor_opt: self.actor_opt.spec.clone(),
            actor_opt_steps: self.actor_opt.steps,
            critic_opt: self.critic_opt.spec.clone(),
            critic_opt_steps: self.critic_opt.steps,
            has_targets: self.targets.is_some(),
        };
        let mut cols = vec![
            ("actor", Column::F64(self.actor.params().values.clone())),
            ("critic", Column::F64(self.critic.params().values.clone())),
            ("embedding", Column::F64(self.embedding.values.clone())),
            ("actor_opt.m", Column::F64(self.actor_opt.first.clone())),
            ("actor_opt.v", Column::F64(self.actor_opt.second.clone())),
            ("critic_opt.m", Column::F64(self.critic_opt.first.clone())),
            ("critic_opt.v", Column::F64(self.critic_opt.second.clone())),
        ];
        if let Some(t) = &self.targets {
            cols.push(("target.actor", Column::F64(t.actor.params().values.clone())));
            cols.push(("target.critic", Column::F64(t.critic.params().values.clone())));
            cols.push(("target.embedding", Column::F64(t.embedding.values.clone())));
        }
        checkpoint::encode("strategy", &meta, &cols)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = checkpoint::decode::<CheckpointMeta>("strategy", bytes)?;
        let meta = &d.meta;
        meta.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        if meta.theta_dim != THETA_DIM || meta.state_dim != meta.config.state_dim() {
            return Err(Error::Checkpoint("dimension mismatch".into()));
        }
        let cfg = meta.config.clone();
        let stages = meta.stages;
        let (a_spec, c_spec) = (cfg.actor_spec(), cfg.critic_spec());
        let mlp = |spec: &MlpSpec, values: Vec<f64>| -> Result<Mlp> {
            let p = ParameterVector::from_values(values, spec.layout())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            Mlp::from_params(spec.clone(), p)
        };
        let emb = |values: Vec<f64>| -> Result<StageEmbedding> {
            if values.len() != stages * cfg.embedding_dim {
                return Err(Error::Checkpoint("embedding size mismatch".into()));
            }
            Ok(StageEmbedding {
                stages,
                dim: cfg.embedding_dim,
                values,
            })
        };
        let actor = mlp(&a_spec, d.take_f64("actor")?)?;
        let critic = mlp(&c_spec, d.take_f64("critic")?)?;
        let embedding = emb(d.take_f64("embedding")?)?;
        let opt = |spec: OptimizerSpec, steps: u64, m: Vec<f64>, v: Vec<f64>, n: usize| {
            if m.len() != n || v.len() != n {
                return Err(Error::Checkpoint("optimizer state size mismatch".into()));
            }
            Ok(Optimizer {
                spec,
                first: m,
                second: v,
                steps,
            })
        };
        let emb_len = embedding.values.len();
        let actor_opt = opt(
            d.meta.actor_opt.clone(),
            d.meta.actor_opt_steps,
            d.take_f64("actor_opt.m")?,
            d.take_f64("actor_opt.v")?,
            actor.params().len() + emb_len,
        )?;
        let critic_opt = opt(
            d.meta.critic_opt.clone(),
            d.meta.critic_opt_steps,
            d.take_f64("critic_opt.m")?,
            d.take_f64("critic_opt.v")?,
            critic.params().len() + emb_len,
        )?;
        let targets = if d.meta.has_targets {
            Some(TargetNets {
                actor: mlp(&a_spec, d.take_f64("target.actor")?)?,
                critic: mlp(&c_spec, d.take_f64("target.critic")?)?,
                embedding: emb(d.take_f64("target.embedding")?)?,
            })
        } else {
            None
        };
        if !d.columns.is_empty() {
            return Err(Error::Checkpoint("unexpected extra columns".into()));
        }
        Ok(Self {
            config: cfg,
            actor,
            critic,
            embedding,
            actor_opt,
            critic_opt,
            targets,
            episode_counter: d.meta.episode_counter,
            update_counter: d.meta.update_counter,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: StrategyConfig,
    stages: usize,
    state_dim: usize,
    theta_dim: usize,
    episode_counter: u64,
    update_counter: u64,
    actor_opt: OptimizerSpec,
    actor_opt_steps: u64,
    critic_opt: OptimizerSpec,
    critic_opt_steps: u64,
    has_targets: bool,
}
