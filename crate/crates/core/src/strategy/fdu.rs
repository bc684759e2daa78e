//! Full-buffer update: every epoch each worker sweeps its own shuffle of the
//! whole replay buffer in mini-batches; per step, worker gradients are
//! combined (averaged) and applied once, critic first, then actor.

use rand::seq::SliceRandom;

use super::model::{actor_batch, finish_theta, StrategyModel, TargetNets, THETA_DIM};
use super::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::StageEmbedding;
use crate::nn::{Matrix, Mlp};
use crate::seed::Rng;

/// Reduces per-worker gradients to the one applied by the optimizer.
pub trait GradientCombiner: Sync {
    fn combine(&self, grads: &[Vec<f64>]) -> Vec<f64>;
}

/// Arithmetic mean, summed in worker order.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanCombiner;

impl GradientCombiner for MeanCombiner {
    fn combine(&self, grads: &[Vec<f64>]) -> Vec<f64> {
        let n = grads.len();
        assert!(n > 0, "no worker gradients to combine");
        let mut out = grads[0].clone();
        for g in &grads[1..] {
            for (o, v) in out.iter_mut().zip(g) {
                *o += v;
            }
        }
        let inv = n as f64;
        out.iter_mut().for_each(|o| *o /= inv);
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FduStats {
    pub critic_steps: usize,
    pub actor_steps: usize,
    /// Per buffer slot: how many critic mini-batches (summed over workers) included it.
    pub critic_visits: Vec<u32>,
    pub actor_visits: Vec<u32>,
    pub mean_critic_loss: f64,
    pub mean_q: f64,
}

fn state_matrix(
    embedding: &StageEmbedding,
    phases: impl Iterator<Item = crate::features::PhaseDescriptor>,
) -> Result<Matrix> {
    let rows: Result<Vec<Vec<f64>>> = phases.map(|p| p.vector(embedding)).collect();
    Matrix::from_rows(&rows?)
}

/// TD targets `y_i = r_i + gamma * Q(s'_i, mu(s'_i))`, or `r_i` when done.
/// Bootstraps from the target networks when soft targets are enabled.
pub fn td_targets(model: &StrategyModel, batch: &[&Transition]) -> Result<Vec<f64>> {
    let (actor, critic, embedding) = match &model.targets {
        Some(TargetNets {
            actor,
            critic,
            embedding,
        }) => (actor, critic, embedding),
        None => (&model.actor, &model.critic, &model.embedding),
    };
    let gamma = model.config.gamma;
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    let mut bootstrap = vec![0.0; batch.len()];
    if !open.is_empty() && gamma != 0.0 {
        let s_next = state_matrix(embedding, open.iter().map(|&i| batch[i].s_next.clone()))?;
        let theta = actor_batch(actor, &s_next, &model.config)?;
        let q = critic.forward(&s_next.hstack(&theta)?)?;
        for (k, &i) in open.iter().enumerate() {
            bootstrap[i] = q.get(k, 0);
        }
    }
    Ok(batch
        .iter()
        .zip(bootstrap)
        .map(|(t, q)| if t.done { t.reward } else { t.reward + gamma * q })
        .collect())
}

fn scatter_embedding_grad(
    grad: &mut [f64],
    offset: usize,
    embedding: &StageEmbedding,
    d_state: &Matrix,
    batch: &[&Transition],
) -> Result<()> {
    for (r, t) in batch.iter().enumerate() {
        let range = embedding.row_range(t.s.stage)?;
        for (k, idx) in range.enumerate() {
            grad[offset + idx] += d_state.get(r, k);
        }
    }
    Ok(())
}

/// Gradient of the mean squared TD error over `[critic params | embedding]`.
fn critic_gradient(model: &StrategyModel, batch: &[&Transition]) -> Result<(Vec<f64>, f64)> {
    let targets = td_targets(model, batch)?;
    critic_gradient_for(model, batch, &targets)
}

/// Semi-gradient: `targets` are treated as constants.
fn critic_gradient_for(
    model: &StrategyModel,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let m = batch.len() as f64;
    let states = state_matrix(&model.embedding, batch.iter().map(|t| t.s.clone()))?;
    let thetas = Matrix::from_rows(&batch.iter().map(|t| t.theta.clone()).collect::<Vec<_>>())?;
    let cache = model.critic.forward_cached(&states.hstack(&thetas)?)?;
    let q = cache.output();
    let mut d_out = Matrix::zeros(batch.len(), 1);
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let err = targets[i] - q.get(i, 0);
        loss += err * err;
        d_out.set(i, 0, -2.0 * err / m);
    }
    loss /= m;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("critic loss {loss}")));
    }
    let (pgrad, d_in) = model.critic.backward(&cache, &d_out)?;
    let offset = pgrad.len();
    let mut grad = pgrad.values;
    grad.resize(offset + model.embedding.values.len(), 0.0);
    let d_state = d_in.columns(0, model.config.state_dim());
    scatter_embedding_grad(&mut grad, offset, &model.embedding, &d_state, batch)?;
    Ok((grad, loss))
}

/// Deterministic policy gradient of `-mean Q(s, mu(s))` over
/// `[actor params | embedding]`; the embedding receives gradient only
/// through the actor path.
fn actor_gradient(model: &StrategyModel, batch: &[&Transition]) -> Result<(Vec<f64>, f64)> {
    let m = batch.len() as f64;
    let sd = model.config.state_dim();
    let states = state_matrix(&model.embedding, batch.iter().map(|t| t.s.clone()))?;
    let a_cache = model.actor.forward_cached(&states)?;
    let mut theta = a_cache.output().clone();
    finish_theta(&mut theta, &model.config);
    let c_cache = model.critic.forward_cached(&states.hstack(&theta)?)?;
    let mean_q = c_cache.output().as_slice().iter().sum::<f64>() / m;
    if !mean_q.is_finite() {
        return Err(Error::NonFinite(format!("critic value {mean_q}")));
    }
    let d_out = Matrix::from_vec(batch.len(), 1, vec![-1.0 / m; batch.len()])?;
    let (_, d_in) = model.critic.backward(&c_cache, &d_out)?;
    // Chain rule through `finish_theta`: the same scale and bias masking.
    let mut d_theta = d_in.columns(sd, sd + THETA_DIM);
    finish_theta(&mut d_theta, &model.config);
    let (pgrad, d_state) = model.actor.backward(&a_cache, &d_theta)?;
    let offset = pgrad.len();
    let mut grad = pgrad.values;
    grad.resize(offset + model.embedding.values.len(), 0.0);
    let d_emb = d_state.columns(0, model.config.embedding_dim);
    scatter_embedding_grad(&mut grad, offset, &model.embedding, &d_emb, batch)?;
    Ok((grad, mean_q))
}

fn apply_group(
    opt: &mut crate::nn::Optimizer,
    net: &mut Mlp,
    embedding: &mut StageEmbedding,
    grad: &[f64],
) -> Result<()> {
    let n = net.params().len();
    let mut flat = net.params().values.clone();
    flat.extend_from_slice(&embedding.values);
    opt.step(&mut flat, grad)?;
    net.params_mut().values.copy_from_slice(&flat[..n]);
    embedding.values.copy_from_slice(&flat[n..]);
    Ok(())
}

fn soft_update(model: &mut StrategyModel) {
    let Some(tau) = model.config.target_tau else {
        return;
    };
    let Some(t) = model.targets.as_mut() else {
        return;
    };
    let blend = |dst: &mut [f64], src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    };
    blend(&mut t.actor.params_mut().values, &model.actor.params().values);
    blend(&mut t.critic.params_mut().values, &model.critic.params().values);
    blend(&mut t.embedding.values, &model.embedding.values);
}

/// Runs the full-buffer update. `shufflers` holds one RNG per worker; its
/// length is the worker count `N_a`.
pub fn fdu_update(
    model: &mut StrategyModel,
    buffer: &ReplayBuffer,
    shufflers: &mut [Rng],
    combiner: &dyn GradientCombiner,
    exec: Execution,
) -> Result<FduStats> {
    if buffer.is_empty() {
        return Err(Error::InvalidInput("full-buffer update on an empty buffer".into()));
    }
    if shufflers.is_empty() {
        return Err(Error::InvalidInput("need at least one worker".into()));
    }
    let n = buffer.len();
    let bs = model.config.batch_size;
    let mut stats = FduStats {
        critic_visits: vec![0; n],
        actor_visits: vec![0; n],
        ..FduStats::default()
    };
    let (mut loss_sum, mut q_sum) = (0.0, 0.0);
    for _ in 0..model.config.epochs {
        let perms: Vec<Vec<usize>> = shufflers
            .iter_mut()
            .map(|rng| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        for start in (0..n).step_by(bs) {
            let end = (start + bs).min(n);
            let batches: Vec<Vec<&Transition>> = perms
                .iter()
                .map(|p| p[start..end].iter().map(|&i| buffer.get(i)).collect())
                .collect();

            let snapshot: &StrategyModel = model;
            let critic: Result<Vec<(Vec<f64>, f64)>> = exec
                .map(&batches, |_, b| critic_gradient(snapshot, b))
                .into_iter()
                .collect();
            let critic = critic?;
            let grads: Vec<Vec<f64>> = critic.iter().map(|(g, _)| g.clone()).collect();
            loss_sum += critic.iter().map(|(_, l)| l).sum::<f64>() / critic.len() as f64;
            let g = combiner.combine(&grads);
            apply_group(&mut model.critic_opt, &mut model.critic, &mut model.embedding, &g)?;
            stats.critic_steps += 1;
            for p in &perms {
                p[start..end].iter().for_each(|&i| stats.critic_visits[i] += 1);
            }

            let snapshot: &StrategyModel = model;
            let actor: Result<Vec<(Vec<f64>, f64)>> = exec
                .map(&batches, |_, b| actor_gradient(snapshot, b))
                .into_iter()
                .collect();
            let actor = actor?;
            let grads: Vec<Vec<f64>> = actor.iter().map(|(g, _)| g.clone()).collect();
            q_sum += actor.iter().map(|(_, q)| q).sum::<f64>() / actor.len() as f64;
            let g = combiner.combine(&grads);
            apply_group(&mut model.actor_opt, &mut model.actor, &mut model.embedding, &g)?;
            stats.actor_steps += 1;
            for p in &perms {
                p[start..end].iter().for_each(|&i| stats.actor_visits[i] += 1);
            }
            soft_update(model);
        }
    }
    model.ensure_finite()?;
    model.update_counter += 1;
    stats.mean_critic_loss = loss_sum / stats.critic_steps as f64;
    stats.mean_q = q_sum / stats.actor_steps as f64;
    Ok(stats)
}
