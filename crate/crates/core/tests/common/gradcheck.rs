//! Central finite-difference checks (`h = 1e-5`, float64). Each function
//! runs one randomized case and returns the largest relative error, with an
//! absolute floor of 1e-6 in the denominator for near-zero components.
//! Probes whose perturbation flips a ReLU on or off are skipped: the loss is
//! not differentiable across the kink, so the central difference is meaningless.

use autoweight::nn::{
    focal_loss_and_grad, softmax_cross_entropy, ClassifierNet, ClassifierSpec, Matrix, Mlp, MlpSpec,
};
use autoweight::seed;
use autoweight::strategy::StrategyConfig;
use rand::Rng;

pub const H: f64 = 1e-5;
/// Parameters probed per case for the larger networks.
const PROBES: usize = 60;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// On/off pattern of every hidden unit for the given input.
fn relu_pattern(net: &Mlp, x: &Matrix) -> Vec<bool> {
    let cache = net.forward_cached(x).unwrap();
    let hidden = cache.pre_activations.len() - 1;
    cache.pre_activations[..hidden]
        .iter()
        .flat_map(|z| z.as_slice().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect()
}

fn probe_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= PROBES {
        (0..n).collect()
    } else {
        (0..PROBES).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Weighted mean cross-entropy of a classifier against `backward_weighted`.
/// With `unit_weights` every weight is 1 (plain classifier gradient).
pub fn classifier_case(case: u64, unit_weights: bool) -> f64 {
    let mut rng = seed::rng(seed::derive(0xC1A5, &[case, unit_weights as u64]));
    let spec = ClassifierSpec {
        input_dim: rng.random_range(1..5),
        hidden: vec![rng.random_range(2..9); rng.random_range(0..3)],
        class_count: rng.random_range(2..6),
    };
    let b = rng.random_range(1..9);
    let mut net = ClassifierNet::new(spec.clone(), &mut rng).unwrap();
    let x = random_matrix(b, spec.input_dim, 2.0, &mut rng);
    let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..spec.class_count)).collect();
    let w: Vec<f64> = (0..b)
        .map(|_| if unit_weights { 1.0 } else { rng.random_range(0.01..1.99) })
        .collect();
    let loss = |net: &ClassifierNet| {
        let sm = softmax_cross_entropy(&net.forward(&x).unwrap(), &y).unwrap();
        sm.losses.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / b as f64
    };
    let g = net.backward_weighted(&x, &y, &w).unwrap();
    let base = relu_pattern(net.mlp(), &x);
    let mut worst = 0.0f64;
    for k in 0..g.len() {
        net.params_mut().values[k] += H;
        let up = loss(&net);
        let kink = relu_pattern(net.mlp(), &x) != base;
        net.params_mut().values[k] -= 2.0 * H;
        let down = loss(&net);
        let kink = kink || relu_pattern(net.mlp(), &x) != base;
        net.params_mut().values[k] += H;
        if kink {
            continue;
        }
        worst = worst.max(rel_err(g.values[k], (up - down) / (2.0 * H)));
    }
    worst
}

/// Gradient of the focal loss with respect to the logits.
pub fn focal_case(case: u64) -> f64 {
    let mut rng = seed::rng(seed::derive(0xF0CA, &[case]));
    let b = rng.random_range(1..6);
    let c = rng.random_range(2..6);
    let gamma = [0.0, 0.5, 1.0, 2.0, 3.5][(case % 5) as usize];
    let mut z = random_matrix(b, c, 3.0, &mut rng);
    let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let (_, g) = focal_loss_and_grad(&z, &y, gamma).unwrap();
    // Each logit only affects its own row's loss; differencing that loss alone
    // keeps the other rows' round-off out of the comparison.
    let row_loss = |z: &Matrix, r: usize| focal_loss_and_grad(z, &y, gamma).unwrap().0[r];
    let mut worst = 0.0f64;
    for k in 0..b * c {
        z.as_mut_slice()[k] += H;
        let up = row_loss(&z, k / c);
        z.as_mut_slice()[k] -= 2.0 * H;
        let down = row_loss(&z, k / c);
        z.as_mut_slice()[k] += H;
        worst = worst.max(rel_err(g.as_slice()[k], (up - down) / (2.0 * H)));
    }
    worst
}

/// Parameter and input gradients of `sum(out * R)` for an MLP.
fn mlp_case(spec: MlpSpec, case: u64, tag: u64) -> f64 {
    let mut rng = seed::rng(seed::derive(tag, &[case]));
    let mut net = Mlp::new(spec.clone(), &mut rng).unwrap();
    let b = rng.random_range(1..6);
    let mut x = random_matrix(b, spec.sizes[0], 1.5, &mut rng);
    let r = random_matrix(b, *spec.sizes.last().unwrap(), 1.0, &mut rng);
    let objective = |net: &Mlp, x: &Matrix| {
        let out = net.forward(x).unwrap();
        out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let cache = net.forward_cached(&x).unwrap();
    let (g, dx) = net.backward(&cache, &r).unwrap();
    let base = relu_pattern(&net, &x);
    let mut worst = 0.0f64;
    for k in probe_indices(g.len(), &mut rng) {
        net.params_mut().values[k] += H;
        let up = objective(&net, &x);
        let kink = relu_pattern(&net, &x) != base;
        net.params_mut().values[k] -= 2.0 * H;
        let down = objective(&net, &x);
        let kink = kink || relu_pattern(&net, &x) != base;
        net.params_mut().values[k] += H;
        if kink {
            continue;
        }
        worst = worst.max(rel_err(g.values[k], (up - down) / (2.0 * H)));
    }
    for k in 0..x.as_slice().len() {
        x.as_mut_slice()[k] += H;
        let up = objective(&net, &x);
        let kink = relu_pattern(&net, &x) != base;
        x.as_mut_slice()[k] -= 2.0 * H;
        let down = objective(&net, &x);
        let kink = kink || relu_pattern(&net, &x) != base;
        x.as_mut_slice()[k] += H;
        if kink {
            continue;
        }
        worst = worst.max(rel_err(dx.as_slice()[k], (up - down) / (2.0 * H)));
    }
    worst
}

fn strategy_config(case: u64) -> StrategyConfig {
    StrategyConfig {
        // A visible last layer so every parameter carries signal.
        final_layer_scale: 0.5,
        theta_bound: (case % 2 == 1).then_some(3.0),
        ..StrategyConfig::default()
    }
}

pub fn actor_case(case: u64) -> f64 {
    mlp_case(strategy_config(case).actor_spec(), case, 0xAC70)
}

pub fn critic_case(case: u64) -> f64 {
    mlp_case(strategy_config(case).critic_spec(), case, 0xC217)
}

/// Runs `cases` cases of `check` and returns the worst error.
pub fn worst_over(cases: u64, check: impl Fn(u64) -> f64) -> f64 {
    (0..cases).map(check).fold(0.0, f64::max)
}
