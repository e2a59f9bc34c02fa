//! Central finite differences (step 1e-5) against the analytic backward passes.
//!
//! Error metric per scalar: `|a - n| / max(|a|, |n|, 1e-5)`. The floor keeps
//! round-off in near-zero derivatives from dominating; below it the check is
//! an absolute one at 1e-9.

use std::time::Instant;

use holomem::nn::layers::{leaky_relu_grad, max_pool_backward, relu_grad};
use holomem::nn::{
    build_cnn, build_mlp, conv2d_backward, conv2d_forward, cross_entropy_loss, dense_backward,
    dense_forward, leaky_relu, max_pool_2x2, relu, softmax, softmax_cross_entropy_grad, CnnConfig,
    ConvLayer, DenseLayer, MlpConfig, Network, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
const INSTANCES: u64 = 3;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from 0 by `gap`, for checks across activation kinks.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn weighted(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Max error of `analytic` against central differences of `loss` over every
/// entry of `x`.
fn check_all(x: &mut Tensor<f64>, analytic: &Tensor<f64>, loss: &mut dyn FnMut(&Tensor<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let lp = loss(x);
        x.data_mut()[i] = orig - STEP;
        let lm = loss(x);
        x.data_mut()[i] = orig;
        worst = worst.max(rel(analytic.data()[i], (lp - lm) / (2.0 * STEP)));
    }
    worst
}

fn conv_case(c: usize, m: usize, k: usize, side: usize) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random(&[c, side, side], &mut rng);
        let mut filters = random(&[m, c, k, k], &mut rng);
        let mut biases = random(&[m], &mut rng);
        let r = random(&[m, side, side], &mut rng);
        let layer = ConvLayer::new(filters.clone(), biases.clone()).unwrap();
        let (gx, gf, gb) = conv2d_backward(&x, &layer, &r).unwrap();
        worst = worst.max(check_all(&mut x, &gx, &mut |x| weighted(&r, &conv2d_forward(x, &layer).unwrap())));
        let b = biases.clone();
        worst = worst.max(check_all(&mut filters, &gf, &mut |f| {
            weighted(&r, &conv2d_forward(&x, &ConvLayer::new(f.clone(), b.clone()).unwrap()).unwrap())
        }));
        let f = filters.clone();
        worst = worst.max(check_all(&mut biases, &gb, &mut |b| {
            weighted(&r, &conv2d_forward(&x, &ConvLayer::new(f.clone(), b.clone()).unwrap()).unwrap())
        }));
    }
    worst
}

fn dense_case() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let (n_in, n_out) = (13, 7);
        let mut x = random(&[n_in], &mut rng);
        let mut w = random(&[n_out, n_in], &mut rng);
        let mut b = random(&[n_out], &mut rng);
        let r = random(&[n_out], &mut rng);
        let layer = DenseLayer::new(w.clone(), b.clone()).unwrap();
        let (gx, gw, gb) = dense_backward(&x, &layer, &r).unwrap();
        worst = worst.max(check_all(&mut x, &gx, &mut |x| weighted(&r, &dense_forward(x, &layer).unwrap())));
        let bc = b.clone();
        worst = worst.max(check_all(&mut w, &gw, &mut |w| {
            weighted(&r, &dense_forward(&x, &DenseLayer::new(w.clone(), bc.clone()).unwrap()).unwrap())
        }));
        let wc = w.clone();
        worst = worst.max(check_all(&mut b, &gb, &mut |b| {
            weighted(&r, &dense_forward(&x, &DenseLayer::new(wc.clone(), b.clone()).unwrap()).unwrap())
        }));
    }
    worst
}

fn activation_case(leaky: bool) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let mut x = away_from_zero(&[4, 6, 6], 1e-3, &mut rng);
        let r = random(&[4, 6, 6], &mut rng);
        let d = |v: f64| if leaky { leaky_relu_grad(v) } else { relu_grad(v) };
        let analytic = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(r.data()).map(|(&v, &g)| g * d(v)).collect(),
        )
        .unwrap();
        worst = worst.max(check_all(&mut x, &analytic, &mut |x| {
            weighted(&r, &if leaky { leaky_relu(x) } else { relu(x) })
        }));
    }
    worst
}

fn pool_case() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
        // distinct values 0.01 apart so no 2x2 window is near a tie
        let mut values: Vec<f64> = (0..3 * 8 * 8).map(|i| i as f64 * 0.01 - 1.0).collect();
        values.shuffle(&mut rng);
        let mut x = Tensor::new(vec![3, 8, 8], values).unwrap();
        let r = random(&[3, 4, 4], &mut rng);
        let (_, argmax) = max_pool_2x2(&x).unwrap();
        let analytic = Tensor::new(vec![3, 8, 8], max_pool_backward(r.data(), &argmax, x.len())).unwrap();
        worst = worst.max(check_all(&mut x, &analytic, &mut |x| weighted(&r, &max_pool_2x2(x).unwrap().0)));
    }
    worst
}

fn softmax_ce_case() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let mut logits = random(&[4, 16], &mut rng);
        logits.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        let labels: Vec<u8> = (0..4).map(|_| rng.random_range(0..16)).collect();
        let analytic = softmax_cross_entropy_grad(&softmax(&logits), &labels).unwrap();
        worst = worst.max(check_all(&mut logits, &analytic, &mut |z| {
            cross_entropy_loss(&softmax(z), &labels).unwrap()
        }));
    }
    worst
}

/// Result of checking one network instance.
#[derive(Default)]
struct NetworkCheck {
    worst: f64,
    checked: usize,
    /// Coordinates whose ±step interval straddles an activation or pooling
    /// kink: the central difference fails but the analytic value matches one
    /// of the one-sided differences.
    kinks: usize,
}

/// Checks `per_tensor` randomly chosen entries of every parameter tensor
/// (all entries when `per_tensor` is `None`).
fn network_case(mut net: Network<f64>, per_tensor: Option<usize>, seed: u64) -> NetworkCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = net.input_shape().to_vec();
    let b = 2;
    let mut full = vec![b];
    full.extend(&shape);
    let n: usize = full.iter().product();
    let x = Tensor::new(full, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels: Vec<u8> = (0..b).map(|_| rng.random_range(0..16)).collect();
    net.forward_train(&x, None).unwrap();
    let grads = net.backward(&labels).unwrap();
    let l0 = net.loss(&x, &labels).unwrap();
    let mut out = NetworkCheck::default();
    for (t, g) in grads.tensors.iter().enumerate() {
        let mut idx: Vec<usize> = (0..g.len()).collect();
        if let Some(k) = per_tensor {
            idx.shuffle(&mut rng);
            idx.truncate(k);
        }
        for i in idx {
            let orig = net.parameters()[t].data()[i];
            net.parameters_mut()[t].data_mut()[i] = orig + STEP;
            let lp = net.loss(&x, &labels).unwrap();
            net.parameters_mut()[t].data_mut()[i] = orig - STEP;
            let lm = net.loss(&x, &labels).unwrap();
            net.parameters_mut()[t].data_mut()[i] = orig;
            let a = g.data()[i];
            let e = rel(a, (lp - lm) / (2.0 * STEP));
            out.checked += 1;
            if e >= TOLERANCE {
                let one_sided = rel(a, (lp - l0) / STEP).min(rel(a, (l0 - lm) / STEP));
                if one_sided < 1e-3 {
                    out.kinks += 1;
                    continue;
                }
            }
            out.worst = out.worst.max(e);
        }
    }
    out
}

fn small_cnn() -> CnnConfig {
    CnnConfig {
        input_side: 8,
        conv1_filters: 2,
        conv2_filters: 3,
        hidden_units: 8,
        ..CnnConfig::default()
    }
}

pub fn criterion_2() -> Vec<(String, Outcome)> {
    let start = Instant::now();
    let mut results: Vec<(&str, f64)> = vec![
        ("conv H=5", conv_case(2, 3, 5, 7)),
        ("conv H=3", conv_case(3, 4, 3, 6)),
        ("dense", dense_case()),
        ("leaky ReLU", activation_case(true)),
        ("ReLU", activation_case(false)),
        ("max-pool routing", pool_case()),
        ("softmax+CE", softmax_ce_case()),
    ];
    let mut nets = [NetworkCheck::default(), NetworkCheck::default()];
    for seed in 0..INSTANCES {
        let small_mlp = MlpConfig { input_side: 6, hidden_units: 8, classes: 16 };
        let cases = [
            (0, network_case(build_cnn(&CnnConfig::default(), seed).unwrap(), Some(40), 50 + seed)),
            (0, network_case(build_cnn(&small_cnn(), seed).unwrap(), None, 60 + seed)),
            (1, network_case(build_mlp(&MlpConfig::default(), seed).unwrap(), Some(60), 70 + seed)),
            (1, network_case(build_mlp(&small_mlp, seed).unwrap(), None, 80 + seed)),
        ];
        for (k, c) in cases {
            nets[k].worst = nets[k].worst.max(c.worst);
            nets[k].checked += c.checked;
            nets[k].kinks += c.kinks;
        }
    }
    results.push(("CNN", nets[0].worst));
    results.push(("MLP", nets[1].worst));
    let secs = start.elapsed().as_secs_f64();
    let pass = results.iter().all(|(_, e)| *e < TOLERANCE) && secs < 60.0;
    let detail = format!(
        "max relative error {} over {INSTANCES} instances each (< {TOLERANCE:.0e}); network coordinates checked CNN {} / MLP {}, excluded as kink crossings CNN {} / MLP {}; suite {secs:.1} s (< 60 s)",
        results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", "),
        nets[0].checked,
        nets[1].checked,
        nets[0].kinks,
        nets[1].kinks,
    );
    vec![("2 gradient suite".into(), Outcome::new(pass, detail))]
}
