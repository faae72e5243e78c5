//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use prach_sentinel::cnn::{one_hot, Model};
use prach_sentinel::dataset::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zadoff-Chu root straight from the closed form, in floating point.
pub fn zc_direct(u: usize, n: usize) -> Vec<C64> {
    (0..n)
        .map(|k| {
            let k = k as f64;
            C64::from_polar(1.0, -PI * u as f64 * k * (k + 1.0) / n as f64)
        })
        .collect()
}

/// `(1/N) sum_n a[n] conj(b[(n + tau) mod N])`, one lag at a time.
pub fn cyclic_xcorr(a: &[C64], b: &[C64], tau: usize) -> C64 {
    let n = a.len();
    let s: C64 = (0..n).map(|i| a[i] * b[(i + tau) % n].conj()).sum();
    s / n as f64
}

/// Bessel J0 by composite Simpson quadrature of `(1/pi) int_0^pi cos(x sin t) dt`.
pub fn bessel_j0(x: f64) -> f64 {
    let m = 2000;
    let h = PI / m as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..m {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / PI
}

/// Kolmogorov-Smirnov statistic of envelope samples against Rayleigh with `E[r^2] = mean_power`.
pub fn rayleigh_ks(samples: &mut [f64], mean_power: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let cdf = 1.0 - (-r * r / mean_power).exp();
            (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

pub fn random_complex(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

pub fn gaussian_features(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
/// Step used instead when `FD_STEP` straddles a ReLU kink.
pub const FD_KINK_STEP: f64 = 1e-7;
/// Below this magnitude a gradient component is compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy)]
enum Coord {
    Param(usize, usize),
    Input(usize),
}

fn activity(model: &Model<f64>, x: &[f64]) -> (f64, Vec<bool>) {
    let c = model.forward(x).unwrap();
    let mask = c.relu1.iter().chain(&c.relu2).chain(&c.relu3).map(|v| *v > 0.0).collect();
    (c.logits.iter().map(|v| *v).sum(), mask)
}

/// Central difference along one coordinate. Returns the estimate and whether
/// the default step crossed a ReLU kink (detected by a change in the activity pattern).
fn central(model: &Model<f64>, x: &[f64], target: &[f64], at: Coord) -> (f64, bool) {
    let eval = |step: f64| {
        let mut m = model.clone();
        let mut xp = x.to_vec();
        match at {
            Coord::Param(b, i) => m.params_mut()[b][i] += step,
            Coord::Input(i) => xp[i] += step,
        }
        (m.loss(&xp, target).unwrap(), activity(&m, &xp).1)
    };
    let (up, mask_up) = eval(FD_STEP);
    let (down, mask_down) = eval(-FD_STEP);
    if mask_up == mask_down {
        return ((up - down) / (2.0 * FD_STEP), false);
    }
    let (up, _) = eval(FD_KINK_STEP);
    let (down, _) = eval(-FD_KINK_STEP);
    ((up - down) / (2.0 * FD_KINK_STEP), true)
}

/// Result of [`gradient_check`]: worst relative error per block, and the number
/// of components re-differenced because the default step crossed a kink.
pub struct GradCheck {
    pub worst: Vec<(String, f64)>,
    pub kink_retries: usize,
}

/// Compares backprop with central differences per parameter block (conv1 w/b,
/// conv2 w/b, conv3 w/b, fc w/b) and for the input.
///
/// Checks the `per_block` largest analytic components of each block plus as many
/// random ones, or every component when the block is small enough.
pub fn gradient_check(model: &Model<f64>, x: &[f64], label: Label, per_block: usize, seed: u64) -> GradCheck {
    let target = one_hot::<f64>(label, model.spec.outputs);
    let cache = model.forward(x).unwrap();
    let grads = model.backward(&cache, &target, true).unwrap();
    let names = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "fc.w", "fc.b"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
    let pick = |g: &[f64], rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..g.len()).collect();
        if 2 * per_block >= g.len() {
            return idx;
        }
        idx.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()));
        idx.truncate(per_block);
        for _ in 0..per_block {
            idx.push(rng.random_range(0..g.len()));
        }
        idx
    };

    let mut worst = Vec::new();
    let mut kink_retries = 0;
    let analytic = grads.slices();
    let blocks = names
        .iter()
        .enumerate()
        .map(|(b, name)| (name.to_string(), analytic[b], Some(b)))
        .chain(std::iter::once(("input".to_string(), grads.input.as_deref().unwrap(), None)));
    for (name, g, block) in blocks {
        let mut w: f64 = 0.0;
        for i in pick(g, &mut rng) {
            let at = block.map_or(Coord::Input(i), |b| Coord::Param(b, i));
            let (numeric, kinked) = central(model, x, &target, at);
            kink_retries += kinked as usize;
            w = w.max(rel(g[i], numeric));
        }
        worst.push((name, w));
    }
    GradCheck { worst, kink_retries }
}
