//! Tree-structured Parzen Estimator sampling over [0, 1]^d, one independent
//! estimator per coordinate.
//!
//! Completed observations split into an elite good set (the best
//! ceil(quantile·√n) scores) and the rest. Each set gets a kernel density of
//! truncated Gaussians whose per-kernel bandwidth is the larger
//! neighbor-to-neighbor gap (domain borders count as neighbors), clipped
//! below at `bandwidth_floor`, plus one uniform prior kernel. Candidates are
//! drawn from the good density and the one maximizing the good/bad density
//! ratio wins.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpeParams {
    /// Elite fraction: the good set holds the best ceil(quantile·√n)
    /// observations.
    pub quantile: f64,
    /// Candidates drawn from the good density per coordinate.
    pub candidates: usize,
    /// Lower clip for kernel bandwidths.
    pub bandwidth_floor: f64,
    /// Observation count below which sampling stays uniform.
    pub startup_trials: usize,
}

impl Default for TpeParams {
    fn default() -> Self {
        TpeParams {
            quantile: 0.25,
            candidates: 24,
            bandwidth_floor: 0.05,
            startup_trials: 20,
        }
    }
}

/// Sorted (center, bandwidth) kernels. Each bandwidth is the larger gap to
/// the neighboring center, with the domain borders acting as outermost
/// neighbors, clipped to [floor, 1].
fn kernels(values: &[f64], floor: f64) -> Vec<(f64, f64)> {
    let mut mus = values.to_vec();
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = mus.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let left = if i > 0 { mus[i] - mus[i - 1] } else { mus[i] };
        let right = if i + 1 < n {
            mus[i + 1] - mus[i]
        } else {
            1.0 - mus[i]
        };
        out.push((mus[i], left.max(right).clamp(floor, 1.0)));
    }
    out
}

/// Standard normal CDF via the Abramowitz–Stegun erf approximation.
fn phi(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
    let erf = 1.0
        - t * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))))
            * (-x * x / 2.0).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

/// Log density of the kernel mixture blended with one uniform prior kernel.
/// Gaussians are renormalized by their in-[0,1] mass so the density has no
/// artificial dip at the boundary.
fn log_density(x: f64, ks: &[(f64, f64)]) -> f64 {
    let mut acc = 1.0; // uniform prior kernel, density 1 on [0, 1]
    for &(mu, h) in ks {
        let z = (x - mu) / h;
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        let mass = (phi((1.0 - mu) / h) - phi(-mu / h)).max(1e-12);
        acc += norm * (-0.5 * z * z).exp() / mass;
    }
    (acc / (ks.len() + 1) as f64)
        .max(f64::MIN_POSITIVE)
        .ln()
}

/// Draws the next point in [0, 1]^d. `observations` are (coordinates, score)
/// pairs of completed trials; higher scores are better. Degenerate histories
/// fall back to uniform sampling.
pub fn tpe_sample(
    observations: &[(Vec<f64>, f64)],
    dims: usize,
    params: &TpeParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    if observations.len() < params.startup_trials.max(2) {
        return (0..dims).map(|_| rng.gen_range(0.0..=1.0)).collect();
    }

    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_by(|&a, &b| {
        observations[b]
            .1
            .partial_cmp(&observations[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n_good = ((params.quantile * (observations.len() as f64).sqrt()).ceil() as usize)
        .clamp(2, observations.len() - 1);

    let mut point = Vec::with_capacity(dims);
    for d in 0..dims {
        let good: Vec<f64> = order[..n_good]
            .iter()
            .map(|&i| observations[i].0[d])
            .collect();
        let bad: Vec<f64> = order[n_good..]
            .iter()
            .map(|&i| observations[i].0[d])
            .collect();
        let good_kernels = kernels(&good, params.bandwidth_floor);
        let bad_kernels = kernels(&bad, params.bandwidth_floor);

        let mut best = f64::NEG_INFINITY;
        let mut best_x = rng.gen_range(0.0..=1.0);
        for _ in 0..params.candidates.max(1) {
            // one extra slot is the uniform prior kernel
            let slot = rng.gen_range(0..=good_kernels.len());
            let x = if slot == good_kernels.len() {
                rng.gen_range(0.0..=1.0)
            } else {
                let (mu, h) = good_kernels[slot];
                (mu + gaussian(rng) * h).clamp(0.0, 1.0)
            };
            let ratio = log_density(x, &good_kernels) - log_density(x, &bad_kernels);
            if ratio > best {
                best = ratio;
                best_x = x;
            }
        }
        point.push(best_x);
    }
    point
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
