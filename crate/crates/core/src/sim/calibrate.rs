//! Fits a lognormal-mixture lag model to three target percentiles.
//!
//! A single lognormal is pinned down by its median and one tail point, so it
//! generally cannot also hit the 99th percentile; the spike component supplies
//! the extra tail mass. The fit runs against the closed-form mixture quantile
//! and is then checked against seeded Monte-Carlo draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lag::LagModel;
use super::stats::nearest_rank;
use super::SimError;

/// Relative error allowed between empirical and target percentiles.
pub const CALIBRATION_TOLERANCE: f64 = 0.10;
/// Relative error the closed-form fit must reach before Monte-Carlo checking.
const FIT_TOLERANCE: f64 = 0.01;
/// Log-space spread of the spike component; an order of magnitude per ~2.3σ.
const SPIKE_SIGMA: f64 = 1.0;
/// Draw count the empirical check is sized for.
pub const VERIFICATION_DRAWS: usize = 1_000_000;
/// Largest nearest-rank standard error, relative to the quantile, accepted at
/// [`VERIFICATION_DRAWS`]. Keeps the tolerance at ten or more standard errors.
const MAX_QUANTILE_REL_SE: f64 = 0.01;
/// Candidate spike probabilities, tried in order.
const SPIKE_PROBABILITIES: [f64; 12] = [
    0.002, 0.005, 0.0075, 0.01, 0.015, 0.02, 0.03, 0.04, 0.05, 0.075, 0.1, 0.15,
];

const Z95: f64 = 1.644_853_626_951_472_2;
const QUANTILES: [f64; 3] = [0.50, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileTargets {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl QuantileTargets {
    pub fn new(p50: f64, p95: f64, p99: f64) -> Result<Self, SimError> {
        let ok = [p50, p95, p99].iter().all(|x| x.is_finite()) && 0.0 < p50 && p50 < p95 && p95 < p99;
        if !ok {
            return Err(SimError::CalibrationFailed(format!(
                "targets must satisfy 0 < p50 < p95 < p99, got ({p50}, {p95}, {p99})"
            )));
        }
        Ok(Self { p50, p95, p99 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p50, self.p95, self.p99]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: LagModel,
    pub targets: QuantileTargets,
    /// Closed-form p50/p95/p99 of `model`.
    pub analytic: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub draws: usize,
    pub seed: u64,
    pub empirical: [f64; 3],
    pub relative_error: [f64; 3],
    pub within_tolerance: bool,
}

fn mixture(base_mu: f64, base_sigma: f64, p: f64, spike_mu: f64) -> LagModel {
    LagModel::LognormalMixture {
        base_mu,
        base_sigma,
        spike_probability: p,
        spike_mu,
        spike_sigma: SPIKE_SIGMA,
        cap_seconds: None,
    }
}

fn analytic_quantiles(model: &LagModel) -> [f64; 3] {
    QUANTILES.map(|q| model.quantile(q))
}

fn max_relative_error(got: &[f64; 3], want: &[f64; 3]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| (g / w - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Asymptotic standard error of the empirical q-quantile over `n` draws,
/// relative to the quantile itself: `sqrt(q(1-q)/n) / (f(x_q) * x_q)`.
fn quantile_relative_se(model: &LagModel, q: f64, n: usize) -> f64 {
    let x = model.quantile(q);
    let h = 1e-4;
    let density = (model.cdf(x * (1.0 + h)) - model.cdf(x * (1.0 - h))) / (2.0 * h * x);
    (q * (1.0 - q) / n as f64).sqrt() / (density * x)
}

fn log_loss(model: &LagModel, targets: &[f64; 3]) -> f64 {
    analytic_quantiles(model)
        .iter()
        .zip(targets)
        .map(|(g, w)| (g.ln() - w.ln()).powi(2))
        .sum()
}

/// Fits a model whose p50/p95/p99 match `targets`.
///
/// A plain lognormal is used when it already fits. Otherwise, for each
/// candidate spike probability in increasing order, the base location, base
/// spread and spike location are solved by simplex search. The first
/// candidate that fits and whose percentiles are stable under sampling is
/// returned: the spike is as rare as the targets allow without the p99 landing
/// in a sparse stretch of the distribution.
pub fn calibrate_lag_model(targets: &QuantileTargets) -> Result<Calibration, SimError> {
    let want = targets.as_array();
    let base_mu = targets.p50.ln();
    let base_sigma = (targets.p95 / targets.p50).ln() / Z95;

    let plain = LagModel::LognormalMixture {
        base_mu,
        base_sigma,
        spike_probability: 0.0,
        spike_mu: base_mu,
        spike_sigma: base_sigma,
        cap_seconds: None,
    };
    let analytic = analytic_quantiles(&plain);
    if max_relative_error(&analytic, &want) <= FIT_TOLERANCE {
        return Ok(Calibration {
            model: plain,
            targets: *targets,
            analytic,
        });
    }

    let mut best: Option<(f64, LagModel)> = None;
    for &p in &SPIKE_PROBABILITIES {
        let objective = |x: &[f64; 3]| log_loss(&mixture(x[0], x[1].exp(), p, x[2]), &want);
        let start = [base_mu, base_sigma.max(1e-3).ln(), targets.p99.ln()];
        let x = nelder_mead(objective, start, 0.25, 4_000);
        let model = mixture(x[0], x[1].exp(), p, x[2]);
        let err = max_relative_error(&analytic_quantiles(&model), &want);
        let stable = QUANTILES
            .iter()
            .all(|&q| quantile_relative_se(&model, q, VERIFICATION_DRAWS) <= MAX_QUANTILE_REL_SE);
        if err <= FIT_TOLERANCE && stable {
            let analytic = analytic_quantiles(&model);
            return Ok(Calibration {
                model,
                targets: *targets,
                analytic,
            });
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, model));
        }
    }
    let (err, _) = best.expect("at least one candidate was tried");
    Err(SimError::CalibrationFailed(format!(
        "no stable fit; best candidate misses targets by {:.1}% (limit {:.1}%)",
        err * 100.0,
        FIT_TOLERANCE * 100.0
    )))
}

/// Empirical nearest-rank p50/p95/p99 over `draws` seeded samples.
pub fn empirical_quantiles(model: &LagModel, draws: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<f64> = (0..draws).map(|_| model.sample(&mut rng)).collect();
    samples.sort_by(f64::total_cmp);
    QUANTILES.map(|q| samples[nearest_rank(samples.len(), q) - 1])
}

pub fn verify_calibration(model: &LagModel, targets: &QuantileTargets, draws: usize, seed: u64) -> Verification {
    let empirical = empirical_quantiles(model, draws, seed);
    let want = targets.as_array();
    let relative_error = [0, 1, 2].map(|i| (empirical[i] / want[i] - 1.0).abs());
    Verification {
        draws,
        seed,
        empirical,
        within_tolerance: relative_error.iter().all(|e| *e <= CALIBRATION_TOLERANCE),
        relative_error,
    }
}

/// Downhill simplex minimisation over three variables.
fn nelder_mead(f: impl Fn(&[f64; 3]) -> f64, start: [f64; 3], step: f64, max_iter: usize) -> [f64; 3] {
    const N: usize = 3;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += step;
        simplex.push((p, f(&p)));
    }
    let combine = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] { [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i])) };

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[N].1 - simplex[0].1 < 1e-16 {
            break;
        }
        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += p[i] / N as f64;
            }
        }
        let worst = simplex[N].0;
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = combine(&centroid, &worst, 0.5);
            let fc = f(&contracted);
            if fc < simplex[N].1 {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p = combine(&best, &entry.0, 0.5);
                    *entry = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone_targets() {
        assert!(QuantileTargets::new(5.0, 4.0, 3.0).is_err());
        assert!(QuantileTargets::new(0.0, 1.0, 2.0).is_err());
        assert!(QuantileTargets::new(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn simplex_finds_quadratic_minimum() {
        let x = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + (x[2] - 0.5).powi(2),
            [0.0; 3],
            0.5,
            2_000,
        );
        for (got, want) in x.iter().zip([1.0, -2.0, 0.5]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn near_equal_targets_give_near_constant_model() {
        let t = QuantileTargets::new(1.0, 1.01, 1.02).unwrap();
        let c = calibrate_lag_model(&t).unwrap();
        match c.model {
            LagModel::LognormalMixture {
                base_sigma,
                spike_probability,
                ..
            } => {
                assert_eq!(spike_probability, 0.0);
                assert!(base_sigma < 0.01);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(verify_calibration(&c.model, &t, 200_000, 1).within_tolerance);
    }
}
