use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::SimError;

/// Simulation time in whole microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest microsecond; negative input clamps to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs.max(0.0) * 1e6).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// Seconds with microsecond resolution, e.g. `28.500000`.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Replication delay distribution of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagModel {
    Constant {
        seconds: f64,
    },
    /// With probability `1 - spike_probability` draws `exp(N(base_mu, base_sigma))`,
    /// otherwise `exp(N(spike_mu, spike_sigma))`; optionally clamped.
    LognormalMixture {
        base_mu: f64,
        base_sigma: f64,
        spike_probability: f64,
        spike_mu: f64,
        spike_sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap_seconds: Option<f64>,
    },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn lognormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let ln_x = x.ln();
    if sigma == 0.0 {
        return if ln_x >= mu { 1.0 } else { 0.0 };
    }
    std_normal_cdf((ln_x - mu) / sigma)
}

impl LagModel {
    pub fn constant(seconds: f64) -> Self {
        LagModel::Constant { seconds }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidLagModel(m.to_string()));
        match *self {
            LagModel::Constant { seconds } if !(seconds.is_finite() && seconds >= 0.0) => {
                bad("constant lag must be finite and non-negative")
            }
            LagModel::Constant { .. } => Ok(()),
            LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_probability,
                spike_mu,
                spike_sigma,
                cap_seconds,
            } => {
                if ![base_mu, base_sigma, spike_mu, spike_sigma]
                    .iter()
                    .all(|x| x.is_finite())
                {
                    return bad("mixture parameters must be finite");
                }
                if base_sigma < 0.0 || spike_sigma < 0.0 {
                    return bad("sigmas must be non-negative");
                }
                if !(0.0..=1.0).contains(&spike_probability) {
                    return bad("spike_probability must lie in [0, 1]");
                }
                if let Some(cap) = cap_seconds {
                    if !(cap.is_finite() && cap > 0.0) {
                        return bad("cap_seconds must be finite and positive");
                    }
                }
                Ok(())
            }
        }
    }

    pub fn with_cap(self, cap: Option<f64>) -> Self {
        match self {
            LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_probability,
                spike_mu,
                spike_sigma,
                ..
            } => LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_probability,
                spike_mu,
                spike_sigma,
                cap_seconds: cap,
            },
            constant => constant,
        }
    }

    pub fn cap_seconds(&self) -> Option<f64> {
        match self {
            LagModel::Constant { .. } => None,
            LagModel::LognormalMixture { cap_seconds, .. } => *cap_seconds,
        }
    }

    /// Draws one lag in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LagModel::Constant { seconds } => seconds,
            LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_probability,
                spike_mu,
                spike_sigma,
                cap_seconds,
            } => {
                let spike = rng.random::<f64>() < spike_probability;
                let z: f64 = rng.sample(StandardNormal);
                let lag = if spike {
                    (spike_mu + spike_sigma * z).exp()
                } else {
                    (base_mu + base_sigma * z).exp()
                };
                match cap_seconds {
                    Some(cap) => lag.min(cap),
                    None => lag,
                }
            }
        }
    }

    /// Closed-form distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            LagModel::Constant { seconds } => {
                if x >= seconds {
                    1.0
                } else {
                    0.0
                }
            }
            LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_probability,
                spike_mu,
                spike_sigma,
                cap_seconds,
            } => {
                if x <= 0.0 {
                    return 0.0;
                }
                if cap_seconds.is_some_and(|c| x >= c) {
                    return 1.0;
                }
                (1.0 - spike_probability) * lognormal_cdf(x, base_mu, base_sigma)
                    + spike_probability * lognormal_cdf(x, spike_mu, spike_sigma)
            }
        }
    }

    /// Closed-form quantile, by bisection on the log scale.
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            LagModel::Constant { seconds } => seconds,
            LagModel::LognormalMixture {
                base_mu,
                base_sigma,
                spike_mu,
                spike_sigma,
                cap_seconds,
                ..
            } => {
                let mut lo = base_mu.min(spike_mu) - 40.0 * base_sigma.max(spike_sigma) - 1.0;
                let mut hi = base_mu.max(spike_mu) + 40.0 * base_sigma.max(spike_sigma) + 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid.exp()) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let x = hi.exp();
                match cap_seconds {
                    Some(cap) => x.min(cap),
                    None => x,
                }
            }
        }
    }
}
