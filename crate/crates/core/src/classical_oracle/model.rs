use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Joint distribution of the integrated intensities `(W_A, W_B)` of a
/// classical two-beam source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntensityModel {
    Deterministic {
        w_a: f64,
        w_b: f64,
    },
    /// `W_A`, `W_B` independent, exponentially distributed.
    IndependentExponential {
        mean_a: f64,
        mean_b: f64,
    },
    /// `W_A = W_B`, exponentially distributed (single-mode thermal light).
    CommonThermal {
        mean: f64,
    },
    /// `(ln W_A, ln W_B)` jointly normal.
    CorrelatedLognormal {
        mu_a: f64,
        mu_b: f64,
        sigma_a: f64,
        sigma_b: f64,
        rho: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub model: IntensityModel,
}

impl IntensityModel {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(domain(format!(
                    "{name} must be finite and non-negative, got {v}"
                )))
            }
        };
        match self {
            IntensityModel::Deterministic { w_a, w_b } => {
                non_negative("w_a", *w_a)?;
                non_negative("w_b", *w_b)
            }
            IntensityModel::IndependentExponential { mean_a, mean_b } => {
                non_negative("mean_a", *mean_a)?;
                non_negative("mean_b", *mean_b)
            }
            IntensityModel::CommonThermal { mean } => non_negative("mean", *mean),
            IntensityModel::CorrelatedLognormal {
                mu_a,
                mu_b,
                sigma_a,
                sigma_b,
                rho,
            } => {
                if !(mu_a.is_finite() && mu_b.is_finite()) {
                    return Err(domain("lognormal location must be finite"));
                }
                non_negative("sigma_a", *sigma_a)?;
                non_negative("sigma_b", *sigma_b)?;
                if !(-1.0..=1.0).contains(rho) {
                    return Err(domain(format!("rho must lie in [-1, 1], got {rho}")));
                }
                Ok(())
            }
            IntensityModel::Mixture { components } => {
                if components.is_empty() {
                    return Err(domain("mixture needs at least one component"));
                }
                let mut total = 0.0;
                for c in components {
                    non_negative("mixture weight", c.weight)?;
                    c.model.validate()?;
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(domain(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Draws one `(W_A, W_B)` pair.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            IntensityModel::Deterministic { w_a, w_b } => (*w_a, *w_b),
            IntensityModel::IndependentExponential { mean_a, mean_b } => {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                (mean_a * a, mean_b * b)
            }
            IntensityModel::CommonThermal { mean } => {
                let w: f64 = Exp1.sample(rng);
                (mean * w, mean * w)
            }
            IntensityModel::CorrelatedLognormal {
                mu_a,
                mu_b,
                sigma_a,
                sigma_b,
                rho,
            } => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                lognormal_pair(*mu_a, *mu_b, *sigma_a, *sigma_b, *rho, z1, z2)
            }
            IntensityModel::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        return c.model.sample(rng);
                    }
                }
                // u landed in the rounding gap above the last cumulative weight
                components
                    .iter()
                    .rev()
                    .find(|c| c.weight > 0.0)
                    .expect("validated mixture has positive weight")
                    .model
                    .sample(rng)
            }
        }
    }

    /// True when `W_A` and `W_B` are statistically independent.
    pub fn is_independent(&self) -> bool {
        match self {
            IntensityModel::Deterministic { .. }
            | IntensityModel::IndependentExponential { .. } => true,
            IntensityModel::CorrelatedLognormal {
                rho,
                sigma_a,
                sigma_b,
                ..
            } => *rho == 0.0 || *sigma_a == 0.0 || *sigma_b == 0.0,
            IntensityModel::CommonThermal { mean } => *mean == 0.0,
            IntensityModel::Mixture { components } => {
                components.iter().filter(|c| c.weight > 0.0).count() == 1
                    && components
                        .iter()
                        .all(|c| c.weight == 0.0 || c.model.is_independent())
            }
        }
    }
}

pub(crate) fn lognormal_pair(
    mu_a: f64,
    mu_b: f64,
    sigma_a: f64,
    sigma_b: f64,
    rho: f64,
    z1: f64,
    z2: f64,
) -> (f64, f64) {
    let w_a = (mu_a + sigma_a * z1).exp();
    let w_b = (mu_b + sigma_b * (rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2)).exp();
    (w_a, w_b)
}

/// Click probability of a binary detector as a function of incident intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DetectorResponse {
    /// `1 - exp(-ηW)`.
    ExponentialSaturation { eta: f64 },
    /// `min(ηW, 1)`.
    ClippedLinear { eta: f64 },
    /// Linear interpolation between `(W, p)` knots, constant outside them.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl DetectorResponse {
    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorResponse::ExponentialSaturation { eta }
            | DetectorResponse::ClippedLinear { eta } => {
                if *eta > 0.0 && eta.is_finite() {
                    Ok(())
                } else {
                    Err(domain(format!("detector eta must be positive, got {eta}")))
                }
            }
            DetectorResponse::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(domain("piecewise-linear response needs knots"));
                }
                if knots[0][0] < 0.0 {
                    return Err(domain("knot intensities must be non-negative"));
                }
                for k in knots {
                    if !(0.0..=1.0).contains(&k[1]) || !k[0].is_finite() {
                        return Err(domain(format!("knot ({}, {}) out of range", k[0], k[1])));
                    }
                }
                for w in knots.windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err(domain("knot intensities must be strictly increasing"));
                    }
                    if w[1][1] < w[0][1] {
                        return Err(domain("response must be non-decreasing"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn click_probability(&self, w: f64) -> f64 {
        match self {
            DetectorResponse::ExponentialSaturation { eta } => -(-eta * w).exp_m1(),
            DetectorResponse::ClippedLinear { eta } => (eta * w).min(1.0),
            DetectorResponse::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if w <= first[0] {
                    return first[1];
                }
                if w >= last[0] {
                    return last[1];
                }
                let i = knots.partition_point(|k| k[0] <= w);
                let (lo, hi) = (knots[i - 1], knots[i]);
                lo[1] + (hi[1] - lo[1]) * (w - lo[0]) / (hi[0] - lo[0])
            }
        }
    }

    /// Intensities where the response is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            DetectorResponse::ExponentialSaturation { .. } => Vec::new(),
            DetectorResponse::ClippedLinear { eta } => vec![1.0 / eta],
            DetectorResponse::PiecewiseLinear { knots } => knots.iter().map(|k| k[0]).collect(),
        }
    }
}
