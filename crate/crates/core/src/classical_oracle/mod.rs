//! Numerical certification of `B = R₁R₁₂₃ - R₁₂R₁₃ ≥ 0` for classical light.
//!
//! For a classical source the click rates are averages over the joint
//! intensity distribution `P(W_A; W_B)`:
//!
//! ```text
//! R₁   = ⟨p₁(W_A)⟩
//! R₁₂  = ⟨p₁(W_A) p₂(rW_B)⟩
//! R₁₃  = ⟨p₁(W_A) p₃(tW_B)⟩
//! R₁₂₃ = ⟨p₁(W_A) p₂(rW_B) p₃(tW_B)⟩
//! ```
//!
//! [`sample_rates`] estimates them by Monte Carlo with probability weighting
//! (products of click probabilities, not simulated clicks) and a block
//! jackknife error; [`quadrature_rates`] integrates them adaptively.

mod model;
pub mod quadrature;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use model::{DetectorResponse, IntensityModel, MixtureComponent};

use crate::error::{domain, Result};
use crate::fock_model::{
    click_probabilities, nonclassicality_metrics, ClickRates, RateKind, SourceParams,
};
use crate::rng::{partition, stream_rng};
use crate::uncertainty::{poisson_sigmas, ClassCounts};
use crate::Error;

pub const JACKKNIFE_BLOCKS: u64 = 100;
pub const MIN_TRIALS: u64 = 10_000;
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_TRIALS: u64 = 1_000_000;

/// Standard-normal integration range; the neglected tail mass is below 1e-18.
const NORMAL_RANGE: f64 = 9.0;
const NORMAL_TAIL: f64 = 2.3e-19;
const MAX_SEGMENTS: usize = 4000;

/// Averages in the order `[R₁, R₂, R₃, R₁₂, R₁₃, R₁₂₃]`.
type Averages = [f64; 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum OracleUncertainty {
    Sampled {
        standard_error: f64,
        /// `B_raw / standard_error`; undefined for a zero-variance sample.
        z_score: Option<f64>,
    },
    Quadrature {
        error_bound: f64,
        converged: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub rates: ClickRates,
    pub b_raw: f64,
    /// Standard error (sampled) or error bound (quadrature) of `R₁, R₁₂, R₁₃, R₁₂₃`.
    pub rate_errors: [f64; 4],
    pub uncertainty: OracleUncertainty,
}

impl OracleResult {
    /// Standard error or error bound of `b_raw`.
    pub fn b_error(&self) -> f64 {
        match self.uncertainty {
            OracleUncertainty::Sampled { standard_error, .. } => standard_error,
            OracleUncertainty::Quadrature { error_bound, .. } => error_bound,
        }
    }
}

/// Neumaier summation; keeps sums of 10⁶ identical terms exact to rounding.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn b_of(v: &Averages) -> f64 {
    v[0] * v[5] - v[3] * v[4]
}

fn to_rates(v: &Averages, n_trials: u64) -> ClickRates {
    ClickRates {
        r1: v[0],
        r2: Some(v[1]),
        r3: Some(v[2]),
        r12: v[3],
        r13: v[4],
        r123: v[5],
        n_trials,
        kind: RateKind::Probability,
    }
}

fn check_inputs(
    model: &IntensityModel,
    responses: &[DetectorResponse; 3],
    r: f64,
    t: f64,
) -> Result<()> {
    model.validate()?;
    for resp in responses {
        resp.validate()?;
    }
    if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&t) || (r + t - 1.0).abs() > 1e-12 {
        return Err(domain(format!(
            "beamsplitter needs r, t in [0, 1] with r + t = 1, got {r}, {t}"
        )));
    }
    Ok(())
}

fn integrand(responses: &[DetectorResponse; 3], r: f64, t: f64, w_a: f64, w_b: f64) -> Averages {
    let p1 = responses[0].click_probability(w_a);
    let p2 = responses[1].click_probability(r * w_b);
    let p3 = responses[2].click_probability(t * w_b);
    [p1, p2, p3, p1 * p2, p1 * p3, p1 * p2 * p3]
}

/// Monte Carlo estimate of the classical click rates.
///
/// Trials are split into [`JACKKNIFE_BLOCKS`] blocks, each drawn from its own
/// random stream, so the result depends only on `(n_trials, seed)`.
pub fn sample_rates(
    model: &IntensityModel,
    responses: &[DetectorResponse; 3],
    r: f64,
    t: f64,
    n_trials: u64,
    seed: u64,
) -> Result<OracleResult> {
    check_inputs(model, responses, r, t)?;
    if n_trials < MIN_TRIALS {
        return Err(domain(format!(
            "need at least {MIN_TRIALS} trials, got {n_trials}"
        )));
    }

    let blocks: Vec<(u64, Averages)> = partition(n_trials, JACKKNIFE_BLOCKS)
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(k, (_, len))| {
            let mut rng = stream_rng(seed, k as u64);
            let mut sums = [CompensatedSum::default(); 6];
            for _ in 0..len {
                let (w_a, w_b) = model.sample(&mut rng);
                let v = integrand(responses, r, t, w_a, w_b);
                for (s, x) in sums.iter_mut().zip(v) {
                    s.add(x);
                }
            }
            (len, sums.map(|s| s.value()))
        })
        .collect();

    let mut totals = [CompensatedSum::default(); 6];
    for (_, s) in &blocks {
        for (t, &x) in totals.iter_mut().zip(s) {
            t.add(x);
        }
    }
    let total = totals.map(|t| t.value());
    let mean = total.map(|s| s / n_trials as f64);

    // Delete-one-block jackknife for B and the four rates it uses.
    let k = blocks.len() as f64;
    let leave_out: Vec<Averages> = blocks
        .iter()
        .map(|(len, s)| {
            let n = (n_trials - len) as f64;
            std::array::from_fn(|i| (total[i] - s[i]) / n)
        })
        .collect();
    let jackknife = |stat: &dyn Fn(&Averages) -> f64| {
        let values: Vec<f64> = leave_out.iter().map(stat).collect();
        let avg = values.iter().sum::<f64>() / k;
        ((k - 1.0) / k * values.iter().map(|v| (v - avg).powi(2)).sum::<f64>()).sqrt()
    };
    let standard_error = jackknife(&b_of);
    let rate_errors = [0usize, 3, 4, 5].map(|i| jackknife(&|v: &Averages| v[i]));
    let b_raw = b_of(&mean);

    Ok(OracleResult {
        rates: to_rates(&mean, n_trials),
        b_raw,
        rate_errors,
        uncertainty: OracleUncertainty::Sampled {
            standard_error,
            z_score: (standard_error > 0.0).then(|| b_raw / standard_error),
        },
    })
}

struct QuadAverages {
    value: Averages,
    error: Averages,
    converged: bool,
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Maps intensity kinks of `p(scale·W)` to kinks in `W`.
fn scaled_kinks(resp: &DetectorResponse, scale: f64) -> Vec<f64> {
    if scale <= 0.0 {
        return Vec::new();
    }
    resp.kinks().into_iter().map(|k| k / scale).collect()
}

fn quad_averages(
    model: &IntensityModel,
    responses: &[DetectorResponse; 3],
    r: f64,
    t: f64,
    tol: f64,
) -> QuadAverages {
    match model {
        IntensityModel::Deterministic { w_a, w_b } => QuadAverages {
            value: integrand(responses, r, t, *w_a, *w_b),
            error: [0.0; 6],
            converged: true,
        },
        IntensityModel::CommonThermal { mean } => {
            if *mean == 0.0 {
                return quad_averages(
                    &IntensityModel::Deterministic { w_a: 0.0, w_b: 0.0 },
                    responses,
                    r,
                    t,
                    tol,
                );
            }
            // W = -mean·ln(1-u) makes the exponential density uniform on [0, 1).
            let to_u = |w: f64| -(-w / mean).exp_m1();
            let breaks: Vec<f64> = responses[0]
                .kinks()
                .into_iter()
                .chain(scaled_kinks(&responses[1], r))
                .chain(scaled_kinks(&responses[2], t))
                .map(to_u)
                .collect();
            let res = quadrature::integrate(
                |u| {
                    let w = -mean * (-u).ln_1p();
                    integrand(responses, r, t, w, w)
                },
                0.0,
                1.0,
                &breaks,
                tol,
                MAX_SEGMENTS,
            );
            QuadAverages {
                value: res.value,
                error: res.error,
                converged: res.converged,
            }
        }
        IntensityModel::IndependentExponential { mean_a, mean_b } => {
            // The average factorizes into a W_A integral and a W_B integral.
            let exp_average = |mean: f64, breaks: Vec<f64>, f: &dyn Fn(f64) -> [f64; 3]| {
                if mean == 0.0 {
                    return quadrature::Integral {
                        value: f(0.0),
                        error: [0.0; 3],
                        converged: true,
                    };
                }
                let to_u = |w: f64| -(-w / mean).exp_m1();
                let breaks: Vec<f64> = breaks.into_iter().map(to_u).collect();
                quadrature::integrate(
                    |u| f(-mean * (-u).ln_1p()),
                    0.0,
                    1.0,
                    &breaks,
                    tol / 4.0,
                    MAX_SEGMENTS,
                )
            };
            let a = exp_average(*mean_a, responses[0].kinks(), &|w| {
                [responses[0].click_probability(w), 0.0, 0.0]
            });
            let b = exp_average(
                *mean_b,
                scaled_kinks(&responses[1], r)
                    .into_iter()
                    .chain(scaled_kinks(&responses[2], t))
                    .collect(),
                &|w| {
                    let p2 = responses[1].click_probability(r * w);
                    let p3 = responses[2].click_probability(t * w);
                    [p2, p3, p2 * p3]
                },
            );
            let (pa, ea) = (a.value[0], a.error[0]);
            let prod = |x: f64, ex: f64| (pa * x, pa * ex + x * ea + ea * ex);
            let (r12, e12) = prod(b.value[0], b.error[0]);
            let (r13, e13) = prod(b.value[1], b.error[1]);
            let (r123, e123) = prod(b.value[2], b.error[2]);
            QuadAverages {
                value: [pa, b.value[0], b.value[1], r12, r13, r123],
                error: [ea, b.error[0], b.error[1], e12, e13, e123],
                converged: a.converged && b.converged,
            }
        }
        IntensityModel::CorrelatedLognormal {
            mu_a,
            mu_b,
            sigma_a,
            sigma_b,
            rho,
        } => {
            let (mu_a, mu_b, sigma_a, sigma_b, rho) = (*mu_a, *mu_b, *sigma_a, *sigma_b, *rho);
            let c = (1.0 - rho * rho).max(0.0).sqrt();
            // ln W_B = mu_b + sigma_b (rho z1 + c z2)
            let b_kinks: Vec<f64> = scaled_kinks(&responses[1], r)
                .into_iter()
                .chain(scaled_kinks(&responses[2], t))
                .filter(|&w| w > 0.0)
                .map(|w| w.ln())
                .collect();
            let mut outer_breaks: Vec<f64> = Vec::new();
            if sigma_a > 0.0 {
                outer_breaks.extend(
                    responses[0]
                        .kinks()
                        .into_iter()
                        .filter(|&w| w > 0.0)
                        .map(|w| (w.ln() - mu_a) / sigma_a),
                );
            }
            if sigma_b > 0.0 && rho != 0.0 {
                outer_breaks.extend(b_kinks.iter().map(|lw| (lw - mu_b) / (sigma_b * rho)));
            }
            let outer_tol = tol / 4.0;
            let inner_tol = tol / 4.0;
            let inner_converged = std::sync::atomic::AtomicBool::new(true);

            let outer = quadrature::integrate(
                |z1| {
                    let inner_breaks: Vec<f64> = if sigma_b > 0.0 && c > 0.0 {
                        b_kinks
                            .iter()
                            .map(|lw| ((lw - mu_b) / sigma_b - rho * z1) / c)
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let inner = quadrature::integrate(
                        |z2| {
                            let (w_a, w_b) =
                                model::lognormal_pair(mu_a, mu_b, sigma_a, sigma_b, rho, z1, z2);
                            integrand(responses, r, t, w_a, w_b).map(|v| v * normal_pdf(z2))
                        },
                        -NORMAL_RANGE,
                        NORMAL_RANGE,
                        &inner_breaks,
                        inner_tol,
                        MAX_SEGMENTS,
                    );
                    if !inner.converged {
                        inner_converged.store(false, std::sync::atomic::Ordering::Relaxed);
                    }
                    let w = normal_pdf(z1);
                    let mut out = [0.0; 12];
                    for i in 0..6 {
                        out[i] = w * inner.value[i];
                        out[6 + i] = w * inner.error[i];
                    }
                    out
                },
                -NORMAL_RANGE,
                NORMAL_RANGE,
                &outer_breaks,
                outer_tol,
                MAX_SEGMENTS,
            );
            let value: Averages = std::array::from_fn(|i| outer.value[i]);
            let error: Averages =
                std::array::from_fn(|i| outer.error[i] + outer.value[6 + i] + 2.0 * NORMAL_TAIL);
            QuadAverages {
                value,
                error,
                converged: outer.converged && inner_converged.into_inner(),
            }
        }
        IntensityModel::Mixture { components } => {
            let mut value = [0.0; 6];
            let mut error = [0.0; 6];
            let mut converged = true;
            for c in components.iter().filter(|c| c.weight > 0.0) {
                let part = quad_averages(&c.model, responses, r, t, tol);
                for i in 0..6 {
                    value[i] += c.weight * part.value[i];
                    error[i] += c.weight * part.error[i];
                }
                converged &= part.converged;
            }
            QuadAverages {
                value,
                error,
                converged,
            }
        }
    }
}

/// Deterministic quadrature of the classical click rates to absolute tolerance `abs_tol`.
///
/// Every model kind reduces to at most two integration dimensions. A
/// non-converged integral is still returned, flagged, with its achieved error bound.
pub fn quadrature_rates(
    model: &IntensityModel,
    responses: &[DetectorResponse; 3],
    r: f64,
    t: f64,
    abs_tol: f64,
) -> Result<OracleResult> {
    check_inputs(model, responses, r, t)?;
    if abs_tol.is_nan() || abs_tol <= 0.0 {
        return Err(domain("quadrature tolerance must be positive"));
    }
    let q = quad_averages(model, responses, r, t, abs_tol / 4.0);
    let v = &q.value;
    let e = &q.error;
    let error_bound =
        v[0] * e[5] + v[5] * e[0] + e[0] * e[5] + v[3] * e[4] + v[4] * e[3] + e[3] * e[4];
    Ok(OracleResult {
        rates: to_rates(v, 0),
        b_raw: b_of(v),
        rate_errors: [e[0], e[3], e[4], e[5]],
        uncertainty: OracleUncertainty::Quadrature {
            error_bound,
            converged: q.converged,
        },
    })
}

/// Which oracle(s) a suite case runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Sampled,
    Quadrature,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CaseKind {
    Classical {
        model: IntensityModel,
        responses: [DetectorResponse; 3],
        r: f64,
        #[serde(default)]
        method: OracleMethod,
    },
    /// Externally supplied rates or counts, e.g. from a quantum source.
    Injected { rates: ClickRates },
    /// Expected counts of a heralded pair source after `n_pulses` pulses.
    HeraldedSource { source: SourceParams, n_pulses: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub name: String,
    #[serde(flatten)]
    pub kind: CaseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub passed: bool,
    pub b_raw: f64,
    pub b_norm: Option<f64>,
    pub z_score: Option<f64>,
    pub sampled: Option<OracleResult>,
    pub quadrature: Option<OracleResult>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub n_trials: u64,
    pub seed: u64,
    pub abs_tol: f64,
    pub cases: Vec<CaseOutcome>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CaseOutcome> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

/// Rounding allowance for sums of identical terms (zero-variance samples).
fn rounding_slack(rates: &ClickRates) -> f64 {
    64.0 * f64::EPSILON * rates.r1.max(1e-300) * rates.r1
}

fn evaluate_case(case: &SuiteCase, n_trials: u64, seed: u64, abs_tol: f64) -> Result<CaseOutcome> {
    match &case.kind {
        CaseKind::Classical {
            model,
            responses,
            r,
            method,
        } => {
            let t = 1.0 - r;
            let sampled = match method {
                OracleMethod::Sampled | OracleMethod::Both => {
                    Some(sample_rates(model, responses, *r, t, n_trials, seed)?)
                }
                OracleMethod::Quadrature => None,
            };
            let quadrature = match method {
                OracleMethod::Quadrature | OracleMethod::Both => {
                    Some(quadrature_rates(model, responses, *r, t, abs_tol)?)
                }
                OracleMethod::Sampled => None,
            };
            let mut passed = true;
            let mut detail = Vec::new();
            if let Some(s) = &sampled {
                let se = s.b_error();
                let ok = s.b_raw >= -3.0 * se - rounding_slack(&s.rates);
                passed &= ok;
                detail.push(format!(
                    "sampled B={:.6e} se={:.3e} {}",
                    s.b_raw,
                    se,
                    if ok { "ok" } else { "VIOLATION" }
                ));
            }
            if let Some(q) = &quadrature {
                let ok = q.b_raw >= -abs_tol;
                passed &= ok;
                detail.push(format!(
                    "quadrature B={:.6e} err<={:.1e} {}",
                    q.b_raw,
                    q.b_error(),
                    if ok { "ok" } else { "VIOLATION" }
                ));
            }
            let primary = sampled
                .as_ref()
                .or(quadrature.as_ref())
                .expect("at least one method");
            let z_score = match sampled.as_ref().map(|s| s.uncertainty) {
                Some(OracleUncertainty::Sampled { z_score, .. }) => z_score,
                _ => None,
            };
            Ok(CaseOutcome {
                name: case.name.clone(),
                passed,
                b_raw: primary.b_raw,
                b_norm: nonclassicality_metrics(&primary.rates).b_norm,
                z_score,
                sampled,
                quadrature,
                detail: detail.join("; "),
            })
        }
        CaseKind::HeraldedSource { source, n_pulses } => {
            let injected = heralded_source_case(&case.name, source, *n_pulses)?;
            evaluate_case(&injected, n_trials, seed, abs_tol)
        }
        CaseKind::Injected { rates } => {
            rates.validate()?;
            let m = nonclassicality_metrics(rates);
            let b_norm = m.b_norm.unwrap_or(0.0);
            let (passed, z_score, detail) = match rates.kind {
                RateKind::Counts => {
                    let counts = ClassCounts::from_nested(
                        rates.r1 as u64,
                        rates.r12 as u64,
                        rates.r13 as u64,
                        rates.r123 as u64,
                    )?;
                    let sigma = poisson_sigmas(&counts).b_norm.unwrap_or(0.0);
                    let z = (sigma > 0.0).then(|| b_norm / sigma);
                    (
                        b_norm >= -3.0 * sigma,
                        z,
                        format!("B_norm={b_norm:.6e} sigma={sigma:.3e}"),
                    )
                }
                RateKind::Probability => (b_norm >= -abs_tol, None, format!("B_norm={b_norm:.6e}")),
            };
            Ok(CaseOutcome {
                name: case.name.clone(),
                passed,
                b_raw: m.b_raw,
                b_norm: m.b_norm,
                z_score,
                sampled: None,
                quadrature: None,
                detail: if passed {
                    detail
                } else {
                    format!("{detail} VIOLATION")
                },
            })
        }
    }
}

/// Checks every case against the classical bound.
///
/// Classical cases pass when `B_raw ≥ -3·se` (sampled) and `B_raw ≥ -abs_tol`
/// (quadrature). Injected rates are judged on the scale-free `B_norm`: counts
/// against three Poisson standard deviations, probabilities against `abs_tol`.
pub fn verify_classical_suite(
    suite: &[SuiteCase],
    n_trials: u64,
    seed: u64,
    abs_tol: f64,
) -> Result<SuiteReport> {
    if suite.is_empty() {
        return Err(Error::EmptySuite);
    }
    let cases = suite
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let case_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            evaluate_case(case, n_trials, case_seed, abs_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        passed: cases.iter().all(|c| c.passed),
        n_trials,
        seed,
        abs_tol,
        cases,
    })
}

fn uniform(resp: DetectorResponse) -> [DetectorResponse; 3] {
    [resp.clone(), resp.clone(), resp]
}

/// Six classical sources spanning constant, independent, fully correlated,
/// partially correlated and mixed intensities.
pub fn default_suite() -> Vec<SuiteCase> {
    let exp1 = DetectorResponse::ExponentialSaturation { eta: 1.0 };
    let classical =
        |name: &str, model: IntensityModel, responses: [DetectorResponse; 3]| SuiteCase {
            name: name.to_string(),
            kind: CaseKind::Classical {
                model,
                responses,
                r: 0.5,
                method: OracleMethod::Both,
            },
        };
    vec![
        classical(
            "deterministic",
            IntensityModel::Deterministic { w_a: 1.0, w_b: 1.0 },
            uniform(exp1.clone()),
        ),
        classical(
            "independent-exponential",
            IntensityModel::IndependentExponential {
                mean_a: 1.0,
                mean_b: 1.0,
            },
            uniform(exp1.clone()),
        ),
        classical(
            "common-thermal-mean-1",
            IntensityModel::CommonThermal { mean: 1.0 },
            uniform(exp1.clone()),
        ),
        classical(
            "common-thermal-mean-2",
            IntensityModel::CommonThermal { mean: 2.0 },
            uniform(DetectorResponse::ExponentialSaturation { eta: 0.5 }),
        ),
        classical(
            "lognormal-rho-0.9",
            IntensityModel::CorrelatedLognormal {
                mu_a: 0.0,
                mu_b: 0.0,
                sigma_a: 0.5,
                sigma_b: 0.5,
                rho: 0.9,
            },
            [
                exp1,
                DetectorResponse::ClippedLinear { eta: 0.7 },
                DetectorResponse::PiecewiseLinear {
                    knots: vec![[0.0, 0.0], [0.5, 0.3], [2.0, 0.8], [5.0, 1.0]],
                },
            ],
        ),
        classical(
            "mixture-dim-bright",
            IntensityModel::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.5,
                        model: IntensityModel::Deterministic { w_a: 0.5, w_b: 0.5 },
                    },
                    MixtureComponent {
                        weight: 0.5,
                        model: IntensityModel::Deterministic { w_a: 2.0, w_b: 2.0 },
                    },
                ],
            },
            uniform(DetectorResponse::ClippedLinear { eta: 0.8 }),
        ),
    ]
}

/// A case carrying the expected counts of a heralded pair source after `n_pulses` pulses.
pub fn heralded_source_case(name: &str, params: &SourceParams, n_pulses: u64) -> Result<SuiteCase> {
    let rates = click_probabilities(params)?.to_counts(n_pulses)?;
    Ok(SuiteCase {
        name: name.to_string(),
        kind: CaseKind::Injected { rates },
    })
}

/// Bernoulli click triples `[trigger, signal 2, signal 3]` from a classical model.
pub fn sample_clicks(
    model: &IntensityModel,
    responses: &[DetectorResponse; 3],
    r: f64,
    n_trials: u64,
    seed: u64,
) -> Result<Vec<[bool; 3]>> {
    let t = 1.0 - r;
    check_inputs(model, responses, r, t)?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..n_trials)
        .map(|_| {
            let (w_a, w_b) = model.sample(&mut rng);
            let v = integrand(responses, r, t, w_a, w_b);
            [
                rng.random::<f64>() < v[0],
                rng.random::<f64>() < v[1],
                rng.random::<f64>() < v[2],
            ]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_sat(eta: f64) -> [DetectorResponse; 3] {
        uniform(DetectorResponse::ExponentialSaturation { eta })
    }

    /// Closed-form thermal averages for `p(W) = 1 - e^{-ηW}`:
    /// `⟨e^{-sW}⟩ = 1/(1 + s·mean)`.
    fn thermal_exact(mean: f64, eta: f64, r: f64) -> f64 {
        let t = 1.0 - r;
        let l = |s: f64| 1.0 / (1.0 + s * mean);
        let (a, b, c) = (eta, eta * r, eta * t);
        let r1 = 1.0 - l(a);
        let r12 = 1.0 - l(a) - l(b) + l(a + b);
        let r13 = 1.0 - l(a) - l(c) + l(a + c);
        let r123 = 1.0 - l(a) - l(b) - l(c) + l(a + b) + l(a + c) + l(b + c) - l(a + b + c);
        r1 * r123 - r12 * r13
    }

    #[test]
    fn deterministic_factorizes() {
        let m = IntensityModel::Deterministic { w_a: 1.0, w_b: 1.0 };
        let s = sample_rates(&m, &exp_sat(1.0), 0.5, 0.5, 10_000, 1).unwrap();
        assert!(s.b_raw.abs() < 1e-15);
        let q = quadrature_rates(&m, &exp_sat(1.0), 0.5, 0.5, DEFAULT_ABS_TOL).unwrap();
        assert!(q.b_raw.abs() < 1e-12);
    }

    #[test]
    fn thermal_quadrature_matches_closed_form() {
        for (mean, eta) in [(1.0, 1.0), (2.0, 0.5), (0.3, 2.0)] {
            let q = quadrature_rates(
                &IntensityModel::CommonThermal { mean },
                &exp_sat(eta),
                0.5,
                0.5,
                1e-10,
            )
            .unwrap();
            let exact = thermal_exact(mean, eta, 0.5);
            assert!(
                (q.b_raw - exact).abs() < 1e-10,
                "mean {mean}: {} vs {exact}",
                q.b_raw
            );
            assert!(q.b_raw > 0.0);
            assert!(q.b_error() <= 1e-10);
        }
    }

    #[test]
    fn thermal_sampled_is_significantly_positive() {
        let m = IntensityModel::CommonThermal { mean: 1.0 };
        let s = sample_rates(&m, &exp_sat(1.0), 0.5, 0.5, 1_000_000, 11).unwrap();
        let OracleUncertainty::Sampled {
            z_score,
            standard_error,
        } = s.uncertainty
        else {
            panic!("sampled result expected")
        };
        assert!(z_score.unwrap() > 5.0);
        let exact = thermal_exact(1.0, 1.0, 0.5);
        assert!((s.b_raw - exact).abs() < 4.0 * standard_error);
    }

    #[test]
    fn independent_intensities_keep_signal_correlation() {
        // B = R₁² Cov(p₂, p₃); with W_B ~ Exp(1) and p = 1 - e^{-W/2}: R₁ = 1/2, Cov = 1/18.
        let m = IntensityModel::IndependentExponential {
            mean_a: 1.0,
            mean_b: 1.0,
        };
        let q = quadrature_rates(&m, &exp_sat(1.0), 0.5, 0.5, 1e-10).unwrap();
        assert!((q.b_raw - 1.0 / 72.0).abs() < 1e-10);
        let s = sample_rates(&m, &exp_sat(1.0), 0.5, 0.5, 1_000_000, 5).unwrap();
        assert!((s.b_raw - 1.0 / 72.0).abs() < 4.0 * s.b_error());
    }

    #[test]
    fn two_point_mixture_by_enumeration() {
        let suite = default_suite();
        let CaseKind::Classical {
            model, responses, ..
        } = &suite[5].kind
        else {
            unreachable!()
        };
        // clipped linear at 0.8: p₁ = min(0.8W, 1), p₂ = p₃ = min(0.4W, 1)
        let points = [(0.5, 0.4, 0.2), (0.5, 1.0, 0.8)];
        let avg = |f: &dyn Fn(f64, f64) -> f64| {
            points.iter().map(|&(w, p1, p2)| w * f(p1, p2)).sum::<f64>()
        };
        let r1 = avg(&|p1, _| p1);
        let r12 = avg(&|p1, p2| p1 * p2);
        let r123 = avg(&|p1, p2| p1 * p2 * p2);
        let expected = r1 * r123 - r12 * r12;
        let q = quadrature_rates(model, responses, 0.5, 0.5, 1e-10).unwrap();
        assert!((q.b_raw - expected).abs() < 1e-15);
        assert!(expected > 0.01);
        // a dark component scales every rate equally and leaves B at zero
        let dark_bright = IntensityModel::Mixture {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    model: IntensityModel::Deterministic { w_a: 0.0, w_b: 0.0 },
                },
                MixtureComponent {
                    weight: 0.5,
                    model: IntensityModel::Deterministic { w_a: 1.0, w_b: 1.0 },
                },
            ],
        };
        assert!(
            quadrature_rates(&dark_bright, responses, 0.5, 0.5, 1e-10)
                .unwrap()
                .b_raw
                .abs()
                < 1e-16
        );
    }

    #[test]
    fn lognormal_quadrature_agrees_with_sampling() {
        let suite = default_suite();
        let CaseKind::Classical {
            model,
            responses,
            r,
            ..
        } = &suite[4].kind
        else {
            unreachable!()
        };
        let q = quadrature_rates(model, responses, *r, 1.0 - r, 1e-10).unwrap();
        let s = sample_rates(model, responses, *r, 1.0 - r, 1_000_000, 3).unwrap();
        assert!(matches!(
            q.uncertainty,
            OracleUncertainty::Quadrature {
                converged: true,
                ..
            }
        ));
        let combined = (s.b_error().powi(2) + q.b_error().powi(2)).sqrt();
        assert!((q.b_raw - s.b_raw).abs() < 4.0 * combined);
        assert!(q.b_raw > 0.0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = IntensityModel::CommonThermal { mean: 1.5 };
        let a = sample_rates(&m, &exp_sat(1.0), 0.3, 0.7, 20_000, 9).unwrap();
        let b = sample_rates(&m, &exp_sat(1.0), 0.3, 0.7, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| sample_rates(&m, &exp_sat(1.0), 0.3, 0.7, 20_000, 9).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn input_validation() {
        let m = IntensityModel::CommonThermal { mean: 1.0 };
        assert!(sample_rates(&m, &exp_sat(1.0), 0.5, 0.5, 100, 0).is_err());
        assert!(sample_rates(&m, &exp_sat(1.0), 0.5, 0.6, 10_000, 0).is_err());
        assert!(matches!(
            verify_classical_suite(&[], 10_000, 0, 1e-10),
            Err(Error::EmptySuite)
        ));
    }

    #[test]
    fn quantum_injection_fails() {
        let params = SourceParams::new(0.03, 0.02, 0.345, 0.5).unwrap();
        let case = heralded_source_case("heralded", &params, 1_000_000_000).unwrap();
        let report = verify_classical_suite(&[case], 10_000, 0, 1e-10).unwrap();
        assert!(!report.passed);
        assert!(report.cases[0].b_norm.unwrap() < -0.02);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn clicks_reproduce_rates() {
        let m = IntensityModel::CommonThermal { mean: 1.0 };
        let clicks = sample_clicks(&m, &exp_sat(1.0), 0.5, 200_000, 4).unwrap();
        let r1 = clicks.iter().filter(|c| c[0]).count() as f64 / clicks.len() as f64;
        assert!((r1 - 0.5).abs() < 0.005);
    }
}
