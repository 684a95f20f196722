//! Exact click statistics of a lossy pulsed pair source seen by binary detectors.
//!
//! The source emits `n` pairs per pulse with geometric probability
//! `(1-λ²)λ²ⁿ`. Trigger photons are detected independently with probability
//! `η_T`; each signal photon is routed by the beamsplitter to detector 2
//! (`q₂ = η_s·r·η₂`), detector 3 (`q₃ = η_s·t·η₃`) or lost. A binary detector
//! clicks when at least one photon is detected, or on a dark click.
//!
//! Every rate follows from the no-click probabilities of detector subsets,
//! which are geometric-series sums `G(x) = Σ P(n) xⁿ = (1-λ²)/(1-λ²x)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Tail mass of the pair distribution the truncated sum may ignore.
const TRUNCATION_TAIL: f64 = 1e-15;
const MAX_TRUNCATION: u32 = 100_000;

/// Response of a binary detector to `n` photons, each of which it would
/// register with probability `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorModel {
    /// `1 - (1-q)ⁿ`: each photon is absorbed independently.
    #[default]
    Binomial,
    /// `1 - exp(-q·n)`: the exponential-saturation form, for comparison.
    Exponential,
}

impl DetectorModel {
    /// Per-photon detection probability for a channel of overall efficiency `q`.
    fn per_photon(self, q: f64) -> f64 {
        match self {
            DetectorModel::Binomial => q,
            DetectorModel::Exponential => -(-q).exp_m1(),
        }
    }
}

/// Per-pulse dark-click probabilities, OR-ed with photon-induced clicks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarkClicks {
    pub trigger: f64,
    pub signal_2: f64,
    pub signal_3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Parametric gain, `0 ≤ λ < 1`.
    pub lambda: f64,
    /// Trigger arm transmission including detector efficiency.
    pub eta_t: f64,
    /// Signal arm optical transmission before the beamsplitter.
    pub eta_s: f64,
    /// Beamsplitter power reflectance (towards detector 2).
    pub r: f64,
    /// Beamsplitter power transmittance (towards detector 3).
    pub t: f64,
    pub eta_2: f64,
    pub eta_3: f64,
    #[serde(default)]
    pub dark: DarkClicks,
    #[serde(default)]
    pub detector: DetectorModel,
}

/// No-click factors per detected photon: trigger, signal 2, signal 3, and
/// both signal detectors at once.
#[derive(Debug, Clone, Copy)]
struct NoClickFactors {
    trigger: f64,
    s2: f64,
    s3: f64,
    s23: f64,
}

impl SourceParams {
    /// Lossless, dark-free parameters with a balanced beamsplitter.
    pub fn ideal(lambda: f64) -> Self {
        SourceParams {
            lambda,
            eta_t: 1.0,
            eta_s: 1.0,
            r: 0.5,
            t: 0.5,
            eta_2: 1.0,
            eta_3: 1.0,
            dark: DarkClicks::default(),
            detector: DetectorModel::Binomial,
        }
    }

    /// Parameters with `t = 1 - r`, unit detector efficiencies and no dark clicks.
    pub fn new(lambda: f64, eta_t: f64, eta_s: f64, r: f64) -> Result<Self> {
        let p = SourceParams {
            lambda,
            eta_t,
            eta_s,
            r,
            t: 1.0 - r,
            ..SourceParams::ideal(lambda)
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(domain(format!(
                "lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        for (name, v) in [
            ("eta_t", self.eta_t),
            ("eta_s", self.eta_s),
            ("r", self.r),
            ("t", self.t),
            ("eta_2", self.eta_2),
            ("eta_3", self.eta_3),
            ("dark.trigger", self.dark.trigger),
            ("dark.signal_2", self.dark.signal_2),
            ("dark.signal_3", self.dark.signal_3),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if (self.r + self.t - 1.0).abs() > 1e-12 {
            return Err(domain(format!(
                "beamsplitter must conserve power: r + t = {}",
                self.r + self.t
            )));
        }
        if self.q2() + self.q3() > 1.0 + 1e-12 {
            return Err(domain("q2 + q3 exceeds 1"));
        }
        Ok(())
    }

    /// Effective probability that one signal photon reaches and is absorbed by detector 2.
    pub fn q2(&self) -> f64 {
        self.eta_s * self.r * self.eta_2
    }

    pub fn q3(&self) -> f64 {
        self.eta_s * self.t * self.eta_3
    }

    /// Mean number of pairs per pulse, `λ²/(1-λ²)`.
    pub fn mean_pairs(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        l2 / (1.0 - l2)
    }

    /// Per-photon detection probabilities `(trigger, signal 2, signal 3)`
    /// after applying the detector model.
    pub fn per_photon_detection(&self) -> (f64, f64, f64) {
        let m = self.detector;
        (
            m.per_photon(self.eta_t),
            m.per_photon(self.q2()),
            m.per_photon(self.q3()),
        )
    }

    fn no_click_factors(&self) -> NoClickFactors {
        let (pt, p2, p3) = self.per_photon_detection();
        NoClickFactors {
            trigger: 1.0 - pt,
            s2: 1.0 - p2,
            s3: 1.0 - p3,
            // a photon leaves the beamsplitter through one port only
            s23: (1.0 - p2 - p3).max(0.0),
        }
    }
}

/// Pair-number distribution of the two-mode squeezed vacuum: `(1-λ²)λ²ⁿ`.
pub fn pair_number_pmf(lambda: f64, n: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(domain(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    let l2 = lambda * lambda;
    Ok((1.0 - l2) * l2.powi(n as i32))
}

/// Whether the numbers in a [`ClickRates`] are per-trial probabilities or raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    Probability,
    Counts,
}

/// Singles, doubles and triples for trigger (1) and signal detectors (2, 3).
///
/// Singles of the signal detectors are optional: a heralded record stream only
/// knows what happened after a trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickRates {
    pub r1: f64,
    pub r2: Option<f64>,
    pub r3: Option<f64>,
    pub r12: f64,
    pub r13: f64,
    pub r123: f64,
    pub n_trials: u64,
    pub kind: RateKind,
}

impl ClickRates {
    /// Heralded counts: `n1` trigger events of which `n12`, `n13` had a signal
    /// click on detector 2, 3 and `n123` on both.
    pub fn from_counts(n1: u64, n12: u64, n13: u64, n123: u64) -> Result<Self> {
        let rates = ClickRates {
            r1: n1 as f64,
            r2: None,
            r3: None,
            r12: n12 as f64,
            r13: n13 as f64,
            r123: n123 as f64,
            n_trials: n1,
            kind: RateKind::Counts,
        };
        rates.validate()?;
        Ok(rates)
    }

    /// Expected counts after `n_trials` trials, rounded to integers.
    pub fn to_counts(&self, n_trials: u64) -> Result<Self> {
        if self.kind != RateKind::Probability {
            return Err(domain("rates are already counts"));
        }
        let c = |p: f64| (p * n_trials as f64).round();
        Ok(ClickRates {
            r1: c(self.r1),
            r2: self.r2.map(c),
            r3: self.r3.map(c),
            r12: c(self.r12),
            r13: c(self.r13),
            r123: c(self.r123),
            n_trials,
            kind: RateKind::Counts,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r1, self.r12, self.r13, self.r123];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(domain("rates must be finite and non-negative"));
        }
        if self.kind == RateKind::Probability && self.r1 > 1.0 {
            return Err(domain("probability above 1"));
        }
        // Allow for last-digit rounding in model output.
        let slack = match self.kind {
            RateKind::Probability => 1e-12,
            RateKind::Counts => 0.0,
        };
        if self.r123 > self.r12.min(self.r13) + slack || self.r12.max(self.r13) > self.r1 + slack {
            return Err(domain(format!(
                "rate ordering violated: r123={} r12={} r13={} r1={}",
                self.r123, self.r12, self.r13, self.r1
            )));
        }
        Ok(())
    }

    /// `(R₁₂ + R₁₃)/R₁`, the summed conditional efficiency of the signal detectors.
    pub fn overall_transmission(&self) -> Option<f64> {
        (self.r1 > 0.0).then(|| (self.r12 + self.r13) / self.r1)
    }
}

/// Closed-form per-pulse click probabilities.
pub fn click_probabilities(params: &SourceParams) -> Result<ClickRates> {
    params.validate()?;
    let l2 = params.lambda * params.lambda;
    let g = |x: f64| (1.0 - l2) / (1.0 - l2 * x);
    let f = params.no_click_factors();
    let (lt, l2s, l3s) = (
        1.0 - params.dark.trigger,
        1.0 - params.dark.signal_2,
        1.0 - params.dark.signal_3,
    );

    // Probability that none of the detectors in a subset clicks.
    let z1 = lt * g(f.trigger);
    let z2 = l2s * g(f.s2);
    let z3 = l3s * g(f.s3);
    let z12 = lt * l2s * g(f.trigger * f.s2);
    let z13 = lt * l3s * g(f.trigger * f.s3);
    let z23 = l2s * l3s * g(f.s23);
    let z123 = lt * l2s * l3s * g(f.trigger * f.s23);

    Ok(ClickRates {
        r1: 1.0 - z1,
        r2: Some(1.0 - z2),
        r3: Some(1.0 - z3),
        r12: 1.0 - z1 - z2 + z12,
        r13: 1.0 - z1 - z3 + z13,
        r123: 1.0 - z1 - z2 - z3 + z12 + z13 + z23 - z123,
        n_trials: 1,
        kind: RateKind::Probability,
    })
}

/// Smallest `N` whose neglected tail `λ^{2(N+1)}/(1-λ²)` is below 1e-15, capped at 1e5.
pub fn truncation_cutoff(lambda: f64) -> u32 {
    let l2 = lambda * lambda;
    if l2 == 0.0 {
        return 0;
    }
    let mut tail = l2 / (1.0 - l2);
    let mut n = 0;
    while tail >= TRUNCATION_TAIL && n < MAX_TRUNCATION {
        tail *= l2;
        n += 1;
    }
    n
}

/// Click probabilities as an explicit sum over pair number `n ≤ cutoff`.
///
/// Uses the conditional click probabilities for a fixed number of pairs and
/// weights them with [`pair_number_pmf`]. `cutoff = None` picks
/// [`truncation_cutoff`].
pub fn click_probabilities_by_sum(
    params: &SourceParams,
    cutoff: Option<u32>,
) -> Result<ClickRates> {
    params.validate()?;
    let cutoff = cutoff.unwrap_or_else(|| truncation_cutoff(params.lambda));
    let (pt, p2, p3) = params.per_photon_detection();
    let d = &params.dark;

    let mut acc = [0.0f64; 6];
    let l2 = params.lambda * params.lambda;
    let mut weight = 1.0 - l2;
    // (1-p)^n for each channel, and the probability that n photons all miss both signal detectors
    let (mut miss_t, mut miss_2, mut miss_3, mut miss_23) = (1.0, 1.0, 1.0, 1.0);
    for _ in 0..=cutoff {
        let trig = 1.0 - (1.0 - d.trigger) * miss_t;
        let s2 = 1.0 - (1.0 - d.signal_2) * miss_2;
        let s3 = 1.0 - (1.0 - d.signal_3) * miss_3;
        let none_2 = (1.0 - d.signal_2) * miss_2;
        let none_3 = (1.0 - d.signal_3) * miss_3;
        let none_23 = (1.0 - d.signal_2) * (1.0 - d.signal_3) * miss_23;
        let s23 = 1.0 - none_2 - none_3 + none_23;

        acc[0] += weight * trig;
        acc[1] += weight * s2;
        acc[2] += weight * s3;
        acc[3] += weight * trig * s2;
        acc[4] += weight * trig * s3;
        acc[5] += weight * trig * s23;

        weight *= l2;
        miss_t *= 1.0 - pt;
        miss_2 *= 1.0 - p2;
        miss_3 *= 1.0 - p3;
        miss_23 *= (1.0 - p2 - p3).max(0.0);
    }

    Ok(ClickRates {
        r1: acc[0],
        r2: Some(acc[1]),
        r3: Some(acc[2]),
        r12: acc[3],
        r13: acc[4],
        r123: acc[5],
        n_trials: 1,
        kind: RateKind::Probability,
    })
}

/// Point values of the nonclassicality witnesses, with optional uncertainties.
///
/// Undefined metrics (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonclassicalityReport {
    /// `R₁R₁₂₃ - R₁₂R₁₃` in the units of the input rates.
    pub b_raw: f64,
    /// `B_raw / R₁²`, the per-trigger form.
    pub b_norm: Option<f64>,
    /// `R₁R₁₂₃ / (R₁₂R₁₃)`.
    pub alpha: Option<f64>,
    /// `2p₍₂₎/p₍₁₎²` with `p₍₁₎ = (R₁₂+R₁₃)/R₁`, `p₍₂₎ = R₁₂₃/R₁`.
    pub g2_zero: Option<f64>,
    pub overall_transmission: Option<f64>,
    pub sigma_b: Option<f64>,
    pub sigma_alpha: Option<f64>,
    pub sigma_g2: Option<f64>,
    /// Analytic Poisson-propagated uncertainties, reported next to the bootstrap ones.
    pub sigma_poisson: Option<Sigmas>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sigmas {
    pub b_norm: Option<f64>,
    pub alpha: Option<f64>,
    pub g2: Option<f64>,
}

/// The three witness values `(b_norm, alpha, g2)` of raw rates.
pub(crate) fn witnesses(
    r1: f64,
    r12: f64,
    r13: f64,
    r123: f64,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let b_raw = r1 * r123 - r12 * r13;
    let b_norm = (r1 > 0.0).then(|| b_raw / (r1 * r1));
    let alpha = (r12 > 0.0 && r13 > 0.0).then(|| r1 * r123 / (r12 * r13));
    let g2 = (r1 > 0.0 && r12 + r13 > 0.0).then(|| {
        let p1 = (r12 + r13) / r1;
        2.0 * (r123 / r1) / (p1 * p1)
    });
    (b_norm, alpha, g2)
}

pub fn nonclassicality_metrics(rates: &ClickRates) -> NonclassicalityReport {
    let (b_norm, alpha, g2_zero) = witnesses(rates.r1, rates.r12, rates.r13, rates.r123);
    NonclassicalityReport {
        b_raw: rates.r1 * rates.r123 - rates.r12 * rates.r13,
        b_norm,
        alpha,
        g2_zero,
        overall_transmission: rates.overall_transmission(),
        sigma_b: None,
        sigma_alpha: None,
        sigma_g2: None,
        sigma_poisson: None,
    }
}

/// One point of a `B(λ, η_s)` scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub eta_s: f64,
    pub eta_t: f64,
    pub r: f64,
    pub b_raw: f64,
    pub b_norm: Option<f64>,
    pub alpha: Option<f64>,
    pub g2: Option<f64>,
    /// `(R₁₂+R₁₃)/R₁` as the model predicts it; differs from `eta_s` by detector efficiencies.
    pub eta_overall: Option<f64>,
}

pub const SCAN_CSV_HEADER: &str = "lambda,eta_s,eta_T,r,B_raw,B_norm,alpha,g2";

/// Evaluates the witnesses on the grid `lambdas × eta_s_values`, other
/// parameters taken from `base`. Rows are ordered λ-major.
pub fn scan_b(base: &SourceParams, lambdas: &[f64], eta_s_values: &[f64]) -> Result<Vec<ScanRow>> {
    let points: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| eta_s_values.iter().map(move |&e| (l, e)))
        .collect();
    if points.is_empty() {
        return Err(domain("scan grid is empty"));
    }
    points
        .par_iter()
        .map(|&(lambda, eta_s)| {
            let params = SourceParams {
                lambda,
                eta_s,
                ..*base
            };
            let rates = click_probabilities(&params)?;
            let m = nonclassicality_metrics(&rates);
            Ok(ScanRow {
                lambda,
                eta_s,
                eta_t: params.eta_t,
                r: params.r,
                b_raw: m.b_raw,
                b_norm: m.b_norm,
                alpha: m.alpha,
                g2: m.g2_zero,
                eta_overall: m.overall_transmission,
            })
        })
        .collect()
}

/// Formats a float with 17 significant digits; undefined values become an empty field.
pub fn fmt_sig17(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.16e}"),
        None => String::new(),
    }
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SCAN_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_sig17(Some(row.lambda)),
            fmt_sig17(Some(row.eta_s)),
            fmt_sig17(Some(row.eta_t)),
            fmt_sig17(Some(row.r)),
            fmt_sig17(Some(row.b_raw)),
            fmt_sig17(row.b_norm),
            fmt_sig17(row.alpha),
            fmt_sig17(row.g2),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub lambda_hat: f64,
    pub f: f64,
    pub rep_rate: f64,
    pub signal_singles_rate: f64,
    pub eta_s: f64,
}

/// Gain from the signal singles rate `R₂+R₃`, assuming trigger-arm background
/// is fully suppressed: `λ² = (R₂+R₃) / (η_s·R_rep·(1+f))`.
pub fn estimate_lambda(
    signal_singles_rate: f64,
    eta_s: f64,
    rep_rate: f64,
    f: f64,
) -> Result<GainEstimate> {
    if !(signal_singles_rate >= 0.0 && signal_singles_rate.is_finite()) {
        return Err(domain(
            "signal singles rate must be finite and non-negative",
        ));
    }
    if !(eta_s > 0.0 && eta_s <= 1.0) {
        return Err(domain(format!("eta_s must lie in (0, 1], got {eta_s}")));
    }
    if !(rep_rate > 0.0 && rep_rate.is_finite()) {
        return Err(domain("repetition rate must be positive"));
    }
    if !(f >= 0.0 && f.is_finite()) {
        return Err(domain("background fraction f must be non-negative"));
    }
    let lambda_sq = signal_singles_rate / (eta_s * rep_rate * (1.0 + f));
    if lambda_sq >= 1.0 {
        return Err(crate::Error::EstimationOutOfRange { lambda_sq });
    }
    Ok(GainEstimate {
        lambda_hat: lambda_sq.sqrt(),
        f,
        rep_rate,
        signal_singles_rate,
        eta_s,
    })
}
