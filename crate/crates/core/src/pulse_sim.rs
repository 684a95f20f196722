//! Pulse-by-pulse Monte Carlo of the heralded-source acquisition.
//!
//! Most pulses carry neither a pair nor a background photon, so the simulator
//! jumps between "active" pulses with geometric gaps instead of visiting every
//! pulse. Pulses are processed in contiguous batches, each with its own random
//! stream, and merged in pulse order. The acquisition dead time is applied in a
//! sequential pass afterwards, so results never depend on the thread count.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::events::TriggerRecord;
use crate::fock_model::SourceParams;
use crate::rng::{partition, stream_rng};

pub const DEFAULT_REP_RATE: f64 = 87e6;
pub const DEFAULT_JITTER_FWHM: f64 = 300e-12;
pub const DEFAULT_DEAD_TIME: f64 = 1e-6;
pub const DEFAULT_RESOLUTION: f64 = 1e-12;
pub const SUMMARY_FORMAT_VERSION: u32 = 1;

const BATCH_PULSES: u64 = 1 << 22;
/// FWHM / σ of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Mean number of uncorrelated photons per pulse reaching each detector.
///
/// The means count photons that would be registered, i.e. after all optical
/// and detector losses; Poisson thinning makes this equivalent to thinning a
/// larger incident background.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Background {
    pub trigger: f64,
    pub signal_2: f64,
    pub signal_3: f64,
}

impl Background {
    /// Background whose signal-arm intensity is `f` times the PDC signal
    /// intensity, split `r:t` by the beamsplitter. The trigger arm receives
    /// `trigger_share · f` times the PDC idler intensity (`1` = equal split).
    pub fn from_fraction(source: &SourceParams, f: f64, trigger_share: f64) -> Result<Self> {
        if !(f >= 0.0 && f.is_finite()) || !(trigger_share >= 0.0 && trigger_share.is_finite()) {
            return Err(domain(format!(
                "background fraction and trigger share must be finite and >= 0, got {f}, {trigger_share}"
            )));
        }
        let (pt, p2, p3) = source.per_photon_detection();
        let n = source.mean_pairs();
        Ok(Background {
            trigger: trigger_share * f * n * pt,
            signal_2: f * n * p2,
            signal_3: f * n * p3,
        })
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("background.trigger", self.trigger),
            ("background.signal_2", self.signal_2),
            ("background.signal_3", self.signal_3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub source: SourceParams,
    /// Pump pulses per second.
    pub rep_rate: f64,
    pub n_pulses: u64,
    #[serde(default)]
    pub background: Background,
    /// Detector timing jitter, seconds FWHM.
    pub jitter_fwhm: f64,
    /// Acquisition dead time after a recorded trigger, seconds.
    pub dead_time: f64,
    /// Timestamp quantization step, seconds; a whole number of picoseconds.
    pub resolution: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(source: SourceParams, n_pulses: u64, seed: u64) -> Self {
        SimConfig {
            source,
            rep_rate: DEFAULT_REP_RATE,
            n_pulses,
            background: Background::default(),
            jitter_fwhm: DEFAULT_JITTER_FWHM,
            dead_time: DEFAULT_DEAD_TIME,
            resolution: DEFAULT_RESOLUTION,
            seed,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rep_rate
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.background.validate()?;
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(domain(format!(
                "rep_rate must be > 0, got {}",
                self.rep_rate
            )));
        }
        if self.n_pulses == 0 {
            return Err(domain("n_pulses must be > 0"));
        }
        if !(self.jitter_fwhm >= 0.0 && self.jitter_fwhm.is_finite()) {
            return Err(domain(format!(
                "jitter_fwhm must be >= 0, got {}",
                self.jitter_fwhm
            )));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(domain(format!(
                "dead_time must be >= 0, got {}",
                self.dead_time
            )));
        }
        let ps = self.resolution * 1e12;
        if !(ps >= 0.5 && (ps - ps.round()).abs() < 1e-6 * ps.round()) {
            return Err(domain(format!(
                "resolution must be a positive whole number of picoseconds, got {} s",
                self.resolution
            )));
        }
        Ok(())
    }

    fn resolution_ps(&self) -> i64 {
        (self.resolution * 1e12).round() as i64
    }

    /// Poisson means of uncorrelated clicks per pulse, dark clicks included.
    fn click_means(&self) -> [f64; 3] {
        let d = &self.source.dark;
        [
            self.background.trigger - (-d.trigger).ln_1p(),
            self.background.signal_2 - (-d.signal_2).ln_1p(),
            self.background.signal_3 - (-d.signal_3).ln_1p(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub n_pulses: u64,
    /// Trigger clicks, recorded or not.
    pub n1: u64,
    /// Raw singles of signal detector 2, independent of the trigger.
    pub n2: u64,
    pub n3: u64,
    /// Trigger clicks with a signal-2 click in the same pulse (no window, no dead time).
    pub n12: u64,
    pub n13: u64,
    pub n123: u64,
    pub records: u64,
    pub discarded: u64,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub records: Vec<TriggerRecord>,
    pub summary: RunSummary,
}

/// A trigger click before dead-time filtering.
struct RawTrigger {
    pulse: u64,
    /// Trigger click time relative to its pulse epoch, seconds.
    offset: f64,
    record: TriggerRecord,
}

#[derive(Default)]
struct BatchTally {
    triggers: Vec<RawTrigger>,
    n2: u64,
    n3: u64,
    n12: u64,
    n13: u64,
    n123: u64,
}

/// Samples from a Poisson distribution conditioned on being at least one.
fn zero_truncated_poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    // inversion over k = 1, 2, ...
    let mut u = rng.random::<f64>() * -(-mean).exp_m1();
    let mut k = 1u64;
    let mut p = mean * (-mean).exp();
    loop {
        if u <= p || p == 0.0 {
            return k;
        }
        u -= p;
        k += 1;
        p *= mean / k as f64;
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean)
            .expect("positive finite mean")
            .sample(rng) as u64
    }
}

struct PulseModel {
    lambda_sq: f64,
    p_active: f64,
    p_pair_given_active: f64,
    means: [f64; 3],
    mean_total: f64,
    pt: f64,
    p2: f64,
    p3: f64,
    sigma: f64,
    period: f64,
    resolution: f64,
    resolution_ps: i64,
}

impl PulseModel {
    fn new(cfg: &SimConfig) -> Self {
        let lambda_sq = cfg.source.lambda * cfg.source.lambda;
        let means = cfg.click_means();
        let mean_total: f64 = means.iter().sum();
        let p_active = -((-lambda_sq).ln_1p() - mean_total).exp_m1();
        let (pt, p2, p3) = cfg.source.per_photon_detection();
        PulseModel {
            lambda_sq,
            p_active,
            p_pair_given_active: if p_active > 0.0 {
                lambda_sq / p_active
            } else {
                0.0
            },
            means,
            mean_total,
            pt,
            p2,
            p3,
            sigma: cfg.jitter_fwhm / FWHM_PER_SIGMA,
            period: cfg.period(),
            resolution: cfg.resolution,
            resolution_ps: cfg.resolution_ps(),
        }
    }

    fn quantize(&self, t: f64) -> i64 {
        (t / self.resolution).round() as i64 * self.resolution_ps
    }

    fn jitter<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.sigma * z
    }

    fn uniform_in_period<R: Rng>(&self, rng: &mut R) -> f64 {
        (rng.random::<f64>() - 0.5) * self.period
    }

    /// Earliest click time of a detector given photon-induced and background arrivals.
    fn earliest<R: Rng>(&self, photons: u64, background: u64, rng: &mut R) -> Option<f64> {
        let mut t: Option<f64> = None;
        let mut take = |x: f64| t = Some(t.map_or(x, |v: f64| v.min(x)));
        for _ in 0..photons {
            take(self.jitter(rng));
        }
        for _ in 0..background {
            take(self.uniform_in_period(rng));
        }
        t
    }

    fn run_batch(&self, start: u64, len: u64, rng: &mut impl Rng) -> BatchTally {
        let mut tally = BatchTally::default();
        if self.p_active <= 0.0 {
            return tally;
        }
        let gap = Geometric::new(self.p_active).expect("probability in (0, 1]");
        let extra_pairs =
            (self.lambda_sq > 0.0).then(|| Geometric::new(1.0 - self.lambda_sq).expect("λ² < 1"));
        let mut pos = 0u64;
        loop {
            pos = pos.saturating_add(gap.sample(rng));
            if pos >= len {
                break;
            }
            self.pulse(start + pos, extra_pairs.as_ref(), rng, &mut tally);
            pos += 1;
        }
        tally
    }

    fn pulse<R: Rng>(
        &self,
        pulse: u64,
        extra_pairs: Option<&Geometric>,
        rng: &mut R,
        tally: &mut BatchTally,
    ) {
        let (pairs, bg) = if rng.random::<f64>() < self.p_pair_given_active {
            let n = 1 + extra_pairs.map_or(0, |g| g.sample(rng));
            (n, self.means.map(|m| poisson(m, rng)))
        } else {
            let total = zero_truncated_poisson(self.mean_total, rng);
            let mut bg = [0u64; 3];
            for _ in 0..total {
                let u = rng.random::<f64>() * self.mean_total;
                let k = if u < self.means[0] {
                    0
                } else if u < self.means[0] + self.means[1] {
                    1
                } else {
                    2
                };
                bg[k] += 1;
            }
            (0, bg)
        };

        let mut k_t = 0;
        let mut k_2 = 0;
        let mut k_3 = 0;
        for _ in 0..pairs {
            if rng.random::<f64>() < self.pt {
                k_t += 1;
            }
            let u = rng.random::<f64>();
            if u < self.p2 {
                k_2 += 1;
            } else if u < self.p2 + self.p3 {
                k_3 += 1;
            }
        }

        let trigger = self.earliest(k_t, bg[0], rng);
        let s2 = self.earliest(k_2, bg[1], rng);
        let s3 = self.earliest(k_3, bg[2], rng);
        tally.n2 += u64::from(s2.is_some());
        tally.n3 += u64::from(s3.is_some());

        let Some(t_trig) = trigger else { return };
        tally.n12 += u64::from(s2.is_some());
        tally.n13 += u64::from(s3.is_some());
        tally.n123 += u64::from(s2.is_some() && s3.is_some());

        let folded = t_trig - self.period * (t_trig / self.period).round();
        let q_trig = self.quantize(t_trig);
        tally.triggers.push(RawTrigger {
            pulse,
            offset: t_trig,
            record: TriggerRecord {
                t_clk_ps: self.quantize(folded),
                t_s1_ps: s2.map(|t| self.quantize(t) - q_trig),
                t_s2_ps: s3.map(|t| self.quantize(t) - q_trig),
            },
        });
    }
}

/// Runs the acquisition model. Records come back in pulse order.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let model = PulseModel::new(config);
    let n_batches = config.n_pulses.div_ceil(BATCH_PULSES);
    let batches: Vec<(u64, u64)> = partition(config.n_pulses, n_batches).collect();

    let tallies: Vec<BatchTally> = batches
        .par_iter()
        .enumerate()
        .map(|(k, &(start, len))| {
            let mut rng = stream_rng(config.seed, k as u64);
            model.run_batch(start, len, &mut rng)
        })
        .collect();

    let mut summary = RunSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        n_pulses: config.n_pulses,
        n1: 0,
        n2: 0,
        n3: 0,
        n12: 0,
        n13: 0,
        n123: 0,
        records: 0,
        discarded: 0,
        config: *config,
    };
    let mut records = Vec::new();
    let mut last_recorded: Option<f64> = None;
    let period = config.period();
    for tally in tallies {
        summary.n2 += tally.n2;
        summary.n3 += tally.n3;
        summary.n12 += tally.n12;
        summary.n13 += tally.n13;
        summary.n123 += tally.n123;
        summary.n1 += tally.triggers.len() as u64;
        for raw in tally.triggers {
            let t = raw.pulse as f64 * period + raw.offset;
            if last_recorded.is_some_and(|last| t - last < config.dead_time) {
                summary.discarded += 1;
            } else {
                last_recorded = Some(t);
                records.push(raw.record);
            }
        }
    }
    summary.records = records.len() as u64;
    Ok(SimOutput { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_model::{click_probabilities, DarkClicks};

    fn paper_source() -> SourceParams {
        SourceParams::new(0.03, 0.02, 0.345, 0.5).unwrap()
    }

    #[test]
    fn dark_source_is_silent() {
        let cfg = SimConfig::new(
            SourceParams::new(0.0, 0.02, 0.345, 0.5).unwrap(),
            1_000_000,
            1,
        );
        let out = simulate(&cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!((out.summary.n1, out.summary.n2, out.summary.n3), (0, 0, 0));
    }

    #[test]
    fn validation() {
        let mut cfg = SimConfig::new(paper_source(), 10, 0);
        cfg.rep_rate = 0.0;
        assert!(simulate(&cfg).is_err());
        cfg = SimConfig::new(paper_source(), 0, 0);
        assert!(simulate(&cfg).is_err());
        cfg = SimConfig::new(paper_source(), 10, 0);
        cfg.resolution = 1.5e-12;
        assert!(simulate(&cfg).is_err());
        cfg.resolution = 1e-12;
        cfg.background.signal_2 = -1.0;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn zero_truncated_poisson_mean() {
        let mut rng = stream_rng(3, 0);
        for mean in [1e-4, 0.5, 3.0] {
            let n = 200_000;
            let avg = (0..n)
                .map(|_| zero_truncated_poisson(mean, &mut rng))
                .sum::<u64>() as f64
                / n as f64;
            let expected = mean / -(-mean).exp_m1();
            assert!(
                (avg - expected).abs() < 0.01 * expected,
                "{mean}: {avg} vs {expected}"
            );
        }
    }

    #[test]
    fn background_fraction_split() {
        let s = paper_source();
        let b = Background::from_fraction(&s, 2.0, 1.0).unwrap();
        let n = s.mean_pairs();
        assert!((b.signal_2 + b.signal_3 - 2.0 * n * 0.345).abs() < 1e-15);
        assert!((b.trigger - 2.0 * n * 0.02).abs() < 1e-15);
        assert_eq!(
            Background::from_fraction(&s, 2.0, 0.0).unwrap().trigger,
            0.0
        );
        assert!(Background::from_fraction(&s, -1.0, 1.0).is_err());
    }

    #[test]
    fn counts_bookkeeping() {
        let mut cfg = SimConfig::new(SourceParams::new(0.2, 0.5, 0.8, 0.5).unwrap(), 2_000_000, 9);
        cfg.background = Background::from_fraction(&cfg.source, 1.0, 1.0).unwrap();
        let out = simulate(&cfg).unwrap();
        let s = out.summary;
        assert_eq!(s.records + s.discarded, s.n1);
        assert_eq!(s.records as usize, out.records.len());
        assert!(s.discarded > 0);
        assert!(s.n123 <= s.n12.min(s.n13) && s.n12 + s.n13 - s.n123 <= s.n1);
        let half = (cfg.period() * 1e12 / 2.0).ceil() as i64;
        assert!(out.records.iter().all(|r| r.t_clk_ps.abs() <= half));
    }

    #[test]
    fn determinism_across_thread_counts() {
        let mut cfg = SimConfig::new(
            SourceParams::new(0.1, 0.3, 0.5, 0.5).unwrap(),
            30_000_000,
            77,
        );
        cfg.background = Background::from_fraction(&cfg.source, 2.0, 1.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn dead_time_only_removes_records() {
        let mut cfg = SimConfig::new(
            SourceParams::new(0.15, 0.5, 0.5, 0.5).unwrap(),
            5_000_000,
            5,
        );
        cfg.dead_time = 0.0;
        let free = simulate(&cfg).unwrap();
        cfg.dead_time = 1e-6;
        let dead = simulate(&cfg).unwrap();
        assert_eq!(free.summary.n2, dead.summary.n2);
        assert_eq!(free.summary.n3, dead.summary.n3);
        assert_eq!(free.summary.n1, dead.summary.n1);
        assert_eq!(free.summary.discarded, 0);
        assert!(dead.summary.discarded > 0);
        assert_eq!(
            dead.summary.records + dead.summary.discarded,
            free.summary.records
        );
    }

    #[test]
    fn trigger_background_lowers_efficiency() {
        let source = paper_source();
        let mut cfg = SimConfig::new(source, 300_000_000, 21);
        cfg.dead_time = 0.0;
        cfg.background = Background::from_fraction(&source, 2.0, 1.0).unwrap();
        let s = simulate(&cfg).unwrap().summary;

        // Poisson background acts like an independent dark click per channel.
        let mut with_dark = source;
        with_dark.dark = DarkClicks {
            trigger: -(-cfg.background.trigger).exp_m1(),
            signal_2: -(-cfg.background.signal_2).exp_m1(),
            signal_3: -(-cfg.background.signal_3).exp_m1(),
        };
        let rates = click_probabilities(&with_dark).unwrap();
        let n = cfg.n_pulses as f64;
        for (observed, p) in [(s.n1, rates.r1), (s.n12, rates.r12), (s.n13, rates.r13)] {
            let se = (n * p * (1.0 - p)).sqrt();
            assert!(
                (observed as f64 - n * p).abs() < 4.0 * se,
                "{observed} vs {}",
                n * p
            );
        }
        let eff = (s.n12 + s.n13) as f64 / s.n1 as f64;
        let model_eff = (rates.r12 + rates.r13) / rates.r1;
        let clean = click_probabilities(&source).unwrap();
        let clean_eff = (clean.r12 + clean.r13) / clean.r1;
        let se = (model_eff * (1.0 - model_eff) / s.n1 as f64).sqrt();
        assert!((eff - model_eff).abs() < 4.0 * se);
        assert!(eff < clean_eff - 4.0 * se);
    }
}
