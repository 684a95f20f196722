//! Time-gated coincidence analysis of trigger records.
//!
//! A record counts towards a gate when its `t_CLK` lies in the closed interval
//! `[center - width/2, center + width/2]`; a signal click counts when it is
//! present and `|t_S| ≤ window/2`. All comparisons are done on integer
//! picoseconds as `2|Δ| ≤ width`, so the boundaries are exact.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::events::TriggerRecord;
use crate::fock_model::{fmt_sig17, nonclassicality_metrics, ClickRates, NonclassicalityReport};
use crate::pulse_sim::RunSummary;
use crate::uncertainty::{
    bootstrap_sigmas, poisson_sigmas, report_with_uncertainties, ClassCounts, DEFAULT_RESAMPLES,
};

pub const DEFAULT_GATE_WIDTH: f64 = 300e-12;
pub const DEFAULT_COINCIDENCE_WINDOW: f64 = 1.1e-9;

pub const SCAN_CSV_HEADER: &str =
    "gate_center_ps,n1,n12,n13,n123,eff2,eff3,b_norm,sigma_b,alpha,sigma_alpha,g2,sigma_g2";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Width of the band-pass gate on `t_CLK`, seconds.
    pub gate_width: f64,
    /// Full width of the signal coincidence window, centred on zero delay, seconds.
    pub coincidence_window: f64,
    /// First gate centre, seconds. Defaults to the smallest observed `t_CLK`.
    pub scan_start: Option<f64>,
    /// Last gate centre, seconds. Defaults to the largest observed `t_CLK`.
    pub scan_stop: Option<f64>,
    /// Defaults to a quarter of the gate width.
    pub scan_step: Option<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gate_width: DEFAULT_GATE_WIDTH,
            coincidence_window: DEFAULT_COINCIDENCE_WINDOW,
            scan_start: None,
            scan_stop: None,
            scan_step: None,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

fn to_ps(seconds: f64) -> i64 {
    (seconds * 1e12).round() as i64
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_ps = |name: &str, v: f64| {
            if v.is_finite() && to_ps(v) >= 1 {
                Ok(())
            } else {
                Err(domain(format!("{name} must be at least 1 ps, got {v} s")))
            }
        };
        positive_ps("gate_width", self.gate_width)?;
        positive_ps("coincidence_window", self.coincidence_window)?;
        if let Some(step) = self.scan_step {
            positive_ps("scan_step", step)?;
        }
        for (name, v) in [
            ("scan_start", self.scan_start),
            ("scan_stop", self.scan_stop),
        ] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(domain(format!("{name} must be finite")));
            }
        }
        if let (Some(a), Some(b)) = (self.scan_start, self.scan_stop) {
            if a >= b {
                return Err(domain(format!(
                    "scan_start must be below scan_stop, got {a} >= {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn gate_width_ps(&self) -> i64 {
        to_ps(self.gate_width)
    }

    pub fn window_ps(&self) -> i64 {
        to_ps(self.coincidence_window)
    }

    fn step_ps(&self) -> i64 {
        self.scan_step
            .map_or((self.gate_width_ps() / 4).max(1), to_ps)
    }

    /// Gate centres in picoseconds, filling unset bounds from the observed `t_CLK` span.
    pub fn centers(&self, records: &[TriggerRecord]) -> Vec<i64> {
        let lo = records.iter().map(|r| r.t_clk_ps).min();
        let hi = records.iter().map(|r| r.t_clk_ps).max();
        let (Some(start), Some(stop)) = (
            self.scan_start.map(to_ps).or(lo),
            self.scan_stop.map(to_ps).or(hi),
        ) else {
            return Vec::new();
        };
        let step = self.step_ps();
        let mut out = Vec::new();
        let mut c = start;
        while c <= stop {
            out.push(c);
            match c.checked_add(step) {
                Some(next) => c = next,
                None => break,
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    OutsideGate,
    TriggerOnly,
    Double12,
    Double13,
    Triple,
}

fn within(delta: i64, width: i64) -> bool {
    within_wide(delta, 0, width)
}

/// Classes a record ignoring the gate: which signal clicks fall in the window.
fn signal_class(r: &TriggerRecord, window_ps: i64) -> EventClass {
    let hit = |t: Option<i64>| t.is_some_and(|v| within(v, window_ps));
    match (hit(r.t_s1_ps), hit(r.t_s2_ps)) {
        (false, false) => EventClass::TriggerOnly,
        (true, false) => EventClass::Double12,
        (false, true) => EventClass::Double13,
        (true, true) => EventClass::Triple,
    }
}

pub fn classify(record: &TriggerRecord, gate: &GateConfig, gate_center_ps: i64) -> EventClass {
    if !within_wide(record.t_clk_ps, gate_center_ps, gate.gate_width_ps()) {
        return EventClass::OutsideGate;
    }
    signal_class(record, gate.window_ps())
}

/// `2|t - c| ≤ w` without overflow.
fn within_wide(t: i64, c: i64, w: i64) -> bool {
    2 * (t as i128 - c as i128).abs() <= w as i128
}

/// The integer picosecond range `[lo, hi]` covered by a gate.
pub fn gate_range(center_ps: i64, width_ps: i64) -> (i64, i64) {
    let half = width_ps / 2;
    (
        center_ps.saturating_sub(half),
        center_ps.saturating_add(half),
    )
}

impl ClassCounts {
    fn add(&mut self, class: EventClass) {
        match class {
            EventClass::OutsideGate => {}
            EventClass::TriggerOnly => self.trigger_only += 1,
            EventClass::Double12 => self.only_2 += 1,
            EventClass::Double13 => self.only_3 += 1,
            EventClass::Triple => self.both += 1,
        }
    }

    fn minus(&self, other: &ClassCounts) -> ClassCounts {
        ClassCounts {
            trigger_only: self.trigger_only - other.trigger_only,
            only_2: self.only_2 - other.only_2,
            only_3: self.only_3 - other.only_3,
            both: self.both - other.both,
        }
    }
}

/// Records sorted by `t_CLK` with cumulative class counts, for O(log n) gate queries.
pub struct GateIndex {
    times: Vec<i64>,
    cumulative: Vec<ClassCounts>,
}

impl GateIndex {
    pub fn new(records: &[TriggerRecord], window_ps: i64) -> Self {
        let mut keyed: Vec<(i64, EventClass)> = records
            .iter()
            .map(|r| (r.t_clk_ps, signal_class(r, window_ps)))
            .collect();
        keyed.sort_by_key(|k| k.0);
        let mut cumulative = Vec::with_capacity(keyed.len() + 1);
        let mut acc = ClassCounts::default();
        cumulative.push(acc);
        for (_, class) in &keyed {
            acc.add(*class);
            cumulative.push(acc);
        }
        GateIndex {
            times: keyed.into_iter().map(|k| k.0).collect(),
            cumulative,
        }
    }

    /// Class counts of records with `lo ≤ t_CLK ≤ hi`.
    pub fn counts_in(&self, lo: i64, hi: i64) -> ClassCounts {
        if lo > hi {
            return ClassCounts::default();
        }
        let a = self.times.partition_point(|&t| t < lo);
        let b = self.times.partition_point(|&t| t <= hi);
        self.cumulative[b].minus(&self.cumulative[a])
    }

    pub fn total(&self) -> ClassCounts {
        *self.cumulative.last().expect("cumulative starts with zero")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateScanRow {
    pub gate_center_ps: i64,
    pub n1: u64,
    pub n12: u64,
    pub n13: u64,
    pub n123: u64,
    /// `N₁₂/N₁`; undefined without triggers.
    pub eff2: Option<f64>,
    pub eff3: Option<f64>,
    /// Binomial standard errors of the efficiencies.
    pub sigma_eff2: Option<f64>,
    pub sigma_eff3: Option<f64>,
    pub report: NonclassicalityReport,
}

impl GateScanRow {
    pub fn gate_center_seconds(&self) -> f64 {
        self.gate_center_ps as f64 * 1e-12
    }

    fn from_counts(center: i64, c: &ClassCounts, resamples: usize, seed: u64, stream: u64) -> Self {
        let (n1, n12, n13, n123) = (c.n1(), c.n12(), c.n13(), c.both);
        let rates = ClickRates::from_counts(n1, n12, n13, n123).expect("class counts are nested");
        let mut report = nonclassicality_metrics(&rates);
        let boot = bootstrap_sigmas(c, resamples, seed, stream);
        report.sigma_b = boot.b_norm;
        report.sigma_alpha = boot.alpha;
        report.sigma_g2 = boot.g2;
        report.sigma_poisson = Some(poisson_sigmas(c));
        let eff = |k: u64| (n1 > 0).then(|| k as f64 / n1 as f64);
        let sigma = |e: Option<f64>| e.map(|e| (e * (1.0 - e) / n1 as f64).sqrt());
        let (eff2, eff3) = (eff(n12), eff(n13));
        GateScanRow {
            gate_center_ps: center,
            n1,
            n12,
            n13,
            n123,
            eff2,
            eff3,
            sigma_eff2: sigma(eff2),
            sigma_eff3: sigma(eff3),
            report,
        }
    }

    /// Signal transmission per herald, `(N₁₂+N₁₃)/N₁`.
    pub fn conditional_efficiency(&self) -> Option<f64> {
        (self.n1 > 0).then(|| (self.n12 + self.n13) as f64 / self.n1 as f64)
    }
}

/// One row per gate centre, ordered by centre. An empty stream gives an empty table.
///
/// Each gate's bootstrap uses its own random stream (the gate index), so rows
/// do not depend on scheduling.
pub fn gate_scan(records: &[TriggerRecord], gate: &GateConfig) -> Result<Vec<GateScanRow>> {
    gate.validate()?;
    let index = GateIndex::new(records, gate.window_ps());
    let width = gate.gate_width_ps();
    Ok(gate
        .centers(records)
        .par_iter()
        .enumerate()
        .map(|(k, &center)| {
            let (lo, hi) = gate_range(center, width);
            GateScanRow::from_counts(
                center,
                &index.counts_in(lo, hi),
                gate.resamples,
                gate.seed,
                k as u64,
            )
        })
        .collect())
}

/// All records with the coincidence window applied but no gate.
pub fn ungated(records: &[TriggerRecord], gate: &GateConfig) -> Result<GateScanRow> {
    gate.validate()?;
    let total = GateIndex::new(records, gate.window_ps()).total();
    // the last stream id is reserved for the ungated bootstrap
    Ok(GateScanRow::from_counts(
        0,
        &total,
        gate.resamples,
        gate.seed,
        u64::MAX,
    ))
}

/// The gate with the most triples; ties go to more doubles, then more
/// triggers, then the earliest centre.
pub fn peak_gate(rows: &[GateScanRow]) -> Option<&GateScanRow> {
    let key = |r: &GateScanRow| (r.n123, r.n12 + r.n13, r.n1);
    rows.iter()
        .fold(None, |best: Option<&GateScanRow>, r| match best {
            Some(b) if key(b) >= key(r) => Some(b),
            _ => Some(r),
        })
}

/// Witnesses of a set of heralded counts, with bootstrap and Poisson uncertainties.
pub fn summarize(
    n1: u64,
    n12: u64,
    n13: u64,
    n123: u64,
    resamples: usize,
    seed: u64,
) -> Result<NonclassicalityReport> {
    let rates = ClickRates::from_counts(n1, n12, n13, n123)?;
    report_with_uncertainties(&rates, resamples, seed, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatesPerSecond {
    pub acquisition_time: f64,
    pub n1: f64,
    pub n12: f64,
    pub n13: f64,
    pub n123: f64,
    /// Raw signal singles from the simulation counters.
    pub singles_2: f64,
    pub singles_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub n_records: u64,
    pub gate: GateConfig,
    pub n_gates: usize,
    pub ungated: GateScanRow,
    pub peak: Option<GateScanRow>,
    /// Relative change of the conditional efficiency from ungated to the peak gate.
    pub gating_gain: Option<f64>,
    /// Signal-arm transmission assumed by the simulation, next to the measured
    /// `overall_transmission` of the counts.
    pub configured_signal_transmission: Option<f64>,
    /// Peak-gate rates; present only when the run summary is supplied.
    pub peak_rates: Option<RatesPerSecond>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub rows: Vec<GateScanRow>,
    pub summary: AnalysisSummary,
}

pub fn analyze(
    records: &[TriggerRecord],
    gate: &GateConfig,
    run: Option<&RunSummary>,
) -> Result<Analysis> {
    let rows = gate_scan(records, gate)?;
    let ungated = ungated(records, gate)?;
    let peak = peak_gate(&rows).copied();
    let gating_gain = match (
        peak.and_then(|p| p.conditional_efficiency()),
        ungated.conditional_efficiency(),
    ) {
        (Some(p), Some(u)) if u > 0.0 => Some(p / u - 1.0),
        _ => None,
    };
    let peak_rates = run.zip(peak).map(|(run, p)| {
        let time = run.n_pulses as f64 / run.config.rep_rate;
        RatesPerSecond {
            acquisition_time: time,
            n1: p.n1 as f64 / time,
            n12: p.n12 as f64 / time,
            n13: p.n13 as f64 / time,
            n123: p.n123 as f64 / time,
            singles_2: run.n2 as f64 / time,
            singles_3: run.n3 as f64 / time,
        }
    });
    Ok(Analysis {
        summary: AnalysisSummary {
            n_records: records.len() as u64,
            gate: *gate,
            n_gates: rows.len(),
            ungated,
            peak,
            gating_gain,
            configured_signal_transmission: run.map(|r| r.config.source.eta_s),
            peak_rates,
        },
        rows,
    })
}

pub fn write_gate_scan_csv<W: Write>(rows: &[GateScanRow], out: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{SCAN_CSV_HEADER}")?;
    for r in rows {
        let m = &r.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.gate_center_ps,
            r.n1,
            r.n12,
            r.n13,
            r.n123,
            fmt_sig17(r.eff2),
            fmt_sig17(r.eff3),
            fmt_sig17(m.b_norm),
            fmt_sig17(m.sigma_b),
            fmt_sig17(m.alpha),
            fmt_sig17(m.sigma_alpha),
            fmt_sig17(m.g2_zero),
            fmt_sig17(m.sigma_g2),
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t_clk_ps: i64, s1: Option<i64>, s2: Option<i64>) -> TriggerRecord {
        TriggerRecord {
            t_clk_ps,
            t_s1_ps: s1,
            t_s2_ps: s2,
        }
    }

    #[test]
    fn classify_examples() {
        let g = GateConfig::default();
        assert_eq!(
            classify(&rec(150, None, None), &g, 0),
            EventClass::TriggerOnly
        );
        assert_eq!(
            classify(&rec(-150, None, None), &g, 0),
            EventClass::TriggerOnly
        );
        assert_eq!(
            classify(&rec(151, None, None), &g, 0),
            EventClass::OutsideGate
        );
        assert_eq!(
            classify(&rec(0, Some(10), None), &g, 0),
            EventClass::Double12
        );
        assert_eq!(
            classify(&rec(0, Some(10), Some(600)), &g, 0),
            EventClass::Double12
        );
        assert_eq!(
            classify(&rec(0, Some(550), Some(-550)), &g, 0),
            EventClass::Triple
        );
        assert_eq!(
            classify(&rec(0, Some(551), Some(-550)), &g, 0),
            EventClass::Double13
        );
        assert_eq!(
            classify(&rec(i64::MAX, None, None), &g, i64::MIN),
            EventClass::OutsideGate
        );
    }

    #[test]
    fn all_triples_at_zero() {
        let records = vec![rec(0, Some(0), Some(0)); 50];
        let rows = gate_scan(&records, &GateConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.gate_center_ps, r.n1, r.n123), (0, 50, 50));
        assert_eq!((r.eff2, r.eff3), (Some(1.0), Some(1.0)));
        assert_eq!(r.report.alpha, Some(1.0));
        assert_eq!(r.report.b_norm, Some(0.0));
    }

    #[test]
    fn empty_stream_empty_table() {
        assert!(gate_scan(&[], &GateConfig::default()).unwrap().is_empty());
        let a = analyze(&[], &GateConfig::default(), None).unwrap();
        assert!(a.summary.peak.is_none());
    }

    #[test]
    fn paper_counts_summary() {
        let r = summarize(30629, 5329, 5067, 2, DEFAULT_RESAMPLES, 1).unwrap();
        assert!((r.b_norm.unwrap() + 0.029).abs() < 5e-4);
        assert!((r.overall_transmission.unwrap() - 0.339).abs() < 5e-4);
        let s = r.sigma_b.unwrap();
        assert!(s > 3e-4 && s < 1e-3);
        let degenerate = summarize(100, 0, 0, 0, 100, 1).unwrap();
        assert_eq!(degenerate.b_norm, Some(0.0));
        assert_eq!(degenerate.alpha, None);
        assert!(summarize(10, 11, 0, 0, 10, 1).is_err());
    }

    #[test]
    fn flat_background_scales_with_gate_width() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(2, 0);
        let records: Vec<_> = (0..400_000)
            .map(|_| rec(rng.random_range(-5747..=5747), None, None))
            .collect();
        let count = |width: f64| {
            let g = GateConfig {
                gate_width: width,
                scan_start: Some(0.0),
                scan_stop: Some(1e-12),
                resamples: 0,
                ..GateConfig::default()
            };
            let r = gate_scan(&records, &g).unwrap()[0];
            assert_eq!(r.n12 + r.n13, 0);
            r.n1 as f64
        };
        let (a, b) = (count(300e-12), count(600e-12));
        let expected = 400_000.0 * 301.0 / 11495.0;
        assert!((a - expected).abs() < 4.0 * expected.sqrt());
        let ratio = b / a;
        assert!((ratio - 601.0 / 301.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn peak_gate_tie_breaks() {
        let row = |c, n1, n12, n123| {
            GateScanRow::from_counts(
                c,
                &ClassCounts::from_nested(n1, n12, n12, n123).unwrap(),
                0,
                0,
                0,
            )
        };
        let rows = vec![
            row(0, 10, 2, 0),
            row(1, 12, 3, 0),
            row(2, 20, 3, 0),
            row(3, 20, 3, 0),
        ];
        assert_eq!(peak_gate(&rows).unwrap().gate_center_ps, 2);
        let rows = vec![row(0, 10, 2, 1), row(1, 50, 9, 0)];
        assert_eq!(peak_gate(&rows).unwrap().gate_center_ps, 0);
    }

    #[test]
    fn csv_layout() {
        let rows = gate_scan(
            &[rec(0, Some(0), None), rec(5, None, None)],
            &GateConfig {
                resamples: 10,
                ..GateConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_gate_scan_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SCAN_CSV_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 13);
        assert_eq!(&first[..5], &["0", "2", "1", "0", "0"]);
        // α is undefined without signal-3 doubles
        assert_eq!(first[9], "");
    }

    #[test]
    fn config_validation() {
        let bad = GateConfig {
            gate_width: 0.0,
            ..GateConfig::default()
        };
        assert!(gate_scan(&[], &bad).is_err());
        let bad = GateConfig {
            scan_start: Some(1e-9),
            scan_stop: Some(0.0),
            ..GateConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<TriggerRecord>> {
        let t = -2000i64..2000;
        let s = proptest::option::of(-1500i64..1500);
        proptest::collection::vec((t, s.clone(), s).prop_map(|(c, a, b)| rec(c, a, b)), 0..300)
    }

    proptest! {
        #[test]
        fn gates_add_up(records in arb_records(), lo in -2000i64..2000, len_a in 0i64..800, len_b in 0i64..800) {
            let index = GateIndex::new(&records, 1100);
            let mid = lo + len_a;
            let hi = mid + 1 + len_b;
            let a = index.counts_in(lo, mid);
            let b = index.counts_in(mid + 1, hi);
            let u = index.counts_in(lo, hi);
            prop_assert_eq!(a.n1() + b.n1(), u.n1());
            prop_assert_eq!(a.n12() + b.n12(), u.n12());
            prop_assert_eq!(a.n13() + b.n13(), u.n13());
            prop_assert_eq!(a.both + b.both, u.both);
        }

        #[test]
        fn index_agrees_with_classify(records in arb_records(), center in -2000i64..2000, width in 1i64..1000) {
            let g = GateConfig { gate_width: width as f64 * 1e-12, ..GateConfig::default() };
            let mut direct = ClassCounts::default();
            for r in &records {
                direct.add(classify(r, &g, center));
            }
            let (lo, hi) = gate_range(center, g.gate_width_ps());
            prop_assert_eq!(GateIndex::new(&records, g.window_ps()).counts_in(lo, hi), direct);
        }

        #[test]
        fn shrinking_window_never_adds(records in arb_records(), w in 2i64..3000, shrink in 1i64..2000) {
            let wide = GateIndex::new(&records, w).total();
            let narrow = GateIndex::new(&records, (w - shrink).max(1)).total();
            prop_assert!(narrow.n12() <= wide.n12());
            prop_assert!(narrow.n13() <= wide.n13());
            prop_assert!(narrow.both <= wide.both);
            prop_assert_eq!(narrow.n1(), wide.n1());
        }

        #[test]
        fn permutation_invariant(records in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let g = GateConfig { resamples: 20, scan_step: Some(100e-12), ..GateConfig::default() };
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut crate::rng::stream_rng(seed, 0));
            prop_assert_eq!(gate_scan(&records, &g).unwrap(), gate_scan(&shuffled, &g).unwrap());
        }
    }
}
