//! Uncertainties of the count-based witnesses.
//!
//! A heralded record inside a gate falls in exactly one of four classes:
//! trigger only, signal 2 only, signal 3 only, or both. The four counts carry
//! all the information the witnesses use, so resampling records with
//! replacement is the same as drawing the class counts from a multinomial
//! with the observed frequencies. That is what [`bootstrap_sigmas`] does.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::fock_model::{witnesses, ClickRates, NonclassicalityReport, RateKind, Sigmas};
use crate::rng::stream_rng;
use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Disjoint class counts of heralded records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub trigger_only: u64,
    pub only_2: u64,
    pub only_3: u64,
    pub both: u64,
}

impl ClassCounts {
    /// From nested counts `N₁ ⊇ N₁₂, N₁₃ ⊇ N₁₂₃`.
    pub fn from_nested(n1: u64, n12: u64, n13: u64, n123: u64) -> Result<Self> {
        if n123 > n12.min(n13) || n12 + n13 - n123 > n1 {
            return Err(Error::Domain(format!(
                "inconsistent counts n1={n1} n12={n12} n13={n13} n123={n123}"
            )));
        }
        Ok(ClassCounts {
            trigger_only: n1 - (n12 + n13 - n123),
            only_2: n12 - n123,
            only_3: n13 - n123,
            both: n123,
        })
    }

    pub fn n1(&self) -> u64 {
        self.trigger_only + self.only_2 + self.only_3 + self.both
    }

    pub fn n12(&self) -> u64 {
        self.only_2 + self.both
    }

    pub fn n13(&self) -> u64 {
        self.only_3 + self.both
    }

    fn nested_f64(&self) -> (f64, f64, f64, f64) {
        (
            self.n1() as f64,
            self.n12() as f64,
            self.n13() as f64,
            self.both as f64,
        )
    }
}

fn std_dev(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Nonparametric bootstrap standard deviations of `(B_norm, α, g²)`.
///
/// Replicates where a metric is undefined are left out of that metric's spread.
pub fn bootstrap_sigmas(counts: &ClassCounts, resamples: usize, seed: u64, stream: u64) -> Sigmas {
    let n = counts.n1();
    if n == 0 || resamples < 2 {
        return Sigmas::default();
    }
    let mut rng = stream_rng(seed, stream);
    let classes = [counts.both, counts.only_2, counts.only_3];
    let mut b = Vec::with_capacity(resamples);
    let mut alpha = Vec::with_capacity(resamples);
    let mut g2 = Vec::with_capacity(resamples);

    for _ in 0..resamples {
        // Multinomial draw by successive conditional binomials.
        let mut remaining_n = n;
        let mut remaining_w = n;
        let mut drawn = [0u64; 3];
        for (slot, &w) in drawn.iter_mut().zip(&classes) {
            if remaining_n == 0 || w == 0 {
                continue;
            }
            let p = (w as f64 / remaining_w as f64).min(1.0);
            *slot = Binomial::new(remaining_n, p)
                .expect("probability in [0, 1]")
                .sample(&mut rng);
            remaining_n -= *slot;
            remaining_w -= w;
        }
        let sample = ClassCounts {
            both: drawn[0],
            only_2: drawn[1],
            only_3: drawn[2],
            trigger_only: remaining_n,
        };
        let (n1, n12, n13, n123) = sample.nested_f64();
        let (bn, a, g) = witnesses(n1, n12, n13, n123);
        b.extend(bn);
        alpha.extend(a);
        g2.extend(g);
    }

    Sigmas {
        b_norm: std_dev(&b),
        alpha: std_dev(&alpha),
        g2: std_dev(&g2),
    }
}

/// First-order propagation treating the four class counts as independent Poisson variables.
pub fn poisson_sigmas(counts: &ClassCounts) -> Sigmas {
    let (n1, n12, n13, n123) = counts.nested_f64();
    // Partial derivatives with respect to (N₁, N₁₂, N₁₃, N₁₂₃), chained onto the classes.
    let propagate = |d: [f64; 4]| -> f64 {
        let d_trigger = d[0];
        let d_2 = d[0] + d[1];
        let d_3 = d[0] + d[2];
        let d_both = d[0] + d[1] + d[2] + d[3];
        (counts.trigger_only as f64 * d_trigger.powi(2)
            + counts.only_2 as f64 * d_2.powi(2)
            + counts.only_3 as f64 * d_3.powi(2)
            + counts.both as f64 * d_both.powi(2))
        .sqrt()
    };

    let b_norm = (n1 > 0.0).then(|| {
        let n1sq = n1 * n1;
        propagate([
            -n123 / n1sq + 2.0 * n12 * n13 / (n1sq * n1),
            -n13 / n1sq,
            -n12 / n1sq,
            1.0 / n1,
        ])
    });
    let alpha = (n12 > 0.0 && n13 > 0.0).then(|| {
        let a = n1 * n123 / (n12 * n13);
        propagate([a / n1, -a / n12, -a / n13, n1 / (n12 * n13)])
    });
    let s = n12 + n13;
    let g2 = (n1 > 0.0 && s > 0.0).then(|| {
        let g = 2.0 * n123 * n1 / (s * s);
        propagate([g / n1, -2.0 * g / s, -2.0 * g / s, 2.0 * n1 / (s * s)])
    });

    Sigmas { b_norm, alpha, g2 }
}

/// Witnesses of heralded counts with bootstrap and Poisson uncertainties attached.
pub fn report_with_uncertainties(
    rates: &ClickRates,
    resamples: usize,
    seed: u64,
    stream: u64,
) -> Result<NonclassicalityReport> {
    if rates.kind != RateKind::Counts {
        return Err(Error::Domain(
            "uncertainties need counts, not probabilities".into(),
        ));
    }
    rates.validate()?;
    let counts = ClassCounts::from_nested(
        rates.r1 as u64,
        rates.r12 as u64,
        rates.r13 as u64,
        rates.r123 as u64,
    )?;
    let boot = bootstrap_sigmas(&counts, resamples, seed, stream);
    let mut report = crate::fock_model::nonclassicality_metrics(rates);
    report.sigma_b = boot.b_norm;
    report.sigma_alpha = boot.alpha;
    report.sigma_g2 = boot.g2;
    report.sigma_poisson = Some(poisson_sigmas(&counts));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_counts() -> ClassCounts {
        ClassCounts::from_nested(30629, 5329, 5067, 2).unwrap()
    }

    #[test]
    fn class_counts_round_trip() {
        let c = paper_counts();
        assert_eq!(c.n1(), 30629);
        assert_eq!(c.n12(), 5329);
        assert_eq!(c.n13(), 5067);
        assert_eq!(c.trigger_only, 30629 - 5329 - 5067 + 2);
        assert!(ClassCounts::from_nested(10, 8, 8, 1).is_err());
    }

    type Witnesses = (Option<f64>, Option<f64>, Option<f64>);

    /// Central finite differences of the witnesses over the class counts.
    fn finite_difference_sigma(c: &ClassCounts, pick: fn(Witnesses) -> f64) -> f64 {
        let base = [c.trigger_only, c.only_2, c.only_3, c.both].map(|v| v as f64);
        let eval = |v: [f64; 4]| {
            let n1 = v.iter().sum::<f64>();
            pick(witnesses(n1, v[1] + v[3], v[2] + v[3], v[3]))
        };
        let mut var = 0.0;
        for k in 0..4 {
            let h = 1e-3;
            let mut up = base;
            let mut down = base;
            up[k] += h;
            down[k] -= h;
            let d = (eval(up) - eval(down)) / (2.0 * h);
            var += base[k] * d * d;
        }
        var.sqrt()
    }

    #[test]
    fn poisson_matches_finite_differences() {
        let c = paper_counts();
        let s = poisson_sigmas(&c);
        let fd_b = finite_difference_sigma(&c, |w| w.0.unwrap());
        let fd_a = finite_difference_sigma(&c, |w| w.1.unwrap());
        let fd_g = finite_difference_sigma(&c, |w| w.2.unwrap());
        assert!((s.b_norm.unwrap() / fd_b - 1.0).abs() < 1e-6);
        assert!((s.alpha.unwrap() / fd_a - 1.0).abs() < 1e-6);
        assert!((s.g2.unwrap() / fd_g - 1.0).abs() < 1e-6);
    }

    #[test]
    fn paper_sigmas() {
        let c = paper_counts();
        let p = poisson_sigmas(&c);
        // triples dominate: σ_α ≈ α/√2, σ_g² ≈ g²/√2
        assert!((p.alpha.unwrap() - 1.6e-3).abs() < 0.1e-3);
        assert!((p.g2.unwrap() - 0.8e-3).abs() < 0.1e-3);
        let b = bootstrap_sigmas(&c, DEFAULT_RESAMPLES, 1, 0);
        let ratio = b.b_norm.unwrap() / p.b_norm.unwrap();
        assert!((ratio - 1.0).abs() < 0.3, "bootstrap/poisson = {ratio}");
        assert!(b.b_norm.unwrap() < 1e-3);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let c = paper_counts();
        assert_eq!(
            bootstrap_sigmas(&c, 200, 5, 1),
            bootstrap_sigmas(&c, 200, 5, 1)
        );
        assert_ne!(
            bootstrap_sigmas(&c, 200, 5, 1),
            bootstrap_sigmas(&c, 200, 5, 2)
        );
    }

    #[test]
    fn empty_counts_have_no_sigma() {
        let s = bootstrap_sigmas(&ClassCounts::default(), 100, 0, 0);
        assert_eq!(s, Sigmas::default());
        let p = poisson_sigmas(&ClassCounts::default());
        assert_eq!(p.b_norm, None);
    }

    #[test]
    fn report_attaches_both_methods() {
        let rates = ClickRates::from_counts(30629, 5329, 5067, 2).unwrap();
        let r = report_with_uncertainties(&rates, 500, 3, 0).unwrap();
        assert!(r.sigma_b.is_some() && r.sigma_alpha.is_some() && r.sigma_g2.is_some());
        assert!(r.sigma_poisson.unwrap().b_norm.is_some());
        let probs =
            crate::fock_model::click_probabilities(&crate::fock_model::SourceParams::ideal(0.1))
                .unwrap();
        assert!(report_with_uncertainties(&probs, 10, 0, 0).is_err());
    }
}
