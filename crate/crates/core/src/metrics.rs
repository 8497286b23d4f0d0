//! Verification error rates and fairness measures over [`ScoreSet`]s.
//!
//! The decision rule everywhere is "match iff score >= threshold".
//! Rates are exact when the queried threshold falls inside the retained
//! tail (or the tail holds every score); otherwise the exact functions
//! fail with [`Error::TailTooShort`] and the `_approx` variants fall back
//! to the histogram.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{ClassSet, PairCategory, PairKind};
use crate::scoring::{ScoreCell, ScoreSet, TailSide};

/// Exact number of scores `>= t`.
pub fn count_at_least(set: &ScoreSet, t: f64) -> Result<u64> {
    let n = set.count();
    let (Some(min), Some(max)) = (set.min(), set.max()) else {
        return Ok(0);
    };
    if t > max {
        return Ok(0);
    }
    if t <= min {
        return Ok(n);
    }
    let tail = set.tail();
    let complete = set.tail_is_complete();
    match set.side() {
        TailSide::High => {
            // scores outside the tail are <= its last element
            let floor = tail.last().copied().unwrap_or(f64::INFINITY);
            if complete || t > floor {
                Ok(tail.iter().take_while(|&&s| s >= t).count() as u64)
            } else {
                Err(too_short(set, t))
            }
        }
        TailSide::Low => {
            // scores outside the tail are >= its last element
            let ceiling = tail.last().copied().unwrap_or(f64::NEG_INFINITY);
            if complete || t <= ceiling {
                Ok(n - tail.iter().take_while(|&&s| s < t).count() as u64)
            } else {
                Err(too_short(set, t))
            }
        }
    }
}

fn too_short(set: &ScoreSet, t: f64) -> Error {
    Error::TailTooShort {
        threshold: t,
        retained: set.tail().len(),
        count: set.count(),
    }
}

/// False match rate `|{s >= t}| / count`; `None` for an empty set.
pub fn fmr_at(set: &ScoreSet, t: f64) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    Ok(Some(count_at_least(set, t)? as f64 / set.count() as f64))
}

/// False non-match rate `|{s < t}| / count`; `None` for an empty set.
pub fn fnmr_at(set: &ScoreSet, t: f64) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let below = set.count() - count_at_least(set, t)?;
    Ok(Some(below as f64 / set.count() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// False when read from the histogram; error is then at most the
    /// mass of one bin.
    pub exact: bool,
}

fn histogram_at_least(set: &ScoreSet, t: f64) -> f64 {
    let cfg = set.config();
    let b = cfg.bin_of(t);
    let above: u64 = set.histogram()[b + 1..].iter().sum();
    let upper = cfg.bin_lower(b) + cfg.bin_width();
    let frac = ((upper - t) / cfg.bin_width()).clamp(0.0, 1.0);
    above as f64 + frac * set.histogram()[b] as f64
}

pub fn fmr_at_approx(set: &ScoreSet, t: f64) -> Option<RateEstimate> {
    match fmr_at(set, t) {
        Ok(rate) => rate.map(|rate| RateEstimate { rate, exact: true }),
        Err(_) => Some(RateEstimate {
            rate: histogram_at_least(set, t) / set.count() as f64,
            exact: false,
        }),
    }
}

pub fn fnmr_at_approx(set: &ScoreSet, t: f64) -> Option<RateEstimate> {
    match fnmr_at(set, t) {
        Ok(rate) => rate.map(|rate| RateEstimate { rate, exact: true }),
        Err(_) => Some(RateEstimate {
            rate: 1.0 - histogram_at_least(set, t) / set.count() as f64,
            exact: false,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Scores at or above the threshold.
    pub matches: u64,
    pub count: u64,
    pub fmr: f64,
    /// The target could not be met by any observed score; the threshold
    /// sits just above the maximum.
    pub unreachable: bool,
}

/// Smallest observed score `t` with `fmr_at(t) <= target`.
pub fn threshold_for_fmr(set: &ScoreSet, target: f64) -> Result<Calibration> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target FMR {target} must lie in (0, 1]"
        )));
    }
    let n = set.count();
    let (Some(min), Some(max)) = (set.min(), set.max()) else {
        return Err(Error::EmptyInput("impostor scores"));
    };
    if (n as f64) * target < 1.0 {
        warn!(
            "calibrating FMR {target} on {n} scores: fewer than 1/target, estimate is coarse"
        );
    }
    let done = |threshold: f64, matches: u64| Calibration {
        threshold,
        matches,
        count: n,
        fmr: matches as f64 / n as f64,
        unreachable: false,
    };
    if target >= 1.0 {
        return Ok(done(min, n));
    }
    let complete = set.tail_is_complete();
    let descending: Vec<f64> = match set.side() {
        TailSide::High => set.tail().to_vec(),
        TailSide::Low if complete => set.tail().iter().rev().copied().collect(),
        TailSide::Low => {
            return Err(Error::ConfigMismatch(
                "FMR calibration needs a high-side tail or a complete score list".into(),
            ))
        }
    };
    let mut best: Option<(f64, u64)> = None;
    let mut i = 0;
    while i < descending.len() {
        let v = descending[i];
        let mut j = i;
        while j < descending.len() && descending[j] == v {
            j += 1;
        }
        // j is a lower bound on |{s >= v}|; exact unless v is the tail floor
        if j as f64 / n as f64 > target {
            break;
        }
        if !complete && j == descending.len() {
            return Err(too_short(set, v));
        }
        best = Some((v, j as u64));
        i = j;
    }
    match best {
        Some((v, matches)) => Ok(done(v, matches)),
        None => {
            warn!("target FMR {target} unreachable at any observed score; threshold set above the maximum");
            Ok(Calibration {
                threshold: max.next_up(),
                matches: 0,
                count: n,
                fmr: 0.0,
                unreachable: true,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerReport {
    /// Mean of FMR and FNMR at the chosen threshold.
    pub rate: f64,
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
    /// Computed from complete score lists rather than histograms.
    pub exact: bool,
    /// Zero when exact, one bin width otherwise.
    pub threshold_uncertainty: f64,
    /// Every genuine score is above every impostor score.
    pub separated: bool,
}

/// Threshold minimizing `|FMR - FNMR|` (smallest such threshold on ties).
pub fn eer(impostor: &ScoreSet, genuine: &ScoreSet) -> Result<EerReport> {
    if impostor.is_empty() || genuine.is_empty() {
        return Err(Error::EmptyInput("EER needs impostor and genuine scores"));
    }
    if impostor.tail_is_complete() && genuine.tail_is_complete() {
        Ok(eer_exact(impostor, genuine))
    } else {
        eer_histogram(impostor, genuine)
    }
}

fn ascending(set: &ScoreSet) -> Vec<f64> {
    let mut v = set.tail().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

struct Best {
    abs_gap: f64,
    threshold: f64,
    fmr: f64,
    fnmr: f64,
}

impl Best {
    fn offer(best: &mut Option<Best>, threshold: f64, fmr: f64, fnmr: f64) {
        let abs_gap = (fmr - fnmr).abs();
        if best.as_ref().is_none_or(|b| abs_gap < b.abs_gap) {
            *best = Some(Best {
                abs_gap,
                threshold,
                fmr,
                fnmr,
            });
        }
    }
}

fn eer_exact(impostor: &ScoreSet, genuine: &ScoreSet) -> EerReport {
    let imp = ascending(impostor);
    let gen = ascending(genuine);
    let (ni, ng) = (imp.len() as f64, gen.len() as f64);
    let mut candidates: Vec<f64> = imp.iter().chain(&gen).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(candidates.last().unwrap().next_up());
    let (mut ii, mut gi) = (0, 0);
    let mut best = None;
    for t in candidates {
        while ii < imp.len() && imp[ii] < t {
            ii += 1;
        }
        while gi < gen.len() && gen[gi] < t {
            gi += 1;
        }
        Best::offer(&mut best, t, (imp.len() - ii) as f64 / ni, gi as f64 / ng);
    }
    let b = best.unwrap();
    EerReport {
        rate: (b.fmr + b.fnmr) / 2.0,
        threshold: b.threshold,
        fmr: b.fmr,
        fnmr: b.fnmr,
        exact: true,
        threshold_uncertainty: 0.0,
        separated: b.fmr == 0.0 && b.fnmr == 0.0,
    }
}

fn eer_histogram(impostor: &ScoreSet, genuine: &ScoreSet) -> Result<EerReport> {
    let cfg = impostor.config();
    if cfg.bins != genuine.config().bins {
        return Err(Error::ConfigMismatch(
            "impostor and genuine histograms differ in bin count".into(),
        ));
    }
    let (hi, hg) = (impostor.histogram(), genuine.histogram());
    let (ni, ng) = (impostor.count() as f64, genuine.count() as f64);
    let mut imp_at_least = impostor.count();
    let mut gen_below = 0u64;
    let mut best = None;
    // threshold at the lower edge of bin b; b == bins is above every score
    for b in 0..=cfg.bins {
        let t = if b == cfg.bins {
            1.0f64.next_up()
        } else {
            cfg.bin_lower(b)
        };
        Best::offer(
            &mut best,
            t,
            imp_at_least as f64 / ni,
            gen_below as f64 / ng,
        );
        if b < cfg.bins {
            imp_at_least -= hi[b];
            gen_below += hg[b];
        }
    }
    let b = best.unwrap();
    Ok(EerReport {
        rate: (b.fmr + b.fnmr) / 2.0,
        threshold: b.threshold,
        fmr: b.fmr,
        fnmr: b.fnmr,
        exact: false,
        threshold_uncertainty: cfg.bin_width(),
        separated: b.fmr == 0.0 && b.fnmr == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequityReport {
    /// max / min over groups with positive FMR; `None` with fewer than two.
    pub ratio: Option<f64>,
    pub max_group: Option<String>,
    pub min_group: Option<String>,
    pub excluded_zero_fmr: Vec<String>,
    /// Groups whose FMR is undefined (no pairs).
    pub undefined: Vec<String>,
}

/// Ratio of the highest to the lowest FMR across groups. Zero-FMR groups
/// are excluded and listed.
pub fn inequity_ratio(fmrs: &BTreeMap<String, Option<f64>>) -> InequityReport {
    let mut excluded_zero_fmr = Vec::new();
    let mut undefined = Vec::new();
    let mut positive: Vec<(&String, f64)> = Vec::new();
    for (g, v) in fmrs {
        match v {
            None => undefined.push(g.clone()),
            Some(v) if *v <= 0.0 => excluded_zero_fmr.push(g.clone()),
            Some(v) => positive.push((g, *v)),
        }
    }
    if positive.len() < 2 {
        return InequityReport {
            ratio: None,
            max_group: None,
            min_group: None,
            excluded_zero_fmr,
            undefined,
        };
    }
    let hi = positive
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let lo = positive
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    InequityReport {
        ratio: Some(hi.1 / lo.1),
        max_group: Some(hi.0.clone()),
        min_group: Some(lo.0.clone()),
        excluded_zero_fmr,
        undefined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryThreshold {
    pub category: PairCategory,
    pub threshold: f64,
}

/// One global threshold plus per-category overrides. Pairs outside every
/// calibrated category use the global threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub global_threshold: f64,
    pub per_category: Vec<CategoryThreshold>,
}

impl ThresholdTable {
    pub fn global(threshold: f64) -> Self {
        Self {
            global_threshold: threshold,
            per_category: Vec::new(),
        }
    }

    pub fn category(&self, c: &PairCategory) -> Option<f64> {
        self.per_category
            .iter()
            .find(|e| &e.category == c)
            .map(|e| e.threshold)
    }

    /// Threshold for a pair: the first calibrated category it matches, else global.
    pub fn threshold_for(&self, a: ClassSet, b: ClassSet) -> f64 {
        self.per_category
            .iter()
            .find(|e| e.category.matches(a, b))
            .map_or(self.global_threshold, |e| e.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub scope: String,
    pub kind: PairKind,
    pub category: Option<PairCategory>,
    pub count: u64,
    pub threshold: f64,
    pub fmr: Option<f64>,
    pub fnmr: Option<f64>,
    pub exact: bool,
    pub zero_count: bool,
    pub zero_fmr: bool,
}

/// FMR of every impostor cell and FNMR of every genuine cell, each at the
/// threshold the table assigns to the cell's category.
pub fn error_report(cells: &[ScoreCell], table: &ThresholdTable) -> Vec<CellError> {
    cells
        .iter()
        .map(|cell| {
            let threshold = cell
                .category
                .and_then(|c| table.category(&c))
                .unwrap_or(table.global_threshold);
            let (rate, fmr, fnmr) = match cell.kind {
                PairKind::Impostor => {
                    let r = fmr_at_approx(&cell.set, threshold);
                    (r, r.map(|r| r.rate), None)
                }
                PairKind::Genuine => {
                    let r = fnmr_at_approx(&cell.set, threshold);
                    (r, None, r.map(|r| r.rate))
                }
            };
            CellError {
                scope: cell.scope.clone(),
                kind: cell.kind,
                category: cell.category,
                count: cell.set.count(),
                threshold,
                fmr,
                fnmr,
                exact: rate.is_none_or(|r| r.exact),
                zero_count: cell.set.is_empty(),
                zero_fmr: fmr == Some(0.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// FMR and FNMR at `points` evenly spaced thresholds across the histogram
/// range, for plotting.
pub fn error_curve(impostor: &ScoreSet, genuine: &ScoreSet, points: usize) -> Vec<CurvePoint> {
    if impostor.is_empty() || genuine.is_empty() || points < 2 {
        return Vec::new();
    }
    (0..points)
        .map(|i| {
            let threshold = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
            CurvePoint {
                threshold,
                fmr: fmr_at_approx(impostor, threshold).unwrap().rate,
                fnmr: fnmr_at_approx(genuine, threshold).unwrap().rate,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::SetConfig;

    fn high(scores: &[f64], cap: usize) -> ScoreSet {
        ScoreSet::from_scores(
            SetConfig::new(TailSide::High, cap).with_bins(1000),
            scores.iter().copied(),
        )
    }

    fn low(scores: &[f64], cap: usize) -> ScoreSet {
        ScoreSet::from_scores(
            SetConfig::new(TailSide::Low, cap).with_bins(1000),
            scores.iter().copied(),
        )
    }

    fn tenths() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn fmr_boundaries() {
        let s = high(&tenths(), 3);
        assert_eq!(fmr_at(&s, 1.5).unwrap(), Some(0.0));
        assert_eq!(fmr_at(&s, 0.1).unwrap(), Some(1.0));
        assert_eq!(fmr_at(&s, -1.0).unwrap(), Some(1.0));
        assert_eq!(fmr_at(&s, 0.85).unwrap(), Some(0.2));
        assert!(matches!(fmr_at(&s, 0.8), Err(Error::TailTooShort { .. })));
        assert!(matches!(fmr_at(&s, 0.5), Err(Error::TailTooShort { .. })));
        assert_eq!(fmr_at(&high(&[], 3), 0.0).unwrap(), None);
    }

    #[test]
    fn fnmr_boundaries() {
        let s = low(&tenths(), 3);
        assert_eq!(fnmr_at(&s, 0.1).unwrap(), Some(0.0));
        assert_eq!(fnmr_at(&s, 1.01).unwrap(), Some(1.0));
        // t == tail ceiling is exact for the low side
        assert_eq!(fnmr_at(&s, 0.3).unwrap(), Some(0.2));
        assert!(fnmr_at(&s, 0.35).is_err());
    }

    #[test]
    fn fnmr_fifth_smallest_is_strict() {
        let v: Vec<f64> = (0..1000).map(|i| -0.5 + i as f64 / 1000.0).collect();
        let s = low(&v, 10);
        assert_eq!(fnmr_at(&s, v[4]).unwrap(), Some(4.0 / 1000.0));
    }

    #[test]
    fn calibrate_tenths() {
        let c = threshold_for_fmr(&high(&tenths(), 10), 0.25).unwrap();
        assert_eq!(c.threshold, 0.9);
        assert_eq!(c.fmr, 0.2);
        assert!(!c.unreachable);
        assert_eq!(threshold_for_fmr(&high(&tenths(), 10), 1.0).unwrap().threshold, 0.1);
        assert_eq!(threshold_for_fmr(&high(&tenths(), 4), 0.25).unwrap().threshold, 0.9);
        assert!(threshold_for_fmr(&high(&tenths(), 2), 0.25).is_err());
    }

    #[test]
    fn calibrate_unreachable_when_top_tied() {
        let s = high(&[0.5; 10], 10);
        let c = threshold_for_fmr(&s, 0.05).unwrap();
        assert!(c.unreachable);
        assert!(c.threshold > 0.5);
        assert_eq!(fmr_at(&s, c.threshold).unwrap(), Some(0.0));
    }

    #[test]
    fn calibrate_errors() {
        assert!(threshold_for_fmr(&high(&[], 1), 0.1).is_err());
        assert!(threshold_for_fmr(&high(&[0.1], 1), 0.0).is_err());
        assert!(threshold_for_fmr(&low(&tenths(), 3), 0.1).is_err());
        // complete low-side set is fine
        assert_eq!(threshold_for_fmr(&low(&tenths(), 10), 0.25).unwrap().threshold, 0.9);
    }

    #[test]
    fn eer_identical_distributions() {
        let v = tenths();
        let r = eer(&high(&v, 10), &low(&v, 10)).unwrap();
        assert_eq!(r.rate, 0.5);
        assert!(r.exact);
        let r = eer(&high(&v, 2), &low(&v, 2)).unwrap();
        assert!((r.rate - 0.5).abs() <= 0.1, "{r:?}");
        assert!(!r.exact);
    }

    #[test]
    fn eer_separated() {
        let r = eer(&high(&[-0.2, 0.0, 0.1], 3), &low(&[0.5, 0.9], 2)).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!(r.separated);
        assert!(r.threshold > 0.1 && r.threshold <= 0.5);
        let r = eer(&high(&[-0.2, 0.0, 0.1], 1), &low(&[0.5, 0.9], 1)).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!(r.separated);
        assert!(eer(&high(&[], 1), &low(&[0.5], 1)).is_err());
    }

    #[test]
    fn inequity_examples() {
        let m = |v: &[(&str, Option<f64>)]| {
            v.iter()
                .map(|(k, x)| (k.to_string(), *x))
                .collect::<BTreeMap<_, _>>()
        };
        let r = inequity_ratio(&m(&[
            ("cl_vs_cl", Some(2.55e-4)),
            ("cl_vs_fh_L1", Some(0.33e-4)),
            ("fh_L2_vs_fh_L2", Some(3.61e-4)),
        ]));
        assert!((r.ratio.unwrap() - 10.94).abs() < 0.005);
        assert_eq!(r.max_group.as_deref(), Some("fh_L2_vs_fh_L2"));
        let r = inequity_ratio(&m(&[("a", Some(1e-4)), ("b", Some(1e-4))]));
        assert_eq!(r.ratio, Some(1.0));
        let r = inequity_ratio(&m(&[("a", Some(1e-4)), ("b", Some(0.0)), ("c", None)]));
        assert_eq!(r.ratio, None);
        assert_eq!(r.excluded_zero_fmr, ["b"]);
        assert_eq!(r.undefined, ["c"]);
    }

    #[test]
    fn table_lookup_falls_back_to_global() {
        use crate::pairs::RatioClassScheme;
        let s = RatioClassScheme::default();
        let t = ThresholdTable {
            global_threshold: 0.3,
            per_category: vec![CategoryThreshold {
                category: "fh_L2_vs_fh_L2".parse().unwrap(),
                threshold: 0.4,
            }],
        };
        let c = |r| s.classify(r).unwrap();
        assert_eq!(t.threshold_for(c(0.2), c(0.3)), 0.4);
        assert_eq!(t.threshold_for(c(0.0), c(0.3)), 0.3);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["per_category"][0]["threshold"], 0.4);
    }

    #[test]
    fn approx_falls_back_to_histogram() {
        let v: Vec<f64> = (0..1000).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 1000.0).collect();
        let s = high(&v, 10);
        let r = fmr_at_approx(&s, 0.0).unwrap();
        assert!(!r.exact);
        assert!((r.rate - 0.5).abs() <= 1.0 / 1000.0);
        assert!(fmr_at_approx(&s, 0.999).unwrap().exact);
    }

    #[test]
    fn report_flags() {
        let cells = vec![ScoreCell {
            kind: PairKind::Impostor,
            category: None,
            scope: "all".into(),
            set: high(&tenths(), 10),
        }];
        let r = error_report(&cells, &ThresholdTable::global(2.0));
        assert_eq!(r[0].fmr, Some(0.0));
        assert!(r[0].zero_fmr && r[0].exact && !r[0].zero_count);
    }
}
