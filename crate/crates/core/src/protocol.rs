//! Repeated subject-disjoint validation/test evaluation of global versus
//! per-group (adaptive) decision thresholds.
//!
//! For each split: calibrate a global threshold on every validation
//! impostor pair and one threshold per calibration group on that group's
//! validation impostors, then count matches on the test half exactly
//! under both threshold sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbeddingStore};
use crate::error::{Error, Result};
use crate::metrics::{
    inequity_ratio, threshold_for_fmr, Calibration, CategoryThreshold, InequityReport,
    ThresholdTable,
};
use crate::pairs::{PairCategory, PairKind, PairUniverse, RatioClassScheme, Scope};
use crate::scoring::{
    find_cell, score_pairs, CellRouter, PairEngine, PairSink, ScoreRequest, ScoringConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_splits: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            n_splits: 5,
        }
    }
}

/// Shuffles the (sorted) subjects with a generator keyed by `(seed, index)`
/// and halves them; validation takes the extra subject on odd counts.
pub fn split_subjects(
    subjects: &[String],
    seed: u64,
    index: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if subjects.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 subjects to split, got {}",
            subjects.len()
        )));
    }
    let mut order: Vec<String> = subjects.to_vec();
    order.sort();
    order.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    order.shuffle(&mut rng);
    let test = order.split_off(order.len().div_ceil(2));
    let mut validation = order;
    validation.sort();
    let mut test = test;
    test.sort();
    Ok((validation, test))
}

/// Validation and test sub-datasets of split `index`.
pub fn split_datasets(ds: &Dataset, seed: u64, index: u64) -> Result<(Dataset, Dataset)> {
    let subjects: Vec<String> = ds.subjects().keys().cloned().collect();
    let (val, _) = split_subjects(&subjects, seed, index)?;
    let val: BTreeSet<String> = val.into_iter().collect();
    Ok((
        ds.filter(|r| val.contains(&r.subject_id)),
        ds.filter(|r| !val.contains(&r.subject_id)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub target_fmr: f64,
    pub groups: Vec<PairCategory>,
    pub plan: SplitPlan,
    pub scheme: RatioClassScheme,
    pub scoring: ScoringConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            target_fmr: 1e-4,
            groups: PairCategory::default_groups(),
            plan: SplitPlan::default(),
            scheme: RatioClassScheme::default(),
            scoring: ScoringConfig::for_target_fmr(1e-4),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fmr > 0.0 && self.target_fmr < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target FMR {} must lie in (0, 1)",
                self.target_fmr
            )));
        }
        if self.groups.is_empty() || self.plan.n_splits == 0 {
            return Err(Error::InvalidConfig(
                "need at least one calibration group and one split".into(),
            ));
        }
        self.scheme.validate()?;
        self.scoring.validate()?;
        for (i, a) in self.groups.iter().enumerate() {
            for b in &self.groups[i + 1..] {
                if a.overlaps(b, &self.scheme) {
                    return Err(Error::InvalidConfig(format!(
                        "calibration groups {a} and {b} overlap"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    /// `None` when several thresholds apply (adaptive mode over all pairs).
    pub threshold: Option<f64>,
    pub matches: u64,
    pub fmr: Option<f64>,
    pub fnmr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub category: PairCategory,
    /// Validation impostor pairs used for calibration.
    pub validation_count: u64,
    /// FMR of the adaptive threshold on its own validation pairs.
    pub validation_fmr: f64,
    /// Test impostor pairs.
    pub count: u64,
    pub genuine_count: u64,
    /// No genuine test pairs, so neither mode has an FNMR.
    pub fnmr_undefined: bool,
    pub global: ModeOutcome,
    pub adaptive: ModeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub index: usize,
    pub validation_subjects: usize,
    pub test_subjects: usize,
    pub global_calibration: Calibration,
    pub groups: Vec<GroupOutcome>,
    /// Every test pair in scope, under the global threshold and under the
    /// adaptive table (global fallback outside the groups).
    pub all_pairs_count: u64,
    pub all_pairs_global: ModeOutcome,
    pub all_pairs_adaptive: ModeOutcome,
    pub inequity_global: InequityReport,
    pub inequity_adaptive: InequityReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Unbiased (n - 1) standard deviation; `None` below two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: None,
                std: None,
                n,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            mean: Some(mean),
            std,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// Test FMR per group across splits where it is defined.
    pub per_group: BTreeMap<String, Summary>,
    /// Inequity ratio across splits where it is defined.
    pub ratio: Summary,
    /// Splits left out of `ratio` because some group had zero FMR.
    pub excluded_zero_fmr: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub scope: String,
    pub target_fmr: f64,
    pub seed: u64,
    pub n_splits: usize,
    pub groups: Vec<PairCategory>,
    pub splits: Vec<SplitOutcome>,
    pub global: ModeSummary,
    pub adaptive: ModeSummary,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    count: u64,
    global: u64,
    adaptive: u64,
}

/// Exact match counts under a global threshold and a threshold table.
struct TallySink<'r> {
    router: &'r CellRouter,
    universe: &'r PairUniverse,
    table: &'r ThresholdTable,
    /// Threshold per slot for the adaptive mode; `None` = look up per pair.
    slot_thresholds: &'r [Option<f64>],
    tallies: Vec<Tally>,
}

impl PairSink for TallySink<'_> {
    fn wants(&self, a: usize, b: usize, kind: PairKind) -> bool {
        !self.router.route(self.universe, a, b, kind).is_empty()
    }

    fn accept(&mut self, a: usize, b: usize, kind: PairKind, score: f64) {
        let global = score >= self.table.global_threshold;
        for &slot in self.router.route(self.universe, a, b, kind) {
            let slot = slot as usize;
            let t = self.slot_thresholds[slot].unwrap_or_else(|| {
                self.table
                    .threshold_for(self.universe.classes(a), self.universe.classes(b))
            });
            let tally = &mut self.tallies[slot];
            tally.count += 1;
            tally.global += global as u64;
            tally.adaptive += (score >= t) as u64;
        }
    }

    fn absorb(&mut self, other: Self) {
        for (x, y) in self.tallies.iter_mut().zip(other.tallies) {
            x.count += y.count;
            x.global += y.global;
            x.adaptive += y.adaptive;
        }
    }
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn calibrate(
    cells: &[crate::scoring::ScoreCell],
    category: Option<PairCategory>,
    target: f64,
) -> Result<Calibration> {
    let name = category.map_or_else(|| "all impostors".to_string(), |c| c.to_string());
    let cell = find_cell(cells, PairKind::Impostor, category).expect("requested cell");
    if cell.set.is_empty() {
        return Err(Error::CannotCalibrate {
            group: name,
            reason: "no validation impostor pairs".into(),
        });
    }
    threshold_for_fmr(&cell.set, target).map_err(|e| match e {
        Error::TailTooShort { .. } => Error::CannotCalibrate {
            group: name,
            reason: e.to_string(),
        },
        other => other,
    })
}

/// Runs every split of `config.plan` on the images in `scope`.
pub fn run_protocol(
    ds: &Dataset,
    store: &EmbeddingStore,
    scope: &Scope,
    config: &ProtocolConfig,
) -> Result<ProtocolResult> {
    config.validate()?;
    let scoped = ds.filter(|r| scope.includes(r));
    scoped.require_ratios()?;
    scoped.validate_embeddings(store)?;
    let splits = (0..config.plan.n_splits)
        .map(|i| run_split(&scoped, store, scope, config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult {
        scope: scope.to_string(),
        target_fmr: config.target_fmr,
        seed: config.plan.seed,
        n_splits: config.plan.n_splits,
        groups: config.groups.clone(),
        global: summarize(&splits, &config.groups, |g| g.global, |s| &s.inequity_global),
        adaptive: summarize(&splits, &config.groups, |g| g.adaptive, |s| &s.inequity_adaptive),
        splits,
    })
}

fn run_split(
    ds: &Dataset,
    store: &EmbeddingStore,
    scope: &Scope,
    config: &ProtocolConfig,
    index: usize,
) -> Result<SplitOutcome> {
    let (val, test) = split_datasets(ds, config.plan.seed, index as u64)?;
    let groups = &config.groups;

    let request = ScoreRequest::new(scope.clone(), groups.clone()).impostors_only();
    let cells = score_pairs(&val, store, &request, &config.scheme, &config.scoring)?;
    let global_calibration = calibrate(&cells, None, config.target_fmr)?;
    let group_calibrations = groups
        .iter()
        .map(|&g| calibrate(&cells, Some(g), config.target_fmr))
        .collect::<Result<Vec<_>>>()?;
    let table = ThresholdTable {
        global_threshold: global_calibration.threshold,
        per_category: groups
            .iter()
            .zip(&group_calibrations)
            .map(|(&category, c)| CategoryThreshold {
                category,
                threshold: c.threshold,
            })
            .collect(),
    };

    // slots: impostor all, impostor groups..., genuine all, genuine groups...
    let mut keys = Vec::new();
    let mut slot_thresholds = Vec::new();
    for kind in [PairKind::Impostor, PairKind::Genuine] {
        keys.push((kind, None));
        slot_thresholds.push(None);
        for (g, c) in groups.iter().zip(&group_calibrations) {
            keys.push((kind, Some(*g)));
            slot_thresholds.push(Some(c.threshold));
        }
    }
    let universe = PairUniverse::new(&test, scope, &config.scheme, true, false)?;
    let router = CellRouter::new(&keys);
    let engine = PairEngine::new(&universe, &test, Some(store), &config.scoring);
    let tallies = engine
        .run(|| TallySink {
            router: &router,
            universe: &universe,
            table: &table,
            slot_thresholds: &slot_thresholds,
            tallies: vec![Tally::default(); keys.len()],
        })
        .tallies;
    let (imp, gen) = tallies.split_at(groups.len() + 1);

    let mode = |threshold: Option<f64>, imp: &Tally, gen: &Tally, adaptive: bool| {
        let (im, gm) = if adaptive {
            (imp.adaptive, gen.adaptive)
        } else {
            (imp.global, gen.global)
        };
        ModeOutcome {
            threshold,
            matches: im,
            fmr: rate(im, imp.count),
            fnmr: rate(gen.count - gm, gen.count),
        }
    };
    let group_outcomes: Vec<GroupOutcome> = groups
        .iter()
        .enumerate()
        .map(|(k, &category)| {
            let (it, gt, cal) = (&imp[k + 1], &gen[k + 1], &group_calibrations[k]);
            let val_cell = find_cell(&cells, PairKind::Impostor, Some(category)).unwrap();
            GroupOutcome {
                category,
                validation_count: val_cell.set.count(),
                validation_fmr: cal.fmr,
                count: it.count,
                genuine_count: gt.count,
                fnmr_undefined: gt.count == 0,
                global: mode(Some(table.global_threshold), it, gt, false),
                adaptive: mode(Some(cal.threshold), it, gt, true),
            }
        })
        .collect();

    let fmrs = |adaptive: bool| -> BTreeMap<String, Option<f64>> {
        group_outcomes
            .iter()
            .map(|g| {
                let m = if adaptive { g.adaptive } else { g.global };
                (g.category.to_string(), m.fmr)
            })
            .collect()
    };
    Ok(SplitOutcome {
        index,
        validation_subjects: val.subjects().len(),
        test_subjects: test.subjects().len(),
        global_calibration,
        all_pairs_count: imp[0].count,
        all_pairs_global: mode(Some(table.global_threshold), &imp[0], &gen[0], false),
        all_pairs_adaptive: mode(None, &imp[0], &gen[0], true),
        inequity_global: inequity_ratio(&fmrs(false)),
        inequity_adaptive: inequity_ratio(&fmrs(true)),
        groups: group_outcomes,
    })
}

fn summarize(
    splits: &[SplitOutcome],
    groups: &[PairCategory],
    mode: impl Fn(&GroupOutcome) -> ModeOutcome,
    inequity: impl Fn(&SplitOutcome) -> &InequityReport,
) -> ModeSummary {
    let per_group = groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let s = Summary::of(splits.iter().filter_map(|s| mode(&s.groups[k]).fmr));
            (g.to_string(), s)
        })
        .collect();
    let ratio = Summary::of(splits.iter().filter_map(|s| inequity(s).ratio));
    let excluded_zero_fmr = splits
        .iter()
        .filter(|s| !inequity(s).excluded_zero_fmr.is_empty())
        .map(|s| s.index)
        .collect();
    ModeSummary {
        per_group,
        ratio,
        excluded_zero_fmr,
    }
}

/// `mean±std` with FMRs scaled to units of 1e-4, two decimals.
pub fn format_fmr(s: &Summary) -> String {
    format_scaled(s, 1e4)
}

pub fn format_ratio(s: &Summary) -> String {
    format_scaled(s, 1.0)
}

fn format_scaled(s: &Summary, scale: f64) -> String {
    match (s.mean, s.std) {
        (None, _) => "n/a".to_string(),
        (Some(m), None) => format!("{:.2}", m * scale),
        (Some(m), Some(sd)) => format!("{:.2}±{:.2}", m * scale, sd * scale),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scope: String,
    /// "global" or "adaptive".
    pub mode: String,
    /// Test FMR summaries, in the order of the table's groups.
    pub fmr: Vec<Summary>,
    pub ratio: Summary,
}

/// One row per (scope, mode), global first.
pub fn table3_rows(results: &[ProtocolResult]) -> (Vec<PairCategory>, Vec<TableRow>) {
    let groups: Vec<PairCategory> = results.first().map(|r| r.groups.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    for r in results {
        for (mode, m) in [("global", &r.global), ("adaptive", &r.adaptive)] {
            rows.push(TableRow {
                scope: r.scope.clone(),
                mode: mode.to_string(),
                fmr: groups
                    .iter()
                    .map(|g| m.per_group.get(&g.to_string()).copied().unwrap_or(Summary::of([])))
                    .collect(),
                ratio: m.ratio,
            });
        }
    }
    (groups, rows)
}

/// Per-group test FMR (x1e-4) and the inequity ratio, each as mean±std
/// over splits, plus the number of splits behind the ratio.
pub fn render_table3_csv(groups: &[PairCategory], rows: &[TableRow]) -> String {
    let mut out = String::from("scope,mode");
    for g in groups {
        let _ = write!(out, ",{g} (1e-4)");
    }
    out.push_str(",max/min,ratio_splits\n");
    for row in rows {
        let _ = write!(out, "{},{}", row.scope, row.mode);
        for s in &row.fmr {
            let _ = write!(out, ",{}", format_fmr(s));
        }
        let _ = writeln!(out, ",{},{}", format_ratio(&row.ratio), row.ratio.n);
    }
    out
}

/// Aligned plain-text version of [`render_table3_csv`].
pub fn render_table3_text(groups: &[PairCategory], rows: &[TableRow], n_splits: usize) -> String {
    let mut header = vec![String::new()];
    header.extend(groups.iter().map(|g| format!("{g} (1e-4)")));
    header.push("max/min".into());
    let mut table = vec![header];
    for row in rows {
        let mode = if row.mode == "global" { "Global Thr" } else { "Adaptive Thr" };
        let mut cells = vec![format!("{} ({mode})", row.scope)];
        cells.extend(row.fmr.iter().map(format_fmr));
        let mut ratio = format_ratio(&row.ratio);
        if row.ratio.n != n_splits {
            let _ = write!(ratio, " ({} splits)", row.ratio.n);
        }
        cells.push(ratio);
        table.push(cells);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
    }
    out
}

pub fn table3_csv(results: &[ProtocolResult]) -> String {
    let (groups, rows) = table3_rows(results);
    render_table3_csv(&groups, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn split_sizes() {
        let (v, t) = split_subjects(&subjects(4), 1, 0).unwrap();
        assert_eq!((v.len(), t.len()), (2, 2));
        let (v, t) = split_subjects(&subjects(5), 1, 0).unwrap();
        assert_eq!((v.len(), t.len()), (3, 2));
        assert!(split_subjects(&subjects(1), 1, 0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let s = subjects(101);
        let a = split_subjects(&s, 7, 3).unwrap();
        let mut shuffled = s.clone();
        shuffled.reverse();
        assert_eq!(a, split_subjects(&shuffled, 7, 3).unwrap());
        assert_ne!(a, split_subjects(&s, 7, 4).unwrap());
        let val: BTreeSet<_> = a.0.iter().collect();
        assert!(a.1.iter().all(|x| !val.contains(x)));
        assert_eq!(a.0.len() + a.1.len(), 101);
    }

    #[test]
    fn summary_uses_unbiased_std() {
        let s = Summary::of([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, Some(2.5));
        assert!((s.std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of([1.0]).std, None);
    }

    #[test]
    fn fmr_formatting() {
        let s = Summary {
            mean: Some(2.55e-4),
            std: Some(0.09e-4),
            n: 5,
        };
        assert_eq!(format_fmr(&s), "2.55±0.09");
        assert_eq!(format_fmr(&Summary::of([])), "n/a");
    }

    fn summary(mean: f64, std: f64, n: usize) -> Summary {
        Summary {
            mean: Some(mean),
            std: Some(std),
            n,
        }
    }

    #[test]
    fn published_layout_fixture() {
        let groups = PairCategory::default_groups();
        let rows = vec![
            TableRow {
                scope: "AAM".into(),
                mode: "global".into(),
                fmr: vec![
                    summary(2.55e-4, 0.09e-4, 5),
                    summary(0.33e-4, 0.02e-4, 5),
                    summary(3.61e-4, 0.58e-4, 5),
                ],
                ratio: summary(10.79, 1.54, 5),
            },
            TableRow {
                scope: "AAM".into(),
                mode: "adaptive".into(),
                fmr: vec![
                    summary(0.97e-4, 0.12e-4, 5),
                    summary(1.04e-4, 0.07e-4, 5),
                    summary(0.96e-4, 0.82e-4, 5),
                ],
                ratio: summary(1.78, 0.32, 3),
            },
        ];
        assert_eq!(
            render_table3_csv(&groups, &rows),
            "scope,mode,cl_vs_cl (1e-4),cl_vs_fh_L1 (1e-4),fh_L2_vs_fh_L2 (1e-4),max/min,ratio_splits\n\
             AAM,global,2.55±0.09,0.33±0.02,3.61±0.58,10.79±1.54,5\n\
             AAM,adaptive,0.97±0.12,1.04±0.07,0.96±0.82,1.78±0.32,3\n"
        );
        let text = render_table3_text(&groups, &rows, 5);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("AAM (Global Thr)"));
        assert!(lines[2].ends_with("1.78±0.32 (3 splits)"));
    }

    #[test]
    fn overlapping_groups_rejected() {
        let cfg = ProtocolConfig {
            groups: vec!["fh_L1_vs_fh_L1".parse().unwrap(), "fh_L2_vs_fh_L2".parse().unwrap()],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        ProtocolConfig::default().validate().unwrap();
    }
}
