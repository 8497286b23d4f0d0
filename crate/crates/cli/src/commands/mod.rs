mod evaluate;
mod masks;
mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hirsute_core::metrics::{error_report, threshold_for_fmr, CategoryThreshold, ThresholdTable};
use hirsute_core::pairs::RatioClass;
use hirsute_core::protocol::{render_table3_csv, render_table3_text, table3_rows, ProtocolResult};
use hirsute_core::scoring::{
    count_cells, find_cell, read_cells, score_pairs, write_cells, write_histogram_csv, ScoreCell,
    ScoreRequest,
};
use hirsute_core::{Calibration, Dataset, EmbeddingStore, PairCategory, PairKind, Scope};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Flags, RunConfig, SNAPSHOT_FILE};
use crate::error::CliError;
use crate::{CalibrateArgs, ReportArgs, ReportFormat};

pub use evaluate::evaluate;
pub use masks::mask_eval;
pub use synth::synth;

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table3.csv";
pub const CACHE_FILE: &str = "scores.fhsc";

type CliResult<T = ()> = Result<T, CliError>;

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// Creates the output directory and writes the config snapshot into it.
fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = require(&cfg.out, "--out")?.to_path_buf();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write_file(&out.join(SNAPSHOT_FILE), cfg.snapshot())?;
    Ok(out)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text)
}

/// Manifest with ratios filled from masks where needed.
fn load_manifest(cfg: &RunConfig) -> CliResult<Dataset> {
    let manifest = require(&cfg.manifest, "--manifest")?;
    let ds = Dataset::load_manifest(manifest)?;
    if ds.records().iter().any(|r| r.mask_path.is_some()) {
        let root = match &cfg.masks {
            Some(m) => m.clone(),
            None => manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        return Ok(ds.derive_ratios_from_masks(&root, cfg.count_shadow)?);
    }
    Ok(ds)
}

fn load_data(cfg: &RunConfig) -> CliResult<(Dataset, EmbeddingStore)> {
    let ds = load_manifest(cfg)?;
    let path = require(&cfg.embeddings, "--embeddings")?;
    let store = EmbeddingStore::load(path, cfg.dim)?;
    ds.validate_embeddings(&store)?;
    Ok((ds, store))
}

/// Configured scopes, or every demographic tag in the dataset.
fn scopes(cfg: &RunConfig, ds: &Dataset) -> CliResult<Vec<Scope>> {
    if cfg.scopes.is_empty() {
        return Ok(ds
            .demographics()
            .keys()
            .map(|d| Scope::Demographic(d.clone()))
            .collect());
    }
    let mut out = Vec::new();
    for s in &cfg.scopes {
        let scope: Scope = s.parse()?;
        if let Scope::Demographic(d) = &scope {
            if !ds.demographics().contains_key(d) {
                return Err(CliError::Data(format!("no images with demographic {d:?}")));
            }
        }
        out.push(scope);
    }
    Ok(out)
}

fn request(cfg: &RunConfig, scope: Scope) -> ScoreRequest {
    let mut req = ScoreRequest::new(scope, cfg.groups.clone());
    req.cross_demographic = cfg.cross_demographic;
    req
}

fn score_all(cfg: &RunConfig, ds: &Dataset, store: &EmbeddingStore) -> CliResult<Vec<ScoreCell>> {
    let mut cells = Vec::new();
    for scope in scopes(cfg, ds)? {
        info!("scoring scope {scope}");
        cells.extend(score_pairs(ds, store, &request(cfg, scope), &cfg.classes, &cfg.scoring())?);
    }
    Ok(cells)
}

fn cell_file_name(cell: &ScoreCell) -> String {
    let cat = cell
        .category
        .map_or_else(|| "all".to_string(), |c| c.to_string());
    let scope: String = cell
        .scope
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{scope}__{}__{cat}.csv", cell.kind)
}

/// Coarsened score histograms, one CSV per cell, for distribution plots.
fn write_histograms(dir: &Path, cells: &[ScoreCell], coarsen: usize) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for cell in cells {
        let path = dir.join(cell_file_name(cell));
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &cell.set, coarsen)?;
        write_file(&path, buf)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn fmt_e4(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", x * 1e4))
}

#[derive(Serialize)]
struct TagSummary {
    images: usize,
    subjects: usize,
}

#[derive(Serialize)]
struct PairCount {
    scope: String,
    kind: PairKind,
    category: String,
    count: u64,
}

#[derive(Serialize)]
struct IngestSummary {
    images: usize,
    subjects: usize,
    demographics: BTreeMap<String, TagSummary>,
    /// Images per ratio class; fh_L2 images are also fh_L1.
    classes: BTreeMap<String, usize>,
    pairs: Vec<PairCount>,
}

pub fn ingest(flags: &Flags) -> CliResult {
    let cfg = RunConfig::resolve(flags)?;
    let ds = load_manifest(&cfg)?;
    if let Some(path) = &cfg.embeddings {
        let store = EmbeddingStore::load(path, cfg.dim)?;
        ds.validate_embeddings(&store)?;
    }
    let out = prepare_out(&cfg)?;
    ds.write_manifest(&out.join("manifest.csv"))?;

    let demographics = ds
        .demographics()
        .iter()
        .map(|(tag, idx)| {
            let subjects: std::collections::BTreeSet<&str> =
                idx.iter().map(|&i| ds.record(i).subject_id.as_str()).collect();
            let summary = TagSummary {
                images: idx.len(),
                subjects: subjects.len(),
            };
            (tag.clone(), summary)
        })
        .collect();
    let with_ratios = ds.require_ratios().is_ok();
    let mut classes = BTreeMap::new();
    if with_ratios {
        for class in RatioClass::ALL {
            classes.insert(class.name().to_string(), 0);
        }
        for i in 0..ds.len() {
            for class in cfg.classes.classify(ds.ratio(i))?.iter() {
                *classes.get_mut(class.name()).unwrap() += 1;
            }
        }
    } else {
        warn!("some images have no facial hair ratio; skipping class and category counts");
    }
    let mut pairs = Vec::new();
    for scope in scopes(&cfg, &ds)? {
        let mut req = request(&cfg, scope.clone());
        if !with_ratios {
            req.categories.clear();
        }
        for c in count_cells(&ds, &req, &cfg.classes, &cfg.scoring())? {
            pairs.push(PairCount {
                scope: scope.to_string(),
                kind: c.kind,
                category: c.category.map_or_else(|| "all".into(), |c| c.to_string()),
                count: c.count,
            });
        }
    }
    let summary = IngestSummary {
        images: ds.len(),
        subjects: ds.subjects().len(),
        demographics,
        classes,
        pairs,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} images, {} subjects, {} demographic tags",
        summary.images,
        summary.subjects,
        summary.demographics.len()
    );
    for p in &summary.pairs {
        println!("{} {} {}: {}", p.scope, p.kind, p.category, p.count);
    }
    Ok(())
}

pub fn score(flags: &Flags) -> CliResult {
    let cfg = RunConfig::resolve(flags)?;
    let (ds, store) = load_data(&cfg)?;
    let out = prepare_out(&cfg)?;
    let cells = score_all(&cfg, &ds, &store)?;
    let path = out.join(CACHE_FILE);
    let mut buf = Vec::new();
    write_cells(&mut buf, &cells).map_err(|e| CliError::io(&path, e))?;
    write_file(&path, buf)?;

    let mut csv = String::from("scope,kind,category,count,min,max,mean,tail_len,tail_complete\n");
    for c in &cells {
        let cat = c.category.map_or_else(|| "all".into(), |c| c.to_string());
        let _ = writeln!(
            csv,
            "{},{},{cat},{},{},{},{},{},{}",
            c.scope,
            c.kind,
            c.set.count(),
            fmt_opt(c.set.min()),
            fmt_opt(c.set.max()),
            c.set.mean_estimate().map_or_else(String::new, |m| format!("{m:.6}")),
            c.set.tail().len(),
            c.set.tail_is_complete()
        );
    }
    write_file(&out.join("cells.csv"), &csv)?;
    write_histograms(&out.join("histograms"), &cells, cfg.histogram_coarsen)?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct ScopeThresholds {
    scope: String,
    target_fmr: f64,
    global: Calibration,
    groups: BTreeMap<String, Calibration>,
    table: ThresholdTable,
}

fn calibrate_cells(
    scope: &str,
    cells: &[ScoreCell],
    cfg: &RunConfig,
) -> CliResult<ScopeThresholds> {
    let cal = |category: Option<PairCategory>| -> CliResult<Calibration> {
        let name = category.map_or_else(|| "all impostors".to_string(), |c| c.to_string());
        let cell = find_cell(cells, PairKind::Impostor, category).ok_or_else(|| {
            CliError::Data(format!("score cache has no impostor cell {name} for scope {scope}"))
        })?;
        if cell.set.is_empty() {
            return Err(hirsute_core::Error::CannotCalibrate {
                group: name,
                reason: format!("no impostor pairs in scope {scope}"),
            }
            .into());
        }
        let c = threshold_for_fmr(&cell.set, cfg.target_fmr)?;
        if c.unreachable {
            warn!("{scope}/{name}: target FMR {} not reachable", cfg.target_fmr);
        }
        Ok(c)
    };
    let global = cal(None)?;
    let mut groups = BTreeMap::new();
    let mut per_category = Vec::new();
    for &g in &cfg.groups {
        let c = cal(Some(g))?;
        per_category.push(CategoryThreshold {
            category: g,
            threshold: c.threshold,
        });
        groups.insert(g.to_string(), c);
    }
    Ok(ScopeThresholds {
        scope: scope.to_string(),
        target_fmr: cfg.target_fmr,
        table: ThresholdTable {
            global_threshold: global.threshold,
            per_category,
        },
        global,
        groups,
    })
}

pub fn calibrate(args: &CalibrateArgs) -> CliResult {
    let cfg = RunConfig::resolve(&args.flags)?;
    let cells = match &args.scores {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            read_cells(std::io::BufReader::new(file))?
        }
        None => {
            let (ds, store) = load_data(&cfg)?;
            score_all(&cfg, &ds, &store)?
        }
    };
    let out = prepare_out(&cfg)?;
    let mut by_scope: BTreeMap<String, Vec<ScoreCell>> = BTreeMap::new();
    for c in cells {
        by_scope.entry(c.scope.clone()).or_default().push(c);
    }
    let mut all = Vec::new();
    let mut csv = String::from("scope,mode,kind,category,count,threshold,fmr(1e-4),fnmr,exact\n");
    for (scope, cells) in &by_scope {
        let t = calibrate_cells(scope, cells, &cfg)?;
        for (mode, table) in [
            ("global", ThresholdTable::global(t.table.global_threshold)),
            ("adaptive", t.table.clone()),
        ] {
            for e in error_report(cells, &table) {
                let cat = e.category.map_or_else(|| "all".into(), |c| c.to_string());
                let _ = writeln!(
                    csv,
                    "{scope},{mode},{},{cat},{},{},{},{},{}",
                    e.kind,
                    e.count,
                    e.threshold,
                    if e.kind == PairKind::Impostor { fmt_e4(e.fmr) } else { String::new() },
                    e.fnmr.map_or_else(String::new, |v| format!("{v:.6}")),
                    e.exact
                );
            }
        }
        all.push(t);
    }
    write_json(&out.join("thresholds.json"), &all)?;
    write_file(&out.join("errors.csv"), &csv)?;
    for t in &all {
        println!("{} global threshold {:.6}", t.scope, t.global.threshold);
        for (g, c) in &t.groups {
            println!("{} {g} threshold {:.6} fmr(1e-4) {:.2}", t.scope, c.threshold, c.fmr * 1e4);
        }
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> CliResult {
    let cfg = RunConfig::resolve(&args.flags)?;
    let dir = require(&cfg.out, "--out")?;
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let results: Vec<ProtocolResult> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let (groups, rows) = table3_rows(&results);
    match args.format {
        ReportFormat::Csv => print!("{}", render_table3_csv(&groups, &rows)),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&rows).unwrap()),
        ReportFormat::Text => {
            let splits = results.first().map_or(0, |r| r.n_splits);
            print!("{}", render_table3_text(&groups, &rows, splits));
            for r in &results {
                if !r.adaptive.excluded_zero_fmr.is_empty() {
                    println!(
                        "{}: adaptive ratio excludes splits {:?} (a group had zero FMR)",
                        r.scope, r.adaptive.excluded_zero_fmr
                    );
                }
            }
        }
    }
    Ok(())
}
