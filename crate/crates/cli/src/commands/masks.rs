use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hirsute_core::maskops::{
    annotator_agreement, default_buckets, facial_hair_ratio, iou, iou_by_ratio_bucket, LabelMask,
};

use super::{prepare_out, write_file, CliResult};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::MaskEvalArgs;

/// Mask files (`.png`, `.pgm`) in `dir` keyed by file name.
fn list_masks(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, path);
        }
    }
    Ok(out)
}

/// Loads both directories and pairs masks by file name. Any file present on
/// only one side is an error.
fn matched(left: &Path, right: &Path) -> CliResult<Vec<(String, LabelMask, LabelMask)>> {
    let a = list_masks(left)?;
    let b = list_masks(right)?;
    let only: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .map(|k| format!("{} (only in {})", k, left.display()))
        .chain(
            b.keys()
                .filter(|k| !a.contains_key(*k))
                .map(|k| format!("{} (only in {})", k, right.display())),
        )
        .collect();
    if !only.is_empty() {
        return Err(CliError::Data(format!("unmatched mask files: {}", only.join(", "))));
    }
    if a.is_empty() {
        return Err(CliError::Data(format!("no masks in {}", left.display())));
    }
    a.into_iter()
        .map(|(name, pa)| {
            let ma = LabelMask::load(&pa)?;
            let mb = LabelMask::load(&b[&name])?;
            Ok((name, ma, mb))
        })
        .collect()
}

fn fmt_iou(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn mask_eval(args: &MaskEvalArgs) -> CliResult {
    let cfg = RunConfig::resolve(&args.flags)?;
    if cfg.masks.is_none() && args.gt2.is_none() {
        return Err(CliError::Usage(
            "give predicted masks with --masks, a second annotation with --gt2, or both".into(),
        ));
    }
    let out = prepare_out(&cfg)?;

    if let Some(pred_dir) = &cfg.masks {
        let pairs = matched(pred_dir, &args.gt)?;
        let mut csv = String::from("image,gt_ratio,intersection,union,iou\n");
        let (mut inter, mut union) = (0u64, 0u64);
        for (name, pred, gt) in &pairs {
            let r = iou(pred, gt, args.class)?;
            inter += r.intersection;
            union += r.union;
            let _ = writeln!(
                csv,
                "{name},{:.6},{},{},{}",
                facial_hair_ratio(gt),
                r.intersection,
                r.union,
                fmt_iou(r.iou)
            );
        }
        write_file(&out.join("iou_per_image.csv"), &csv)?;

        let masks: Vec<(LabelMask, LabelMask)> =
            pairs.into_iter().map(|(_, p, g)| (p, g)).collect();
        let mut buckets = String::from("bucket,members,defined,mean_iou\n");
        for b in iou_by_ratio_bucket(&masks, &default_buckets(), args.class)? {
            let _ = writeln!(
                buckets,
                "{},{},{},{}",
                b.bucket.label(),
                b.members,
                b.defined,
                fmt_iou(b.mean_iou)
            );
        }
        write_file(&out.join("iou_by_ratio.csv"), &buckets)?;
        let pooled = (union > 0).then(|| inter as f64 / union as f64);
        println!("images {}, pooled IoU {}", masks.len(), fmt_iou(pooled));
        print!("{buckets}");
    }

    if let Some(gt2) = &args.gt2 {
        let pairs = matched(&args.gt, gt2)?;
        let (first, second): (Vec<LabelMask>, Vec<LabelMask>) =
            pairs.into_iter().map(|(_, a, b)| (a, b)).unzip();
        let report = annotator_agreement(&first, &second, args.class)?;
        let csv = format!(
            "comparison,images,intersection,union,iou\nGT-1 vs GT-2,{},{},{},{}\n",
            first.len(),
            report.intersection,
            report.union,
            fmt_iou(report.aggregate)
        );
        write_file(&out.join("agreement.csv"), &csv)?;
        println!("annotator agreement IoU {}", fmt_iou(report.aggregate));
    }
    Ok(())
}
