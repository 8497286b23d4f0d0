//! Segmentation-quality and facial-hair-extent metrics over label masks.
//!
//! Masks carry three labels: [`NOT_FACIAL_HAIR`], [`FACIAL_HAIR`] and
//! [`SHADOW`] (five o'clock shadow). IoU is per class; an IoU whose union is
//! empty is reported as undefined rather than 0 or 1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOT_FACIAL_HAIR: u8 = 0;
pub const FACIAL_HAIR: u8 = 1;
pub const SHADOW: u8 = 2;

/// Row-major grid of per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask(format!("empty shape {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l > SHADOW) {
            return Err(Error::InvalidMask(format!(
                "label {} at pixel ({}, {})",
                labels[pos],
                pos % width,
                pos / width
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        assert!(label <= SHADOW, "label {label} out of range");
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    fn check_same_shape(&self, other: &LabelMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            });
        }
        Ok(())
    }

    /// Loads an 8-bit single-channel PNG or an ASCII (P2) PGM.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mask_err = |message: String| Error::Mask {
            path: path.to_path_buf(),
            message,
        };
        let mask = if bytes.starts_with(b"\x89PNG") {
            decode_png(&bytes).map_err(mask_err)?
        } else if bytes.starts_with(b"P2") {
            decode_pgm(&bytes).map_err(mask_err)?
        } else {
            return Err(mask_err("not a PNG or ASCII PGM file".into()));
        };
        Ok(mask)
    }

    /// Writes an ASCII (P2) PGM with maxval 2.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n2\n", self.width, self.height);
        for row in self.labels.chunks(self.width) {
            let mut first = true;
            for &l in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{l}");
            }
            out.push('\n');
        }
        out
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<LabelMask, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(format!(
                "expected 8-bit single-channel PNG, got {:?}",
                other.color()
            ))
        }
    };
    let (w, h) = gray.dimensions();
    LabelMask::new(w as usize, h as usize, gray.into_raw()).map_err(|e| e.to_string())
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<LabelMask, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| "PGM is not ASCII".to_string())?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err("missing P2 magic".into());
    }
    let mut header = |name: &str| -> std::result::Result<usize, String> {
        tokens
            .next()
            .ok_or_else(|| format!("missing {name}"))?
            .parse::<usize>()
            .map_err(|e| format!("bad {name}: {e}"))
    };
    let width = header("width")?;
    let height = header("height")?;
    let maxval = header("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let mut labels = Vec::with_capacity(width * height);
    for tok in tokens {
        let v: u32 = tok.parse().map_err(|e| format!("bad pixel {tok:?}: {e}"))?;
        if v > SHADOW as u32 {
            return Err(format!("pixel value {v} is not 0, 1 or 2"));
        }
        labels.push(v as u8);
    }
    if labels.len() != width * height {
        return Err(format!(
            "expected {} pixels, found {}",
            width * height,
            labels.len()
        ));
    }
    LabelMask::new(width, height, labels).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub class_id: u8,
    pub intersection: u64,
    pub union: u64,
    /// `None` when neither mask contains the class.
    pub iou: Option<f64>,
}

impl IoUReport {
    fn from_counts(class_id: u8, intersection: u64, union: u64) -> Self {
        let iou = (union > 0).then(|| intersection as f64 / union as f64);
        Self {
            class_id,
            intersection,
            union,
            iou,
        }
    }
}

pub fn iou(pred: &LabelMask, gt: &LabelMask, class_id: u8) -> Result<IoUReport> {
    pred.check_same_shape(gt)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        let (p, g) = (p == class_id, g == class_id);
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    Ok(IoUReport::from_counts(class_id, inter, union))
}

/// Fraction of pixels labelled facial hair. Shadow pixels are not counted.
pub fn facial_hair_ratio(mask: &LabelMask) -> f64 {
    facial_hair_ratio_with(mask, false)
}

/// Facial hair ratio, optionally counting five o'clock shadow as facial hair.
pub fn facial_hair_ratio_with(mask: &LabelMask, count_shadow: bool) -> f64 {
    let hair = mask
        .labels
        .iter()
        .filter(|&&l| l == FACIAL_HAIR || (count_shadow && l == SHADOW))
        .count();
    hair as f64 / mask.pixel_count() as f64
}

/// Half-open ratio interval. `upper = None` means unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBucket {
    pub lower: f64,
    pub lower_inclusive: bool,
    pub upper: Option<f64>,
}

impl RatioBucket {
    pub fn new(lower: f64, upper: Option<f64>) -> Self {
        Self {
            lower,
            lower_inclusive: true,
            upper,
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        let above = if self.lower_inclusive {
            r >= self.lower
        } else {
            r > self.lower
        };
        above && self.upper.is_none_or(|u| r < u)
    }

    pub fn label(&self) -> String {
        let lo = if self.lower_inclusive { ">=" } else { ">" };
        match self.upper {
            Some(u) => format!("{lo}{} & <{u}", self.lower),
            None => format!("{lo}{}", self.lower),
        }
    }
}

/// The four facial-hair-ratio ranges used for bucketed IoU reporting:
/// (0, 0.05), [0.05, 0.1), [0.1, 0.15), [0.15, inf).
pub fn default_buckets() -> Vec<RatioBucket> {
    vec![
        RatioBucket {
            lower: 0.0,
            lower_inclusive: false,
            upper: Some(0.05),
        },
        RatioBucket::new(0.05, Some(0.1)),
        RatioBucket::new(0.1, Some(0.15)),
        RatioBucket::new(0.15, None),
    ]
}

fn check_buckets(buckets: &[RatioBucket]) -> Result<()> {
    for b in buckets {
        if let Some(u) = b.upper {
            if u <= b.lower {
                return Err(Error::BucketOverlap(format!("empty bucket {}", b.label())));
            }
        }
    }
    for w in buckets.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ok = match a.upper {
            None => false,
            // touching is fine: [x, u) then [u, ..) or (u, ..)
            Some(u) => b.lower >= u,
        };
        if !ok {
            return Err(Error::BucketOverlap(format!(
                "{} then {}",
                a.label(),
                b.label()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: RatioBucket,
    /// Pairs whose ground-truth ratio fell in the bucket.
    pub members: usize,
    /// Members with a defined IoU (non-empty union).
    pub defined: usize,
    /// Unweighted mean of defined IoUs; `None` for an empty bucket.
    pub mean_iou: Option<f64>,
}

/// Mean IoU of `class_id` per ground-truth ratio bucket. Pairs whose
/// ground-truth ratio falls outside every bucket are ignored.
pub fn iou_by_ratio_bucket(
    pairs: &[(LabelMask, LabelMask)],
    buckets: &[RatioBucket],
    class_id: u8,
) -> Result<Vec<BucketSummary>> {
    check_buckets(buckets)?;
    let mut sums = vec![(0usize, 0usize, 0.0f64); buckets.len()];
    for (pred, gt) in pairs {
        let r = facial_hair_ratio(gt);
        let Some(slot) = buckets.iter().position(|b| b.contains(r)) else {
            continue;
        };
        let report = iou(pred, gt, class_id)?;
        let s = &mut sums[slot];
        s.0 += 1;
        if let Some(v) = report.iou {
            s.1 += 1;
            s.2 += v;
        }
    }
    Ok(buckets
        .iter()
        .zip(sums)
        .map(|(b, (members, defined, sum))| BucketSummary {
            bucket: *b,
            members,
            defined,
            mean_iou: (defined > 0).then(|| sum / defined as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Micro-averaged IoU: summed intersections over summed unions.
    pub aggregate: Option<f64>,
    pub intersection: u64,
    pub union: u64,
    pub per_pair: Vec<IoUReport>,
}

/// Inter-annotator agreement between two index-aligned annotation lists.
pub fn annotator_agreement(
    first: &[LabelMask],
    second: &[LabelMask],
    class_id: u8,
) -> Result<AgreementReport> {
    if first.len() != second.len() {
        return Err(Error::LengthMismatch {
            left: first.len(),
            right: second.len(),
        });
    }
    if first.is_empty() {
        return Err(Error::EmptyInput("annotation lists"));
    }
    let per_pair = first
        .iter()
        .zip(second)
        .map(|(a, b)| iou(a, b, class_id))
        .collect::<Result<Vec<_>>>()?;
    let intersection = per_pair.iter().map(|r| r.intersection).sum();
    let union = per_pair.iter().map(|r| r.union).sum();
    let total = IoUReport::from_counts(class_id, intersection, union);
    Ok(AgreementReport {
        aggregate: total.iou,
        intersection,
        union,
        per_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(w: usize, h: usize, cells: &[(usize, usize)], label: u8) -> LabelMask {
        let mut m = LabelMask::filled(w, h, 0).unwrap();
        for &(x, y) in cells {
            m.set(x, y, label);
        }
        m
    }

    #[test]
    fn identical_masks_have_unit_iou() {
        let m = block(5, 5, &[(1, 1), (2, 2)], FACIAL_HAIR);
        assert_eq!(iou(&m, &m, FACIAL_HAIR).unwrap().iou, Some(1.0));
    }

    #[test]
    fn disjoint_regions_have_zero_iou() {
        let a = block(4, 4, &[(0, 0)], FACIAL_HAIR);
        let b = block(4, 4, &[(3, 3)], FACIAL_HAIR);
        assert_eq!(iou(&a, &b, FACIAL_HAIR).unwrap().iou, Some(0.0));
    }

    #[test]
    fn shifted_two_by_two_blocks() {
        // pred rows 0-1 cols 0-1, gt rows 0-1 cols 1-2
        let pred = block(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)], FACIAL_HAIR);
        let gt = block(4, 4, &[(1, 0), (2, 0), (1, 1), (2, 1)], FACIAL_HAIR);
        let r = iou(&pred, &gt, FACIAL_HAIR).unwrap();
        assert_eq!((r.intersection, r.union), (2, 6));
        assert!((r.iou.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_undefined() {
        let m = LabelMask::filled(3, 3, 0).unwrap();
        let r = iou(&m, &m, FACIAL_HAIR).unwrap();
        assert_eq!(r.union, 0);
        assert_eq!(r.iou, None);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = LabelMask::filled(3, 4, 0).unwrap();
        let b = LabelMask::filled(4, 3, 0).unwrap();
        let msg = iou(&a, &b, 1).unwrap_err().to_string();
        assert!(msg.contains("3x4") && msg.contains("4x3"), "{msg}");
    }

    #[test]
    fn invalid_labels_rejected() {
        assert!(LabelMask::new(2, 1, vec![0, 3]).is_err());
        assert!(LabelMask::new(0, 1, vec![]).is_err());
        assert!(LabelMask::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn ratio_extremes_and_shadow_exclusion() {
        assert_eq!(facial_hair_ratio(&LabelMask::filled(4, 4, 0).unwrap()), 0.0);
        assert_eq!(facial_hair_ratio(&LabelMask::filled(4, 4, 1).unwrap()), 1.0);

        let mut m = LabelMask::filled(10, 10, 0).unwrap();
        for i in 0..7 {
            m.set(i, 0, FACIAL_HAIR);
        }
        for i in 0..5 {
            m.set(i, 5, SHADOW);
        }
        assert_eq!(facial_hair_ratio(&m), 0.07);
        assert_eq!(facial_hair_ratio_with(&m, true), 0.12);
    }

    #[test]
    fn default_buckets_match_reported_ranges() {
        let b = default_buckets();
        let labels: Vec<_> = b.iter().map(RatioBucket::label).collect();
        assert_eq!(
            labels,
            [">0 & <0.05", ">=0.05 & <0.1", ">=0.1 & <0.15", ">=0.15"]
        );
        assert!(!b[0].contains(0.0));
        assert!(b[1].contains(0.05));
        assert!(b[3].contains(0.35));
        check_buckets(&b).unwrap();
    }

    #[test]
    fn overlapping_buckets_rejected() {
        let b = vec![
            RatioBucket::new(0.0, Some(0.1)),
            RatioBucket::new(0.05, None),
        ];
        assert!(matches!(check_buckets(&b), Err(Error::BucketOverlap(_))));
        let unbounded_first = vec![RatioBucket::new(0.0, None), RatioBucket::new(0.5, None)];
        assert!(check_buckets(&unbounded_first).is_err());
    }

    fn mask_with_ratio(hair: usize) -> LabelMask {
        // 10x10 mask with `hair` facial-hair pixels in reading order
        let mut labels = vec![0u8; 100];
        labels[..hair].fill(FACIAL_HAIR);
        LabelMask::new(10, 10, labels).unwrap()
    }

    #[test]
    fn single_pair_lands_in_third_bucket() {
        let gt = mask_with_ratio(12);
        let out = iou_by_ratio_bucket(&[(gt.clone(), gt)], &default_buckets(), 1).unwrap();
        let members: Vec<_> = out.iter().map(|s| s.members).collect();
        assert_eq!(members, [0, 0, 1, 0]);
        assert_eq!(out[0].mean_iou, None);
    }

    #[test]
    fn bucket_mean_is_unweighted() {
        // gt 10 pixels; pred 4 of them -> 0.4; pred 6 of them -> 0.6
        let gt = mask_with_ratio(10);
        let pairs = vec![(mask_with_ratio(4), gt.clone()), (mask_with_ratio(6), gt)];
        let out = iou_by_ratio_bucket(&pairs, &[RatioBucket::new(0.0, None)], 1).unwrap();
        assert!((out[0].mean_iou.unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(out[0].members, 2);
    }

    #[test]
    fn agreement_errors() {
        let m = LabelMask::filled(2, 2, 1).unwrap();
        assert!(matches!(
            annotator_agreement(std::slice::from_ref(&m), &[], 1),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            annotator_agreement(&[], &[], 1),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn agreement_identical_lists() {
        let a = vec![mask_with_ratio(3), mask_with_ratio(50)];
        let r = annotator_agreement(&a, &a, 1).unwrap();
        assert_eq!(r.aggregate, Some(1.0));
        assert_eq!(r.per_pair.len(), 2);
    }

    #[test]
    fn agreement_is_micro_averaged() {
        // pair 1 disjoint (areas 5 and 5), pair 2 identical (area 5):
        // (0 + 5) / (10 + 5) = 1/3
        let a1 = block(10, 1, &[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)], 1);
        let b1 = block(10, 1, &[(5, 0), (6, 0), (7, 0), (8, 0), (9, 0)], 1);
        let r = annotator_agreement(&[a1.clone(), a1.clone()], &[b1, a1], 1).unwrap();
        assert_eq!((r.intersection, r.union), (5, 15));
        assert!((r.aggregate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pgm_round_trip_and_bad_values() {
        let m = block(3, 2, &[(0, 0), (2, 1)], SHADOW);
        let text = m.to_pgm();
        assert_eq!(decode_pgm(text.as_bytes()).unwrap(), m);
        assert!(decode_pgm(b"P2\n2 1\n255\n0 7\n").is_err());
        assert!(decode_pgm(b"P2\n# comment\n2 1\n2\n0 1\n").is_ok());
        assert!(decode_pgm(b"P2\n2 2\n2\n0 1\n").is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let img = image::GrayImage::from_raw(3, 2, vec![0, 1, 2, 2, 1, 0]).unwrap();
        img.save(&path).unwrap();
        let m = LabelMask::load(&path).unwrap();
        assert_eq!(m.labels(), &[0, 1, 2, 2, 1, 0]);

        let bad = image::GrayImage::from_raw(2, 1, vec![0, 128]).unwrap();
        bad.save(&path).unwrap();
        assert!(matches!(LabelMask::load(&path), Err(Error::Mask { .. })));

        let rgb = image::RgbImage::from_raw(1, 1, vec![0, 0, 0]).unwrap();
        rgb.save(&path).unwrap();
        assert!(LabelMask::load(&path).is_err());
    }
}
