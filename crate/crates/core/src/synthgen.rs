//! Synthetic datasets with a tunable facial-hair confound, and a naive
//! all-pairs reference implementation used to check the fast paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbeddingStore, ImageRecord};
use crate::error::{Error, Result};
use crate::maskops::{LabelMask, FACIAL_HAIR, NOT_FACIAL_HAIR};
use crate::pairs::{categorize_pair, PairCategory, PairKind, RatioClassScheme, Scope};
use crate::scoring::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_subjects: usize,
    pub images_per_subject: usize,
    pub dim: usize,
    /// Length of each subject's identity latent.
    pub identity_spread: f64,
    /// Per-image noise scale (the noise vector has expected norm ~ this).
    pub within_subject_noise: f64,
    /// Weight of the shared hair direction, multiplied by the image ratio.
    pub hair_axis_strength: f64,
    /// Probability an image is clean-shaven (ratio exactly 0).
    pub clean_fraction: f64,
    /// Positive ratios are `ratio_max * Beta(ratio_alpha, ratio_beta)`.
    pub ratio_max: f64,
    pub ratio_alpha: f64,
    pub ratio_beta: f64,
    /// Demographic tags assigned to subjects round-robin.
    pub demographics: Vec<String>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            images_per_subject: 3,
            dim: 128,
            identity_spread: 0.5,
            within_subject_noise: 0.1,
            hair_axis_strength: 0.5,
            clean_fraction: 0.5,
            ratio_max: 0.35,
            ratio_alpha: 1.2,
            ratio_beta: 2.0,
            demographics: vec!["SYN".into()],
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.n_subjects < 2 || self.images_per_subject == 0 {
            return bad(format!(
                "need at least 2 subjects with at least one image each, got {} x {}",
                self.n_subjects, self.images_per_subject
            ));
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return bad(format!("clean_fraction {} outside [0, 1]", self.clean_fraction));
        }
        let sigmas = [
            self.identity_spread,
            self.within_subject_noise,
            self.hair_axis_strength,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("spreads and hair axis strength must be finite and >= 0".into());
        }
        if !(self.ratio_max > 0.0 && self.ratio_max <= 1.0) {
            return bad(format!("ratio_max {} outside (0, 1]", self.ratio_max));
        }
        if !(self.ratio_alpha > 0.0 && self.ratio_beta > 0.0) {
            return bad("ratio distribution shape parameters must be positive".into());
        }
        if self.demographics.is_empty() {
            return bad("at least one demographic tag is required".into());
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Builds the dataset and its embeddings. Image `i` of subject `s` is
/// `s{s:05}_i{i:02}` with embedding index in generation order.
pub fn generate(cfg: &GenConfig) -> Result<(Dataset, EmbeddingStore)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let hair = unit_vector(&mut rng, d);
    let noise = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
    let beta = Beta::new(cfg.ratio_alpha, cfg.ratio_beta)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let total = cfg.n_subjects * cfg.images_per_subject;
    let mut records = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * d);
    for s in 0..cfg.n_subjects {
        let latent = unit_vector(&mut rng, d);
        let demographic = cfg.demographics[s % cfg.demographics.len()].clone();
        for i in 0..cfg.images_per_subject {
            let ratio = if rng.random::<f64>() < cfg.clean_fraction {
                0.0
            } else {
                loop {
                    let r = cfg.ratio_max * beta.sample(&mut rng);
                    if r > 0.0 {
                        break r;
                    }
                }
            };
            let shift = cfg.hair_axis_strength * ratio;
            let v: Vec<f64> = (0..d)
                .map(|k| {
                    cfg.identity_spread * latent[k]
                        + cfg.within_subject_noise * noise.sample(&mut rng)
                        + shift * hair[k]
                })
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::InvalidConfig(
                    "all spreads are zero; embeddings are degenerate".into(),
                ));
            }
            data.extend(v.iter().map(|x| (x / n) as f32));
            records.push(ImageRecord {
                image_id: format!("s{s:05}_i{i:02}"),
                subject_id: format!("s{s:05}"),
                demographic: demographic.clone(),
                embedding_index: records.len(),
                mask_path: None,
                facial_hair_ratio: Some(ratio),
            });
        }
    }
    Ok((Dataset::from_records(records)?, EmbeddingStore::from_rows(d, data)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub width: usize,
    pub height: usize,
    /// Largest fraction of the mask the hair region may cover.
    pub region_cap: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            region_cap: 0.4,
        }
    }
}

/// One mask per ratio. Label-1 pixels fill the lower face row by row from
/// the bottom; their count is `floor(ratio * width * height)`.
pub fn generate_masks(ratios: &[f64], cfg: &MaskConfig) -> Result<Vec<LabelMask>> {
    if cfg.width < 8 || cfg.height < 8 {
        return Err(Error::InvalidConfig(format!(
            "masks must be at least 8x8, got {}x{}",
            cfg.width, cfg.height
        )));
    }
    let n = cfg.width * cfg.height;
    ratios
        .iter()
        .map(|&r| {
            if !(0.0..=cfg.region_cap).contains(&r) {
                return Err(Error::RatioOutOfRange {
                    context: format!("mask generation (region cap {})", cfg.region_cap),
                    value: r,
                });
            }
            // tolerate representation error such as 0.29 * 100 = 28.999...
            let hair = ((r * n as f64) + 1e-9).floor() as usize;
            let mut labels = vec![NOT_FACIAL_HAIR; n];
            let (rows, rest) = (hair / cfg.width, hair % cfg.width);
            for y in 0..rows {
                let row = cfg.height - 1 - y;
                labels[row * cfg.width..(row + 1) * cfg.width].fill(FACIAL_HAIR);
            }
            if rest > 0 {
                let row = cfg.height - 1 - rows;
                labels[row * cfg.width..row * cfg.width + rest].fill(FACIAL_HAIR);
            }
            LabelMask::new(cfg.width, cfg.height, labels)
        })
        .collect()
}

/// Largest dataset the reference implementation accepts.
pub const ORACLE_MAX_IMAGES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub scope: Scope,
    pub category: Option<PairCategory>,
    pub cross_demographic: bool,
    pub scheme: RatioClassScheme,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            scope: Scope::All,
            category: None,
            cross_demographic: false,
            scheme: RatioClassScheme::default(),
        }
    }
}

/// Every selected score: impostors sorted descending, genuine ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScores {
    pub impostor: Vec<f64>,
    pub genuine: Vec<f64>,
}

pub fn oracle_scores(
    ds: &Dataset,
    store: &EmbeddingStore,
    spec: &OracleSpec,
) -> Result<OracleScores> {
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| spec.scope.includes(ds.record(i)))
        .collect();
    if idx.len() > ORACLE_MAX_IMAGES {
        return Err(Error::OracleTooLarge {
            limit: ORACLE_MAX_IMAGES,
            got: idx.len(),
        });
    }
    ds.validate_embeddings(store)?;
    let mut impostor = Vec::new();
    let mut genuine = Vec::new();
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            let (a, b) = (ds.record(i), ds.record(j));
            let kind = if a.subject_id == b.subject_id {
                PairKind::Genuine
            } else if spec.cross_demographic || a.demographic == b.demographic {
                PairKind::Impostor
            } else {
                continue;
            };
            if let Some(cat) = &spec.category {
                let (ra, rb) = (ds.ratio(i), ds.ratio(j));
                if !categorize_pair(ra, rb, cat, &spec.scheme)? {
                    continue;
                }
            }
            let s = cosine(
                store.vector(a.embedding_index),
                store.vector(b.embedding_index),
            )?;
            match kind {
                PairKind::Genuine => genuine.push(s),
                PairKind::Impostor => impostor.push(s),
            }
        }
    }
    impostor.sort_by(|x, y| y.total_cmp(x));
    genuine.sort_by(|x, y| x.total_cmp(y));
    Ok(OracleScores { impostor, genuine })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub impostor_count: u64,
    pub genuine_count: u64,
    pub false_matches: u64,
    pub false_non_matches: u64,
    /// `None` when there are no impostor pairs.
    pub fmr: Option<f64>,
    /// `None` when there are no genuine pairs.
    pub fnmr: Option<f64>,
}

/// Exact FMR (`score >= t`) and FNMR (`score < t`) by brute force.
pub fn oracle_metrics(
    ds: &Dataset,
    store: &EmbeddingStore,
    spec: &OracleSpec,
    threshold: f64,
) -> Result<OracleMetrics> {
    Ok(oracle_metrics_from(&oracle_scores(ds, store, spec)?, threshold))
}

pub fn oracle_metrics_from(scores: &OracleScores, threshold: f64) -> OracleMetrics {
    let fm = scores.impostor.iter().filter(|&&s| s >= threshold).count() as u64;
    let fnm = scores.genuine.iter().filter(|&&s| s < threshold).count() as u64;
    let (ni, ng) = (scores.impostor.len() as u64, scores.genuine.len() as u64);
    OracleMetrics {
        impostor_count: ni,
        genuine_count: ng,
        false_matches: fm,
        false_non_matches: fnm,
        fmr: (ni > 0).then(|| fm as f64 / ni as f64),
        fnmr: (ng > 0).then(|| fnm as f64 / ng as f64),
    }
}
