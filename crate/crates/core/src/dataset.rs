//! Manifest, embedding and ratio ingestion into an immutable, indexed dataset.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::{self, LabelMask};

pub const MANIFEST_HEADER: [&str; 6] = [
    "image_id",
    "subject_id",
    "demographic",
    "embedding_index",
    "mask_path",
    "facial_hair_ratio",
];

pub const EMBEDDING_MAGIC: &[u8; 4] = b"FHEB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    /// Opaque demographic tag such as "AAM" or "CM".
    pub demographic: String,
    pub embedding_index: usize,
    pub mask_path: Option<PathBuf>,
    pub facial_hair_ratio: Option<f64>,
}

fn check_ratio(context: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::RatioOutOfRange {
            context: context.to_string(),
            value: r,
        });
    }
    Ok(())
}

/// Records plus subject and demographic indices. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    subjects: BTreeMap<String, Vec<usize>>,
    demographics: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn from_records(records: Vec<ImageRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut subjects: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut demographics: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateImage(r.image_id.clone()));
            }
            if let Some(v) = r.facial_hair_ratio {
                check_ratio(&r.image_id, v)?;
            }
            subjects.entry(r.subject_id.clone()).or_default().push(i);
            demographics
                .entry(r.demographic.clone())
                .or_default()
                .push(i);
        }
        Ok(Self {
            records,
            by_id,
            subjects,
            demographics,
        })
    }

    /// Parses a manifest CSV. Row order becomes record order.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_manifest(file)
    }

    pub fn read_manifest<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Manifest {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Manifest {
                line: 1,
                message: format!(
                    "header must be `{}`, found `{}`",
                    MANIFEST_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Manifest {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Manifest { line, message };
            let field = |i: usize| row.get(i).unwrap_or("");
            if field(0).is_empty() || field(1).is_empty() {
                return Err(bad("image_id and subject_id must be non-empty".into()));
            }
            let embedding_index = field(3)
                .parse::<usize>()
                .map_err(|e| bad(format!("embedding_index {:?}: {e}", field(3))))?;
            let mask_path = (!field(4).is_empty()).then(|| PathBuf::from(field(4)));
            let facial_hair_ratio = if field(5).is_empty() {
                None
            } else {
                let v = field(5)
                    .parse::<f64>()
                    .map_err(|e| bad(format!("facial_hair_ratio {:?}: {e}", field(5))))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("facial_hair_ratio {v} outside [0, 1]")));
                }
                Some(v)
            };
            records.push(ImageRecord {
                image_id: field(0).to_string(),
                subject_id: field(1).to_string(),
                demographic: field(2).to_string(),
                embedding_index,
                mask_path,
                facial_hair_ratio,
            });
        }
        Self::from_records(records)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_manifest_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_manifest_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            let mask = r
                .mask_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            // `{}` on f64 prints the shortest string that parses back exactly.
            let ratio = r.facial_hair_ratio.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.image_id.as_str(),
                &r.subject_id,
                &r.demographic,
                &r.embedding_index.to_string(),
                &mask,
                &ratio,
            ])?;
        }
        w.flush()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &ImageRecord {
        &self.records[idx]
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.index_of(image_id).map(|i| &self.records[i])
    }

    /// Subject id → record indices, in record order.
    pub fn subjects(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.subjects
    }

    /// Demographic tag → record indices, in record order.
    pub fn demographics(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.demographics
    }

    pub fn subject_image_ids(&self, subject: &str) -> Vec<&str> {
        self.subjects
            .get(subject)
            .map(|ix| ix.iter().map(|&i| self.records[i].image_id.as_str()).collect())
            .unwrap_or_default()
    }

    /// Ratio of record `idx`; panics if ratios were never attached.
    pub fn ratio(&self, idx: usize) -> f64 {
        self.records[idx]
            .facial_hair_ratio
            .expect("facial hair ratio not attached")
    }

    pub fn require_ratios(&self) -> Result<()> {
        match self.records.iter().find(|r| r.facial_hair_ratio.is_none()) {
            Some(r) => Err(Error::MissingRatio(r.image_id.clone())),
            None => Ok(()),
        }
    }

    pub fn validate_embeddings(&self, store: &EmbeddingStore) -> Result<()> {
        for r in &self.records {
            if r.embedding_index >= store.count() {
                return Err(Error::EmbeddingIndex {
                    image_id: r.image_id.clone(),
                    index: r.embedding_index,
                    count: store.count(),
                });
            }
        }
        Ok(())
    }

    /// Sets ratios from `ratios`. Records absent from the map keep their
    /// current value; afterwards every record must carry a ratio.
    pub fn attach_ratios(self, ratios: &HashMap<String, f64>) -> Result<Self> {
        let mut records = self.records;
        let by_id = self.by_id;
        let mut ids: Vec<_> = ratios.keys().collect();
        ids.sort();
        for id in ids {
            let v = ratios[id];
            let &i = by_id.get(id).ok_or_else(|| Error::UnknownImage(id.clone()))?;
            check_ratio(id, v)?;
            records[i].facial_hair_ratio = Some(v);
        }
        let ds = Self::from_records(records)?;
        ds.require_ratios()?;
        Ok(ds)
    }

    /// Fills missing ratios from each record's mask. Relative mask paths
    /// resolve against `mask_root`. A manifest-supplied ratio wins over the
    /// mask (with a warning when they disagree).
    pub fn derive_ratios_from_masks(self, mask_root: &Path, count_shadow: bool) -> Result<Self> {
        let mut records = self.records;
        for r in &mut records {
            let Some(rel) = &r.mask_path else { continue };
            let path = if rel.is_absolute() {
                rel.clone()
            } else {
                mask_root.join(rel)
            };
            let mask = LabelMask::load(&path)?;
            let derived = maskops::facial_hair_ratio_with(&mask, count_shadow);
            match r.facial_hair_ratio {
                Some(given) if given != derived => warn!(
                    "{}: manifest ratio {given} overrides mask-derived {derived}",
                    r.image_id
                ),
                Some(_) => {}
                None => r.facial_hair_ratio = Some(derived),
            }
        }
        Self::from_records(records)
    }

    /// Sub-dataset of the records accepted by `keep`, in record order.
    pub fn filter(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Dataset {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Self::from_records(records).expect("subset of a valid dataset is valid")
    }
}

/// Unit-normalized, row-major embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// Normalizes each `dim`-wide row of `data` to unit length. Rows within
    /// 1e-5 of unit norm are kept as given.
    pub fn from_rows(dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::EmbeddingFormat(format!(
                "{} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        for (i, row) in data.chunks_mut(dim).enumerate() {
            let norm = row
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNormVector(i));
            }
            // already unit length up to f32 rounding: keep the stored bits
            if (norm - 1.0).abs() <= 1e-5 {
                continue;
            }
            for x in row.iter_mut() {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), expected_dim)
    }

    pub fn read_from<R: Read>(mut reader: R, expected_dim: Option<usize>) -> Result<Self> {
        let mut header = [0u8; 12];
        reader
            .read_exact(&mut header)
            .map_err(|_| Error::EmbeddingFormat("truncated header".into()))?;
        if &header[..4] != EMBEDDING_MAGIC {
            return Err(Error::EmbeddingFormat("bad magic (expected FHEB)".into()));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: dim,
                });
            }
        }
        let n = count
            .checked_mul(dim)
            .ok_or_else(|| Error::EmbeddingFormat("count x dim overflows".into()))?;
        let mut bytes = vec![0u8; n * 4];
        reader.read_exact(&mut bytes).map_err(|_| {
            Error::EmbeddingFormat(format!("truncated: expected {count} vectors of dim {dim}"))
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_rows(dim, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.count() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Loads manifest and embeddings together and checks every index resolves.
pub fn load_dataset(
    manifest: &Path,
    embeddings: &Path,
    expected_dim: Option<usize>,
) -> Result<(Dataset, EmbeddingStore)> {
    let ds = Dataset::load_manifest(manifest)?;
    let store = EmbeddingStore::load(embeddings, expected_dim)?;
    ds.validate_embeddings(&store)?;
    Ok((ds, store))
}
