//! Ratio classes, symmetric pair categories and genuine/impostor enumeration.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};

/// Facial-hair extent class of a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RatioClass {
    /// Clean-shaven.
    Clean,
    /// Small facial hair region.
    Small,
    /// Large region.
    Large1,
    /// Very large region; a subset of [`RatioClass::Large1`] under the default scheme.
    Large2,
}

impl RatioClass {
    pub const ALL: [RatioClass; 4] = [Self::Clean, Self::Small, Self::Large1, Self::Large2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Clean => "cl",
            Self::Small => "fh_S",
            Self::Large1 => "fh_L1",
            Self::Large2 => "fh_L2",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RatioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RatioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

/// Set of classes an image belongs to (classes may overlap).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClassSet(u8);

impl ClassSet {
    pub fn contains(self, c: RatioClass) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn insert(&mut self, c: RatioClass) {
        self.0 |= c.bit();
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn iter(self) -> impl Iterator<Item = RatioClass> {
        RatioClass::ALL.into_iter().filter(move |&c| self.contains(c))
    }
}

/// Threshold predicates over the facial hair ratio. Lower bounds are
/// inclusive and upper bounds exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioClassScheme {
    /// `cl`: r < clean_below.
    pub clean_below: f64,
    /// `fh_L1`: r >= large1_from. `fh_S` covers the gap to `cl`.
    pub large1_from: f64,
    /// `fh_L2`: r >= large2_from.
    pub large2_from: f64,
}

impl Default for RatioClassScheme {
    fn default() -> Self {
        Self {
            clean_below: 0.001,
            large1_from: 0.1,
            large2_from: 0.15,
        }
    }
}

impl RatioClassScheme {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.clean_below
            && self.clean_below < self.large1_from
            && self.large1_from <= self.large2_from
            && self.large2_from <= 1.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "ratio class thresholds must satisfy 0 < cl ({}) < fh_L1 ({}) <= fh_L2 ({}) <= 1",
                self.clean_below, self.large1_from, self.large2_from
            )));
        }
        Ok(())
    }

    pub fn classify(&self, r: f64) -> Result<ClassSet> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::RatioOutOfRange {
                context: "classification".into(),
                value: r,
            });
        }
        let mut set = ClassSet::default();
        if r < self.clean_below {
            set.insert(RatioClass::Clean);
        } else if r < self.large1_from {
            set.insert(RatioClass::Small);
        } else {
            set.insert(RatioClass::Large1);
        }
        if r >= self.large2_from {
            set.insert(RatioClass::Large2);
        }
        Ok(set)
    }

    /// Every distinct class set some ratio in [0, 1] can produce.
    pub fn reachable_sets(&self) -> Vec<ClassSet> {
        let mut out: Vec<ClassSet> = Vec::new();
        for b in [0.0, self.clean_below, self.large1_from, self.large2_from] {
            if let Ok(s) = self.classify(b) {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }
}

pub fn classify(r: f64, scheme: &RatioClassScheme) -> Result<ClassSet> {
    scheme.classify(r)
}

/// Unordered pair of ratio classes, stored in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairCategory {
    left: RatioClass,
    right: RatioClass,
}

impl PairCategory {
    pub fn new(a: RatioClass, b: RatioClass) -> Self {
        Self {
            left: a.min(b),
            right: a.max(b),
        }
    }

    pub fn left(&self) -> RatioClass {
        self.left
    }

    pub fn right(&self) -> RatioClass {
        self.right
    }

    pub fn matches(&self, a: ClassSet, b: ClassSet) -> bool {
        (a.contains(self.left) && b.contains(self.right))
            || (a.contains(self.right) && b.contains(self.left))
    }

    /// True when some pair of images could fall in both categories.
    pub fn overlaps(&self, other: &PairCategory, scheme: &RatioClassScheme) -> bool {
        let sets = scheme.reachable_sets();
        sets.iter().any(|&a| {
            sets.iter()
                .any(|&b| self.matches(a, b) && other.matches(a, b))
        })
    }

    /// The three groups calibrated by default: cl_vs_cl, cl_vs_fh_L1 and fh_L2_vs_fh_L2.
    pub fn default_groups() -> Vec<PairCategory> {
        use RatioClass::*;
        vec![
            PairCategory::new(Clean, Clean),
            PairCategory::new(Clean, Large1),
            PairCategory::new(Large2, Large2),
        ]
    }
}

impl fmt::Display for PairCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_vs_{}", self.left, self.right)
    }
}

impl FromStr for PairCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("_vs_")
            .ok_or_else(|| Error::MalformedCategory(s.to_string()))?;
        Ok(Self::new(a.parse()?, b.parse()?))
    }
}

impl Serialize for PairCategory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether the ratios of two images can be assigned to `target` under symmetry.
pub fn categorize_pair(
    ra: f64,
    rb: f64,
    target: &PairCategory,
    scheme: &RatioClassScheme,
) -> Result<bool> {
    Ok(target.matches(scheme.classify(ra)?, scheme.classify(rb)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Genuine,
    Impostor,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Genuine => "genuine",
            PairKind::Impostor => "impostor",
        })
    }
}

/// Which images participate: every image, or a single demographic tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    All,
    Demographic(String),
}

impl Scope {
    pub fn includes(&self, r: &ImageRecord) -> bool {
        match self {
            Scope::All => true,
            Scope::Demographic(d) => &r.demographic == d,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::All => f.write_str("all"),
            Scope::Demographic(d) => f.write_str(d),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::InvalidConfig("empty scope".into())),
            "all" => Ok(Scope::All),
            d => Ok(Scope::Demographic(d.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub kind: PairKind,
    pub scope: Scope,
    pub category: Option<PairCategory>,
    /// Allow impostor pairs whose images carry different demographic tags.
    pub cross_demographic: bool,
}

impl PairSpec {
    pub fn new(kind: PairKind, scope: Scope) -> Self {
        Self {
            kind,
            scope,
            category: None,
            cross_demographic: false,
        }
    }

    pub fn with_category(mut self, category: PairCategory) -> Self {
        self.category = Some(category);
        self
    }
}

/// In-scope images sorted by image id, with compact per-image attributes
/// for pair classification. Positions in this table define pair order.
#[derive(Debug, Clone)]
pub struct PairUniverse {
    records: Vec<usize>,
    subjects: Vec<u32>,
    demographics: Vec<u32>,
    classes: Vec<ClassSet>,
    cross_demographic: bool,
}

impl PairUniverse {
    /// `with_classes` requires every in-scope record to carry a ratio.
    pub fn new(
        ds: &Dataset,
        scope: &Scope,
        scheme: &RatioClassScheme,
        with_classes: bool,
        cross_demographic: bool,
    ) -> Result<Self> {
        let mut records: Vec<usize> = (0..ds.len())
            .filter(|&i| scope.includes(ds.record(i)))
            .collect();
        records.sort_by(|&a, &b| ds.record(a).image_id.cmp(&ds.record(b).image_id));

        let mut subject_ids: HashMap<&str, u32> = HashMap::new();
        let mut demo_ids: HashMap<&str, u32> = HashMap::new();
        let mut subjects = Vec::with_capacity(records.len());
        let mut demographics = Vec::with_capacity(records.len());
        let mut classes = Vec::with_capacity(records.len());
        for &i in &records {
            let r = ds.record(i);
            let next = subject_ids.len() as u32;
            subjects.push(*subject_ids.entry(&r.subject_id).or_insert(next));
            let next = demo_ids.len() as u32;
            demographics.push(*demo_ids.entry(&r.demographic).or_insert(next));
            classes.push(if with_classes {
                let ratio = r
                    .facial_hair_ratio
                    .ok_or_else(|| Error::MissingRatio(r.image_id.clone()))?;
                scheme.classify(ratio)?
            } else {
                ClassSet::default()
            });
        }
        Ok(Self {
            records,
            subjects,
            demographics,
            classes,
            cross_demographic,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dataset record index of position `pos`.
    pub fn record(&self, pos: usize) -> usize {
        self.records[pos]
    }

    pub fn classes(&self, pos: usize) -> ClassSet {
        self.classes[pos]
    }

    pub fn subject(&self, pos: usize) -> u32 {
        self.subjects[pos]
    }

    /// Kind of the pair at positions `(a, b)`, or `None` if it is excluded.
    #[inline]
    pub fn kind(&self, a: usize, b: usize) -> Option<PairKind> {
        if self.subjects[a] == self.subjects[b] {
            Some(PairKind::Genuine)
        } else if self.cross_demographic || self.demographics[a] == self.demographics[b] {
            Some(PairKind::Impostor)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub a: &'a ImageRecord,
    pub b: &'a ImageRecord,
    pub kind: PairKind,
}

/// Lazily yields each matching unordered pair once, ordered by
/// `(image_id_a, image_id_b)` with `image_id_a < image_id_b`.
pub fn enumerate_pairs<'a>(
    ds: &'a Dataset,
    spec: &PairSpec,
    scheme: &RatioClassScheme,
) -> Result<impl Iterator<Item = Pair<'a>> + 'a> {
    let universe = PairUniverse::new(
        ds,
        &spec.scope,
        scheme,
        spec.category.is_some(),
        spec.cross_demographic,
    )?;
    let n = universe.len();
    let kind = spec.kind;
    let category = spec.category;
    Ok((0..n)
        .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
        .filter_map(move |(i, j)| {
            if universe.kind(i, j)? != kind {
                return None;
            }
            if let Some(c) = category {
                if !c.matches(universe.classes(i), universe.classes(j)) {
                    return None;
                }
            }
            Some(Pair {
                a: ds.record(universe.record(i)),
                b: ds.record(universe.record(j)),
                kind,
            })
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use RatioClass::*;

    fn names(set: ClassSet) -> Vec<&'static str> {
        set.iter().map(RatioClass::name).collect()
    }

    #[test]
    fn classify_examples() {
        let s = RatioClassScheme::default();
        assert_eq!(names(classify(0.0005, &s).unwrap()), ["cl"]);
        assert_eq!(names(classify(0.12, &s).unwrap()), ["fh_L1"]);
        assert_eq!(names(classify(0.17, &s).unwrap()), ["fh_L1", "fh_L2"]);
        assert_eq!(names(classify(0.05, &s).unwrap()), ["fh_S"]);
        assert!(classify(1.2, &s).is_err());
        assert!(classify(-0.1, &s).is_err());
    }

    #[test]
    fn boundaries_are_lower_inclusive() {
        let s = RatioClassScheme::default();
        assert_eq!(names(classify(0.001, &s).unwrap()), ["fh_S"]);
        assert_eq!(names(classify(0.1, &s).unwrap()), ["fh_L1"]);
        assert_eq!(names(classify(0.15, &s).unwrap()), ["fh_L1", "fh_L2"]);
    }

    #[test]
    fn category_parse_and_display() {
        let c: PairCategory = "fh_L1_vs_cl".parse().unwrap();
        assert_eq!(c, PairCategory::new(Clean, Large1));
        assert_eq!(c.to_string(), "cl_vs_fh_L1");
        assert!(matches!("cl_vs_beard".parse::<PairCategory>(), Err(Error::UnknownClass(_))));
        assert!(matches!("clean".parse::<PairCategory>(), Err(Error::MalformedCategory(_))));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "\"cl_vs_fh_L1\"");
        assert_eq!(serde_json::from_str::<PairCategory>(&json).unwrap(), c);
    }

    #[test]
    fn categorize_examples() {
        let s = RatioClassScheme::default();
        let cat = |t: &str| t.parse::<PairCategory>().unwrap();
        assert!(categorize_pair(0.0005, 0.0003, &cat("cl_vs_cl"), &s).unwrap());
        assert!(categorize_pair(0.16, 0.2, &cat("fh_L2_vs_fh_L2"), &s).unwrap());
        assert!(!categorize_pair(0.05, 0.2, &cat("cl_vs_fh_L1"), &s).unwrap());
        assert!(categorize_pair(0.0005, 0.2, &cat("cl_vs_fh_L1"), &s).unwrap());
        assert!(categorize_pair(0.0005, 0.2, &cat("cl_vs_fh_L2"), &s).unwrap());
        assert!(categorize_pair(0.2, 0.0005, &cat("cl_vs_fh_L2"), &s).unwrap());
    }

    #[test]
    fn default_groups_do_not_overlap() {
        let s = RatioClassScheme::default();
        let g = PairCategory::default_groups();
        for (i, a) in g.iter().enumerate() {
            for b in &g[i + 1..] {
                assert!(!a.overlaps(b, &s), "{a} overlaps {b}");
            }
        }
        let l1 = PairCategory::new(Large1, Large1);
        let l2 = PairCategory::new(Large2, Large2);
        assert!(l1.overlaps(&l2, &s));
        assert!(PairCategory::new(Clean, Large1).overlaps(&PairCategory::new(Clean, Large2), &s));
    }

    #[test]
    fn scheme_validation() {
        RatioClassScheme::default().validate().unwrap();
        let bad = RatioClassScheme {
            clean_below: 0.2,
            large1_from: 0.1,
            large2_from: 0.15,
        };
        assert!(bad.validate().is_err());
    }
}
