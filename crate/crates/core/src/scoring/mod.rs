//! Exhaustive pairwise cosine scoring.
//!
//! Pairs are visited block by block (`block_size` images per side) on a
//! dedicated thread pool. Each worker owns private partial results that are
//! merged at the end; every merge is exact and order-independent, so
//! results do not depend on the worker count.

mod cache;
mod scoreset;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbeddingStore};
use crate::error::{Error, Result};
use crate::pairs::{PairCategory, PairKind, PairUniverse, RatioClassScheme, Scope};

pub use cache::{read_cells, write_cells, write_histogram_csv, CACHE_MAGIC, CACHE_VERSION};
pub use scoreset::{
    tail_capacity, ScoreAccumulator, ScoreSet, SetConfig, TailSide, DEFAULT_BINS,
};

/// Dot product of two equal-length vectors accumulated in `f64`.
///
/// Eight independent partial sums are combined in a fixed order, so a given
/// pair always yields the same bits.
#[inline]
pub fn dot<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l].into() * y[l].into();
        }
    }
    let mut rest = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        rest += (*x).into() * (*y).into();
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + rest
}

/// Cosine similarity of unit vectors: their dot product clamped to [-1, 1].
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::VectorLength {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Fraction of each cell's scores retained exactly in its tail.
    pub tail_frac: f64,
    pub bins: usize,
    pub block_size: usize,
    /// Scoring threads. Never changes results.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            tail_frac: 1e-3,
            bins: DEFAULT_BINS,
            block_size: 256,
            workers: 1,
        }
    }
}

impl ScoringConfig {
    /// Retains the tail needed to resolve an FMR target: ten times the target.
    pub fn for_target_fmr(target: f64) -> Self {
        Self {
            tail_frac: (10.0 * target).min(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_frac > 0.0 && self.tail_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tail_frac {} must lie in (0, 1]",
                self.tail_frac
            )));
        }
        if self.bins == 0 || self.block_size == 0 || self.workers == 0 {
            return Err(Error::InvalidConfig(
                "bins, block_size and workers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which cells to build for one scope.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub scope: Scope,
    pub kinds: Vec<PairKind>,
    /// Category cells; one extra all-pairs cell per kind is always built.
    pub categories: Vec<PairCategory>,
    pub cross_demographic: bool,
}

impl ScoreRequest {
    pub fn new(scope: Scope, categories: Vec<PairCategory>) -> Self {
        Self {
            scope,
            kinds: vec![PairKind::Impostor, PairKind::Genuine],
            categories,
            cross_demographic: false,
        }
    }

    pub fn impostors_only(mut self) -> Self {
        self.kinds = vec![PairKind::Impostor];
        self
    }

    fn keys(&self) -> Vec<(PairKind, Option<PairCategory>)> {
        let mut keys = Vec::new();
        for &kind in &self.kinds {
            keys.push((kind, None));
            keys.extend(self.categories.iter().map(|&c| (kind, Some(c))));
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCell {
    pub kind: PairKind,
    /// `None` is the cell holding every pair of this kind.
    pub category: Option<PairCategory>,
    pub scope: String,
    pub set: ScoreSet,
}

impl ScoreCell {
    pub fn label(&self) -> String {
        let cat = self
            .category
            .map_or_else(|| "all".to_string(), |c| c.to_string());
        format!("{}/{}/{}", self.scope, self.kind, cat)
    }
}

pub fn find_cell(
    cells: &[ScoreCell],
    kind: PairKind,
    category: Option<PairCategory>,
) -> Option<&ScoreCell> {
    cells
        .iter()
        .find(|c| c.kind == kind && c.category == category)
}

/// Merges two cell lists keyed by (kind, category, scope).
pub fn merge_cells(a: &[ScoreCell], b: &[ScoreCell]) -> Result<Vec<ScoreCell>> {
    if a.len() != b.len() {
        return Err(Error::ConfigMismatch(format!(
            "{} cells vs {} cells",
            a.len(),
            b.len()
        )));
    }
    a.iter()
        .map(|x| {
            let y = b
                .iter()
                .find(|y| y.kind == x.kind && y.category == x.category && y.scope == x.scope)
                .ok_or_else(|| Error::ConfigMismatch(format!("no cell {} in other", x.label())))?;
            Ok(ScoreCell {
                set: x.set.merge(&y.set)?,
                ..x.clone()
            })
        })
        .collect()
}

/// Lookup from (kind, class set of a, class set of b) to matching cell slots.
#[derive(Debug, Clone)]
pub(crate) struct CellRouter {
    routes: Vec<Vec<u16>>,
}

impl CellRouter {
    pub(crate) fn new(keys: &[(PairKind, Option<PairCategory>)]) -> Self {
        let mut routes = vec![Vec::new(); 2 * 256];
        for (slot, &(kind, cat)) in keys.iter().enumerate() {
            for sa in 0..16u8 {
                for sb in 0..16u8 {
                    let a = crate::pairs::ClassSet::default();
                    let (a, b) = (with_bits(a, sa), with_bits(a, sb));
                    if cat.is_none_or(|c| c.matches(a, b)) {
                        routes[Self::index(kind, sa, sb)].push(slot as u16);
                    }
                }
            }
        }
        Self { routes }
    }

    #[inline]
    fn index(kind: PairKind, sa: u8, sb: u8) -> usize {
        (kind as usize) * 256 + (sa as usize) * 16 + sb as usize
    }

    #[inline]
    pub(crate) fn route(&self, u: &PairUniverse, a: usize, b: usize, kind: PairKind) -> &[u16] {
        &self.routes[Self::index(kind, u.classes(a).bits(), u.classes(b).bits())]
    }
}

fn with_bits(mut set: crate::pairs::ClassSet, bits: u8) -> crate::pairs::ClassSet {
    for c in crate::pairs::RatioClass::ALL {
        if bits & (1 << c as u8) != 0 {
            set.insert(c);
        }
    }
    set
}

/// Per-worker consumer of scored pairs.
pub(crate) trait PairSink: Send + Sized {
    /// Whether the pair at positions `(a, b)` needs scoring at all.
    fn wants(&self, a: usize, b: usize, kind: PairKind) -> bool;
    fn accept(&mut self, a: usize, b: usize, kind: PairKind, score: f64);
    fn absorb(&mut self, other: Self);
}

/// Universe-ordered copy of the embeddings, contiguous for blocked access.
pub(crate) struct PairEngine<'a> {
    pub universe: &'a PairUniverse,
    matrix: Vec<f32>,
    dim: usize,
    block: usize,
    workers: usize,
}

impl<'a> PairEngine<'a> {
    pub(crate) fn new(
        universe: &'a PairUniverse,
        ds: &Dataset,
        store: Option<&EmbeddingStore>,
        config: &ScoringConfig,
    ) -> Self {
        let (matrix, dim) = match store {
            Some(store) => {
                let dim = store.dim();
                let mut m = Vec::with_capacity(universe.len() * dim);
                for pos in 0..universe.len() {
                    let idx = ds.record(universe.record(pos)).embedding_index;
                    m.extend_from_slice(store.vector(idx));
                }
                (m, dim)
            }
            None => (Vec::new(), 0),
        };
        Self {
            universe,
            matrix,
            dim,
            block: config.block_size.max(1),
            workers: config.workers.max(1),
        }
    }

    #[inline]
    fn row(&self, pos: usize) -> &[f32] {
        &self.matrix[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Visits every included pair. Scores are only computed when the
    /// engine holds embeddings; otherwise sinks receive `NaN`.
    pub(crate) fn run<S: PairSink>(&self, make: impl Fn() -> S + Sync) -> S {
        let n = self.universe.len();
        let nb = n.div_ceil(self.block);
        let blocks: Vec<(usize, usize)> = (0..nb)
            .flat_map(|bi| (bi..nb).map(move |bj| (bi, bj)))
            .collect();
        if blocks.is_empty() {
            return make();
        }
        let chunk = blocks.len().div_ceil(self.workers * 4).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("thread pool");
        pool.install(|| {
            blocks
                .par_chunks(chunk)
                .map(|chunk| {
                    let mut sink = make();
                    for &(bi, bj) in chunk {
                        self.visit_block(bi, bj, &mut sink);
                    }
                    sink
                })
                .reduce_with(|mut a, b| {
                    a.absorb(b);
                    a
                })
                .expect("non-empty block list")
        })
    }

    fn visit_block<S: PairSink>(&self, bi: usize, bj: usize, sink: &mut S) {
        let n = self.universe.len();
        let rows = bi * self.block..((bi + 1) * self.block).min(n);
        let cols_end = ((bj + 1) * self.block).min(n);
        let scored = self.dim > 0;
        for i in rows {
            let start = if bi == bj { i + 1 } else { bj * self.block };
            let ri = if scored { self.row(i) } else { &[][..] };
            for j in start..cols_end {
                let Some(kind) = self.universe.kind(i, j) else {
                    continue;
                };
                if !sink.wants(i, j, kind) {
                    continue;
                }
                let score = if scored {
                    dot(ri, self.row(j)).clamp(-1.0, 1.0)
                } else {
                    f64::NAN
                };
                sink.accept(i, j, kind, score);
            }
        }
    }
}

struct CountSink<'r> {
    router: &'r CellRouter,
    universe: &'r PairUniverse,
    counts: Vec<u64>,
}

impl PairSink for CountSink<'_> {
    fn wants(&self, a: usize, b: usize, kind: PairKind) -> bool {
        !self.router.route(self.universe, a, b, kind).is_empty()
    }

    fn accept(&mut self, a: usize, b: usize, kind: PairKind, _score: f64) {
        for &slot in self.router.route(self.universe, a, b, kind) {
            self.counts[slot as usize] += 1;
        }
    }

    fn absorb(&mut self, other: Self) {
        for (x, y) in self.counts.iter_mut().zip(other.counts) {
            *x += y;
        }
    }
}

struct ScoreSink<'r> {
    router: &'r CellRouter,
    universe: &'r PairUniverse,
    accs: Vec<ScoreAccumulator>,
}

impl PairSink for ScoreSink<'_> {
    fn wants(&self, a: usize, b: usize, kind: PairKind) -> bool {
        !self.router.route(self.universe, a, b, kind).is_empty()
    }

    #[inline]
    fn accept(&mut self, a: usize, b: usize, kind: PairKind, score: f64) {
        for &slot in self.router.route(self.universe, a, b, kind) {
            self.accs[slot as usize].push(score);
        }
    }

    fn absorb(&mut self, other: Self) {
        for (x, y) in self.accs.iter_mut().zip(other.accs) {
            x.absorb(y);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub kind: PairKind,
    pub category: Option<PairCategory>,
    pub count: u64,
}

fn universe_for(
    ds: &Dataset,
    request: &ScoreRequest,
    scheme: &RatioClassScheme,
) -> Result<PairUniverse> {
    PairUniverse::new(
        ds,
        &request.scope,
        scheme,
        !request.categories.is_empty(),
        request.cross_demographic,
    )
}

/// Pair counts per requested cell, without computing any score.
pub fn count_cells(
    ds: &Dataset,
    request: &ScoreRequest,
    scheme: &RatioClassScheme,
    config: &ScoringConfig,
) -> Result<Vec<CellCount>> {
    config.validate()?;
    let universe = universe_for(ds, request, scheme)?;
    let keys = request.keys();
    let counts = count_with(&universe, ds, &keys, config);
    Ok(keys
        .into_iter()
        .zip(counts)
        .map(|((kind, category), count)| CellCount {
            kind,
            category,
            count,
        })
        .collect())
}

fn count_with(
    universe: &PairUniverse,
    ds: &Dataset,
    keys: &[(PairKind, Option<PairCategory>)],
    config: &ScoringConfig,
) -> Vec<u64> {
    let router = CellRouter::new(keys);
    let engine = PairEngine::new(universe, ds, None, config);
    engine
        .run(|| CountSink {
            router: &router,
            universe,
            counts: vec![0; keys.len()],
        })
        .counts
}

/// Scores every requested cell. A pair contributes to each cell it matches.
/// Cells are ordered by kind, the all-pairs cell first, then categories in
/// request order.
pub fn score_pairs(
    ds: &Dataset,
    store: &EmbeddingStore,
    request: &ScoreRequest,
    scheme: &RatioClassScheme,
    config: &ScoringConfig,
) -> Result<Vec<ScoreCell>> {
    config.validate()?;
    ds.validate_embeddings(store)?;
    let universe = universe_for(ds, request, scheme)?;
    let keys = request.keys();
    let counts = count_with(&universe, ds, &keys, config);
    let configs: Vec<SetConfig> = keys
        .iter()
        .zip(&counts)
        .map(|(&(kind, _), &count)| SetConfig {
            bins: config.bins,
            tail_capacity: tail_capacity(count, config.tail_frac),
            side: match kind {
                PairKind::Impostor => TailSide::High,
                PairKind::Genuine => TailSide::Low,
            },
        })
        .collect();
    let router = CellRouter::new(&keys);
    let engine = PairEngine::new(&universe, ds, Some(store), config);
    let sink = engine.run(|| ScoreSink {
        router: &router,
        universe: &universe,
        accs: configs.iter().map(|&c| ScoreAccumulator::new(c)).collect(),
    });
    let scope = request.scope.to_string();
    Ok(keys
        .into_iter()
        .zip(sink.accs)
        .map(|((kind, category), acc)| ScoreCell {
            kind,
            category,
            scope: scope.clone(),
            set: acc.finish(),
        })
        .collect())
}
