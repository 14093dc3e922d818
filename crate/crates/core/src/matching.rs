//! Similarity, affinity, reference selection, aggregation and the keyframe memory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::{DirectionSet, ReferenceMap, SampledMatrix};
use crate::tensor::{FeatureMap, ObjectLabelMap};

/// Default local window side.
pub const DEFAULT_WINDOW: usize = 15;
/// Default keyframe interval.
pub const DEFAULT_KEYFRAME_INTERVAL: usize = 6;
/// Default coarse patch side for reference search.
pub const DEFAULT_COARSE_PATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// `p(i) = i`.
    Aligned,
    /// `p(i)` is the centre of the best-matching coarse patch.
    Guided,
}

impl std::str::FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(Self::Aligned),
            "guided" => Ok(Self::Guided),
            other => Err(Error::InvalidConfig(format!(
                "mode must be `aligned` or `guided`, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    pub window: usize,
    pub mode: ReferenceMode,
    pub top_t: usize,
    pub keyframe_interval: usize,
    pub coarse_patch: usize,
    /// Maximum memory entries; `None` is unbounded.
    pub capacity: Option<usize>,
    /// Spread per-query work over the rayon pool.
    pub parallel: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            mode: ReferenceMode::Guided,
            top_t: 1,
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            coarse_patch: DEFAULT_COARSE_PATCH,
            capacity: None,
            parallel: false,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidWindow(self.window));
        }
        if self.top_t == 0 {
            return Err(Error::InvalidConfig("top-t must be at least 1".into()));
        }
        if self.keyframe_interval == 0 {
            return Err(Error::InvalidConfig("keyframe interval must be at least 1".into()));
        }
        if self.coarse_patch == 0 {
            return Err(Error::InvalidConfig("coarse patch must be at least 1".into()));
        }
        if self.capacity == Some(0) {
            return Err(Error::InvalidConfig("memory capacity must be at least 1".into()));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn neg_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    -(acc as f64)
}

/// Negative squared Euclidean distance; larger is more similar.
pub fn similarity(key: &[f32], query: &[f32]) -> Result<f64> {
    if key.len() != query.len() {
        return Err(Error::DimensionMismatch(format!(
            "key has {} channels, query has {}",
            key.len(),
            query.len()
        )));
    }
    Ok(neg_sq_dist(key, query))
}

/// In-place max-subtracted softmax over the entries flagged valid. Invalid
/// entries become exactly 0. Returns `false` when nothing is valid.
pub fn softmax_masked(scores: &mut [f64], valid: impl Fn(usize) -> bool) -> bool {
    for (j, s) in scores.iter_mut().enumerate() {
        if !valid(j) {
            *s = f64::NEG_INFINITY;
        }
    }
    softmax_in_place(scores)
}

/// Softmax treating `-inf` scores as masked out.
fn softmax_in_place(scores: &mut [f64]) -> bool {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        if *s == f64::NEG_INFINITY {
            *s = 0.0;
        } else {
            *s = (*s - max).exp();
            sum += *s;
        }
    }
    scores.iter_mut().for_each(|s| *s /= sum);
    true
}

/// Softmax weights over candidates, one row per query element.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    height: usize,
    width: usize,
    queries: usize,
    candidates: usize,
    weights: Vec<f64>,
}

impl AffinityMatrix {
    /// Weights for a `height x width` query grid, `[query][candidate]`.
    pub fn from_weights(height: usize, width: usize, candidates: usize, weights: Vec<f64>) -> Result<Self> {
        let queries = height * width;
        if weights.len() != queries * candidates {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {queries} queries x {candidates} candidates",
                weights.len()
            )));
        }
        Ok(Self {
            height,
            width,
            queries,
            candidates,
            weights,
        })
    }

    /// Query grid `(height, width)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    /// Weights of query `i` over its candidates.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.weights[i * self.candidates..(i + 1) * self.candidates]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One memory entry's sampled keys with its candidate validity mask
/// (`[slot][query]`).
#[derive(Debug, Clone, Copy)]
pub struct KeyBlock<'a> {
    pub keys: &'a SampledMatrix,
    pub valid: &'a [bool],
}

impl<'a> KeyBlock<'a> {
    /// Block whose valid candidates are exactly the in-bounds samples.
    pub fn in_bounds(keys: &'a SampledMatrix) -> Self {
        Self {
            keys,
            valid: keys.in_bounds_mask(),
        }
    }
}

/// Validity mask for sampled windows: in bounds, and not a repeat of an
/// earlier candidate of the same query (windows of several references overlap).
pub fn candidate_mask(sampled: &SampledMatrix, refs: &ReferenceMap, dirs: &DirectionSet) -> Vec<bool> {
    let mut mask = sampled.in_bounds_mask().to_vec();
    if refs.per_query() == 1 {
        return mask;
    }
    let nq = refs.queries();
    let k2 = dirs.len();
    let (_, width) = refs.map_dims();
    let mut seen: Vec<usize> = Vec::with_capacity(refs.per_query() * k2);
    for i in 0..nq {
        seen.clear();
        for (r, &(row, col)) in refs.of(i).iter().enumerate() {
            for (j, &(dy, dx)) in dirs.offsets().iter().enumerate() {
                let s = r * k2 + j;
                if !mask[s * nq + i] {
                    continue;
                }
                let p = (row as i64 + dy as i64) as usize * width + (col as i64 + dx as i64) as usize;
                if seen.contains(&p) {
                    mask[s * nq + i] = false;
                } else {
                    seen.push(p);
                }
            }
        }
    }
    mask
}

/// Softmax affinity of every query element over the union of candidates in
/// `blocks`. Candidate `b * slots + s` is slot `s` of block `b`.
pub fn affinity(blocks: &[KeyBlock<'_>], query: &FeatureMap) -> Result<AffinityMatrix> {
    affinity_with(blocks, query, false)
}

pub fn affinity_with(blocks: &[KeyBlock<'_>], query: &FeatureMap, parallel: bool) -> Result<AffinityMatrix> {
    let nq = query.positions();
    for b in blocks {
        if b.keys.queries() != nq {
            return Err(Error::DimensionMismatch(format!(
                "keys sampled for {} queries, query map has {nq}",
                b.keys.queries()
            )));
        }
        if b.keys.channels() != query.channels() {
            return Err(Error::DimensionMismatch(format!(
                "keys have {} channels, query has {}",
                b.keys.channels(),
                query.channels()
            )));
        }
        if b.valid.len() != b.keys.queries() * b.keys.slots() {
            return Err(Error::DimensionMismatch("validity mask length".into()));
        }
    }
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.keys.slots();
            Some(o)
        })
        .collect();
    let candidates: usize = blocks.iter().map(|b| b.keys.slots()).sum();
    let mut weights = vec![0.0f64; nq * candidates];

    let column = |(i, col): (usize, &mut [f64])| -> Result<()> {
        let q = query.pixel(i);
        col.fill(f64::NEG_INFINITY);
        for (b, &o) in blocks.iter().zip(&offsets) {
            for s in 0..b.keys.slots() {
                if b.valid[s * nq + i] {
                    col[o + s] = neg_sq_dist(b.keys.get(i, s), q);
                }
            }
        }
        if softmax_in_place(col) {
            Ok(())
        } else {
            Err(Error::NoValidCandidates(i))
        }
    };
    if candidates == 0 {
        return match nq {
            0 => AffinityMatrix::from_weights(query.height(), query.width(), 0, weights),
            _ => Err(Error::NoValidCandidates(0)),
        };
    }
    if parallel {
        weights.par_chunks_mut(candidates).enumerate().try_for_each(column)?;
    } else {
        weights.chunks_mut(candidates).enumerate().try_for_each(column)?;
    }
    AffinityMatrix::from_weights(query.height(), query.width(), candidates, weights)
}

/// Affinity-weighted readout `F[i] = sum_j A[i, j] * V[i, j]` over the same
/// candidate layout as [`affinity`].
pub fn aggregate(values: &[&SampledMatrix], aff: &AffinityMatrix) -> Result<FeatureMap> {
    let slots: usize = values.iter().map(|v| v.slots()).sum();
    if slots != aff.candidates() {
        return Err(Error::DimensionMismatch(format!(
            "{slots} value candidates, affinity has {}",
            aff.candidates()
        )));
    }
    let Some(first) = values.first() else {
        return Err(Error::DimensionMismatch("no value blocks".into()));
    };
    let d = first.channels();
    let nq = aff.queries();
    if values.iter().any(|v| v.channels() != d || v.queries() != nq) {
        return Err(Error::DimensionMismatch("value blocks disagree in shape".into()));
    }
    let mut out = vec![0.0f32; nq * d];
    let mut acc = vec![0.0f64; d];
    for (i, dst) in out.chunks_mut(d).enumerate() {
        acc.fill(0.0);
        let col = aff.column(i);
        let mut total = 0.0;
        let mut c = 0;
        for v in values {
            for s in 0..v.slots() {
                let w = col[c];
                c += 1;
                if w == 0.0 {
                    continue;
                }
                total += w;
                for (a, &x) in acc.iter_mut().zip(v.get(i, s)) {
                    *a += w * x as f64;
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = if total > 0.0 { (a / total) as f32 } else { 0.0 };
        }
    }
    let (h, w) = aff.grid();
    FeatureMap::new(h, w, d, out)
}

/// Pooled cell vectors (`[cell][channel]`) and each cell's centre.
pub type PooledPatches = (Vec<f32>, Vec<(usize, usize)>);

/// Mean-pools `map` over `patch x patch` cells. Cells on the right and bottom
/// edges may be partial. Returns pooled vectors and the full-resolution centre
/// of each cell, both in row-major cell order.
pub fn pool_patches(map: &FeatureMap, patch: usize) -> Result<PooledPatches> {
    let (h, w, d) = (map.height(), map.width(), map.channels());
    if patch == 0 || patch > h || patch > w {
        return Err(Error::CoarsePatchTooLarge {
            patch,
            height: h,
            width: w,
        });
    }
    let (ch, cw) = (h.div_ceil(patch), w.div_ceil(patch));
    let mut pooled = vec![0.0f32; ch * cw * d];
    let mut centers = Vec::with_capacity(ch * cw);
    let mut acc = vec![0.0f64; d];
    for cy in 0..ch {
        let r0 = cy * patch;
        let r1 = (r0 + patch).min(h);
        for cx in 0..cw {
            let c0 = cx * patch;
            let c1 = (c0 + patch).min(w);
            acc.fill(0.0);
            for r in r0..r1 {
                for c in c0..c1 {
                    for (a, &v) in acc.iter_mut().zip(map.at(r, c)) {
                        *a += v as f64;
                    }
                }
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let cell = cy * cw + cx;
            for (p, a) in pooled[cell * d..(cell + 1) * d].iter_mut().zip(&acc) {
                *p = (a / n) as f32;
            }
            centers.push((r0 + (r1 - r0 - 1) / 2, c0 + (c1 - c0 - 1) / 2));
        }
    }
    Ok((pooled, centers))
}

/// Picks the `top_t` best-scoring cells for one query vector. Ties go to the
/// smaller cell index.
fn top_cells(q: &[f32], pooled: &[f32], d: usize, top_t: usize, best: &mut Vec<(f64, usize)>) {
    best.clear();
    for (cell, p) in pooled.chunks_exact(d).enumerate() {
        let score = neg_sq_dist(p, q);
        if best.len() == top_t && score <= best[top_t - 1].0 {
            continue;
        }
        let at = best.partition_point(|&(s, _)| s >= score);
        best.insert(at, (score, cell));
        best.truncate(top_t);
    }
}

/// Similarity-guided reference points: for each query element, the centres
/// of the `top_t` coarse patches of `memory_key` most similar to it.
pub fn select_references(query: &FeatureMap, memory_key: &FeatureMap, config: &MatchConfig) -> Result<ReferenceMap> {
    if !query.same_shape(memory_key) {
        return Err(Error::DimensionMismatch(format!(
            "query {}x{}x{} vs memory key {}x{}x{}",
            query.height(),
            query.width(),
            query.channels(),
            memory_key.height(),
            memory_key.width(),
            memory_key.channels()
        )));
    }
    if config.top_t == 0 {
        return Err(Error::InvalidConfig("top-t must be at least 1".into()));
    }
    let (pooled, centers) = pool_patches(memory_key, config.coarse_patch)?;
    if config.top_t > centers.len() {
        return Err(Error::InvalidConfig(format!(
            "top-t {} exceeds the {} coarse patches",
            config.top_t,
            centers.len()
        )));
    }
    let d = query.channels();
    let t = config.top_t;
    let mut positions = vec![(0usize, 0usize); query.positions() * t];
    let fill = |best: &mut Vec<(f64, usize)>, (i, out): (usize, &mut [(usize, usize)])| {
        top_cells(query.pixel(i), &pooled, d, t, best);
        for (o, &(_, cell)) in out.iter_mut().zip(best.iter()) {
            *o = centers[cell];
        }
    };
    if config.parallel {
        positions
            .par_chunks_mut(t)
            .enumerate()
            .for_each_init(|| Vec::with_capacity(t + 1), fill);
    } else {
        let mut best = Vec::with_capacity(t + 1);
        positions.chunks_mut(t).enumerate().for_each(|x| fill(&mut best, x));
    }
    ReferenceMap::new(memory_key.height(), memory_key.width(), t, positions)
}

/// Frame `t` (1-based) is a keyframe iff `(t - 1) % r == 0`.
pub fn keyframe_schedule(t: usize, r: usize) -> bool {
    r >= 1 && t >= 1 && (t - 1).is_multiple_of(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame: usize,
    pub key: FeatureMap,
    pub value: FeatureMap,
    pub labels: ObjectLabelMap,
}

/// Ordered keyframe store. The first entry is never evicted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
    capacity: Option<usize>,
}

impl MemoryBank {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame).collect()
    }

    pub fn insert(&mut self, frame: usize, key: FeatureMap, value: FeatureMap, labels: ObjectLabelMap) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if frame <= last.frame {
                return Err(Error::OutOfOrderInsert {
                    frame,
                    last: last.frame,
                });
            }
            let first = &self.entries[0];
            if !key.same_shape(&first.key) || !value.same_shape(&first.value) {
                return Err(Error::DimensionMismatch("memory entry shapes differ".into()));
            }
        }
        if (key.height(), key.width()) != (value.height(), value.width())
            || (key.height(), key.width()) != (labels.height(), labels.width())
        {
            return Err(Error::DimensionMismatch(
                "key, value and labels must share height and width".into(),
            ));
        }
        self.entries.push(MemoryEntry {
            frame,
            key,
            value,
            labels,
        });
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                if self.entries.len() > 1 {
                    self.entries.remove(1);
                } else {
                    break;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{aligned_references, make_direction_set, sample_shift};

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(similarity(&[1.0], &[0.0]).unwrap(), -1.0);
        assert_eq!(similarity(&[4.0, 6.0], &[1.0, 2.0]).unwrap(), -25.0);
        assert!(similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn softmax_two_scores() {
        let mut s = [0.0, -1.0];
        assert!(softmax_masked(&mut s, |_| true));
        assert!((s[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((s[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        let mut none = [1.0, 2.0];
        assert!(!softmax_masked(&mut none, |_| false));
    }

    #[test]
    fn singleton_candidate_gets_full_weight() {
        let map = FeatureMap::from_fn(1, 1, 3, |_, _, c| c as f32);
        let keys = sample_shift(&map, &aligned_references(1, 1), &make_direction_set(3).unwrap()).unwrap();
        let aff = affinity(&[KeyBlock::in_bounds(&keys)], &map).unwrap();
        let col = aff.column(0);
        assert_eq!(col[4], 1.0);
        assert_eq!(col.iter().filter(|&&w| w == 0.0).count(), 8);
    }

    #[test]
    fn equidistant_candidates_share_weight() {
        let map = FeatureMap::from_fn(3, 3, 2, |_, _, _| 1.0);
        let keys = sample_shift(&map, &aligned_references(3, 3), &make_direction_set(3).unwrap()).unwrap();
        let aff = affinity(&[KeyBlock::in_bounds(&keys)], &map).unwrap();
        // centre query sees all 9, corner query sees 4
        assert!(aff.column(4).iter().all(|&w| (w - 1.0 / 9.0).abs() < 1e-12));
        let corner: Vec<f64> = aff.column(0).iter().copied().filter(|&w| w > 0.0).collect();
        assert_eq!(corner.len(), 4);
        assert!(corner.iter().all(|&w| (w - 0.25).abs() < 1e-12));
    }

    #[test]
    fn no_valid_candidate_is_an_error() {
        let map = FeatureMap::zeros(2, 2, 1);
        let keys = sample_shift(&map, &aligned_references(2, 2), &make_direction_set(1).unwrap()).unwrap();
        let none = vec![false; 4];
        let err = affinity(
            &[KeyBlock {
                keys: &keys,
                valid: &none,
            }],
            &map,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoValidCandidates(0)));
    }

    #[test]
    fn aggregate_examples() {
        let values = FeatureMap::new(1, 2, 1, vec![0.0, 10.0]).unwrap();
        let refs = ReferenceMap::new(1, 2, 2, vec![(0, 0), (0, 1)]).unwrap();
        let sampled = sample_shift(&values, &refs, &make_direction_set(1).unwrap()).unwrap();
        let aff = AffinityMatrix::from_weights(1, 1, 2, vec![0.25, 0.75]).unwrap();
        assert_eq!(aggregate(&[&sampled], &aff).unwrap().as_slice(), &[7.5]);
        let aff = AffinityMatrix::from_weights(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(aggregate(&[&sampled], &aff).unwrap().as_slice(), &[10.0]);

        let constant = FeatureMap::from_fn(1, 2, 2, |_, _, _| 3.25);
        let sampled = sample_shift(&constant, &refs, &make_direction_set(1).unwrap()).unwrap();
        let aff = AffinityMatrix::from_weights(1, 1, 2, vec![0.3, 0.7]).unwrap();
        assert_eq!(aggregate(&[&sampled], &aff).unwrap().as_slice(), &[3.25, 3.25]);

        let aff = AffinityMatrix::from_weights(1, 1, 3, vec![0.3, 0.3, 0.4]).unwrap();
        assert!(aggregate(&[&sampled], &aff).is_err());
    }

    #[test]
    fn keyframes() {
        assert!((1..=10).all(|t| keyframe_schedule(t, 1)));
        let k: Vec<usize> = (1..=10).filter(|&t| keyframe_schedule(t, 3)).collect();
        assert_eq!(k, vec![1, 4, 7, 10]);
        let k: Vec<usize> = (1..=13)
            .filter(|&t| keyframe_schedule(t, DEFAULT_KEYFRAME_INTERVAL))
            .collect();
        assert_eq!(k, vec![1, 7, 13]);
    }

    fn entry_maps() -> (FeatureMap, FeatureMap, ObjectLabelMap) {
        (
            FeatureMap::zeros(2, 2, 3),
            FeatureMap::zeros(2, 2, 1),
            ObjectLabelMap::background(2, 2, 1),
        )
    }

    #[test]
    fn bank_insert_and_evict() {
        let mut bank = MemoryBank::new(None);
        let (k, v, l) = entry_maps();
        bank.insert(1, k.clone(), v.clone(), l.clone()).unwrap();
        assert_eq!(bank.len(), 1);

        let mut bank = MemoryBank::new(Some(2));
        for f in [1, 7, 13] {
            bank.insert(f, k.clone(), v.clone(), l.clone()).unwrap();
        }
        assert_eq!(bank.frames(), vec![1, 13]);

        let mut bank = MemoryBank::new(None);
        bank.insert(7, k.clone(), v.clone(), l.clone()).unwrap();
        assert!(matches!(
            bank.insert(5, k.clone(), v.clone(), l.clone()),
            Err(Error::OutOfOrderInsert { frame: 5, last: 7 })
        ));
        assert!(bank.insert(8, FeatureMap::zeros(2, 2, 4), v, l).is_err());
    }

    #[test]
    fn self_match_with_unit_patches() {
        let q = FeatureMap::from_fn(4, 5, 2, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f32 + 0.1 * c as f32);
        let cfg = MatchConfig {
            coarse_patch: 1,
            ..MatchConfig::default()
        };
        let refs = select_references(&q, &q, &cfg).unwrap();
        assert!(refs.is_aligned());
        let cfg2 = MatchConfig {
            top_t: 2,
            ..cfg.clone()
        };
        let refs2 = select_references(&q, &q, &cfg2).unwrap();
        assert_eq!(refs2.positions().len(), 40);
        assert!((0..20).all(|i| refs2.of(i).len() == 2));
        let big = MatchConfig { coarse_patch: 5, ..cfg };
        assert!(matches!(
            select_references(&q, &q, &big),
            Err(Error::CoarsePatchTooLarge { .. })
        ));
    }

    #[test]
    fn pooled_centres_cover_partial_cells() {
        let map = FeatureMap::from_fn(5, 5, 1, |r, c, _| (r * 5 + c) as f32);
        let (pooled, centers) = pool_patches(&map, 2).unwrap();
        assert_eq!(centers.len(), 9);
        assert_eq!(centers[0], (0, 0));
        assert_eq!(centers[8], (4, 4));
        assert_eq!(pooled[0], 3.0); // mean of 0,1,5,6
        assert_eq!(pooled[8], 24.0);
    }

    #[test]
    fn duplicate_positions_are_masked() {
        let map = FeatureMap::from_fn(4, 4, 1, |r, c, _| (r * 4 + c) as f32);
        let refs = ReferenceMap::new(4, 4, 2, (0..16).flat_map(|_| [(1, 1), (1, 2)]).collect()).unwrap();
        let dirs = make_direction_set(3).unwrap();
        let sampled = sample_shift(&map, &refs, &dirs).unwrap();
        let mask = candidate_mask(&sampled, &refs, &dirs);
        let valid = (0..18).filter(|&s| mask[s * 16]).count();
        // 3x3 around (1,1) unioned with 3x3 around (1,2): 3 rows x 4 cols
        assert_eq!(valid, 12);
    }
}
