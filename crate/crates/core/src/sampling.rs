//! Non-parametric local sampling.
//!
//! For every query element `i` and every offset `dp(j)` of a centred `k x k`
//! grid, the sampled matrix holds `X[p(i) + dp(j)]`, zero padded outside the
//! map. Two implementations produce identical output:
//!
//! * [`sample_gather`] walks query by query and slices each window out of the
//!   map. It is slow and obviously correct, and serves as the oracle.
//! * [`sample_shift`] walks direction by direction: for each offset the whole
//!   map is shifted once and the result written into that offset's row block.
//!   With aligned references this is a handful of contiguous row copies per
//!   direction.
//!
//! Sampled data is stored direction-major, `[slot][query][channel]`, where a
//! slot is `reference * k^2 + direction`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ObjectLabelMap};

/// Centred square of sampling offsets in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionSet {
    window: usize,
    offsets: Vec<(i32, i32)>,
}

impl DirectionSet {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::InvalidWindow(window));
        }
        let half = (window / 2) as i32;
        let offsets = (-half..=half)
            .flat_map(|dy| (-half..=half).map(move |dx| (dy, dx)))
            .collect();
        Ok(Self { window, offsets })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Index of the `(0, 0)` offset.
    pub fn center_index(&self) -> usize {
        self.offsets.len() / 2
    }
}

pub fn make_direction_set(window: usize) -> Result<DirectionSet> {
    DirectionSet::new(window)
}

/// Window centres in a memory map, `per_query` of them for each query element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceMap {
    queries: usize,
    per_query: usize,
    map_height: usize,
    map_width: usize,
    positions: Vec<(usize, usize)>,
    aligned: bool,
}

impl ReferenceMap {
    /// `positions[i * per_query + r]` is reference `r` of query `i`.
    pub fn new(map_height: usize, map_width: usize, per_query: usize, positions: Vec<(usize, usize)>) -> Result<Self> {
        if per_query == 0 || !positions.len().is_multiple_of(per_query) {
            return Err(Error::DimensionMismatch(format!(
                "{} reference positions do not split into groups of {per_query}",
                positions.len()
            )));
        }
        if let Some(&(row, col)) = positions.iter().find(|&&(r, c)| r >= map_height || c >= map_width) {
            return Err(Error::ReferenceOutOfBounds {
                row,
                col,
                height: map_height,
                width: map_width,
            });
        }
        let queries = positions.len() / per_query;
        let aligned = per_query == 1
            && queries == map_height * map_width
            && positions.iter().enumerate().all(|(i, &(r, c))| r * map_width + c == i);
        Ok(Self {
            queries,
            per_query,
            map_height,
            map_width,
            positions,
            aligned,
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn per_query(&self) -> usize {
        self.per_query
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.map_height, self.map_width)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    /// References of query `i`.
    pub fn of(&self, i: usize) -> &[(usize, usize)] {
        &self.positions[i * self.per_query..(i + 1) * self.per_query]
    }

    /// True when `p(i) = i` on a map of the query's own size.
    pub fn is_aligned(&self) -> bool {
        self.aligned
    }
}

/// `p(i) = i` for every flattened index of a `height x width` grid.
pub fn aligned_references(height: usize, width: usize) -> ReferenceMap {
    let positions = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect();
    ReferenceMap {
        queries: height * width,
        per_query: 1,
        map_height: height,
        map_width: width,
        positions,
        aligned: true,
    }
}

/// Locally sampled elements, `[slot][query][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled<T> {
    queries: usize,
    slots: usize,
    channels: usize,
    data: Vec<T>,
    in_bounds: Vec<bool>,
}

/// Sampled feature values.
pub type SampledMatrix = Sampled<f32>;
/// Sampled object ids.
pub type SampledLabels = Sampled<u8>;

impl<T: Copy> Sampled<T> {
    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Candidates per query: references times directions.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Sample for query `i`, slot `s`.
    pub fn get(&self, i: usize, s: usize) -> &[T] {
        let start = (s * self.queries + i) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn in_bounds(&self, i: usize, s: usize) -> bool {
        self.in_bounds[s * self.queries + i]
    }

    /// `[slot][query]` in-bounds flags.
    pub fn in_bounds_mask(&self) -> &[bool] {
        &self.in_bounds
    }

    /// Contiguous block of slot `s`, `[query][channel]`.
    pub fn slot_block(&self, s: usize) -> &[T] {
        let n = self.queries * self.channels;
        &self.data[s * n..(s + 1) * n]
    }
}

impl Sampled<f32> {
    /// First `(query, slot, channel)` whose bits differ, including the bounds flags.
    pub fn first_difference(&self, other: &Self) -> Option<(usize, usize, usize)> {
        if (self.queries, self.slots, self.channels) != (other.queries, other.slots, other.channels) {
            return Some((0, 0, 0));
        }
        for s in 0..self.slots {
            for i in 0..self.queries {
                if self.in_bounds(i, s) != other.in_bounds(i, s) {
                    return Some((i, s, 0));
                }
                let a = self.get(i, s);
                let b = other.get(i, s);
                if let Some(c) = a.iter().zip(b).position(|(x, y)| x.to_bits() != y.to_bits()) {
                    return Some((i, s, c));
                }
            }
        }
        None
    }

    pub fn bit_equal(&self, other: &Self) -> bool {
        self.first_difference(other).is_none()
    }
}

#[derive(Clone, Copy)]
struct Grid<'a, T> {
    data: &'a [T],
    height: usize,
    width: usize,
    channels: usize,
}

fn check_refs(height: usize, width: usize, refs: &ReferenceMap) -> Result<()> {
    if refs.map_dims() != (height, width) {
        return Err(Error::DimensionMismatch(format!(
            "references address a {}x{} map, got {height}x{width}",
            refs.map_height, refs.map_width
        )));
    }
    Ok(())
}

fn offset(pos: (usize, usize), delta: (i32, i32), height: usize, width: usize) -> Option<usize> {
    let r = pos.0 as i64 + delta.0 as i64;
    let c = pos.1 as i64 + delta.1 as i64;
    if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
        None
    } else {
        Some(r as usize * width + c as usize)
    }
}

fn alloc<T: Copy + Default>(queries: usize, slots: usize, channels: usize) -> Sampled<T> {
    Sampled {
        queries,
        slots,
        channels,
        data: vec![T::default(); queries * slots * channels],
        in_bounds: vec![false; queries * slots],
    }
}

fn gather_kernel<T: Copy + Default>(grid: Grid<'_, T>, refs: &ReferenceMap, dirs: &DirectionSet, out: &mut Sampled<T>) {
    let k2 = dirs.len();
    let d = grid.channels;
    let nq = refs.queries();
    for i in 0..nq {
        for (r, &pos) in refs.of(i).iter().enumerate() {
            for (j, &delta) in dirs.offsets().iter().enumerate() {
                let s = r * k2 + j;
                let dst = &mut out.data[(s * nq + i) * d..(s * nq + i + 1) * d];
                match offset(pos, delta, grid.height, grid.width) {
                    Some(src) => dst.copy_from_slice(&grid.data[src * d..(src + 1) * d]),
                    None => dst.fill(T::default()),
                }
                out.in_bounds[s * nq + i] = offset(pos, delta, grid.height, grid.width).is_some();
            }
        }
    }
}

/// Writes the map shifted by `delta` into `block` (`[position][channel]`):
/// `block[p] = X[p + delta]`, zero where `p + delta` leaves the map. Every
/// element of `block` is written exactly once.
fn shift_into<T: Copy + Default>(grid: Grid<'_, T>, delta: (i32, i32), block: &mut [T], flags: &mut [bool]) {
    let (h, w, d) = (grid.height as i64, grid.width as i64, grid.channels);
    let (dy, dx) = (delta.0 as i64, delta.1 as i64);
    let c0 = (-dx).clamp(0, w) as usize;
    let c1 = ((w - dx).clamp(0, w) as usize).max(c0);
    let wu = w as usize;
    let rows = block.chunks_mut(wu * d).zip(flags.chunks_mut(wu));
    for (y, (row, row_flags)) in rows.enumerate() {
        let src_y = y as i64 + dy;
        if src_y < 0 || src_y >= h || c0 == c1 {
            row.fill(T::default());
            row_flags.fill(false);
            continue;
        }
        let src = (src_y as usize * wu + (c0 as i64 + dx) as usize) * d;
        row[..c0 * d].fill(T::default());
        row[c0 * d..c1 * d].copy_from_slice(&grid.data[src..src + (c1 - c0) * d]);
        row[c1 * d..].fill(T::default());
        row_flags[..c0].fill(false);
        row_flags[c0..c1].fill(true);
        row_flags[c1..].fill(false);
    }
}

/// Fills every slot of direction `j` for all references.
fn shift_direction<T: Copy + Default>(
    grid: Grid<'_, T>,
    refs: &ReferenceMap,
    delta: (i32, i32),
    scratch: &mut (Vec<T>, Vec<bool>),
    mut emit: impl FnMut(usize, usize, Option<&[T]>),
) {
    let d = grid.channels;
    let (shifted, flags) = scratch;
    shift_into(grid, delta, shifted, flags);
    for i in 0..refs.queries() {
        for (r, &(row, col)) in refs.of(i).iter().enumerate() {
            let p = row * grid.width + col;
            let v = flags[p].then(|| &shifted[p * d..(p + 1) * d]);
            emit(i, r, v);
        }
    }
}

fn shift_kernel<T: Copy + Default + Send + Sync>(
    grid: Grid<'_, T>,
    refs: &ReferenceMap,
    dirs: &DirectionSet,
    parallel: bool,
    out: &mut Sampled<T>,
) {
    let k2 = dirs.len();
    let d = grid.channels;
    let nq = refs.queries();
    let block_len = nq * d;

    if refs.is_aligned() {
        let fill = |(s, (block, flags)): (usize, (&mut [T], &mut [bool]))| {
            shift_into(grid, dirs.offsets()[s], block, flags);
        };
        if parallel {
            out.data
                .par_chunks_mut(block_len)
                .zip(out.in_bounds.par_chunks_mut(nq))
                .enumerate()
                .for_each(fill);
        } else {
            out.data
                .chunks_mut(block_len)
                .zip(out.in_bounds.chunks_mut(nq))
                .enumerate()
                .for_each(fill);
        }
        return;
    }

    // General references: shift once per direction, then read each reference
    // position from the shifted copy.
    let positions = grid.height * grid.width;
    let per_query = refs.per_query();
    let new_scratch = || (vec![T::default(); positions * d], vec![false; positions]);
    if parallel {
        // Slots of one direction are strided by k^2, so hand each task its
        // direction's blocks through a per-direction result buffer.
        let rows: Vec<(Vec<T>, Vec<bool>)> = dirs
            .offsets()
            .par_iter()
            .map(|&delta| {
                let mut scratch = new_scratch();
                let mut data = vec![T::default(); per_query * block_len];
                let mut flags = vec![false; per_query * nq];
                shift_direction(grid, refs, delta, &mut scratch, |i, r, v| {
                    if let Some(v) = v {
                        data[(r * nq + i) * d..(r * nq + i + 1) * d].copy_from_slice(v);
                        flags[r * nq + i] = true;
                    }
                });
                (data, flags)
            })
            .collect();
        for (j, (data, flags)) in rows.into_iter().enumerate() {
            for r in 0..per_query {
                let s = r * k2 + j;
                out.data[s * block_len..(s + 1) * block_len].copy_from_slice(&data[r * block_len..(r + 1) * block_len]);
                out.in_bounds[s * nq..(s + 1) * nq].copy_from_slice(&flags[r * nq..(r + 1) * nq]);
            }
        }
    } else {
        let mut scratch = new_scratch();
        for (j, &delta) in dirs.offsets().iter().enumerate() {
            let (data, in_bounds) = (&mut out.data, &mut out.in_bounds);
            shift_direction(grid, refs, delta, &mut scratch, |i, r, v| {
                let s = r * k2 + j;
                let dst = &mut data[(s * nq + i) * d..(s * nq + i + 1) * d];
                match v {
                    Some(v) => dst.copy_from_slice(v),
                    None => dst.fill(T::default()),
                }
                in_bounds[s * nq + i] = v.is_some();
            });
        }
    }
}

fn feature_grid(map: &FeatureMap) -> Grid<'_, f32> {
    Grid {
        data: map.as_slice(),
        height: map.height(),
        width: map.width(),
        channels: map.channels(),
    }
}

fn label_grid(labels: &ObjectLabelMap) -> Grid<'_, u8> {
    Grid {
        data: labels.as_slice(),
        height: labels.height(),
        width: labels.width(),
        channels: 1,
    }
}

fn check_output<T>(out: &Sampled<T>, refs: &ReferenceMap, dirs: &DirectionSet, channels: usize) -> Result<()> {
    let want = (refs.queries(), refs.per_query() * dirs.len(), channels);
    if (out.queries, out.slots, out.channels) != want {
        return Err(Error::DimensionMismatch(format!(
            "output buffer is {}x{}x{}, sampling needs {}x{}x{}",
            out.queries, out.slots, out.channels, want.0, want.1, want.2
        )));
    }
    Ok(())
}

impl<T: Copy + Default> Sampled<T> {
    /// Zeroed buffer shaped for sampling `channels`-deep maps with `refs` and `dirs`.
    pub fn for_sampling(refs: &ReferenceMap, dirs: &DirectionSet, channels: usize) -> Self {
        alloc(refs.queries(), refs.per_query() * dirs.len(), channels)
    }
}

/// Per-query gather; the correctness oracle.
pub fn sample_gather(map: &FeatureMap, refs: &ReferenceMap, dirs: &DirectionSet) -> Result<SampledMatrix> {
    let mut out = SampledMatrix::for_sampling(refs, dirs, map.channels());
    sample_gather_into(map, refs, dirs, &mut out)?;
    Ok(out)
}

/// [`sample_gather`] into an existing buffer; every element is overwritten.
pub fn sample_gather_into(
    map: &FeatureMap,
    refs: &ReferenceMap,
    dirs: &DirectionSet,
    out: &mut SampledMatrix,
) -> Result<()> {
    check_refs(map.height(), map.width(), refs)?;
    check_output(out, refs, dirs, map.channels())?;
    gather_kernel(feature_grid(map), refs, dirs, out);
    Ok(())
}

/// Direction-by-direction shift sampling. Bit-identical to [`sample_gather`].
pub fn sample_shift(map: &FeatureMap, refs: &ReferenceMap, dirs: &DirectionSet) -> Result<SampledMatrix> {
    let mut out = SampledMatrix::for_sampling(refs, dirs, map.channels());
    sample_shift_into(map, refs, dirs, false, &mut out)?;
    Ok(out)
}

/// [`sample_shift`] with directions spread over the rayon pool.
pub fn sample_shift_parallel(map: &FeatureMap, refs: &ReferenceMap, dirs: &DirectionSet) -> Result<SampledMatrix> {
    let mut out = SampledMatrix::for_sampling(refs, dirs, map.channels());
    sample_shift_into(map, refs, dirs, true, &mut out)?;
    Ok(out)
}

/// Shift sampling into an existing buffer; every element is overwritten.
pub fn sample_shift_into(
    map: &FeatureMap,
    refs: &ReferenceMap,
    dirs: &DirectionSet,
    parallel: bool,
    out: &mut SampledMatrix,
) -> Result<()> {
    check_refs(map.height(), map.width(), refs)?;
    check_output(out, refs, dirs, map.channels())?;
    shift_kernel(feature_grid(map), refs, dirs, parallel, out);
    Ok(())
}

/// Samples object ids with the shift path; out-of-bounds slots hold 0 and are
/// flagged in the bounds mask.
pub fn sample_labels(labels: &ObjectLabelMap, refs: &ReferenceMap, dirs: &DirectionSet) -> Result<SampledLabels> {
    check_refs(labels.height(), labels.width(), refs)?;
    let mut out = SampledLabels::for_sampling(refs, dirs, 1);
    shift_kernel(label_grid(labels), refs, dirs, false, &mut out);
    Ok(out)
}

/// Gather-path label sampling, for checking [`sample_labels`].
pub fn sample_labels_gather(
    labels: &ObjectLabelMap,
    refs: &ReferenceMap,
    dirs: &DirectionSet,
) -> Result<SampledLabels> {
    check_refs(labels.height(), labels.width(), refs)?;
    let mut out = SampledLabels::for_sampling(refs, dirs, 1);
    gather_kernel(label_grid(labels), refs, dirs, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, 1, |r, c, _| (r * w + c) as f32)
    }

    #[test]
    fn three_by_three_offsets() {
        let dirs = make_direction_set(3).unwrap();
        assert_eq!(
            dirs.offsets(),
            &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 0),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1)
            ]
        );
        assert_eq!(dirs.center_index(), 4);
    }

    #[test]
    fn degenerate_and_larger_windows() {
        assert_eq!(make_direction_set(1).unwrap().offsets(), &[(0, 0)]);
        let d5 = make_direction_set(5).unwrap();
        assert_eq!(d5.len(), 25);
        let sum = d5.offsets().iter().fold((0, 0), |a, &(r, c)| (a.0 + r, a.1 + c));
        assert_eq!(sum, (0, 0));
        for k in [0, 2, 4, 16] {
            assert!(matches!(make_direction_set(k), Err(Error::InvalidWindow(_))));
        }
    }

    #[test]
    fn corner_column_of_ramp() {
        let map = ramp(4, 4);
        let refs = aligned_references(4, 4);
        let dirs = make_direction_set(3).unwrap();
        for out in [
            sample_gather(&map, &refs, &dirs).unwrap(),
            sample_shift(&map, &refs, &dirs).unwrap(),
        ] {
            let col: Vec<f32> = (0..9).map(|s| out.get(0, s)[0]).collect();
            assert_eq!(col, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 4.0, 5.0]);
            let flags: Vec<bool> = (0..9).map(|s| out.in_bounds(0, s)).collect();
            assert_eq!(flags.iter().filter(|f| !**f).count(), 5);
            assert_eq!(flags, vec![false, false, false, false, true, true, false, true, true]);
        }
    }

    #[test]
    fn identity_window() {
        let map = ramp(3, 5);
        let refs = aligned_references(3, 5);
        let out = sample_shift(&map, &refs, &make_direction_set(1).unwrap()).unwrap();
        for i in 0..15 {
            assert_eq!(out.get(i, 0), map.pixel(i));
        }
    }

    #[test]
    fn constant_map_in_bounds_samples() {
        let map = FeatureMap::from_fn(5, 6, 3, |_, _, _| 2.5);
        let refs = aligned_references(5, 6);
        let out = sample_shift(&map, &refs, &make_direction_set(5).unwrap()).unwrap();
        for s in 0..25 {
            for i in 0..30 {
                let expected = if out.in_bounds(i, s) { 2.5 } else { 0.0 };
                assert!(out.get(i, s).iter().all(|&v| v == expected));
            }
        }
    }

    #[test]
    fn zero_map_gives_zero_samples() {
        let map = FeatureMap::zeros(6, 6, 2);
        let out = sample_shift(&map, &aligned_references(6, 6), &make_direction_set(3).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aligned_reference_layout() {
        let refs = aligned_references(2, 2);
        assert_eq!(refs.positions(), &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(refs.is_aligned());
        let refs = aligned_references(3, 5);
        assert_eq!(refs.queries(), 15);
        assert!(refs.positions().iter().all(|&(r, c)| r < 3 && c < 5));
    }

    #[test]
    fn reference_validation() {
        assert!(matches!(
            ReferenceMap::new(2, 2, 1, vec![(0, 0), (2, 0)]),
            Err(Error::ReferenceOutOfBounds { row: 2, .. })
        ));
        assert!(ReferenceMap::new(2, 2, 2, vec![(0, 0)]).is_err());
        let refs = aligned_references(3, 3);
        let map = FeatureMap::zeros(3, 4, 1);
        assert!(matches!(
            sample_gather(&map, &refs, &make_direction_set(3).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn arbitrary_references_with_two_per_query() {
        let map = ramp(5, 5);
        let positions = vec![(0, 0), (4, 4), (2, 2), (2, 3), (4, 0), (0, 4)];
        let refs = ReferenceMap::new(5, 5, 2, positions).unwrap();
        assert!(!refs.is_aligned());
        let dirs = make_direction_set(3).unwrap();
        let a = sample_gather(&map, &refs, &dirs).unwrap();
        let b = sample_shift(&map, &refs, &dirs).unwrap();
        let c = sample_shift_parallel(&map, &refs, &dirs).unwrap();
        assert_eq!(a.slots(), 18);
        assert!(a.bit_equal(&b));
        assert!(a.bit_equal(&c));
        // query 0, second reference (4,4), centre direction
        assert_eq!(a.get(0, 9 + 4), &[24.0]);
    }

    #[test]
    fn label_paths_agree() {
        let labels = ObjectLabelMap::new(3, 3, 2, vec![0, 1, 1, 2, 2, 1, 0, 0, 2]).unwrap();
        let refs = aligned_references(3, 3);
        let dirs = make_direction_set(3).unwrap();
        assert_eq!(
            sample_labels(&labels, &refs, &dirs).unwrap(),
            sample_labels_gather(&labels, &refs, &dirs).unwrap()
        );
    }
}
