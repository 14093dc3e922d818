//! Object-aware spatio-temporal contrastive objective.
//!
//! Query-frame features are projected, grouped by downsampled object label,
//! and sampled into a balanced anchor set. Each anchor is pulled toward every
//! keyframe feature of its own object and pushed from the anchors of all
//! other objects via an InfoNCE term. Only the loss value and its gradient
//! with respect to the projected features are computed here.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ObjectLabelMap};

/// Default temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Default projection width.
pub const DEFAULT_PROJECTION_CHANNELS: usize = 128;
/// Weight of the contrastive term relative to the segmentation loss.
pub const CONTRASTIVE_LOSS_WEIGHT: f64 = 0.01;

/// Two pointwise affine stages with a rectifier between them, optionally
/// followed by unit normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    input: usize,
    hidden: usize,
    output: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    normalize: bool,
}

impl ProjectionHead {
    /// `w1` is `hidden x input`, `w2` is `output x hidden`, both row-major.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input: usize,
        hidden: usize,
        output: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: Vec<f32>,
        normalize: bool,
    ) -> Result<Self> {
        if w1.len() != hidden * input || b1.len() != hidden || w2.len() != output * hidden || b2.len() != output {
            return Err(Error::DimensionMismatch(format!(
                "projection weights do not match {input} -> {hidden} -> {output}"
            )));
        }
        Ok(Self {
            input,
            hidden,
            output,
            w1,
            b1,
            w2,
            b2,
            normalize,
        })
    }

    /// Exact identity on `channels` inputs: `relu(x) - relu(-x) = x`.
    pub fn identity(channels: usize) -> Self {
        let hidden = 2 * channels;
        let mut w1 = vec![0.0; hidden * channels];
        let mut w2 = vec![0.0; channels * hidden];
        for c in 0..channels {
            w1[c * channels + c] = 1.0;
            w1[(channels + c) * channels + c] = -1.0;
            w2[c * hidden + c] = 1.0;
            w2[c * hidden + channels + c] = -1.0;
        }
        Self {
            input: channels,
            hidden,
            output: channels,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; channels],
            normalize: false,
        }
    }

    /// Glorot-uniform weights, zero biases, hidden width equal to `output`.
    pub fn random(input: usize, output: usize, normalize: bool, seed: u64) -> Self {
        let hidden = output;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, fan_out: usize| -> Vec<f32> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect()
        };
        let w1 = draw(input, hidden);
        let w2 = draw(hidden, output);
        Self {
            input,
            hidden,
            output,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output],
            normalize,
        }
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.input
    }

    pub fn output_channels(&self) -> usize {
        self.output
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }
}

/// Applies `head` at every position of `map`.
pub fn project(map: &FeatureMap, head: &ProjectionHead) -> Result<FeatureMap> {
    if map.channels() != head.input {
        return Err(Error::DimensionMismatch(format!(
            "map has {} channels, head expects {}",
            map.channels(),
            head.input
        )));
    }
    let mut out = Vec::with_capacity(map.positions() * head.output);
    let mut hidden = vec![0.0f32; head.hidden];
    let mut z = vec![0.0f32; head.output];
    for i in 0..map.positions() {
        let x = map.pixel(i);
        for (h, (row, b)) in hidden.iter_mut().zip(head.w1.chunks_exact(head.input).zip(&head.b1)) {
            let a: f32 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b;
            *h = a.max(0.0);
        }
        for (o, (row, b)) in z.iter_mut().zip(head.w2.chunks_exact(head.hidden).zip(&head.b2)) {
            *o = row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f32>() + b;
        }
        if head.normalize {
            let norm = z.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroVector(i));
            }
            out.extend(z.iter().map(|&v| (v as f64 / norm) as f32));
        } else {
            out.extend_from_slice(&z);
        }
    }
    FeatureMap::new(map.height(), map.width(), head.output, out)
}

/// Majority-vote pooling of labels onto a `target_h x target_w` grid; ties go
/// to the smaller id.
pub fn downsample_labels(labels: &ObjectLabelMap, target_h: usize, target_w: usize) -> Result<ObjectLabelMap> {
    let (h, w) = (labels.height(), labels.width());
    if target_h == 0 || target_w == 0 || h % target_h != 0 || w % target_w != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w} labels cannot be pooled onto {target_h}x{target_w}"
        )));
    }
    let (bh, bw) = (h / target_h, w / target_w);
    let mut counts = vec![0usize; labels.objects() as usize + 1];
    let mut out = Vec::with_capacity(target_h * target_w);
    for ty in 0..target_h {
        for tx in 0..target_w {
            counts.fill(0);
            for r in ty * bh..(ty + 1) * bh {
                for c in tx * bw..(tx + 1) * bw {
                    counts[labels.at(r, c) as usize] += 1;
                }
            }
            let mut best = 0;
            for (id, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = id;
                }
            }
            out.push(best as u8);
        }
    }
    ObjectLabelMap::new(target_h, target_w, labels.objects(), out)
}

/// Projected feature vectors grouped by object id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectFeatureSets {
    sets: BTreeMap<u8, Vec<Vec<f64>>>,
}

impl ObjectFeatureSets {
    /// Groups the features of one or more frames by their labels. Labels must
    /// be at feature resolution.
    pub fn from_frames(frames: &[(&FeatureMap, &ObjectLabelMap)]) -> Result<Self> {
        let mut sets: BTreeMap<u8, Vec<Vec<f64>>> = BTreeMap::new();
        for (map, labels) in frames {
            if (map.height(), map.width()) != (labels.height(), labels.width()) {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} features with {}x{} labels",
                    map.height(),
                    map.width(),
                    labels.height(),
                    labels.width()
                )));
            }
            for (i, &id) in labels.as_slice().iter().enumerate() {
                sets.entry(id)
                    .or_default()
                    .push(map.pixel(i).iter().map(|&v| v as f64).collect());
            }
        }
        Ok(Self { sets })
    }

    pub fn from_sets(sets: BTreeMap<u8, Vec<Vec<f64>>>) -> Self {
        Self { sets }
    }

    pub fn count(&self, object: u8) -> usize {
        self.sets.get(&object).map_or(0, Vec::len)
    }

    pub fn get(&self, object: u8) -> &[Vec<f64>] {
        self.sets.get(&object).map_or(&[], Vec::as_slice)
    }

    pub fn objects(&self) -> impl Iterator<Item = u8> + '_ {
        self.sets.iter().filter(|(_, v)| !v.is_empty()).map(|(&k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub object: u8,
    pub z: Vec<f64>,
}

/// Balanced anchor set with per-object positives. The negatives of object
/// `o` are the anchors of every other object.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    anchors: Vec<Anchor>,
    positives: BTreeMap<u8, Vec<Vec<f64>>>,
    temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(anchors: Vec<Anchor>, positives: BTreeMap<u8, Vec<Vec<f64>>>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidTemperature(temperature));
        }
        if anchors.is_empty() {
            return Err(Error::EmptyAnchorSet);
        }
        let dim = anchors[0].z.len();
        let vectors = anchors.iter().map(|a| &a.z).chain(positives.values().flatten());
        if vectors.into_iter().any(|z| z.len() != dim) {
            return Err(Error::DimensionMismatch("batch vectors differ in length".into()));
        }
        let mut per_object: BTreeMap<u8, usize> = BTreeMap::new();
        for a in &anchors {
            *per_object.entry(a.object).or_default() += 1;
            if positives.get(&a.object).is_none_or(Vec::is_empty) {
                return Err(Error::InvalidConfig(format!(
                    "anchor object {} has no positives",
                    a.object
                )));
            }
        }
        let mut counts = per_object.values();
        let m = *counts.next().unwrap_or(&0);
        if counts.any(|&c| c != m) {
            return Err(Error::InvalidConfig(
                "anchor counts are not balanced across objects".into(),
            ));
        }
        Ok(Self {
            anchors,
            positives,
            temperature,
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn positives(&self) -> &BTreeMap<u8, Vec<Vec<f64>>> {
        &self.positives
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidTemperature(temperature));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Anchor counts per object.
    pub fn anchor_counts(&self) -> BTreeMap<u8, usize> {
        let mut out = BTreeMap::new();
        for a in &self.anchors {
            *out.entry(a.object).or_default() += 1;
        }
        out
    }

    /// Indices of anchors serving as negatives for `object`.
    pub fn negatives_of(&self, object: u8) -> Vec<usize> {
        (0..self.anchors.len())
            .filter(|&j| self.anchors[j].object != object)
            .collect()
    }

    /// Mutable access to every vector in a fixed order: anchors, then
    /// positives by ascending object id.
    pub fn vectors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.anchors
            .iter_mut()
            .map(|a| &mut a.z)
            .chain(self.positives.values_mut().flatten())
    }
}

/// Draws `m` anchors per object without replacement, `m` being the smallest
/// query-frame feature count among objects that also have keyframe
/// positives. Objects lacking either side are left out.
pub fn sample_anchor_set(
    anchor_sets: &ObjectFeatureSets,
    keyframe_sets: &ObjectFeatureSets,
    temperature: f64,
    seed: u64,
) -> Result<ContrastiveBatch> {
    let objects: Vec<u8> = anchor_sets.objects().filter(|&o| keyframe_sets.count(o) > 0).collect();
    let Some(m) = objects.iter().map(|&o| anchor_sets.count(o)).min() else {
        return Err(Error::NoValidObjects);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(m * objects.len());
    let mut positives = BTreeMap::new();
    for &o in &objects {
        let pool = anchor_sets.get(o);
        let mut picked = sample(&mut rng, pool.len(), m).into_vec();
        picked.sort_unstable();
        anchors.extend(picked.into_iter().map(|i| Anchor {
            object: o,
            z: pool[i].clone(),
        }));
        positives.insert(o, keyframe_sets.get(o).to_vec());
    }
    ContrastiveBatch::new(anchors, positives, temperature)
}

/// Loss value and gradients laid out like the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_positives: BTreeMap<u8, Vec<Vec<f64>>>,
}

impl LossOutput {
    /// Largest L2 norm among all gradient vectors.
    pub fn max_grad_norm(&self) -> f64 {
        self.grad_anchors
            .iter()
            .chain(self.grad_positives.values().flatten())
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Gradients flattened in [`ContrastiveBatch::vectors_mut`] order.
    pub fn flat_gradient(&self) -> Vec<f64> {
        self.grad_anchors
            .iter()
            .chain(self.grad_positives.values().flatten())
            .flatten()
            .copied()
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Cross-frame InfoNCE loss averaged over anchors and their positives, with
/// analytic gradients.
pub fn contrastive_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    let tau = batch.temperature;
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let anchors = &batch.anchors;
    if anchors.is_empty() {
        return Err(Error::EmptyAnchorSet);
    }
    let dim = anchors[0].z.len();
    let mut grad_anchors = vec![vec![0.0; dim]; anchors.len()];
    let mut grad_positives: BTreeMap<u8, Vec<Vec<f64>>> = batch
        .positives
        .iter()
        .map(|(&o, p)| (o, vec![vec![0.0; dim]; p.len()]))
        .collect();
    let negatives_by_object: BTreeMap<u8, Vec<usize>> = batch
        .anchor_counts()
        .keys()
        .map(|&o| (o, batch.negatives_of(o)))
        .collect();

    let g = anchors.len() as f64;
    let mut value = 0.0;
    let mut neg_scores = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        let positives = &batch.positives[&anchor.object];
        let negatives = &negatives_by_object[&anchor.object];
        let w = 1.0 / (g * positives.len() as f64);
        neg_scores.clear();
        neg_scores.extend(negatives.iter().map(|&n| dot(&anchor.z, &anchors[n].z) / tau));
        let lse_neg = log_sum_exp(&neg_scores);
        let mut grad_i = vec![0.0; dim];
        let grad_p = grad_positives.get_mut(&anchor.object).expect("positives present");
        // d/ds_n of each positive's term is exp(s_n - lse_neg) * exp(lse_neg - log_denom_p)
        let mut neg_mass = 0.0;
        for (p, zp) in positives.iter().enumerate() {
            let sp = dot(&anchor.z, zp) / tau;
            let log_denom = log_add_exp(sp, lse_neg);
            value += w * (log_denom - sp);
            let cp = w * ((sp - log_denom).exp() - 1.0) / tau;
            axpy(cp, zp, &mut grad_i);
            axpy(cp, &anchor.z, &mut grad_p[p]);
            neg_mass += (lse_neg - log_denom).exp();
        }
        for (&n, &sn) in negatives.iter().zip(&neg_scores) {
            let c = w * neg_mass * (sn - lse_neg).exp() / tau;
            axpy(c, &anchors[n].z, &mut grad_i);
            axpy(c, &anchor.z, &mut grad_anchors[n]);
        }
        axpy(1.0, &grad_i, &mut grad_anchors[i]);
    }
    Ok(LossOutput {
        value,
        grad_anchors,
        grad_positives,
    })
}

/// Balanced sub-batch with at most `max_anchors` anchors in total (the same
/// number per object, at least one) and at most `max_positives` per object.
pub fn subsample_batch(
    batch: &ContrastiveBatch,
    max_anchors: usize,
    max_positives: usize,
    seed: u64,
) -> Result<ContrastiveBatch> {
    let counts = batch.anchor_counts();
    let m = counts.values().copied().min().unwrap_or(0);
    let per_object = (max_anchors / counts.len().max(1)).clamp(1, m.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(per_object * counts.len());
    let mut positives = BTreeMap::new();
    for &o in counts.keys() {
        let pool: Vec<&Anchor> = batch.anchors.iter().filter(|a| a.object == o).collect();
        let mut picked = sample(&mut rng, pool.len(), per_object).into_vec();
        picked.sort_unstable();
        anchors.extend(picked.into_iter().map(|i| pool[i].clone()));
        let pos = &batch.positives[&o];
        let mut picked = sample(&mut rng, pos.len(), max_positives.clamp(1, pos.len())).into_vec();
        picked.sort_unstable();
        positives.insert(o, picked.into_iter().map(|i| pos[i].clone()).collect());
    }
    ContrastiveBatch::new(anchors, positives, batch.temperature)
}

/// `count` distinct indices below `len` (all of them when `count >= len`), ascending.
pub fn sample_coordinates(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, len, count.min(len)).into_vec();
    picked.sort_unstable();
    picked
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for gradient-check relative errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences of step `step`
/// at the given flattened coordinates (all of them when `coords` is `None`).
/// Returns the largest relative error.
pub fn gradient_check(batch: &ContrastiveBatch, step: f64, coords: Option<&[usize]>) -> Result<f64> {
    let analytic = contrastive_loss(batch)?.flat_gradient();
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    let mut probe = batch.clone();
    for &k in coords {
        let nudge = |b: &mut ContrastiveBatch, delta: f64| {
            let dim = b.anchors[0].z.len();
            if let Some(v) = b.vectors_mut().nth(k / dim) {
                v[k % dim] += delta;
            }
        };
        nudge(&mut probe, step);
        let plus = contrastive_loss(&probe)?.value;
        nudge(&mut probe, -2.0 * step);
        let minus = contrastive_loss(&probe)?.value;
        nudge(&mut probe, step);
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[k], numeric, GRAD_CHECK_FLOOR));
    }
    Ok(worst)
}
