//! Frame-by-frame propagation: sample the memory around each query element,
//! match, aggregate, read out object scores, and grow the memory on keyframes.
//!
//! The learned decoder is replaced by affinity-weighted label propagation:
//! the score of object `o` at a query element is the total affinity mass of
//! candidates labelled `o`.

use std::time::Instant;

use crate::contrastive::downsample_labels;
use crate::error::{Error, Result};
use crate::matching::{
    affinity_with, aggregate, candidate_mask, keyframe_schedule, select_references, AffinityMatrix, KeyBlock,
    MatchConfig, MemoryBank, ReferenceMode,
};
use crate::sampling::{
    aligned_references, sample_labels, sample_shift, sample_shift_parallel, DirectionSet, SampledLabels,
};
use crate::synth::VideoSequence;
use crate::tensor::ObjectLabelMap;

/// Per-object soft scores for one frame, `[object][position]`, background at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftScores {
    height: usize,
    width: usize,
    objects: u8,
    scores: Vec<f64>,
}

impl SoftScores {
    pub fn objects(&self) -> u8 {
        self.objects
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Score map of object `o` (0 = background).
    pub fn object(&self, o: u8) -> &[f64] {
        let n = self.positions();
        &self.scores[o as usize * n..(o as usize + 1) * n]
    }

    /// Scores of every class at position `i`.
    pub fn at(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.positions();
        (0..=self.objects as usize).map(move |o| self.scores[o * n + i])
    }

    /// Argmax labels; ties go to the smaller id.
    pub fn labels(&self) -> ObjectLabelMap {
        let labels = (0..self.positions())
            .map(|i| {
                let mut best = 0u8;
                let mut best_score = f64::NEG_INFINITY;
                for (o, s) in self.at(i).enumerate() {
                    if s > best_score {
                        best = o as u8;
                        best_score = s;
                    }
                }
                best
            })
            .collect();
        ObjectLabelMap::new(self.height, self.width, self.objects, labels).expect("argmax within object range")
    }

    fn one_hot(labels: &ObjectLabelMap) -> Self {
        let n = labels.positions();
        let mut scores = vec![0.0; n * (labels.objects() as usize + 1)];
        for (i, &l) in labels.as_slice().iter().enumerate() {
            scores[l as usize * n + i] = 1.0;
        }
        Self {
            height: labels.height(),
            width: labels.width(),
            objects: labels.objects(),
            scores,
        }
    }
}

/// Object scores from affinity weights and the labels of the same
/// candidates: `score(o, i) = sum_j A[i, j] [label_j == o]`. Background takes
/// the remaining mass.
pub fn readout_mask(aff: &AffinityMatrix, labels: &[&SampledLabels], objects: u8) -> Result<SoftScores> {
    let slots: usize = labels.iter().map(|l| l.slots()).sum();
    if slots != aff.candidates() || labels.iter().any(|l| l.queries() != aff.queries()) {
        return Err(Error::DimensionMismatch(format!(
            "{slots} label candidates, affinity has {}",
            aff.candidates()
        )));
    }
    let n = aff.queries();
    let no = objects as usize + 1;
    let mut scores = vec![0.0; n * no];
    let mut acc = vec![0.0f64; no];
    for i in 0..n {
        acc.fill(0.0);
        let col = aff.column(i);
        let mut c = 0;
        for block in labels {
            for s in 0..block.slots() {
                let w = col[c];
                c += 1;
                let l = block.get(i, s)[0] as usize;
                if w != 0.0 && l != 0 {
                    if l >= no {
                        return Err(Error::LabelOutOfRange {
                            label: l as u8,
                            objects,
                        });
                    }
                    acc[l] += w;
                }
            }
        }
        let fg: f64 = acc[1..].iter().sum();
        if fg > 1.0 {
            // rounding can push an all-foreground column just past 1
            acc[1..].iter_mut().for_each(|a| *a /= fg);
        }
        acc[0] = (1.0 - fg).clamp(0.0, 1.0);
        for (o, &a) in acc.iter().enumerate() {
            scores[o * n + i] = a;
        }
    }
    let (height, width) = aff.grid();
    Ok(SoftScores {
        height,
        width,
        objects,
        scores,
    })
}

/// Wall-clock seconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    /// Reference selection plus key, value and label sampling.
    pub sampling: f64,
    pub affinity: f64,
    /// Value aggregation plus mask readout.
    pub aggregation: f64,
}

impl StageTimes {
    pub fn matching(&self) -> f64 {
        self.sampling + self.affinity + self.aggregation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Predicted labels per frame at feature resolution.
    pub labels: Vec<ObjectLabelMap>,
    pub scores: Vec<SoftScores>,
    pub timings: Vec<StageTimes>,
    /// Candidates per query element for each frame (0 for frame 1).
    pub candidates: Vec<usize>,
    /// Memory entries consulted for each frame.
    pub memory_sizes: Vec<usize>,
    /// Image-to-feature factor of the input masks.
    pub mask_scale: usize,
}

impl SegmentationResult {
    /// Predictions at the resolution of the input masks.
    pub fn labels_at_mask_resolution(&self) -> Vec<ObjectLabelMap> {
        if self.mask_scale == 1 {
            return self.labels.clone();
        }
        self.labels.iter().map(|l| l.upsample(self.mask_scale)).collect()
    }

    /// Total time in the matching stages over all frames.
    pub fn matching_seconds(&self) -> f64 {
        self.timings.iter().map(StageTimes::matching).sum()
    }
}

/// Segments every frame from the first-frame mask.
pub fn segment_video(video: &VideoSequence, config: &MatchConfig) -> Result<SegmentationResult> {
    config.validate()?;
    let frames = video.frames();
    let Some(first) = frames.first() else {
        return Err(Error::EmptyVideo);
    };
    let (h, w) = (first.height(), first.width());
    let first_labels = if video.mask_scale() == 1 {
        video.first_mask().clone()
    } else {
        downsample_labels(video.first_mask(), h, w)?
    };
    let objects = first_labels.objects();
    let dirs = DirectionSet::new(config.window)?;
    let sample = if config.parallel {
        sample_shift_parallel
    } else {
        sample_shift
    };

    let mut bank = MemoryBank::new(config.capacity);
    let mut result = SegmentationResult {
        labels: vec![first_labels.clone()],
        scores: vec![SoftScores::one_hot(&first_labels)],
        timings: vec![StageTimes::default()],
        candidates: vec![0],
        memory_sizes: vec![0],
        mask_scale: video.mask_scale(),
    };
    bank.insert(1, first.clone(), first.clone(), first_labels)?;

    for (idx, query) in frames.iter().enumerate().skip(1) {
        let t = idx + 1;
        let mut times = StageTimes::default();

        let clock = Instant::now();
        let mut sampled = Vec::with_capacity(bank.len());
        for entry in bank.entries() {
            let refs = match config.mode {
                ReferenceMode::Aligned => aligned_references(h, w),
                ReferenceMode::Guided => select_references(query, &entry.key, config)?,
            };
            let keys = sample(&entry.key, &refs, &dirs)?;
            let values = sample(&entry.value, &refs, &dirs)?;
            let labels = sample_labels(&entry.labels, &refs, &dirs)?;
            let valid = candidate_mask(&keys, &refs, &dirs);
            sampled.push((keys, values, labels, valid));
        }
        times.sampling = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let blocks: Vec<KeyBlock<'_>> = sampled
            .iter()
            .map(|(keys, _, _, valid)| KeyBlock { keys, valid })
            .collect();
        let aff = affinity_with(&blocks, query, config.parallel)?;
        times.affinity = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let values: Vec<_> = sampled.iter().map(|(_, v, _, _)| v).collect();
        let readout = aggregate(&values, &aff)?;
        debug_assert_eq!(readout.positions(), query.positions());
        let labels: Vec<_> = sampled.iter().map(|(_, _, l, _)| l).collect();
        let scores = readout_mask(&aff, &labels, objects)?;
        let predicted = scores.labels();
        times.aggregation = clock.elapsed().as_secs_f64();

        result.candidates.push(aff.candidates());
        result.memory_sizes.push(bank.len());
        drop(sampled);
        if keyframe_schedule(t, config.keyframe_interval) {
            bank.insert(t, query.clone(), query.clone(), predicted.clone())?;
        }
        result.labels.push(predicted);
        result.scores.push(scores);
        result.timings.push(times);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::affinity;
    use crate::sampling::{make_direction_set, ReferenceMap};
    use crate::synth::{synthesize_video, SynthConfig};
    use crate::tensor::FeatureMap;

    fn label_block(labels: &[u8]) -> SampledLabels {
        let map = ObjectLabelMap::from_labels(1, labels.len(), labels.to_vec()).unwrap();
        let refs = ReferenceMap::new(
            1,
            labels.len(),
            labels.len(),
            (0..labels.len()).map(|c| (0, c)).collect(),
        )
        .unwrap();
        sample_labels(&map, &refs, &make_direction_set(1).unwrap()).unwrap()
    }

    fn single_query(weights: Vec<f64>) -> AffinityMatrix {
        let n = weights.len();
        AffinityMatrix::from_weights(1, 1, n, weights).unwrap()
    }

    #[test]
    fn unanimous_candidates() {
        let labels = label_block(&[2, 2, 2]);
        let s = readout_mask(&single_query(vec![0.2, 0.3, 0.5]), &[&labels], 2).unwrap();
        assert_eq!(s.object(2)[0], 1.0);
        assert_eq!(s.object(0)[0], 0.0);
        assert_eq!(s.labels().as_slice(), &[2]);
    }

    #[test]
    fn half_and_half_ties_to_smaller_id() {
        let labels = label_block(&[1, 2]);
        let s = readout_mask(&single_query(vec![0.5, 0.5]), &[&labels], 2).unwrap();
        assert_eq!((s.object(1)[0], s.object(2)[0]), (0.5, 0.5));
        assert_eq!(s.labels().as_slice(), &[1]);
    }

    #[test]
    fn two_candidate_affinity_readout() {
        // scores 0 and -1 through the real affinity path
        let query = FeatureMap::new(1, 1, 1, vec![0.0]).unwrap();
        let memory = FeatureMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let refs = ReferenceMap::new(1, 2, 2, vec![(0, 0), (0, 1)]).unwrap();
        let dirs = make_direction_set(1).unwrap();
        let keys = sample_shift(&memory, &refs, &dirs).unwrap();
        let aff = affinity(&[KeyBlock::in_bounds(&keys)], &query).unwrap();
        let labels = ObjectLabelMap::new(1, 2, 1, vec![1, 0]).unwrap();
        let sampled = sample_labels(&labels, &refs, &dirs).unwrap();
        let s = readout_mask(&aff, &[&sampled], 1).unwrap();
        assert!((s.object(1)[0] - 0.7311).abs() < 1e-4);
        assert!((s.object(0)[0] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn readout_shape_checks() {
        let labels = label_block(&[1, 0]);
        assert!(readout_mask(&single_query(vec![1.0]), &[&labels], 1).is_err());
    }

    fn small_video(frames: usize, motion: Vec<(i32, i32)>, noise: f32) -> VideoSequence {
        synthesize_video(&SynthConfig {
            height: 32,
            width: 32,
            channels: 8,
            frames,
            objects: 2,
            motion,
            noise,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn single_frame_returns_reference() {
        let video = small_video(1, vec![], 0.05);
        let out = segment_video(&video, &MatchConfig::default()).unwrap();
        assert_eq!(out.labels, vec![video.first_mask().clone()]);
    }

    #[test]
    fn static_video_is_a_fixed_point() {
        let video = small_video(4, vec![], 0.0);
        for mode in [ReferenceMode::Aligned, ReferenceMode::Guided] {
            let cfg = MatchConfig {
                window: 7,
                mode,
                keyframe_interval: 1,
                ..MatchConfig::default()
            };
            let out = segment_video(&video, &cfg).unwrap();
            assert!(out.labels.iter().all(|l| l == video.first_mask()), "{mode:?}");
            for s in &out.scores {
                for i in 0..s.positions() {
                    let total: f64 = s.at(i).sum();
                    assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn memory_grows_on_keyframes() {
        let video = small_video(8, vec![(0, 1)], 0.05);
        let cfg = MatchConfig {
            window: 5,
            keyframe_interval: 3,
            ..MatchConfig::default()
        };
        let out = segment_video(&video, &cfg).unwrap();
        assert_eq!(out.memory_sizes, vec![0, 1, 1, 1, 2, 2, 2, 3]);
        assert_eq!(out.candidates[7], 3 * 25);
    }

    #[test]
    fn rejects_empty_video_and_bad_config() {
        let empty = VideoSequence::new(vec![], ObjectLabelMap::background(2, 2, 1), None).unwrap();
        assert!(matches!(
            segment_video(&empty, &MatchConfig::default()),
            Err(Error::EmptyVideo)
        ));
        let video = small_video(2, vec![], 0.0);
        let cfg = MatchConfig {
            window: 4,
            ..MatchConfig::default()
        };
        assert!(matches!(segment_video(&video, &cfg), Err(Error::InvalidWindow(4))));
    }
}
