//! Synthetic videos standing in for learned encoders.
//!
//! Each object is an axis-aligned rectangle painted with a constant unit
//! feature vector; the background gets its own vector. All vectors are
//! mutually orthogonal before noise, so matching can succeed with no training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ObjectLabelMap};

/// Largest tolerated absolute dot product between two class vectors.
pub const MAX_CLASS_COHERENCE: f32 = 0.1;

/// Frames plus masks for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<FeatureMap>,
    ground_truth: Option<Vec<ObjectLabelMap>>,
    first_mask: ObjectLabelMap,
    mask_scale: usize,
}

impl VideoSequence {
    /// Validates shapes. The first-frame mask may be at feature resolution or
    /// at an integer multiple of it; the factor is kept as `mask_scale`.
    pub fn new(
        frames: Vec<FeatureMap>,
        first_mask: ObjectLabelMap,
        ground_truth: Option<Vec<ObjectLabelMap>>,
    ) -> Result<Self> {
        let mut mask_scale = 1;
        if let Some(first) = frames.first() {
            if let Some((t, _)) = frames.iter().enumerate().find(|(_, f)| !f.same_shape(first)) {
                return Err(Error::DimensionMismatch(format!(
                    "frame {} shape differs from frame 1",
                    t + 1
                )));
            }
            mask_scale = resolution_scale(&first_mask, first.height(), first.width())?;
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} ground-truth masks for {} frames",
                    gt.len(),
                    frames.len()
                )));
            }
        }
        Ok(Self {
            frames,
            ground_truth,
            first_mask,
            mask_scale,
        })
    }

    pub fn frames(&self) -> &[FeatureMap] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ground_truth(&self) -> Option<&[ObjectLabelMap]> {
        self.ground_truth.as_deref()
    }

    pub fn first_mask(&self) -> &ObjectLabelMap {
        &self.first_mask
    }

    /// Image-to-feature resolution factor of the first-frame mask.
    pub fn mask_scale(&self) -> usize {
        self.mask_scale
    }
}

/// Integer factor relating a mask to a `height x width` feature grid.
pub fn resolution_scale(mask: &ObjectLabelMap, height: usize, width: usize) -> Result<usize> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyTensor);
    }
    let scale = mask.height() / height;
    if scale == 0 || mask.height() != scale * height || mask.width() != scale * width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} mask does not fit {height}x{width} features",
            mask.height(),
            mask.width()
        )));
    }
    Ok(scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    pub objects: usize,
    /// Per-step `(rows, cols)` translation applied to every object. Step `t`
    /// moves frame `t` to frame `t+1`; the last entry repeats, and an empty
    /// list means no motion.
    pub motion: Vec<(i32, i32)>,
    /// Uniform noise amplitude: each channel gets `U(-noise, noise)`.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 16,
            frames: 10,
            objects: 2,
            motion: vec![(1, 0)],
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Cumulative displacement of frame `t` (0-based) relative to frame 0.
    pub fn displacement(&self, t: usize) -> (i64, i64) {
        let (mut dy, mut dx) = (0i64, 0i64);
        for s in 0..t {
            let (sy, sx) = self.motion.get(s).or(self.motion.last()).copied().unwrap_or((0, 0));
            dy += sy as i64;
            dx += sx as i64;
        }
        (dy, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    top: i64,
    left: i64,
    height: i64,
    width: i64,
}

impl Rect {
    fn overlaps_padded(&self, other: &Rect) -> bool {
        self.top - 1 < other.top + other.height
            && other.top - 1 < self.top + self.height
            && self.left - 1 < other.left + other.width
            && other.left - 1 < self.left + self.width
    }
}

/// Generates `count` unit vectors in `channels` dimensions that are
/// orthogonal up to rounding, by Gram-Schmidt over random draws.
fn class_vectors(rng: &mut ChaCha8Rng, count: usize, channels: usize) -> Result<Vec<Vec<f32>>> {
    if count > channels {
        return Err(Error::TooFewChannels {
            channels,
            vectors: count,
        });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Reject near-degenerate draws and retry.
        if norm > 1e-3 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let vectors: Vec<Vec<f32>> = basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
        .collect();
    for (a, va) in vectors.iter().enumerate() {
        for vb in &vectors[a + 1..] {
            let dot: f32 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            assert!(dot.abs() <= MAX_CLASS_COHERENCE, "class vectors too coherent: {dot}");
        }
    }
    Ok(vectors)
}

/// Builds a deterministic synthetic video with per-frame ground truth.
pub fn synthesize_video(config: &SynthConfig) -> Result<VideoSequence> {
    let SynthConfig {
        height,
        width,
        channels,
        frames,
        objects,
        noise,
        seed,
        ..
    } = *config;
    if objects == 0 {
        return Err(Error::InvalidConfig("at least one object is required".into()));
    }
    if objects > u8::MAX as usize {
        return Err(Error::InvalidConfig(format!("at most 255 objects, got {objects}")));
    }
    if frames == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidConfig(
            "frames, height, width and channels must be positive".into(),
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise amplitude {noise} must be >= 0")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = class_vectors(&mut rng, objects + 1, channels)?;

    let disp: Vec<(i64, i64)> = (0..frames).map(|t| config.displacement(t)).collect();
    let (min_dy, max_dy) = min_max(disp.iter().map(|d| d.0));
    let (min_dx, max_dx) = min_max(disp.iter().map(|d| d.1));
    let avail_h = height as i64 - (max_dy - min_dy);
    let avail_w = width as i64 - (max_dx - min_dx);
    const MIN_SIDE: i64 = 2;
    if avail_h < MIN_SIDE || avail_w < MIN_SIDE {
        let frame = disp
            .iter()
            .position(|&(dy, dx)| dy.abs() > height as i64 - MIN_SIDE || dx.abs() > width as i64 - MIN_SIDE)
            .unwrap_or(frames - 1);
        return Err(Error::ObjectOutOfBounds {
            object: 1,
            frame: frame + 1,
        });
    }

    let short = height.min(width) as i64;
    let lo = (short / 6).max(MIN_SIDE);
    let hi = (short / 3).max(lo);
    let mut rects: Vec<Rect> = Vec::with_capacity(objects);
    for object in 0..objects {
        let mut placed = None;
        for _ in 0..2000 {
            let rh = rng.gen_range(lo..=hi).min(avail_h);
            let rw = rng.gen_range(lo..=hi).min(avail_w);
            let top = rng.gen_range(-min_dy..=(height as i64 - max_dy - rh));
            let left = rng.gen_range(-min_dx..=(width as i64 - max_dx - rw));
            let rect = Rect {
                top,
                left,
                height: rh,
                width: rw,
            };
            if rects.iter().all(|r| !r.overlaps_padded(&rect)) {
                placed = Some(rect);
                break;
            }
        }
        match placed {
            Some(r) => rects.push(r),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "cannot place object {} without overlap in a {height}x{width} frame",
                    object + 1
                )))
            }
        }
    }

    let mut feature_frames = Vec::with_capacity(frames);
    let mut labels = Vec::with_capacity(frames);
    for &(dy, dx) in &disp {
        let mut raster = vec![0u8; height * width];
        for (o, rect) in rects.iter().enumerate() {
            for r in 0..rect.height {
                let row = (rect.top + dy + r) as usize;
                let base = row * width;
                for c in 0..rect.width {
                    raster[base + (rect.left + dx + c) as usize] = (o + 1) as u8;
                }
            }
        }
        let mut data = Vec::with_capacity(height * width * channels);
        for &label in &raster {
            for &v in &vectors[label as usize] {
                let n = if noise > 0.0 {
                    rng.gen_range(-noise..=noise)
                } else {
                    0.0
                };
                data.push(v + n);
            }
        }
        feature_frames.push(FeatureMap::new(height, width, channels, data)?);
        labels.push(ObjectLabelMap::new(height, width, objects as u8, raster)?);
    }
    let first = labels[0].clone();
    VideoSequence::new(feature_frames, first, Some(labels))
}

fn min_max(values: impl Iterator<Item = i64>) -> (i64, i64) {
    values.fold((0, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
