//! Region similarity (J), contour accuracy (F) and their average.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::ObjectLabelMap;

fn check_dims(pred: &ObjectLabelMap, gt: &ObjectLabelMap) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Intersection over union of object `object`; 1 when both masks are empty.
pub fn region_similarity(pred: &ObjectLabelMap, gt: &ObjectLabelMap, object: u8) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (a, b) = (p == object, g == object);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Object pixels with a 4-neighbour outside the object or outside the frame.
pub fn boundary(mask: &ObjectLabelMap, object: u8) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if mask.at(r, c) != object {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || mask.at(r - 1, c) != object
                || mask.at(r + 1, c) != object
                || mask.at(r, c - 1) != object
                || mask.at(r, c + 1) != object;
            out[r * w + c] = edge;
        }
    }
    out
}

/// Count of pixels in `from` with some pixel of `to` within Euclidean distance `tolerance`.
fn matched(from: &[bool], to: &[bool], h: usize, w: usize, tolerance: usize) -> usize {
    let t = tolerance as i64;
    let mut count = 0;
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            if !from[(r * w as i64 + c) as usize] {
                continue;
            }
            let hit = (-t..=t).any(|dy| {
                (-t..=t).any(|dx| {
                    let (y, x) = (r + dy, c + dx);
                    dy * dy + dx * dx <= t * t
                        && y >= 0
                        && x >= 0
                        && y < h as i64
                        && x < w as i64
                        && to[(y * w as i64 + x) as usize]
                })
            });
            count += hit as usize;
        }
    }
    count
}

/// Boundary F-measure of object `object` with matching radius `tolerance`.
/// 1 when both boundaries are empty, 0 when exactly one is.
pub fn contour_accuracy(pred: &ObjectLabelMap, gt: &ObjectLabelMap, object: u8, tolerance: usize) -> Result<f64> {
    check_dims(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let pb = boundary(pred, object);
    let gb = boundary(gt, object);
    let np = pb.iter().filter(|&&b| b).count();
    let ng = gb.iter().filter(|&&b| b).count();
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let precision = matched(&pb, &gb, h, w, tolerance) as f64 / np as f64;
    let recall = matched(&gb, &pb, h, w, tolerance) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// `ceil(0.8%` of the image diagonal`)`, at least 1.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((0.008 * diag).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScore {
    pub object: u8,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeenSplit {
    pub seen: BTreeSet<u8>,
    pub unseen: BTreeSet<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScores {
    pub j_seen: f64,
    pub f_seen: f64,
    pub j_unseen: f64,
    pub f_unseen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub objects: Vec<ObjectScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub j_and_f: f64,
    pub split: Option<SplitScores>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl MetricReport {
    /// Builds the report from per-object scores.
    pub fn from_scores(objects: Vec<ObjectScore>, split: Option<&SeenSplit>) -> Self {
        let mean_j = mean(objects.iter().map(|o| o.j));
        let mean_f = mean(objects.iter().map(|o| o.f));
        let split = split.map(|s| {
            let part = |ids: &BTreeSet<u8>, pick: fn(&ObjectScore) -> f64| {
                mean(objects.iter().filter(|o| ids.contains(&o.object)).map(pick))
            };
            SplitScores {
                j_seen: part(&s.seen, |o| o.j),
                f_seen: part(&s.seen, |o| o.f),
                j_unseen: part(&s.unseen, |o| o.j),
                f_unseen: part(&s.unseen, |o| o.f),
            }
        });
        Self {
            objects,
            mean_j,
            mean_f,
            j_and_f: (mean_j + mean_f) / 2.0,
            split,
        }
    }

    /// Comma-separated table: per-object rows, then the summary block, then
    /// the seen/unseen block when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("object,J,F\n");
        for o in &self.objects {
            let _ = writeln!(out, "{},{:.6},{:.6}", o.object, o.j, o.f);
        }
        let _ = writeln!(out, "mean_J,mean_F,JandF");
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", self.mean_j, self.mean_f, self.j_and_f);
        if let Some(s) = &self.split {
            let _ = writeln!(out, "J_s,F_s,J_u,F_u");
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6}",
                s.j_seen, s.f_seen, s.j_unseen, s.f_unseen
            );
        }
        out
    }
}

/// Scores predictions against sparse ground truth. Frame 1 and frames
/// without annotation are skipped. Predictions at feature resolution are
/// upsampled when the ground truth is an integer multiple larger.
/// `tolerance` defaults to [`default_tolerance`] of the ground-truth size.
pub fn evaluate(
    pred: &[ObjectLabelMap],
    gt: &[Option<ObjectLabelMap>],
    tolerance: Option<usize>,
    split: Option<&SeenSplit>,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames, {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let annotated: Vec<(ObjectLabelMap, &ObjectLabelMap)> = pred
        .iter()
        .zip(gt)
        .skip(1)
        .filter_map(|(p, g)| g.as_ref().map(|g| (p, g)))
        .map(|(p, g)| {
            if p.same_dims(g) {
                return Ok((p.clone(), g));
            }
            let scale = g.height() / p.height().max(1);
            if scale > 1 && p.height() * scale == g.height() && p.width() * scale == g.width() {
                Ok((p.upsample(scale), g))
            } else {
                Err(Error::DimensionMismatch(format!(
                    "prediction {}x{} vs ground truth {}x{}",
                    p.height(),
                    p.width(),
                    g.height(),
                    g.width()
                )))
            }
        })
        .collect::<Result<_>>()?;
    if annotated.is_empty() {
        return Err(Error::NoAnnotatedFrames);
    }
    let ids: BTreeSet<u8> = gt
        .iter()
        .flatten()
        .flat_map(|g| g.as_slice().iter().copied())
        .filter(|&l| l != 0)
        .collect();
    let mut objects = Vec::with_capacity(ids.len());
    for &o in &ids {
        let mut js = Vec::with_capacity(annotated.len());
        let mut fs = Vec::with_capacity(annotated.len());
        for (p, g) in &annotated {
            let tol = tolerance.unwrap_or_else(|| default_tolerance(g.height(), g.width()));
            js.push(region_similarity(p, g, o)?);
            fs.push(contour_accuracy(p, g, o, tol)?);
        }
        objects.push(ObjectScore {
            object: o,
            j: mean(js.into_iter()),
            f: mean(fs.into_iter()),
        });
    }
    Ok(MetricReport::from_scores(objects, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize, id: u8) -> ObjectLabelMap {
        let labels = (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                if (r0..r1).contains(&r) && (c0..c1).contains(&c) {
                    id
                } else {
                    0
                }
            })
            .collect();
        ObjectLabelMap::new(h, w, id, labels).unwrap()
    }

    #[test]
    fn region_similarity_examples() {
        let a = rect(8, 8, 2, 5, 1, 6, 1);
        assert_eq!(region_similarity(&a, &a, 1).unwrap(), 1.0);
        let b = rect(8, 8, 6, 8, 6, 8, 1);
        assert_eq!(region_similarity(&a, &b, 1).unwrap(), 0.0);
        let left = rect(8, 8, 0, 8, 0, 4, 1);
        let full = rect(8, 8, 0, 8, 0, 8, 1);
        assert_eq!(region_similarity(&left, &full, 1).unwrap(), 0.5);
        assert_eq!(region_similarity(&a, &a, 2).unwrap(), 1.0);
        assert!(region_similarity(&a, &rect(8, 9, 0, 1, 0, 1, 1), 1).is_err());
    }

    #[test]
    fn contour_examples() {
        let gt = rect(10, 10, 3, 7, 2, 6, 1);
        assert_eq!(contour_accuracy(&gt, &gt, 1, 1).unwrap(), 1.0);
        let shifted = rect(10, 10, 3, 7, 3, 7, 1);
        assert_eq!(contour_accuracy(&shifted, &gt, 1, 1).unwrap(), 1.0);
        let far = rect(10, 10, 0, 2, 8, 10, 1);
        assert_eq!(contour_accuracy(&far, &gt, 1, 1).unwrap(), 0.0);
        let empty = ObjectLabelMap::background(10, 10, 1);
        assert_eq!(contour_accuracy(&empty, &empty, 1, 1).unwrap(), 1.0);
        assert_eq!(contour_accuracy(&empty, &gt, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn boundary_of_square() {
        let sq = rect(6, 6, 1, 5, 1, 5, 1);
        assert_eq!(boundary(&sq, 1).iter().filter(|&&b| b).count(), 12);
        let full = rect(3, 3, 0, 3, 0, 3, 1);
        // every pixel but the centre touches the frame edge
        assert_eq!(boundary(&full, 1).iter().filter(|&&b| b).count(), 8);
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(default_tolerance(64, 64), 1);
        assert_eq!(default_tolerance(512, 512), 6);
    }

    #[test]
    fn report_arithmetic_and_csv() {
        let scores = vec![
            ObjectScore {
                object: 1,
                j: 0.4,
                f: 0.8,
            },
            ObjectScore {
                object: 2,
                j: 0.6,
                f: 1.0,
            },
        ];
        let split = SeenSplit {
            seen: [1].into(),
            unseen: [2].into(),
        };
        let r = MetricReport::from_scores(scores, Some(&split));
        assert!((r.mean_j - 0.5).abs() < 1e-12);
        assert!((r.mean_f - 0.9).abs() < 1e-12);
        assert!((r.j_and_f - 0.7).abs() < 1e-12);
        let s = r.split.unwrap();
        assert_eq!((s.j_seen, s.f_seen, s.j_unseen, s.f_unseen), (0.4, 0.8, 0.6, 1.0));
        let csv = r.to_csv();
        assert!(csv.starts_with("object,J,F\n1,0.400000,0.800000\n"));
        assert!(csv.contains("mean_J,mean_F,JandF\n0.500000,0.900000,0.700000\n"));
        assert!(csv.ends_with("J_s,F_s,J_u,F_u\n0.400000,0.800000,0.600000,1.000000\n"));
    }

    #[test]
    fn evaluate_skips_first_and_unannotated_frames() {
        let gt = rect(8, 8, 0, 8, 0, 8, 1);
        let half = rect(8, 8, 0, 8, 0, 4, 1);
        let wrong = ObjectLabelMap::background(8, 8, 1);
        let pred = vec![wrong.clone(), half.clone(), wrong];
        let r = evaluate(&pred, &[Some(gt.clone()), Some(gt.clone()), None], None, None).unwrap();
        assert_eq!(r.objects.len(), 1);
        assert_eq!(r.mean_j, 0.5);
        assert!(matches!(
            evaluate(&pred[..1], &[Some(gt.clone())], None, None),
            Err(Error::NoAnnotatedFrames)
        ));
        assert!(evaluate(&pred, &[Some(gt)], None, None).is_err());
    }

    #[test]
    fn evaluate_upsamples_predictions() {
        let small = rect(4, 4, 1, 3, 1, 3, 1);
        let big = small.upsample(2);
        let r = evaluate(&[small.clone(), small], &[Some(big.clone()), Some(big)], None, None).unwrap();
        assert_eq!((r.mean_j, r.mean_f, r.j_and_f), (1.0, 1.0, 1.0));
    }
}
