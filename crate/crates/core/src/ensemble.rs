//! Suppression and ensembling of detections.
//!
//! Suppression is always class-wise: boxes with different labels never
//! interact. Scans go in descending score with ties to the lower input index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Box3D, IouKind, Label};
use crate::scalar::Scalar;

/// Detections of one frame from one (possibly merged) detector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet<T> {
    pub frame_id: String,
    pub timestamp: T,
    pub boxes: Vec<Box3D<T>>,
    pub source_id: u32,
}

impl<T: Scalar> DetectionSet<T> {
    pub fn new(frame_id: impl Into<String>, boxes: Vec<Box3D<T>>) -> Self {
        DetectionSet {
            frame_id: frame_id.into(),
            timestamp: T::zero(),
            boxes,
            source_id: 0,
        }
    }

    pub fn with_source(mut self, source_id: u32) -> Self {
        self.source_id = source_id;
        self
    }

    pub fn with_timestamp(mut self, timestamp: T) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Per-class IoU thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds<T> {
    pub vehicle: T,
    pub pedestrian: T,
    pub cyclist: T,
}

impl<T: Scalar> ClassThresholds<T> {
    pub fn uniform(v: T) -> Self {
        ClassThresholds {
            vehicle: v,
            pedestrian: v,
            cyclist: v,
        }
    }

    pub fn get(&self, label: Label) -> T {
        match label {
            Label::Vehicle => self.vehicle,
            Label::Pedestrian => self.pedestrian,
            Label::Cyclist => self.cyclist,
        }
    }
}

impl<T: Scalar> Default for ClassThresholds<T> {
    /// 0.7 for vehicles, 0.5 for pedestrians and cyclists.
    fn default() -> Self {
        ClassThresholds {
            vehicle: T::lit(0.7),
            pedestrian: T::lit(0.5),
            cyclist: T::lit(0.5),
        }
    }
}

/// Input indices sorted by descending score, ties to the lower index.
pub fn score_order<T: Scalar>(boxes: &[Box3D<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy NMS with BEV IoU. Returns kept indices in keep order.
pub fn nms<T: Scalar>(boxes: &[Box3D<T>], iou_thr: T) -> Vec<usize> {
    nms_with(boxes, |_| iou_thr, IouKind::Bev)
}

pub fn nms_classwise<T: Scalar>(boxes: &[Box3D<T>], thresholds: &ClassThresholds<T>, kind: IouKind) -> Vec<usize> {
    nms_with(boxes, |l| thresholds.get(l), kind)
}

fn nms_with<T: Scalar>(boxes: &[Box3D<T>], thr: impl Fn(Label) -> T, kind: IouKind) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(boxes) {
        let b = &boxes[i];
        let t = thr(b.label);
        let suppressed = kept
            .iter()
            .any(|&k| boxes[k].label == b.label && iou(kind, &boxes[k], b) >= t);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Gaussian soft-NMS. Returns `(input index, final score)` pairs in the
/// order boxes were kept, which is non-increasing in score.
pub fn soft_nms_indexed<T: Scalar>(boxes: &[Box3D<T>], sigma: T, score_floor: T, kind: IouKind) -> Result<Vec<(usize, T)>> {
    if !(sigma > T::zero()) {
        return Err(Error::invalid(format!("soft-NMS sigma must be positive, got {sigma}")));
    }
    if !(score_floor >= T::zero() && score_floor < T::one()) {
        return Err(Error::invalid(format!("score floor must be in [0, 1), got {score_floor}")));
    }
    let mut live: Vec<(usize, T)> = boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| b.score >= score_floor)
        .map(|(i, b)| (i, b.score))
        .collect();
    let mut kept = Vec::new();
    while !live.is_empty() {
        let mut best = 0;
        for (pos, &(i, s)) in live.iter().enumerate() {
            let (bi, bs) = live[best];
            if s > bs || (s == bs && i < bi) {
                best = pos;
            }
        }
        let (m, ms) = live.swap_remove(best);
        kept.push((m, ms));
        let top = &boxes[m];
        live.retain_mut(|(i, s)| {
            let b = &boxes[*i];
            if b.label == top.label {
                let o = iou(kind, top, b);
                *s = *s * (-(o * o) / sigma).exp();
            }
            *s >= score_floor
        });
    }
    Ok(kept)
}

/// Gaussian soft-NMS with BEV IoU; rescored boxes, highest score first.
pub fn soft_nms<T: Scalar>(boxes: &[Box3D<T>], sigma: T, score_floor: T) -> Result<Vec<Box3D<T>>> {
    Ok(soft_nms_indexed(boxes, sigma, score_floor, IouKind::Bev)?
        .into_iter()
        .map(|(i, s)| boxes[i].clone().with_score(s))
        .collect())
}

/// 3D box voting with BEV IoU.
pub fn box_vote<T: Scalar>(nms_boxes: &[Box3D<T>], original_boxes: &[Box3D<T>], iou_thr: T) -> Vec<Box3D<T>> {
    box_vote_with(nms_boxes, original_boxes, iou_thr, IouKind::Bev)
}

/// Replaces centre and size of every kept box by the plain mean over the
/// same-label original boxes whose IoU with it is strictly above `iou_thr`.
/// Heading and score of the kept box are left as they are.
pub fn box_vote_with<T: Scalar>(
    nms_boxes: &[Box3D<T>],
    original_boxes: &[Box3D<T>],
    iou_thr: T,
    kind: IouKind,
) -> Vec<Box3D<T>> {
    nms_boxes
        .iter()
        .map(|kept| {
            let mut sum = [T::zero(); 6];
            let mut n = 0usize;
            for o in original_boxes {
                if o.label == kept.label && iou(kind, o, kept) > iou_thr {
                    let fields = [o.cx, o.cy, o.cz, o.width, o.length, o.height];
                    for (s, f) in sum.iter_mut().zip(fields) {
                        *s = *s + f;
                    }
                    n += 1;
                }
            }
            if n == 0 {
                return kept.clone();
            }
            let m = sum.map(|s| s / T::from_count(n));
            Box3D {
                cx: m[0],
                cy: m[1],
                cz: m[2],
                width: m[3],
                length: m[4],
                height: m[5],
                ..kept.clone()
            }
        })
        .collect()
}

/// Concatenates same-frame sets in source order, tagging every box that
/// carries no source yet with its set's source id.
pub fn merge_sources<T: Scalar>(sets: &[DetectionSet<T>]) -> Result<DetectionSet<T>> {
    let Some(first) = sets.first() else {
        return Ok(DetectionSet::default());
    };
    if let Some(bad) = sets.iter().find(|s| s.frame_id != first.frame_id) {
        return Err(Error::invalid(format!(
            "cannot merge frames {:?} and {:?}",
            first.frame_id, bad.frame_id
        )));
    }
    let boxes = sets
        .iter()
        .flat_map(|s| {
            s.boxes.iter().map(move |b| {
                let mut b = b.clone();
                b.source_id.get_or_insert(s.source_id);
                b
            })
        })
        .collect();
    Ok(DetectionSet {
        frame_id: first.frame_id.clone(),
        timestamp: first.timestamp,
        boxes,
        source_id: first.source_id,
    })
}

fn reweighted<T: Scalar>(set: &DetectionSet<T>, w: T) -> DetectionSet<T> {
    let mut out = set.clone();
    for b in &mut out.boxes {
        b.source_id.get_or_insert(set.source_id);
        b.score = (b.score * w).max(T::zero()).min(T::one());
    }
    out
}

/// One greedy-ensemble step: weight both detectors' scores, pool them and
/// suppress with BEV NMS. The result can be paired again with a further
/// detector.
pub fn ensemble_pair<T: Scalar>(
    a: &DetectionSet<T>,
    b: &DetectionSet<T>,
    w_a: T,
    w_b: T,
    iou_thr: T,
) -> Result<DetectionSet<T>> {
    ensemble_pair_with(a, b, w_a, w_b, &ClassThresholds::uniform(iou_thr), IouKind::Bev)
}

/// [`ensemble_pair`] with per-class suppression thresholds.
pub fn ensemble_pair_with<T: Scalar>(
    a: &DetectionSet<T>,
    b: &DetectionSet<T>,
    w_a: T,
    w_b: T,
    thresholds: &ClassThresholds<T>,
    kind: IouKind,
) -> Result<DetectionSet<T>> {
    for w in [w_a, w_b] {
        if !(w > T::zero() && w <= T::one()) {
            return Err(Error::invalid(format!("score weight must be in (0, 1], got {w}")));
        }
    }
    let pooled = merge_sources(&[reweighted(a, w_a), reweighted(b, w_b)])?;
    let keep = nms_classwise(&pooled.boxes, thresholds, kind);
    Ok(DetectionSet {
        boxes: keep.into_iter().map(|i| pooled.boxes[i].clone()).collect(),
        ..pooled
    })
}

/// Multi-frame form of [`ensemble_pair`]; frames are paired by position.
pub fn ensemble_pair_frames<T: Scalar>(
    a: &[DetectionSet<T>],
    b: &[DetectionSet<T>],
    w_a: T,
    w_b: T,
    iou_thr: T,
) -> Result<Vec<DetectionSet<T>>> {
    ensemble_pair_frames_with(a, b, w_a, w_b, &ClassThresholds::uniform(iou_thr), IouKind::Bev)
}

pub fn ensemble_pair_frames_with<T: Scalar>(
    a: &[DetectionSet<T>],
    b: &[DetectionSet<T>],
    w_a: T,
    w_b: T,
    thresholds: &ClassThresholds<T>,
    kind: IouKind,
) -> Result<Vec<DetectionSet<T>>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("frame counts differ: {} vs {}", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .map(|(fa, fb)| ensemble_pair_with(fa, fb, w_a, w_b, thresholds, kind))
        .collect()
}

/// Best score weight for `candidate` when paired with `fixed` (weight 1).
///
/// Grid points are evaluated in parallel; the reduction keeps the earliest
/// grid entry among equal scores, so the result matches a sequential scan.
pub fn grid_search_weight<T, F>(
    fixed: &DetectionSet<T>,
    candidate: &DetectionSet<T>,
    grid: &[T],
    iou_thr: T,
    score_fn: F,
) -> Result<(T, f64)>
where
    T: Scalar,
    F: Fn(&DetectionSet<T>) -> f64 + Sync,
{
    grid_search_weight_frames(
        std::slice::from_ref(fixed),
        std::slice::from_ref(candidate),
        grid,
        iou_thr,
        |frames: &[DetectionSet<T>]| score_fn(&frames[0]),
    )
}

pub fn grid_search_weight_frames<T, F>(
    fixed: &[DetectionSet<T>],
    candidate: &[DetectionSet<T>],
    grid: &[T],
    iou_thr: T,
    score_fn: F,
) -> Result<(T, f64)>
where
    T: Scalar,
    F: Fn(&[DetectionSet<T>]) -> f64 + Sync,
{
    grid_search_weight_frames_with(fixed, candidate, grid, &ClassThresholds::uniform(iou_thr), IouKind::Bev, score_fn)
}

pub fn grid_search_weight_frames_with<T, F>(
    fixed: &[DetectionSet<T>],
    candidate: &[DetectionSet<T>],
    grid: &[T],
    thresholds: &ClassThresholds<T>,
    kind: IouKind,
    score_fn: F,
) -> Result<(T, f64)>
where
    T: Scalar,
    F: Fn(&[DetectionSet<T>]) -> f64 + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("weight grid is empty"));
    }
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&w| {
            ensemble_pair_frames_with(fixed, candidate, T::one(), w, thresholds, kind).map(|pooled| score_fn(&pooled))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((grid[best], scores[best]))
}
