//! Detection AP/APH and CLEAR-MOT tracking metrics.
//!
//! AP integrates the all-point interpolated precision envelope over recall.
//! APH uses the same recall axis but a precision numerator in which every
//! true positive counts `max(0, 1 − Δθ/π)` instead of 1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{heading_error, iou, Box3D, IouKind, Label};
use crate::scalar::Scalar;
use crate::tracker::hungarian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifficultyLevel {
    L1,
    L2,
}

/// Ground truth with at most this many points falls back to difficulty 2.
pub const SPARSE_POINT_LIMIT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub vehicle_iou: f64,
    pub pedestrian_iou: f64,
    pub cyclist_iou: f64,
    pub level: DifficultyLevel,
    pub iou_kind: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            vehicle_iou: 0.7,
            pedestrian_iou: 0.5,
            cyclist_iou: 0.5,
            level: DifficultyLevel::L1,
            iou_kind: IouKind::ThreeD,
        }
    }
}

impl EvalConfig {
    pub fn iou_threshold(&self, label: Label) -> f64 {
        match label {
            Label::Vehicle => self.vehicle_iou,
            Label::Pedestrian => self.pedestrian_iou,
            Label::Cyclist => self.cyclist_iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disposition<T> {
    TruePositive { gt_index: usize, heading_weight: T },
    FalsePositive,
}

/// Match outcome of one frame for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchLedger<T> {
    /// Detection scores, in input order.
    pub scores: Vec<T>,
    /// Disposition of every detection, in input order.
    pub detections: Vec<Disposition<T>>,
    /// Whether each ground truth was matched.
    pub gt_matched: Vec<bool>,
}

impl<T: Scalar> MatchLedger<T> {
    pub fn gt_count(&self) -> usize {
        self.gt_matched.len()
    }

    pub fn true_positives(&self) -> usize {
        self.detections
            .iter()
            .filter(|d| matches!(d, Disposition::TruePositive { .. }))
            .count()
    }
}

/// Heading accuracy `max(0, 1 − Δθ/π)`.
pub fn heading_weight<T: Scalar>(a: T, b: T) -> T {
    (T::one() - heading_error(a, b) / T::PI()).max(T::zero())
}

/// Greedy matching of one frame with 3D IoU.
pub fn match_frame<T: Scalar>(dets: &[Box3D<T>], gts: &[Box3D<T>], iou_thr: T) -> MatchLedger<T> {
    match_frame_with(dets, gts, iou_thr, IouKind::ThreeD)
}

/// Detections in descending score (ties by index) each take the unmatched
/// ground truth of highest IoU at or above `iou_thr`.
pub fn match_frame_with<T: Scalar>(dets: &[Box3D<T>], gts: &[Box3D<T>], iou_thr: T, kind: IouKind) -> MatchLedger<T> {
    let mut gt_matched = vec![false; gts.len()];
    let mut detections = vec![Disposition::FalsePositive; dets.len()];
    for d in crate::ensemble::score_order(dets) {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let v = iou(kind, &dets[d], gt);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            detections[d] = Disposition::TruePositive {
                gt_index: g,
                heading_weight: heading_weight(dets[d].heading, gts[g].heading),
            };
        }
    }
    MatchLedger {
        scores: dets.iter().map(|b| b.score).collect(),
        detections,
        gt_matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint<T> {
    pub score: T,
    pub precision: T,
    pub recall: T,
    pub precision_h: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult<T> {
    pub ap: T,
    pub aph: T,
    /// Raw (uninterpolated) curve, one point per detection in score order.
    pub curve: Vec<PrPoint<T>>,
    pub gt_count: usize,
    pub detection_count: usize,
    pub true_positives: usize,
}

/// AP and APH over ledgers pooled across frames.
///
/// Detections are ranked by descending score; equal scores keep ledger
/// order, then input order.
pub fn average_precision<T: Scalar>(ledgers: &[MatchLedger<T>], gt_count: usize) -> ApResult<T> {
    let mut ranked: Vec<(T, Disposition<T>)> = ledgers
        .iter()
        .flat_map(|l| l.scores.iter().copied().zip(l.detections.iter().copied()))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let n = ranked.len();
    if gt_count == 0 {
        let v = if n == 0 { T::one() } else { T::zero() };
        return ApResult {
            ap: v,
            aph: v,
            curve: Vec::new(),
            gt_count,
            detection_count: n,
            true_positives: 0,
        };
    }

    let total = T::from_count(gt_count);
    let (mut tp, mut tp_h) = (T::zero(), T::zero());
    let mut tp_count = 0usize;
    let mut curve = Vec::with_capacity(n);
    for (k, (score, disp)) in ranked.iter().enumerate() {
        if let Disposition::TruePositive { heading_weight, .. } = disp {
            tp = tp + T::one();
            tp_h = tp_h + *heading_weight;
            tp_count += 1;
        }
        let seen = T::from_count(k + 1);
        let precision = tp / seen;
        curve.push(PrPoint {
            score: *score,
            precision,
            recall: tp / total,
            precision_h: (tp_h / seen).min(precision),
        });
    }

    let mut ap = T::zero();
    let mut aph = T::zero();
    let (mut env, mut env_h) = (T::zero(), T::zero());
    for k in (0..n).rev() {
        env = env.max(curve[k].precision);
        env_h = env_h.max(curve[k].precision_h);
        let prev_recall = if k == 0 { T::zero() } else { curve[k - 1].recall };
        let dr = curve[k].recall - prev_recall;
        ap = ap + dr * env;
        aph = aph + dr * env_h;
    }
    ApResult {
        ap,
        aph,
        curve,
        gt_count,
        detection_count: n,
        true_positives: tp_count,
    }
}

/// Difficulty of a ground-truth box: its label if present, otherwise 2 for
/// boxes with at most [`SPARSE_POINT_LIMIT`] points, otherwise 1.
pub fn effective_difficulty<T>(gt: &Box3D<T>) -> u8 {
    match (gt.difficulty, gt.num_points) {
        (Some(d), _) => d,
        (None, Some(n)) if n <= SPARSE_POINT_LIMIT => 2,
        _ => 1,
    }
}

/// L1 keeps difficulty-1 boxes; L2 keeps everything.
pub fn split_difficulty<T: Clone>(gts: &[Box3D<T>], level: DifficultyLevel) -> Vec<Box3D<T>> {
    gts.iter()
        .filter(|g| level == DifficultyLevel::L2 || effective_difficulty(g) == 1)
        .cloned()
        .collect()
}

/// Per-frame `(detections, ground truth)` pair for one class.
pub type FramePair<'a, T> = (&'a [Box3D<T>], &'a [Box3D<T>]);

/// Matches every frame and integrates AP/APH.
pub fn evaluate_detection<T: Scalar>(frames: &[FramePair<'_, T>], iou_thr: T, kind: IouKind) -> ApResult<T> {
    let ledgers: Vec<MatchLedger<T>> = frames
        .iter()
        .map(|(dets, gts)| match_frame_with(dets, gts, iou_thr, kind))
        .collect();
    let gt_count = frames.iter().map(|(_, g)| g.len()).sum();
    average_precision(&ledgers, gt_count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotSummary {
    pub mota: f64,
    pub motp: f64,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub matches: usize,
    pub gt_total: usize,
}

/// CLEAR-MOT accuracy and precision over one sequence of one class.
///
/// Correspondences from the previous frame are kept while still valid; the
/// rest are solved by Hungarian matching on `1 − IoU` gated at `iou_thr`.
/// MOTP is the mean `1 − IoU` over matches.
pub fn mota_motp<T: Scalar>(tracked: &[Vec<Box3D<T>>], gt: &[Vec<Box3D<T>>], iou_thr: T) -> Result<MotSummary> {
    mota_motp_with(tracked, gt, iou_thr, IouKind::ThreeD)
}

pub fn mota_motp_with<T: Scalar>(
    tracked: &[Vec<Box3D<T>>],
    gt: &[Vec<Box3D<T>>],
    iou_thr: T,
    kind: IouKind,
) -> Result<MotSummary> {
    if tracked.len() != gt.len() {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {} tracked frames vs {} ground-truth frames",
            tracked.len(),
            gt.len()
        )));
    }
    let ids = |boxes: &[Box3D<T>], what: &str| -> Result<Vec<u64>> {
        boxes
            .iter()
            .map(|b| b.track_id.ok_or_else(|| Error::invalid(format!("{what} box without track id"))))
            .collect()
    };

    // gt id → hypothesis id of the current correspondence / of the last match ever.
    let mut current: HashMap<u64, u64> = HashMap::new();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let (mut fp, mut fn_, mut ids_sw, mut matches, mut gt_total) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut dissimilarity = 0f64;

    for (hyps, gts) in tracked.iter().zip(gt) {
        let gt_ids = ids(gts, "ground-truth")?;
        let hyp_ids = ids(hyps, "tracked")?;
        gt_total += gts.len();
        let mut gt_taken = vec![false; gts.len()];
        let mut hyp_taken = vec![false; hyps.len()];
        let mut pairs: Vec<(usize, usize, T)> = Vec::new();

        for (g, gid) in gt_ids.iter().enumerate() {
            let Some(hid) = current.get(gid) else { continue };
            if let Some(h) = hyp_ids.iter().position(|x| x == hid) {
                let v = iou(kind, &gts[g], &hyps[h]);
                if !hyp_taken[h] && v >= iou_thr {
                    gt_taken[g] = true;
                    hyp_taken[h] = true;
                    pairs.push((g, h, v));
                }
            }
        }

        let free_g: Vec<usize> = (0..gts.len()).filter(|&g| !gt_taken[g]).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&h| !hyp_taken[h]).collect();
        let ious: Vec<Vec<T>> = free_g
            .iter()
            .map(|&g| free_h.iter().map(|&h| iou(kind, &gts[g], &hyps[h])).collect())
            .collect();
        // Pairs under the gate are priced out so they never displace a valid one.
        let cost: Vec<Vec<T>> = ious
            .iter()
            .map(|row| row.iter().map(|&v| if v >= iou_thr { T::one() - v } else { T::lit(2.0) }).collect())
            .collect();
        for (a, b) in hungarian(&cost) {
            let v = ious[a][b];
            if v >= iou_thr {
                pairs.push((free_g[a], free_h[b], v));
            }
        }

        current.clear();
        for &(g, h, v) in &pairs {
            let (gid, hid) = (gt_ids[g], hyp_ids[h]);
            if last_match.get(&gid).is_some_and(|&prev| prev != hid) {
                ids_sw += 1;
            }
            last_match.insert(gid, hid);
            current.insert(gid, hid);
            dissimilarity += 1.0 - v.as_f64();
        }
        matches += pairs.len();
        fp += hyps.len() - pairs.len();
        fn_ += gts.len() - pairs.len();
    }

    if gt_total == 0 {
        return Err(Error::Undefined("MOTA needs at least one ground-truth box".into()));
    }
    Ok(MotSummary {
        mota: 1.0 - (fn_ + fp + ids_sw) as f64 / gt_total as f64,
        motp: if matches == 0 { 0.0 } else { dissimilarity / matches as f64 },
        false_positives: fp,
        misses: fn_,
        id_switches: ids_sw,
        matches,
        gt_total,
    })
}

/// MOTA from raw counts.
pub fn mota_from_counts(gt_total: usize, misses: usize, false_positives: usize, id_switches: usize) -> Result<f64> {
    if gt_total == 0 {
        return Err(Error::Undefined("MOTA needs at least one ground-truth box".into()));
    }
    Ok(1.0 - (misses + false_positives + id_switches) as f64 / gt_total as f64)
}
