//! Anchor-to-ground-truth target assignment.
//!
//! Two schemes share one result type: a fixed positive/negative IoU band
//! with a best-anchor rescue, and an adaptive scheme where every ground
//! truth derives its own positive threshold from the IoU statistics of its
//! `k` nearest anchors. All IoUs are bird's-eye-view and every tie goes to
//! the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, Box3D};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignored,
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorLabel::Positive(_))
    }

    pub fn gt_index(&self) -> Option<usize> {
        match self {
            AnchorLabel::Positive(g) => Some(*g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    pub labels: Vec<AnchorLabel>,
    /// Per-gt threshold, present for adaptive assignment only.
    pub adaptive_thresholds: Option<Vec<T>>,
}

impl<T> AssignmentResult<T> {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(a, l)| l.gt_index().map(|g| (a, g)))
    }
}

/// Default number of candidate anchors per ground truth.
pub const DEFAULT_TOP_K: usize = 9;

fn iou_matrix<T: Scalar>(anchors: &[Box3D<T>], gts: &[Box3D<T>]) -> Vec<Vec<T>> {
    anchors
        .iter()
        .map(|a| gts.iter().map(|g| bev_iou(a, g)).collect())
        .collect()
}

/// Index and value of the first maximum.
fn first_max<T: Scalar>(values: impl Iterator<Item = T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

pub fn fixed_assign<T: Scalar>(
    anchors: &[Box3D<T>],
    gts: &[Box3D<T>],
    pos_thr: T,
    neg_thr: T,
) -> Result<AssignmentResult<T>> {
    if !(T::zero() <= neg_thr && neg_thr <= pos_thr && pos_thr <= T::one()) {
        return Err(Error::invalid(format!(
            "need 0 <= neg_thr <= pos_thr <= 1, got neg {neg_thr}, pos {pos_thr}"
        )));
    }
    let ious = iou_matrix(anchors, gts);
    let mut labels: Vec<AnchorLabel> = ious
        .iter()
        .map(|row| match first_max(row.iter().copied()) {
            Some((g, v)) if v >= pos_thr => AnchorLabel::Positive(g),
            Some((_, v)) if v >= neg_thr => AnchorLabel::Ignored,
            _ => AnchorLabel::Negative,
        })
        .collect();

    // Best-anchor rescue: each gt claims its highest-IoU anchor. When several
    // gts claim the same anchor, the one with the higher IoU keeps it.
    let mut claims: Vec<Option<(usize, T)>> = vec![None; anchors.len()];
    for g in 0..gts.len() {
        if let Some((a, v)) = first_max(ious.iter().map(|row| row[g])) {
            if v > T::zero() && claims[a].is_none_or(|(_, cur)| v > cur) {
                claims[a] = Some((g, v));
            }
        }
    }
    for (label, claim) in labels.iter_mut().zip(claims) {
        if let Some((g, _)) = claim {
            *label = AnchorLabel::Positive(g);
        }
    }

    Ok(AssignmentResult {
        labels,
        adaptive_thresholds: None,
    })
}

/// Mean plus population standard deviation.
pub fn adaptive_threshold<T: Scalar>(ious: &[T]) -> T {
    if ious.is_empty() {
        return T::zero();
    }
    let n = T::from_count(ious.len());
    let mean = ious.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let var = ious.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
    mean + var.sqrt()
}

/// Indices of the `k` anchors nearest to `gt` in BEV center distance.
pub fn nearest_anchors<T: Scalar>(anchors: &[Box3D<T>], gt: &Box3D<T>, k: usize) -> Vec<usize> {
    let mut order: Vec<(T, usize)> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| (a.bev_center_distance(gt), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn adaptive_assign<T: Scalar>(anchors: &[Box3D<T>], gts: &[Box3D<T>], k: usize) -> Result<AssignmentResult<T>> {
    if k == 0 {
        return Err(Error::invalid("candidate count k must be at least 1"));
    }
    if anchors.is_empty() {
        return Err(Error::invalid("anchor list is empty"));
    }
    // Best (gt, IoU) so far for every anchor.
    let mut best: Vec<Option<(usize, T)>> = vec![None; anchors.len()];
    let mut thresholds = Vec::with_capacity(gts.len());

    for (g, gt) in gts.iter().enumerate() {
        let candidates = nearest_anchors(anchors, gt, k);
        let ious: Vec<T> = candidates.iter().map(|&a| bev_iou(&anchors[a], gt)).collect();
        let thr = adaptive_threshold(&ious);
        thresholds.push(thr);
        for (&a, &v) in candidates.iter().zip(&ious) {
            let anchor = &anchors[a];
            if v >= thr && gt.contains_bev(anchor.cx, anchor.cy) && best[a].is_none_or(|(_, cur)| v > cur) {
                best[a] = Some((g, v));
            }
        }
    }

    let labels = best
        .into_iter()
        .map(|b| match b {
            Some((g, _)) => AnchorLabel::Positive(g),
            None => AnchorLabel::Negative,
        })
        .collect();
    Ok(AssignmentResult {
        labels,
        adaptive_thresholds: Some(thresholds),
    })
}
