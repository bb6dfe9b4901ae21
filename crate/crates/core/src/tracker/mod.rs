//! Online 3D multi-object tracking.
//!
//! Each frame: predict every track, associate tracks and detections of the
//! same class by Hungarian matching on `1 − IoU3D`, correct matched tracks,
//! spawn tracks for leftover detections and retire tracks that have gone
//! unmatched for more than `max_age` frames.

mod hungarian;
mod kalman;

use serde::{Deserialize, Serialize};

pub use hungarian::{assignment_cost, hungarian, PAD_COST};
pub use kalman::{
    corrected_heading, predict, update, KalmanScalar, NoiseConfig, StateMatrix, StateVector, TrackState, OBS_DIM,
    STATE_DIM,
};

use crate::ensemble::DetectionSet;
use crate::error::{Error, Result};
use crate::geometry::{iou, Box3D, IouKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum IoU for an association to stand.
    pub iou_min: f64,
    /// Frames a track may go unmatched before it is deleted.
    pub max_age: u32,
    /// Updates needed before a track is reported (waived during the first
    /// `min_hits` frames of a sequence).
    pub min_hits: u32,
    pub iou_kind: IouKind,
    pub noise: NoiseConfig,
    /// Report the filtered state instead of the matched detection's box.
    pub report_filtered: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_min: 0.1,
            max_age: 2,
            min_hits: 3,
            iou_kind: IouKind::ThreeD,
            noise: NoiseConfig::default(),
            report_filtered: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(Error::invalid(format!("iou_min {} outside [0, 1]", self.iou_min)));
        }
        if self.max_age < 1 || self.min_hits < 1 {
            return Err(Error::invalid("max_age and min_hits must be at least 1"));
        }
        let n = &self.noise;
        let vars = [n.process_pose, n.process_velocity, n.measurement, n.initial_pose, n.initial_velocity];
        if vars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("noise variances must be finite and non-negative"));
        }
        if n.initial_pose <= 0.0 || n.initial_velocity <= 0.0 {
            return Err(Error::invalid("initial variances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track, detection)` index pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Matches predicted track boxes to detections. Pairs with different labels
/// or IoU below `iou_min` are never matched.
pub fn associate<T: Scalar>(tracks: &[Box3D<T>], detections: &[Box3D<T>], iou_min: T, kind: IouKind) -> Association {
    let ious: Vec<Vec<T>> = tracks
        .iter()
        .map(|t| {
            detections
                .iter()
                .map(|d| if t.label == d.label { iou(kind, t, d) } else { T::zero() })
                .collect()
        })
        .collect();
    let cost: Vec<Vec<T>> = ious.iter().map(|row| row.iter().map(|&v| T::one() - v).collect()).collect();

    let mut track_done = vec![false; tracks.len()];
    let mut det_done = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (t, d) in hungarian(&cost) {
        let v = ious[t][d];
        if v >= iou_min && v > T::zero() {
            matches.push((t, d));
            track_done[t] = true;
            det_done[d] = true;
        }
    }
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&t| !track_done[t]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&d| !det_done[d]).collect(),
    }
}

#[derive(Debug, Clone)]
struct Track<T: KalmanScalar> {
    state: TrackState<T>,
    last_detection: Box3D<T>,
}

/// Tracker for one sequence. Feed frames in temporal order.
#[derive(Debug, Clone)]
pub struct Tracker<T: KalmanScalar> {
    config: TrackerConfig,
    tracks: Vec<Track<T>>,
    next_id: u64,
    frame_count: u64,
    last_timestamp: Option<T>,
}

impl<T: KalmanScalar> Tracker<T> {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            tracks: Vec::new(),
            next_id: 0,
            frame_count: 0,
            last_timestamp: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live track states in creation order.
    pub fn tracks(&self) -> impl Iterator<Item = &TrackState<T>> {
        self.tracks.iter().map(|t| &t.state)
    }

    /// Processes one frame and returns the confirmed boxes it reports, each
    /// carrying its track id.
    pub fn step(&mut self, frame: &DetectionSet<T>) -> Result<Vec<Box3D<T>>> {
        if let Some(last) = self.last_timestamp {
            if frame.timestamp < last {
                return Err(Error::invalid(format!(
                    "frame {:?} at t={} arrives after t={}",
                    frame.frame_id, frame.timestamp, last
                )));
            }
        }
        self.last_timestamp = Some(frame.timestamp);
        self.frame_count += 1;
        let noise = self.config.noise;

        for t in &mut self.tracks {
            t.state = predict(&t.state, &noise);
        }
        let predicted: Vec<Box3D<T>> = self.tracks.iter().map(|t| t.state.to_box()).collect();
        let assoc = associate(&predicted, &frame.boxes, T::lit(self.config.iou_min), self.config.iou_kind);

        for &(ti, di) in &assoc.matches {
            let det = &frame.boxes[di];
            let track = &mut self.tracks[ti];
            track.state = update(&track.state, det, &noise);
            track.last_detection = det.clone();
        }
        for &di in &assoc.unmatched_detections {
            let det = &frame.boxes[di];
            let state = TrackState::from_detection(det, self.next_id, &noise);
            self.next_id += 1;
            self.tracks.push(Track {
                state,
                last_detection: det.clone(),
            });
        }

        let max_age = self.config.max_age;
        self.tracks.retain(|t| t.state.time_since_update <= max_age);

        let warmup = self.frame_count <= u64::from(self.config.min_hits);
        let reported = self
            .tracks
            .iter()
            .filter(|t| t.state.time_since_update == 0 && (t.state.hits >= self.config.min_hits || warmup))
            .map(|t| {
                let mut b = if self.config.report_filtered {
                    let mut b = t.state.to_box();
                    b.score = t.last_detection.score;
                    b
                } else {
                    t.last_detection.clone()
                };
                b.track_id = Some(t.state.id);
                b
            })
            .collect();
        Ok(reported)
    }
}

/// Runs a fresh tracker over a whole sequence.
pub fn track_sequence<T: KalmanScalar>(config: &TrackerConfig, frames: &[DetectionSet<T>]) -> Result<Vec<Vec<Box3D<T>>>> {
    let mut tracker = Tracker::new(config.clone())?;
    frames.iter().map(|f| tracker.step(f)).collect()
}
