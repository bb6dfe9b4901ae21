//! The JSON configuration document: one section per pipeline stage.
//!
//! Every field has a default, so `{}` is a complete configuration and
//! `Config::default()` serializes to the full set of defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assigner::DEFAULT_TOP_K;
use crate::ensemble::ClassThresholds;
use crate::error::{Error, Result};
use crate::geometry::IouKind;
use crate::metrics::EvalConfig;
use crate::pointcloud::{RangeSpec, DEFAULT_FRAME_DELTA};
use crate::tracker::TrackerConfig;
use crate::voxelizer::VoxelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pointcloud: PointCloudConfig,
    pub voxelizer: VoxelConfig<f64>,
    pub assigner: AssignerConfig,
    pub ensemble: EnsembleConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointCloudConfig {
    pub range: RangeSpec<f64>,
    /// Seconds between the current and the previous frame.
    pub frame_delta: f64,
}

impl Default for PointCloudConfig {
    fn default() -> Self {
        PointCloudConfig {
            range: RangeSpec::default(),
            frame_delta: DEFAULT_FRAME_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignerConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub top_k: usize,
}

impl Default for AssignerConfig {
    fn default() -> Self {
        AssignerConfig {
            pos_iou: 0.6,
            neg_iou: 0.45,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub nms_iou: ClassThresholds<f64>,
    pub iou_kind: IouKind,
    pub vote_iou: f64,
    pub soft_nms_sigma: f64,
    pub soft_nms_score_floor: f64,
    /// Candidate score weights for the greedy ensemble.
    pub weight_grid: Vec<f64>,
    /// The greedy ensemble stops once a step improves AP by less than this.
    pub min_improvement: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            nms_iou: ClassThresholds::default(),
            iou_kind: IouKind::Bev,
            vote_iou: 0.55,
            soft_nms_sigma: 0.5,
            soft_nms_score_floor: 0.001,
            weight_grid: (1..=10).map(|i| f64::from(i) / 10.0).collect(),
            min_improvement: 0.001,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pointcloud.range.validate()?;
        if !(self.pointcloud.frame_delta > 0.0) {
            return Err(Error::invalid("pointcloud.frame_delta must be positive"));
        }
        self.voxelizer.validate()?;
        self.tracker.validate()?;
        let e = &self.ensemble;
        if e.weight_grid.is_empty() || e.weight_grid.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::invalid("ensemble.weight_grid must be non-empty with weights in (0, 1]"));
        }
        if !(e.soft_nms_sigma > 0.0) {
            return Err(Error::invalid("ensemble.soft_nms_sigma must be positive"));
        }
        let a = &self.assigner;
        if !(0.0 <= a.neg_iou && a.neg_iou <= a.pos_iou && a.pos_iou <= 1.0) || a.top_k == 0 {
            return Err(Error::invalid("assigner thresholds or top_k out of range"));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
