//! Sparse voxelization in two flavours.
//!
//! *Hard* voxelization caps both the points kept per voxel and the number
//! of voxels, dropping the overflow in first-arrival order. *Dynamic*
//! voxelization keeps every in-range point. Both keep voxels in creation
//! order and points within a voxel in input order.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, RangeSpec, TimedPoint};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelCoord {
    pub fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelCoord { ix, iy, iz }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelConfig<T> {
    pub range: RangeSpec<T>,
    /// Edge lengths (vx, vy, vz) in meters.
    pub voxel_size: [T; 3],
    pub max_points_per_voxel: usize,
    pub max_voxels: usize,
}

impl<T: Scalar> Default for VoxelConfig<T> {
    fn default() -> Self {
        VoxelConfig {
            range: RangeSpec::default(),
            voxel_size: [T::lit(0.1), T::lit(0.1), T::lit(0.15)],
            max_points_per_voxel: 5,
            max_voxels: 150_000,
        }
    }
}

impl<T: Scalar> VoxelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        if self.voxel_size.iter().any(|v| !(*v > T::zero() && v.is_finite())) {
            return Err(Error::invalid("voxel edge lengths must be positive"));
        }
        if self.max_points_per_voxel == 0 || self.max_voxels == 0 {
            return Err(Error::invalid("voxel caps must be positive"));
        }
        self.grid_dims().map(|_| ())
    }

    /// Number of voxels along each axis, `ceil(extent / edge)`.
    pub fn grid_dims(&self) -> Result<[i32; 3]> {
        let ext = self.range.extents();
        let mut dims = [0i32; 3];
        for axis in 0..3 {
            let q = (ext[axis] / self.voxel_size[axis]).as_f64();
            // 150.4 / 0.1 is not exactly 1504 in binary floating point.
            let r = q.round();
            let n = if (q - r).abs() <= 1e-6 * r.max(1.0) { r } else { q.ceil() };
            if !(n >= 1.0 && n <= i32::MAX as f64) {
                return Err(Error::invalid(format!("grid dimension {n} does not fit in i32")));
            }
            dims[axis] = n as i32;
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelMode {
    Hard,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel<T> {
    pub points: Vec<TimedPoint<T>>,
    /// Positions of the kept points in the input cloud.
    pub indices: Vec<usize>,
    /// Mean of (x, y, z, intensity, t) over the kept points.
    pub mean: [T; 5],
}

impl<T: Scalar> Voxel<T> {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    fn with_first(p: TimedPoint<T>, index: usize) -> Self {
        Voxel {
            points: vec![p],
            indices: vec![index],
            mean: [T::zero(); 5],
        }
    }

    fn finalize(&mut self) {
        let mut sum = [T::zero(); 5];
        for p in &self.points {
            for (s, f) in sum.iter_mut().zip(p.features()) {
                *s = *s + f;
            }
        }
        let n = T::from_count(self.points.len());
        self.mean = sum.map(|s| s / n);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    pub mode: VoxelMode,
    /// Voxels in creation order.
    pub entries: IndexMap<VoxelCoord, Voxel<T>>,
    /// Points lost to a full voxel or a refused voxel (hard mode only).
    pub dropped_points: usize,
    /// Distinct voxels refused once `max_voxels` was reached (hard mode only).
    pub dropped_voxels: usize,
    /// Points outside the configured range; never stored in either mode.
    pub out_of_range: usize,
}

impl<T: Scalar> VoxelGrid<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.entries.values().map(Voxel::count).sum()
    }
}

/// Quantizes a point. `None` when it lies outside the closed crop range;
/// points on the upper boundary land in the last voxel.
pub fn voxel_index<T: Scalar>(p: &TimedPoint<T>, cfg: &VoxelConfig<T>) -> Option<VoxelCoord> {
    if !cfg.range.contains(p) {
        return None;
    }
    let dims = cfg.grid_dims().ok()?;
    Some(quantize(p, cfg, dims))
}

fn quantize<T: Scalar>(p: &TimedPoint<T>, cfg: &VoxelConfig<T>, dims: [i32; 3]) -> VoxelCoord {
    let mins = cfg.range.mins();
    let coords = [p.x, p.y, p.z];
    let mut idx = [0i32; 3];
    for axis in 0..3 {
        let raw = ((coords[axis] - mins[axis]) / cfg.voxel_size[axis]).floor();
        let raw = raw.to_i64().unwrap_or(0);
        idx[axis] = raw.clamp(0, (dims[axis] - 1) as i64) as i32;
    }
    VoxelCoord::new(idx[0], idx[1], idx[2])
}

pub fn voxelize_dynamic<T: Scalar>(cloud: &PointCloud<T>, cfg: &VoxelConfig<T>) -> Result<VoxelGrid<T>> {
    voxelize(cloud, cfg, VoxelMode::Dynamic)
}

pub fn voxelize_hard<T: Scalar>(cloud: &PointCloud<T>, cfg: &VoxelConfig<T>) -> Result<VoxelGrid<T>> {
    voxelize(cloud, cfg, VoxelMode::Hard)
}

pub fn voxelize<T: Scalar>(cloud: &PointCloud<T>, cfg: &VoxelConfig<T>, mode: VoxelMode) -> Result<VoxelGrid<T>> {
    cfg.validate()?;
    let dims = cfg.grid_dims()?;
    let (point_cap, voxel_cap) = match mode {
        VoxelMode::Hard => (cfg.max_points_per_voxel, cfg.max_voxels),
        VoxelMode::Dynamic => (usize::MAX, usize::MAX),
    };

    let mut entries: IndexMap<VoxelCoord, Voxel<T>> = IndexMap::new();
    let mut refused: std::collections::HashSet<VoxelCoord> = Default::default();
    let (mut dropped_points, mut out_of_range) = (0usize, 0usize);

    for (i, p) in cloud.points.iter().enumerate() {
        if !cfg.range.contains(p) {
            out_of_range += 1;
            continue;
        }
        let key = quantize(p, cfg, dims);
        if let Some(voxel) = entries.get_mut(&key) {
            if voxel.count() < point_cap {
                voxel.points.push(*p);
                voxel.indices.push(i);
            } else {
                dropped_points += 1;
            }
        } else if entries.len() < voxel_cap {
            entries.insert(key, Voxel::with_first(*p, i));
        } else {
            refused.insert(key);
            dropped_points += 1;
        }
    }
    entries.values_mut().for_each(Voxel::finalize);

    Ok(VoxelGrid {
        mode,
        entries,
        dropped_points,
        dropped_voxels: refused.len(),
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pt(x: f64, y: f64, z: f64) -> TimedPoint<f64> {
        TimedPoint::xyz(x, y, z)
    }

    #[test]
    fn default_dims() {
        let cfg: VoxelConfig<f64> = VoxelConfig::default();
        assert_eq!(cfg.grid_dims().unwrap(), [1504, 1504, 40]);
    }

    #[test]
    fn index_examples() {
        let cfg = VoxelConfig::default();
        assert_eq!(voxel_index(&pt(0.05, 0.05, 0.05), &cfg), Some(VoxelCoord::new(752, 752, 13)));
        assert_eq!(voxel_index(&pt(-75.2, -75.2, -2.0), &cfg), Some(VoxelCoord::new(0, 0, 0)));
        assert_eq!(voxel_index(&pt(76.0, 0.0, 0.0), &cfg), None);
        assert_eq!(voxel_index(&pt(75.2, 75.2, 4.0), &cfg), Some(VoxelCoord::new(1503, 1503, 39)));
    }

    #[test]
    fn dynamic_mean() {
        let cfg = VoxelConfig::default();
        let cloud = PointCloud::new(vec![
            TimedPoint::new(0.01, 0.01, 0.01, 0.2),
            TimedPoint::new(0.02, 0.03, 0.04, 0.4),
            TimedPoint::new(0.06, 0.05, 0.07, 0.9).with_t(0.1),
        ]);
        let grid = voxelize_dynamic(&cloud, &cfg).unwrap();
        assert_eq!(grid.len(), 1);
        let v = &grid.entries[0];
        assert_eq!(v.count(), 3);
        let expect: [f64; 5] = [0.03, 0.03, 0.04, 0.5, 0.1 / 3.0];
        for (m, e) in v.mean.iter().zip(expect) {
            assert!((m - e).abs() < 1e-12);
        }
        assert_eq!(grid.dropped_points, 0);
    }

    #[test]
    fn empty_cloud() {
        let grid = voxelize_dynamic(&PointCloud::<f64>::default(), &VoxelConfig::default()).unwrap();
        assert!(grid.is_empty());
        assert_eq!((grid.dropped_points, grid.dropped_voxels), (0, 0));
    }

    #[test]
    fn hard_point_cap() {
        let cfg = VoxelConfig {
            max_points_per_voxel: 2,
            ..VoxelConfig::default()
        };
        let cloud = PointCloud::new(vec![pt(0.01, 0.01, 0.01), pt(0.02, 0.02, 0.02), pt(0.03, 0.03, 0.03)]);
        let grid = voxelize_hard(&cloud, &cfg).unwrap();
        assert_eq!(grid.entries[0].count(), 2);
        assert_eq!(grid.entries[0].indices, vec![0, 1]);
        assert_eq!(grid.dropped_points, 1);
        assert_eq!(grid.dropped_voxels, 0);
    }

    #[test]
    fn hard_voxel_cap() {
        let cfg = VoxelConfig {
            max_voxels: 1,
            ..VoxelConfig::default()
        };
        let cloud = PointCloud::new(vec![pt(0.01, 0.01, 0.01), pt(5.0, 5.0, 1.0), pt(5.01, 5.01, 1.01), pt(0.02, 0.02, 0.02)]);
        let grid = voxelize_hard(&cloud, &cfg).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.entries[0].indices, vec![0, 3]);
        assert_eq!(grid.dropped_voxels, 1);
        assert_eq!(grid.dropped_points, 2);
    }

    #[test]
    fn out_of_range_not_dropped() {
        let cloud = PointCloud::new(vec![pt(100.0, 0.0, 0.0), pt(0.0, 0.0, 0.0)]);
        let grid = voxelize_dynamic(&cloud, &VoxelConfig::default()).unwrap();
        assert_eq!((grid.point_count(), grid.out_of_range, grid.dropped_points), (1, 1, 0));
    }

    #[test]
    fn invalid_config() {
        let cfg = VoxelConfig {
            voxel_size: [0.1, 0.0, 0.1],
            ..VoxelConfig::default()
        };
        assert!(voxelize_dynamic(&PointCloud::default(), &cfg).is_err());
        let cfg = VoxelConfig {
            voxel_size: [1e-12, 0.1, 0.1],
            ..VoxelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    TimedPoint::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-2.5..4.5),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn hard_subset_of_dynamic() {
        let cloud = random_cloud(7, 5000);
        let cfg = VoxelConfig {
            voxel_size: [0.5, 0.5, 0.5],
            max_points_per_voxel: 3,
            max_voxels: 500,
            ..VoxelConfig::default()
        };
        let hard = voxelize_hard(&cloud, &cfg).unwrap();
        let dynamic = voxelize_dynamic(&cloud, &cfg).unwrap();
        for (key, v) in &hard.entries {
            let d = &dynamic.entries[key];
            assert!(v.indices.iter().all(|i| d.indices.contains(i)));
        }
        assert_eq!(hard.point_count() + hard.dropped_points, dynamic.point_count());
        for v in hard.entries.values() {
            for c in 0..5 {
                let sum: f64 = v.points.iter().map(|p| p.features()[c]).sum();
                assert!((sum - v.mean[c] * v.count() as f64).abs() <= 1e-6 * sum.abs().max(1.0));
            }
        }
    }
}
