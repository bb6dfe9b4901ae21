//! Point clouds with a time-offset channel, and the global augmentations.
//!
//! Every operation preserves point order. Previous-frame points passed to
//! [`concat_frames`] must already be expressed in the current frame's
//! coordinate system; ego-motion compensation is the caller's job.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D};
use crate::scalar::Scalar;

/// Time gap between consecutive frames at 10 Hz.
pub const DEFAULT_FRAME_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimedPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub intensity: T,
    /// Seconds into the past; 0 for the current frame.
    pub t: T,
}

impl<T: Scalar> TimedPoint<T> {
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        TimedPoint {
            x,
            y,
            z,
            intensity,
            t: T::zero(),
        }
    }

    pub fn xyz(x: T, y: T, z: T) -> Self {
        Self::new(x, y, z, T::zero())
    }

    pub fn with_t(mut self, t: T) -> Self {
        self.t = t;
        self
    }

    pub fn features(&self) -> [T; 5] {
        [self.x, self.y, self.z, self.intensity, self.t]
    }

    pub fn is_valid(&self) -> bool {
        self.features().iter().all(|v| v.is_finite())
            && self.intensity >= T::zero()
            && self.t >= T::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    pub points: Vec<TimedPoint<T>>,
    pub frame_id: String,
    pub timestamp: T,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<TimedPoint<T>>) -> Self {
        PointCloud {
            points,
            frame_id: String::new(),
            timestamp: T::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn map_points(&self, f: impl Fn(&TimedPoint<T>) -> TimedPoint<T>) -> Self {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            frame_id: self.frame_id.clone(),
            timestamp: self.timestamp,
        }
    }
}

/// Axis-aligned crop region with closed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
    pub z_min: T,
    pub z_max: T,
}

impl<T: Scalar> Default for RangeSpec<T> {
    /// x, y in [-75.2, 75.2] m and z in [-2, 4] m.
    fn default() -> Self {
        RangeSpec {
            x_min: T::lit(-75.2),
            x_max: T::lit(75.2),
            y_min: T::lit(-75.2),
            y_max: T::lit(75.2),
            z_min: T::lit(-2.0),
            z_max: T::lit(4.0),
        }
    }
}

impl<T: Scalar> RangeSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("x", self.x_min, self.x_max),
            ("y", self.y_min, self.y_max),
            ("z", self.z_min, self.z_max),
        ];
        for (axis, lo, hi) in axes {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("range on {axis}: need min < max, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &TimedPoint<T>) -> bool {
        p.x >= self.x_min
            && p.x <= self.x_max
            && p.y >= self.y_min
            && p.y <= self.y_max
            && p.z >= self.z_min
            && p.z <= self.z_max
    }

    pub fn mins(&self) -> [T; 3] {
        [self.x_min, self.y_min, self.z_min]
    }

    pub fn extents(&self) -> [T; 3] {
        [
            self.x_max - self.x_min,
            self.y_max - self.y_min,
            self.z_max - self.z_min,
        ]
    }
}

/// Stacks the current frame (t = 0) and the previous frame (t = `delta`).
pub fn concat_frames<T: Scalar>(
    current: &PointCloud<T>,
    previous: &PointCloud<T>,
    delta: T,
) -> Result<PointCloud<T>> {
    if !(delta > T::zero() && delta.is_finite()) {
        return Err(Error::invalid(format!("frame delta must be positive, got {delta}")));
    }
    let mut points = Vec::with_capacity(current.len() + previous.len());
    points.extend(current.points.iter().map(|p| p.with_t(T::zero())));
    points.extend(previous.points.iter().map(|p| p.with_t(delta)));
    Ok(PointCloud {
        points,
        frame_id: current.frame_id.clone(),
        timestamp: current.timestamp,
    })
}

pub fn crop_range<T: Scalar>(cloud: &PointCloud<T>, range: &RangeSpec<T>) -> PointCloud<T> {
    PointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| range.contains(p))
            .copied()
            .collect(),
        frame_id: cloud.frame_id.clone(),
        timestamp: cloud.timestamp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipAxis {
    /// Mirror across the x-axis: y → −y.
    X,
    /// Mirror across the y-axis: x → −x.
    Y,
}

pub fn flip<T: Scalar>(
    cloud: &PointCloud<T>,
    boxes: &[Box3D<T>],
    axis: FlipAxis,
) -> (PointCloud<T>, Vec<Box3D<T>>) {
    let out_cloud = cloud.map_points(|p| match axis {
        FlipAxis::X => TimedPoint { y: -p.y, ..*p },
        FlipAxis::Y => TimedPoint { x: -p.x, ..*p },
    });
    let out_boxes = boxes
        .iter()
        .map(|b| {
            let mut o = b.clone();
            match axis {
                FlipAxis::X => {
                    o.cy = -b.cy;
                    o.heading = normalize_angle(-b.heading);
                }
                FlipAxis::Y => {
                    o.cx = -b.cx;
                    o.heading = normalize_angle(T::PI() - b.heading);
                }
            }
            o
        })
        .collect();
    (out_cloud, out_boxes)
}

pub fn global_scale<T: Scalar>(
    cloud: &PointCloud<T>,
    boxes: &[Box3D<T>],
    factor: T,
) -> Result<(PointCloud<T>, Vec<Box3D<T>>)> {
    if !(factor > T::zero() && factor.is_finite()) {
        return Err(Error::invalid(format!("scale factor must be positive, got {factor}")));
    }
    let out_cloud = cloud.map_points(|p| TimedPoint {
        x: p.x * factor,
        y: p.y * factor,
        z: p.z * factor,
        ..*p
    });
    let out_boxes = boxes
        .iter()
        .map(|b| Box3D {
            cx: b.cx * factor,
            cy: b.cy * factor,
            cz: b.cz * factor,
            length: b.length * factor,
            width: b.width * factor,
            height: b.height * factor,
            ..b.clone()
        })
        .collect();
    Ok((out_cloud, out_boxes))
}

/// Rotates about +z by `angle` radians.
pub fn global_rotate<T: Scalar>(
    cloud: &PointCloud<T>,
    boxes: &[Box3D<T>],
    angle: T,
) -> (PointCloud<T>, Vec<Box3D<T>>) {
    let (s, c) = angle.sin_cos();
    let out_cloud = cloud.map_points(|p| TimedPoint {
        x: p.x * c - p.y * s,
        y: p.x * s + p.y * c,
        ..*p
    });
    let out_boxes = boxes
        .iter()
        .map(|b| Box3D {
            cx: b.cx * c - b.cy * s,
            cy: b.cx * s + b.cy * c,
            heading: normalize_angle(b.heading + angle),
            ..b.clone()
        })
        .collect();
    (out_cloud, out_boxes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation<T> {
    pub flip_x: bool,
    pub flip_y: bool,
    pub scale: T,
    pub angle: T,
}

/// Draws flips with probability 0.5, a scale in [0.95, 1.05] and a rotation
/// in [−π/4, π/4], deterministically from `seed`.
pub fn sample_augmentation<T: Scalar>(seed: u64) -> Augmentation<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip_x = rng.random_bool(0.5);
    let flip_y = rng.random_bool(0.5);
    let scale = rng.random_range(0.95..=1.05);
    let quarter = std::f64::consts::FRAC_PI_4;
    let angle = rng.random_range(-quarter..=quarter);
    Augmentation {
        flip_x,
        flip_y,
        scale: T::lit(scale),
        angle: T::lit(angle),
    }
}

/// Applies flips, then scaling, then rotation.
pub fn apply_augmentation<T: Scalar>(
    cloud: &PointCloud<T>,
    boxes: &[Box3D<T>],
    aug: &Augmentation<T>,
) -> Result<(PointCloud<T>, Vec<Box3D<T>>)> {
    let mut cur = (cloud.clone(), boxes.to_vec());
    if aug.flip_x {
        cur = flip(&cur.0, &cur.1, FlipAxis::X);
    }
    if aug.flip_y {
        cur = flip(&cur.0, &cur.1, FlipAxis::Y);
    }
    cur = global_scale(&cur.0, &cur.1, aug.scale)?;
    Ok(global_rotate(&cur.0, &cur.1, aug.angle))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud<f64> {
        PointCloud::new(pts.iter().map(|&(x, y, z)| TimedPoint::xyz(x, y, z)).collect())
    }

    fn unit_box(heading: f64) -> Box3D<f64> {
        Box3D::new(1.0, 2.0, 0.0, 4.0, 2.0, 1.5, heading)
    }

    #[test]
    fn concat_examples() {
        let out = concat_frames(&cloud(&[(1., 2., 3.)]), &cloud(&[(4., 5., 6.)]), DEFAULT_FRAME_DELTA).unwrap();
        assert_eq!(
            out.points,
            vec![
                TimedPoint::xyz(1., 2., 3.),
                TimedPoint::xyz(4., 5., 6.).with_t(0.1)
            ]
        );
        let out = concat_frames(&cloud(&[(1., 2., 3.)]), &cloud(&[]), 0.1).unwrap();
        assert_eq!(out.points, vec![TimedPoint::xyz(1., 2., 3.)]);
        let out = concat_frames(&cloud(&[]), &cloud(&[(4., 5., 6.)]), 0.1).unwrap();
        assert_eq!(out.points, vec![TimedPoint::xyz(4., 5., 6.).with_t(0.1)]);
    }

    #[test]
    fn concat_rejects_non_positive_delta() {
        assert!(concat_frames(&cloud(&[]), &cloud(&[]), 0.0).is_err());
        assert!(concat_frames(&cloud(&[]), &cloud(&[]), -0.1).is_err());
        assert!(concat_frames(&cloud(&[]), &cloud(&[]), f64::NAN).is_err());
    }

    #[test]
    fn crop_examples() {
        let r = RangeSpec::default();
        let c = cloud(&[(0., 0., 0.), (75.2, 0., 0.), (76., 0., 0.), (0., 0., 4.0), (0., 0., -2.1)]);
        let out = crop_range(&c, &r);
        assert_eq!(out.points, cloud(&[(0., 0., 0.), (75.2, 0., 0.), (0., 0., 4.0)]).points);
    }

    #[test]
    fn range_validation() {
        let mut r: RangeSpec<f64> = RangeSpec::default();
        assert!(r.validate().is_ok());
        r.z_max = r.z_min;
        assert!(r.validate().is_err());
    }

    #[test]
    fn flip_examples() {
        let c = cloud(&[(1., 2., 3.)]);
        let (fc, fb) = flip(&c, &[unit_box(0.5)], FlipAxis::X);
        assert_eq!(fc.points[0], TimedPoint::xyz(1., -2., 3.));
        assert_abs_diff_eq!(fb[0].heading, -0.5);
        assert_eq!(fb[0].cy, -2.0);
        let (fc, fb) = flip(&c, &[unit_box(0.5)], FlipAxis::Y);
        assert_eq!(fc.points[0], TimedPoint::xyz(-1., 2., 3.));
        assert_abs_diff_eq!(fb[0].heading, PI - 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fb[0].heading, 2.6416, epsilon = 1e-4);
        assert_eq!(fb[0].length, 4.0);
    }

    #[test]
    fn scale_examples() {
        let c = cloud(&[(10., 0., 0.)]);
        let b = unit_box(0.3).with_score(0.7);
        let (sc, sb) = global_scale(&c, std::slice::from_ref(&b), 1.0).unwrap();
        assert_eq!(sc, c);
        assert_eq!(sb[0], b);
        let (_, sb) = global_scale(&c, std::slice::from_ref(&b), 2.0).unwrap();
        assert_eq!((sb[0].length, sb[0].cx, sb[0].heading, sb[0].score), (8.0, 2.0, 0.3, 0.7));
        let (sc, _) = global_scale(&c, &[], 0.95).unwrap();
        assert_abs_diff_eq!(sc.points[0].x, 9.5, epsilon = 1e-12);
        assert!(global_scale(&c, &[], 0.0).is_err());
        assert!(global_scale(&c, &[], -1.0).is_err());
    }

    #[test]
    fn rotate_examples() {
        let c = cloud(&[(1., 0., 0.)]);
        let (rc, _) = global_rotate(&c, &[], 0.0);
        assert_eq!(rc, c);
        let (rc, _) = global_rotate(&c, &[], FRAC_PI_2);
        assert_abs_diff_eq!(rc.points[0].x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rc.points[0].y, 1.0, epsilon = 1e-15);
        let (_, rb) = global_rotate(&c, &[unit_box(PI)], FRAC_PI_4);
        assert_abs_diff_eq!(rb[0].heading, -3.0 * PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let a: Augmentation<f64> = sample_augmentation(42);
        let b: Augmentation<f64> = sample_augmentation(42);
        assert_eq!(a, b);
        assert!((0.95..=1.05).contains(&a.scale));
        assert!(a.angle.abs() <= FRAC_PI_4);
    }

    #[test]
    fn augmentation_statistics() {
        let n = 100_000u64;
        let (mut scale_sum, mut flips) = (0.0, 0usize);
        for seed in 0..n {
            let a: Augmentation<f64> = sample_augmentation(seed);
            scale_sum += a.scale;
            flips += a.flip_x as usize;
        }
        let mean = scale_sum / n as f64;
        let freq = flips as f64 / n as f64;
        assert!((0.999..=1.001).contains(&mean), "scale mean {mean}");
        assert!((0.49..=0.51).contains(&freq), "flip_x frequency {freq}");
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud<f64>> {
        prop::collection::vec((-80.0..80.0f64, -80.0..80.0f64, -3.0..5.0f64, 0.0..1.0f64), 0..40)
            .prop_map(|v| PointCloud::new(v.into_iter().map(|(x, y, z, i)| TimedPoint::new(x, y, z, i)).collect()))
    }

    fn dist(a: &TimedPoint<f64>, b: &TimedPoint<f64>) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
    }

    proptest! {
        #[test]
        fn concat_additive(cur in arb_cloud(), prev in arb_cloud(), delta in 0.01..1.0f64) {
            let out = concat_frames(&cur, &prev, delta).unwrap();
            prop_assert_eq!(out.len(), cur.len() + prev.len());
            prop_assert!(out.points[..cur.len()].iter().all(|p| p.t == 0.0));
            prop_assert!(out.points[cur.len()..].iter().all(|p| p.t == delta));
        }

        #[test]
        fn crop_idempotent(c in arb_cloud()) {
            let r = RangeSpec::default();
            let once = crop_range(&c, &r);
            prop_assert_eq!(crop_range(&once, &r), once);
        }

        #[test]
        fn flip_involution(c in arb_cloud(), h in -PI..PI, axis in prop_oneof![Just(FlipAxis::X), Just(FlipAxis::Y)]) {
            let b = unit_box(h);
            let (c1, b1) = flip(&c, std::slice::from_ref(&b), axis);
            let (c2, b2) = flip(&c1, &b1, axis);
            for (p, q) in c.points.iter().zip(&c2.points) {
                prop_assert!(dist(p, q) < 1e-12);
            }
            prop_assert!((b2[0].cx - b.cx).abs() < 1e-12 && (b2[0].cy - b.cy).abs() < 1e-12);
            prop_assert!(crate::geometry::heading_error(b2[0].heading, b.heading) < 1e-12);
        }

        #[test]
        fn rotate_inverse(c in arb_cloud(), angle in -PI..PI, h in -PI..PI) {
            let b = unit_box(h);
            let (c1, b1) = global_rotate(&c, std::slice::from_ref(&b), angle);
            let (c2, b2) = global_rotate(&c1, &b1, -angle);
            for (p, q) in c.points.iter().zip(&c2.points) {
                prop_assert!(dist(p, q) < 1e-9);
            }
            prop_assert!((b2[0].cx - b.cx).abs() < 1e-9);
            prop_assert!(crate::geometry::heading_error(b2[0].heading, b.heading) < 1e-9);
        }

        #[test]
        fn distances_preserved(c in arb_cloud(), angle in -PI..PI, factor in 0.5..2.0f64) {
            let (f, _) = flip(&c, &[], FlipAxis::X);
            let (r, _) = global_rotate(&c, &[], angle);
            let (s, _) = global_scale(&c, &[], factor).unwrap();
            for i in 0..c.len() {
                for j in (i + 1)..c.len() {
                    let d = dist(&c.points[i], &c.points[j]);
                    prop_assert!((dist(&f.points[i], &f.points[j]) - d).abs() < 1e-9);
                    prop_assert!((dist(&r.points[i], &r.points[j]) - d).abs() < 1e-9);
                    prop_assert!((dist(&s.points[i], &s.points[j]) - factor * d).abs() < 1e-9);
                }
            }
        }
    }
}
