//! Oriented 3D boxes, angle arithmetic and rotated IoU.
//!
//! Boxes are center-based: the vertical extent is `[cz - h/2, cz + h/2]`.
//! Rotated footprint intersections are computed exactly by convex polygon
//! clipping (Sutherland–Hodgman) followed by the shoelace formula.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Intersections below this area (m²) or volume (m³) count as empty.
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Vehicle, Label::Pedestrian, Label::Cyclist];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Vehicle => "VEHICLE",
            Label::Pedestrian => "PEDESTRIAN",
            Label::Cyclist => "CYCLIST",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VEHICLE" => Ok(Label::Vehicle),
            "PEDESTRIAN" => Ok(Label::Pedestrian),
            "CYCLIST" => Ok(Label::Cyclist),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Which overlap measure a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IouKind {
    /// Rotated footprint IoU in the x-y plane.
    #[default]
    #[serde(rename = "bev")]
    Bev,
    /// Footprint intersection times vertical overlap, over union of volumes.
    #[serde(rename = "3d")]
    ThreeD,
}

/// Oriented 3D bounding box.
///
/// `length` runs along the heading direction, `width` across it, `height`
/// along z. `heading` is counterclockwise about +z with 0 along +x and is
/// kept in `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Box3D<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub length: T,
    pub width: T,
    pub height: T,
    pub heading: T,
    pub score: T,
    pub label: Label,
    pub track_id: Option<u64>,
    pub difficulty: Option<u8>,
    pub num_points: Option<u32>,
    pub source_id: Option<u32>,
}

impl<T: Scalar> Box3D<T> {
    /// Vehicle box with score 1. The heading is wrapped into `(-π, π]`.
    pub fn new(cx: T, cy: T, cz: T, length: T, width: T, height: T, heading: T) -> Self {
        Box3D {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            heading: normalize_angle(heading),
            score: T::one(),
            label: Label::Vehicle,
            track_id: None,
            difficulty: None,
            num_points: None,
            source_id: None,
        }
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = score;
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_track_id(mut self, id: u64) -> Self {
        self.track_id = Some(id);
        self
    }

    pub fn with_difficulty(mut self, difficulty: u8) -> Self {
        self.difficulty = Some(difficulty);
        self
    }

    pub fn with_heading(mut self, heading: T) -> Self {
        self.heading = normalize_angle(heading);
        self
    }

    /// Checks dimensions, heading range, score range and finiteness.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cx", self.cx),
            ("cy", self.cy),
            ("cz", self.cz),
            ("l", self.length),
            ("w", self.width),
            ("h", self.height),
            ("heading", self.heading),
            ("score", self.score),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} is not finite")));
            }
        }
        if self.length <= T::zero() || self.width <= T::zero() || self.height <= T::zero() {
            return Err(Error::invalid(format!(
                "box dimensions must be positive (l={}, w={}, h={})",
                self.length, self.width, self.height
            )));
        }
        if self.heading <= -T::PI() || self.heading > T::PI() {
            return Err(Error::invalid(format!(
                "heading {} outside (-pi, pi]",
                self.heading
            )));
        }
        if self.score < T::zero() || self.score > T::one() {
            return Err(Error::invalid(format!("score {} outside [0, 1]", self.score)));
        }
        if let Some(d) = self.difficulty {
            if d != 1 && d != 2 {
                return Err(Error::invalid(format!("difficulty {d} not in {{1, 2}}")));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> T {
        self.length * self.width
    }

    pub fn volume(&self) -> T {
        self.length * self.width * self.height
    }

    pub fn z_min(&self) -> T {
        self.cz - self.height * T::half()
    }

    pub fn z_max(&self) -> T {
        self.cz + self.height * T::half()
    }

    /// Footprint corners in counterclockwise order.
    pub fn corners(&self) -> [[T; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.length * T::half();
        let hw = self.width * T::half();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| [self.cx + lx * c - ly * s, self.cy + lx * s + ly * c])
    }

    /// Whether `(x, y)` lies in the rotated footprint (boundary included).
    pub fn contains_bev(&self, x: T, y: T) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let lx = dx * c + dy * s;
        let ly = -dx * s + dy * c;
        lx.abs() <= self.length * T::half() && ly.abs() <= self.width * T::half()
    }

    pub fn bev_center_distance(&self, other: &Self) -> T {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    fn bev_radius(&self) -> T {
        self.length.hypot(self.width) * T::half()
    }
}

/// Wraps an angle into `(-π, π]`, rejecting non-finite input.
pub fn wrap_angle<T: Scalar>(theta: T) -> Result<T> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("angle {theta} is not finite")));
    }
    Ok(normalize_angle(theta))
}

/// Infallible form of [`wrap_angle`]; NaN in, NaN out.
pub fn normalize_angle<T: Scalar>(theta: T) -> T {
    let pi = T::PI();
    if theta > -pi && theta <= pi {
        return theta;
    }
    let two_pi = T::TAU();
    let mut r = theta - two_pi * (theta / two_pi).floor();
    if r >= two_pi {
        r = r - two_pi;
    }
    // r is in [0, 2π); anything within rounding of π is the representative π.
    if r > pi {
        if r - pi <= T::epsilon() * two_pi * T::lit(4.0) {
            r = pi;
        } else {
            r = r - two_pi;
        }
    }
    r
}

/// Smallest absolute angular difference, in `[0, π]`.
pub fn heading_error<T: Scalar>(a: T, b: T) -> T {
    normalize_angle(a - b).abs()
}

/// Area of a simple polygon (shoelace).
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc = acc + (p[0] * q[1] - q[0] * p[1]);
    }
    acc.abs() * T::half()
}

/// Clips `subject` against the convex counterclockwise polygon `clip`.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [T; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            if cur_side >= T::zero() {
                if prev_side < T::zero() {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= T::zero() {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn intersect<T: Scalar>(p: [T; 2], q: [T; 2], sp: T, sq: T) -> [T; 2] {
    let t = sp / (sp - sq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Area of the intersection of the two rotated footprints.
pub fn bev_intersection_area<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    if a.bev_center_distance(b) > a.bev_radius() + b.bev_radius() {
        return T::zero();
    }
    // Coincident footprints are exact; clipping would lose a few ulps.
    if (a.cx, a.cy, a.length, a.width, a.heading) == (b.cx, b.cy, b.length, b.width, b.heading) {
        return a.area();
    }
    let area = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    if area < T::lit(DEGENERATE_AREA) {
        T::zero()
    } else {
        area
    }
}

pub fn bev_iou<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let inter = bev_intersection_area(a, b);
    if inter == T::zero() {
        return T::zero();
    }
    ratio(inter, a.area() + b.area() - inter)
}

pub fn iou3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= T::zero() {
        return T::zero();
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter < T::lit(DEGENERATE_AREA) {
        return T::zero();
    }
    ratio(inter, a.volume() + b.volume() - inter)
}

pub fn iou<T: Scalar>(kind: IouKind, a: &Box3D<T>, b: &Box3D<T>) -> T {
    match kind {
        IouKind::Bev => bev_iou(a, b),
        IouKind::ThreeD => iou3d(a, b),
    }
}

fn ratio<T: Scalar>(inter: T, union: T) -> T {
    if union < T::lit(DEGENERATE_AREA) {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}
