//! Constant-velocity Kalman filter over a 10-dimensional box state
//! `(cx, cy, cz, heading, l, w, h, vx, vy, vz)`.
//!
//! Velocities are in meters per frame step. Heading has no rate term and
//! evolves as a random walk. Observations are the first seven components.

use nalgebra::{RealField, SMatrix, SVector};

use crate::geometry::{heading_error, normalize_angle, Box3D, Label};
use crate::scalar::Scalar;

pub const STATE_DIM: usize = 10;
pub const OBS_DIM: usize = 7;

pub type StateVector<T> = SVector<T, STATE_DIM>;
pub type StateMatrix<T> = SMatrix<T, STATE_DIM, STATE_DIM>;
type ObsVector<T> = SVector<T, OBS_DIM>;
type ObsMatrix<T> = SMatrix<T, OBS_DIM, OBS_DIM>;
type ObsModel<T> = SMatrix<T, OBS_DIM, STATE_DIM>;

const HEADING: usize = 3;

/// Scalars usable with the filter's nalgebra matrices.
pub trait KalmanScalar: Scalar + RealField {}
impl<T: Scalar + RealField> KalmanScalar for T {}

/// Noise model of the filter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Process noise variance on the seven observed components.
    pub process_pose: f64,
    /// Process noise variance on the three velocities.
    pub process_velocity: f64,
    /// Measurement noise variance.
    pub measurement: f64,
    /// Initial variance of the observed components of a new track.
    pub initial_pose: f64,
    /// Initial variance of the (unobserved) velocities of a new track.
    pub initial_velocity: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            process_pose: 1.0,
            process_velocity: 1.0,
            measurement: 1.0,
            initial_pose: 10.0,
            initial_velocity: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState<T: KalmanScalar> {
    pub mean: StateVector<T>,
    pub covariance: StateMatrix<T>,
    pub id: u64,
    pub hits: u32,
    pub time_since_update: u32,
    pub age: u32,
    pub label: Label,
}

fn diag<T: KalmanScalar>(pose: f64, velocity: f64) -> StateMatrix<T> {
    StateMatrix::from_fn(|i, j| match (i == j, i < OBS_DIM) {
        (false, _) => T::zero(),
        (true, true) => T::lit(pose),
        (true, false) => T::lit(velocity),
    })
}

fn transition<T: KalmanScalar>() -> StateMatrix<T> {
    let mut f = StateMatrix::<T>::identity();
    f[(0, 7)] = T::one();
    f[(1, 8)] = T::one();
    f[(2, 9)] = T::one();
    f
}

fn observation_model<T: KalmanScalar>() -> ObsModel<T> {
    ObsModel::from_fn(|i, j| if i == j { T::one() } else { T::zero() })
}

fn symmetrize<T: KalmanScalar>(p: &StateMatrix<T>) -> StateMatrix<T> {
    (p + p.transpose()) * T::half()
}

impl<T: KalmanScalar> TrackState<T> {
    /// New track at rest on a detection.
    pub fn from_detection(det: &Box3D<T>, id: u64, noise: &NoiseConfig) -> Self {
        let mut mean = StateVector::<T>::zeros();
        mean.fixed_rows_mut::<OBS_DIM>(0).copy_from(&observation(det));
        TrackState {
            mean,
            covariance: diag(noise.initial_pose, noise.initial_velocity),
            id,
            hits: 1,
            time_since_update: 0,
            age: 0,
            label: det.label,
        }
    }

    /// Box at the current mean, with dimensions floored at 1 mm.
    pub fn to_box(&self) -> Box3D<T> {
        let m = &self.mean;
        let floor = T::lit(1e-3);
        Box3D::new(
            m[0],
            m[1],
            m[2],
            num_traits::Float::max(m[4], floor),
            num_traits::Float::max(m[5], floor),
            num_traits::Float::max(m[6], floor),
            m[HEADING],
        )
        .with_label(self.label)
        .with_track_id(self.id)
    }

    pub fn velocity(&self) -> [T; 3] {
        [self.mean[7], self.mean[8], self.mean[9]]
    }

    /// Whether the covariance is symmetric within `tol` and admits a
    /// Cholesky factorization.
    pub fn covariance_is_valid(&self, tol: T) -> bool {
        let p = &self.covariance;
        let asym = (p - p.transpose()).abs().max();
        asym <= tol && p.cholesky().is_some()
    }
}

fn observation<T: KalmanScalar>(det: &Box3D<T>) -> ObsVector<T> {
    ObsVector::from_column_slice(&[det.cx, det.cy, det.cz, det.heading, det.length, det.width, det.height])
}

/// One constant-velocity step: `x ← F x`, `P ← F P Fᵀ + Q`.
pub fn predict<T: KalmanScalar>(state: &TrackState<T>, noise: &NoiseConfig) -> TrackState<T> {
    let f = transition::<T>();
    let mut mean = f * state.mean;
    mean[HEADING] = normalize_angle(mean[HEADING]);
    let q = diag::<T>(noise.process_pose, noise.process_velocity);
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + q));
    TrackState {
        mean,
        covariance,
        age: state.age + 1,
        time_since_update: state.time_since_update + 1,
        ..state.clone()
    }
}

/// Detection heading after the orientation flip correction: a heading more
/// than π/2 away from the track is turned by π.
pub fn corrected_heading<T: Scalar>(det_heading: T, track_heading: T) -> T {
    if heading_error(det_heading, track_heading) > T::FRAC_PI_2() {
        normalize_angle(det_heading + T::PI())
    } else {
        det_heading
    }
}

/// Kalman correction with a detection of the same object.
pub fn update<T: KalmanScalar>(state: &TrackState<T>, det: &Box3D<T>, noise: &NoiseConfig) -> TrackState<T> {
    let h = observation_model::<T>();
    let mut z = observation(det);
    z[HEADING] = corrected_heading(z[HEADING], state.mean[HEADING]);

    let mut residual = z - h * state.mean;
    residual[HEADING] = normalize_angle(residual[HEADING]);

    let p = &state.covariance;
    let r = ObsMatrix::<T>::identity() * T::lit(noise.measurement);
    let s = h * p * h.transpose() + r;
    let s_inv = match s.cholesky() {
        Some(c) => c.inverse(),
        None => s.try_inverse().unwrap_or_else(ObsMatrix::zeros),
    };
    let gain = p * h.transpose() * s_inv;

    let mut mean = state.mean + gain * residual;
    mean[HEADING] = normalize_angle(mean[HEADING]);

    // Joseph form keeps the covariance symmetric positive semi-definite.
    let i_kh = StateMatrix::<T>::identity() - gain * h;
    let covariance = symmetrize(&(i_kh * p * i_kh.transpose() + gain * r * gain.transpose()));

    TrackState {
        mean,
        covariance,
        hits: state.hits + 1,
        time_since_update: 0,
        ..state.clone()
    }
}
