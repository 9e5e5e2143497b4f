//! Rigid transforms, ego pose trajectories and per-point deskewing.
//!
//! Every point is moved from the sensor frame at its acquisition time into the
//! vehicle frame at a common reference time `t_star`:
//!
//! ```text
//! p* = inv(world_T_vehicle(t_star)) * world_T_vehicle(tau) * vehicle_T_sensor * p
//! ```
//!
//! Ego poses between trajectory knots follow constant linear and angular
//! velocity. Sensor extrinsics are constant in time.

use std::collections::BTreeMap;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Orthonormality tolerance for rotations read from external data.
pub const ROTATION_TOL: f64 = 1e-9;

/// Slack allowed when checking that a timestamp lies in a closed interval.
const INTERVAL_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("trajectory needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("trajectory knot times must be strictly increasing (knot {index})")]
    NonMonotonicKnots { index: usize },
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no calibration for sensor {0}")]
    MissingCalibration(u32),
    #[error("point timestamp {timestamp} outside superframe interval [{start}, {end}]")]
    TimestampOutsideInterval { timestamp: f64, start: f64, end: f64 },
    #[error("superframe interval length must be positive, got {0}")]
    BadInterval(f64),
}

/// Proper rigid motion in 3D: `x -> R x + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    /// Builds a transform from a unit quaternion given as `[w, x, y, z]`.
    /// The quaternion is renormalized; a zero or non-finite quaternion is rejected.
    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if wxyz.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion transform"));
        }
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if q.norm() < 1e-12 {
            return Err(GeometryError::NotOrthonormal);
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Ok(Self::new(unit.to_rotation_matrix(), translation))
    }

    /// Builds a transform from a 3x3 matrix, checking it is a proper rotation.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self::new(
            Rotation3::from_matrix_unchecked(rotation),
            translation,
        ))
    }

    /// Reads a 4x4 homogeneous matrix. The bottom row must be `[0, 0, 0, 1]`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > ROTATION_TOL {
            return Err(GeometryError::NotOrthonormal);
        }
        Self::from_parts(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion as `[w, x, y, z]` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let c = q.coords; // (x, y, z, w)
        let sign = if c[3] < 0.0 { -1.0 } else { 1.0 };
        [sign * c[3], sign * c[0], sign * c[1], sign * c[2]]
    }

    /// Heading of the transformed x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let r = self.rotation.matrix();
        r[(1, 0)].atan2(r[(0, 0)])
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn transform_point3(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// World-from-vehicle poses sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    knots: Vec<(f64, RigidTransform)>,
}

impl PoseTrajectory {
    pub fn new(knots: Vec<(f64, RigidTransform)>) -> Result<Self, GeometryError> {
        if knots.len() < 2 {
            return Err(GeometryError::TooFewKnots(knots.len()));
        }
        for (index, pair) in knots.windows(2).enumerate() {
            if !pair[0].0.is_finite() || !pair[1].0.is_finite() {
                return Err(GeometryError::NonFinite("knot time"));
            }
            if pair[1].0 <= pair[0].0 {
                return Err(GeometryError::NonMonotonicKnots { index: index + 1 });
            }
        }
        Ok(Self { knots })
    }

    /// Trajectory that stays at `pose` over `[start, end]`.
    pub fn stationary(pose: RigidTransform, start: f64, end: f64) -> Result<Self, GeometryError> {
        Self::new(vec![(start, pose), (end, pose)])
    }

    pub fn knots(&self) -> &[(f64, RigidTransform)] {
        &self.knots
    }

    pub fn start(&self) -> f64 {
        self.knots[0].0
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start() && t <= self.end()
    }

    /// Pose at time `t`. Translation is interpolated linearly and rotation
    /// along the geodesic between the bracketing knots.
    pub fn interpolate(&self, t: f64) -> Result<RigidTransform, GeometryError> {
        if !t.is_finite() || !self.contains(t) {
            return Err(GeometryError::OutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        // first knot with time > t
        let upper = self.knots.partition_point(|(kt, _)| *kt <= t);
        if upper == 0 {
            return Ok(self.knots[0].1);
        }
        let (t0, pose0) = &self.knots[upper - 1];
        if *t0 == t || upper == self.knots.len() {
            return Ok(*pose0);
        }
        let (t1, pose1) = &self.knots[upper];
        let alpha = (t - t0) / (t1 - t0);
        let translation = pose0.translation.lerp(&pose1.translation, alpha);
        let rotation = pose0
            .rotation
            .try_slerp(&pose1.rotation, alpha, 1e-12)
            // antipodal rotations have no unique geodesic; hold the earlier one
            .unwrap_or(pose0.rotation);
        Ok(RigidTransform::new(rotation, translation))
    }
}

/// Per-sensor extrinsics, vehicle-from-sensor.
pub type Calibration = BTreeMap<u32, RigidTransform>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub position: Vector3<f64>,
    pub timestamp: f64,
    pub sensor_id: u32,
    pub frame_id: u64,
}

impl TimedPoint {
    pub fn new(position: Vector3<f64>, timestamp: f64, sensor_id: u32, frame_id: u64) -> Self {
        Self {
            position,
            timestamp,
            sensor_id,
            frame_id,
        }
    }
}

/// Motion-compensated union of all sensor scans over `[t, t + delta_t]`,
/// expressed in the vehicle frame at `t_star = t + delta_t / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superframe {
    pub t_star: f64,
    pub delta_t: f64,
    pub points: Vec<TimedPoint>,
}

impl Superframe {
    pub fn start(&self) -> f64 {
        self.t_star - self.delta_t / 2.0
    }

    pub fn end(&self) -> f64 {
        self.t_star + self.delta_t / 2.0
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Deskews one point into the vehicle frame at `t_star`.
pub fn motion_compensate(
    point: &TimedPoint,
    traj: &PoseTrajectory,
    calib: &RigidTransform,
    t_star: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let reference_inv = traj.interpolate(t_star)?.inverse();
    compensate_with(point, traj, calib, &reference_inv)
}

fn compensate_with(
    point: &TimedPoint,
    traj: &PoseTrajectory,
    calib: &RigidTransform,
    reference_inv: &RigidTransform,
) -> Result<Vector3<f64>, GeometryError> {
    if !point.timestamp.is_finite() {
        return Err(GeometryError::NonFinite("point timestamp"));
    }
    let at_tau = traj.interpolate(point.timestamp)?;
    let ref_from_tau = reference_inv * &at_tau;
    Ok(ref_from_tau.transform_point(&calib.transform_point(&point.position)))
}

/// Deskews and merges the scans of all sensors over `[t, t + delta_t]`.
///
/// Points keep their original timestamp, sensor id and frame id; only the
/// position is replaced.
pub fn build_superframe<'a, I>(
    scans: I,
    traj: &PoseTrajectory,
    calibs: &Calibration,
    t: f64,
    delta_t: f64,
) -> Result<Superframe, GeometryError>
where
    I: IntoIterator<Item = &'a [TimedPoint]>,
{
    if !(delta_t > 0.0) || !t.is_finite() {
        return Err(GeometryError::BadInterval(delta_t));
    }
    let t_star = t + delta_t / 2.0;
    let reference_inv = traj.interpolate(t_star)?.inverse();
    let (start, end) = (t, t + delta_t);

    let mut points = Vec::new();
    for scan in scans {
        points.reserve(scan.len());
        for p in scan {
            let calib = calibs
                .get(&p.sensor_id)
                .ok_or(GeometryError::MissingCalibration(p.sensor_id))?;
            if !(p.timestamp >= start - INTERVAL_SLACK && p.timestamp <= end + INTERVAL_SLACK) {
                return Err(GeometryError::TimestampOutsideInterval {
                    timestamp: p.timestamp,
                    start,
                    end,
                });
            }
            let position = compensate_with(p, traj, calib, &reference_inv)?;
            points.push(TimedPoint { position, ..*p });
        }
    }
    Ok(Superframe {
        t_star,
        delta_t,
        points,
    })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn two_knot(pose1: RigidTransform) -> PoseTrajectory {
        PoseTrajectory::new(vec![(0.0, RigidTransform::identity()), (1.0, pose1)]).unwrap()
    }

    #[test]
    fn interpolates_translation_midpoint() {
        let traj = two_knot(RigidTransform::from_translation(2.0, 0.0, 0.0));
        let mid = traj.interpolate(0.5).unwrap();
        assert_abs_diff_eq!(*mid.translation(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(mid.rotation().angle(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn interpolates_yaw_at_constant_rate() {
        let traj = two_knot(RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros()));
        let mid = traj.interpolate(0.5).unwrap();
        assert_abs_diff_eq!(mid.yaw(), FRAC_PI_4, epsilon = 1e-12);
        let quarter = traj.interpolate(0.25).unwrap();
        assert_abs_diff_eq!(quarter.yaw(), FRAC_PI_2 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn knot_time_returns_exact_pose() {
        let p1 = RigidTransform::from_yaw(0.3, Vector3::new(1.0, -2.0, 0.5));
        let p2 = RigidTransform::from_yaw(-1.1, Vector3::new(4.0, 2.0, 0.0));
        let traj = PoseTrajectory::new(vec![
            (0.0, RigidTransform::identity()),
            (0.7, p1),
            (1.5, p2),
        ])
        .unwrap();
        assert_eq!(traj.interpolate(0.7).unwrap(), p1);
        assert_eq!(traj.interpolate(1.5).unwrap(), p2);
        assert_eq!(traj.interpolate(0.0).unwrap(), RigidTransform::identity());
    }

    #[test]
    fn out_of_range_is_rejected() {
        let traj = two_knot(RigidTransform::identity());
        assert!(matches!(traj.interpolate(1.0001), Err(GeometryError::OutOfRange { .. })));
        assert!(matches!(traj.interpolate(-0.1), Err(GeometryError::OutOfRange { .. })));
        assert!(traj.interpolate(f64::NAN).is_err());
    }

    #[test]
    fn trajectory_validation() {
        assert_eq!(
            PoseTrajectory::new(vec![(0.0, RigidTransform::identity())]),
            Err(GeometryError::TooFewKnots(1))
        );
        let bad = PoseTrajectory::new(vec![
            (0.0, RigidTransform::identity()),
            (0.0, RigidTransform::identity()),
        ]);
        assert_eq!(bad, Err(GeometryError::NonMonotonicKnots { index: 1 }));
    }

    #[test]
    fn rejects_non_orthonormal_matrix() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.01;
        assert_eq!(
            RigidTransform::from_parts(m, Vector3::zeros()),
            Err(GeometryError::NotOrthonormal)
        );
        // reflection
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::from_parts(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn matrix_and_quaternion_round_trip() {
        let t = RigidTransform::from_yaw(2.0, Vector3::new(1.0, 2.0, 3.0));
        let back = RigidTransform::from_matrix(&t.to_matrix()).unwrap();
        assert_abs_diff_eq!(back.to_matrix(), t.to_matrix(), epsilon = 1e-15);
        let q = t.quaternion();
        let back = RigidTransform::from_quaternion(q, *t.translation()).unwrap();
        assert_abs_diff_eq!(back.to_matrix(), t.to_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn stationary_ego_leaves_points_unchanged() {
        let traj = PoseTrajectory::stationary(RigidTransform::identity(), 0.0, 1.0).unwrap();
        let p = TimedPoint::new(Vector3::new(5.0, 0.0, 0.0), 0.3, 0, 0);
        let out = motion_compensate(&p, &traj, &RigidTransform::identity(), 0.5).unwrap();
        assert_abs_diff_eq!(out, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn translating_ego_shifts_late_points_forward() {
        // ego moves +x at 10 m/s
        let traj = PoseTrajectory::new(vec![
            (0.0, RigidTransform::identity()),
            (1.0, RigidTransform::from_translation(10.0, 0.0, 0.0)),
        ])
        .unwrap();
        let t_star = 0.4;
        let p = TimedPoint::new(Vector3::new(5.0, 0.0, 0.0), t_star + 0.1, 0, 0);
        let out = motion_compensate(&p, &traj, &RigidTransform::identity(), t_star).unwrap();
        assert_abs_diff_eq!(out, Vector3::new(6.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn superframe_is_union_of_scans() {
        let traj = PoseTrajectory::stationary(RigidTransform::identity(), 0.0, 1.0).unwrap();
        let calibs: Calibration = (0..3)
            .map(|i| (i, RigidTransform::from_translation(i as f64, 0.0, 0.0)))
            .collect();
        let scans: Vec<Vec<TimedPoint>> = (0..3u32)
            .map(|s| {
                (0..(100 * (s as usize + 1)))
                    .map(|k| TimedPoint::new(Vector3::new(k as f64, 0.0, 0.0), 0.1 + 0.0001 * k as f64, s, 1))
                    .collect()
            })
            .collect();
        let sf = build_superframe(scans.iter().map(Vec::as_slice), &traj, &calibs, 0.1, 0.1).unwrap();
        assert_eq!(sf.len(), 600);
        assert_abs_diff_eq!(sf.t_star, 0.15, epsilon = 1e-15);
        // calib-only transform under a stationary ego
        assert_abs_diff_eq!(sf.points[150].position, Vector3::new(51.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(sf.points[150].sensor_id, 1);
    }

    #[test]
    fn superframe_errors() {
        let traj = PoseTrajectory::stationary(RigidTransform::identity(), 0.0, 1.0).unwrap();
        let calibs: Calibration = [(0, RigidTransform::identity())].into_iter().collect();
        let unknown = [TimedPoint::new(Vector3::zeros(), 0.15, 4, 0)];
        assert_eq!(
            build_superframe([&unknown[..]], &traj, &calibs, 0.1, 0.1),
            Err(GeometryError::MissingCalibration(4))
        );
        let late = [TimedPoint::new(Vector3::zeros(), 0.3, 0, 0)];
        assert!(matches!(
            build_superframe([&late[..]], &traj, &calibs, 0.1, 0.1),
            Err(GeometryError::TimestampOutsideInterval { .. })
        ));
        assert!(build_superframe([&late[..]], &traj, &calibs, 0.1, 0.0).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-0.5 - 2.0 * PI), -0.5, epsilon = 1e-12);
    }
}
