//! Annotated tracks and their reduction to a one-dimensional
//! distance/speed problem along the annotated headings.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, GeometryError, PoseTrajectory};

/// Allowed relative deviation of a frame gap from the nominal spacing.
pub const SPACING_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("track needs at least 2 boxes, got {0}")]
    Degenerate(usize),
    #[error("box timestamps must be strictly increasing (index {0})")]
    NonMonotonic(usize),
    #[error("frame gap {gap} at index {index} deviates more than 10% from nominal {nominal}")]
    IrregularSpacing { index: usize, gap: f64, nominal: f64 },
    #[error("box {0} has non-positive dimensions")]
    BadDims(usize),
    #[error("boxes of track {expected} mixed with track {found}")]
    MixedTrackIds { expected: u64, found: u64 },
    #[error("non-finite value in box {0}")]
    NonFinite(usize),
    #[error("nominal frame spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Coordinate frame a box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFrame {
    /// Vehicle frame at the box's own `t_star`.
    Vehicle,
    World,
}

/// Oriented 3D box with yaw-only orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedBox {
    pub track_id: u64,
    pub t_star: f64,
    pub frame: BoxFrame,
    pub center: Vector3<f64>,
    /// length (along heading), width, height
    pub dims: [f64; 3],
    pub heading: f64,
    pub class: Option<String>,
}

impl AnnotatedBox {
    pub fn length(&self) -> f64 {
        self.dims[0]
    }

    /// Unit vector along the heading in the ground plane.
    pub fn axis(&self) -> Vector3<f64> {
        heading_axis(self.heading)
    }

    /// Point expressed in box coordinates (longitudinal, lateral, vertical).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.heading.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Containment with per-axis slack (longitudinal, lateral, vertical).
    pub fn contains_with(&self, p: &Vector3<f64>, slack: [f64; 3]) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.dims[i] / 2.0 + slack[i])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.contains_with(p, [1e-9; 3])
    }

    fn validate(&self, index: usize) -> Result<(), TrackError> {
        let finite = self.t_star.is_finite()
            && self.heading.is_finite()
            && self.center.iter().chain(self.dims.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(TrackError::NonFinite(index));
        }
        if self.dims.iter().any(|d| *d <= 0.0) {
            return Err(TrackError::BadDims(index));
        }
        Ok(())
    }
}

pub fn heading_axis(heading: f64) -> Vector3<f64> {
    let (s, c) = heading.sin_cos();
    Vector3::new(c, s, 0.0)
}

/// Time-sorted boxes of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTrack {
    boxes: Vec<AnnotatedBox>,
    delta_t: f64,
}

impl AnnotatedTrack {
    /// Validates ordering, spacing and box shapes; headings are wrapped
    /// into `(-pi, pi]`.
    pub fn new(mut boxes: Vec<AnnotatedBox>, delta_t: f64) -> Result<Self, TrackError> {
        if !(delta_t > 0.0) || !delta_t.is_finite() {
            return Err(TrackError::BadSpacing(delta_t));
        }
        if boxes.len() < 2 {
            return Err(TrackError::Degenerate(boxes.len()));
        }
        let track_id = boxes[0].track_id;
        for (i, b) in boxes.iter_mut().enumerate() {
            b.validate(i)?;
            if b.track_id != track_id {
                return Err(TrackError::MixedTrackIds {
                    expected: track_id,
                    found: b.track_id,
                });
            }
            b.heading = wrap_angle(b.heading);
        }
        for (i, pair) in boxes.windows(2).enumerate() {
            let gap = pair[1].t_star - pair[0].t_star;
            if gap <= 0.0 {
                return Err(TrackError::NonMonotonic(i + 1));
            }
            if (gap - delta_t).abs() > SPACING_TOLERANCE * delta_t + 1e-12 {
                return Err(TrackError::IrregularSpacing {
                    index: i + 1,
                    gap,
                    nominal: delta_t,
                });
            }
        }
        Ok(Self { boxes, delta_t })
    }

    pub fn track_id(&self) -> u64 {
        self.boxes[0].track_id
    }

    pub fn boxes(&self) -> &[AnnotatedBox] {
        &self.boxes
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn into_boxes(self) -> Vec<AnnotatedBox> {
        self.boxes
    }
}

/// Result of lifting a track into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTrack {
    pub track: AnnotatedTrack,
    /// Set when some boxes were already world-frame and left untouched.
    pub already_world: bool,
}

/// Moves vehicle-frame boxes into the world frame using the ego pose at each
/// box's `t_star`. World-frame boxes pass through and raise `already_world`.
pub fn boxes_to_world(track: &AnnotatedTrack, traj: &PoseTrajectory) -> Result<WorldTrack, TrackError> {
    let mut already_world = false;
    let mut boxes = Vec::with_capacity(track.len());
    for b in track.boxes() {
        if b.frame == BoxFrame::World {
            already_world = true;
            boxes.push(b.clone());
            continue;
        }
        let ego = traj.interpolate(b.t_star)?;
        boxes.push(AnnotatedBox {
            center: ego.transform_point(&b.center),
            heading: wrap_angle(b.heading + ego.yaw()),
            frame: BoxFrame::World,
            ..b.clone()
        });
    }
    if already_world {
        log::warn!("track {}: boxes already in world frame left unchanged", track.track_id());
    }
    Ok(WorldTrack {
        track: AnnotatedTrack::new(boxes, track.delta_t())?,
        already_world,
    })
}

/// Distance along the annotated path with the headings that define it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub d: Vec<f64>,
    pub headings: Vec<f64>,
    pub times: Vec<f64>,
    pub delta_t: f64,
}

impl MeasurementSeries {
    /// Builds a series from raw distances at the given times. Headings are
    /// set to zero.
    pub fn from_distances(d: Vec<f64>, times: Vec<f64>, delta_t: f64) -> Self {
        let headings = vec![0.0; d.len()];
        Self {
            d,
            headings,
            times,
            delta_t,
        }
    }

    /// Uniformly sampled series starting at `t0`.
    pub fn uniform(d: Vec<f64>, t0: f64, delta_t: f64) -> Self {
        let times = (0..d.len()).map(|k| t0 + k as f64 * delta_t).collect();
        Self::from_distances(d, times, delta_t)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Gap between sample `k` and `k + 1`.
    pub fn step(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Contiguous sub-series `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            d: self.d[start..end].to_vec(),
            headings: self.headings[start..end].to_vec(),
            times: self.times[start..end].to_vec(),
            delta_t: self.delta_t,
        }
    }
}

/// Unwraps a heading sequence so consecutive values differ by at most pi.
pub fn unwrap_headings(headings: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(headings.len());
    for &h in headings {
        match out.last() {
            None => out.push(h),
            Some(&prev) => out.push(prev + wrap_angle(h - prev)),
        }
    }
    out
}

/// Mean direction of two angles.
pub fn circular_mean(a: f64, b: f64) -> f64 {
    (a.sin() + b.sin()).atan2(a.cos() + b.cos())
}

/// Accumulates the displacement between consecutive world-frame centers
/// projected on the mean heading of each segment. `d[0] = 0`.
pub fn project_to_path(track: &AnnotatedTrack) -> Result<MeasurementSeries, TrackError> {
    let boxes = track.boxes();
    if boxes.len() < 2 {
        return Err(TrackError::Degenerate(boxes.len()));
    }
    let headings: Vec<f64> = boxes.iter().map(|b| b.heading).collect();
    let unwrapped = unwrap_headings(&headings);
    let mut d = Vec::with_capacity(boxes.len());
    d.push(0.0);
    for k in 1..boxes.len() {
        let axis = heading_axis(circular_mean(unwrapped[k - 1], unwrapped[k]));
        let step = (boxes[k].center - boxes[k - 1].center).dot(&axis);
        d.push(d[k - 1] + step);
    }
    Ok(MeasurementSeries {
        d,
        headings,
        times: boxes.iter().map(|b| b.t_star).collect(),
        delta_t: track.delta_t(),
    })
}

/// Distance along the path and speed along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub d: f64,
    pub s: f64,
}

impl KinematicState {
    pub fn new(d: f64, s: f64) -> Self {
        Self { d, s }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.s.is_finite()
    }
}

/// Constant-acceleration step over `delta_t` with acceleration `u`.
pub fn transition(x: KinematicState, u: f64, delta_t: f64) -> KinematicState {
    KinematicState {
        d: x.d + x.s * delta_t + 0.5 * u * delta_t * delta_t,
        s: x.s + u * delta_t,
    }
}

/// Only the distance is observed.
pub fn measure(x: KinematicState) -> f64 {
    x.d
}
