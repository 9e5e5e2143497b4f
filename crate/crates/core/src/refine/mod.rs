//! Splits one annotated box per superframe into per-view pseudo boxes.
//!
//! For every frame the points around the annotation are grouped into views
//! along the box heading, moved to where they would have been at the
//! superframe reference time using the estimated speed, and used to re-anchor
//! the box at the rear or front of the object. The anchored box is then
//! copied once per view and moved back by that view's displacement.

pub mod kde;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::StateEstimate;
use crate::geometry::Superframe;
use crate::track::{heading_axis, AnnotatedBox, AnnotatedTrack};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("need at least {needed} points to locate the dense end, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no superframe within {tolerance} s of annotation at t = {t}")]
    Misaligned { t: f64, tolerance: f64 },
    #[error("track has {boxes} boxes but the estimate has {states} states")]
    LengthMismatch { boxes: usize, states: usize },
    #[error("invalid refine parameter `{key}`: {reason}")]
    Params { key: &'static str, reason: String },
}

/// Bandwidth of the density estimate along the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule on the sample.
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(Bandwidth::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a number, got \"{w}\""
            ))),
            Raw::Value(h) => Ok(Bandwidth::Fixed(h)),
        }
    }
}

/// Which end of the object the box is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Rear,
    Front,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    /// Gap along the heading that separates two views, meters.
    pub gap_threshold: f64,
    pub min_cluster_points: usize,
    /// Slack added around the annotation when collecting points, meters.
    pub roi_margin: f64,
    /// Along-heading growth of the collection region in units of the
    /// distance travelled in one superframe.
    pub roi_travel_fraction: f64,
    pub kde_bandwidth: Bandwidth,
    /// Clearance between the extreme point and the anchored face, meters.
    pub anchor_margin: f64,
    /// Frames slower than this keep the original box, m/s.
    pub min_refine_speed: f64,
    /// Anchor used when the density mode coincides with the mean.
    pub tie_anchor: Anchor,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            gap_threshold: 0.3,
            min_cluster_points: 5,
            roi_margin: 0.5,
            roi_travel_fraction: 1.0,
            kde_bandwidth: Bandwidth::Auto,
            anchor_margin: 0.05,
            min_refine_speed: 1.0,
            tie_anchor: Anchor::Rear,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        let positive = [
            ("gap_threshold", self.gap_threshold),
            ("roi_margin", self.roi_margin),
            ("anchor_margin", self.anchor_margin),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RefineError::Params {
                    key,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.roi_travel_fraction >= 0.0) || !self.roi_travel_fraction.is_finite() {
            return Err(RefineError::Params {
                key: "roi_travel_fraction",
                reason: format!("must be non-negative, got {}", self.roi_travel_fraction),
            });
        }
        if self.min_cluster_points == 0 {
            return Err(RefineError::Params {
                key: "min_cluster_points",
                reason: "must be at least 1".into(),
            });
        }
        if let Bandwidth::Fixed(h) = self.kde_bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(RefineError::Params {
                    key: "kde_bandwidth",
                    reason: format!("must be positive or \"auto\", got {h}"),
                });
            }
        }
        if !(self.min_refine_speed >= 0.0) {
            return Err(RefineError::Params {
                key: "min_refine_speed",
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// One contiguous group of points along the heading.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCluster {
    pub point_indices: Vec<usize>,
    pub mean_tau: f64,
    /// Extent along the heading axis, meters.
    pub span: [f64; 2],
    pub dominant_sensor: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBox {
    pub bbox: AnnotatedBox,
    /// Index of the view this box was fitted to; `None` when the original
    /// box was passed through.
    pub source_cluster: Option<usize>,
    pub applied_shift: Vector3<f64>,
    pub dominant_sensor: Option<u32>,
    pub anchored: bool,
}

impl PseudoBox {
    fn passthrough(bbox: &AnnotatedBox) -> Self {
        Self {
            bbox: bbox.clone(),
            source_cluster: None,
            applied_shift: Vector3::zeros(),
            dominant_sensor: None,
            anchored: false,
        }
    }
}

/// Points within the annotation grown by `roi_travel_fraction` times the
/// distance the object travels in one superframe plus `roi_margin` along
/// the heading, and by `roi_margin` across it.
///
/// A fraction of 0.5 covers every view when the annotation sits at the
/// reference-time position; the default 1.0 also covers annotations drawn
/// around any single view.
pub fn collect_roi_points(sf: &Superframe, bbox: &AnnotatedBox, s_star: f64, params: &RefineParams) -> Vec<usize> {
    let along = params.roi_travel_fraction * s_star.abs() * sf.delta_t + params.roi_margin;
    let slack = [along, params.roi_margin, params.roi_margin];
    sf.points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains_with(&p.position, slack))
        .map(|(i, _)| i)
        .collect()
}

/// Splits the selected points into views by gaps along the heading.
/// Views with fewer than `min_cluster_points` are dropped; the rest are
/// returned rear to front.
pub fn cluster_along_heading(
    sf: &Superframe,
    indices: &[usize],
    heading: f64,
    params: &RefineParams,
) -> Vec<ViewCluster> {
    let axis = heading_axis(heading);
    let mut projected: Vec<(f64, usize)> = indices
        .iter()
        .map(|&i| (sf.points[i].position.dot(&axis), i))
        .collect();
    projected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut groups: Vec<Vec<(f64, usize)>> = Vec::new();
    for item in projected {
        match groups.last_mut() {
            Some(g) if item.0 - g[g.len() - 1].0 <= params.gap_threshold => g.push(item),
            _ => groups.push(vec![item]),
        }
    }

    groups
        .into_iter()
        .filter(|g| g.len() >= params.min_cluster_points)
        .map(|g| {
            let span = [g[0].0, g[g.len() - 1].0];
            let point_indices: Vec<usize> = g.iter().map(|(_, i)| *i).collect();
            let mean_tau = point_indices.iter().map(|&i| sf.points[i].timestamp).sum::<f64>()
                / point_indices.len() as f64;
            let mut counts = std::collections::BTreeMap::<u32, usize>::new();
            for &i in &point_indices {
                *counts.entry(sf.points[i].sensor_id).or_default() += 1;
            }
            // highest count, lowest sensor id on ties
            let dominant_sensor = counts
                .iter()
                .fold((0u32, 0usize), |best, (&id, &c)| if c > best.1 { (id, c) } else { best })
                .0;
            ViewCluster {
                point_indices,
                mean_tau,
                span,
                dominant_sensor,
            }
        })
        .collect()
}

/// Displacement of an object moving at `s_star` along `heading` between
/// `t_star` and `tau`.
pub fn speed_displacement(tau: f64, t_star: f64, s_star: f64, heading: f64) -> Vector3<f64> {
    heading_axis(heading) * ((tau - t_star) * s_star)
}

/// Moves each selected point to where its surface element was at the
/// superframe reference time, assuming the object moves at `s_star` along
/// `heading`. Heights are unchanged.
pub fn speed_compensate(sf: &Superframe, indices: &[usize], s_star: f64, heading: f64) -> Vec<Vector3<f64>> {
    indices
        .iter()
        .map(|&i| {
            let p = &sf.points[i];
            p.position - speed_displacement(p.timestamp, sf.t_star, s_star, heading)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorEstimate {
    pub anchor: Anchor,
    /// Densest coordinate along the heading.
    pub mode: f64,
    pub mean: f64,
}

/// Decides whether the densest part of the object is its rear or its
/// front: rear when the density mode lies behind the mean.
pub fn find_orientation_anchor(coords: &[f64], params: &RefineParams) -> Result<AnchorEstimate, RefineError> {
    let needed = params.min_cluster_points.max(1);
    if coords.len() < needed {
        return Err(RefineError::InsufficientData {
            needed,
            got: coords.len(),
        });
    }
    let bandwidth = match params.kde_bandwidth {
        Bandwidth::Auto => kde::silverman_bandwidth(coords),
        Bandwidth::Fixed(h) => h,
    };
    let mode = kde::density_mode(coords, bandwidth, kde::MODE_GRID_POINTS);
    let mean = kde::mean(coords);
    let anchor = if (mode - mean).abs() <= 1e-9 {
        params.tie_anchor
    } else if mode < mean {
        Anchor::Rear
    } else {
        Anchor::Front
    };
    Ok(AnchorEstimate { anchor, mode, mean })
}

/// Slides the box along its heading so the anchored face sits
/// `anchor_margin` beyond the extreme coordinate. Lateral and vertical
/// placement and the dimensions are kept.
pub fn anchor_box(bbox: &AnnotatedBox, coords: &[f64], anchor: Anchor, params: &RefineParams) -> AnnotatedBox {
    if coords.is_empty() {
        return bbox.clone();
    }
    let axis = bbox.axis();
    let half = bbox.length() / 2.0;
    let current = bbox.center.dot(&axis);
    let target = match anchor {
        Anchor::Rear => {
            let min = coords.iter().copied().fold(f64::INFINITY, f64::min);
            min - params.anchor_margin + half
        }
        Anchor::Front => {
            let max = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + params.anchor_margin - half
        }
    };
    AnnotatedBox {
        center: bbox.center + axis * (target - current),
        ..bbox.clone()
    }
}

/// One copy of the anchored box per view, moved by the displacement of the
/// object between `t_star` and the view's mean timestamp.
pub fn generate_pseudo_boxes(
    anchored: &AnnotatedBox,
    clusters: &[ViewCluster],
    s_star: f64,
    heading: f64,
    t_star: f64,
) -> Vec<PseudoBox> {
    clusters
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let shift = speed_displacement(c.mean_tau, t_star, s_star, heading);
            PseudoBox {
                bbox: AnnotatedBox {
                    center: anchored.center + shift,
                    ..anchored.clone()
                },
                source_cluster: Some(k),
                applied_shift: shift,
                dominant_sensor: Some(c.dominant_sensor),
                anchored: true,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Refined,
    /// Speed below `min_refine_speed`; original box kept.
    BelowSpeed,
    /// No view survived clustering; original box kept.
    NoClusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRefinement {
    pub t_star: f64,
    pub status: FrameStatus,
    pub anchor: Option<AnchorEstimate>,
    pub clusters: Vec<ViewCluster>,
    pub pseudo_boxes: Vec<PseudoBox>,
}

/// Refines one annotation inside its superframe. `bbox` must be expressed in
/// the superframe's vehicle frame.
pub fn refine_frame(
    sf: &Superframe,
    bbox: &AnnotatedBox,
    s_star: f64,
    params: &RefineParams,
) -> Result<FrameRefinement, RefineError> {
    params.validate()?;
    let skipped = |status| FrameRefinement {
        t_star: sf.t_star,
        status,
        anchor: None,
        clusters: Vec::new(),
        pseudo_boxes: vec![PseudoBox::passthrough(bbox)],
    };
    if s_star.abs() < params.min_refine_speed {
        return Ok(skipped(FrameStatus::BelowSpeed));
    }
    let roi = collect_roi_points(sf, bbox, s_star, params);
    let clusters = cluster_along_heading(sf, &roi, bbox.heading, params);
    if clusters.is_empty() {
        log::warn!(
            "track {} at t = {:.3}: no view clusters, keeping the original box",
            bbox.track_id,
            sf.t_star
        );
        return Ok(skipped(FrameStatus::NoClusters));
    }
    let members: Vec<usize> = clusters.iter().flat_map(|c| c.point_indices.iter().copied()).collect();
    let axis = bbox.axis();
    let coords: Vec<f64> = speed_compensate(sf, &members, s_star, bbox.heading)
        .iter()
        .map(|p| p.dot(&axis))
        .collect();
    let anchor = find_orientation_anchor(&coords, params)?;
    let anchored = anchor_box(bbox, &coords, anchor.anchor, params);
    let pseudo_boxes = generate_pseudo_boxes(&anchored, &clusters, s_star, bbox.heading, sf.t_star);
    Ok(FrameRefinement {
        t_star: sf.t_star,
        status: FrameStatus::Refined,
        anchor: Some(anchor),
        clusters,
        pseudo_boxes,
    })
}

/// Refines every annotation of a vehicle-frame track. `estimate` holds one
/// state per box; each box is paired with the superframe whose reference
/// time is within half a frame of it.
pub fn refine_track(
    track: &AnnotatedTrack,
    superframes: &[Superframe],
    estimate: &StateEstimate,
    params: &RefineParams,
) -> Result<Vec<FrameRefinement>, RefineError> {
    params.validate()?;
    if estimate.states.len() != track.len() {
        return Err(RefineError::LengthMismatch {
            boxes: track.len(),
            states: estimate.states.len(),
        });
    }
    let tolerance = track.delta_t() / 2.0;
    track
        .boxes()
        .iter()
        .zip(&estimate.states)
        .map(|(b, x)| {
            let sf = nearest_superframe(superframes, b.t_star)
                .filter(|sf| (sf.t_star - b.t_star).abs() <= tolerance)
                .ok_or(RefineError::Misaligned { t: b.t_star, tolerance })?;
            refine_frame(sf, b, x.s, params)
        })
        .collect()
}

fn nearest_superframe(superframes: &[Superframe], t: f64) -> Option<&Superframe> {
    superframes
        .iter()
        .min_by(|a, b| (a.t_star - t).abs().total_cmp(&(b.t_star - t).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;
    use crate::track::BoxFrame;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn unit_box(center: Vector3<f64>, length: f64) -> AnnotatedBox {
        AnnotatedBox {
            track_id: 7,
            t_star: 0.05,
            frame: BoxFrame::Vehicle,
            center,
            dims: [length, 2.0, 1.5],
            heading: 0.0,
            class: None,
        }
    }

    fn frame(points: Vec<TimedPoint>) -> Superframe {
        Superframe {
            t_star: 0.05,
            delta_t: 0.1,
            points,
        }
    }

    fn pt(x: f64, tau: f64, sensor: u32) -> TimedPoint {
        TimedPoint::new(Vector3::new(x, 0.0, 0.0), tau, sensor, 0)
    }

    #[test]
    fn roi_keeps_points_inside_box() {
        let sf = frame((0..10).map(|i| pt(-1.5 + 0.3 * i as f64, 0.05, 0)).collect());
        let b = unit_box(Vector3::zeros(), 4.0);
        assert_eq!(collect_roi_points(&sf, &b, 0.0, &RefineParams::default()).len(), 10);
    }

    #[test]
    fn roi_grows_with_speed() {
        // box front at x = 2, point 1.6 m ahead of it
        let sf = frame(vec![pt(3.6, 0.05, 0), pt(4.1, 0.05, 0)]);
        let b = unit_box(Vector3::zeros(), 4.0);
        let params = RefineParams {
            roi_travel_fraction: 0.5,
            ..RefineParams::default()
        };
        // expansion 1.5 + 0.5 = 2.0 m
        assert_eq!(collect_roi_points(&sf, &b, 30.0, &params), vec![0]);
        assert!(collect_roi_points(&sf, &b, 0.0, &params).is_empty());
        // default doubles the travel term: 3.0 + 0.5
        assert_eq!(collect_roi_points(&sf, &b, 30.0, &RefineParams::default()), vec![0, 1]);
    }

    #[test]
    fn two_groups_make_two_clusters() {
        let mut pts: Vec<TimedPoint> = (0..50).map(|i| pt(0.01 * i as f64, 0.02, 0)).collect();
        pts.extend((0..50).map(|i| pt(2.49 + 0.01 * i as f64, 0.08, 1)));
        let sf = frame(pts);
        let idx: Vec<usize> = (0..100).collect();
        let clusters = cluster_along_heading(&sf, &idx, 0.0, &RefineParams::default());
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].dominant_sensor, 0);
        assert_eq!(clusters[1].dominant_sensor, 1);
        assert_abs_diff_eq!(clusters[0].mean_tau, 0.02, epsilon = 1e-15);
        assert!(clusters[0].span[1] < clusters[1].span[0]);

        let one = frame((0..60).map(|i| pt(0.05 * i as f64, 0.05, 2)).collect());
        let idx: Vec<usize> = (0..60).collect();
        assert_eq!(cluster_along_heading(&one, &idx, 0.0, &RefineParams::default()).len(), 1);
    }

    #[test]
    fn small_groups_are_dropped() {
        let mut pts: Vec<TimedPoint> = (0..20).map(|i| pt(0.01 * i as f64, 0.05, 0)).collect();
        pts.extend((0..3).map(|i| pt(5.0 + 0.01 * i as f64, 0.05, 0)));
        let sf = frame(pts);
        let idx: Vec<usize> = (0..23).collect();
        assert_eq!(cluster_along_heading(&sf, &idx, 0.0, &RefineParams::default()).len(), 1);
        let params = RefineParams {
            min_cluster_points: 50,
            ..RefineParams::default()
        };
        assert!(cluster_along_heading(&sf, &idx, 0.0, &params).is_empty());
    }

    #[test]
    fn displacement_examples() {
        assert_abs_diff_eq!(speed_displacement(0.15, 0.05, 30.0, 0.0), Vector3::new(3.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(speed_displacement(0.05, 0.05, 30.0, 0.7), Vector3::zeros());
        assert_abs_diff_eq!(
            speed_displacement(0.1, 0.05, 30.0, FRAC_PI_2),
            Vector3::new(0.0, 1.5, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn compensation_moves_points_to_reference_time() {
        let sf = frame(vec![pt(10.0, 0.0, 0), pt(12.0, 0.1, 1)]);
        let out = speed_compensate(&sf, &[0, 1], 20.0, 0.0);
        // object at 20 m/s: -50 ms sample moves forward 1 m, +50 ms moves back 1 m
        assert_abs_diff_eq!(out[0], Vector3::new(11.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], Vector3::new(11.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn anchor_follows_the_heavy_end() {
        // 80% of the points at the low end
        let mut coords: Vec<f64> = (0..80).map(|i| 0.002 * i as f64).collect();
        coords.extend((0..20).map(|i| 1.0 + 0.15 * i as f64));
        let params = RefineParams::default();
        let a = find_orientation_anchor(&coords, &params).unwrap();
        assert_eq!(a.anchor, Anchor::Rear);
        assert!(a.mode < a.mean);
        let mirrored: Vec<f64> = coords.iter().map(|c| -c).collect();
        assert_eq!(find_orientation_anchor(&mirrored, &params).unwrap().anchor, Anchor::Front);
    }

    #[test]
    fn anchor_ties_and_insufficient_data() {
        let params = RefineParams::default();
        let flat = [3.0; 6];
        assert_eq!(find_orientation_anchor(&flat, &params).unwrap().anchor, Anchor::Rear);
        let front_ties = RefineParams {
            tie_anchor: Anchor::Front,
            ..RefineParams::default()
        };
        assert_eq!(find_orientation_anchor(&flat, &front_ties).unwrap().anchor, Anchor::Front);
        assert!(matches!(
            find_orientation_anchor(&[1.0, 2.0], &params),
            Err(RefineError::InsufficientData { needed: 5, got: 2 })
        ));
    }

    #[test]
    fn anchor_box_places_faces() {
        let b = unit_box(Vector3::new(0.0, 0.4, 0.7), 4.0);
        let params = RefineParams::default();
        let rear = anchor_box(&b, &[10.0, 11.0, 12.5], Anchor::Rear, &params);
        assert_abs_diff_eq!(rear.center.x - 2.0, 9.95, epsilon = 1e-12);
        assert_abs_diff_eq!(rear.center.x + 2.0, 13.95, epsilon = 1e-12);
        assert_eq!((rear.center.y, rear.center.z), (0.4, 0.7));
        assert_eq!(rear.dims, b.dims);
        let front = anchor_box(&b, &[10.0, 11.0, 12.5], Anchor::Front, &params);
        assert_abs_diff_eq!(front.center.x + 2.0, 12.55, epsilon = 1e-12);
        // already fitted box barely moves
        let fitted = anchor_box(&b, &[-1.95, 0.0, 1.0], Anchor::Rear, &params);
        assert_abs_diff_eq!(fitted.center.x, b.center.x, epsilon = params.anchor_margin + 1e-12);
    }

    #[test]
    fn pseudo_boxes_shift_per_view() {
        let b = unit_box(Vector3::new(5.0, 0.0, 0.0), 4.0);
        let clusters = vec![
            ViewCluster {
                point_indices: vec![0],
                mean_tau: 0.025,
                span: [0.0, 0.0],
                dominant_sensor: 0,
            },
            ViewCluster {
                point_indices: vec![1],
                mean_tau: 0.075,
                span: [1.0, 1.0],
                dominant_sensor: 1,
            },
        ];
        let boxes = generate_pseudo_boxes(&b, &clusters, 20.0, 0.0, 0.05);
        assert_abs_diff_eq!(boxes[0].applied_shift, Vector3::new(-0.5, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(boxes[1].applied_shift, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(boxes[1].source_cluster, Some(1));
        assert!(boxes.iter().all(|p| p.bbox.dims == b.dims && p.bbox.heading == b.heading));

        let still = generate_pseudo_boxes(&b, &clusters, 0.0, 0.0, 0.05);
        assert!(still.iter().all(|p| p.bbox.center == b.center));
    }

    #[test]
    fn slow_frames_pass_through() {
        let sf = frame((0..20).map(|i| pt(0.1 * i as f64, 0.05, 0)).collect());
        let b = unit_box(Vector3::new(1.0, 0.0, 0.0), 4.0);
        let out = refine_frame(&sf, &b, 0.5, &RefineParams::default()).unwrap();
        assert_eq!(out.status, FrameStatus::BelowSpeed);
        assert_eq!(out.pseudo_boxes.len(), 1);
        assert_eq!(out.pseudo_boxes[0].bbox, b);
        assert!(!out.pseudo_boxes[0].anchored);
    }

    #[test]
    fn empty_frame_passes_through() {
        let sf = frame(Vec::new());
        let b = unit_box(Vector3::zeros(), 4.0);
        let out = refine_frame(&sf, &b, 20.0, &RefineParams::default()).unwrap();
        assert_eq!(out.status, FrameStatus::NoClusters);
        assert_eq!(out.pseudo_boxes[0].bbox, b);
    }

    #[test]
    fn params_validation_and_parsing() {
        assert!(RefineParams::default().validate().is_ok());
        let p: RefineParams = serde_json::from_str(r#"{"kde_bandwidth": 0.2, "gap_threshold": 0.5}"#).unwrap();
        assert_eq!(p.kde_bandwidth, Bandwidth::Fixed(0.2));
        assert_eq!(p.min_cluster_points, 5);
        let p: RefineParams = serde_json::from_str(r#"{"kde_bandwidth": "auto"}"#).unwrap();
        assert_eq!(p.kde_bandwidth, Bandwidth::Auto);
        let bad = RefineParams {
            gap_threshold: -1.0,
            ..RefineParams::default()
        };
        assert!(matches!(bad.validate(), Err(RefineError::Params { key: "gap_threshold", .. })));
    }
}
