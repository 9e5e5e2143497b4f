use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::GroundTruth;
use crate::estimators::{total_variation, StateEstimate};
use crate::geometry::Superframe;
use crate::refine::FrameRefinement;
use crate::track::AnnotatedBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for track {0}")]
    UnknownTrack(u64),
    #[error("track {track_id}: no ground-truth frame within half a frame of t = {t}")]
    Misaligned { track_id: u64, t: f64 },
    #[error("{what}: {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("frame {frame_id} has {points} points but {labels} labels")]
    LabelMismatch { frame_id: u64, points: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedMetrics {
    pub track_id: u64,
    pub method: String,
    pub speed_rmse: f64,
    pub speed_tv: f64,
    /// RMSE of the distance error after removing its mean; the distance
    /// origin of an estimate is arbitrary.
    pub position_rmse: f64,
    pub times: Vec<f64>,
    pub speed_error: Vec<f64>,
    pub position_error: Vec<f64>,
}

/// Scores one estimate against the true speeds and path distances of its
/// agent. `times[k]` is the reference time of `estimate.states[k]`.
pub fn evaluate_speed(
    track_id: u64,
    method: &str,
    times: &[f64],
    estimate: &StateEstimate,
    gt: &GroundTruth,
) -> Result<SpeedMetrics, EvalError> {
    if times.len() != estimate.states.len() {
        return Err(EvalError::LengthMismatch {
            what: "estimate states",
            expected: times.len(),
            got: estimate.states.len(),
        });
    }
    let agent = gt.agent(track_id).ok_or(EvalError::UnknownTrack(track_id))?;
    let mut speed_error = Vec::with_capacity(times.len());
    let mut position_error = Vec::with_capacity(times.len());
    for (&t, x) in times.iter().zip(&estimate.states) {
        let st = agent
            .states
            .iter()
            .find(|s| (s.t - t).abs() <= gt.delta_t / 2.0)
            .ok_or(EvalError::Misaligned { track_id, t })?;
        speed_error.push(x.s - st.speed);
        position_error.push(x.d - st.distance);
    }
    if !position_error.is_empty() {
        let offset = position_error.iter().sum::<f64>() / position_error.len() as f64;
        position_error.iter_mut().for_each(|e| *e -= offset);
    }
    Ok(SpeedMetrics {
        track_id,
        method: method.to_string(),
        speed_rmse: rms(&speed_error),
        speed_tv: total_variation(&estimate.speeds()),
        position_rmse: rms(&position_error),
        times: times.to_vec(),
        speed_error,
        position_error,
    })
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}

/// One pseudo box as read back from a refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedBox {
    pub bbox: AnnotatedBox,
    /// Superframe indices of the view the box was fitted to.
    pub cluster_points: Option<Vec<usize>>,
}

/// Refinement output of one annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedFrame {
    pub original: AnnotatedBox,
    pub pseudo: Vec<RefinedBox>,
}

impl RefinedFrame {
    pub fn from_refinement(original: &AnnotatedBox, r: &FrameRefinement) -> Self {
        Self {
            original: original.clone(),
            pseudo: r
                .pseudo_boxes
                .iter()
                .map(|p| RefinedBox {
                    bbox: p.bbox.clone(),
                    cluster_points: p.source_cluster.map(|c| r.clusters[c].point_indices.clone()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub track_id: u64,
    pub frame_id: u64,
    pub t_star: f64,
    pub pseudo_count: usize,
    pub view_count: usize,
    /// Smallest share of a source view's points inside its pseudo box.
    pub containment_min: Option<f64>,
    /// Share of the agent's points inside at least one pseudo box.
    pub coverage_union: Option<f64>,
    /// Share of the agent's points inside the original annotation.
    pub coverage_original: Option<f64>,
    /// Median distance from each pseudo box center to the nearest true view
    /// box center.
    pub center_error_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub frames: usize,
    /// Frames whose pseudo box count equals the true view count.
    pub count_match_rate: f64,
    pub containment_min: Option<f64>,
    pub containment_mean: Option<f64>,
    /// Frames where the pseudo boxes cover at least as many agent points as
    /// the original box.
    pub coverage_not_worse_rate: f64,
    pub center_error_median: Option<f64>,
}

fn share(total: usize, hits: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-frame containment, coverage, view count and center error of refined
/// boxes. `superframes` must be the ones the ground-truth labels index.
pub fn evaluate_refinement(
    frames: &[RefinedFrame],
    superframes: &[Superframe],
    gt: &GroundTruth,
) -> Result<(Vec<FrameMetrics>, RefineSummary), EvalError> {
    let mut out = Vec::with_capacity(frames.len());
    let mut all_center_errors = Vec::new();
    for rf in frames {
        let track_id = rf.original.track_id;
        let t = rf.original.t_star;
        let truth = gt.frame_at(t).ok_or(EvalError::Misaligned { track_id, t })?;
        let sf = superframes
            .iter()
            .find(|s| (s.t_star - truth.t_star).abs() <= gt.delta_t / 2.0)
            .ok_or(EvalError::Misaligned { track_id, t })?;
        if sf.points.len() != truth.labels.len() {
            return Err(EvalError::LabelMismatch {
                frame_id: truth.frame_id,
                points: sf.points.len(),
                labels: truth.labels.len(),
            });
        }

        let mut containment: Option<f64> = None;
        for b in &rf.pseudo {
            if let Some(idx) = &b.cluster_points {
                let inside = idx.iter().filter(|&&i| b.bbox.contains(&sf.points[i].position)).count();
                if let Some(c) = share(idx.len(), inside) {
                    containment = Some(containment.map_or(c, |m: f64| m.min(c)));
                }
            }
        }

        let agent_points: Vec<usize> = truth
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(track_id))
            .map(|(i, _)| i)
            .collect();
        let union_hits = agent_points
            .iter()
            .filter(|&&i| rf.pseudo.iter().any(|b| b.bbox.contains(&sf.points[i].position)))
            .count();
        let original_hits = agent_points
            .iter()
            .filter(|&&i| rf.original.contains(&sf.points[i].position))
            .count();

        let views: Vec<_> = truth.views.iter().filter(|v| v.agent_id == track_id).collect();
        let errors: Vec<f64> = rf
            .pseudo
            .iter()
            .filter_map(|b| {
                views
                    .iter()
                    .map(|v| (b.bbox.center - v.center).norm())
                    .min_by(f64::total_cmp)
            })
            .collect();
        all_center_errors.extend(&errors);

        out.push(FrameMetrics {
            track_id,
            frame_id: truth.frame_id,
            t_star: truth.t_star,
            pseudo_count: rf.pseudo.len(),
            view_count: views.len(),
            containment_min: containment,
            coverage_union: share(agent_points.len(), union_hits),
            coverage_original: share(agent_points.len(), original_hits),
            center_error_median: median(errors),
        });
    }

    let n = out.len();
    let rate = |hits: usize| if n == 0 { 1.0 } else { hits as f64 / n as f64 };
    let contained: Vec<f64> = out.iter().filter_map(|f| f.containment_min).collect();
    let summary = RefineSummary {
        frames: n,
        count_match_rate: rate(out.iter().filter(|f| f.pseudo_count == f.view_count).count()),
        containment_min: contained.iter().copied().reduce(f64::min),
        containment_mean: (!contained.is_empty()).then(|| contained.iter().sum::<f64>() / contained.len() as f64),
        coverage_not_worse_rate: rate(
            out.iter()
                .filter(|f| f.coverage_union.unwrap_or(1.0) >= f.coverage_original.unwrap_or(1.0))
                .count(),
        ),
        center_error_median: median(all_center_errors),
    };
    Ok((out, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub speed: Vec<SpeedMetrics>,
    pub frames: Vec<FrameMetrics>,
    pub refine: Option<RefineSummary>,
}

/// Speed metrics for every `(track_id, method, times, estimate)` and, when
/// refinement output is given, the refinement metrics.
pub fn evaluate(
    estimates: &[(u64, String, Vec<f64>, StateEstimate)],
    refined: Option<&[RefinedFrame]>,
    superframes: &[Superframe],
    gt: &GroundTruth,
) -> Result<MetricsReport, EvalError> {
    let speed = estimates
        .iter()
        .map(|(id, method, times, est)| evaluate_speed(*id, method, times, est, gt))
        .collect::<Result<Vec<_>, _>>()?;
    let (frames, refine) = match refined {
        Some(r) => {
            let (f, s) = evaluate_refinement(r, superframes, gt)?;
            (f, Some(s))
        }
        None => (Vec::new(), None),
    };
    Ok(MetricsReport { speed, frames, refine })
}
