//! On-disk formats.
//!
//! | file | content |
//! |------|---------|
//! | `points.csv` | `x,y,z,timestamp,sensor_id,frame_id`, sensor-frame positions |
//! | `poses.csv` | `t,tx,ty,tz,qw,qx,qy,qz`, world-from-vehicle poses |
//! | `calib.json` | `{"<sensor_id>": {"translation": [3], "quaternion": [w,x,y,z]}}` |
//! | `tracks.jsonl` | one annotated box per line |
//! | `gt.jsonl` | agent states, true views and point labels, tagged by `kind` |
//! | `estimates.csv` | `t,d,s,method,track_id` |
//! | `refined.jsonl` | one pseudo box per line |
//! | `manifest.json` | scenario config, seed and frame timing |
//!
//! Every float written goes through [`round_sig`], nine significant digits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{Method, StateEstimate};
use crate::geometry::{build_superframe, Calibration, GeometryError, PoseTrajectory, RigidTransform, Superframe, TimedPoint};
use crate::refine::{FrameRefinement, FrameStatus};
use crate::synth::{AgentState, AgentTruth, FrameTruth, GroundTruth, RefinedBox, RefinedFrame, Scenario, ScenarioConfig, ViewTruth};
use crate::track::{AnnotatedBox, AnnotatedTrack, BoxFrame, KinematicState, TrackError};

pub const POINTS_FILE: &str = "points.csv";
pub const POSES_FILE: &str = "poses.csv";
pub const CALIB_FILE: &str = "calib.json";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const GT_FILE: &str = "gt.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Track { path: PathBuf, source: TrackError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        IoError::Csv {
            path: path.to_owned(),
            source,
        }
    }

    fn json(path: &Path, line: usize, source: serde_json::Error) -> Self {
        IoError::Json {
            path: path.to_owned(),
            line,
            source,
        }
    }

    fn format(path: &Path, reason: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_owned(),
            reason: reason.into(),
        }
    }
}

/// Rounds to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of `round_sig(x)`.
pub fn format_f64(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round3(v: &Vector3<f64>) -> [f64; 3] {
    [round_sig(v.x), round_sig(v.y), round_sig(v.z)]
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

fn finish(path: &Path, mut w: impl Write) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut w = create(path)?;
    for (i, r) in records.into_iter().enumerate() {
        serde_json::to_writer(&mut w, &r).map_err(|e| IoError::json(path, i + 1, e))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    finish(path, w)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::json(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::json(path, 0, e))?;
    w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::json(path, e.line(), e))
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| IoError::csv(path, e))?;
    Ok(w)
}

fn csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    csv::Reader::from_reader(open(path)?)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| IoError::csv(path, e))
}

// ---------------------------------------------------------------- points

#[derive(Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
    timestamp: f64,
    sensor_id: u32,
    frame_id: u64,
}

pub fn write_points_csv<'a>(path: &Path, points: impl IntoIterator<Item = &'a TimedPoint>) -> Result<(), IoError> {
    let mut w = csv_writer(path, &["x", "y", "z", "timestamp", "sensor_id", "frame_id"])?;
    for p in points {
        w.write_record([
            format_f64(p.position.x),
            format_f64(p.position.y),
            format_f64(p.position.z),
            format_f64(p.timestamp),
            p.sensor_id.to_string(),
            p.frame_id.to_string(),
        ])
        .map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_points_csv(path: &Path) -> Result<Vec<TimedPoint>, IoError> {
    Ok(csv_rows::<PointRow>(path)?
        .into_iter()
        .map(|r| TimedPoint::new(Vector3::new(r.x, r.y, r.z), r.timestamp, r.sensor_id, r.frame_id))
        .collect())
}

// ---------------------------------------------------------------- poses

#[derive(Deserialize)]
struct PoseRow {
    t: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

pub fn write_poses_csv(path: &Path, traj: &PoseTrajectory) -> Result<(), IoError> {
    let mut w = csv_writer(path, &["t", "tx", "ty", "tz", "qw", "qx", "qy", "qz"])?;
    for (t, pose) in traj.knots() {
        let tr = pose.translation();
        let q = pose.quaternion();
        let row = [*t, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]].map(format_f64);
        w.write_record(row).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_poses_csv(path: &Path) -> Result<PoseTrajectory, IoError> {
    let knots = csv_rows::<PoseRow>(path)?
        .into_iter()
        .map(|r| {
            let q = [r.qw, r.qx, r.qy, r.qz];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(IoError::format(path, format!("zero quaternion at t = {}", r.t)));
            }
            // quaternions are stored rounded; renormalize
            let q = q.map(|v| v / norm);
            Ok((r.t, RigidTransform::from_quaternion(q, Vector3::new(r.tx, r.ty, r.tz))?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PoseTrajectory::new(knots)?)
}

// ---------------------------------------------------------------- calibration

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibEntry {
    translation: [f64; 3],
    quaternion: [f64; 4],
}

pub fn write_calib_json(path: &Path, calib: &Calibration) -> Result<(), IoError> {
    let entries: BTreeMap<String, CalibEntry> = calib
        .iter()
        .map(|(id, t)| {
            (
                id.to_string(),
                CalibEntry {
                    translation: round3(t.translation()),
                    quaternion: t.quaternion().map(round_sig),
                },
            )
        })
        .collect();
    write_json(path, &entries)
}

pub fn read_calib_json(path: &Path) -> Result<Calibration, IoError> {
    let entries: BTreeMap<String, CalibEntry> = read_json(path)?;
    entries
        .into_iter()
        .map(|(id, e)| {
            let id: u32 = id
                .parse()
                .map_err(|_| IoError::format(path, format!("sensor id `{id}` is not an integer")))?;
            let norm = e.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
            let q = e.quaternion.map(|v| v / norm);
            Ok((id, RigidTransform::from_quaternion(q, Vector3::from(e.translation))?))
        })
        .collect()
}

// ---------------------------------------------------------------- boxes

/// One annotated box as stored in `tracks.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub track_id: u64,
    pub t_star: f64,
    pub frame: BoxFrame,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl From<&AnnotatedBox> for BoxRecord {
    fn from(b: &AnnotatedBox) -> Self {
        Self {
            track_id: b.track_id,
            t_star: round_sig(b.t_star),
            frame: b.frame,
            center: round3(&b.center),
            dims: b.dims.map(round_sig),
            heading: round_sig(b.heading),
            class: b.class.clone(),
        }
    }
}

impl From<&BoxRecord> for AnnotatedBox {
    fn from(r: &BoxRecord) -> Self {
        Self {
            track_id: r.track_id,
            t_star: r.t_star,
            frame: r.frame,
            center: Vector3::from(r.center),
            dims: r.dims,
            heading: r.heading,
            class: r.class.clone(),
        }
    }
}

pub fn write_tracks_jsonl<'a>(path: &Path, tracks: impl IntoIterator<Item = &'a AnnotatedTrack>) -> Result<(), IoError> {
    write_jsonl(
        path,
        tracks
            .into_iter()
            .flat_map(|t| t.boxes().iter().map(BoxRecord::from)),
    )
}

/// Groups boxes by track id, sorts each track by time and validates it.
/// Without `delta_t` the spacing is the median gap of each track.
pub fn read_tracks_jsonl(path: &Path, delta_t: Option<f64>) -> Result<Vec<AnnotatedTrack>, IoError> {
    let (tracks, rejected) = read_tracks_jsonl_lenient(path, delta_t)?;
    match rejected.into_iter().next() {
        Some((_, source)) => Err(IoError::Track {
            path: path.to_owned(),
            source,
        }),
        None => Ok(tracks),
    }
}

/// Track id and the reason its boxes do not form a valid track.
pub type RejectedTrack = (u64, TrackError);

/// Like [`read_tracks_jsonl`] but returns tracks that fail validation
/// separately instead of failing.
pub fn read_tracks_jsonl_lenient(
    path: &Path,
    delta_t: Option<f64>,
) -> Result<(Vec<AnnotatedTrack>, Vec<RejectedTrack>), IoError> {
    let mut by_id: BTreeMap<u64, Vec<AnnotatedBox>> = BTreeMap::new();
    for r in read_jsonl::<BoxRecord>(path)? {
        by_id.entry(r.track_id).or_default().push(AnnotatedBox::from(&r));
    }
    let mut tracks = Vec::new();
    let mut rejected = Vec::new();
    for (id, mut boxes) in by_id {
        boxes.sort_by(|a, b| a.t_star.total_cmp(&b.t_star));
        let dt = delta_t.unwrap_or_else(|| median_gap(&boxes));
        match AnnotatedTrack::new(boxes, dt) {
            Ok(t) => tracks.push(t),
            Err(e) => rejected.push((id, e)),
        }
    }
    Ok((tracks, rejected))
}

fn median_gap(boxes: &[AnnotatedBox]) -> f64 {
    let mut gaps: Vec<f64> = boxes.windows(2).map(|w| w[1].t_star - w[0].t_star).collect();
    if gaps.is_empty() {
        return f64::NAN;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

// ---------------------------------------------------------------- estimates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: f64,
    pub d: f64,
    pub s: f64,
    pub method: Method,
    pub track_id: u64,
}

pub fn estimate_rows(track_id: u64, method: Method, times: &[f64], est: &StateEstimate) -> Vec<EstimateRow> {
    times
        .iter()
        .zip(&est.states)
        .map(|(&t, x)| EstimateRow {
            t,
            d: x.d,
            s: x.s,
            method,
            track_id,
        })
        .collect()
}

pub fn write_estimates_csv(path: &Path, rows: &[EstimateRow]) -> Result<(), IoError> {
    let mut w = csv_writer(path, &["t", "d", "s", "method", "track_id"])?;
    for r in rows {
        w.write_record([
            format_f64(r.t),
            format_f64(r.d),
            format_f64(r.s),
            r.method.name().to_string(),
            r.track_id.to_string(),
        ])
        .map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<EstimateRow>, IoError> {
    csv_rows(path)
}

/// Rows of one `(track_id, method)` as times and a state estimate, sorted
/// by time.
pub fn collect_estimate(rows: &[EstimateRow], track_id: u64, method: Method) -> Option<(Vec<f64>, StateEstimate)> {
    let mut mine: Vec<&EstimateRow> = rows
        .iter()
        .filter(|r| r.track_id == track_id && r.method == method)
        .collect();
    if mine.is_empty() {
        return None;
    }
    mine.sort_by(|a, b| a.t.total_cmp(&b.t));
    let times = mine.iter().map(|r| r.t).collect();
    let states = mine.iter().map(|r| KinematicState::new(r.d, r.s)).collect();
    Some((times, StateEstimate::from_states(states)))
}

// ---------------------------------------------------------------- refined boxes

/// One pseudo box as stored in `refined.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRecord {
    #[serde(flatten)]
    pub bbox: BoxRecord,
    pub pseudo_index: usize,
    /// View index within the frame; null when the original box was kept.
    pub source_cluster: Option<usize>,
    pub applied_shift: [f64; 3],
    pub anchored: bool,
    pub dominant_sensor: Option<u32>,
    pub status: FrameStatus,
    /// Superframe point indices of the source view.
    #[serde(default)]
    pub cluster_points: Vec<usize>,
}

pub fn refined_records(refs: &[FrameRefinement]) -> Vec<RefinedRecord> {
    let mut out = Vec::new();
    for r in refs {
        for (i, p) in r.pseudo_boxes.iter().enumerate() {
            out.push(RefinedRecord {
                bbox: BoxRecord::from(&p.bbox),
                pseudo_index: i,
                source_cluster: p.source_cluster,
                applied_shift: round3(&p.applied_shift),
                anchored: p.anchored,
                dominant_sensor: p.dominant_sensor,
                status: r.status,
                cluster_points: p
                    .source_cluster
                    .map(|c| r.clusters[c].point_indices.clone())
                    .unwrap_or_default(),
            });
        }
    }
    out
}

pub fn write_refined_jsonl(path: &Path, records: &[RefinedRecord]) -> Result<(), IoError> {
    write_jsonl(path, records)
}

pub fn read_refined_jsonl(path: &Path) -> Result<Vec<RefinedRecord>, IoError> {
    read_jsonl(path)
}

/// Pairs refined records with the original annotations they came from.
pub fn refined_frames(records: &[RefinedRecord], tracks: &[AnnotatedTrack], delta_t: f64) -> Result<Vec<RefinedFrame>, String> {
    let mut out = Vec::new();
    for track in tracks {
        for b in track.boxes() {
            let pseudo: Vec<RefinedBox> = records
                .iter()
                .filter(|r| r.bbox.track_id == b.track_id && (r.bbox.t_star - b.t_star).abs() <= delta_t / 2.0)
                .map(|r| RefinedBox {
                    bbox: AnnotatedBox::from(&r.bbox),
                    cluster_points: r.source_cluster.map(|_| r.cluster_points.clone()),
                })
                .collect();
            if pseudo.is_empty() {
                return Err(format!("no refined boxes for track {} at t = {}", b.track_id, b.t_star));
            }
            out.push(RefinedFrame {
                original: b.clone(),
                pseudo,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GtRecord {
    Agent {
        agent_id: u64,
        dims: [f64; 3],
        class: Option<String>,
    },
    AgentState {
        agent_id: u64,
        t: f64,
        center: [f64; 3],
        heading: f64,
        speed: f64,
        distance: f64,
    },
    View {
        frame_id: u64,
        per_sensor: bool,
        agent_id: u64,
        sensor_ids: Vec<u32>,
        dominant_sensor: u32,
        point_count: usize,
        mean_tau: f64,
        span: [f64; 2],
        center: [f64; 3],
        heading: f64,
    },
    Labels {
        frame_id: u64,
        t_star: f64,
        agent_ids: Vec<Option<u64>>,
    },
}

fn view_record(frame_id: u64, per_sensor: bool, v: &ViewTruth) -> GtRecord {
    GtRecord::View {
        frame_id,
        per_sensor,
        agent_id: v.agent_id,
        sensor_ids: v.sensor_ids.clone(),
        dominant_sensor: v.dominant_sensor,
        point_count: v.point_count,
        mean_tau: round_sig(v.mean_tau),
        span: v.span.map(round_sig),
        center: round3(&v.center),
        heading: round_sig(v.heading),
    }
}

pub fn gt_records(gt: &GroundTruth) -> Vec<GtRecord> {
    let mut out = Vec::new();
    for a in &gt.agents {
        out.push(GtRecord::Agent {
            agent_id: a.agent_id,
            dims: a.dims.map(round_sig),
            class: a.class.clone(),
        });
        out.extend(a.states.iter().map(|s| GtRecord::AgentState {
            agent_id: a.agent_id,
            t: round_sig(s.t),
            center: round3(&s.center),
            heading: round_sig(s.heading),
            speed: round_sig(s.speed),
            distance: round_sig(s.distance),
        }));
    }
    for f in &gt.frames {
        out.push(GtRecord::Labels {
            frame_id: f.frame_id,
            t_star: round_sig(f.t_star),
            agent_ids: f.labels.clone(),
        });
        out.extend(f.views.iter().map(|v| view_record(f.frame_id, false, v)));
        out.extend(f.sensor_views.iter().map(|v| view_record(f.frame_id, true, v)));
    }
    out
}

pub fn write_gt_jsonl(path: &Path, gt: &GroundTruth) -> Result<(), IoError> {
    write_jsonl(path, gt_records(gt))
}

pub fn read_gt_jsonl(
    path: &Path,
    ego_traj: PoseTrajectory,
    calibration: Calibration,
    delta_t: f64,
) -> Result<GroundTruth, IoError> {
    let mut agents: BTreeMap<u64, AgentTruth> = BTreeMap::new();
    let mut frames: BTreeMap<u64, FrameTruth> = BTreeMap::new();
    let mut views = Vec::new();
    for rec in read_jsonl::<GtRecord>(path)? {
        match rec {
            GtRecord::Agent { agent_id, dims, class } => {
                agents.insert(
                    agent_id,
                    AgentTruth {
                        agent_id,
                        dims,
                        class,
                        states: Vec::new(),
                    },
                );
            }
            GtRecord::AgentState {
                agent_id,
                t,
                center,
                heading,
                speed,
                distance,
            } => agents
                .get_mut(&agent_id)
                .ok_or_else(|| IoError::format(path, format!("state for undeclared agent {agent_id}")))?
                .states
                .push(AgentState {
                    t,
                    center: Vector3::from(center),
                    heading,
                    speed,
                    distance,
                }),
            GtRecord::Labels {
                frame_id,
                t_star,
                agent_ids,
            } => {
                frames.insert(
                    frame_id,
                    FrameTruth {
                        frame_id,
                        t_star,
                        views: Vec::new(),
                        sensor_views: Vec::new(),
                        labels: agent_ids,
                    },
                );
            }
            GtRecord::View {
                frame_id,
                per_sensor,
                agent_id,
                sensor_ids,
                dominant_sensor,
                point_count,
                mean_tau,
                span,
                center,
                heading,
            } => views.push((
                frame_id,
                per_sensor,
                ViewTruth {
                    agent_id,
                    sensor_ids,
                    dominant_sensor,
                    point_count,
                    mean_tau,
                    span,
                    center: Vector3::from(center),
                    heading,
                },
            )),
        }
    }
    for (frame_id, per_sensor, v) in views {
        let f = frames
            .get_mut(&frame_id)
            .ok_or_else(|| IoError::format(path, format!("view for undeclared frame {frame_id}")))?;
        if per_sensor {
            f.sensor_views.push(v);
        } else {
            f.views.push(v);
        }
    }
    Ok(GroundTruth {
        ego_traj,
        calibration,
        delta_t,
        agents: agents.into_values().collect(),
        frames: frames.into_values().collect(),
    })
}

// ---------------------------------------------------------------- bundle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub frames: usize,
    pub frame_rate: f64,
    pub delta_t: f64,
    /// Start of frame 0; frame `k` covers `[start_time + k dt, start_time + (k + 1) dt]`.
    pub start_time: f64,
    pub points: usize,
    pub files: Vec<String>,
    pub config: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
}

/// Writes a scenario bundle into `dir`. `created` goes into the manifest
/// verbatim when given.
pub fn write_bundle(
    dir: &Path,
    scenario: &Scenario,
    tracks: &[AnnotatedTrack],
    created: Option<String>,
) -> Result<Manifest, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let points: Vec<&TimedPoint> = scenario.scans.iter().flatten().flatten().collect();
    write_points_csv(&dir.join(POINTS_FILE), points.iter().copied())?;
    write_poses_csv(&dir.join(POSES_FILE), &scenario.truth.ego_traj)?;
    write_calib_json(&dir.join(CALIB_FILE), &scenario.truth.calibration)?;
    write_tracks_jsonl(&dir.join(TRACKS_FILE), tracks)?;
    write_gt_jsonl(&dir.join(GT_FILE), &scenario.truth)?;
    let cfg = &scenario.config;
    let manifest = Manifest {
        generator: format!("boxrefine {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.rng_seed,
        frames: cfg.frame_count(),
        frame_rate: cfg.frame_rate,
        delta_t: cfg.delta_t(),
        start_time: 0.0,
        points: points.len(),
        files: [POINTS_FILE, POSES_FILE, CALIB_FILE, TRACKS_FILE, GT_FILE]
            .map(String::from)
            .to_vec(),
        config: cfg.clone(),
        created,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Everything read back from a bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub ego_traj: PoseTrajectory,
    pub calibration: Calibration,
    pub points: Vec<TimedPoint>,
    pub tracks: Vec<AnnotatedTrack>,
    /// Tracks in `tracks.jsonl` that failed validation.
    pub rejected: Vec<RejectedTrack>,
}

impl Bundle {
    pub fn read(dir: &Path) -> Result<Self, IoError> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        let (tracks, rejected) = read_tracks_jsonl_lenient(&dir.join(TRACKS_FILE), Some(manifest.delta_t))?;
        Ok(Self {
            dir: dir.to_owned(),
            ego_traj: read_poses_csv(&dir.join(POSES_FILE))?,
            calibration: read_calib_json(&dir.join(CALIB_FILE))?,
            points: read_points_csv(&dir.join(POINTS_FILE))?,
            tracks,
            rejected,
            manifest,
        })
    }

    /// Ground truth, or `None` when the bundle has no `gt.jsonl`.
    pub fn ground_truth(&self) -> Result<Option<GroundTruth>, IoError> {
        let path = self.dir.join(GT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        read_gt_jsonl(&path, self.ego_traj.clone(), self.calibration.clone(), self.manifest.delta_t).map(Some)
    }

    /// One superframe per frame id, points in file order.
    pub fn superframes(&self) -> Result<Vec<Superframe>, IoError> {
        superframes_from_points(
            &self.points,
            &self.ego_traj,
            &self.calibration,
            self.manifest.start_time,
            self.manifest.delta_t,
            self.manifest.frames,
        )
    }
}

/// Groups points by frame id and deskews every frame. Frames without points
/// give empty superframes.
pub fn superframes_from_points(
    points: &[TimedPoint],
    traj: &PoseTrajectory,
    calib: &Calibration,
    start_time: f64,
    delta_t: f64,
    frames: usize,
) -> Result<Vec<Superframe>, IoError> {
    let mut by_frame: Vec<Vec<TimedPoint>> = vec![Vec::new(); frames];
    for p in points {
        let slot = by_frame.get_mut(p.frame_id as usize).ok_or_else(|| {
            IoError::format(
                Path::new(POINTS_FILE),
                format!("frame id {} beyond the {frames} frames of the bundle", p.frame_id),
            )
        })?;
        slot.push(*p);
    }
    by_frame
        .iter()
        .enumerate()
        .map(|(k, pts)| {
            let t = start_time + k as f64 * delta_t;
            Ok(build_superframe([pts.as_slice()], traj, calib, t, delta_t)?)
        })
        .collect()
}
