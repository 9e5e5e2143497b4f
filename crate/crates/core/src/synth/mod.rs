//! Synthetic multi-LiDAR scenarios with ground truth.
//!
//! The ego vehicle drives along +x. Each sensor is a spinning LiDAR whose
//! beam azimuth advances uniformly over its sweep period, so a point's
//! timestamp is set by the azimuth at which the sensor sees it. Agents are
//! boxes whose visible faces are sampled on a jittered grid; every sample is
//! timestamped by solving for the moment the beam crosses it while both the
//! ego and the agent move.

mod annotate;
mod eval;
pub mod motion;
pub mod presets;

pub use annotate::corrupt_annotations;
pub use eval::{
    evaluate, evaluate_refinement, evaluate_speed, EvalError, FrameMetrics, MetricsReport, RefineSummary,
    RefinedBox, RefinedFrame, SpeedMetrics,
};
pub use motion::{AgentMotion, Profile};

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{build_superframe, Calibration, GeometryError, PoseTrajectory, RigidTransform, Superframe, TimedPoint};
use crate::track::heading_axis;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario config `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Track(#[from] crate::track::TrackError),
}

fn config_error(key: impl Into<String>, reason: impl Into<String>) -> SynthError {
    SynthError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mount {
    pub translation: [f64; 3],
    /// `[w, x, y, z]`
    #[serde(default = "identity_quaternion")]
    pub quaternion: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Mount {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation: [x, y, z],
            quaternion: identity_quaternion(),
        }
    }

    pub fn transform(&self) -> Result<RigidTransform, GeometryError> {
        RigidTransform::from_quaternion(self.quaternion, Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub mount: Mount,
    #[serde(default = "default_sweep_period")]
    pub sweep_period: f64,
    /// Beam azimuth in the sensor frame at the start of every sweep.
    #[serde(default)]
    pub azimuth_offset: f64,
    /// Background returns per sweep.
    #[serde(default = "default_rays")]
    pub rays_per_sweep: usize,
}

fn default_sweep_period() -> f64 {
    0.1
}

fn default_rays() -> usize {
    180
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// World-frame box center at time 0.
    pub init_pos: [f64; 3],
    /// length, width, height
    pub dims: [f64; 3],
    pub speed_profile: Profile,
    #[serde(default = "zero_profile")]
    pub heading_profile: Profile,
    #[serde(default)]
    pub class: Option<String>,
    /// Sensors that never see this agent.
    #[serde(default)]
    pub hidden_from: Vec<u32>,
}

fn zero_profile() -> Profile {
    Profile::constant(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub frame_rate: f64,
    pub ego_speed_profile: Profile,
    pub agents: Vec<AgentConfig>,
    /// Sensor `i` gets id `i`.
    pub sensors: Vec<SensorConfig>,
    /// Static world points.
    pub landmarks: Vec<[f64; 3]>,
    pub annotation_noise_sigma: f64,
    pub view_bias: bool,
    pub rng_seed: u64,
    /// Grid spacing of surface samples, meters.
    pub point_spacing: f64,
    /// Uniform jitter of surface samples in units of the grid spacing.
    pub surface_jitter: f64,
    pub max_range: f64,
    /// Range of the background ring returns, meters.
    pub background_range: f64,
    /// Views of one agent closer than this along its heading count as one.
    pub view_gap: f64,
    /// Smallest point group that counts as a view.
    pub min_view_points: usize,
}

impl Default for ScenarioConfig {
    /// Three front sensors sweeping 40 ms apart behind a 30 m/s car in the
    /// ego lane. Only the car's rear is visible, so every sensor contributes
    /// one separate view. Annotations are exact apart from the view bias.
    fn default() -> Self {
        let sensor = |y: f64, frac: f64| SensorConfig {
            mount: Mount::at(3.5, y, 1.2),
            sweep_period: 0.1,
            // the straight-ahead direction is reached `frac` into the sweep
            azimuth_offset: -frac * TAU,
            rays_per_sweep: default_rays(),
        };
        Self {
            duration: 10.0,
            frame_rate: 10.0,
            ego_speed_profile: Profile::constant(25.0),
            agents: vec![
                AgentConfig {
                    init_pos: [25.0, 0.0, 0.8],
                    dims: [4.5, 2.0, 1.6],
                    speed_profile: Profile::constant(30.0),
                    heading_profile: zero_profile(),
                    class: Some("car".into()),
                    hidden_from: Vec::new(),
                },
            ],
            sensors: vec![sensor(-0.6, 0.1), sensor(0.0, 0.5), sensor(0.6, 0.9)],
            landmarks: Vec::new(),
            annotation_noise_sigma: 0.0,
            view_bias: true,
            rng_seed: 0,
            point_spacing: 0.2,
            surface_jitter: 0.3,
            max_range: 120.0,
            background_range: 80.0,
            view_gap: 0.3,
            min_view_points: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn delta_t(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("duration", self.duration),
            ("frame_rate", self.frame_rate),
            ("point_spacing", self.point_spacing),
            ("max_range", self.max_range),
            ("background_range", self.background_range),
            ("view_gap", self.view_gap),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(key, format!("must be positive, got {v}")));
            }
        }
        if self.frame_count() < 1 {
            return Err(config_error("duration", "shorter than one frame"));
        }
        if !(self.annotation_noise_sigma >= 0.0 && self.annotation_noise_sigma.is_finite()) {
            return Err(config_error("annotation_noise_sigma", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.surface_jitter) {
            return Err(config_error("surface_jitter", "must lie in [0, 0.5)"));
        }
        if self.min_view_points == 0 {
            return Err(config_error("min_view_points", "must be at least 1"));
        }
        self.ego_speed_profile
            .validate()
            .map_err(|r| config_error("ego_speed_profile", r))?;
        if self.sensors.is_empty() {
            return Err(config_error("sensors", "need at least one sensor"));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if !(s.sweep_period > 0.0 && s.sweep_period.is_finite()) {
                return Err(config_error(format!("sensors[{i}].sweep_period"), "must be positive"));
            }
            if !s.azimuth_offset.is_finite() {
                return Err(config_error(format!("sensors[{i}].azimuth_offset"), "must be finite"));
            }
            if s.mount.translation.iter().any(|v| !v.is_finite()) {
                return Err(config_error(format!("sensors[{i}].mount"), "must be finite"));
            }
            s.mount
                .transform()
                .map_err(|e| config_error(format!("sensors[{i}].mount.quaternion"), e.to_string()))?;
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(config_error(format!("agents[{i}].dims"), "must be positive"));
            }
            if a.init_pos.iter().any(|v| !v.is_finite()) {
                return Err(config_error(format!("agents[{i}].init_pos"), "must be finite"));
            }
            a.speed_profile
                .validate()
                .map_err(|r| config_error(format!("agents[{i}].speed_profile"), r))?;
            a.heading_profile
                .validate()
                .map_err(|r| config_error(format!("agents[{i}].heading_profile"), r))?;
        }
        if self.landmarks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(config_error("landmarks", "must be finite"));
        }
        Ok(())
    }

    pub fn calibration(&self) -> Result<Calibration, SynthError> {
        self.sensors
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((i as u32, s.mount.transform()?)))
            .collect()
    }
}

/// True agent state at one frame reference time, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub t: f64,
    pub center: Vector3<f64>,
    pub heading: f64,
    pub speed: f64,
    /// Path distance since time 0.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub agent_id: u64,
    pub dims: [f64; 3],
    pub class: Option<String>,
    /// One state per frame.
    pub states: Vec<AgentState>,
}

/// Points of one agent seen as one contiguous group, with the true box at
/// the group's mean timestamp in the superframe's vehicle frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub agent_id: u64,
    pub sensor_ids: Vec<u32>,
    pub dominant_sensor: u32,
    pub point_count: usize,
    pub mean_tau: f64,
    /// Extent along the agent heading.
    pub span: [f64; 2],
    pub center: Vector3<f64>,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: u64,
    pub t_star: f64,
    /// Views after merging groups closer than the view gap, rear to front.
    pub views: Vec<ViewTruth>,
    /// One entry per (agent, sensor) that saw the agent.
    pub sensor_views: Vec<ViewTruth>,
    /// Agent id per superframe point, `None` for background.
    pub labels: Vec<Option<u64>>,
}

impl FrameTruth {
    pub fn view_count(&self, agent_id: u64) -> usize {
        self.views.iter().filter(|v| v.agent_id == agent_id).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub ego_traj: PoseTrajectory,
    pub calibration: Calibration,
    pub delta_t: f64,
    pub agents: Vec<AgentTruth>,
    pub frames: Vec<FrameTruth>,
}

impl GroundTruth {
    pub fn agent(&self, id: u64) -> Option<&AgentTruth> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    /// Frame whose reference time is within half a frame of `t`.
    pub fn frame_at(&self, t: f64) -> Option<&FrameTruth> {
        self.frames
            .iter()
            .find(|f| (f.t_star - t).abs() <= self.delta_t / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    /// `scans[frame][sensor]`, sensor-frame positions, time sorted.
    pub scans: Vec<Vec<Vec<TimedPoint>>>,
    pub superframes: Vec<Superframe>,
    pub motions: Vec<AgentMotion>,
}

/// Spacing of ego trajectory knots, seconds.
const EGO_KNOT_STEP: f64 = 0.01;
/// Time padding of the ego and agent tables around the scenario.
const TIME_PAD: f64 = 1.0;
const FIXED_POINT_ITERS: usize = 60;
const FIXED_POINT_TOL: f64 = 1e-12;

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let dt = cfg.delta_t();
    let frames = cfg.frame_count();
    let end = frames as f64 * dt;
    let ego = motion::ego_trajectory(&cfg.ego_speed_profile, -TIME_PAD, end + TIME_PAD, EGO_KNOT_STEP)?;
    let calibration = cfg.calibration()?;
    let motions: Vec<AgentMotion> = cfg
        .agents
        .iter()
        .map(|a| {
            AgentMotion::new(
                Vector3::from(a.init_pos),
                a.speed_profile.clone(),
                a.heading_profile.clone(),
                -TIME_PAD,
                end + TIME_PAD,
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut scans = Vec::with_capacity(frames);
    let mut superframes = Vec::with_capacity(frames);
    let mut frame_truths = Vec::with_capacity(frames);
    let mut seen = vec![false; cfg.agents.len()];

    for k in 0..frames {
        let t0 = k as f64 * dt;
        let t_star = t0 + dt / 2.0;
        let mut frame_scans = Vec::with_capacity(cfg.sensors.len());
        let mut labels = Vec::new();
        for (sid, sensor) in cfg.sensors.iter().enumerate() {
            let sid = sid as u32;
            let mount = calibration[&sid];
            let ctx = SensorContext {
                ego: &ego,
                mount: &mount,
                sensor,
                sensor_id: sid,
                frame: k as u64,
                t0,
                t1: t0 + dt,
                max_range: cfg.max_range,
            };
            let mut tagged: Vec<(TimedPoint, Option<u64>)> = Vec::new();
            for (aid, (agent, motion)) in cfg.agents.iter().zip(&motions).enumerate() {
                if agent.hidden_from.contains(&sid) {
                    continue;
                }
                let samples = surface_samples(agent, motion, &ctx, t_star, cfg, &mut rng)?;
                for local in samples {
                    let world = |tau: f64| motion.pose_at(tau).transform_point(&local);
                    for p in ctx.observe(world)? {
                        tagged.push((p, Some(aid as u64)));
                        seen[aid] = true;
                    }
                }
            }
            for lm in &cfg.landmarks {
                let w = Vector3::from(*lm);
                tagged.extend(ctx.observe(|_| w)?.into_iter().map(|p| (p, None)));
            }
            tagged.extend(ctx.background(cfg.background_range).into_iter().map(|p| (p, None)));
            tagged.sort_by(|a, b| a.0.timestamp.total_cmp(&b.0.timestamp));
            labels.extend(tagged.iter().map(|(_, l)| *l));
            frame_scans.push(tagged.into_iter().map(|(p, _)| p).collect::<Vec<_>>());
        }
        let sf = build_superframe(frame_scans.iter().map(|s| s.as_slice()), &ego, &calibration, t0, dt)?;
        let ego_star = ego.interpolate(t_star)?;
        let (views, sensor_views) = view_truth(cfg, &motions, &sf, &labels, &ego_star);
        frame_truths.push(FrameTruth {
            frame_id: k as u64,
            t_star,
            views,
            sensor_views,
            labels,
        });
        superframes.push(sf);
        scans.push(frame_scans);
    }
    for (aid, s) in seen.iter().enumerate() {
        if !s {
            log::warn!("agent {aid} is outside every sensor's view for the whole scenario");
        }
    }

    let agents = cfg
        .agents
        .iter()
        .zip(&motions)
        .enumerate()
        .map(|(aid, (a, m))| AgentTruth {
            agent_id: aid as u64,
            dims: a.dims,
            class: a.class.clone(),
            states: frame_truths
                .iter()
                .map(|f| AgentState {
                    t: f.t_star,
                    center: m.center_at(f.t_star),
                    heading: m.heading_at(f.t_star),
                    speed: m.speed_at(f.t_star),
                    distance: m.distance_at(f.t_star),
                })
                .collect(),
        })
        .collect();

    Ok(Scenario {
        config: cfg.clone(),
        truth: GroundTruth {
            ego_traj: ego,
            calibration,
            delta_t: dt,
            agents,
            frames: frame_truths,
        },
        scans,
        superframes,
        motions,
    })
}

struct SensorContext<'a> {
    ego: &'a PoseTrajectory,
    mount: &'a RigidTransform,
    sensor: &'a SensorConfig,
    sensor_id: u32,
    frame: u64,
    t0: f64,
    t1: f64,
    max_range: f64,
}

impl SensorContext<'_> {
    fn world_from_sensor(&self, t: f64) -> Result<RigidTransform, GeometryError> {
        Ok(self.ego.interpolate(t)? * *self.mount)
    }

    /// Timestamp at which the beam of sweep `j` points along sensor-frame
    /// azimuth `az`.
    fn beam_time(&self, j: i64, az: f64) -> f64 {
        let p = self.sensor.sweep_period;
        j as f64 * p + (az - self.sensor.azimuth_offset).rem_euclid(TAU) / TAU * p
    }

    fn sweeps(&self) -> std::ops::RangeInclusive<i64> {
        let p = self.sensor.sweep_period;
        ((self.t0 / p).floor() as i64 - 1)..=((self.t1 / p).floor() as i64)
    }

    /// Sensor-frame returns of a possibly moving world point, one per sweep
    /// whose beam crosses it inside the frame interval and within range.
    fn observe<F>(&self, world: F) -> Result<Vec<TimedPoint>, GeometryError>
    where
        F: Fn(f64) -> Vector3<f64>,
    {
        let mut out = Vec::new();
        for j in self.sweeps() {
            let mut tau = self.beam_time(j, 0.0) + 0.5 * self.sensor.sweep_period;
            let mut local = Vector3::zeros();
            let mut converged = false;
            for _ in 0..FIXED_POINT_ITERS {
                local = self.world_from_sensor(tau)?.inverse().transform_point(&world(tau));
                let next = self.beam_time(j, local.y.atan2(local.x));
                let step = (next - tau).abs();
                tau = next;
                if step <= FIXED_POINT_TOL {
                    local = self.world_from_sensor(tau)?.inverse().transform_point(&world(tau));
                    converged = true;
                    break;
                }
            }
            if converged && tau >= self.t0 && tau < self.t1 && local.norm() <= self.max_range {
                out.push(TimedPoint::new(local, tau, self.sensor_id, self.frame));
            }
        }
        Ok(out)
    }

    /// Ground returns at a fixed range, evenly spaced in azimuth.
    fn background(&self, range: f64) -> Vec<TimedPoint> {
        let rays = self.sensor.rays_per_sweep;
        let height = self.mount.translation().z;
        let mut out = Vec::new();
        for j in self.sweeps() {
            for i in 0..rays {
                let frac = (i as f64 + 0.5) / rays as f64;
                let tau = j as f64 * self.sensor.sweep_period + frac * self.sensor.sweep_period;
                if tau < self.t0 || tau >= self.t1 {
                    continue;
                }
                let az = self.sensor.azimuth_offset + frac * TAU;
                let p = Vector3::new(range * az.cos(), range * az.sin(), -height);
                out.push(TimedPoint::new(p, tau, self.sensor_id, self.frame));
            }
        }
        out
    }
}

/// Jittered grid samples on the faces of the agent box that face the
/// sensor at `t_star`, in box coordinates.
fn surface_samples(
    agent: &AgentConfig,
    motion: &AgentMotion,
    ctx: &SensorContext<'_>,
    t_star: f64,
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector3<f64>>, GeometryError> {
    let sensor = ctx.world_from_sensor(t_star)?.translation().to_owned();
    let eye = motion.pose_at(t_star).inverse().transform_point(&sensor);
    let half = [agent.dims[0] / 2.0, agent.dims[1] / 2.0, agent.dims[2] / 2.0];
    if (0..3).all(|i| eye[i].abs() <= half[i]) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    // (normal axis, sign); the bottom face is never seen
    let faces = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];
    for (axis, sign) in faces {
        if sign * eye[axis] <= half[axis] {
            continue;
        }
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let spacing = cfg.point_spacing;
        let jitter = cfg.surface_jitter;
        let mut shake = || if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
        let nu = (agent.dims[u] / spacing).ceil().max(1.0) as usize;
        let nv = (agent.dims[v] / spacing).ceil().max(1.0) as usize;
        let (du, dv) = (agent.dims[u] / nu as f64, agent.dims[v] / nv as f64);
        for i in 0..nu {
            for j in 0..nv {
                let mut p = Vector3::zeros();
                p[axis] = sign * half[axis];
                p[u] = -half[u] + du * (i as f64 + 0.5 + shake());
                p[v] = -half[v] + dv * (j as f64 + 0.5 + shake());
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Groups each agent's superframe points by gaps along its heading.
fn view_truth(
    cfg: &ScenarioConfig,
    motions: &[AgentMotion],
    sf: &Superframe,
    labels: &[Option<u64>],
    ego_star: &RigidTransform,
) -> (Vec<ViewTruth>, Vec<ViewTruth>) {
    let ego_inv = ego_star.inverse();
    let ego_yaw = ego_star.yaw();
    let mut views = Vec::new();
    let mut sensor_views = Vec::new();
    for (aid, motion) in motions.iter().enumerate() {
        let aid_u = aid as u64;
        let heading = crate::geometry::wrap_angle(motion.heading_at(sf.t_star) - ego_yaw);
        let axis = heading_axis(heading);
        let mut members: Vec<(f64, usize)> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(aid_u))
            .map(|(i, _)| (sf.points[i].position.dot(&axis), i))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let make = |group: &[(f64, usize)]| {
            let idx: Vec<usize> = group.iter().map(|g| g.1).collect();
            let mean_tau = idx.iter().map(|&i| sf.points[i].timestamp).sum::<f64>() / idx.len() as f64;
            let mut counts = std::collections::BTreeMap::<u32, usize>::new();
            for &i in &idx {
                *counts.entry(sf.points[i].sensor_id).or_default() += 1;
            }
            let dominant_sensor = counts
                .iter()
                .fold((0u32, 0usize), |best, (&id, &c)| if c > best.1 { (id, c) } else { best })
                .0;
            let lo = group.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
            let hi = group.iter().map(|g| g.0).fold(f64::NEG_INFINITY, f64::max);
            ViewTruth {
                agent_id: aid_u,
                sensor_ids: counts.keys().copied().collect(),
                dominant_sensor,
                point_count: idx.len(),
                mean_tau,
                span: [lo, hi],
                center: ego_inv.transform_point(&motion.center_at(mean_tau)),
                heading: crate::geometry::wrap_angle(motion.heading_at(mean_tau) - ego_yaw),
            }
        };

        let mut groups: Vec<Vec<(f64, usize)>> = Vec::new();
        for m in &members {
            match groups.last_mut() {
                Some(g) if m.0 - g[g.len() - 1].0 <= cfg.view_gap => g.push(*m),
                _ => groups.push(vec![*m]),
            }
        }
        views.extend(
            groups
                .iter()
                .filter(|g| g.len() >= cfg.min_view_points)
                .map(|g| make(g)),
        );

        for sid in 0..cfg.sensors.len() as u32 {
            let mine: Vec<(f64, usize)> = members
                .iter()
                .filter(|m| sf.points[m.1].sensor_id == sid)
                .copied()
                .collect();
            if !mine.is_empty() {
                sensor_views.push(make(&mine));
            }
        }
    }
    (views, sensor_views)
}
