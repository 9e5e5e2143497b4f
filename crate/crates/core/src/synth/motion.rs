//! Piecewise-linear profiles and the kinematics they drive.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, PoseTrajectory, RigidTransform};

/// Piecewise-linear function of time given as `[t, value]` knots, held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub Vec<[f64; 2]>);

impl Profile {
    pub fn constant(v: f64) -> Self {
        Profile(vec![[0.0, v]])
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.0.is_empty() {
            return Err("needs at least one [t, value] knot".into());
        }
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err("knots must be finite".into());
        }
        if let Some(i) = self.0.windows(2).position(|w| w[1][0] <= w[0][0]) {
            return Err(format!("knot times must increase (knot {})", i + 1));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.0;
        if t <= k[0][0] {
            return k[0][1];
        }
        if t >= k[k.len() - 1][0] {
            return k[k.len() - 1][1];
        }
        let i = k.partition_point(|p| p[0] <= t) - 1;
        let [t0, v0] = k[i];
        let [t1, v1] = k[i + 1];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|p| p[0])
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints().filter(|&t| t > a && t < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| 0.5 * (self.value(w[0]) + self.value(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

// 5-point Gauss-Legendre nodes and weights on [-1, 1]
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Longest integration step of the agent position table, seconds.
const TABLE_STEP: f64 = 0.05;

/// Ground-plane motion of one agent: speed along a heading that both follow
/// piecewise-linear profiles.
#[derive(Debug, Clone)]
pub struct AgentMotion {
    init: Vector3<f64>,
    speed: Profile,
    heading: Profile,
    /// `(t, planar offset, path distance)` from time 0
    table: Vec<(f64, [f64; 2], f64)>,
}

impl AgentMotion {
    /// Tabulates positions over `[t_min, t_max]`; queries outside are still
    /// valid but integrate from the nearest table end.
    pub fn new(init: Vector3<f64>, speed: Profile, heading: Profile, t_min: f64, t_max: f64) -> Self {
        let mut cuts: Vec<f64> = speed
            .breakpoints()
            .chain(heading.breakpoints())
            .filter(|&t| t > t_min && t < t_max)
            .chain([t_min, t_max, 0.0_f64.clamp(t_min, t_max)])
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut grid = Vec::new();
        for w in cuts.windows(2) {
            let pieces = ((w[1] - w[0]) / TABLE_STEP).ceil().max(1.0) as usize;
            for i in 0..pieces {
                grid.push(w[0] + (w[1] - w[0]) * i as f64 / pieces as f64);
            }
        }
        grid.push(t_max);

        let mut motion = Self {
            init,
            speed,
            heading,
            table: Vec::with_capacity(grid.len()),
        };
        // accumulate outwards from t = 0 so the origin entry is exact
        let zero = grid
            .iter()
            .position(|&t| t == 0.0_f64.clamp(t_min, t_max))
            .unwrap_or(0);
        let origin = if grid[zero] == 0.0 {
            ([0.0, 0.0], 0.0)
        } else {
            let (o, d) = motion.integrate(0.0, grid[zero]);
            (o, d)
        };
        let mut entries = vec![(grid[zero], origin.0, origin.1); grid.len()];
        for i in zero + 1..grid.len() {
            let (o, d) = motion.integrate(grid[i - 1], grid[i]);
            let p = entries[i - 1];
            entries[i] = (grid[i], [p.1[0] + o[0], p.1[1] + o[1]], p.2 + d);
        }
        for i in (0..zero).rev() {
            let (o, d) = motion.integrate(grid[i + 1], grid[i]);
            let p = entries[i + 1];
            entries[i] = (grid[i], [p.1[0] + o[0], p.1[1] + o[1]], p.2 + d);
        }
        motion.table = entries;
        motion
    }

    /// Planar displacement and path distance over `[a, b]` by one
    /// Gauss-Legendre rule.
    fn integrate(&self, a: f64, b: f64) -> ([f64; 2], f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut out = ([0.0, 0.0], 0.0);
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let t = mid + half * x;
            let s = self.speed.value(t);
            let th = self.heading.value(t);
            out.0[0] += w * s * th.cos();
            out.0[1] += w * s * th.sin();
            out.1 += w * s;
        }
        ([out.0[0] * half, out.0[1] * half], out.1 * half)
    }

    fn lookup(&self, t: f64) -> ([f64; 2], f64) {
        let i = self.table.partition_point(|e| e.0 <= t).saturating_sub(1);
        let (t0, o, d) = self.table[i];
        let (step, dd) = self.integrate(t0, t);
        ([o[0] + step[0], o[1] + step[1]], d + dd)
    }

    /// Box center in the world frame.
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        let (o, _) = self.lookup(t);
        self.init + Vector3::new(o[0], o[1], 0.0)
    }

    /// Signed distance travelled along the path since time 0.
    pub fn distance_at(&self, t: f64) -> f64 {
        self.lookup(t).1
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        self.speed.value(t)
    }

    pub fn heading_at(&self, t: f64) -> f64 {
        self.heading.value(t)
    }

    /// World-from-box pose.
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        RigidTransform::from_yaw(self.heading_at(t), self.center_at(t))
    }
}

/// Ego trajectory driving along +x from the origin with the given speed
/// profile, sampled every `step` seconds over `[t_min, t_max]`.
pub fn ego_trajectory(speed: &Profile, t_min: f64, t_max: f64, step: f64) -> Result<PoseTrajectory, GeometryError> {
    let n = ((t_max - t_min) / step).ceil().max(1.0) as usize;
    let knots = (0..=n)
        .map(|i| {
            let t = if i == n { t_max } else { t_min + step * i as f64 };
            let x = speed.integral(0.0, t);
            (t, RigidTransform::from_translation(x, 0.0, 0.0))
        })
        .collect();
    PoseTrajectory::new(knots)
}
