//! Speed estimators over a [`MeasurementSeries`].
//!
//! The moving horizon estimator minimizes, over the states of a window,
//!
//! ```text
//! J = (x_0 - x~)' Psi (x_0 - x~)
//!   + sum_{i=0}^{n-1} Omega (y_i - d_i)^2
//!   + sum_{i=0}^{n-2} (x_{i+1} - F x_i - G u)' Q (x_{i+1} - F x_i - G u)
//! ```
//!
//! `Q`, `Omega` and `Psi` are stored as the weights that appear in `J`, i.e.
//! inverse covariances. The Kalman filter and smoother use their inverses as
//! covariances, so the smoother reproduces the unconstrained full-horizon
//! minimizer exactly.

mod kalman;
mod mhe;
mod naive;
pub mod qp;

pub use kalman::{kf_filter, rts_smooth};
pub use mhe::{assemble_window, mhe_receding, mhe_solve, objective};
pub use naive::naive_speed;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{KinematicState, MeasurementSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid estimator config `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error("need at least {needed} measurements, got {got}")]
    TooFewMeasurements { needed: usize, got: usize },
    #[error("timestamps {index} and {next} coincide or go backwards", next = index + 1)]
    DuplicateTimestamp { index: usize },
    #[error("measurement series fields have different lengths")]
    LengthMismatch,
    #[error("non-finite measurement at index {0}")]
    NonFinite(usize),
    #[error("normal equations are not positive definite")]
    Singular,
}

fn config_error(key: &'static str, reason: impl Into<String>) -> EstimatorError {
    EstimatorError::Config {
        key,
        reason: reason.into(),
    }
}

/// Window length of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// One window over the whole series (offline smoothing).
    Full,
    /// Number of measurements per window.
    Steps(usize),
}

impl Serialize for Horizon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Horizon::Full => s.serialize_str("full"),
            Horizon::Steps(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Steps(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "full" => Ok(Horizon::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"full\" or an integer, got \"{w}\""
            ))),
            Raw::Steps(n) => Ok(Horizon::Steps(n as usize)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Process residual weight.
    pub q: Matrix2<f64>,
    /// Measurement residual weight.
    pub omega: f64,
    /// Arrival cost weight.
    pub psi: Matrix2<f64>,
    pub horizon: Horizon,
    /// Nominal acceleration fed to the transition, m/s^2.
    pub u_nominal: f64,
    pub speed_bounds: Option<[f64; 2]>,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            q: Matrix2::identity(),
            omega: 1.0,
            psi: Matrix2::identity(),
            horizon: Horizon::Full,
            u_nominal: 0.0,
            speed_bounds: None,
            solver_tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl EstimatorConfig {
    /// Weights derived from a noise model: white measurement noise with
    /// standard deviation `sigma_meas` and a white acceleration disturbance
    /// with standard deviation `sigma_accel` held over each step of `dt`.
    /// The arrival weights match a prior taken from the first two samples.
    pub fn noise_matched(sigma_meas: f64, sigma_accel: f64, dt: f64) -> Self {
        let var_d = (0.5 * sigma_accel * dt * dt).powi(2);
        let var_s = (sigma_accel * dt).powi(2);
        let var_m = sigma_meas * sigma_meas;
        let var_prior_s = 2.0 * var_m / (dt * dt);
        Self {
            q: Matrix2::new(1.0 / var_d, 0.0, 0.0, 1.0 / var_s),
            omega: 1.0 / var_m,
            psi: Matrix2::new(1.0 / var_m, 0.0, 0.0, 1.0 / var_prior_s),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        check_spd(&self.q, "q_diag")?;
        check_spd(&self.psi, "psi_diag")?;
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(config_error("omega", format!("must be positive, got {}", self.omega)));
        }
        if let Some([lo, hi]) = self.speed_bounds {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(config_error("speed_bounds", "bounds must be finite"));
            }
            if lo >= hi {
                return Err(config_error(
                    "speed_bounds",
                    format!("lower bound {lo} must be below upper bound {hi}"),
                ));
            }
        }
        if let Horizon::Steps(n) = self.horizon {
            if n < 2 {
                return Err(config_error("horizon", format!("window needs at least 2 steps, got {n}")));
            }
        }
        if !(self.solver_tol > 0.0) {
            return Err(config_error("solver_tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(config_error("max_iter", "must be at least 1"));
        }
        if !self.u_nominal.is_finite() {
            return Err(config_error("u_nominal", "must be finite"));
        }
        Ok(())
    }

    /// Same weights with every matrix scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: self.q * factor,
            omega: self.omega * factor,
            psi: self.psi * factor,
            ..self.clone()
        }
    }
}

fn check_spd(m: &Matrix2<f64>, key: &'static str) -> Result<(), EstimatorError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(config_error(key, "entries must be finite"));
    }
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * m.amax().max(1.0) {
        return Err(config_error(key, "matrix must be symmetric"));
    }
    if m.cholesky().is_none() {
        return Err(config_error(key, "matrix must be positive definite"));
    }
    Ok(())
}

/// On-disk form of [`EstimatorConfig`]; diagonal weights only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfigFile {
    pub q_diag: [f64; 2],
    pub omega: f64,
    pub psi_diag: [f64; 2],
    pub horizon: Horizon,
    pub u_nominal: f64,
    pub speed_bounds: Option<[f64; 2]>,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfigFile {
    fn default() -> Self {
        let cfg = EstimatorConfig::default();
        Self {
            q_diag: [cfg.q[(0, 0)], cfg.q[(1, 1)]],
            omega: cfg.omega,
            psi_diag: [cfg.psi[(0, 0)], cfg.psi[(1, 1)]],
            horizon: cfg.horizon,
            u_nominal: cfg.u_nominal,
            speed_bounds: cfg.speed_bounds,
            solver_tol: cfg.solver_tol,
            max_iter: cfg.max_iter,
        }
    }
}

impl TryFrom<EstimatorConfigFile> for EstimatorConfig {
    type Error = EstimatorError;

    fn try_from(f: EstimatorConfigFile) -> Result<Self, Self::Error> {
        let cfg = EstimatorConfig {
            q: Matrix2::from_diagonal(&f.q_diag.into()),
            omega: f.omega,
            psi: Matrix2::from_diagonal(&f.psi_diag.into()),
            horizon: f.horizon,
            u_nominal: f.u_nominal,
            speed_bounds: f.speed_bounds,
            solver_tol: f.solver_tol,
            max_iter: f.max_iter,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&EstimatorConfig> for EstimatorConfigFile {
    fn from(c: &EstimatorConfig) -> Self {
        Self {
            q_diag: [c.q[(0, 0)], c.q[(1, 1)]],
            omega: c.omega,
            psi_diag: [c.psi[(0, 0)], c.psi[(1, 1)]],
            horizon: c.horizon,
            u_nominal: c.u_nominal,
            speed_bounds: c.speed_bounds,
            solver_tol: c.solver_tol,
            max_iter: c.max_iter,
        }
    }
}

/// Prior state at the start of the first window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub x_tilde: KinematicState,
}

impl Prior {
    pub fn new(d: f64, s: f64) -> Self {
        Self {
            x_tilde: KinematicState::new(d, s),
        }
    }

    /// First measured distance and first finite-difference speed.
    pub fn from_measurements(y: &MeasurementSeries) -> Result<Self, EstimatorError> {
        check_series(y, 2)?;
        Ok(Self::new(y.d[0], (y.d[1] - y.d[0]) / y.step(0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub states: Vec<KinematicState>,
    /// Value of the window objective at `states`.
    pub objective: f64,
    pub converged: bool,
    /// `(measurement index, bound)` for every binding speed bound.
    pub active_constraints: Vec<(usize, Bound)>,
    /// Scaled KKT residual of the final solve.
    pub kkt_residual: f64,
}

impl StateEstimate {
    /// Wraps states produced elsewhere; the objective is unknown (NaN).
    pub fn from_states(states: Vec<KinematicState>) -> Self {
        Self {
            states,
            objective: f64::NAN,
            converged: true,
            active_constraints: Vec::new(),
            kkt_residual: 0.0,
        }
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.s).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.d).collect()
    }
}

pub(crate) fn check_series(y: &MeasurementSeries, needed: usize) -> Result<(), EstimatorError> {
    if y.d.len() != y.times.len() || y.d.len() != y.headings.len() {
        return Err(EstimatorError::LengthMismatch);
    }
    if y.len() < needed {
        return Err(EstimatorError::TooFewMeasurements {
            needed,
            got: y.len(),
        });
    }
    if let Some(i) = y
        .d
        .iter()
        .zip(&y.times)
        .position(|(d, t)| !d.is_finite() || !t.is_finite())
    {
        return Err(EstimatorError::NonFinite(i));
    }
    if let Some(index) = y.times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(EstimatorError::DuplicateTimestamp { index });
    }
    Ok(())
}

/// Estimator selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mhe,
    Kf,
    Rts,
    Naive,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mhe, Method::Kf, Method::Rts, Method::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mhe => "mhe",
            Method::Kf => "kf",
            Method::Rts => "rts",
            Method::Naive => "naive",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected mhe, kf, rts or naive)"))
    }
}

/// Runs one estimator with the default prior. `mhe` honours the configured
/// horizon; `naive` reports the measured distances with finite-difference
/// speeds.
pub fn run_method(y: &MeasurementSeries, cfg: &EstimatorConfig, method: Method) -> Result<StateEstimate, EstimatorError> {
    let prior = Prior::from_measurements(y)?;
    match method {
        Method::Mhe => mhe_receding(y, cfg, &prior),
        Method::Kf => kf_filter(y, cfg, &prior),
        Method::Rts => rts_smooth(y, cfg, &prior),
        Method::Naive => {
            let speeds = naive_speed(y)?;
            let states: Vec<KinematicState> = y.d.iter().zip(speeds).map(|(&d, s)| KinematicState::new(d, s)).collect();
            Ok(StateEstimate {
                objective: objective(y, cfg, &prior, &states),
                states,
                converged: true,
                active_constraints: Vec::new(),
                kkt_residual: 0.0,
            })
        }
    }
}

/// Total variation of a sequence, `sum |v_{k+1} - v_k|`.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}
