use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::qp::{solve_box_qp, BoxConstraint};
use super::{check_series, EstimatorConfig, EstimatorError, Horizon, Prior, StateEstimate};
use crate::track::{transition, KinematicState, MeasurementSeries};

fn transition_matrix(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

fn input_offset(u: f64, dt: f64) -> Vector2<f64> {
    Vector2::new(0.5 * u * dt * dt, u * dt)
}

/// Normal equations `H z = b` of one window, with `z = [d_0, s_0, d_1, s_1, ...]`.
pub fn assemble_window(
    y: &MeasurementSeries,
    cfg: &EstimatorConfig,
    prior: &Prior,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.len();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut b = DVector::<f64>::zeros(2 * n);

    // arrival cost on x_0
    let x_tilde = Vector2::new(prior.x_tilde.d, prior.x_tilde.s);
    let arrival = cfg.psi * x_tilde;
    for r in 0..2 {
        b[r] += arrival[r];
        for c in 0..2 {
            h[(r, c)] += cfg.psi[(r, c)];
        }
    }

    for (i, d) in y.d.iter().enumerate() {
        h[(2 * i, 2 * i)] += cfg.omega;
        b[2 * i] += cfg.omega * d;
    }

    // process residual x_{i+1} - F x_i - g, Jacobian [-F, I] on (x_i, x_{i+1})
    for i in 0..n.saturating_sub(1) {
        let dt = y.step(i);
        let f = transition_matrix(dt);
        let g = input_offset(cfg.u_nominal, dt);
        let ft_q = f.transpose() * cfg.q;
        let blocks = [
            (i, i, ft_q * f),
            (i, i + 1, -ft_q),
            (i + 1, i, -(cfg.q * f)),
            (i + 1, i + 1, cfg.q),
        ];
        for (bi, bj, m) in blocks {
            for r in 0..2 {
                for c in 0..2 {
                    h[(2 * bi + r, 2 * bj + c)] += m[(r, c)];
                }
            }
        }
        let qg = cfg.q * g;
        let fqg = ft_q * g;
        for r in 0..2 {
            b[2 * i + r] -= fqg[r];
            b[2 * (i + 1) + r] += qg[r];
        }
    }
    (h, b)
}

/// Window objective evaluated from its residuals.
pub fn objective(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior, states: &[KinematicState]) -> f64 {
    let e0 = Vector2::new(states[0].d - prior.x_tilde.d, states[0].s - prior.x_tilde.s);
    let mut j = e0.dot(&(cfg.psi * e0));
    for (x, d) in states.iter().zip(&y.d) {
        j += cfg.omega * (d - x.d).powi(2);
    }
    for i in 0..states.len().saturating_sub(1) {
        let pred = transition(states[i], cfg.u_nominal, y.step(i));
        let w = Vector2::new(states[i + 1].d - pred.d, states[i + 1].s - pred.s);
        j += w.dot(&(cfg.q * w));
    }
    j
}

fn unpack(z: &DVector<f64>) -> Vec<KinematicState> {
    z.as_slice()
        .chunks_exact(2)
        .map(|c| KinematicState::new(c[0], c[1]))
        .collect()
}

/// Solves one window covering the whole series.
pub fn mhe_solve(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<StateEstimate, EstimatorError> {
    cfg.validate()?;
    check_series(y, 2)?;
    if !prior.x_tilde.is_finite() {
        return Err(EstimatorError::Config {
            key: "prior",
            reason: "prior state must be finite".into(),
        });
    }
    solve_window(y, cfg, prior)
}

fn solve_window(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<StateEstimate, EstimatorError> {
    let (h, b) = assemble_window(y, cfg, prior);
    let constraints: Vec<BoxConstraint> = match cfg.speed_bounds {
        None => Vec::new(),
        Some([lower, upper]) => (0..y.len())
            .map(|i| BoxConstraint {
                index: 2 * i + 1,
                lower,
                upper,
            })
            .collect(),
    };
    let sol = solve_box_qp(&h, &b, &constraints, cfg.solver_tol, cfg.max_iter)?;
    let states = unpack(&sol.z);
    Ok(StateEstimate {
        objective: objective(y, cfg, prior, &states),
        states,
        converged: sol.converged,
        active_constraints: sol.active.iter().map(|&(j, b)| (j / 2, b)).collect(),
        kkt_residual: sol.kkt_residual,
    })
}

/// Receding-horizon estimation with windows of `N_e` measurements.
///
/// The first window `[0, N_e)` is seeded by `prior` and reported in full.
/// Every later step `k` solves `[k - N_e + 1, k]` with the arrival prior set
/// to the previous window's estimate at the new window start, and reports
/// the newest state. With `N_e >= n` (or a full horizon) this is one call to
/// [`mhe_solve`].
pub fn mhe_receding(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<StateEstimate, EstimatorError> {
    cfg.validate()?;
    check_series(y, 2)?;
    let n = y.len();
    let window = match cfg.horizon {
        Horizon::Full => n,
        Horizon::Steps(w) => w.min(n),
    };
    if window >= n {
        return mhe_solve(y, cfg, prior);
    }

    let first = solve_window(&y.slice(0, window), cfg, prior)?;
    let mut states = first.states.clone();
    let mut active = first.active_constraints.clone();
    let mut converged = first.converged;
    let mut kkt = first.kkt_residual;
    let mut objective = first.objective;
    let mut previous = first.states;

    for k in window..n {
        let start = k + 1 - window;
        // previous window starts at start - 1
        let arrival = Prior {
            x_tilde: previous[1],
        };
        let est = solve_window(&y.slice(start, k + 1), cfg, &arrival)?;
        let newest = window - 1;
        states.push(est.states[newest]);
        active.extend(
            est.active_constraints
                .iter()
                .filter(|(i, _)| *i == newest)
                .map(|&(_, b)| (k, b)),
        );
        converged &= est.converged;
        kkt = kkt.max(est.kkt_residual);
        objective = est.objective;
        previous = est.states;
    }

    Ok(StateEstimate {
        states,
        objective,
        converged,
        active_constraints: active,
        kkt_residual: kkt,
    })
}
