use nalgebra::{Matrix2, Vector2};

use super::{check_series, objective, EstimatorConfig, EstimatorError, Prior, StateEstimate};
use crate::track::{KinematicState, MeasurementSeries};

struct ForwardPass {
    predicted: Vec<(Vector2<f64>, Matrix2<f64>)>,
    filtered: Vec<(Vector2<f64>, Matrix2<f64>)>,
}

fn inverse_weight(m: &Matrix2<f64>, key: &'static str) -> Result<Matrix2<f64>, EstimatorError> {
    m.try_inverse().ok_or(EstimatorError::Config {
        key,
        reason: "weight is not invertible".into(),
    })
}

fn forward(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<ForwardPass, EstimatorError> {
    let process_cov = inverse_weight(&cfg.q, "q_diag")?;
    let r = 1.0 / cfg.omega;
    let mut x = Vector2::new(prior.x_tilde.d, prior.x_tilde.s);
    let mut p = inverse_weight(&cfg.psi, "psi_diag")?;

    let n = y.len();
    let mut predicted = Vec::with_capacity(n);
    let mut filtered = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let dt = y.step(k - 1);
            let f = Matrix2::new(1.0, dt, 0.0, 1.0);
            let u = cfg.u_nominal;
            x = f * x + Vector2::new(0.5 * u * dt * dt, u * dt);
            p = f * p * f.transpose() + process_cov;
        }
        predicted.push((x, p));

        // scalar update on d
        let innovation = y.d[k] - x[0];
        let s = p[(0, 0)] + r;
        let gain = p.column(0) / s;
        x += gain * innovation;
        // Joseph form keeps P symmetric positive semi-definite
        let i_kh = Matrix2::identity() - Matrix2::new(gain[0], 0.0, gain[1], 0.0);
        p = i_kh * p * i_kh.transpose() + gain * gain.transpose() * r;
        filtered.push((x, p));
    }
    Ok(ForwardPass { predicted, filtered })
}

fn to_states(v: &[(Vector2<f64>, Matrix2<f64>)]) -> Vec<KinematicState> {
    v.iter().map(|(x, _)| KinematicState::new(x[0], x[1])).collect()
}

/// Kalman filter with the same transition and measurement model as the
/// estimator windows. Covariances are the inverses of the configured weights;
/// the initial state is `prior` with covariance `inv(psi)`.
pub fn kf_filter(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<StateEstimate, EstimatorError> {
    cfg.validate()?;
    check_series(y, 1)?;
    let pass = forward(y, cfg, prior)?;
    let states = to_states(&pass.filtered);
    Ok(StateEstimate {
        objective: objective(y, cfg, prior, &states),
        states,
        converged: true,
        active_constraints: Vec::new(),
        kkt_residual: 0.0,
    })
}

/// Rauch-Tung-Striebel fixed-interval smoother over [`kf_filter`].
/// Speed bounds are ignored.
pub fn rts_smooth(y: &MeasurementSeries, cfg: &EstimatorConfig, prior: &Prior) -> Result<StateEstimate, EstimatorError> {
    cfg.validate()?;
    check_series(y, 1)?;
    let pass = forward(y, cfg, prior)?;
    let n = y.len();
    let mut smoothed = pass.filtered.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        let dt = y.step(k);
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let (xf, pf) = pass.filtered[k];
        let (xp, pp) = pass.predicted[k + 1];
        let pp_inv = pp.try_inverse().ok_or(EstimatorError::Singular)?;
        let gain = pf * f.transpose() * pp_inv;
        let (xs_next, ps_next) = smoothed[k + 1];
        let xs = xf + gain * (xs_next - xp);
        let ps = pf + gain * (ps_next - pp) * gain.transpose();
        smoothed[k] = (xs, ps);
    }
    let states = to_states(&smoothed);
    Ok(StateEstimate {
        objective: objective(y, cfg, prior, &states),
        states,
        converged: true,
        active_constraints: Vec::new(),
        kkt_residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_prior_and_model_gives_zero_innovation() {
        let y = MeasurementSeries::uniform((0..20).map(|k| 1.0 + 15.0 * 0.1 * k as f64).collect(), 0.0, 0.1);
        let est = kf_filter(&y, &EstimatorConfig::default(), &Prior::new(1.0, 15.0)).unwrap();
        for (k, x) in est.states.iter().enumerate() {
            assert_abs_diff_eq!(x.d, y.d[k], epsilon = 1e-12);
            assert_abs_diff_eq!(x.s, 15.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn precise_measurements_dominate() {
        let d = vec![0.0, 0.3, 1.9, 2.2, 4.7, 5.1, 5.0, 7.3];
        let y = MeasurementSeries::uniform(d.clone(), 0.0, 0.1);
        // measurement covariance 1e-12
        let cfg = EstimatorConfig {
            omega: 1e12,
            ..EstimatorConfig::default()
        };
        let est = kf_filter(&y, &cfg, &Prior::new(0.0, 0.0)).unwrap();
        for (x, d) in est.states.iter().zip(&d) {
            assert_abs_diff_eq!(x.d, *d, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_measurement_smoother_equals_filter() {
        let y = MeasurementSeries::uniform(vec![0.4], 0.0, 0.1);
        let prior = Prior::new(0.0, 3.0);
        let f = kf_filter(&y, &EstimatorConfig::default(), &prior).unwrap();
        let s = rts_smooth(&y, &EstimatorConfig::default(), &prior).unwrap();
        assert_eq!(f.states, s.states);
    }

    #[test]
    fn smoother_recovers_noiseless_constant_speed() {
        let y = MeasurementSeries::uniform((0..15).map(|k| 2.0 * k as f64).collect(), 0.0, 0.1);
        let s = rts_smooth(&y, &EstimatorConfig::default(), &Prior::new(0.0, 20.0)).unwrap();
        for (k, x) in s.states.iter().enumerate() {
            assert_abs_diff_eq!(x.d, 2.0 * k as f64, epsilon = 1e-10);
            assert_abs_diff_eq!(x.s, 20.0, epsilon = 1e-10);
        }
    }
}
