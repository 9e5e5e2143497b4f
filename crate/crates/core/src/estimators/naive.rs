use super::{check_series, EstimatorError};
use crate::track::MeasurementSeries;

/// Finite-difference speed between consecutive annotations. The last
/// interval's value is repeated so the output has one entry per sample.
pub fn naive_speed(y: &MeasurementSeries) -> Result<Vec<f64>, EstimatorError> {
    check_series(y, 2)?;
    let mut speeds: Vec<f64> = (0..y.len() - 1)
        .map(|k| (y.d[k + 1] - y.d[k]) / y.step(k))
        .collect();
    speeds.push(speeds[speeds.len() - 1]);
    Ok(speeds)
}
