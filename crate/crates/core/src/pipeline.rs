//! Glue between the stages for one track.

use thiserror::Error;

use crate::estimators::{run_method, EstimatorConfig, EstimatorError, Method, StateEstimate};
use crate::geometry::{PoseTrajectory, Superframe};
use crate::refine::{refine_track, FrameRefinement, RefineError, RefineParams};
use crate::track::{boxes_to_world, project_to_path, AnnotatedTrack, MeasurementSeries, TrackError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Lifts a track to the world frame, reduces it to path distances and runs
/// one estimator on them.
pub fn estimate_track(
    track: &AnnotatedTrack,
    traj: &PoseTrajectory,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<(MeasurementSeries, StateEstimate), PipelineError> {
    let world = boxes_to_world(track, traj)?;
    let y = project_to_path(&world.track)?;
    let est = run_method(&y, cfg, method)?;
    Ok((y, est))
}

/// Estimates speed with `method` and refines every annotation of the track.
pub fn estimate_and_refine(
    track: &AnnotatedTrack,
    traj: &PoseTrajectory,
    superframes: &[Superframe],
    cfg: &EstimatorConfig,
    method: Method,
    params: &RefineParams,
) -> Result<(StateEstimate, Vec<FrameRefinement>), PipelineError> {
    let (_, est) = estimate_track(track, traj, cfg, method)?;
    let frames = refine_track(track, superframes, &est, params)?;
    Ok((est, frames))
}
