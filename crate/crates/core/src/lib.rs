//! Speed estimation and box refinement for annotated objects in
//! multi-LiDAR superframes.
//!
//! The pipeline:
//!
//! 1. [`geometry`] deskews per-point-timestamped scans into superframes.
//! 2. [`track`] lifts annotated boxes to the world frame and reduces each
//!    track to a distance-along-path measurement series.
//! 3. [`estimators`] recovers per-frame distance and speed with a moving
//!    horizon estimator (plus Kalman, smoother and finite-difference baselines).
//! 4. [`refine`] uses the speed to split every annotation into per-view
//!    pseudo boxes.
//!
//! [`pipeline`] chains the stages for one track. [`synth`] generates
//! scenarios with ground truth and scores the outputs; [`io`] reads and
//! writes the on-disk formats.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod synth;
pub mod track;
