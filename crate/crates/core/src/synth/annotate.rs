use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, ScenarioConfig, SynthError};
use crate::geometry::wrap_angle;
use crate::track::{heading_axis, AnnotatedBox, AnnotatedTrack, BoxFrame};

/// RNG stream for annotation noise, kept apart from point sampling.
const ANNOTATION_STREAM: u64 = 1;

/// Human-like vehicle-frame annotations, one track per agent.
///
/// Every frame's true center gets Gaussian noise of
/// `annotation_noise_sigma` along and across the heading. With `view_bias`
/// an extra uniform offset in `[-s dt / 2, s dt / 2]` along the heading
/// mimics boxing the view of one arbitrary sensor. Headings and dimensions
/// are exact.
pub fn corrupt_annotations(gt: &GroundTruth, cfg: &ScenarioConfig) -> Result<Vec<AnnotatedTrack>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(ANNOTATION_STREAM);
    let sigma = cfg.annotation_noise_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut tracks = Vec::with_capacity(gt.agents.len());
    for agent in &gt.agents {
        let mut boxes = Vec::with_capacity(agent.states.len());
        for st in &agent.states {
            let ego = gt.ego_traj.interpolate(st.t)?;
            let heading = wrap_angle(st.heading - ego.yaw());
            let mut along = 0.0;
            let mut across = 0.0;
            if sigma > 0.0 {
                along += noise.sample(&mut rng);
                across += noise.sample(&mut rng);
            }
            let half_span = st.speed.abs() * gt.delta_t / 2.0;
            if cfg.view_bias && half_span > 0.0 {
                along += rng.random_range(-half_span..=half_span);
            }
            let axis = heading_axis(heading);
            let lateral = heading_axis(heading + std::f64::consts::FRAC_PI_2);
            let center = ego.inverse().transform_point(&st.center) + axis * along + lateral * across;
            boxes.push(AnnotatedBox {
                track_id: agent.agent_id,
                t_star: st.t,
                frame: BoxFrame::Vehicle,
                center,
                dims: agent.dims,
                heading,
                class: agent.class.clone(),
            });
        }
        tracks.push(AnnotatedTrack::new(boxes, gt.delta_t)?);
    }
    Ok(tracks)
}
