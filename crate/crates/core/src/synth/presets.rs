//! Ready-made scenarios.

use std::f64::consts::TAU;

use super::{AgentConfig, Mount, Profile, ScenarioConfig, SensorConfig};

fn front_sensor(y: f64, sweep_period: f64, sweep_fraction: f64) -> SensorConfig {
    SensorConfig {
        mount: Mount::at(3.5, y, 1.2),
        sweep_period,
        // straight ahead is reached `sweep_fraction` into each sweep
        azimuth_offset: -sweep_fraction * TAU,
        rays_per_sweep: 180,
    }
}

fn car(x: f64, y: f64, speed: Profile) -> AgentConfig {
    AgentConfig {
        init_pos: [x, y, 0.8],
        dims: [4.5, 1.9, 1.6],
        speed_profile: speed,
        heading_profile: Profile::constant(0.0),
        class: Some("car".into()),
        hidden_from: Vec::new(),
    }
}

/// Three-sensor highway scene with a 30 m/s car seen only from behind, so
/// each sensor contributes one separate view. Same as the default config.
pub fn highway() -> ScenarioConfig {
    ScenarioConfig::default()
}

/// Two sensors on the ego centerline sweeping a slender 20 m/s agent
/// straight ahead 100 ms apart. Samples sit on the centerline, so every
/// return of one sensor is taken at the same sweep phase.
pub fn two_sensor_offset() -> ScenarioConfig {
    ScenarioConfig {
        duration: 2.0,
        frame_rate: 5.0,
        ego_speed_profile: Profile::constant(15.0),
        agents: vec![AgentConfig {
            init_pos: [20.0, 0.0, 0.8],
            dims: [4.5, 0.1, 1.6],
            ..car(0.0, 0.0, Profile::constant(20.0))
        }],
        sensors: vec![front_sensor(0.0, 0.2, 0.25), front_sensor(0.0, 0.2, 0.75)],
        surface_jitter: 0.0,
        annotation_noise_sigma: 0.0,
        view_bias: false,
        ..ScenarioConfig::default()
    }
}

/// Cars in both neighbouring lanes, seen from behind and from the side by
/// three sensors whose views overlap into one group per car.
pub fn adjacent_lanes() -> ScenarioConfig {
    ScenarioConfig {
        agents: vec![
            car(14.0, 3.5, Profile(vec![[0.0, 26.0], [10.0, 28.0]])),
            car(18.0, -3.5, Profile::constant(29.0)),
        ],
        annotation_noise_sigma: 0.05,
        view_bias: true,
        ..ScenarioConfig::default()
    }
}
