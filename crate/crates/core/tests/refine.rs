mod common;

use boxrefine::estimators::{EstimatorConfig, Method};
use boxrefine::geometry::{Superframe, TimedPoint};
use boxrefine::pipeline::estimate_and_refine;
use boxrefine::refine::kde::{density_mode, silverman_bandwidth, MODE_GRID_POINTS};
use boxrefine::refine::{
    anchor_box, cluster_along_heading, refine_frame, refine_track, speed_compensate, speed_displacement, Anchor,
    FrameStatus, RefineParams,
};
use boxrefine::synth::{
    corrupt_annotations, evaluate_refinement, generate_scenario, presets, AgentConfig, Profile, RefinedFrame,
    ScenarioConfig,
};
use boxrefine::track::{AnnotatedBox, BoxFrame};
use common::oracles::kde_mode_dense;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Superframe {
    let points = (0..n)
        .map(|_| {
            let p = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-2.0..3.0),
            );
            TimedPoint::new(p, rng.random_range(0.0..0.1), rng.random_range(0..4), 0)
        })
        .collect();
    Superframe {
        t_star: 0.05,
        delta_t: 0.1,
        points,
    }
}

#[test]
fn compensation_round_trip_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let sf = random_frame(&mut rng, 20_000);
    let idx: Vec<usize> = (0..sf.len()).collect();
    for _ in 0..3 {
        let s = rng.random_range(-40.0..40.0);
        let heading = rng.random_range(-3.2..3.2);
        let out = speed_compensate(&sf, &idx, s, heading);
        for (c, p) in out.iter().zip(&sf.points) {
            let back = c + speed_displacement(p.timestamp, sf.t_star, s, heading);
            assert!((back - p.position).amax() <= 1e-12);
            assert_eq!(c.z, p.position.z);
        }
    }
}

#[test]
fn kde_mode_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let a = Normal::new(rng.random_range(-1.0..0.0), 0.15).unwrap();
        let b = Normal::new(rng.random_range(1.0..3.0), 0.4).unwrap();
        let heavy = rng.random_range(100..200);
        let mut x: Vec<f64> = (0..heavy).map(|_| a.sample(&mut rng)).collect();
        x.extend((0..60).map(|_| b.sample(&mut rng)));
        let bw = silverman_bandwidth(&x);
        let mode = density_mode(&x, bw, MODE_GRID_POINTS);
        let dense = kde_mode_dense(&x, bw, 100_000);
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (MODE_GRID_POINTS - 1) as f64;
        assert!((mode - dense).abs() <= step, "{mode} vs {dense}");
    }
}

fn flat_box(center_x: f64) -> AnnotatedBox {
    AnnotatedBox {
        track_id: 1,
        t_star: 0.05,
        frame: BoxFrame::Vehicle,
        center: Vector3::new(center_x, 0.0, 0.0),
        dims: [4.0, 2.0, 1.5],
        heading: 0.0,
        class: None,
    }
}

fn run(cfg: &ScenarioConfig, method: Method) -> (boxrefine::synth::Scenario, Vec<RefinedFrame>, Vec<Vec<FrameStatus>>) {
    let sc = generate_scenario(cfg).unwrap();
    let tracks = corrupt_annotations(&sc.truth, cfg).unwrap();
    let mut frames = Vec::new();
    let mut statuses = Vec::new();
    for tr in &tracks {
        let (_, refs) = estimate_and_refine(
            tr,
            &sc.truth.ego_traj,
            &sc.superframes,
            &EstimatorConfig::default(),
            method,
            &RefineParams::default(),
        )
        .unwrap();
        statuses.push(refs.iter().map(|r| r.status).collect());
        frames.extend(tr.boxes().iter().zip(&refs).map(|(b, r)| RefinedFrame::from_refinement(b, r)));
    }
    (sc, frames, statuses)
}

#[test]
fn three_sensor_scene_pseudo_boxes_contain_their_views() {
    let cfg = ScenarioConfig {
        duration: 3.0,
        ..presets::highway()
    };
    let (sc, frames, _) = run(&cfg, Method::Mhe);
    let (per_frame, summary) = evaluate_refinement(&frames, &sc.superframes, &sc.truth).unwrap();
    for f in &per_frame {
        assert_eq!(f.pseudo_count, 3);
        assert_eq!(f.view_count, 3);
        assert!(f.containment_min.unwrap() >= 0.99, "{f:?}");
        assert!(f.coverage_union.unwrap() >= f.coverage_original.unwrap());
    }
    assert_eq!(summary.count_match_rate, 1.0);
}

#[test]
fn rear_only_views_fit_inside_the_anchored_box() {
    let cfg = ScenarioConfig {
        duration: 2.0,
        ..presets::highway()
    };
    let sc = generate_scenario(&cfg).unwrap();
    let track = &corrupt_annotations(&sc.truth, &cfg).unwrap()[0];
    let params = RefineParams::default();
    for (b, sf) in track.boxes().iter().zip(&sc.superframes) {
        let s = 30.0;
        let r = refine_frame(sf, b, s, &params).unwrap();
        let members: Vec<usize> = r.clusters.iter().flat_map(|c| c.point_indices.clone()).collect();
        let anchored = &r.pseudo_boxes[0].bbox;
        let unshifted = AnnotatedBox {
            center: anchored.center - r.pseudo_boxes[0].applied_shift,
            ..anchored.clone()
        };
        for p in speed_compensate(sf, &members, s, b.heading) {
            assert!(unshifted.contains(&p));
        }
    }
}

#[test]
fn adjacent_lane_pseudo_boxes_land_on_true_views() {
    let cfg = presets::adjacent_lanes();
    let (_, frames, _) = run(&cfg, Method::Mhe);
    let sc = generate_scenario(&cfg).unwrap();
    let (_, summary) = evaluate_refinement(&frames, &sc.superframes, &sc.truth).unwrap();
    let err = summary.center_error_median.unwrap();
    assert!(err <= 0.15, "median center error {err}");
}

#[test]
fn stationary_object_keeps_its_boxes() {
    let cfg = ScenarioConfig {
        duration: 1.0,
        agents: vec![AgentConfig {
            speed_profile: Profile::constant(0.0),
            ..presets::highway().agents[0].clone()
        }],
        view_bias: false,
        ..presets::highway()
    };
    let (_, frames, statuses) = run(&cfg, Method::Mhe);
    assert!(statuses[0].iter().all(|s| *s == FrameStatus::BelowSpeed));
    for f in frames {
        assert_eq!(f.pseudo.len(), 1);
        assert_eq!(f.pseudo[0].bbox, f.original);
    }
}

#[test]
fn single_sensor_scene_has_one_view_per_frame() {
    let base = presets::highway();
    let cfg = ScenarioConfig {
        duration: 1.0,
        sensors: vec![base.sensors[1].clone()],
        ..base
    };
    let sc = generate_scenario(&cfg).unwrap();
    let track = &corrupt_annotations(&sc.truth, &cfg).unwrap()[0];
    for (b, sf) in track.boxes().iter().zip(&sc.superframes) {
        let r = refine_frame(sf, b, 30.0, &RefineParams::default()).unwrap();
        assert_eq!(r.status, FrameStatus::Refined);
        assert_eq!(r.pseudo_boxes.len(), 1);
        let p = &r.pseudo_boxes[0];
        let anchored = anchor_box(
            b,
            &speed_compensate(sf, &r.clusters[0].point_indices, 30.0, b.heading)
                .iter()
                .map(|v| v.x)
                .collect::<Vec<_>>(),
            r.anchor.unwrap().anchor,
            &RefineParams::default(),
        );
        assert!((p.bbox.center - anchored.center - p.applied_shift).norm() <= 1e-12);
    }
}

#[test]
fn misaligned_superframes_are_rejected() {
    let cfg = ScenarioConfig {
        duration: 1.0,
        ..presets::highway()
    };
    let sc = generate_scenario(&cfg).unwrap();
    let track = &corrupt_annotations(&sc.truth, &cfg).unwrap()[0];
    let (est, _) = estimate_and_refine(
        track,
        &sc.truth.ego_traj,
        &sc.superframes,
        &EstimatorConfig::default(),
        Method::Mhe,
        &RefineParams::default(),
    )
    .unwrap();
    let shifted: Vec<Superframe> = sc
        .superframes
        .iter()
        .map(|s| Superframe {
            t_star: s.t_star + 0.07,
            ..s.clone()
        })
        .collect();
    assert!(refine_track(track, &shifted, &est, &RefineParams::default()).is_err());
}

fn groups(rng: &mut ChaCha8Rng, count: usize, gap: f64) -> (Superframe, Vec<usize>) {
    let mut x = 0.0;
    let mut points = Vec::new();
    for _ in 0..count {
        for _ in 0..rng.random_range(5..30) {
            points.push(TimedPoint::new(Vector3::new(x, 0.0, 0.0), 0.05, 0, 0));
            x += rng.random_range(0.0..gap * 0.9);
        }
        x += gap * rng.random_range(1.1..5.0);
    }
    let idx = (0..points.len()).collect();
    (
        Superframe {
            t_star: 0.05,
            delta_t: 0.1,
            points,
        },
        idx,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_count_equals_gap_separated_groups(seed in 0u64..10_000, count in 1usize..6, gap in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sf, idx) = groups(&mut rng, count, gap);
        let params = RefineParams { gap_threshold: gap, ..RefineParams::default() };
        let clusters = cluster_along_heading(&sf, &idx, 0.0, &params);
        prop_assert_eq!(clusters.len(), count);
        for w in clusters.windows(2) {
            prop_assert!(w[0].span[1] < w[1].span[0]);
        }
    }

    #[test]
    fn anchored_box_follows_translated_points(
        seed in 0u64..10_000,
        c in -20.0f64..20.0,
        rear in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let moved: Vec<f64> = coords.iter().map(|v| v + c).collect();
        let anchor = if rear { Anchor::Rear } else { Anchor::Front };
        let b = AnnotatedBox { heading: 0.0, ..flat_box(1.0) };
        let params = RefineParams::default();
        let a = anchor_box(&b, &coords, anchor, &params);
        let m = anchor_box(&b, &moved, anchor, &params);
        prop_assert!((m.center.x - a.center.x - c).abs() <= 1e-9);
        prop_assert_eq!(m.center.y, a.center.y);
    }

    #[test]
    fn pseudo_boxes_keep_dims_and_heading(seed in 0u64..10_000, s in -35.0f64..35.0, heading in -3.1f64..3.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sf, _) = groups(&mut rng, 3, 0.4);
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), heading);
        for p in &mut sf.points {
            p.position = rot * (p.position - Vector3::new(3.0, 0.0, 0.0));
            p.timestamp = rng.random_range(0.0..0.1);
        }
        let b = AnnotatedBox { heading, dims: [8.0, 2.0, 1.5], center: Vector3::zeros(), ..flat_box(0.0) };
        let r = refine_frame(&sf, &b, s, &RefineParams::default()).unwrap();
        for p in &r.pseudo_boxes {
            prop_assert_eq!(p.bbox.dims, b.dims);
            prop_assert_eq!(p.bbox.heading, b.heading);
        }
    }

    #[test]
    fn compensation_round_trip(
        x in -100.0f64..100.0, y in -100.0f64..100.0, z in -3.0f64..3.0,
        tau in 0.0f64..0.1, s in -40.0f64..40.0, heading in -3.2f64..3.2,
    ) {
        let sf = Superframe { t_star: 0.05, delta_t: 0.1, points: vec![TimedPoint::new(Vector3::new(x, y, z), tau, 0, 0)] };
        let c = speed_compensate(&sf, &[0], s, heading)[0];
        let back = c + speed_displacement(tau, sf.t_star, s, heading);
        prop_assert!((back - sf.points[0].position).amax() <= 1e-12);
    }
}
