use boxrefine::estimators::{EstimatorConfig, Method};
use boxrefine::io::{
    collect_estimate, estimate_rows, read_estimates_csv, read_refined_jsonl, refined_frames, refined_records,
    round_sig, write_bundle, write_estimates_csv, write_refined_jsonl, Bundle,
};
use boxrefine::pipeline::estimate_and_refine;
use boxrefine::refine::RefineParams;
use boxrefine::synth::{corrupt_annotations, generate_scenario, presets, RefinedFrame, ScenarioConfig};

fn small() -> ScenarioConfig {
    ScenarioConfig {
        duration: 1.0,
        ..presets::adjacent_lanes()
    }
}

#[test]
fn bundle_round_trip() {
    let cfg = small();
    let sc = generate_scenario(&cfg).unwrap();
    let tracks = corrupt_annotations(&sc.truth, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), &sc, &tracks, None).unwrap();
    let b = Bundle::read(dir.path()).unwrap();
    assert_eq!(b.manifest, manifest);
    assert_eq!(b.manifest.config, cfg);
    assert_eq!(b.points.len(), manifest.points);
    assert_eq!(b.tracks.len(), tracks.len());
    for (a, r) in tracks.iter().zip(&b.tracks) {
        for (x, y) in a.boxes().iter().zip(r.boxes()) {
            assert!((x.center - y.center).norm() < 1e-6);
            assert_eq!(round_sig(x.t_star), y.t_star);
        }
    }

    // rebuilt superframes match the generator's to print precision
    let sfs = b.superframes().unwrap();
    assert_eq!(sfs.len(), sc.superframes.len());
    for (x, y) in sfs.iter().zip(&sc.superframes) {
        assert_eq!(x.points.len(), y.points.len());
        for (p, q) in x.points.iter().zip(&y.points) {
            assert!((p.position - q.position).norm() < 1e-5, "{} vs {}", p.position, q.position);
        }
    }

    let gt = b.ground_truth().unwrap().unwrap();
    assert_eq!(gt.frames.len(), sc.truth.frames.len());
    for (x, y) in gt.frames.iter().zip(&sc.truth.frames) {
        assert_eq!(x.labels, y.labels);
        assert_eq!(x.views.len(), y.views.len());
        assert_eq!(x.sensor_views.len(), y.sensor_views.len());
    }
    for (x, y) in gt.agents.iter().zip(&sc.truth.agents) {
        assert_eq!(x.states.len(), y.states.len());
        assert_eq!(x.states[3].speed, round_sig(y.states[3].speed));
    }
}

#[test]
fn missing_ground_truth_is_none() {
    let cfg = small();
    let sc = generate_scenario(&cfg).unwrap();
    let tracks = corrupt_annotations(&sc.truth, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), &sc, &tracks, None).unwrap();
    std::fs::remove_file(dir.path().join("gt.jsonl")).unwrap();
    assert!(Bundle::read(dir.path()).unwrap().ground_truth().unwrap().is_none());
}

#[test]
fn estimates_and_refined_round_trip() {
    let cfg = small();
    let sc = generate_scenario(&cfg).unwrap();
    let tracks = corrupt_annotations(&sc.truth, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let track = &tracks[0];
    let (est, refs) = estimate_and_refine(
        track,
        &sc.truth.ego_traj,
        &sc.superframes,
        &EstimatorConfig::default(),
        Method::Mhe,
        &RefineParams::default(),
    )
    .unwrap();
    let times: Vec<f64> = track.boxes().iter().map(|b| b.t_star).collect();
    let rows = estimate_rows(track.track_id(), Method::Mhe, &times, &est);
    let path = dir.path().join("estimates.csv");
    write_estimates_csv(&path, &rows).unwrap();
    let back = read_estimates_csv(&path).unwrap();
    let (t2, e2) = collect_estimate(&back, track.track_id(), Method::Mhe).unwrap();
    assert_eq!(t2.len(), times.len());
    for (a, b) in est.states.iter().zip(&e2.states) {
        assert!((a.s - b.s).abs() <= 1e-7 * a.s.abs().max(1.0));
    }
    assert!(collect_estimate(&back, track.track_id(), Method::Kf).is_none());

    let recs = refined_records(&refs);
    let path = dir.path().join("refined.jsonl");
    write_refined_jsonl(&path, &recs).unwrap();
    let back = read_refined_jsonl(&path).unwrap();
    assert_eq!(back.len(), recs.len());
    let frames = refined_frames(&back, std::slice::from_ref(track), cfg.delta_t()).unwrap();
    let direct: Vec<RefinedFrame> = track
        .boxes()
        .iter()
        .zip(&refs)
        .map(|(b, r)| RefinedFrame::from_refinement(b, r))
        .collect();
    assert_eq!(frames.len(), direct.len());
    for (a, b) in frames.iter().zip(&direct) {
        assert_eq!(a.pseudo.len(), b.pseudo.len());
        for (p, q) in a.pseudo.iter().zip(&b.pseudo) {
            assert_eq!(p.cluster_points, q.cluster_points);
            assert!((p.bbox.center - q.bbox.center).norm() < 1e-6);
        }
    }
}
