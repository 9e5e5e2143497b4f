//! `boxrefine` command-line frontend.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data or alignment error.

mod svg;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use boxrefine::estimators::{EstimatorConfig, EstimatorConfigFile, Method, StateEstimate};
use boxrefine::io::{
    self, collect_estimate, estimate_rows, format_f64, read_estimates_csv, read_json, read_refined_jsonl,
    refined_frames, refined_records, write_bundle, write_estimates_csv, write_refined_jsonl, Bundle, EstimateRow,
    IoError,
};
use boxrefine::pipeline::estimate_track;
use boxrefine::refine::{refine_track, FrameRefinement, FrameStatus, RefineParams};
use boxrefine::synth::{corrupt_annotations, evaluate, generate_scenario, presets, GroundTruth, ScenarioConfig};
use boxrefine::track::AnnotatedTrack;

const ESTIMATES_FILE: &str = "estimates.csv";
const REFINED_FILE: &str = "refined.jsonl";

#[derive(Parser)]
#[command(name = "boxrefine", version, about = "Speed estimation and multi-LiDAR box refinement")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config: the scenario for synth, estimator weights for estimate.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the bundle directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Leave the creation time out of the manifest.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Highway,
    TwoSensorOffset,
    AdjacentLanes,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario bundle.
    Synth {
        /// Starting point when no --config is given.
        #[arg(long, value_enum, default_value = "highway")]
        preset: Preset,
    },
    /// Write motion-compensated superframes as CSV.
    Compensate { bundle: PathBuf },
    /// Estimate the speed of every track.
    Estimate {
        bundle: PathBuf,
        /// Comma-separated list of mhe, kf, rts, naive.
        #[arg(long, value_delimiter = ',', default_value = "mhe,kf,naive")]
        methods: Vec<String>,
        #[arg(long)]
        no_plot: bool,
    },
    /// Regenerate pseudo boxes from speed estimates.
    Refine {
        bundle: PathBuf,
        /// Defaults to estimates.csv in the output or bundle directory.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Which estimate drives the refinement.
        #[arg(long, default_value = "mhe")]
        method: String,
        /// Refine parameters JSON.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Score estimates and refined boxes against ground truth.
    Eval {
        bundle: PathBuf,
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Defaults to refined.jsonl when present.
        #[arg(long)]
        refined: Option<PathBuf>,
    },
    /// Plot speed estimates per track as SVG.
    Plot {
        bundle: PathBuf,
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type CmdResult<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> CmdResult<T>;
    fn data(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn usage(msg: impl Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn data(msg: impl Display) -> Failure {
    Failure::Data(anyhow!("{msg}"))
}

/// Missing input files are usage errors, malformed ones data errors.
fn input<T>(r: Result<T, IoError>) -> CmdResult<T> {
    match r {
        Err(IoError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
            Err(usage(format!("{}: file not found", path.display())))
        }
        other => other.data(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { preset } => cmd_synth(g, *preset),
        Command::Compensate { bundle } => cmd_compensate(g, bundle),
        Command::Estimate {
            bundle,
            methods,
            no_plot,
        } => cmd_estimate(g, bundle, methods, !no_plot),
        Command::Refine {
            bundle,
            estimates,
            method,
            params,
        } => cmd_refine(g, bundle, estimates.as_deref(), method, params.as_deref()),
        Command::Eval {
            bundle,
            estimates,
            refined,
        } => cmd_eval(g, bundle, estimates.as_deref(), refined.as_deref()),
        Command::Plot { bundle, estimates } => cmd_plot(g, bundle, estimates.as_deref()),
    }
}

fn out_dir(g: &Global, bundle: &Path) -> CmdResult<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| bundle.to_owned());
    fs::create_dir_all(&dir)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn read_bundle(dir: &Path) -> CmdResult<Bundle> {
    let b = input(Bundle::read(dir))?;
    for (id, e) in &b.rejected {
        warn!("track {id} skipped: {e}");
    }
    Ok(b)
}

/// Explicit path, else the file in the output directory, else in the bundle.
fn locate(explicit: Option<&Path>, out: &Path, bundle: &Path, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_owned();
    }
    let in_out = out.join(name);
    if in_out.exists() {
        in_out
    } else {
        bundle.join(name)
    }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn cmd_synth(g: &Global, preset: Preset) -> CmdResult {
    let out = g.out.as_deref().ok_or_else(|| usage("synth needs --out"))?;
    let mut cfg: ScenarioConfig = match &g.config {
        Some(p) => read_json(p).usage()?,
        None => match preset {
            Preset::Highway => presets::highway(),
            Preset::TwoSensorOffset => presets::two_sensor_offset(),
            Preset::AdjacentLanes => presets::adjacent_lanes(),
        },
    };
    if let Some(seed) = g.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate().usage()?;
    let sc = generate_scenario(&cfg).usage()?;
    let tracks = corrupt_annotations(&sc.truth, &cfg).usage()?;
    let created = (!g.no_timestamp).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let m = write_bundle(out, &sc, &tracks, created).data()?;
    println!(
        "wrote {}: {} frames at {} Hz, {} sensors, {} agents, {} points, {} tracks, seed {}",
        out.display(),
        m.frames,
        m.frame_rate,
        cfg.sensors.len(),
        cfg.agents.len(),
        m.points,
        tracks.len(),
        m.seed
    );
    Ok(())
}

fn cmd_compensate(g: &Global, bundle: &Path) -> CmdResult {
    let b = read_bundle(bundle)?;
    let out = out_dir(g, bundle)?;
    let sfs = b.superframes().data()?;
    let mut text = String::from("frame_id,t_star,x,y,z,timestamp,sensor_id\n");
    for (k, sf) in sfs.iter().enumerate() {
        for p in &sf.points {
            text.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                format_f64(sf.t_star),
                format_f64(p.position.x),
                format_f64(p.position.y),
                format_f64(p.position.z),
                format_f64(p.timestamp),
                p.sensor_id
            ));
        }
    }
    let path = out.join("superframes.csv");
    write_text(&path, &text)?;
    println!(
        "wrote {}: {} superframes, {} points",
        path.display(),
        sfs.len(),
        sfs.iter().map(|s| s.len()).sum::<usize>()
    );
    Ok(())
}

fn estimator_config(g: &Global) -> CmdResult<EstimatorConfig> {
    match &g.config {
        None => Ok(EstimatorConfig::default()),
        Some(p) => {
            let f: EstimatorConfigFile = read_json(p).usage()?;
            EstimatorConfig::try_from(f).usage()
        }
    }
}

fn parse_method(s: &str) -> CmdResult<Method> {
    s.trim().parse::<Method>().map_err(usage)
}

fn times(track: &AnnotatedTrack) -> Vec<f64> {
    track.boxes().iter().map(|b| b.t_star).collect()
}

fn cmd_estimate(g: &Global, bundle: &Path, methods: &[String], plot: bool) -> CmdResult {
    let methods = methods.iter().map(|m| parse_method(m)).collect::<CmdResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(usage("no methods requested"));
    }
    let cfg = estimator_config(g)?;
    let b = read_bundle(bundle)?;
    let out = out_dir(g, bundle)?;

    let per_track: Vec<Vec<EstimateRow>> = b
        .tracks
        .par_iter()
        .map(|track| {
            let mut rows = Vec::new();
            for &m in &methods {
                match estimate_track(track, &b.ego_traj, &cfg, m) {
                    Ok((_, est)) => rows.extend(estimate_rows(track.track_id(), m, &times(track), &est)),
                    Err(e) => {
                        warn!("track {} skipped for {m}: {e}", track.track_id());
                    }
                }
            }
            rows
        })
        .collect();
    let rows: Vec<EstimateRow> = per_track.into_iter().flatten().collect();
    let path = out.join(ESTIMATES_FILE);
    write_estimates_csv(&path, &rows).data()?;
    println!("wrote {}: {} rows, {} tracks", path.display(), rows.len(), b.tracks.len());
    if plot {
        let gt = b.ground_truth().data()?;
        write_plots(&out, &rows, gt.as_ref())?;
    }
    Ok(())
}

fn refine_params(path: Option<&Path>) -> CmdResult<RefineParams> {
    let p: RefineParams = match path {
        None => RefineParams::default(),
        Some(p) => read_json(p).usage()?,
    };
    p.validate().usage()?;
    Ok(p)
}

/// Estimate of `method` for `track`, checked against the box times.
fn aligned_estimate(rows: &[EstimateRow], track: &AnnotatedTrack, method: Method, dt: f64) -> CmdResult<StateEstimate> {
    let id = track.track_id();
    let (t, est) =
        collect_estimate(rows, id, method).ok_or_else(|| usage(format!("no {method} estimate for track {id}")))?;
    let want = times(track);
    if t.len() != want.len() {
        return Err(usage(format!(
            "track {id}: {} boxes but {} {method} estimates",
            want.len(),
            t.len()
        )));
    }
    if let Some((a, b)) = t.iter().zip(&want).find(|(a, b)| (*a - *b).abs() > dt / 2.0) {
        return Err(usage(format!("track {id}: estimate at t = {a} does not match box at t = {b}")));
    }
    Ok(est)
}

fn cmd_refine(
    g: &Global,
    bundle: &Path,
    estimates: Option<&Path>,
    method: &str,
    params: Option<&Path>,
) -> CmdResult {
    let method = parse_method(method)?;
    let params = refine_params(params)?;
    let b = read_bundle(bundle)?;
    let out = out_dir(g, bundle)?;
    let rows = input(read_estimates_csv(&locate(estimates, &out, bundle, ESTIMATES_FILE)))?;
    let dt = b.manifest.delta_t;
    let ests = b
        .tracks
        .iter()
        .map(|t| aligned_estimate(&rows, t, method, dt))
        .collect::<CmdResult<Vec<_>>>()?;
    let sfs = b.superframes().data()?;

    let refined: Vec<Vec<FrameRefinement>> = b
        .tracks
        .par_iter()
        .zip(&ests)
        .map(|(t, e)| refine_track(t, &sfs, e, &params))
        .collect::<Result<_, _>>()
        .usage()?;

    let mut records = Vec::new();
    for (track, refs) in b.tracks.iter().zip(&refined) {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        let mut skipped = [0usize; 2];
        for r in refs {
            match r.status {
                FrameStatus::Refined => *hist.entry(r.pseudo_boxes.len()).or_default() += 1,
                FrameStatus::BelowSpeed => skipped[0] += 1,
                FrameStatus::NoClusters => {
                    skipped[1] += 1;
                    warn!(
                        "track {}: no points near the box at t = {}, original box kept",
                        track.track_id(),
                        r.t_star
                    );
                }
            }
        }
        let hist: Vec<String> = hist.iter().map(|(g, n)| format!("G={g}:{n}")).collect();
        println!(
            "track {}: {} frames, refined {}, below speed {}, no views {}; histogram {}",
            track.track_id(),
            refs.len(),
            refs.len() - skipped[0] - skipped[1],
            skipped[0],
            skipped[1],
            if hist.is_empty() { "-".to_string() } else { hist.join(" ") }
        );
        records.extend(refined_records(refs));
    }
    let path = out.join(REFINED_FILE);
    write_refined_jsonl(&path, &records).data()?;
    println!("wrote {}: {} pseudo boxes", path.display(), records.len());
    Ok(())
}

fn ground_truth(b: &Bundle) -> CmdResult<GroundTruth> {
    b.ground_truth()
        .data()?
        .ok_or_else(|| usage(format!("{} has no {}; evaluation needs ground truth", b.dir.display(), io::GT_FILE)))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn cmd_eval(g: &Global, bundle: &Path, estimates: Option<&Path>, refined: Option<&Path>) -> CmdResult {
    let b = read_bundle(bundle)?;
    let gt = ground_truth(&b)?;
    let out = out_dir(g, bundle)?;
    let rows = input(read_estimates_csv(&locate(estimates, &out, bundle, ESTIMATES_FILE)))?;

    let mut keys: Vec<(u64, Method)> = rows.iter().map(|r| (r.track_id, r.method)).collect();
    keys.sort_by_key(|(id, m)| (*id, Method::ALL.iter().position(|x| x == m)));
    keys.dedup();
    let ests: Vec<(u64, String, Vec<f64>, StateEstimate)> = keys
        .iter()
        .filter_map(|&(id, m)| collect_estimate(&rows, id, m).map(|(t, e)| (id, m.name().to_string(), t, e)))
        .collect();

    let refined_path = locate(refined, &out, bundle, REFINED_FILE);
    let frames = if refined.is_some() || refined_path.exists() {
        let recs = input(read_refined_jsonl(&refined_path))?;
        Some(refined_frames(&recs, &b.tracks, b.manifest.delta_t).map_err(data)?)
    } else {
        None
    };
    let sfs = b.superframes().data()?;
    let report = evaluate(&ests, frames.as_deref(), &sfs, &gt).data()?;

    let mut text = String::from("track_id,method,speed_rmse,speed_tv,position_rmse\n");
    for s in &report.speed {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.track_id,
            s.method,
            format_f64(s.speed_rmse),
            format_f64(s.speed_tv),
            format_f64(s.position_rmse)
        ));
        println!(
            "track {} {:<5} speed rmse {:>10} m/s  tv {:>10} m/s  position rmse {:>10} m",
            s.track_id,
            s.method,
            format_f64(s.speed_rmse),
            format_f64(s.speed_tv),
            format_f64(s.position_rmse)
        );
    }
    write_text(&out.join("metrics.csv"), &text)?;

    let mut text = String::from("track_id,method,t,speed_error,position_error\n");
    for s in &report.speed {
        for ((t, se), pe) in s.times.iter().zip(&s.speed_error).zip(&s.position_error) {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                s.track_id,
                s.method,
                format_f64(*t),
                format_f64(*se),
                format_f64(*pe)
            ));
        }
    }
    write_text(&out.join("speed_errors.csv"), &text)?;

    if let Some(summary) = &report.refine {
        let mut text = String::from(
            "track_id,frame_id,t_star,pseudo_count,view_count,containment_min,coverage_union,coverage_original,center_error_median\n",
        );
        for f in &report.frames {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                f.track_id,
                f.frame_id,
                format_f64(f.t_star),
                f.pseudo_count,
                f.view_count,
                opt(f.containment_min),
                opt(f.coverage_union),
                opt(f.coverage_original),
                opt(f.center_error_median)
            ));
        }
        write_text(&out.join("frame_metrics.csv"), &text)?;
        let text = format!(
            "frames,count_match_rate,containment_min,containment_mean,coverage_not_worse_rate,center_error_median\n{},{},{},{},{},{}\n",
            summary.frames,
            format_f64(summary.count_match_rate),
            opt(summary.containment_min),
            opt(summary.containment_mean),
            format_f64(summary.coverage_not_worse_rate),
            opt(summary.center_error_median)
        );
        write_text(&out.join("refine_metrics.csv"), &text)?;
        println!(
            "refinement over {} frames: view count match {}, containment min {}, coverage not worse {}, center error median {} m",
            summary.frames,
            format_f64(summary.count_match_rate),
            opt(summary.containment_min),
            format_f64(summary.coverage_not_worse_rate),
            opt(summary.center_error_median)
        );
    }
    info!("metrics written to {}", out.display());
    Ok(())
}

fn cmd_plot(g: &Global, bundle: &Path, estimates: Option<&Path>) -> CmdResult {
    let b = read_bundle(bundle)?;
    let out = out_dir(g, bundle)?;
    let rows = input(read_estimates_csv(&locate(estimates, &out, bundle, ESTIMATES_FILE)))?;
    let gt = b.ground_truth().data()?;
    write_plots(&out, &rows, gt.as_ref())
}

/// One SVG per track overlaying every method, with the true speed dashed
/// when known, plus the same series as CSV.
fn write_plots(out: &Path, rows: &[EstimateRow], gt: Option<&GroundTruth>) -> CmdResult {
    // track -> method rank -> (method, (t, s) samples)
    type Curves = BTreeMap<usize, (Method, Vec<(f64, f64)>)>;
    let mut by_track: BTreeMap<u64, Curves> = BTreeMap::new();
    for r in rows {
        let rank = Method::ALL.iter().position(|m| *m == r.method).unwrap_or(usize::MAX);
        by_track
            .entry(r.track_id)
            .or_default()
            .entry(rank)
            .or_insert_with(|| (r.method, Vec::new()))
            .1
            .push((r.t, r.s));
    }
    for (id, methods) in by_track {
        let mut series: Vec<svg::Series> = methods
            .into_values()
            .map(|(m, mut pts)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                svg::Series {
                    label: m.name().to_string(),
                    points: pts,
                    dashed: false,
                }
            })
            .collect();
        let mut csv = String::from("track_id,series,t,speed\n");
        for s in &series {
            for (t, v) in &s.points {
                csv.push_str(&format!("{id},{},{},{}\n", s.label, format_f64(*t), format_f64(*v)));
            }
        }
        if let Some(agent) = gt.and_then(|g| g.agent(id)) {
            let pts: Vec<(f64, f64)> = agent.states.iter().map(|s| (s.t, s.speed)).collect();
            for (t, v) in &pts {
                csv.push_str(&format!("{id},truth,{},{}\n", format_f64(*t), format_f64(*v)));
            }
            series.push(svg::Series {
                label: "truth".into(),
                points: pts,
                dashed: true,
            });
        }
        let chart = svg::line_chart(&format!("track {id} speed"), "time (s)", "speed (m/s)", &series);
        write_text(&out.join(format!("speed_track_{id}.svg")), &chart)?;
        write_text(&out.join(format!("speed_track_{id}.csv")), &csv)?;
    }
    Ok(())
}
