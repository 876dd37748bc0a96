//! `navsim` — build navigation graphs, simulate scans, run instruction
//! episodes under the with-map / no-map protocols, and evaluate results.
//!
//! Exit codes: 0 success, 2 input format error, 3 episode batch contained
//! failures (the report is still written).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use navsim_core::augment::{color_jitter, JitterFactors, RgbImage};
use navsim_core::dataset::{generate_dataset, load_dataset, save_dataset, validate_dataset};
use navsim_core::geometry::{Point2, Pose2D};
use navsim_core::gridworld::{load_map, save_map, simulate_scan, OccupancyGrid, ScanConfig};
use navsim_core::localization::{pf_init, pose_log_line, InitMode, OdomDelta};
use navsim_core::metrics::{aggregate, evaluate_episode, EpisodeResult, Summary};
use navsim_core::navgraph::{
    graph_stats, load_graph, save_graph, SamplingConstraints,
    DEFAULT_MAX_EDGE_LENGTH,
};
use navsim_core::planner::{build_costmap, plan_path, CostmapParams, UnknownPolicy};
use navsim_core::runner::{
    decisions_jsonl, ndtw_matrix, run_batch, trajectory_from_jsonl, trajectory_jsonl, AgentKind,
    EpisodeConfig, Mode,
};
use navsim_core::subgoal::{
    bin_scan, exact_emd, extract_waypoints, geometric_predict, match_eval, mean_cost,
    sinkhorn_divergence, DiscreteMeasure, PredictorParams, RadialGeometry, SinkhornParams,
    WaypointParams, WaypointSet,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "navsim", version, about = "2D navigation simulation and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Navigation graph tools.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Sample shortest-path trajectories into an episode dataset.
    SamplePaths(SamplePathsArgs),
    /// Map file tools.
    Map {
        #[command(subcommand)]
        command: MapCommand,
    },
    /// Laser scan simulation.
    Scan {
        #[command(subcommand)]
        command: ScanCommand,
    },
    /// Subgoal prediction and scoring.
    Subgoal {
        #[command(subcommand)]
        command: SubgoalCommand,
    },
    /// Particle-filter pose tracking demo.
    Pf {
        #[command(subcommand)]
        command: PfCommand,
    },
    /// Plan a path on a map.
    Plan(PlanArgs),
    /// Run an episode batch under a protocol.
    Run(RunArgs),
    /// Evaluate pre-recorded trajectories against a dataset.
    Eval(EvalArgs),
    /// Apply color jitter to an image.
    Jitter(JitterArgs),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Build a graph from viewpoint records (applies the edge cutoff).
    Build {
        /// Viewpoint/visibility records, JSON.
        #[arg(long)]
        viewpoints: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_EDGE_LENGTH)]
        max_edge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-graph statistics.
    Stats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_EDGE_LENGTH)]
        max_edge: f64,
    },
}

#[derive(Args)]
struct SamplePathsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(short, default_value_t = 37)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    min_length: f64,
    #[arg(long, default_value_t = 4)]
    min_edges: usize,
    #[arg(long, default_value_t = 6)]
    max_edges: usize,
    #[arg(long, default_value = "synthetic")]
    scan: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MapCommand {
    /// Load a PGM/YAML map and re-emit it in canonical form.
    Convert {
        /// Path to the map YAML (the image path inside is resolved
        /// relative to it).
        #[arg(long)]
        map: PathBuf,
        /// Output YAML path; the PGM is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset against a graph.
    #[command(name = "validate-dataset")]
    ValidateDataset {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_EDGE_LENGTH)]
        max_edge: f64,
    },
}

#[derive(Subcommand)]
enum ScanCommand {
    /// Simulate one scan at a pose.
    Simulate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 270.0)]
        fov_deg: f64,
        #[arg(long, default_value_t = 541)]
        beams: usize,
        #[arg(long, default_value_t = 30.0)]
        range: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SubgoalCommand {
    /// Geometric waypoint prediction from a simulated scan.
    Predict {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 5)]
        max_count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Waypoint match rates against ground-truth points.
    Eval {
        /// Predicted waypoint set, JSON.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth points, JSON list of [x, y].
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 1.5])]
        radii: Vec<f64>,
    },
    /// Sinkhorn divergence between two discrete measures.
    Sinkhorn {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Also compute the exact transport cost (small inputs only).
        #[arg(long)]
        exact: bool,
    },
}

#[derive(Subcommand)]
enum PfCommand {
    /// Track a scripted route with the particle filter; logs truth and
    /// estimate poses as JSONL.
    Track {
        #[arg(long)]
        map: PathBuf,
        /// Route waypoints, JSON list of [x, y].
        #[arg(long)]
        route: PathBuf,
        #[arg(long, default_value_t = 500)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    map: PathBuf,
    /// Start position "x,y".
    #[arg(long)]
    from: String,
    /// Goal position "x,y".
    #[arg(long)]
    to: String,
    #[arg(long, default_value = "lethal")]
    unknown: String,
}

#[derive(Args)]
struct RunArgs {
    /// with-map | no-map
    #[arg(long)]
    mode: String,
    /// oracle | random | bridge:<host:port>
    #[arg(long, default_value = "oracle")]
    agent: String,
    #[arg(long)]
    dataset: PathBuf,
    /// World map YAML.
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_EDGE_LENGTH)]
    max_edge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_decisions: usize,
    /// Run the particle filter alongside and log its estimates.
    #[arg(long)]
    track_pose: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of trajectory logs (trajs/<path_id>.jsonl), as written by
    /// `run`, or a directory directly containing <path_id>.jsonl files.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_EDGE_LENGTH)]
    max_edge: f64,
}

#[derive(Args)]
struct JitterArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    brightness: f64,
    #[arg(long, default_value_t = 0.3)]
    contrast: f64,
    #[arg(long, default_value_t = 0.3)]
    saturation: f64,
    #[arg(long, default_value_t = 0.01)]
    hue: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Errors from malformed inputs exit with code 2.
#[derive(Debug)]
struct FormatError(anyhow::Error);

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for FormatError {}

fn format_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(FormatError(e.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<FormatError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Graph { command } => graph_command(command),
        Command::SamplePaths(args) => sample_paths(args),
        Command::Map { command } => map_command(command),
        Command::Scan { command } => scan_command(command),
        Command::Subgoal { command } => subgoal_command(command),
        Command::Pf { command } => pf_command(command),
        Command::Plan(args) => plan_command(args),
        Command::Run(args) => run_command(args),
        Command::Eval(args) => eval_command(args),
        Command::Jitter(args) => jitter_command(args),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph_file(path: &Path, max_edge: f64) -> Result<navsim_core::navgraph::NavGraph> {
    load_graph(&read_text(path)?, max_edge).map_err(format_err)
}

fn load_map_file(yaml_path: &Path) -> Result<OccupancyGrid> {
    let yaml = read_text(yaml_path)?;
    let meta = navsim_core::gridworld::MapMeta::parse(&yaml).map_err(format_err)?;
    let image_path = yaml_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.image);
    let pgm =
        fs::read(&image_path).with_context(|| format!("reading {}", image_path.display()))?;
    load_map(&pgm, &yaml).map_err(format_err)
}

fn parse_xy(s: &str) -> Result<Point2> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format_err(anyhow!("expected \"x,y\", got {s:?}")));
    }
    let x: f64 = parts[0].trim().parse().map_err(format_err)?;
    let y: f64 = parts[1].trim().parse().map_err(format_err)?;
    Ok(Point2::new(x, y))
}

fn graph_command(command: GraphCommand) -> Result<ExitCode> {
    match command {
        GraphCommand::Build {
            viewpoints,
            max_edge,
            out,
        } => {
            let graph = load_graph_file(&viewpoints, max_edge)?;
            fs::write(&out, save_graph(&graph))?;
            let stats = graph_stats(&graph).map_err(format_err)?;
            println!(
                "built graph: {} viewpoints, {} edges (cutoff {max_edge} m) -> {}",
                stats.num_viewpoints,
                graph.num_edges(),
                out.display()
            );
        }
        GraphCommand::Stats { graph, max_edge } => {
            let graph = load_graph_file(&graph, max_edge)?;
            let stats = graph_stats(&graph).map_err(format_err)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sample_paths(args: SamplePathsArgs) -> Result<ExitCode> {
    let graph = load_graph_file(&args.graph, DEFAULT_MAX_EDGE_LENGTH)?;
    let constraints = SamplingConstraints {
        min_length: args.min_length,
        edge_range: (args.min_edges, args.max_edges),
    };
    let episodes =
        generate_dataset(&graph, args.n, &constraints, args.seed, &args.scan).map_err(format_err)?;
    fs::write(&args.out, save_dataset(&episodes))?;
    println!("sampled {} trajectories -> {}", episodes.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn map_command(command: MapCommand) -> Result<ExitCode> {
    match command {
        MapCommand::Convert { map, out } => {
            let grid = load_map_file(&map)?;
            let (pgm, mut yaml) = save_map(&grid);
            let pgm_name = out
                .file_stem()
                .map(|s| format!("{}.pgm", s.to_string_lossy()))
                .unwrap_or_else(|| "map.pgm".into());
            yaml = yaml.replace("image: map.pgm", &format!("image: {pgm_name}"));
            let pgm_path = out.with_file_name(&pgm_name);
            fs::write(&pgm_path, pgm)?;
            fs::write(&out, yaml)?;
            println!(
                "wrote {} ({}x{} cells) and {}",
                out.display(),
                grid.width(),
                grid.height(),
                pgm_path.display()
            );
        }
        MapCommand::ValidateDataset {
            dataset,
            graph,
            max_edge,
        } => {
            let graph = load_graph_file(&graph, max_edge)?;
            let episodes = load_dataset(&read_text(&dataset)?).map_err(format_err)?;
            let report = validate_dataset(&episodes, &graph);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.is_clean() {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn scan_command(command: ScanCommand) -> Result<ExitCode> {
    match command {
        ScanCommand::Simulate {
            map,
            x,
            y,
            theta,
            fov_deg,
            beams,
            range,
            out,
        } => {
            let grid = load_map_file(&map)?;
            let cfg = ScanConfig {
                fov: fov_deg.to_radians(),
                n_beams: beams,
                range_max: range,
            };
            let scan =
                simulate_scan(&grid, Pose2D::new(x, y, theta), &cfg).map_err(format_err)?;
            let json = serde_json::to_string(&scan)?;
            match out {
                Some(path) => {
                    fs::write(&path, json)?;
                    println!("wrote scan ({} beams) -> {}", scan.n_beams(), path.display());
                }
                None => println!("{json}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Deserialize)]
struct MeasureFile {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    masses: Option<Vec<f64>>,
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    let file: MeasureFile = serde_json::from_str(&read_text(path)?).map_err(format_err)?;
    let points: Vec<Point2> = file.points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    match file.masses {
        Some(masses) => DiscreteMeasure::new(points, masses).map_err(format_err),
        None => DiscreteMeasure::uniform(points).map_err(format_err),
    }
}

fn subgoal_command(command: SubgoalCommand) -> Result<ExitCode> {
    match command {
        SubgoalCommand::Predict {
            map,
            x,
            y,
            theta,
            threshold,
            max_count,
            out,
        } => {
            let grid = load_map_file(&map)?;
            let pose = Pose2D::new(x, y, theta);
            let scan = simulate_scan(&grid, pose, &ScanConfig::default()).map_err(format_err)?;
            let radial = bin_scan(&scan, RadialGeometry::default());
            let probabilities = geometric_predict(&radial, &PredictorParams::default());
            let params = WaypointParams {
                threshold,
                max_count,
                ..Default::default()
            };
            let waypoints = extract_waypoints(&probabilities, &params).to_world(pose);
            let json = serde_json::to_string_pretty(&waypoints)?;
            match out {
                Some(path) => {
                    fs::write(&path, json)?;
                    println!("wrote {} waypoints -> {}", waypoints.len(), path.display());
                }
                None => println!("{json}"),
            }
        }
        SubgoalCommand::Eval { pred, truth, radii } => {
            let set: WaypointSet = serde_json::from_str(&read_text(&pred)?).map_err(format_err)?;
            let points: Vec<[f64; 2]> =
                serde_json::from_str(&read_text(&truth)?).map_err(format_err)?;
            let truth_points: Vec<Point2> =
                points.iter().map(|p| Point2::new(p[0], p[1])).collect();
            let fractions = match_eval(&set, &truth_points, &radii);
            for (r, f) in radii.iter().zip(&fractions) {
                println!("within {r} m: {:.3}", f);
            }
        }
        SubgoalCommand::Sinkhorn {
            a,
            b,
            epsilon,
            max_iters,
            tol,
            exact,
        } => {
            let ma = load_measure(&a)?;
            let mb = load_measure(&b)?;
            let params = SinkhornParams {
                epsilon,
                max_iters,
                tol,
            };
            let result = sinkhorn_divergence(&ma, &mb, &params).map_err(format_err)?;
            println!(
                "sinkhorn divergence: {:.9} (converged: {}, iterations: {}, mean cost: {:.4})",
                result.value,
                result.converged,
                result.iterations,
                mean_cost(&ma, &mb)
            );
            if exact {
                let emd = exact_emd(&ma, &mb).map_err(format_err)?;
                println!("exact transport cost: {emd:.9}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn pf_command(command: PfCommand) -> Result<ExitCode> {
    match command {
        PfCommand::Track {
            map,
            route,
            particles,
            seed,
            out,
        } => {
            let grid = std::sync::Arc::new(load_map_file(&map)?);
            let points: Vec<[f64; 2]> =
                serde_json::from_str(&read_text(&route)?).map_err(format_err)?;
            if points.len() < 2 {
                return Err(format_err(anyhow!("route needs at least 2 waypoints")));
            }
            let route: Vec<Point2> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();

            let start = Pose2D::new(route[0].x, route[0].y, route[0].bearing_to(route[1]));
            let mut pf = pf_init(
                grid.clone(),
                particles,
                InitMode::Gaussian {
                    pose: start,
                    sigma_xy: 0.1,
                    sigma_theta: 0.05,
                },
                seed,
            )
            .map_err(format_err)?;

            use rand::SeedableRng;
            use rand_distr_shim::sample_normal;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9d5);
            let cfg = ScanConfig::default();
            let mut truth = start;
            let mut log = vec![pose_log_line(0.0, truth, false)];
            let mut t = 0.0;
            let mut errors = Vec::new();
            for leg in route.windows(2) {
                let goal = leg[1];
                let mut guard = 0;
                while truth.position().distance(goal) > 0.2 && guard < 400 {
                    guard += 1;
                    t += 1.0;
                    let prev = truth;
                    let bearing = truth.position().bearing_to(goal);
                    let step = 0.15f64.min(truth.position().distance(goal));
                    truth = Pose2D::new(
                        truth.x + step * bearing.cos(),
                        truth.y + step * bearing.sin(),
                        bearing,
                    );
                    let ideal = OdomDelta::between(prev, truth);
                    let noisy = OdomDelta {
                        d_rot1: ideal.d_rot1 + sample_normal(&mut rng, 0.02),
                        d_trans: ideal.d_trans + sample_normal(&mut rng, 0.03),
                        d_rot2: ideal.d_rot2 + sample_normal(&mut rng, 0.02),
                    };
                    let scan = simulate_scan(&grid, truth, &cfg).map_err(format_err)?;
                    pf.step(&noisy, &scan);
                    let est = pf.estimate();
                    errors.push(est.position().distance(truth.position()));
                    log.push(pose_log_line(t, truth, false));
                    log.push(pose_log_line(t, est, true));
                }
            }
            let text = log.join("\n") + "\n";
            if let Some(path) = &out {
                fs::write(path, &text)?;
            } else {
                print!("{text}");
            }
            let final_err = errors.last().copied().unwrap_or(0.0);
            let mean_err = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
            eprintln!(
                "tracked {} steps: mean error {:.3} m, final error {:.3} m",
                errors.len(),
                mean_err,
                final_err
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Small local shim so the CLI does not need rand_distr for one Gaussian.
mod rand_distr_shim {
    use rand::Rng;

    /// Box-Muller sample with the given standard deviation.
    pub fn sample_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn plan_command(args: PlanArgs) -> Result<ExitCode> {
    let grid = load_map_file(&args.map)?;
    let from = parse_xy(&args.from)?;
    let to = parse_xy(&args.to)?;
    let policy = match args.unknown.as_str() {
        "lethal" => UnknownPolicy::Lethal,
        "penalty" => UnknownPolicy::TraversableWithPenalty(2.0),
        other => return Err(format_err(anyhow!("unknown policy {other:?}"))),
    };
    let costmap = build_costmap(&grid, &CostmapParams::default(), policy);
    let path = plan_path(&costmap, Pose2D::new(from.x, from.y, 0.0), to).map_err(format_err)?;
    let coords: Vec<[f64; 2]> = path.iter().map(|p| [p.x, p.y]).collect();
    println!("{}", serde_json::to_string(&coords)?);
    Ok(ExitCode::SUCCESS)
}

fn parse_agent(s: &str) -> Result<AgentKind> {
    match s {
        "oracle" => Ok(AgentKind::Oracle),
        "random" => Ok(AgentKind::Random),
        other => match other.strip_prefix("bridge:") {
            Some(endpoint) => Ok(AgentKind::Bridge {
                endpoint: endpoint.to_string(),
            }),
            None => Err(format_err(anyhow!(
                "agent must be oracle, random, or bridge:<endpoint>, got {other:?}"
            ))),
        },
    }
}

fn run_command(args: RunArgs) -> Result<ExitCode> {
    let mode = match args.mode.as_str() {
        "with-map" => Mode::WithMap,
        "no-map" => Mode::NoMap,
        other => return Err(format_err(anyhow!("mode must be with-map or no-map, got {other:?}"))),
    };
    let world = load_map_file(&args.world)?;
    let graph = load_graph_file(&args.graph, args.max_edge)?;
    let episodes = load_dataset(&read_text(&args.dataset)?).map_err(format_err)?;

    let mut cfg = EpisodeConfig::new(mode, parse_agent(&args.agent)?);
    cfg.seed = args.seed;
    cfg.max_decisions = args.max_decisions;
    cfg.track_pose = args.track_pose;

    let batch = run_batch(&world, &graph, &episodes, &cfg)?;

    fs::create_dir_all(args.out.join("trajs"))?;
    fs::create_dir_all(args.out.join("decisions"))?;
    if args.track_pose {
        fs::create_dir_all(args.out.join("pose_log"))?;
    }
    for run in &batch.runs {
        fs::write(
            args.out.join("trajs").join(format!("{}.jsonl", run.episode_id)),
            trajectory_jsonl(run),
        )?;
        fs::write(
            args.out
                .join("decisions")
                .join(format!("{}.jsonl", run.episode_id)),
            decisions_jsonl(run),
        )?;
        if args.track_pose {
            let lines: Vec<String> = run
                .pose_log
                .iter()
                .map(|e| serde_json::to_string(e).expect("pose log entry"))
                .collect();
            fs::write(
                args.out
                    .join("pose_log")
                    .join(format!("{}.jsonl", run.episode_id)),
                lines.join("\n") + "\n",
            )?;
        }
    }
    write_report(&args.out, &batch.summary)?;
    // Self-similarity matrix for this single setting.
    let matrix = ndtw_matrix(&[&batch.runs]);
    fs::write(
        args.out.join("ndtw_matrix.json"),
        serde_json::to_string_pretty(&matrix)?,
    )?;

    print!("{}", batch.summary.to_table());
    if batch.contains_failures() {
        eprintln!(
            "batch contained {} collision(s) and {} navigation failure(s)",
            batch.summary.collisions, batch.summary.navigation_failures
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_report(dir: &Path, summary: &Summary) -> Result<()> {
    fs::write(dir.join("report.txt"), summary.to_table())?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

fn eval_command(args: EvalArgs) -> Result<ExitCode> {
    let graph = load_graph_file(&args.graph, args.max_edge)?;
    let episodes = load_dataset(&read_text(&args.dataset)?).map_err(format_err)?;
    let trajs_dir = if args.pred.join("trajs").is_dir() {
        args.pred.join("trajs")
    } else {
        args.pred.clone()
    };
    let mut results: Vec<EpisodeResult> = Vec::new();
    for ep in &episodes {
        let path = trajs_dir.join(format!("{}.jsonl", ep.path_id));
        let text = read_text(&path)?;
        let traj = trajectory_from_jsonl(&text).map_err(format_err)?;
        let reference: Vec<Point2> = ep
            .path
            .iter()
            .map(|id| {
                graph
                    .viewpoint(id)
                    .map(|vp| vp.point2())
                    .ok_or_else(|| format_err(anyhow!("unknown viewpoint {id:?}")))
            })
            .collect::<Result<_>>()?;
        results.push(evaluate_episode(
            &traj,
            &reference,
            ep.distance,
            navsim_core::metrics::SUCCESS_RADIUS,
        ));
    }
    let summary = aggregate(&results).map_err(format_err)?;
    print!("{}", summary.to_table());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn jitter_command(args: JitterArgs) -> Result<ExitCode> {
    let img = image::open(&args.image)
        .map_err(format_err)?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let buffer = RgbImage::new(w, h, img.into_raw());
    let factors = JitterFactors {
        brightness: args.brightness,
        contrast: args.contrast,
        saturation: args.saturation,
        hue: args.hue,
    };
    let jittered = color_jitter(&buffer, &factors, args.seed);
    let out_img: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, jittered.data().to_vec())
            .ok_or_else(|| anyhow!("buffer size mismatch"))?;
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("png") => out_img.save_with_format(&args.out, image::ImageFormat::Png)?,
        Some("ppm") | Some("pnm") => out_img.save_with_format(&args.out, image::ImageFormat::Pnm)?,
        _ => bail!("output must be .png or .ppm (lossless only)"),
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
