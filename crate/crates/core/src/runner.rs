//! Episode orchestration for both experimental protocols.
//!
//! In `with_map` mode the robot drives on the full prior map and its action
//! candidates are the graph neighbors of the nearest viewpoint. In `no_map`
//! mode the occupancy map is rebuilt from scratch every episode and the
//! candidates come from the subgoal predictor (at most 5); the navigation
//! graph is consulted only to score the resulting trajectory. Agents are
//! pluggable: a deterministic oracle, a seeded random agent, or an external
//! process speaking newline-delimited JSON over TCP.

use crate::dataset::InstructionEpisode;
use crate::geometry::{Point2, Pose2D};
use crate::gridworld::{simulate_scan, DistanceField, OccupancyGrid};
use crate::localization::{pf_init, InitMode, OdomDelta, ParticleFilter, PoseLogEntry};
use crate::mapping::LogOddsMap;
use crate::metrics::{
    aggregate, evaluate_episode, trajectory_ndtw, EpisodeResult, Summary, Trajectory,
};
use crate::navgraph::NavGraph;
use crate::planner::{
    drive_into, AccumulatingBelief, BeliefState, DriveConfig, DriveOutcome, PriorMapBelief,
};
use crate::subgoal::{
    bin_scan, extract_waypoints, geometric_predict, PredictorParams, RadialGeometry,
    RadialOccupancyMap, WaypointGrid, WaypointParams,
};
use crate::gridworld::Cell;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("bridge timed out")]
    BridgeTimeout,
    #[error("bridge connection error: {0}")]
    Connection(#[from] std::io::Error),
}

/// One action candidate offered to the agent. In `with_map` mode it carries
/// the graph viewpoint id; range and heading are robot-relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub range: f64,
    pub heading: f64,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum AgentDecision {
    Choose { index: usize },
    Stop,
}

/// Everything an agent sees at one decision point.
pub struct DecisionContext<'a> {
    pub episode_id: &'a str,
    pub step: usize,
    pub instruction: &'a str,
    pub candidates: &'a [Candidate],
    pub pose: Pose2D,
}

pub trait Agent {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<AgentDecision, RunnerError>;
}

/// Deterministic upper-bound agent: walks the reference path in order,
/// choosing the candidate nearest to the next unreached reference point,
/// and stops once inside the success radius when no candidate would get it
/// closer to the goal.
pub struct OracleAgent {
    reference: Vec<Point2>,
    next_target: usize,
    advance_radius: f64,
    success_radius: f64,
}

impl OracleAgent {
    pub fn new(reference: Vec<Point2>, success_radius: f64) -> Self {
        Self {
            reference,
            next_target: 0,
            advance_radius: 1.0,
            success_radius,
        }
    }

    fn goal(&self) -> Point2 {
        *self.reference.last().expect("non-empty reference")
    }
}

impl Agent for OracleAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<AgentDecision, RunnerError> {
        let here = ctx.pose.position();
        while self.next_target < self.reference.len()
            && here.distance(self.reference[self.next_target]) < self.advance_radius
        {
            self.next_target += 1;
        }
        let target = self
            .reference
            .get(self.next_target)
            .copied()
            .unwrap_or_else(|| self.goal());

        let goal_dist = here.distance(self.goal());
        if goal_dist < self.success_radius {
            let improves = ctx
                .candidates
                .iter()
                .any(|c| Point2::new(c.x, c.y).distance(self.goal()) < goal_dist);
            if !improves {
                return Ok(AgentDecision::Stop);
            }
        }
        if ctx.candidates.is_empty() {
            // Nothing to choose and not close enough to stop; the runner
            // records this as a navigation failure.
            return Ok(AgentDecision::Choose { index: 0 });
        }
        let best = ctx
            .candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = Point2::new(a.x, a.y).distance(target);
                let db = Point2::new(b.x, b.y).distance(target);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .expect("non-empty candidates");
        Ok(AgentDecision::Choose { index: best })
    }
}

/// Uniform random choice over the candidates plus the stop action.
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<AgentDecision, RunnerError> {
        let k = self.rng.random_range(0..=ctx.candidates.len());
        if k == ctx.candidates.len() {
            Ok(AgentDecision::Stop)
        } else {
            Ok(AgentDecision::Choose { index: k })
        }
    }
}

// ---------------------------------------------------------------------------
// Bridge protocol
// ---------------------------------------------------------------------------

/// Compact radial map payload for predictor requests: cells as one
/// character per bin, `F`/`O`/`U`, heading-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRadial {
    pub n_heading: usize,
    pub n_range: usize,
    pub max_radius: f64,
    pub cells: String,
}

impl WireRadial {
    pub fn from_map(map: &RadialOccupancyMap) -> Self {
        let cells = map
            .cells()
            .iter()
            .map(|c| match c {
                Cell::Free => 'F',
                Cell::Occupied => 'O',
                Cell::Unknown => 'U',
            })
            .collect();
        Self {
            n_heading: map.geometry.n_heading,
            n_range: map.geometry.n_range,
            max_radius: map.geometry.max_radius,
            cells,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeRequest<'a> {
    /// "decision" for agents, "predict" for waypoint predictors.
    pub r#type: &'a str,
    pub episode_id: &'a str,
    pub step: usize,
    pub instruction: &'a str,
    pub pose: Pose2D,
    pub candidates: &'a [Candidate],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial: Option<WireRadial>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum BridgeResponse {
    Choose {
        index: usize,
    },
    Stop,
    Grid {
        n_heading: usize,
        n_range: usize,
        max_radius: f64,
        probabilities: Vec<f64>,
    },
    Waypoints {
        waypoints: Vec<crate::subgoal::Waypoint>,
    },
}

pub const BRIDGE_TIMEOUT: Duration = Duration::from_secs(30);

/// One newline-delimited JSON session with an external agent or predictor.
/// Requests are strictly one in flight; a read timeout aborts the episode.
pub struct BridgeSession {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl BridgeSession {
    pub fn connect(endpoint: &str) -> Result<Self, RunnerError> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_read_timeout(Some(BRIDGE_TIMEOUT))?;
        stream.set_write_timeout(Some(BRIDGE_TIMEOUT))?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            writer: stream,
            reader,
        })
    }

    pub fn request(&mut self, req: &BridgeRequest) -> Result<BridgeResponse, RunnerError> {
        let mut line = serde_json::to_string(req)
            .map_err(|e| RunnerError::Protocol(format!("request serialization: {e}")))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let mut response = String::new();
        match self.reader.read_line(&mut response) {
            Ok(0) => Err(RunnerError::Protocol("bridge closed the connection".into())),
            Ok(_) => serde_json::from_str(response.trim())
                .map_err(|e| RunnerError::Protocol(format!("bad response {response:?}: {e}"))),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                Err(RunnerError::BridgeTimeout)
            }
            Err(e) => Err(e.into()),
        }
    }
}

struct BridgeAgent {
    session: BridgeSession,
}

impl Agent for BridgeAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<AgentDecision, RunnerError> {
        let response = self.session.request(&BridgeRequest {
            r#type: "decision",
            episode_id: ctx.episode_id,
            step: ctx.step,
            instruction: ctx.instruction,
            pose: ctx.pose,
            candidates: ctx.candidates,
            radial: None,
        })?;
        match response {
            BridgeResponse::Choose { index } => {
                if index >= ctx.candidates.len() {
                    return Err(RunnerError::Protocol(format!(
                        "candidate index {index} out of range ({} offered)",
                        ctx.candidates.len()
                    )));
                }
                Ok(AgentDecision::Choose { index })
            }
            BridgeResponse::Stop => Ok(AgentDecision::Stop),
            _ => Err(RunnerError::Protocol(
                "agent session answered with a predictor payload".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Episode configuration and records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WithMap,
    NoMap,
}

#[derive(Debug, Clone)]
pub enum AgentKind {
    Oracle,
    Random,
    Bridge { endpoint: String },
}

#[derive(Debug, Clone)]
pub enum PredictorKind {
    Geometric(PredictorParams),
    Bridge { endpoint: String },
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub mode: Mode,
    pub max_decisions: usize,
    pub agent: AgentKind,
    pub drive: DriveConfig,
    pub waypoint: WaypointParams,
    pub predictor: PredictorKind,
    pub radial: RadialGeometry,
    /// Radius for snapping the robot to its current graph viewpoint.
    pub snap_radius: f64,
    pub success_radius: f64,
    pub seed: u64,
    /// Run the particle filter alongside and log its estimates.
    pub track_pose: bool,
}

impl EpisodeConfig {
    pub fn new(mode: Mode, agent: AgentKind) -> Self {
        Self {
            mode,
            max_decisions: 20,
            agent,
            drive: DriveConfig::default(),
            waypoint: WaypointParams::default(),
            predictor: PredictorKind::Geometric(PredictorParams::default()),
            radial: RadialGeometry::default(),
            snap_radius: 0.5,
            success_radius: crate::metrics::SUCCESS_RADIUS,
            seed: 0,
            track_pose: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub candidates: Vec<Candidate>,
    pub decision: AgentDecision,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryEvent {
    /// Index into the trajectory samples.
    pub sample: usize,
    pub event: String,
}

#[derive(Debug)]
pub struct EpisodeRun {
    pub episode_id: String,
    pub trajectory: Trajectory,
    pub result: EpisodeResult,
    pub decisions: Vec<DecisionRecord>,
    pub events: Vec<TrajectoryEvent>,
    pub pose_log: Vec<PoseLogEntry>,
    /// Final particle-filter error, when tracking was enabled.
    pub tracking_error: Option<f64>,
}

// ---------------------------------------------------------------------------
// Episode execution
// ---------------------------------------------------------------------------

fn make_agent(
    cfg: &EpisodeConfig,
    episode_index: u64,
    reference: &[Point2],
) -> Result<Box<dyn Agent>, RunnerError> {
    Ok(match &cfg.agent {
        AgentKind::Oracle => Box::new(OracleAgent::new(reference.to_vec(), cfg.success_radius)),
        AgentKind::Random => Box::new(RandomAgent::new(cfg.seed.wrapping_add(episode_index))),
        AgentKind::Bridge { endpoint } => Box::new(BridgeAgent {
            session: BridgeSession::connect(endpoint)?,
        }),
    })
}

fn reference_points(
    graph: &NavGraph,
    episode: &InstructionEpisode,
) -> Result<Vec<Point2>, RunnerError> {
    episode
        .path
        .iter()
        .map(|id| {
            graph
                .viewpoint(id)
                .filter(|vp| vp.included)
                .map(|vp| vp.point2())
                .ok_or_else(|| {
                    RunnerError::InvalidEpisode(format!(
                        "episode {} references unknown or excluded viewpoint {id:?}",
                        episode.path_id
                    ))
                })
        })
        .collect()
}

struct PoseTracker {
    filter: ParticleFilter,
    last_pose: Pose2D,
    log: Vec<PoseLogEntry>,
}

impl PoseTracker {
    fn new(world: &OccupancyGrid, start: Pose2D, seed: u64) -> Option<Self> {
        let filter = pf_init(
            Arc::new(world.clone()),
            500,
            InitMode::Gaussian {
                pose: start,
                sigma_xy: 0.1,
                sigma_theta: 0.05,
            },
            seed,
        )
        .ok()?;
        Some(Self {
            filter,
            last_pose: start,
            log: vec![PoseLogEntry {
                t: 0.0,
                x: start.x,
                y: start.y,
                theta: start.theta,
                estimate: false,
            }],
        })
    }

    fn update(&mut self, world: &OccupancyGrid, cfg: &DriveConfig, t: f64, pose: Pose2D) {
        let Ok(scan) = simulate_scan(world, pose, &cfg.scan) else {
            return;
        };
        let odom = OdomDelta::between(self.last_pose, pose);
        self.filter.step(&odom, &scan);
        self.last_pose = pose;
        let est = self.filter.estimate();
        self.log.push(PoseLogEntry {
            t,
            x: pose.x,
            y: pose.y,
            theta: pose.theta,
            estimate: false,
        });
        self.log.push(PoseLogEntry {
            t,
            x: est.x,
            y: est.y,
            theta: est.theta,
            estimate: true,
        });
    }

    fn final_error(&self) -> f64 {
        self.filter
            .estimate()
            .position()
            .distance(self.last_pose.position())
    }
}

struct EpisodeState<'a> {
    world: &'a OccupancyGrid,
    world_distance: DistanceField,
    trajectory: Trajectory,
    clock: f64,
    pose: Pose2D,
    decisions: Vec<DecisionRecord>,
    events: Vec<TrajectoryEvent>,
    collision: bool,
    navigation_failure: bool,
    tracker: Option<PoseTracker>,
}

impl<'a> EpisodeState<'a> {
    fn new(world: &'a OccupancyGrid, start: Pose2D, cfg: &EpisodeConfig) -> Self {
        Self {
            world,
            world_distance: DistanceField::from_grid(world),
            trajectory: Trajectory::single(0.0, start),
            clock: 0.0,
            pose: start,
            decisions: Vec::new(),
            events: Vec::new(),
            collision: false,
            navigation_failure: false,
            tracker: if cfg.track_pose {
                PoseTracker::new(world, start, cfg.seed ^ 0x5eed)
            } else {
                None
            },
        }
    }

    fn mark(&mut self, event: &str) {
        self.events.push(TrajectoryEvent {
            sample: self.trajectory.samples().len() - 1,
            event: event.to_string(),
        });
    }

    /// Drive to a world point on the given belief. Returns false when the
    /// episode must end (collision or navigation failure).
    fn drive(&mut self, belief: &mut dyn BeliefState, goal: Point2, cfg: &EpisodeConfig) -> bool {
        let (outcome, pose) = drive_into(
            self.world,
            &self.world_distance,
            belief,
            &mut self.trajectory,
            &mut self.clock,
            self.pose,
            goal,
            &cfg.drive,
        );
        self.pose = pose;
        if let Some(tracker) = self.tracker.as_mut() {
            tracker.update(self.world, &cfg.drive, self.clock, pose);
        }
        match outcome {
            DriveOutcome::Reached => true,
            DriveOutcome::Collision => {
                self.collision = true;
                self.mark("collision");
                false
            }
            DriveOutcome::NavigationFailure => {
                self.navigation_failure = true;
                self.mark("navigation_failure");
                false
            }
        }
    }

    fn finish(
        self,
        reference: &[Point2],
        geodesic: f64,
        episode_id: String,
        cfg: &EpisodeConfig,
    ) -> EpisodeRun {
        let result = evaluate_episode(&self.trajectory, reference, geodesic, cfg.success_radius)
            .with_flags(self.collision, self.navigation_failure);
        let tracking_error = self.tracker.as_ref().map(|t| t.final_error());
        EpisodeRun {
            episode_id,
            trajectory: self.trajectory,
            result,
            decisions: self.decisions,
            events: self.events,
            pose_log: self.tracker.map(|t| t.log).unwrap_or_default(),
            tracking_error,
        }
    }
}

/// Run one episode with a prior map and the navigation graph: candidates
/// are graph neighbors of the robot's current viewpoint, and driving plans
/// on the full map.
pub fn run_episode_with_map(
    world: &OccupancyGrid,
    graph: &NavGraph,
    episode: &InstructionEpisode,
    episode_index: u64,
    cfg: &EpisodeConfig,
) -> Result<EpisodeRun, RunnerError> {
    let reference = reference_points(graph, episode)?;
    let start = Pose2D::new(reference[0].x, reference[0].y, episode.heading);
    let mut agent = make_agent(cfg, episode_index, &reference)?;
    let mut belief = PriorMapBelief::new(world.clone());
    let mut state = EpisodeState::new(world, start, cfg);
    let episode_id = episode.path_id.to_string();
    let instruction = episode.instructions[0].as_str();

    for step in 0..cfg.max_decisions {
        // Snap to the current graph viewpoint.
        let Some((vp, dist)) = graph.nearest_viewpoint(state.pose.position()) else {
            state.navigation_failure = true;
            break;
        };
        if dist > cfg.snap_radius {
            state.navigation_failure = true;
            state.mark("snap_failure");
            break;
        }
        let candidates: Vec<Candidate> = graph
            .neighbors(&vp.id)
            .map_err(|e| RunnerError::InvalidEpisode(e.to_string()))?
            .iter()
            .map(|n| {
                let p = n.point2();
                let (range, heading) = state.pose.range_bearing_to(p);
                Candidate {
                    id: Some(n.id.clone()),
                    range,
                    heading,
                    x: p.x,
                    y: p.y,
                    confidence: 1.0,
                }
            })
            .collect();

        let decision = decide(
            &mut *agent,
            &episode_id,
            step,
            instruction,
            &candidates,
            state.pose,
            &mut state,
        )?;
        let Some(index) = decision else { break };
        let target = Point2::new(candidates[index].x, candidates[index].y);
        if !state.drive(&mut belief, target, cfg) {
            break;
        }
    }
    Ok(state.finish(&reference, episode.distance, episode_id, cfg))
}

/// Run one episode with no prior map: the belief map starts blank, and the
/// candidates come from the subgoal predictor over the live scan. The graph
/// is used only to build the reference path for scoring.
pub fn run_episode_no_map(
    world: &OccupancyGrid,
    episode: &InstructionEpisode,
    graph: &NavGraph,
    episode_index: u64,
    cfg: &EpisodeConfig,
) -> Result<EpisodeRun, RunnerError> {
    let reference = reference_points(graph, episode)?;
    let start = Pose2D::new(reference[0].x, reference[0].y, episode.heading);
    let mut agent = make_agent(cfg, episode_index, &reference)?;
    // The map is reset at the start of every episode.
    let mut belief = AccumulatingBelief::new(LogOddsMap::sized_like(world));
    let mut predictor_session = match &cfg.predictor {
        PredictorKind::Bridge { endpoint } => Some(BridgeSession::connect(endpoint)?),
        PredictorKind::Geometric(_) => None,
    };
    let mut state = EpisodeState::new(world, start, cfg);
    let episode_id = episode.path_id.to_string();
    let instruction = episode.instructions[0].as_str();

    for step in 0..cfg.max_decisions {
        let Ok(scan) = simulate_scan(world, state.pose, &cfg.drive.scan) else {
            state.collision = true;
            break;
        };
        belief.observe(state.pose, &scan);
        let radial = bin_scan(&scan, cfg.radial);
        let grid = match &cfg.predictor {
            PredictorKind::Geometric(params) => geometric_predict(&radial, params),
            PredictorKind::Bridge { .. } => {
                let session = predictor_session.as_mut().expect("session connected");
                request_prediction(
                    session,
                    &episode_id,
                    step,
                    instruction,
                    state.pose,
                    &radial,
                    cfg,
                )?
            }
        };
        let local = extract_waypoints(&grid, &cfg.waypoint);
        // Candidates never sit inside an occupied radial bin.
        let local: Vec<_> = local
            .waypoints
            .into_iter()
            .filter(|w| radial.at_polar(w.range, w.heading) != Some(Cell::Occupied))
            .collect();
        let candidates: Vec<Candidate> = local
            .iter()
            .map(|w| {
                let p = state.pose.robot_to_world(Point2::new(w.x, w.y));
                Candidate {
                    id: None,
                    range: w.range,
                    heading: w.heading,
                    x: p.x,
                    y: p.y,
                    confidence: w.confidence,
                }
            })
            .collect();

        let decision = decide(
            &mut *agent,
            &episode_id,
            step,
            instruction,
            &candidates,
            state.pose,
            &mut state,
        )?;
        let Some(index) = decision else { break };
        let target = Point2::new(candidates[index].x, candidates[index].y);
        if !state.drive(&mut belief, target, cfg) {
            break;
        }
    }
    Ok(state.finish(&reference, episode.distance, episode_id, cfg))
}

/// Ask the agent, record the decision, and translate it into an optional
/// candidate index. `None` ends the episode (stop, invalid choice, or a
/// bridge timeout recorded as navigation failure).
fn decide(
    agent: &mut dyn Agent,
    episode_id: &str,
    step: usize,
    instruction: &str,
    candidates: &[Candidate],
    pose: Pose2D,
    state: &mut EpisodeState,
) -> Result<Option<usize>, RunnerError> {
    let ctx = DecisionContext {
        episode_id,
        step,
        instruction,
        candidates,
        pose,
    };
    let decision = match agent.decide(&ctx) {
        Ok(d) => d,
        Err(RunnerError::BridgeTimeout) => {
            state.navigation_failure = true;
            state.mark("bridge_timeout");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    state.decisions.push(DecisionRecord {
        step,
        candidates: candidates.to_vec(),
        decision,
    });
    match decision {
        AgentDecision::Stop => {
            state.mark("stop");
            Ok(None)
        }
        AgentDecision::Choose { index } if index < candidates.len() => Ok(Some(index)),
        AgentDecision::Choose { .. } => {
            // Nothing valid to execute (for instance an empty candidate set).
            state.navigation_failure = true;
            state.mark("no_valid_candidate");
            Ok(None)
        }
    }
}

fn request_prediction(
    session: &mut BridgeSession,
    episode_id: &str,
    step: usize,
    instruction: &str,
    pose: Pose2D,
    radial: &RadialOccupancyMap,
    cfg: &EpisodeConfig,
) -> Result<WaypointGrid, RunnerError> {
    let response = session.request(&BridgeRequest {
        r#type: "predict",
        episode_id,
        step,
        instruction,
        pose,
        candidates: &[],
        radial: Some(WireRadial::from_map(radial)),
    })?;
    match response {
        BridgeResponse::Grid {
            n_heading,
            n_range,
            max_radius,
            probabilities,
        } => {
            let geometry = RadialGeometry {
                n_heading,
                n_range,
                max_radius,
            };
            WaypointGrid::from_probabilities(geometry, probabilities)
                .map_err(|e| RunnerError::Protocol(format!("bad waypoint grid: {e}")))
        }
        BridgeResponse::Waypoints { waypoints } => {
            // A predictor may answer with discrete waypoints; stamp them
            // into a grid so the usual extraction path applies.
            let mut grid = WaypointGrid::zeros(cfg.radial);
            for w in waypoints {
                if let Some(r) = cfg.radial.range_bin(w.range) {
                    let h = cfg.radial.heading_bin(w.heading);
                    grid.set(h, r, w.confidence.clamp(0.0, 1.0));
                }
            }
            Ok(grid)
        }
        _ => Err(RunnerError::Protocol(
            "predictor session answered with an agent decision".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Batch running and reports
// ---------------------------------------------------------------------------

pub struct BatchResult {
    pub runs: Vec<EpisodeRun>,
    pub summary: Summary,
}

impl BatchResult {
    pub fn contains_failures(&self) -> bool {
        self.runs
            .iter()
            .any(|r| r.result.collision || r.result.navigation_failure)
    }
}

/// Run every episode sequentially with isolated per-episode state.
pub fn run_batch(
    world: &OccupancyGrid,
    graph: &NavGraph,
    episodes: &[InstructionEpisode],
    cfg: &EpisodeConfig,
) -> Result<BatchResult, RunnerError> {
    let mut runs = Vec::with_capacity(episodes.len());
    for (i, episode) in episodes.iter().enumerate() {
        let run = match cfg.mode {
            Mode::WithMap => run_episode_with_map(world, graph, episode, i as u64, cfg)?,
            Mode::NoMap => run_episode_no_map(world, episode, graph, i as u64, cfg)?,
        };
        runs.push(run);
    }
    let results: Vec<EpisodeResult> = runs.iter().map(|r| r.result).collect();
    let summary = aggregate(&results).map_err(|e| RunnerError::InvalidEpisode(e.to_string()))?;
    Ok(BatchResult { runs, summary })
}

/// Mean cross-setting nDTW matrix: entry (i, j) averages the nDTW between
/// setting i's and setting j's trajectory for each shared episode. The
/// diagonal is exactly 1 and the matrix is symmetric.
pub fn ndtw_matrix(settings: &[&[EpisodeRun]]) -> Vec<Vec<f64>> {
    let n = settings.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let pairs = settings[i].len().min(settings[j].len());
            let total: f64 = settings[i]
                .iter()
                .zip(settings[j])
                .take(pairs)
                .map(|(a, b)| trajectory_ndtw(&a.trajectory, &b.trajectory))
                .sum();
            m[i][j] = if pairs > 0 { total / pairs as f64 } else { 1.0 };
        }
    }
    m
}

#[derive(Serialize)]
struct TrajectoryLine {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    event: Option<String>,
}

/// Trajectory log: one JSON object per line, with events attached to the
/// sample where they happened.
pub fn trajectory_jsonl(run: &EpisodeRun) -> String {
    let mut out = String::new();
    for (i, s) in run.trajectory.samples().iter().enumerate() {
        let event = run
            .events
            .iter()
            .find(|e| e.sample == i)
            .map(|e| e.event.clone());
        let line = TrajectoryLine {
            t: s.t,
            x: s.pose.x,
            y: s.pose.y,
            theta: s.pose.theta,
            event,
        };
        out.push_str(&serde_json::to_string(&line).expect("trajectory line serializes"));
        out.push('\n');
    }
    out
}

/// Decision log: `{step, candidates, decision}` per line.
pub fn decisions_jsonl(run: &EpisodeRun) -> String {
    let mut out = String::new();
    for d in &run.decisions {
        out.push_str(&serde_json::to_string(d).expect("decision serializes"));
        out.push('\n');
    }
    out
}

/// Parse a trajectory log back into a trajectory (events ignored).
pub fn trajectory_from_jsonl(text: &str) -> Result<Trajectory, RunnerError> {
    #[derive(Deserialize)]
    struct Line {
        t: f64,
        x: f64,
        y: f64,
        theta: f64,
    }
    let mut samples = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(line)
            .map_err(|e| RunnerError::Protocol(format!("bad trajectory line {line:?}: {e}")))?;
        samples.push(crate::metrics::TrajectorySample {
            t: l.t,
            pose: Pose2D::new(l.x, l.y, l.theta),
        });
    }
    Trajectory::new(samples).map_err(|e| RunnerError::Protocol(e.to_string()))
}
