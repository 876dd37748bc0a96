//! Costmap construction, A* global planning and closed-loop waypoint
//! execution.
//!
//! The costmap marks occupied cells and everything within the robot radius
//! of them as lethal, then decays cost exponentially across an inflation
//! band; unknown space is either lethal (prior-map driving) or traversable
//! with a penalty (driving on a map that is still being built). Execution
//! is pure pursuit on a unicycle model: each control tick simulates a scan
//! against the true world, feeds it to the belief, and replans when the
//! current path is blocked in the belief.

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::gridworld::{
    simulate_scan, Cell, DistanceField, GridError, LaserScan, OccupancyGrid, RayTraversal,
    ScanConfig,
};
use crate::mapping::{integrate_scan, export_grid, LogOddsMap};
use crate::metrics::Trajectory;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no path to the goal")]
    NoPath,
    #[error("start cell is lethal")]
    InvalidStart,
    #[error("start is outside the costmap")]
    OutOfBounds,
}

/// How unknown cells are costed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnknownPolicy {
    Lethal,
    /// Traversable, with the base cost multiplied by this factor.
    TraversableWithPenalty(f64),
}

pub const DEFAULT_UNKNOWN_PENALTY: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct CostmapParams {
    pub robot_radius: f64,
    pub inflation_radius: f64,
    /// Exponential decay rate across the inflation band, 1/m.
    pub cost_scaling: f64,
    /// Extra cost at the lethal boundary.
    pub inflation_weight: f64,
}

impl Default for CostmapParams {
    fn default() -> Self {
        Self {
            robot_radius: 0.20,
            inflation_radius: 0.25,
            cost_scaling: 10.0,
            inflation_weight: 50.0,
        }
    }
}

/// Per-cell traversal costs: infinity for lethal cells, at least 1 elsewhere.
#[derive(Debug, Clone)]
pub struct Costmap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2D,
    cost: Vec<f64>,
}

impl Costmap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    #[inline]
    pub fn cost(&self, ix: usize, iy: usize) -> f64 {
        self.cost[iy * self.width + ix]
    }

    #[inline]
    pub fn is_lethal(&self, ix: usize, iy: usize) -> bool {
        self.cost(ix, iy).is_infinite()
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin.x) / self.resolution;
        let fy = (y - self.origin.y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        if ix < self.width && iy < self.height {
            Some((ix, iy))
        } else {
            None
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }
}

/// Build a costmap: lethal within the robot radius of occupied cells,
/// exponentially decaying inflation beyond, unknown cells per policy.
pub fn build_costmap(
    grid: &OccupancyGrid,
    params: &CostmapParams,
    unknown_policy: UnknownPolicy,
) -> Costmap {
    let df = DistanceField::from_grid(grid);
    let w = grid.width();
    let h = grid.height();
    let mut cost = vec![1.0; w * h];
    for iy in 0..h {
        for ix in 0..w {
            let cell = grid.get(ix, iy);
            let d = df.at_cell(ix, iy);
            let c = if cell == Cell::Occupied || d <= params.robot_radius + 1e-9 {
                f64::INFINITY
            } else {
                let base = if d <= params.robot_radius + params.inflation_radius {
                    1.0 + params.inflation_weight
                        * (-params.cost_scaling * (d - params.robot_radius)).exp()
                } else {
                    1.0
                };
                match (cell, unknown_policy) {
                    (Cell::Unknown, UnknownPolicy::Lethal) => f64::INFINITY,
                    (Cell::Unknown, UnknownPolicy::TraversableWithPenalty(m)) => base * m,
                    _ => base,
                }
            };
            cost[iy * w + ix] = c;
        }
    }
    Costmap {
        width: w,
        height: h,
        resolution: grid.resolution(),
        origin: grid.origin(),
        cost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AStarEntry {
    f: f64,
    g: f64,
    cell: (usize, usize),
}

impl Eq for AStarEntry {}

impl Ord for AStarEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .f
            .partial_cmp(&self.f)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for AStarEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
    (1, -1, std::f64::consts::SQRT_2),
    (-1, 1, std::f64::consts::SQRT_2),
    (-1, -1, std::f64::consts::SQRT_2),
];

/// 8-connected A* over cell indices. Stepping into a neighbor costs the
/// move length (1 or sqrt 2 cells) times the neighbor's cell cost. Returns
/// the raw cell path, one cell per step.
pub fn plan_grid_path(
    costmap: &Costmap,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<Vec<(usize, usize)>, PlannerError> {
    if costmap.is_lethal(start.0, start.1) {
        return Err(PlannerError::InvalidStart);
    }
    if costmap.is_lethal(goal.0, goal.1) {
        return Err(PlannerError::NoPath);
    }
    let w = costmap.width;
    let h = costmap.height;
    let idx = |c: (usize, usize)| c.1 * w + c.0;
    let heuristic = |c: (usize, usize)| {
        let dx = c.0 as f64 - goal.0 as f64;
        let dy = c.1 as f64 - goal.1 as f64;
        dx.hypot(dy)
    };

    let mut g_score = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut open = BinaryHeap::new();
    g_score[idx(start)] = 0.0;
    open.push(AStarEntry {
        f: heuristic(start),
        g: 0.0,
        cell: start,
    });

    while let Some(AStarEntry { g, cell, .. }) = open.pop() {
        if g > g_score[idx(cell)] {
            continue;
        }
        if cell == goal {
            let mut path = vec![goal];
            let mut at = idx(goal);
            while parent[at] != usize::MAX {
                at = parent[at];
                path.push((at % w, at / w));
            }
            path.reverse();
            return Ok(path);
        }
        for &(dx, dy, step) in &NEIGHBORS {
            let nx = cell.0 as i64 + dx;
            let ny = cell.1 as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let next = (nx as usize, ny as usize);
            let c = costmap.cost(next.0, next.1);
            if c.is_infinite() {
                continue;
            }
            let ng = g + step * c;
            if ng < g_score[idx(next)] {
                g_score[idx(next)] = ng;
                parent[idx(next)] = idx(cell);
                open.push(AStarEntry {
                    f: ng + heuristic(next),
                    g: ng,
                    cell: next,
                });
            }
        }
    }
    Err(PlannerError::NoPath)
}

/// True when the straight segment between two world points crosses only
/// non-lethal cells of the costmap.
pub fn segment_clear(costmap: &Costmap, a: Point2, b: Point2) -> bool {
    let dist = a.distance(b);
    if dist == 0.0 {
        return costmap
            .world_to_cell(a.x, a.y)
            .map(|(ix, iy)| !costmap.is_lethal(ix, iy))
            .unwrap_or(false);
    }
    let angle = a.bearing_to(b);
    let Some(traversal) = RayTraversal::with_geometry(
        costmap.resolution,
        costmap.origin,
        costmap.width,
        costmap.height,
        a.x,
        a.y,
        angle,
        dist,
    ) else {
        return false;
    };
    let mut visited = 0;
    for (ix, iy, _) in traversal {
        if costmap.is_lethal(ix, iy) {
            return false;
        }
        visited += 1;
    }
    visited > 0
}

/// Shortcut segments may not graze the lethal boundary: every crossed cell
/// must cost below this cap (about 0.1 m of extra clearance under the
/// default inflation parameters). Where nothing clears, the A* cells are
/// kept as-is.
const SMOOTH_COST_CAP: f64 = 20.0;

fn segment_below_cost(costmap: &Costmap, a: Point2, b: Point2, cap: f64) -> bool {
    let dist = a.distance(b);
    if dist == 0.0 {
        return costmap
            .world_to_cell(a.x, a.y)
            .map(|(ix, iy)| costmap.cost(ix, iy) <= cap)
            .unwrap_or(false);
    }
    let angle = a.bearing_to(b);
    let Some(traversal) = RayTraversal::with_geometry(
        costmap.resolution,
        costmap.origin,
        costmap.width,
        costmap.height,
        a.x,
        a.y,
        angle,
        dist,
    ) else {
        return false;
    };
    let mut visited = 0;
    for (ix, iy, _) in traversal {
        if costmap.cost(ix, iy) > cap {
            return false;
        }
        visited += 1;
    }
    visited > 0
}

/// Greedy line-of-sight shortcutting over comfortably non-lethal cells.
pub fn smooth_path(costmap: &Costmap, points: &[Point2]) -> Vec<Point2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut i = 0;
    while i + 1 < points.len() {
        let mut j = points.len() - 1;
        while j > i + 1 && !segment_below_cost(costmap, points[i], points[j], SMOOTH_COST_CAP) {
            j -= 1;
        }
        out.push(points[j]);
        i = j;
    }
    out
}

/// Plan a world-frame path from a start pose to a goal point: minimum-cost
/// 8-connected A* smoothed by line-of-sight shortcutting. The returned
/// polyline starts exactly at the start position and ends exactly at the
/// goal.
pub fn plan_path(
    costmap: &Costmap,
    start: Pose2D,
    goal: Point2,
) -> Result<Vec<Point2>, PlannerError> {
    let s = costmap
        .world_to_cell(start.x, start.y)
        .ok_or(PlannerError::OutOfBounds)?;
    let g = costmap
        .world_to_cell(goal.x, goal.y)
        .ok_or(PlannerError::NoPath)?;
    let cells = plan_grid_path(costmap, s, g)?;
    let mut points: Vec<Point2> = Vec::with_capacity(cells.len() + 2);
    points.push(start.position());
    points.extend(cells.iter().map(|&(ix, iy)| costmap.cell_center(ix, iy)));
    points.push(goal);
    points.dedup_by(|a, b| a.distance(*b) < 1e-9);
    Ok(smooth_path(costmap, &points))
}

// ---------------------------------------------------------------------------
// Closed-loop driving
// ---------------------------------------------------------------------------

/// What the planner is allowed to know while driving. Implementations
/// receive every simulated scan and serve the grid the costmap is built
/// from; the prior-map belief ignores scans, the accumulating belief is the
/// no-prior-map protocol.
pub trait BeliefState {
    fn observe(&mut self, pose: Pose2D, scan: &LaserScan);
    fn snapshot(&self) -> OccupancyGrid;
    fn unknown_policy(&self) -> UnknownPolicy;
    /// Cheap per-tick occupancy probe used for path blockage checks.
    fn occupied_at_world(&self, x: f64, y: f64) -> bool;
}

/// Full prior map; scans are ignored and unknown space is lethal.
pub struct PriorMapBelief {
    grid: OccupancyGrid,
}

impl PriorMapBelief {
    pub fn new(grid: OccupancyGrid) -> Self {
        Self { grid }
    }
}

impl BeliefState for PriorMapBelief {
    fn observe(&mut self, _pose: Pose2D, _scan: &LaserScan) {}

    fn snapshot(&self) -> OccupancyGrid {
        self.grid.clone()
    }

    fn unknown_policy(&self) -> UnknownPolicy {
        UnknownPolicy::Lethal
    }

    fn occupied_at_world(&self, x: f64, y: f64) -> bool {
        matches!(self.grid.cell_at_world(x, y), Some(Cell::Occupied))
    }
}

/// Log-odds map accumulated from scans; unknown space is traversable with
/// a penalty, since a robot without a prior map must move into unsensed
/// space.
pub struct AccumulatingBelief {
    pub map: LogOddsMap,
    pub occ_threshold: f64,
    pub free_threshold: f64,
}

impl AccumulatingBelief {
    pub fn new(map: LogOddsMap) -> Self {
        Self {
            map,
            occ_threshold: crate::mapping::DEFAULT_OCC_THRESHOLD,
            free_threshold: crate::mapping::DEFAULT_FREE_THRESHOLD,
        }
    }
}

impl BeliefState for AccumulatingBelief {
    fn observe(&mut self, pose: Pose2D, scan: &LaserScan) {
        // A pose outside the map bounds simply contributes nothing.
        let _ = integrate_scan(&mut self.map, pose, scan);
    }

    fn snapshot(&self) -> OccupancyGrid {
        export_grid(&self.map, self.occ_threshold, self.free_threshold)
            .expect("default thresholds are ordered")
    }

    fn unknown_policy(&self) -> UnknownPolicy {
        UnknownPolicy::TraversableWithPenalty(DEFAULT_UNKNOWN_PENALTY)
    }

    fn occupied_at_world(&self, x: f64, y: f64) -> bool {
        self.map.occupied_at_world(x, y, self.occ_threshold)
    }
}

#[derive(Debug, Clone)]
pub struct DriveConfig {
    pub max_speed: f64,
    pub control_dt: f64,
    pub lookahead: f64,
    pub goal_tolerance: f64,
    pub step_budget: usize,
    pub max_yaw_rate: f64,
    pub costmap: CostmapParams,
    pub scan: ScanConfig,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            max_speed: 0.5,
            control_dt: 0.1,
            lookahead: 0.5,
            goal_tolerance: 0.25,
            step_budget: 2000,
            max_yaw_rate: 1.8,
            costmap: CostmapParams::default(),
            scan: ScanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveOutcome {
    Reached,
    NavigationFailure,
    Collision,
}

const REPLAN_FAILURE_LIMIT: usize = 3;
const BLOCK_CHECK_HORIZON: f64 = 3.0;

/// Drive toward a goal, appending one sample per control tick to `traj`.
/// Returns the outcome and the final pose. `world` is ground truth (used
/// for scan simulation and collision checks via `world_distance`); all
/// planning happens on the belief.
#[allow(clippy::too_many_arguments)]
pub fn drive_into(
    world: &OccupancyGrid,
    world_distance: &DistanceField,
    belief: &mut dyn BeliefState,
    traj: &mut Trajectory,
    clock: &mut f64,
    start: Pose2D,
    goal: Point2,
    cfg: &DriveConfig,
) -> (DriveOutcome, Pose2D) {
    let mut pose = start;
    if collides(world_distance, pose, cfg.costmap.robot_radius) {
        return (DriveOutcome::Collision, pose);
    }

    let mut path: Option<Vec<Point2>> = None;
    let mut progress = 0usize;
    let mut replan_failures = 0usize;
    let mut braked_ticks = 0usize;

    for _ in 0..cfg.step_budget {
        let scan = match simulate_scan(world, pose, &cfg.scan) {
            Ok(s) => s,
            Err(GridError::OriginOccupied) => return (DriveOutcome::Collision, pose),
            Err(_) => return (DriveOutcome::NavigationFailure, pose),
        };
        belief.observe(pose, &scan);

        // A slightly reduced probe radius here keeps legal-but-tight
        // passages from triggering a replan storm; the emergency brake
        // below covers close encounters.
        let blocked = path
            .as_ref()
            .map(|p| path_blocked(belief, p, progress, 0.75 * cfg.costmap.robot_radius))
            .unwrap_or(true);
        if blocked {
            let grid = belief.snapshot();
            let costmap = build_costmap(&grid, &cfg.costmap, belief.unknown_policy());
            let plan_start = recover_start(&costmap, pose).unwrap_or(pose);
            match plan_path(&costmap, plan_start, goal) {
                Ok(p) => {
                    path = Some(p);
                    progress = 0;
                    replan_failures = 0;
                }
                Err(_) => {
                    path = None;
                    replan_failures += 1;
                    if replan_failures >= REPLAN_FAILURE_LIMIT {
                        return (DriveOutcome::NavigationFailure, pose);
                    }
                    // Mark time passing while we wait for better information.
                    *clock += cfg.control_dt;
                    traj.push(*clock, pose);
                    continue;
                }
            }
        }

        let p = path.as_ref().expect("path planned above");
        let target = pursuit_target(p, &mut progress, pose.position(), cfg.lookahead);

        // Pure pursuit on a unicycle.
        let bearing = normalize_angle(pose.position().bearing_to(target) - pose.theta);
        let dist_goal = pose.position().distance(goal);
        let (mut v, omega) = if bearing.abs() > 1.0 {
            (0.0, (2.5 * bearing).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate))
        } else {
            let v = (cfg.max_speed * (1.0 - 0.5 * bearing.abs())).min(dist_goal.max(0.05));
            let omega = (2.0 * v * bearing.sin() / cfg.lookahead)
                .clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
            (v, omega)
        };
        let theta = normalize_angle(pose.theta + omega * cfg.control_dt);

        // Emergency brake: if the next position would bring the footprint
        // into belief-occupied space, rotate in place this tick instead.
        // A persistence escape creeps forward after prolonged braking so
        // sub-margin passages stall out to a failure rather than spinning.
        if v > 0.0 {
            let probe_dist = (3.0 * v * cfg.control_dt).max(0.05);
            let px = pose.x + probe_dist * theta.cos();
            let py = pose.y + probe_dist * theta.sin();
            if disc_occupied(belief, px, py, cfg.costmap.robot_radius + 0.04) {
                braked_ticks += 1;
                if braked_ticks < 20 {
                    v = 0.0;
                } else {
                    v = 0.05;
                }
            } else {
                braked_ticks = 0;
            }
        }

        pose = Pose2D::new(
            pose.x + v * theta.cos() * cfg.control_dt,
            pose.y + v * theta.sin() * cfg.control_dt,
            theta,
        );

        *clock += cfg.control_dt;
        traj.push(*clock, pose);

        if collides(world_distance, pose, cfg.costmap.robot_radius) {
            return (DriveOutcome::Collision, pose);
        }
        if pose.position().distance(goal) < cfg.goal_tolerance {
            return (DriveOutcome::Reached, pose);
        }
    }
    (DriveOutcome::NavigationFailure, pose)
}

/// One-shot drive with a fresh trajectory starting at t = 0.
pub fn drive_to(
    world: &OccupancyGrid,
    belief: &mut dyn BeliefState,
    start: Pose2D,
    goal: Point2,
    cfg: &DriveConfig,
) -> (Trajectory, DriveOutcome) {
    let world_distance = DistanceField::from_grid(world);
    let mut traj = Trajectory::single(0.0, start);
    let mut clock = 0.0;
    let (outcome, _) = drive_into(
        world,
        &world_distance,
        belief,
        &mut traj,
        &mut clock,
        start,
        goal,
        cfg,
    );
    (traj, outcome)
}

fn collides(world_distance: &DistanceField, pose: Pose2D, robot_radius: f64) -> bool {
    match world_distance.at_world(pose.x, pose.y) {
        Some(d) => d < robot_radius,
        None => true,
    }
}

/// Check the upcoming stretch of path against the belief: blocked when any
/// sample point within the horizon has belief-occupied cells inside the
/// robot disc around it.
fn path_blocked(
    belief: &dyn BeliefState,
    path: &[Point2],
    progress: usize,
    robot_radius: f64,
) -> bool {
    let mut travelled = 0.0;
    for i in progress..path.len() {
        if i > progress {
            travelled += path[i - 1].distance(path[i]);
            if travelled > BLOCK_CHECK_HORIZON {
                break;
            }
        }
        // Segment sampling at half-radius steps.
        let (a, b) = (
            path[i],
            path[(i + 1).min(path.len() - 1)],
        );
        let seg = a.distance(b);
        let steps = (seg / (robot_radius / 2.0)).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            let x = a.x + f * (b.x - a.x);
            let y = a.y + f * (b.y - a.y);
            if disc_occupied(belief, x, y, robot_radius) {
                return true;
            }
        }
    }
    false
}

fn disc_occupied(belief: &dyn BeliefState, x: f64, y: f64, radius: f64) -> bool {
    // Probe the center plus 8 points on the disc boundary.
    if belief.occupied_at_world(x, y) {
        return true;
    }
    for k in 0..8 {
        let a = k as f64 * std::f64::consts::FRAC_PI_4;
        if belief.occupied_at_world(x + radius * a.cos(), y + radius * a.sin()) {
            return true;
        }
    }
    false
}

/// If the pose has drifted into a lethal cell (inflation boundary), plan
/// from the nearest non-lethal cell within half a meter instead.
fn recover_start(costmap: &Costmap, pose: Pose2D) -> Option<Pose2D> {
    let (ix, iy) = costmap.world_to_cell(pose.x, pose.y)?;
    if !costmap.is_lethal(ix, iy) {
        return Some(pose);
    }
    let r_cells = (0.5 / costmap.resolution).ceil() as i64;
    let mut best: Option<((usize, usize), f64)> = None;
    for dy in -r_cells..=r_cells {
        for dx in -r_cells..=r_cells {
            let nx = ix as i64 + dx;
            let ny = iy as i64 + dy;
            if nx < 0 || ny < 0 || nx >= costmap.width as i64 || ny >= costmap.height as i64 {
                continue;
            }
            let cell = (nx as usize, ny as usize);
            if costmap.is_lethal(cell.0, cell.1) {
                continue;
            }
            let d = costmap.cell_center(cell.0, cell.1).distance(pose.position());
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((cell, d));
            }
        }
    }
    best.map(|((cx, cy), _)| {
        let c = costmap.cell_center(cx, cy);
        Pose2D::new(c.x, c.y, pose.theta)
    })
}

/// Parameter and distance of the closest point on segment `ab` to `p`.
fn project_on_segment(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len_sq = abx * abx + aby * aby;
    if len_sq < 1e-18 {
        return (0.0, p.distance(a));
    }
    let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / len_sq).clamp(0.0, 1.0);
    let proj = Point2::new(a.x + t * abx, a.y + t * aby);
    (t, p.distance(proj))
}

/// Carrot point for pure pursuit: project the robot onto the nearest path
/// segment at or after `progress`, then walk `lookahead` meters forward
/// along the polyline. `progress` advances monotonically so the target
/// never falls behind the robot.
fn pursuit_target(path: &[Point2], progress: &mut usize, pose: Point2, lookahead: f64) -> Point2 {
    if path.len() < 2 {
        return *path.last().expect("paths are non-empty");
    }
    let mut best = (*progress, 0.0, f64::INFINITY);
    for i in *progress..path.len() - 1 {
        let (t, d) = project_on_segment(pose, path[i], path[i + 1]);
        if d < best.2 {
            best = (i, t, d);
        }
    }
    *progress = best.0;

    let (mut i, mut t) = (best.0, best.1);
    let mut remaining = lookahead;
    loop {
        let a = path[i];
        let b = path[i + 1];
        let seg = a.distance(b);
        let available = seg * (1.0 - t);
        if available >= remaining && seg > 1e-12 {
            let f = t + remaining / seg;
            return Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
        }
        remaining -= available;
        if i + 2 >= path.len() {
            return *path.last().unwrap();
        }
        i += 1;
        t = 0.0;
    }
}
