//! The action-space bridge: radial occupancy maps binned from laser scans,
//! waypoint extraction with a confidence threshold and a hard cap of 5,
//! a geometric baseline predictor, and Sinkhorn divergence scoring of
//! predicted waypoints against navigation-graph neighbors.
//!
//! The Sinkhorn divergence here is the debiased form
//! `S(a, b) = OT(a, b) - (OT(a, a) + OT(b, b)) / 2` under squared Euclidean
//! cost, computed with log-domain scaling iterations so that very small
//! regularization stays numerically stable.

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::gridworld::{Cell, LaserScan};
use crate::navgraph::{NavGraph, NavGraphError};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubgoalError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("oracle scale exceeded: {size} points (limit {limit})")]
    OracleScaleExceeded { size: usize, limit: usize },
}

// ---------------------------------------------------------------------------
// Radial occupancy maps
// ---------------------------------------------------------------------------

/// Geometry of a robot-centric range x heading grid. Heading bin 0 starts
/// at -pi; range bin 0 starts at the robot. Cells are stored heading-major:
/// `index = heading_bin * n_range + range_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGeometry {
    pub n_heading: usize,
    pub n_range: usize,
    pub max_radius: f64,
}

impl Default for RadialGeometry {
    fn default() -> Self {
        Self {
            n_heading: 72,
            n_range: 32,
            max_radius: 8.0,
        }
    }
}

impl RadialGeometry {
    pub fn heading_step(&self) -> f64 {
        2.0 * PI / self.n_heading as f64
    }

    pub fn range_step(&self) -> f64 {
        self.max_radius / self.n_range as f64
    }

    pub fn heading_bin(&self, angle: f64) -> usize {
        let a = normalize_angle(angle);
        let h = ((a + PI) / self.heading_step()).floor() as isize;
        (h.max(0) as usize).min(self.n_heading - 1)
    }

    /// Range bin containing `r`, or `None` at or beyond the rim.
    pub fn range_bin(&self, r: f64) -> Option<usize> {
        if r < 0.0 || r >= self.max_radius {
            return None;
        }
        Some(((r / self.range_step()).floor() as usize).min(self.n_range - 1))
    }

    pub fn bin_center(&self, heading_bin: usize, range_bin: usize) -> Point2 {
        let angle = -PI + (heading_bin as f64 + 0.5) * self.heading_step();
        let r = (range_bin as f64 + 0.5) * self.range_step();
        Point2::new(r * angle.cos(), r * angle.sin())
    }

    pub fn bin_heading(&self, heading_bin: usize) -> f64 {
        normalize_angle(-PI + (heading_bin as f64 + 0.5) * self.heading_step())
    }

    pub fn len(&self) -> usize {
        self.n_heading * self.n_range
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, heading_bin: usize, range_bin: usize) -> usize {
        heading_bin * self.n_range + range_bin
    }
}

/// Tri-state robot-centric grid derived from one laser scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialOccupancyMap {
    pub geometry: RadialGeometry,
    cells: Vec<Cell>,
}

impl RadialOccupancyMap {
    pub fn new(geometry: RadialGeometry) -> Self {
        Self {
            cells: vec![Cell::Unknown; geometry.len()],
            geometry,
        }
    }

    #[inline]
    pub fn get(&self, heading_bin: usize, range_bin: usize) -> Cell {
        self.cells[self.geometry.index(heading_bin, range_bin)]
    }

    #[inline]
    pub fn set(&mut self, heading_bin: usize, range_bin: usize, cell: Cell) {
        let i = self.geometry.index(heading_bin, range_bin);
        self.cells[i] = cell;
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Occupancy at a robot-frame polar position, `None` outside the rim.
    pub fn at_polar(&self, range: f64, heading: f64) -> Option<Cell> {
        let r = self.geometry.range_bin(range)?;
        Some(self.get(self.geometry.heading_bin(heading), r))
    }
}

/// Bin one laser scan into a radial occupancy map. Along each beam, bins
/// strictly before the return are free, the bin containing the return is
/// occupied, and bins beyond stay unknown; headings outside the scan field
/// of view stay unknown. No-return beams mark free space out to
/// `min(range_max, max_radius)`. Where beams disagree within one bin,
/// occupied wins over free and free wins over unknown.
pub fn bin_scan(scan: &LaserScan, geometry: RadialGeometry) -> RadialOccupancyMap {
    let mut map = RadialOccupancyMap::new(geometry);
    let step = geometry.range_step();
    for i in 0..scan.n_beams() {
        let h = geometry.heading_bin(scan.beam_angle(i));
        let r = scan.ranges[i];
        if scan.is_return(i) {
            match geometry.range_bin(r) {
                Some(hit_bin) => {
                    for rr in 0..hit_bin {
                        merge(&mut map, h, rr, Cell::Free);
                    }
                    merge(&mut map, h, hit_bin, Cell::Occupied);
                }
                None => {
                    // Return beyond the rim: everything inside is free.
                    for rr in 0..geometry.n_range {
                        merge(&mut map, h, rr, Cell::Free);
                    }
                }
            }
        } else {
            let limit = scan.range_max.min(geometry.max_radius);
            for rr in 0..geometry.n_range {
                if (rr + 1) as f64 * step <= limit {
                    merge(&mut map, h, rr, Cell::Free);
                }
            }
        }
    }
    map
}

fn merge(map: &mut RadialOccupancyMap, h: usize, r: usize, new: Cell) {
    let current = map.get(h, r);
    let next = match (current, new) {
        (Cell::Occupied, _) => Cell::Occupied,
        (_, Cell::Occupied) => Cell::Occupied,
        (Cell::Free, _) | (_, Cell::Free) => Cell::Free,
        _ => Cell::Unknown,
    };
    map.set(h, r, next);
}

// ---------------------------------------------------------------------------
// Waypoint grids and extraction
// ---------------------------------------------------------------------------

/// Per-bin waypoint confidence in [0, 1] over the same geometry as
/// [`RadialOccupancyMap`]. Values are independent confidences, not a
/// normalized distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointGrid {
    pub geometry: RadialGeometry,
    probabilities: Vec<f64>,
}

impl WaypointGrid {
    pub fn zeros(geometry: RadialGeometry) -> Self {
        Self {
            probabilities: vec![0.0; geometry.len()],
            geometry,
        }
    }

    pub fn from_probabilities(
        geometry: RadialGeometry,
        probabilities: Vec<f64>,
    ) -> Result<Self, SubgoalError> {
        if probabilities.len() != geometry.len() {
            return Err(SubgoalError::InvalidMeasure(format!(
                "grid expects {} values, got {}",
                geometry.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SubgoalError::InvalidMeasure(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            geometry,
            probabilities,
        })
    }

    #[inline]
    pub fn get(&self, heading_bin: usize, range_bin: usize) -> f64 {
        self.probabilities[self.geometry.index(heading_bin, range_bin)]
    }

    #[inline]
    pub fn set(&mut self, heading_bin: usize, range_bin: usize, p: f64) {
        debug_assert!((0.0..=1.0).contains(&p));
        let i = self.geometry.index(heading_bin, range_bin);
        self.probabilities[i] = p;
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Renormalize the grid into a discrete measure over bin centers.
    pub fn to_measure(&self) -> Result<DiscreteMeasure, SubgoalError> {
        let total: f64 = self.probabilities.iter().sum();
        if total <= 0.0 {
            return Err(SubgoalError::InvalidMeasure(
                "waypoint grid has no mass".into(),
            ));
        }
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for h in 0..self.geometry.n_heading {
            for r in 0..self.geometry.n_range {
                let p = self.get(h, r);
                if p > 0.0 {
                    points.push(self.geometry.bin_center(h, r));
                    masses.push(p / total);
                }
            }
        }
        DiscreteMeasure::new(points, masses)
    }
}

/// One candidate subgoal: robot-relative polar coordinates plus a position
/// (robot frame until [`WaypointSet::to_world`] is applied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub range: f64,
    pub heading: f64,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Waypoint {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// At most `max_count` candidate subgoals. On the wire this is a bare JSON
/// list of waypoint records; a deserialized set adopts its own length as
/// the cap when longer than the default of 5.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSet {
    pub waypoints: Vec<Waypoint>,
    pub max_count: usize,
}

impl Serialize for WaypointSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.waypoints.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WaypointSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let waypoints = Vec::<Waypoint>::deserialize(deserializer)?;
        let max_count = WaypointParams::default().max_count.max(waypoints.len());
        Ok(Self {
            waypoints,
            max_count,
        })
    }
}

impl WaypointSet {
    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    /// Transform positions from the robot frame into the world frame.
    /// Ranges and headings stay robot-relative.
    pub fn to_world(&self, pose: Pose2D) -> WaypointSet {
        WaypointSet {
            waypoints: self
                .waypoints
                .iter()
                .map(|w| {
                    let p = pose.robot_to_world(Point2::new(w.x, w.y));
                    Waypoint {
                        x: p.x,
                        y: p.y,
                        ..*w
                    }
                })
                .collect(),
            max_count: self.max_count,
        }
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.waypoints.iter().map(|w| w.position()).collect()
    }
}

/// Extraction parameters; the cap of 5 candidates is the headline rule.
#[derive(Debug, Clone, Copy)]
pub struct WaypointParams {
    pub threshold: f64,
    pub max_count: usize,
    pub nms_radius: f64,
}

impl Default for WaypointParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_count: 5,
            nms_radius: 0.75,
        }
    }
}

/// Reduce a waypoint grid to at most `max_count` discrete waypoints.
///
/// Bins with confidence at or above the threshold are clustered by greedy
/// non-maximum suppression in Cartesian space (metric suppression, since
/// heading bins shrink in arc length with radius). Each kept peak becomes a
/// waypoint at the probability-weighted centroid of its suppressed cluster,
/// carrying the peak confidence; peaks come out sorted by confidence.
pub fn extract_waypoints(grid: &WaypointGrid, params: &WaypointParams) -> WaypointSet {
    let geom = grid.geometry;
    let mut candidates: Vec<(usize, f64, Point2)> = Vec::new();
    for h in 0..geom.n_heading {
        for r in 0..geom.n_range {
            let p = grid.get(h, r);
            if p >= params.threshold {
                candidates.push((geom.index(h, r), p, geom.bin_center(h, r)));
            }
        }
    }
    // Highest confidence first; bin index breaks ties deterministically.
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let mut suppressed = vec![false; candidates.len()];
    let mut waypoints = Vec::new();
    for i in 0..candidates.len() {
        if suppressed[i] {
            continue;
        }
        let (_, peak_p, peak_c) = candidates[i];
        let mut wsum = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for j in i..candidates.len() {
            if suppressed[j] {
                continue;
            }
            let (_, p, c) = candidates[j];
            if c.distance(peak_c) <= params.nms_radius {
                suppressed[j] = true;
                wsum += p;
                cx += p * c.x;
                cy += p * c.y;
            }
        }
        let centroid = Point2::new(cx / wsum, cy / wsum);
        waypoints.push(Waypoint {
            range: centroid.distance(Point2::new(0.0, 0.0)),
            heading: centroid.y.atan2(centroid.x),
            x: centroid.x,
            y: centroid.y,
            confidence: peak_p,
        });
    }
    waypoints.truncate(params.max_count);
    WaypointSet {
        waypoints,
        max_count: params.max_count,
    }
}

// ---------------------------------------------------------------------------
// Geometric baseline predictor
// ---------------------------------------------------------------------------

/// Parameters of the geometric baseline. `preferred_range` reflects typical
/// viewpoint spacing; `min_corridor_width` is the robot diameter plus side
/// clearance, so narrow squeeze points are deliberately not proposed.
#[derive(Debug, Clone, Copy)]
pub struct PredictorParams {
    pub preferred_range: f64,
    pub range_clearance: f64,
    pub robot_diameter: f64,
    pub min_corridor_width: f64,
}

impl Default for PredictorParams {
    fn default() -> Self {
        Self {
            preferred_range: 2.1,
            range_clearance: 0.4,
            robot_diameter: 0.4,
            min_corridor_width: 0.8,
        }
    }
}

/// Geometric waypoint prediction from a radial occupancy map.
///
/// For each heading, the candidate range is
/// `min(preferred_range, free_extent - range_clearance)` where the free
/// extent is the contiguous run of free bins from the robot outward
/// (occupied or unknown bins block it). A heading qualifies only when the
/// corridor around it is wide enough for the robot everywhere along the way:
/// the minimum over traversed range rings of `run * heading_step * ring
/// radius`, where `run` is the contiguous free heading run at that ring.
pub fn geometric_predict(radial: &RadialOccupancyMap, params: &PredictorParams) -> WaypointGrid {
    let geom = radial.geometry;
    let step = geom.range_step();
    let mut grid = WaypointGrid::zeros(geom);

    // Leading free run per heading.
    let free_bins: Vec<usize> = (0..geom.n_heading)
        .map(|h| {
            (0..geom.n_range)
                .take_while(|&r| radial.get(h, r) == Cell::Free)
                .count()
        })
        .collect();

    for h in 0..geom.n_heading {
        let extent = free_bins[h] as f64 * step;
        let target = params.preferred_range.min(extent - params.range_clearance);
        if target < step {
            continue;
        }
        let target_bin = match geom.range_bin(target) {
            Some(b) => b,
            None => geom.n_range - 1,
        };

        let width = corridor_width(&free_bins, geom, h, target_bin, params.robot_diameter);
        if width < params.min_corridor_width {
            continue;
        }
        let quality = (width / (2.0 * params.min_corridor_width)).min(1.0);
        grid.set(h, target_bin, 0.5 + 0.45 * quality);
    }
    grid
}

/// Narrowest clear width along a heading out to `target_bin`: at each ring
/// (skipping rings inside the robot's own footprint) the contiguous free
/// heading run around `h` converted to arc length at that ring's radius.
fn corridor_width(
    free_bins: &[usize],
    geom: RadialGeometry,
    h: usize,
    target_bin: usize,
    robot_diameter: f64,
) -> f64 {
    let n = geom.n_heading;
    let step = geom.range_step();
    let mut width = f64::INFINITY;
    for ring in 0..=target_bin {
        let radius = (ring as f64 + 0.5) * step;
        if radius < robot_diameter / 2.0 {
            continue;
        }
        // Contiguous run of headings free through this ring, wrapping.
        let free_here = |hh: usize| free_bins[hh] > ring;
        debug_assert!(free_here(h));
        let mut run = 1usize;
        let mut left = (h + n - 1) % n;
        while run < n && left != h && free_here(left) {
            run += 1;
            left = (left + n - 1) % n;
        }
        let mut right = (h + 1) % n;
        while run < n && right != h && free_here(right) {
            run += 1;
            right = (right + 1) % n;
        }
        let arc = if run >= n {
            2.0 * PI * radius
        } else {
            run as f64 * geom.heading_step() * radius
        };
        width = width.min(arc);
    }
    width
}

// ---------------------------------------------------------------------------
// Discrete measures, Sinkhorn divergence, exact EMD oracle
// ---------------------------------------------------------------------------

/// A discrete probability measure on the plane: points with nonnegative
/// masses summing to one (within 1e-9). Zero-mass atoms are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Vec<Point2>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point2>, masses: Vec<f64>) -> Result<Self, SubgoalError> {
        if points.len() != masses.len() {
            return Err(SubgoalError::InvalidMeasure(format!(
                "{} points but {} masses",
                points.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(SubgoalError::InvalidMeasure(
                "masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SubgoalError::InvalidMeasure(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        let (points, masses) = points
            .into_iter()
            .zip(masses)
            .filter(|&(_, m)| m > 0.0)
            .unzip::<_, _, Vec<_>, Vec<_>>();
        if points.is_empty() {
            return Err(SubgoalError::InvalidMeasure("measure is empty".into()));
        }
        Ok(Self { points, masses })
    }

    pub fn uniform(points: Vec<Point2>) -> Result<Self, SubgoalError> {
        let n = points.len();
        if n == 0 {
            return Err(SubgoalError::InvalidMeasure("measure is empty".into()));
        }
        let masses = vec![1.0 / n as f64; n];
        Self::new(points, masses)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn cost_matrix(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for pa in a.points() {
        for pb in b.points() {
            c.push(pa.squared_distance(*pb));
        }
    }
    c
}

pub fn mean_cost(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let c = cost_matrix(a, b);
    c.iter().sum::<f64>() / c.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornParams {
    /// Entropic regularization, squared meters.
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornResult {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = terms.collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT dual value between two measures, by log-domain alternating
/// scaling. Uses epsilon annealing (halving from the cost scale down to the
/// target) so that very small regularization converges; every iteration at
/// every stage counts against `max_iters`.
fn entropic_ot(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> (f64, bool, usize) {
    let n = a.len();
    let m = b.len();
    let c = cost_matrix(a, b);
    let log_a: Vec<f64> = a.masses().iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.masses().iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let c_max = c.iter().cloned().fold(0.0f64, f64::max);
    let mut stages = vec![epsilon];
    let mut e = c_max.max(epsilon) * 0.5;
    while e > epsilon * 2.0 {
        stages.push(e);
        e *= 0.5;
    }
    stages.sort_by(|x, y| y.partial_cmp(x).unwrap());

    let mut iterations = 0usize;
    let mut converged = false;
    for (si, &eps) in stages.iter().enumerate() {
        let final_stage = si == stages.len() - 1;
        // Warm-up stages only need rough potentials; only the target
        // epsilon runs to the requested tolerance.
        let stage_tol = if final_stage { tol } else { tol.max(1e-3) };
        let stage_cap = if final_stage { max_iters } else { iterations + 200 };
        loop {
            if iterations >= max_iters.min(stage_cap) {
                break;
            }
            iterations += 1;
            for (i, fi) in f.iter_mut().enumerate() {
                *fi = -eps * log_sum_exp((0..m).map(|j| log_b[j] + (g[j] - c[i * m + j]) / eps));
            }
            for (j, gj) in g.iter_mut().enumerate() {
                *gj = -eps * log_sum_exp((0..n).map(|i| log_a[i] + (f[i] - c[i * m + j]) / eps));
            }
            // After the g update the column marginals are exact; measure the
            // drift on the rows.
            let mut err = 0.0;
            for i in 0..n {
                let row: f64 = (0..m)
                    .map(|j| (log_a[i] + log_b[j] + (f[i] + g[j] - c[i * m + j]) / eps).exp())
                    .sum();
                err += (row - a.masses()[i]).abs();
            }
            if err < stage_tol {
                if final_stage {
                    converged = true;
                }
                break;
            }
        }
    }

    let value = f
        .iter()
        .zip(a.masses())
        .map(|(fi, ai)| fi * ai)
        .sum::<f64>()
        + g.iter().zip(b.masses()).map(|(gj, bj)| gj * bj).sum::<f64>();
    (value, converged, iterations)
}

/// Debiased Sinkhorn divergence between two discrete measures under squared
/// Euclidean cost. Zero (exactly) for identical measures, nonnegative up to
/// the convergence tolerance, and converging to the exact transport cost as
/// epsilon shrinks.
pub fn sinkhorn_divergence(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    params: &SinkhornParams,
) -> Result<SinkhornResult, SubgoalError> {
    if a.is_empty() || b.is_empty() {
        return Err(SubgoalError::InvalidMeasure("measure is empty".into()));
    }
    if params.epsilon <= 0.0 {
        return Err(SubgoalError::InvalidMeasure(
            "epsilon must be positive".into(),
        ));
    }
    let (ab, conv_ab, it_ab) = entropic_ot(a, b, params.epsilon, params.max_iters, params.tol);
    let (aa, conv_aa, it_aa) = entropic_ot(a, a, params.epsilon, params.max_iters, params.tol);
    let (bb, conv_bb, it_bb) = entropic_ot(b, b, params.epsilon, params.max_iters, params.tol);
    Ok(SinkhornResult {
        value: ab - 0.5 * (aa + bb),
        converged: conv_ab && conv_aa && conv_bb,
        iterations: it_ab + it_aa + it_bb,
    })
}

pub const EMD_ORACLE_LIMIT: usize = 10;

/// Exact optimal-transport cost under squared Euclidean cost, for oracle-
/// scale inputs (at most 10 points per side, masses rational). Solved as an
/// integer-supply min-cost flow by successive shortest paths.
pub fn exact_emd(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64, SubgoalError> {
    for m in [a, b] {
        if m.len() > EMD_ORACLE_LIMIT {
            return Err(SubgoalError::OracleScaleExceeded {
                size: m.len(),
                limit: EMD_ORACLE_LIMIT,
            });
        }
    }
    let scale = integer_scale(a.masses(), b.masses())?;
    let supplies: Vec<i64> = a
        .masses()
        .iter()
        .map(|&x| (x * scale as f64).round() as i64)
        .collect();
    let demands: Vec<i64> = b
        .masses()
        .iter()
        .map(|&x| (x * scale as f64).round() as i64)
        .collect();
    if supplies.iter().sum::<i64>() != demands.iter().sum::<i64>() {
        return Err(SubgoalError::InvalidMeasure(
            "masses do not balance after integer scaling".into(),
        ));
    }
    let cost = cost_matrix(a, b);
    let total = min_cost_flow(&supplies, &demands, &cost, b.len());
    Ok(total / scale as f64)
}

/// Smallest K <= 10080 such that every mass times K is integral (within
/// 1e-6). Covers uniform measures and small rational masses.
fn integer_scale(a: &[f64], b: &[f64]) -> Result<i64, SubgoalError> {
    'outer: for k in 1..=10080i64 {
        for &m in a.iter().chain(b) {
            let v = m * k as f64;
            if (v - v.round()).abs() > 1e-6 {
                continue 'outer;
            }
        }
        return Ok(k);
    }
    Err(SubgoalError::InvalidMeasure(
        "masses are not small rationals; the exact oracle cannot scale them".into(),
    ))
}

/// Successive-shortest-path min-cost flow on the bipartite transportation
/// graph. Sizes are tiny, so Bellman-Ford per augmentation is plenty.
fn min_cost_flow(supplies: &[i64], demands: &[i64], cost: &[f64], m: usize) -> f64 {
    let n = supplies.len();
    let mut remaining_supply = supplies.to_vec();
    let mut remaining_demand = demands.to_vec();
    let mut flow = vec![0i64; n * m];
    let mut total_cost = 0.0;

    loop {
        let push_total: i64 = remaining_supply.iter().sum();
        if push_total == 0 {
            break;
        }
        // Nodes: 0..n sources, n..n+m sinks. Find the cheapest path from any
        // source with supply to any sink with demand in the residual graph.
        let nodes = n + m;
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<usize>> = vec![None; nodes];
        for i in 0..n {
            if remaining_supply[i] > 0 {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + cost[i * m + j];
                        if d < dist[n + j] - 1e-15 {
                            dist[n + j] = d;
                            prev[n + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i * m + j] > 0 {
                            let d = dist[n + j] - cost[i * m + j];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                prev[i] = Some(n + j);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let sink = (0..m)
            .filter(|&j| remaining_demand[j] > 0 && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].partial_cmp(&dist[n + y]).unwrap())
            .expect("balanced problem always has an augmenting path");

        // Trace the path back, find the bottleneck, apply.
        let mut path = Vec::new();
        let mut node = n + sink;
        while let Some(p) = prev[node] {
            path.push((p, node));
            node = p;
        }
        path.reverse();
        let source = node;
        let mut bottleneck = remaining_supply[source].min(remaining_demand[sink]);
        for &(u, v) in &path {
            if v < n {
                // Residual (sink -> source) arc; bounded by existing flow.
                bottleneck = bottleneck.min(flow[v * m + (u - n)]);
            }
        }
        for &(u, v) in &path {
            if u < n {
                flow[u * m + (v - n)] += bottleneck;
                total_cost += bottleneck as f64 * cost[u * m + (v - n)];
            } else {
                flow[v * m + (u - n)] -= bottleneck;
                total_cost -= bottleneck as f64 * cost[v * m + (u - n)];
            }
        }
        remaining_supply[source] -= bottleneck;
        remaining_demand[sink] -= bottleneck;
    }
    total_cost
}

// ---------------------------------------------------------------------------
// Match-rate evaluation and ground-truth targets
// ---------------------------------------------------------------------------

pub const DEFAULT_MATCH_RADII: [f64; 3] = [0.5, 1.0, 1.5];

/// For each radius, the fraction of predicted waypoints whose nearest
/// ground-truth point lies within it. An empty prediction set scores zero
/// at every radius.
pub fn match_eval(predicted: &WaypointSet, ground_truth: &[Point2], radii: &[f64]) -> Vec<f64> {
    if predicted.is_empty() {
        return vec![0.0; radii.len()];
    }
    let nearest: Vec<f64> = predicted
        .waypoints
        .iter()
        .map(|w| {
            ground_truth
                .iter()
                .map(|g| w.position().distance(*g))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    radii
        .iter()
        .map(|&r| nearest.iter().filter(|&&d| d <= r).count() as f64 / nearest.len() as f64)
        .collect()
}

/// Ground-truth subgoal targets for a viewpoint: the planar positions of its
/// graph neighbors, minus any flagged as stair-traversing. The exclusion
/// list is honored exactly.
pub fn neighbor_targets(
    graph: &NavGraph,
    viewpoint_id: &str,
    excluded: &HashSet<String>,
) -> Result<Vec<Point2>, NavGraphError> {
    Ok(graph
        .neighbors(viewpoint_id)?
        .into_iter()
        .filter(|n| !excluded.contains(&n.id))
        .map(|n| n.point2())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{simulate_scan, OccupancyGrid, ScanConfig};
    use crate::navgraph::{build_graph, Viewpoint};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_scan(returns: &[(f64, f64)]) -> LaserScan {
        // 541-beam 270 degree scan, all no-return except the given
        // (angle, range) pairs, which snap to the nearest beam.
        let n = 541;
        let fov = 270.0f64.to_radians();
        let mut ranges = vec![31.0; n];
        for &(angle, r) in returns {
            let i = ((angle + fov / 2.0) / fov * (n - 1) as f64).round() as usize;
            ranges[i] = r;
        }
        LaserScan {
            pose: Pose2D::new(0.0, 0.0, 0.0),
            angle_min: -fov / 2.0,
            angle_max: fov / 2.0,
            range_max: 30.0,
            ranges,
        }
    }

    #[test]
    fn bin_scan_single_return() {
        // Every beam falling in the heading-0 bin returns at 2.0 m; along
        // that heading, bins before the return are free, the return bin is
        // occupied, bins beyond stay unknown.
        let returns: Vec<(f64, f64)> = (0..10)
            .map(|i| ((i as f64 * 0.5 + 0.01f64).to_radians(), 2.0))
            .collect();
        let scan = synthetic_scan(&returns);
        let geom = RadialGeometry::default();
        let map = bin_scan(&scan, geom);
        let h = geom.heading_bin(0.01);
        let hit = geom.range_bin(2.0).unwrap();
        for r in 0..hit {
            assert_eq!(map.get(h, r), Cell::Free, "bin {r}");
        }
        assert_eq!(map.get(h, hit), Cell::Occupied);
        for r in (hit + 1)..geom.n_range {
            assert_eq!(map.get(h, r), Cell::Unknown, "bin {r}");
        }
    }

    #[test]
    fn bin_scan_rear_cone_unknown() {
        let scan = synthetic_scan(&[]);
        let geom = RadialGeometry::default();
        let map = bin_scan(&scan, geom);
        let mut rear_bins = 0;
        for h in 0..geom.n_heading {
            let center = geom.bin_heading(h);
            let lo = center - geom.heading_step() / 2.0;
            let hi = center + geom.heading_step() / 2.0;
            // Strictly behind the 270 degree sweep: no beam angle can fall
            // inside [lo, hi). The edge beams at +-135 degrees land in the
            // bins whose lower edge is exactly +135 (upper side only).
            let outside_fov = lo > 0.75 * PI + 1e-9 || hi <= -0.75 * PI + 1e-9;
            if outside_fov {
                rear_bins += 1;
                for r in 0..geom.n_range {
                    assert_eq!(map.get(h, r), Cell::Unknown, "h={h} r={r}");
                }
            } else if hi < 0.75 * PI - 1e-9 && lo > -0.75 * PI - 1e-9 {
                // Fully inside the field of view: no-return beams sweep it free.
                assert_eq!(map.get(h, 0), Cell::Free, "h={h}");
            }
        }
        // The rear quarter of 72 bins, minus the straddling edge bins.
        assert!(rear_bins >= 17, "only {rear_bins} rear bins");
    }

    /// Brute-force per-cell classifier: for each cell, look at every beam
    /// whose angle falls in the cell's heading bin and combine outcomes.
    fn bin_scan_oracle(scan: &LaserScan, geom: RadialGeometry) -> RadialOccupancyMap {
        let mut map = RadialOccupancyMap::new(geom);
        let step = geom.range_step();
        for h in 0..geom.n_heading {
            for r in 0..geom.n_range {
                let lo = r as f64 * step;
                let hi = (r + 1) as f64 * step;
                let mut any_occ = false;
                let mut any_free = false;
                for i in 0..scan.n_beams() {
                    if geom.heading_bin(scan.beam_angle(i)) != h {
                        continue;
                    }
                    let range = scan.ranges[i];
                    if scan.is_return(i) {
                        if range >= lo && range < hi {
                            any_occ = true;
                        } else if range >= hi {
                            any_free = true;
                        }
                    } else if hi <= scan.range_max.min(geom.max_radius) {
                        any_free = true;
                    }
                }
                if any_occ {
                    map.set(h, r, Cell::Occupied);
                } else if any_free {
                    map.set(h, r, Cell::Free);
                }
            }
        }
        map
    }

    #[test]
    fn bin_scan_matches_per_cell_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let returns: Vec<(f64, f64)> = (0..rng.random_range(10..80))
                .map(|_| (rng.random_range(-2.3..2.3), rng.random_range(0.1..12.0)))
                .collect();
            let scan = synthetic_scan(&returns);
            let geom = RadialGeometry::default();
            assert_eq!(bin_scan(&scan, geom), bin_scan_oracle(&scan, geom));
        }
    }

    #[test]
    fn bin_scan_never_occupies_beyond_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let returns: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(-2.3..2.3), rng.random_range(0.1..9.0)))
            .collect();
        let scan = synthetic_scan(&returns);
        let geom = RadialGeometry::default();
        let map = bin_scan(&scan, geom);
        // Occupied bins must contain at least one return.
        for h in 0..geom.n_heading {
            for r in 0..geom.n_range {
                if map.get(h, r) != Cell::Occupied {
                    continue;
                }
                let any = (0..scan.n_beams()).any(|i| {
                    scan.is_return(i)
                        && geom.heading_bin(scan.beam_angle(i)) == h
                        && geom.range_bin(scan.ranges[i]) == Some(r)
                });
                assert!(any, "occupied bin ({h},{r}) has no supporting return");
            }
        }
    }

    #[test]
    fn extract_empty_grid() {
        let grid = WaypointGrid::zeros(RadialGeometry::default());
        let set = extract_waypoints(&grid, &WaypointParams::default());
        assert!(set.is_empty());
    }

    #[test]
    fn extract_truncates_to_five_best() {
        let geom = RadialGeometry::default();
        let mut grid = WaypointGrid::zeros(geom);
        // 7 isolated peaks, confidences 0.9 down to 0.6, far apart.
        let peaks = [
            (0usize, 20usize, 0.9),
            (10, 20, 0.85),
            (20, 20, 0.8),
            (30, 20, 0.75),
            (40, 20, 0.7),
            (50, 20, 0.65),
            (60, 20, 0.6),
        ];
        for &(h, r, p) in &peaks {
            grid.set(h, r, p);
        }
        let set = extract_waypoints(&grid, &WaypointParams::default());
        assert_eq!(set.len(), 5);
        let confs: Vec<f64> = set.waypoints.iter().map(|w| w.confidence).collect();
        assert_eq!(confs, vec![0.9, 0.85, 0.8, 0.75, 0.7]);
    }

    #[test]
    fn extract_merges_adjacent_bins() {
        let geom = RadialGeometry::default();
        let mut grid = WaypointGrid::zeros(geom);
        // Two adjacent heading bins at the same ring, within the NMS radius.
        grid.set(10, 8, 0.6);
        grid.set(11, 8, 0.8);
        let set = extract_waypoints(&grid, &WaypointParams::default());
        assert_eq!(set.len(), 1);
        let w = set.waypoints[0];
        assert!((w.confidence - 0.8).abs() < 1e-12);
        // Hand-executed NMS: mass-weighted centroid of the two bin centers.
        let c1 = geom.bin_center(11, 8);
        let c2 = geom.bin_center(10, 8);
        let expect = Point2::new(
            (0.8 * c1.x + 0.6 * c2.x) / 1.4,
            (0.8 * c1.y + 0.6 * c2.y) / 1.4,
        );
        assert!(w.position().distance(expect) < 1e-12);
    }

    proptest! {
        #[test]
        fn extract_respects_cap_and_threshold(seed in 0u64..1000) {
            let geom = RadialGeometry::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grid = WaypointGrid::zeros(geom);
            for _ in 0..rng.random_range(0..200) {
                let h = rng.random_range(0..geom.n_heading);
                let r = rng.random_range(0..geom.n_range);
                grid.set(h, r, rng.random_range(0.0..1.0));
            }
            let params = WaypointParams::default();
            let set = extract_waypoints(&grid, &params);
            prop_assert!(set.len() <= params.max_count);
            for w in &set.waypoints {
                prop_assert!(w.confidence >= params.threshold);
                prop_assert!(w.range <= geom.max_radius);
            }
        }
    }

    fn all_free_radial() -> RadialOccupancyMap {
        let geom = RadialGeometry::default();
        let mut m = RadialOccupancyMap::new(geom);
        for h in 0..geom.n_heading {
            for r in 0..geom.n_range {
                m.set(h, r, Cell::Free);
            }
        }
        m
    }

    #[test]
    fn predict_open_space_peaks_at_preferred_range() {
        let grid = geometric_predict(&all_free_radial(), &PredictorParams::default());
        let set = extract_waypoints(&grid, &WaypointParams::default());
        assert_eq!(set.len(), 5);
        for w in &set.waypoints {
            assert!((w.range - 2.1).abs() < 0.3, "range {}", w.range);
        }
        // Well separated in the open.
        for i in 0..set.len() {
            for j in (i + 1)..set.len() {
                let d = set.waypoints[i]
                    .position()
                    .distance(set.waypoints[j].position());
                assert!(d > 0.75, "waypoints {i},{j} only {d} apart");
            }
        }
    }

    #[test]
    fn predict_blocked_everywhere_is_empty() {
        let geom = RadialGeometry::default();
        let mut radial = RadialOccupancyMap::new(geom);
        let wall = geom.range_bin(0.5).unwrap();
        for h in 0..geom.n_heading {
            for r in 0..wall {
                radial.set(h, r, Cell::Free);
            }
            radial.set(h, wall, Cell::Occupied);
        }
        let grid = geometric_predict(&radial, &PredictorParams::default());
        assert!(grid.probabilities().iter().all(|&p| p == 0.0));
        assert!(extract_waypoints(&grid, &WaypointParams::default()).is_empty());
    }

    fn corridor_world(gap: f64) -> OccupancyGrid {
        // A 12x12 m room with a wall across x = 6 pierced by a gap centered
        // on the robot's line of travel (y = 6).
        let mut g = OccupancyGrid::new(240, 240, 0.05, Pose2D::new(0.0, 0.0, 0.0), Cell::Free);
        for i in 0..240 {
            g.set(i, 0, Cell::Occupied);
            g.set(i, 239, Cell::Occupied);
            g.set(0, i, Cell::Occupied);
            g.set(239, i, Cell::Occupied);
        }
        g.fill_rect(6.0, 0.0, 6.1, 6.0 - gap / 2.0, Cell::Occupied);
        g.fill_rect(6.0, 6.0 + gap / 2.0, 6.1, 12.0, Cell::Occupied);
        g
    }

    #[test]
    fn predict_single_corridor_is_one_cluster() {
        // Robot in a corridor of walls; high-probability bins must form one
        // contiguous heading run toward the opening.
        let geom = RadialGeometry::default();
        let world = corridor_world(1.4);
        let pose = Pose2D::new(4.5, 6.0, 0.0);
        let scan = simulate_scan(&world, pose, &ScanConfig::default()).unwrap();
        // Close the rear so the corridor through the gap is the only option.
        let mut radial = bin_scan(&scan, geom);
        for h in 0..geom.n_heading {
            let c = geom.bin_heading(h).abs();
            if c > PI / 2.0 {
                for r in 0..geom.n_range {
                    radial.set(h, r, Cell::Unknown);
                }
            }
        }
        let grid = geometric_predict(&radial, &PredictorParams::default());
        let hot: Vec<usize> = (0..geom.n_heading)
            .filter(|&h| (0..geom.n_range).any(|r| grid.get(h, r) >= 0.5))
            .collect();
        assert!(!hot.is_empty());
        // One contiguous run (no wrap issues here: forward headings only).
        for w in hot.windows(2) {
            assert_eq!(w[1] - w[0], 1, "hot headings not contiguous: {hot:?}");
        }
        let mid = geom.bin_heading(hot[hot.len() / 2]);
        assert!(mid.abs() < 0.4, "corridor heading {mid}");
    }

    #[test]
    fn predict_narrow_doorway_is_blocked() {
        // A 0.6 m doorway is too narrow for the clearance rule: nothing may
        // be proposed beyond it, in the grid or among extracted candidates.
        // A 1.2 m doorway passes the rule, so the grid scores bins beyond
        // the wall (extraction may still prefer the open room behind).
        let geom = RadialGeometry::default();
        let pose = Pose2D::new(4.5, 6.0, 0.0);
        let wall_dist = 6.0 - pose.x;
        for (gap, expect_through) in [(0.6, false), (1.2, true)] {
            let world = corridor_world(gap);
            let scan = simulate_scan(&world, pose, &ScanConfig::default()).unwrap();
            let radial = bin_scan(&scan, geom);
            let grid = geometric_predict(&radial, &PredictorParams::default());
            let mut through_bins = 0;
            for h in 0..geom.n_heading {
                for r in 0..geom.n_range {
                    if grid.get(h, r) < 0.5 {
                        continue;
                    }
                    let c = geom.bin_center(h, r);
                    if c.x > wall_dist + 0.1 {
                        through_bins += 1;
                    }
                }
            }
            assert_eq!(
                through_bins > 0,
                expect_through,
                "gap {gap}: {through_bins} bins beyond the wall"
            );
            if !expect_through {
                let set = extract_waypoints(&grid, &WaypointParams::default()).to_world(pose);
                assert!(
                    set.waypoints.iter().all(|w| w.x <= 6.1),
                    "candidate leaked through the narrow gap: {:?}",
                    set.waypoints
                );
            }
        }
    }

    fn measure(points: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::uniform(points.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn sinkhorn_self_divergence_is_zero() {
        let a = measure(&[(0.0, 0.0), (1.0, 2.0), (3.0, 1.0)]);
        let r = sinkhorn_divergence(&a, &a, &SinkhornParams::default()).unwrap();
        assert!(r.value.abs() < 1e-6, "value {}", r.value);
    }

    #[test]
    fn sinkhorn_two_points_squared_cost() {
        let a = measure(&[(0.0, 0.0)]);
        let b = measure(&[(2.0, 0.0)]);
        for eps in [0.5, 0.1, 0.01] {
            let r = sinkhorn_divergence(
                &a,
                &b,
                &SinkhornParams {
                    epsilon: eps,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!((r.value - 4.0).abs() < 1e-9, "eps {eps}: {}", r.value);
        }
    }

    #[test]
    fn sinkhorn_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let a = measure(
                &(0..4)
                    .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
                    .collect::<Vec<_>>(),
            );
            let b = measure(
                &(0..5)
                    .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
                    .collect::<Vec<_>>(),
            );
            let params = SinkhornParams {
                epsilon: 0.05,
                max_iters: 2000,
                tol: 1e-9,
            };
            let ab = sinkhorn_divergence(&a, &b, &params).unwrap();
            let ba = sinkhorn_divergence(&b, &a, &params).unwrap();
            assert!((ab.value - ba.value).abs() < 1e-6);
            assert!(ab.value >= -params.tol);
        }
    }

    #[test]
    fn sinkhorn_three_by_three_close_to_emd() {
        let a = measure(&[(0.0, 0.0), (1.0, 0.5), (0.2, 1.8)]);
        let b = measure(&[(2.0, 0.1), (1.1, 1.4), (0.4, 0.3)]);
        let eps = 1e-3 * mean_cost(&a, &b);
        let r = sinkhorn_divergence(
            &a,
            &b,
            &SinkhornParams {
                epsilon: eps,
                max_iters: 20000,
                tol: 1e-9,
            },
        )
        .unwrap();
        let emd = exact_emd(&a, &b).unwrap();
        assert!(
            (r.value - emd).abs() / emd < 0.02,
            "sinkhorn {} vs emd {emd}",
            r.value
        );
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let a = measure(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = measure(&[(0.3, 0.7), (2.0, 1.0)]);
        let r = sinkhorn_divergence(
            &a,
            &b,
            &SinkhornParams {
                epsilon: 1e-6,
                max_iters: 3,
                tol: 1e-12,
            },
        )
        .unwrap();
        assert!(!r.converged);
        assert!(r.value.is_finite());
    }

    #[test]
    fn invalid_measures_rejected() {
        assert!(DiscreteMeasure::new(vec![Point2::new(0.0, 0.0)], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![Point2::new(0.0, 0.0)], vec![-1.0, 2.0]).is_err());
        assert!(DiscreteMeasure::uniform(vec![]).is_err());
    }

    #[test]
    fn emd_trivial_cases() {
        let a = measure(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!(exact_emd(&a, &a).unwrap().abs() < 1e-12);
        let p = measure(&[(0.0, 0.0)]);
        let q = measure(&[(3.0, 4.0)]);
        assert!((exact_emd(&p, &q).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn emd_matches_permutation_enumeration() {
        // For equal-size uniform measures the optimum is an assignment.
        fn permutation_min(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
            fn perms(k: usize) -> Vec<Vec<usize>> {
                if k == 1 {
                    return vec![vec![0]];
                }
                let mut out = Vec::new();
                for p in perms(k - 1) {
                    for i in 0..k {
                        let mut q = p.clone();
                        q.insert(i, k - 1);
                        out.push(q);
                    }
                }
                out
            }
            let n = a.len();
            perms(n)
                .into_iter()
                .map(|p| {
                    (0..n)
                        .map(|i| a.points()[i].squared_distance(b.points()[p[i]]) / n as f64)
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        }
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let a = measure(
                &(0..4)
                    .map(|_| (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)))
                    .collect::<Vec<_>>(),
            );
            let b = measure(
                &(0..4)
                    .map(|_| (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)))
                    .collect::<Vec<_>>(),
            );
            let mcf = exact_emd(&a, &b).unwrap();
            let brute = permutation_min(&a, &b);
            assert!((mcf - brute).abs() < 1e-9, "{mcf} vs {brute}");
        }
    }

    #[test]
    fn emd_scale_limit() {
        let pts: Vec<Point2> = (0..11).map(|i| Point2::new(i as f64, 0.0)).collect();
        let a = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let b = DiscreteMeasure::uniform(pts).unwrap();
        assert!(matches!(
            exact_emd(&a, &b),
            Err(SubgoalError::OracleScaleExceeded { .. })
        ));
    }

    #[test]
    fn emd_unequal_sizes() {
        // 2 vs 3 uniform atoms: optimum splits mass; verify a hand solution.
        // a = {(0,0), (3,0)} each 1/2; b = {(0,0), (3,0), (3,1)} each 1/3.
        // Send 1/3 at cost 0 to each matching atom; the final 1/3 at (3,1)
        // takes 1/6 from (3,0) at cost 1 and 1/6 from (0,0) at cost 10.
        let a = measure(&[(0.0, 0.0), (3.0, 0.0)]);
        let b = measure(&[(0.0, 0.0), (3.0, 0.0), (3.0, 1.0)]);
        let emd = exact_emd(&a, &b).unwrap();
        let expect = (1.0 / 6.0) * 1.0 + (1.0 / 6.0) * 10.0;
        assert!((emd - expect).abs() < 1e-9, "emd {emd} expect {expect}");
    }

    #[test]
    fn match_eval_cases() {
        let truth = vec![Point2::new(0.0, 0.0), Point2::new(2.0, 0.0)];
        let mk = |pts: &[(f64, f64)]| WaypointSet {
            waypoints: pts
                .iter()
                .map(|&(x, y)| Waypoint {
                    range: x.hypot(y),
                    heading: y.atan2(x),
                    x,
                    y,
                    confidence: 1.0,
                })
                .collect(),
            max_count: 5,
        };
        let exact = mk(&[(0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(
            match_eval(&exact, &truth, &DEFAULT_MATCH_RADII),
            vec![1.0, 1.0, 1.0]
        );
        let near = mk(&[(0.7, 0.0)]);
        assert_eq!(
            match_eval(&near, &truth, &DEFAULT_MATCH_RADII),
            vec![0.0, 1.0, 1.0]
        );
        let empty = mk(&[]);
        assert_eq!(
            match_eval(&empty, &truth, &DEFAULT_MATCH_RADII),
            vec![0.0, 0.0, 0.0]
        );
    }

    proptest! {
        #[test]
        fn match_eval_monotone_in_radius(
            preds in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8),
            truths in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8),
        ) {
            let set = WaypointSet {
                waypoints: preds
                    .iter()
                    .map(|&(x, y)| Waypoint { range: x.hypot(y), heading: y.atan2(x), x, y, confidence: 1.0 })
                    .collect(),
                max_count: 5,
            };
            let truth: Vec<Point2> = truths.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let f = match_eval(&set, &truth, &DEFAULT_MATCH_RADII);
            prop_assert!(f[0] <= f[1] + 1e-12 && f[1] <= f[2] + 1e-12);
        }
    }

    #[test]
    fn waypoint_set_wire_format_is_a_bare_list() {
        let set = WaypointSet {
            waypoints: vec![Waypoint {
                range: 2.0,
                heading: 0.5,
                x: 1.75,
                y: 0.96,
                confidence: 0.9,
            }],
            max_count: 5,
        };
        let json = serde_json::to_string(&set).unwrap();
        assert!(json.starts_with('['), "wire format must be a list: {json}");
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let record = &value[0];
        for key in ["range", "heading", "x", "y", "confidence"] {
            assert!(record.get(key).is_some(), "missing {key}: {json}");
        }
        let back: WaypointSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.waypoints, set.waypoints);
    }

    #[test]
    fn neighbor_targets_honor_exclusions() {
        let vps = vec![
            Viewpoint::new("center", [0.0, 0.0, 0.0]),
            Viewpoint::new("east", [2.0, 0.0, 0.0]),
            Viewpoint::new("north", [0.0, 2.0, 0.0]),
            Viewpoint::new("stair_top", [0.0, -2.0, 1.5]),
        ];
        let vis = vec![
            ("center".to_string(), "east".to_string()),
            ("center".to_string(), "north".to_string()),
            ("center".to_string(), "stair_top".to_string()),
        ];
        let g = build_graph(vps, &vis, 5.0).unwrap();
        let excluded: HashSet<String> = ["stair_top".to_string()].into();
        let targets = neighbor_targets(&g, "center", &excluded).unwrap();
        assert_eq!(targets.len(), 2);
        assert!(!targets.contains(&Point2::new(0.0, -2.0)));
        let all = neighbor_targets(&g, "center", &HashSet::new()).unwrap();
        assert_eq!(all.len(), 3);
    }
}
