//! Navigation graphs over panoramic viewpoints.
//!
//! A graph is built from an explicit visibility relation: edges are kept only
//! between included viewpoints that are mutually visible and no further apart
//! than the edge cutoff (default 5 m, full 3D Euclidean distance). Graphs are
//! immutable after construction and all queries are pure.

use crate::geometry::Point2;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, HashMap, HashSet};
use thiserror::Error;

pub const DEFAULT_MAX_EDGE_LENGTH: f64 = 5.0;

#[derive(Debug, Error)]
pub enum NavGraphError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("no path between {start:?} and {goal:?}")]
    NoPath { start: String, goal: String },
    #[error("sampling exhausted after {attempts} attempts ({found}/{requested} found)")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        requested: usize,
    },
}

/// A camera viewpoint. Excluded viewpoints (stairs, furniture) stay in the
/// list but never participate in edges or queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: String,
    pub position: [f64; 3],
    pub included: bool,
}

impl Viewpoint {
    pub fn new(id: impl Into<String>, position: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            position,
            included: true,
        }
    }

    pub fn excluded(mut self) -> Self {
        self.included = false;
        self
    }

    pub fn distance(&self, other: &Viewpoint) -> f64 {
        let d0 = self.position[0] - other.position[0];
        let d1 = self.position[1] - other.position[1];
        let d2 = self.position[2] - other.position[2];
        (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
    }

    /// Planar projection used by the planner and metrics.
    pub fn point2(&self) -> Point2 {
        Point2::new(self.position[0], self.position[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphStats {
    pub num_viewpoints: usize,
    pub avg_degree: f64,
    pub avg_edge_distance: f64,
}

#[derive(Debug, Clone)]
pub struct NavGraph {
    viewpoints: Vec<Viewpoint>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>, // neighbor indices, sorted by id
    edges: Vec<(usize, usize)>,
    max_edge_length: f64,
}

/// Build a navigation graph from viewpoints and a visibility relation.
/// The edge set is exactly the visibility pairs whose endpoints are both
/// included and whose Euclidean distance is at most `max_edge_length`.
pub fn build_graph(
    viewpoints: Vec<Viewpoint>,
    visibility: &[(String, String)],
    max_edge_length: f64,
) -> Result<NavGraph, NavGraphError> {
    if max_edge_length <= 0.0 {
        return Err(NavGraphError::InvalidGraph(
            "max_edge_length must be positive".into(),
        ));
    }
    let mut index = HashMap::with_capacity(viewpoints.len());
    for (i, vp) in viewpoints.iter().enumerate() {
        if !vp.position.iter().all(|c| c.is_finite()) {
            return Err(NavGraphError::InvalidGraph(format!(
                "viewpoint {:?} has a non-finite position",
                vp.id
            )));
        }
        if index.insert(vp.id.clone(), i).is_some() {
            return Err(NavGraphError::InvalidGraph(format!(
                "duplicate viewpoint id {:?}",
                vp.id
            )));
        }
    }

    let mut edge_set = HashSet::new();
    for (a, b) in visibility {
        let &ia = index
            .get(a)
            .ok_or_else(|| NavGraphError::InvalidGraph(format!("unknown viewpoint id {a:?}")))?;
        let &ib = index
            .get(b)
            .ok_or_else(|| NavGraphError::InvalidGraph(format!("unknown viewpoint id {b:?}")))?;
        if ia == ib {
            continue; // self-visibility never produces an edge
        }
        if !(viewpoints[ia].included && viewpoints[ib].included) {
            continue;
        }
        if viewpoints[ia].distance(&viewpoints[ib]) > max_edge_length {
            continue;
        }
        edge_set.insert((ia.min(ib), ia.max(ib)));
    }

    let mut edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
    edges.sort_unstable();
    let mut adjacency = vec![Vec::new(); viewpoints.len()];
    for &(i, j) in &edges {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    for neighbors in &mut adjacency {
        neighbors.sort_by(|&a, &b| viewpoints[a].id.cmp(&viewpoints[b].id));
    }

    Ok(NavGraph {
        viewpoints,
        index,
        adjacency,
        edges,
        max_edge_length,
    })
}

impl NavGraph {
    pub fn max_edge_length(&self) -> f64 {
        self.max_edge_length
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&Viewpoint, &Viewpoint)> {
        self.edges
            .iter()
            .map(|&(i, j)| (&self.viewpoints[i], &self.viewpoints[j]))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn viewpoint(&self, id: &str) -> Option<&Viewpoint> {
        self.index.get(id).map(|&i| &self.viewpoints[i])
    }

    /// Neighbors of an included viewpoint, sorted by id.
    pub fn neighbors(&self, id: &str) -> Result<Vec<&Viewpoint>, NavGraphError> {
        let i = self.included_index(id)?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&j| &self.viewpoints[j])
            .collect())
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.adjacency[ia].contains(&ib),
            _ => false,
        }
    }

    /// Nearest included viewpoint to a planar position, with its 2D distance.
    pub fn nearest_viewpoint(&self, p: Point2) -> Option<(&Viewpoint, f64)> {
        self.viewpoints
            .iter()
            .filter(|vp| vp.included)
            .map(|vp| (vp, vp.point2().distance(p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    }

    fn included_index(&self, id: &str) -> Result<usize, NavGraphError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| NavGraphError::InvalidGraph(format!("unknown viewpoint id {id:?}")))?;
        if !self.viewpoints[i].included {
            return Err(NavGraphError::InvalidGraph(format!(
                "viewpoint {id:?} is excluded"
            )));
        }
        Ok(i)
    }

    fn edge_length(&self, i: usize, j: usize) -> f64 {
        self.viewpoints[i].distance(&self.viewpoints[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on cost; costs are finite by construction.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &NavGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.viewpoints.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        cost: 0.0,
        node: source,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &next in &graph.adjacency[node] {
            let c = cost + graph.edge_length(node, next);
            if c < dist[next] {
                dist[next] = c;
                heap.push(HeapEntry { cost: c, node: next });
            }
        }
    }
    dist
}

/// Shortest path between two included viewpoints, minimizing total edge
/// length. Among equal-length paths the lexicographically smallest id
/// sequence is returned, which makes results deterministic.
pub fn shortest_path(
    graph: &NavGraph,
    start: &str,
    goal: &str,
) -> Result<(Vec<String>, f64), NavGraphError> {
    let s = graph.included_index(start)?;
    let g = graph.included_index(goal)?;
    if s == g {
        return Ok((vec![graph.viewpoints[s].id.clone()], 0.0));
    }

    let dist_from_start = dijkstra(graph, s);
    let total = dist_from_start[g];
    if !total.is_finite() {
        return Err(NavGraphError::NoPath {
            start: start.to_string(),
            goal: goal.to_string(),
        });
    }
    let dist_from_goal = dijkstra(graph, g);
    let eps = 1e-9 * (1.0 + total);

    // Walk the shortest-path DAG greedily, taking the smallest id that still
    // lies on some optimal path. The visited guard covers zero-length edges
    // between coincident viewpoints.
    let mut path = vec![graph.viewpoints[s].id.clone()];
    let mut current = s;
    let mut visited = HashSet::from([s]);
    while current != g {
        let next = next_on_optimal_path(
            graph,
            current,
            &dist_from_start,
            &dist_from_goal,
            total,
            eps,
            &visited,
        )
        .ok_or_else(|| NavGraphError::NoPath {
            start: start.to_string(),
            goal: goal.to_string(),
        })?;
        path.push(graph.viewpoints[next].id.clone());
        visited.insert(next);
        current = next;
    }
    Ok((path, total))
}

fn next_on_optimal_path(
    graph: &NavGraph,
    current: usize,
    dist_from_start: &[f64],
    dist_from_goal: &[f64],
    total: f64,
    eps: f64,
    visited: &HashSet<usize>,
) -> Option<usize> {
    graph.adjacency[current]
        .iter()
        .copied()
        .filter(|v| !visited.contains(v))
        .filter(|&v| {
            dist_from_start[current] + graph.edge_length(current, v) + dist_from_goal[v]
                <= total + eps
        })
        .min_by(|&a, &b| graph.viewpoints[a].id.cmp(&graph.viewpoints[b].id))
}

/// Constraints on sampled trajectories. Defaults mirror typical episode
/// statistics: at least 5 m geodesic length and 4 to 6 edges.
#[derive(Debug, Clone, Copy)]
pub struct SamplingConstraints {
    pub min_length: f64,
    pub edge_range: (usize, usize),
}

impl Default for SamplingConstraints {
    fn default() -> Self {
        Self {
            min_length: 5.0,
            edge_range: (4, 6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub start: String,
    pub goal: String,
    pub path: Vec<String>,
    pub geodesic_length: f64,
}

/// Sample `n` distinct shortest-path trajectories satisfying the
/// constraints. Deterministic under `seed`; fails with `SamplingExhausted`
/// when the attempt budget runs out.
pub fn sample_trajectories(
    graph: &NavGraph,
    n: usize,
    constraints: &SamplingConstraints,
    seed: u64,
) -> Result<Vec<SampledTrajectory>, NavGraphError> {
    let mut ids: Vec<&str> = graph
        .viewpoints
        .iter()
        .filter(|vp| vp.included)
        .map(|vp| vp.id.as_str())
        .collect();
    ids.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 1000 + 500 * n;
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < budget {
        attempts += 1;
        if ids.len() < 2 {
            break;
        }
        let pair: Vec<&&str> = ids.choose_multiple(&mut rng, 2).collect();
        let (start, goal) = (*pair[0], *pair[1]);
        if !used.insert((start.to_string(), goal.to_string())) {
            continue;
        }
        let Ok((path, length)) = shortest_path(graph, start, goal) else {
            continue;
        };
        let edges = path.len() - 1;
        if length < constraints.min_length
            || edges < constraints.edge_range.0
            || edges > constraints.edge_range.1
        {
            continue;
        }
        out.push(SampledTrajectory {
            start: start.to_string(),
            goal: goal.to_string(),
            path,
            geodesic_length: length,
        });
    }
    if out.len() < n {
        return Err(NavGraphError::SamplingExhausted {
            attempts,
            found: out.len(),
            requested: n,
        });
    }
    Ok(out)
}

/// Per-graph summary statistics over included viewpoints.
pub fn graph_stats(graph: &NavGraph) -> Result<GraphStats, NavGraphError> {
    let num_viewpoints = graph.viewpoints.iter().filter(|vp| vp.included).count();
    if num_viewpoints == 0 {
        return Err(NavGraphError::InvalidGraph(
            "graph has no included viewpoints".into(),
        ));
    }
    let num_edges = graph.edges.len();
    let avg_degree = 2.0 * num_edges as f64 / num_viewpoints as f64;
    let avg_edge_distance = if num_edges == 0 {
        0.0
    } else {
        graph
            .edges
            .iter()
            .map(|&(i, j)| graph.edge_length(i, j))
            .sum::<f64>()
            / num_edges as f64
    };
    Ok(GraphStats {
        num_viewpoints,
        avg_degree,
        avg_edge_distance,
    })
}

// ---------------------------------------------------------------------------
// Graph file format
// ---------------------------------------------------------------------------

/// One record of the JSON graph file. `pose` is `[x, y, z, heading]`; the
/// heading component is tolerated but unused. Unknown extra fields are
/// accepted for compatibility with connectivity exports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub pose: Vec<f64>,
    #[serde(default = "default_true")]
    pub included: bool,
    #[serde(default)]
    pub visible: Vec<String>,
}

fn default_true() -> bool {
    true
}

/// Parse graph records and build the graph with the given edge cutoff.
pub fn load_graph(json: &str, max_edge_length: f64) -> Result<NavGraph, NavGraphError> {
    let records: Vec<GraphRecord> = serde_json::from_str(json)
        .map_err(|e| NavGraphError::InvalidGraph(format!("graph file parse error: {e}")))?;
    let mut viewpoints = Vec::with_capacity(records.len());
    let mut visibility = Vec::new();
    for rec in &records {
        if rec.pose.len() < 3 {
            return Err(NavGraphError::InvalidGraph(format!(
                "viewpoint {:?} pose must have at least x, y, z",
                rec.id
            )));
        }
        viewpoints.push(Viewpoint {
            id: rec.id.clone(),
            position: [rec.pose[0], rec.pose[1], rec.pose[2]],
            included: rec.included,
        });
        for other in &rec.visible {
            visibility.push((rec.id.clone(), other.clone()));
        }
    }
    build_graph(viewpoints, &visibility, max_edge_length)
}

/// Serialize a graph back to the record format, with `visible` listing the
/// actual graph neighbors.
pub fn save_graph(graph: &NavGraph) -> String {
    let records: Vec<GraphRecord> = graph
        .viewpoints()
        .iter()
        .map(|vp| GraphRecord {
            id: vp.id.clone(),
            pose: vec![vp.position[0], vp.position[1], vp.position[2], 0.0],
            included: vp.included,
            visible: if vp.included {
                graph
                    .neighbors(&vp.id)
                    .map(|ns| ns.iter().map(|n| n.id.clone()).collect())
                    .unwrap_or_default()
            } else {
                Vec::new()
            },
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("graph records serialize")
}
