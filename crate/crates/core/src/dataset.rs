//! Instruction episode ingestion and validation.
//!
//! Episode records are field-compatible with the common release format for
//! room-to-room style datasets: `{distance, scan, path_id, path, heading,
//! instructions}`. Unknown fields are preserved opaquely so files round-trip
//! exactly; instruction text is carried untouched (no language processing
//! happens here).

use crate::navgraph::{sample_trajectories, shortest_path, NavGraph, SampledTrajectory};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset format error at record {index}: {message}")]
    Format { index: usize, message: String },
    #[error("dataset is not a JSON list: {0}")]
    NotAList(String),
}

/// Episode id; numeric in released files, strings accepted too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathId {
    Num(i64),
    Str(String),
}

impl std::fmt::Display for PathId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathId::Num(n) => write!(f, "{n}"),
            PathId::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionEpisode {
    pub path_id: PathId,
    pub scan: String,
    pub path: Vec<String>,
    pub heading: f64,
    /// Reference geodesic length, meters.
    pub distance: f64,
    pub instructions: Vec<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

/// Parse a JSON document into episodes. Required fields must be present and
/// well-formed; anything else is preserved in `extra`.
pub fn load_dataset(document: &str) -> Result<Vec<InstructionEpisode>, DatasetError> {
    let values: Vec<Value> = serde_json::from_str(document)
        .map_err(|e| DatasetError::NotAList(e.to_string()))?;
    let mut episodes = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let episode: InstructionEpisode =
            serde_json::from_value(value).map_err(|e| DatasetError::Format {
                index,
                message: e.to_string(),
            })?;
        if episode.path.len() < 2 {
            return Err(DatasetError::Format {
                index,
                message: format!("path must have at least 2 viewpoints, got {}", episode.path.len()),
            });
        }
        if episode.distance.is_nan() || episode.distance <= 0.0 {
            return Err(DatasetError::Format {
                index,
                message: format!("distance must be positive, got {}", episode.distance),
            });
        }
        if episode.instructions.is_empty() {
            return Err(DatasetError::Format {
                index,
                message: "at least one instruction is required".into(),
            });
        }
        episodes.push(episode);
    }
    Ok(episodes)
}

pub fn save_dataset(episodes: &[InstructionEpisode]) -> String {
    serde_json::to_string_pretty(episodes).expect("episodes serialize")
}

/// Build episodes from sampled trajectories. The initial heading faces the
/// second viewpoint of the path; a placeholder instruction is attached so
/// records validate.
pub fn episodes_from_samples(
    graph: &NavGraph,
    samples: &[SampledTrajectory],
    scan_name: &str,
) -> Vec<InstructionEpisode> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let first = graph.viewpoint(&s.path[0]).expect("sampled id exists");
            let second = graph.viewpoint(&s.path[1]).expect("paths have >= 2 nodes");
            let heading = first.point2().bearing_to(second.point2());
            InstructionEpisode {
                path_id: PathId::Num(i as i64),
                scan: scan_name.to_string(),
                path: s.path.clone(),
                heading,
                distance: s.geodesic_length,
                instructions: vec![format!(
                    "Go from {} to {} along the sampled route.",
                    s.start, s.goal
                )],
                extra: serde_json::Map::new(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ViolationKind {
    UnknownViewpoint,
    ExcludedViewpoint,
    MissingEdge,
    DistanceMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub episode_index: usize,
    pub path_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub episodes_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every episode against a navigation graph: path ids must exist and
/// be included, consecutive ids must be graph edges, and the stored distance
/// must match the recomputed geodesic within 1%.
pub fn validate_dataset(episodes: &[InstructionEpisode], graph: &NavGraph) -> ValidationReport {
    let mut report = ValidationReport {
        episodes_checked: episodes.len(),
        violations: Vec::new(),
    };
    for (index, ep) in episodes.iter().enumerate() {
        let mut push = |kind: ViolationKind, detail: String| {
            report.violations.push(Violation {
                episode_index: index,
                path_id: ep.path_id.to_string(),
                kind,
                detail,
            });
        };
        let mut ids_ok = true;
        for id in &ep.path {
            match graph.viewpoint(id) {
                None => {
                    ids_ok = false;
                    push(ViolationKind::UnknownViewpoint, format!("{id:?} not in graph"));
                }
                Some(vp) if !vp.included => {
                    ids_ok = false;
                    push(ViolationKind::ExcludedViewpoint, format!("{id:?} is excluded"));
                }
                _ => {}
            }
        }
        if !ids_ok {
            continue;
        }
        for pair in ep.path.windows(2) {
            if !graph.has_edge(&pair[0], &pair[1]) {
                push(
                    ViolationKind::MissingEdge,
                    format!("{:?} -> {:?} is not a graph edge", pair[0], pair[1]),
                );
            }
        }
        match shortest_path(graph, &ep.path[0], ep.path.last().unwrap()) {
            Ok((_, geodesic)) => {
                if (geodesic - ep.distance).abs() > 0.01 * ep.distance {
                    push(
                        ViolationKind::DistanceMismatch,
                        format!("stored {} vs recomputed {geodesic}", ep.distance),
                    );
                }
            }
            Err(e) => push(ViolationKind::MissingEdge, format!("no geodesic: {e}")),
        }
    }
    report
}

/// Convenience: sample trajectories and package them as a dataset.
pub fn generate_dataset(
    graph: &NavGraph,
    n: usize,
    constraints: &crate::navgraph::SamplingConstraints,
    seed: u64,
    scan_name: &str,
) -> Result<Vec<InstructionEpisode>, crate::navgraph::NavGraphError> {
    let samples = sample_trajectories(graph, n, constraints, seed)?;
    Ok(episodes_from_samples(graph, &samples, scan_name))
}
