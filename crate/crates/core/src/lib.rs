//! 2D navigation simulation and evaluation toolkit.
//!
//! The crate models a planar robot world as an occupancy grid and layers the
//! pieces of a classical navigation stack on top of it:
//!
//! - [`navgraph`] — navigation graphs over panoramic viewpoints, shortest
//!   paths and trajectory sampling,
//! - [`gridworld`] — occupancy grids, map file I/O and simulated laser scans,
//! - [`subgoal`] — radial occupancy maps, waypoint extraction and Sinkhorn
//!   divergence scoring,
//! - [`localization`] — Monte Carlo pose tracking against a known map,
//! - [`mapping`] — log-odds occupancy mapping from laser scans,
//! - [`planner`] — costmaps, A* planning and closed-loop waypoint driving,
//! - [`metrics`] — the instruction-following metric suite (TL, NE, SR, OS,
//!   SPL, nDTW, sDTW),
//! - [`dataset`] — instruction episode ingestion and validation,
//! - [`augment`] — color-jitter domain randomization for RGB buffers,
//! - [`runner`] — episode orchestration for the `with map` and `no map`
//!   protocols, with pluggable agents and a line-oriented bridge protocol
//!   for external agents and predictors.

pub mod augment;
pub mod dataset;
pub mod geometry;
pub mod gridworld;
pub mod localization;
pub mod mapping;
pub mod metrics;
pub mod navgraph;
pub mod planner;
pub mod runner;
pub mod subgoal;

pub use geometry::{normalize_angle, Point2, Pose2D};
