//! Instruction-following evaluation: trajectory length (TL), navigation
//! error (NE), success rate (SR), oracle success (OS), success weighted by
//! path length (SPL), and the DTW path-fidelity scores nDTW and sDTW.
//!
//! Both the agent trajectory and the reference path are resampled to 100
//! equally spaced points before DTW so sampling rates do not matter;
//! nDTW = exp(-DTW / (100 * 3 m)) and sDTW multiplies by the success flag.

use crate::geometry::{Point2, Pose2D};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUCCESS_RADIUS: f64 = 3.0;
pub const RESAMPLE_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    #[serde(flatten)]
    pub pose: Pose2D,
}

/// A timestamped pose sequence; timestamps strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::InvalidTrajectory(
                "trajectory needs at least one sample".into(),
            ));
        }
        for w in samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(MetricsError::InvalidTrajectory(format!(
                    "timestamps must strictly increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn single(t: f64, pose: Pose2D) -> Self {
        Self {
            samples: vec![TrajectorySample { t, pose }],
        }
    }

    /// Append a sample; `t` must be greater than the last timestamp.
    pub fn push(&mut self, t: f64, pose: Pose2D) {
        debug_assert!(t > self.samples.last().map(|s| s.t).unwrap_or(f64::NEG_INFINITY));
        self.samples.push(TrajectorySample { t, pose });
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn points(&self) -> Vec<Point2> {
        self.samples.iter().map(|s| s.pose.position()).collect()
    }

    pub fn final_pose(&self) -> Pose2D {
        self.samples.last().expect("non-empty").pose
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().unwrap().t - self.samples[0].t
    }

    /// Trajectory length: summed Euclidean distance between samples.
    pub fn length(&self) -> f64 {
        polyline_length(&self.points())
    }
}

pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Resample a polyline to `n` points equally spaced by arclength, endpoints
/// preserved. A single point (or zero-length polyline) yields `n` copies.
pub fn resample_points(points: &[Point2], n: usize) -> Vec<Point2> {
    assert!(n >= 2, "resampling needs at least two points");
    assert!(!points.is_empty(), "cannot resample an empty polyline");
    let total = polyline_length(points);
    if total == 0.0 {
        return vec![points[0]; n];
    }

    let mut cumulative = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        cumulative.push(acc);
    }

    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let frac = if seg_len > 0.0 {
            ((target - cumulative[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = points[seg];
        let b = points[seg + 1];
        out.push(Point2::new(
            a.x + frac * (b.x - a.x),
            a.y + frac * (b.y - a.y),
        ));
    }
    // Endpoints exactly, regardless of accumulated float error.
    out[0] = points[0];
    out[n - 1] = *points.last().unwrap();
    out
}

pub fn resample(traj: &Trajectory, n: usize) -> Vec<Point2> {
    resample_points(&traj.points(), n)
}

/// Classic dynamic time warping with Euclidean ground distance, step set
/// {(1,0), (0,1), (1,1)} and full boundary alignment.
pub fn dtw(a: &[Point2], b: &[Point2]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut row = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for ai in a {
        row[0] = f64::INFINITY;
        for (j, bj) in b.iter().enumerate() {
            let cost = ai.distance(*bj);
            row[j + 1] = cost + prev[j + 1].min(row[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[m]
}

/// The seven-metric record for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Trajectory length, meters.
    pub tl: f64,
    /// Navigation error: distance from the final pose to the goal, meters.
    pub ne: f64,
    pub sr: bool,
    pub os: bool,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    #[serde(default)]
    pub collision: bool,
    #[serde(default)]
    pub navigation_failure: bool,
}

impl EpisodeResult {
    pub fn with_flags(mut self, collision: bool, navigation_failure: bool) -> Self {
        self.collision = collision;
        self.navigation_failure = navigation_failure;
        self
    }
}

/// Score one episode against its reference path. The goal is the last point
/// of the reference; success is strict `NE < success_radius`.
pub fn evaluate_episode(
    agent_traj: &Trajectory,
    reference_path: &[Point2],
    geodesic_length: f64,
    success_radius: f64,
) -> EpisodeResult {
    assert!(!reference_path.is_empty(), "reference path must be non-empty");
    assert!(geodesic_length > 0.0, "geodesic length must be positive");

    let goal = *reference_path.last().unwrap();
    let tl = agent_traj.length();
    let ne = agent_traj.final_pose().position().distance(goal);
    let sr = ne < success_radius;
    let os = agent_traj
        .samples()
        .iter()
        .any(|s| s.pose.position().distance(goal) < success_radius);
    let spl = if sr {
        geodesic_length / tl.max(geodesic_length)
    } else {
        0.0
    };

    let agent_pts = resample(agent_traj, RESAMPLE_POINTS);
    let ref_pts = resample_points(reference_path, RESAMPLE_POINTS);
    let d = dtw(&agent_pts, &ref_pts);
    let ndtw = (-d / (RESAMPLE_POINTS as f64 * success_radius)).exp();
    let sdtw = if sr { ndtw } else { 0.0 };

    EpisodeResult {
        tl,
        ne,
        sr,
        os,
        spl,
        ndtw,
        sdtw,
        collision: false,
        navigation_failure: false,
    }
}

/// nDTW between two trajectories (both resampled), used for the pairwise
/// setting-similarity matrices.
pub fn trajectory_ndtw(a: &Trajectory, b: &Trajectory) -> f64 {
    let pa = resample(a, RESAMPLE_POINTS);
    let pb = resample(b, RESAMPLE_POINTS);
    (-dtw(&pa, &pb) / (RESAMPLE_POINTS as f64 * SUCCESS_RADIUS)).exp()
}

/// Batch summary: means per metric, with the rate metrics expressed as
/// percentages. Column order follows the usual report shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub os_pct: f64,
    pub sr_pct: f64,
    pub spl_pct: f64,
    pub sdtw_pct: f64,
    pub ndtw_pct: f64,
    pub collisions: usize,
    pub navigation_failures: usize,
}

pub fn aggregate(results: &[EpisodeResult]) -> Result<Summary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(Summary {
        episodes: results.len(),
        tl: mean(&|r| r.tl),
        ne: mean(&|r| r.ne),
        os_pct: 100.0 * mean(&|r| r.os as u8 as f64),
        sr_pct: 100.0 * mean(&|r| r.sr as u8 as f64),
        spl_pct: 100.0 * mean(&|r| r.spl),
        sdtw_pct: 100.0 * mean(&|r| r.sdtw),
        ndtw_pct: 100.0 * mean(&|r| r.ndtw),
        collisions: results.iter().filter(|r| r.collision).count(),
        navigation_failures: results.iter().filter(|r| r.navigation_failure).count(),
    })
}

impl Summary {
    /// Aligned text table, one header row and one value row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:>5} {:>8} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "n", "TL(m)", "NE(m)", "OS(%)", "SR(%)", "SPL", "SDTW", "NDTW"
        ));
        s.push_str(&format!(
            "{:>5} {:>8.2} {:>8.2} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}\n",
            self.episodes,
            self.tl,
            self.ne,
            self.os_pct,
            self.sr_pct,
            self.spl_pct,
            self.sdtw_pct,
            self.ndtw_pct
        ));
        s
    }
}
