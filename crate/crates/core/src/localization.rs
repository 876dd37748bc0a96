//! Monte Carlo localization against a known occupancy map.
//!
//! The measurement model is a likelihood field: beam endpoints projected
//! from each particle are scored by their distance to the nearest occupied
//! cell, read from a distance transform precomputed once per map. Motion
//! uses the standard odometry decomposition (rotate, translate, rotate)
//! with Gaussian noise, and systematic resampling fires when the effective
//! sample size drops below half the particle count.

use crate::geometry::{normalize_angle, Pose2D};
use crate::gridworld::{Cell, DistanceField, LaserScan, OccupancyGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("map has no free cells to sample")]
    InvalidMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
}

/// Odometry increment in the rotate-translate-rotate decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdomDelta {
    pub d_rot1: f64,
    pub d_trans: f64,
    pub d_rot2: f64,
}

impl OdomDelta {
    /// Decompose the motion between two poses.
    pub fn between(from: Pose2D, to: Pose2D) -> Self {
        let dx = to.x - from.x;
        let dy = to.y - from.y;
        let d_trans = dx.hypot(dy);
        let heading = if d_trans > 1e-12 {
            dy.atan2(dx)
        } else {
            from.theta
        };
        let d_rot1 = normalize_angle(heading - from.theta);
        let d_rot2 = normalize_angle(to.theta - from.theta - d_rot1);
        Self {
            d_rot1,
            d_trans,
            d_rot2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MotionNoise {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            sigma_trans: 0.05,
            sigma_rot: 0.035,
        }
    }
}

/// Initial particle distribution.
#[derive(Debug, Clone, Copy)]
pub enum InitMode {
    /// Gaussian around a pose with (position, heading) sigmas.
    Gaussian {
        pose: Pose2D,
        sigma_xy: f64,
        sigma_theta: f64,
    },
    /// Uniform over the map's free cells with uniform heading.
    UniformFree,
}

/// What one filter step did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub ess: f64,
    pub resampled: bool,
    /// All weights underflowed; the filter recovered with uniform weights.
    pub degenerate: bool,
}

pub struct ParticleFilter {
    particles: Vec<Particle>,
    map: Arc<OccupancyGrid>,
    distance_field: Arc<DistanceField>,
    pub likelihood_sigma: f64,
    pub motion_noise: MotionNoise,
    /// Score every n-th beam.
    pub beam_stride: usize,
    rng: ChaCha8Rng,
}

pub const DEFAULT_LIKELIHOOD_SIGMA: f64 = 0.2;
pub const DEFAULT_BEAM_STRIDE: usize = 10;

/// Initialize a filter with `n` equally weighted particles.
pub fn pf_init(
    map: Arc<OccupancyGrid>,
    n: usize,
    mode: InitMode,
    seed: u64,
) -> Result<ParticleFilter, LocalizationError> {
    assert!(n >= 1, "at least one particle");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = 1.0 / n as f64;
    let particles = match mode {
        InitMode::Gaussian {
            pose,
            sigma_xy,
            sigma_theta,
        } => {
            let nx = Normal::new(0.0, sigma_xy.max(0.0)).unwrap();
            let nt = Normal::new(0.0, sigma_theta.max(0.0)).unwrap();
            (0..n)
                .map(|_| Particle {
                    pose: Pose2D::new(
                        pose.x + sample_or_zero(&nx, sigma_xy, &mut rng),
                        pose.y + sample_or_zero(&nx, sigma_xy, &mut rng),
                        pose.theta + sample_or_zero(&nt, sigma_theta, &mut rng),
                    ),
                    weight,
                })
                .collect()
        }
        InitMode::UniformFree => {
            let free: Vec<(usize, usize)> = (0..map.height())
                .flat_map(|iy| (0..map.width()).map(move |ix| (ix, iy)))
                .filter(|&(ix, iy)| map.get(ix, iy) == Cell::Free)
                .collect();
            if free.is_empty() {
                return Err(LocalizationError::InvalidMap);
            }
            (0..n)
                .map(|_| {
                    let &(ix, iy) = &free[rng.random_range(0..free.len())];
                    let res = map.resolution();
                    let x = map.origin().x + (ix as f64 + rng.random::<f64>()) * res;
                    let y = map.origin().y + (iy as f64 + rng.random::<f64>()) * res;
                    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    Particle {
                        pose: Pose2D::new(x, y, theta),
                        weight,
                    }
                })
                .collect()
        }
    };
    let distance_field = Arc::new(DistanceField::from_grid(&map));
    Ok(ParticleFilter {
        particles,
        map,
        distance_field,
        likelihood_sigma: DEFAULT_LIKELIHOOD_SIGMA,
        motion_noise: MotionNoise::default(),
        beam_stride: DEFAULT_BEAM_STRIDE,
        rng,
    })
}

fn sample_or_zero<R: Rng>(normal: &Normal<f64>, sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        normal.sample(rng)
    } else {
        0.0
    }
}

impl ParticleFilter {
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn map(&self) -> &OccupancyGrid {
        &self.map
    }

    /// Propagate by odometry, weight by the likelihood field, normalize,
    /// and resample when the effective sample size falls below n/2.
    ///
    /// A step without motion is a no-op: repeated identical scans from a
    /// static pose carry no new information, and updating on them only
    /// sharpens the posterior onto whichever particle happens to score
    /// best and starves the cloud of diversity.
    pub fn step(&mut self, odom: &OdomDelta, scan: &LaserScan) -> StepReport {
        let moved = odom.d_trans.abs() > 1e-6
            || odom.d_rot1.abs() > 1e-6
            || odom.d_rot2.abs() > 1e-6;
        if !moved {
            let ess = 1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>();
            return StepReport {
                ess,
                resampled: false,
                degenerate: false,
            };
        }
        let noise = self.motion_noise;
        let n_trans = Normal::new(0.0, noise.sigma_trans.max(1e-12)).unwrap();
        let n_rot = Normal::new(0.0, noise.sigma_rot.max(1e-12)).unwrap();
        for p in &mut self.particles {
            let r1 = odom.d_rot1 + sample_or_zero(&n_rot, noise.sigma_rot, &mut self.rng);
            let t = odom.d_trans + sample_or_zero(&n_trans, noise.sigma_trans, &mut self.rng);
            let r2 = odom.d_rot2 + sample_or_zero(&n_rot, noise.sigma_rot, &mut self.rng);
            let heading = p.pose.theta + r1;
            p.pose = Pose2D::new(
                p.pose.x + t * heading.cos(),
                p.pose.y + t * heading.sin(),
                heading + r2,
            );
        }

        // Likelihood-field weights in log space.
        let inv_two_sigma_sq = 1.0 / (2.0 * self.likelihood_sigma * self.likelihood_sigma);
        // Out-of-map endpoints score as if far from any obstacle.
        let miss_distance = 3.0 * self.likelihood_sigma;
        let mut log_weights = Vec::with_capacity(self.particles.len());
        for p in &self.particles {
            let mut lw = p.weight.max(1e-300).ln();
            let mut i = 0;
            while i < scan.n_beams() {
                if scan.is_return(i) {
                    let a = p.pose.theta + scan.beam_angle(i);
                    let ex = p.pose.x + scan.ranges[i] * a.cos();
                    let ey = p.pose.y + scan.ranges[i] * a.sin();
                    let d = self
                        .distance_field
                        .at_world(ex, ey)
                        .unwrap_or(miss_distance)
                        .min(miss_distance);
                    lw -= d * d * inv_two_sigma_sq;
                }
                i += self.beam_stride;
            }
            log_weights.push(lw);
        }

        let max_lw = log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, lw) in self.particles.iter_mut().zip(&log_weights) {
            p.weight = (lw - max_lw).exp();
            total += p.weight;
        }
        let degenerate = total.is_nan() || total <= 0.0 || !max_lw.is_finite();
        if degenerate {
            let w = 1.0 / self.particles.len() as f64;
            for p in &mut self.particles {
                p.weight = w;
            }
        } else {
            for p in &mut self.particles {
                p.weight /= total;
            }
        }

        let ess = 1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>();
        let resampled = ess < self.particles.len() as f64 / 2.0;
        if resampled {
            self.systematic_resample();
        }
        StepReport {
            ess,
            resampled,
            degenerate,
        }
    }

    fn systematic_resample(&mut self) {
        let n = self.particles.len();
        let step = 1.0 / n as f64;
        let start = self.rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut cumulative = self.particles[0].weight;
        let mut idx = 0;
        for k in 0..n {
            let u = start + k as f64 * step;
            while u > cumulative && idx + 1 < n {
                idx += 1;
                cumulative += self.particles[idx].weight;
            }
            out.push(Particle {
                pose: self.particles[idx].pose,
                weight: step,
            });
        }
        self.particles = out;
    }

    /// Weighted mean position and circular weighted mean heading.
    pub fn estimate(&self) -> Pose2D {
        let mut x = 0.0;
        let mut y = 0.0;
        let mut sin = 0.0;
        let mut cos = 0.0;
        for p in &self.particles {
            x += p.weight * p.pose.x;
            y += p.weight * p.pose.y;
            sin += p.weight * p.pose.theta.sin();
            cos += p.weight * p.pose.theta.cos();
        }
        Pose2D::new(x, y, sin.atan2(cos))
    }
}

/// A line of the pose log: truth and estimate rows share one format.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoseLogEntry {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub estimate: bool,
}

pub fn pose_log_line(t: f64, pose: Pose2D, estimate: bool) -> String {
    serde_json::to_string(&PoseLogEntry {
        t,
        x: pose.x,
        y: pose.y,
        theta: pose.theta,
        estimate,
    })
    .expect("pose log entry serializes")
}
