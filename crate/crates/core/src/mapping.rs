//! Log-odds occupancy mapping from laser scans, for the protocol where the
//! robot starts every episode with no prior map.
//!
//! Scan integration trusts the pose it is given (the simulator's true pose,
//! or a filter estimate); there is no scan matching. Cells along a beam move
//! toward free by `l_free`, the return cell moves toward occupied by
//! `l_occ`, and everything is clamped to +-10 log-odds.

use crate::geometry::Pose2D;
use crate::gridworld::{Cell, LaserScan, OccupancyGrid, RayTraversal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("pose ({x}, {y}) is outside the map bounds")]
    InvalidPose { x: f64, y: f64 },
    #[error("occupied threshold {occ} must exceed free threshold {free}")]
    InvalidThresholds { occ: f64, free: f64 },
}

pub const DEFAULT_L_OCC: f64 = 0.85;
pub const DEFAULT_L_FREE: f64 = -0.4;
pub const LOG_ODDS_CLAMP: f64 = 10.0;

/// An occupancy map under accumulation: one log-odds value per cell,
/// 0 meaning unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct LogOddsMap {
    resolution: f64,
    origin: Pose2D,
    width: usize,
    height: usize,
    cells: Vec<f64>,
    pub l_occ: f64,
    pub l_free: f64,
}

impl LogOddsMap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D) -> Self {
        Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![0.0; width * height],
            l_occ: DEFAULT_L_OCC,
            l_free: DEFAULT_L_FREE,
        }
    }

    /// An empty map with the same extent as an existing grid.
    pub fn sized_like(grid: &OccupancyGrid) -> Self {
        Self::new(grid.width(), grid.height(), grid.resolution(), grid.origin())
    }

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
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.width + ix]
    }

    fn add(&mut self, ix: usize, iy: usize, delta: f64) {
        let c = &mut self.cells[iy * self.width + ix];
        *c = (*c + delta).clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP);
    }

    /// Reset every cell to unknown (log-odds 0).
    pub fn reset(&mut self) {
        self.cells.fill(0.0);
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

    /// True when the accumulated evidence at a world point crosses the
    /// occupancy threshold.
    pub fn occupied_at_world(&self, x: f64, y: f64, occ_threshold: f64) -> bool {
        self.world_to_cell(x, y)
            .map(|(ix, iy)| self.get(ix, iy) >= occ_threshold)
            .unwrap_or(false)
    }
}

/// Integrate one scan taken at `pose`. Cells traversed by a beam before its
/// return accumulate `l_free`; the return cell accumulates `l_occ`;
/// no-return beams clear free space out to the scan's range limit.
pub fn integrate_scan(
    map: &mut LogOddsMap,
    pose: Pose2D,
    scan: &LaserScan,
) -> Result<(), MappingError> {
    // Bounds check via a probe grid of the same geometry.
    let fx = (pose.x - map.origin.x) / map.resolution;
    let fy = (pose.y - map.origin.y) / map.resolution;
    if fx < 0.0 || fy < 0.0 || fx >= map.width as f64 || fy >= map.height as f64 {
        return Err(MappingError::InvalidPose {
            x: pose.x,
            y: pose.y,
        });
    }

    // Returns sit exactly on the near boundary of the hit cell, so probe a
    // hair past the measured range when locating the endpoint cell.
    let nudge = map.resolution * 0.01;
    for i in 0..scan.n_beams() {
        let angle = pose.theta + scan.beam_angle(i);
        let (range, hit) = if scan.is_return(i) {
            (scan.ranges[i], true)
        } else {
            (scan.range_max, false)
        };
        let Some(traversal) = RayTraversal::with_geometry(
            map.resolution,
            map.origin,
            map.width,
            map.height,
            pose.x,
            pose.y,
            angle,
            range,
        ) else {
            continue;
        };
        let endpoint = if hit {
            map.world_to_cell(
                pose.x + (range + nudge) * angle.cos(),
                pose.y + (range + nudge) * angle.sin(),
            )
        } else {
            None
        };
        for (ix, iy, _) in traversal {
            if endpoint != Some((ix, iy)) {
                map.add(ix, iy, map.l_free);
            }
        }
        // Beams leaving the map just clear what they crossed.
        if let Some((ix, iy)) = endpoint {
            map.add(ix, iy, map.l_occ);
        }
    }
    Ok(())
}

/// Threshold the log-odds field into a tri-state grid.
pub fn export_grid(
    map: &LogOddsMap,
    occ_threshold: f64,
    free_threshold: f64,
) -> Result<OccupancyGrid, MappingError> {
    if occ_threshold <= free_threshold {
        return Err(MappingError::InvalidThresholds {
            occ: occ_threshold,
            free: free_threshold,
        });
    }
    let mut grid = OccupancyGrid::new(
        map.width,
        map.height,
        map.resolution,
        map.origin,
        Cell::Unknown,
    );
    for iy in 0..map.height {
        for ix in 0..map.width {
            let l = map.get(ix, iy);
            let cell = if l >= occ_threshold {
                Cell::Occupied
            } else if l <= free_threshold {
                Cell::Free
            } else {
                Cell::Unknown
            };
            grid.set(ix, iy, cell);
        }
    }
    Ok(grid)
}

pub const DEFAULT_OCC_THRESHOLD: f64 = 2.0;
pub const DEFAULT_FREE_THRESHOLD: f64 = -2.0;
