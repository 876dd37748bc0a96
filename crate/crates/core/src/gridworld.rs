//! Ground-truth 2D world: occupancy grids, map file I/O, ray casting and
//! simulated laser scans.
//!
//! Map files follow the common robotics map_server convention: a binary P5
//! PGM image plus a small YAML metadata document. When saving, free cells
//! are written as pixel 254, unknown as 205 and occupied as 0, and PGM row 0
//! is the top of the image (grid row `height - 1`).

use crate::geometry::{normalize_angle, Point2, Pose2D};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("map format error: {0}")]
    MapFormat(String),
    #[error("invalid ray origin: outside the grid")]
    OriginOutOfBounds,
    #[error("invalid ray origin: inside an occupied cell")]
    OriginOccupied,
}

/// Tri-state occupancy of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

/// A 2D occupancy grid. `origin` is the world pose of the corner of cell
/// (0, 0); cells are stored row-major with `x` varying fastest. The origin
/// yaw is carried through map files but not applied to transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Pose2D,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub const DEFAULT_RESOLUTION: f64 = 0.05;

    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D, fill: Cell) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        self.cells[iy * self.width + ix] = cell;
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Grid cell containing a world point, if inside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin.x) / self.resolution;
        let fy = (y - self.origin.y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        if ix < self.width && iy < self.height {
            Some((ix, iy))
        } else {
            None
        }
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_at_world(&self, x: f64, y: f64) -> Option<Cell> {
        self.world_to_cell(x, y).map(|(ix, iy)| self.get(ix, iy))
    }

    /// Mark a world-frame rectangle of cells; clips to grid bounds.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, cell: Cell) {
        let ix0 = (((x0 - self.origin.x) / self.resolution).floor().max(0.0)) as usize;
        let iy0 = (((y0 - self.origin.y) / self.resolution).floor().max(0.0)) as usize;
        let ix1 = ((x1 - self.origin.x) / self.resolution).ceil().max(0.0) as usize;
        let iy1 = ((y1 - self.origin.y) / self.resolution).ceil().max(0.0) as usize;
        for iy in iy0..iy1.min(self.height) {
            for ix in ix0..ix1.min(self.width) {
                self.set(ix, iy, cell);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Map file I/O (PGM + YAML)
// ---------------------------------------------------------------------------

pub const PGM_FREE: u8 = 254;
pub const PGM_UNKNOWN: u8 = 205;
pub const PGM_OCCUPIED: u8 = 0;

/// Metadata document accompanying a PGM map image.
#[derive(Debug, Clone, PartialEq)]
pub struct MapMeta {
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub negate: bool,
    pub occupied_thresh: f64,
    pub free_thresh: f64,
}

impl MapMeta {
    /// Parse the flat `key: value` YAML subset used by map metadata files.
    /// Unknown keys are ignored.
    pub fn parse(yaml: &str) -> Result<Self, GridError> {
        let mut image = None;
        let mut resolution = None;
        let mut origin = None;
        let mut negate = None;
        let mut occupied_thresh = None;
        let mut free_thresh = None;

        for raw in yaml.lines() {
            let line = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| GridError::MapFormat(format!("bad yaml line: {raw:?}")))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "image" => image = Some(value.to_string()),
                "resolution" => resolution = Some(parse_f64(value, key)?),
                "origin" => origin = Some(parse_origin(value)?),
                "negate" => negate = Some(parse_f64(value, key)? != 0.0),
                "occupied_thresh" => occupied_thresh = Some(parse_f64(value, key)?),
                "free_thresh" => free_thresh = Some(parse_f64(value, key)?),
                _ => {}
            }
        }

        let missing = |name: &str| GridError::MapFormat(format!("missing required key: {name}"));
        Ok(Self {
            image: image.ok_or_else(|| missing("image"))?,
            resolution: resolution.ok_or_else(|| missing("resolution"))?,
            origin: origin.ok_or_else(|| missing("origin"))?,
            negate: negate.ok_or_else(|| missing("negate"))?,
            occupied_thresh: occupied_thresh.ok_or_else(|| missing("occupied_thresh"))?,
            free_thresh: free_thresh.ok_or_else(|| missing("free_thresh"))?,
        })
    }

    pub fn to_yaml(&self) -> String {
        format!(
            "image: {}\nresolution: {}\norigin: [{}, {}, {}]\nnegate: {}\noccupied_thresh: {}\nfree_thresh: {}\n",
            self.image,
            self.resolution,
            self.origin[0],
            self.origin[1],
            self.origin[2],
            if self.negate { 1 } else { 0 },
            self.occupied_thresh,
            self.free_thresh,
        )
    }
}

fn parse_f64(value: &str, key: &str) -> Result<f64, GridError> {
    value
        .parse::<f64>()
        .map_err(|_| GridError::MapFormat(format!("bad value for {key}: {value:?}")))
}

fn parse_origin(value: &str) -> Result<[f64; 3], GridError> {
    let inner = value
        .trim()
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| GridError::MapFormat(format!("bad origin: {value:?}")))?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| parse_f64(p.trim(), "origin"))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(GridError::MapFormat(format!(
            "origin must have 3 components, got {}",
            parts.len()
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

struct PgmImage {
    width: usize,
    height: usize,
    maxval: u16,
    data: Vec<u8>,
}

fn parse_pgm(bytes: &[u8]) -> Result<PgmImage, GridError> {
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String, GridError> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GridError::MapFormat("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(bytes)?;
    if magic != "P5" {
        return Err(GridError::MapFormat(format!(
            "expected binary PGM magic P5, got {magic:?}"
        )));
    }
    let width: usize = next_token(bytes)?
        .parse()
        .map_err(|_| GridError::MapFormat("bad PGM width".into()))?;
    let height: usize = next_token(bytes)?
        .parse()
        .map_err(|_| GridError::MapFormat("bad PGM height".into()))?;
    let maxval: u16 = next_token(bytes)?
        .parse()
        .map_err(|_| GridError::MapFormat("bad PGM maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(GridError::MapFormat(format!(
            "unsupported PGM maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| GridError::MapFormat("PGM dimensions overflow".into()))?;
    let data = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| {
            GridError::MapFormat(format!(
                "PGM raster truncated: expected {expected} bytes, got {}",
                bytes.len().saturating_sub(pos)
            ))
        })?
        .to_vec();
    Ok(PgmImage {
        width,
        height,
        maxval,
        data,
    })
}

/// Load an occupancy grid from a binary PGM image and its YAML metadata.
///
/// A pixel is occupied when its occupancy probability is `>= occupied_thresh`,
/// free when `<= free_thresh`, unknown otherwise.
pub fn load_map(pgm_bytes: &[u8], yaml: &str) -> Result<OccupancyGrid, GridError> {
    let meta = MapMeta::parse(yaml)?;
    let img = parse_pgm(pgm_bytes)?;
    if meta.resolution <= 0.0 {
        return Err(GridError::MapFormat(format!(
            "resolution must be positive, got {}",
            meta.resolution
        )));
    }
    let origin = Pose2D::new(meta.origin[0], meta.origin[1], meta.origin[2]);
    let mut grid = OccupancyGrid::new(img.width, img.height, meta.resolution, origin, Cell::Unknown);
    let maxval = img.maxval as f64;
    for row in 0..img.height {
        let iy = img.height - 1 - row; // PGM row 0 is the top of the map
        for ix in 0..img.width {
            let v = img.data[row * img.width + ix] as f64;
            let p = if meta.negate { v / maxval } else { (maxval - v) / maxval };
            let cell = if p >= meta.occupied_thresh {
                Cell::Occupied
            } else if p <= meta.free_thresh {
                Cell::Free
            } else {
                Cell::Unknown
            };
            grid.set(ix, iy, cell);
        }
    }
    Ok(grid)
}

/// Serialize a grid to PGM bytes plus YAML metadata. The inverse of
/// [`load_map`] on tri-state content, bit-exactly.
pub fn save_map(grid: &OccupancyGrid) -> (Vec<u8>, String) {
    let mut pgm = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for row in 0..grid.height() {
        let iy = grid.height() - 1 - row;
        for ix in 0..grid.width() {
            pgm.push(match grid.get(ix, iy) {
                Cell::Free => PGM_FREE,
                Cell::Unknown => PGM_UNKNOWN,
                Cell::Occupied => PGM_OCCUPIED,
            });
        }
    }
    let meta = MapMeta {
        image: "map.pgm".to_string(),
        resolution: grid.resolution(),
        origin: [grid.origin().x, grid.origin().y, grid.origin().theta],
        negate: false,
        occupied_thresh: 0.65,
        free_thresh: 0.196,
    };
    (pgm, meta.to_yaml())
}

// ---------------------------------------------------------------------------
// Ray traversal
// ---------------------------------------------------------------------------

/// Amanatides & Woo grid traversal: iterates the cells a ray passes through,
/// yielding `(ix, iy, entry_distance)` starting with the origin cell at 0.
pub struct RayTraversal {
    ix: i64,
    iy: i64,
    width: i64,
    height: i64,
    step_x: i64,
    step_y: i64,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    next_t: f64,
    max_dist: f64,
    started: bool,
    done: bool,
}

impl RayTraversal {
    /// Start a traversal from a world point. Returns `None` when the start
    /// point lies outside the grid.
    pub fn new(grid: &OccupancyGrid, x: f64, y: f64, angle: f64, max_dist: f64) -> Option<Self> {
        Self::with_geometry(
            grid.resolution(),
            grid.origin(),
            grid.width(),
            grid.height(),
            x,
            y,
            angle,
            max_dist,
        )
    }

    /// Traversal over bare grid geometry, for callers that are not walking
    /// an [`OccupancyGrid`].
    #[allow(clippy::too_many_arguments)]
    pub fn with_geometry(
        resolution: f64,
        origin: Pose2D,
        width: usize,
        height: usize,
        x: f64,
        y: f64,
        angle: f64,
        max_dist: f64,
    ) -> Option<Self> {
        let res = resolution;
        let fx = (x - origin.x) / res;
        let fy = (y - origin.y) / res;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (sx, sy) = (fx.floor() as usize, fy.floor() as usize);
        if sx >= width || sy >= height {
            return None;
        }
        let dx = angle.cos();
        let dy = angle.sin();

        let (step_x, t_max_x, t_delta_x) = axis_setup(fx, sx as i64, dx, res);
        let (step_y, t_max_y, t_delta_y) = axis_setup(fy, sy as i64, dy, res);

        Some(Self {
            ix: sx as i64,
            iy: sy as i64,
            width: width as i64,
            height: height as i64,
            step_x,
            step_y,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            next_t: 0.0,
            max_dist,
            started: false,
            done: false,
        })
    }
}

fn axis_setup(frac: f64, cell: i64, dir: f64, res: f64) -> (i64, f64, f64) {
    if dir > 0.0 {
        let step = 1i64;
        let t_max = ((cell + 1) as f64 - frac) * res / dir;
        (step, t_max, res / dir)
    } else if dir < 0.0 {
        let step = -1i64;
        let t_max = (frac - cell as f64) * res / -dir;
        (step, t_max, res / -dir)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

impl Iterator for RayTraversal {
    type Item = (usize, usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some((self.ix as usize, self.iy as usize, 0.0));
        }
        if self.t_max_x < self.t_max_y {
            self.next_t = self.t_max_x;
            self.t_max_x += self.t_delta_x;
            self.ix += self.step_x;
        } else {
            self.next_t = self.t_max_y;
            self.t_max_y += self.t_delta_y;
            self.iy += self.step_y;
        }
        if self.next_t > self.max_dist
            || self.ix < 0
            || self.iy < 0
            || self.ix >= self.width
            || self.iy >= self.height
        {
            self.done = true;
            return None;
        }
        Some((self.ix as usize, self.iy as usize, self.next_t))
    }
}

/// Cast a ray and return the distance to the boundary of the first occupied
/// cell. Returns `range_max + resolution` as the no-return sentinel when
/// nothing is hit within `range_max`. Unknown cells are transparent.
pub fn ray_cast(
    grid: &OccupancyGrid,
    origin: Pose2D,
    angle: f64,
    range_max: f64,
) -> Result<f64, GridError> {
    let sentinel = range_max + grid.resolution();
    let mut traversal = RayTraversal::new(grid, origin.x, origin.y, angle, range_max)
        .ok_or(GridError::OriginOutOfBounds)?;
    let (sx, sy, _) = traversal.next().expect("traversal yields the origin cell");
    if grid.get(sx, sy) == Cell::Occupied {
        return Err(GridError::OriginOccupied);
    }
    for (ix, iy, t) in traversal {
        if grid.get(ix, iy) == Cell::Occupied {
            return Ok(t);
        }
    }
    Ok(sentinel)
}

// ---------------------------------------------------------------------------
// Laser scans
// ---------------------------------------------------------------------------

/// One planar laser scan. Range values greater than `range_max` encode
/// no-return beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub pose: Pose2D,
    pub angle_min: f64,
    pub angle_max: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn n_beams(&self) -> usize {
        self.ranges.len()
    }

    /// Beam angle relative to the sensor heading.
    pub fn beam_angle(&self, i: usize) -> f64 {
        if self.ranges.len() < 2 {
            return self.angle_min;
        }
        self.angle_min + i as f64 * (self.angle_max - self.angle_min) / (self.ranges.len() - 1) as f64
    }

    pub fn is_return(&self, i: usize) -> bool {
        self.ranges[i] <= self.range_max
    }

    /// World position of a returned beam endpoint.
    pub fn endpoint(&self, i: usize) -> Point2 {
        let a = self.pose.theta + self.beam_angle(i);
        Point2::new(
            self.pose.x + self.ranges[i] * a.cos(),
            self.pose.y + self.ranges[i] * a.sin(),
        )
    }
}

/// Scan simulation parameters. Defaults model a 270 degree scanner with
/// 0.5 degree angular resolution and 30 m range.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub fov: f64,
    pub n_beams: usize,
    pub range_max: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            fov: 270.0_f64.to_radians(),
            n_beams: 541,
            range_max: 30.0,
        }
    }
}

/// Simulate a laser scan against the grid. Beam `i` is emitted at
/// `angle_min + i * fov / (n_beams - 1)` relative to the pose heading;
/// deterministic for a given pose and grid.
pub fn simulate_scan(
    grid: &OccupancyGrid,
    pose: Pose2D,
    cfg: &ScanConfig,
) -> Result<LaserScan, GridError> {
    assert!(cfg.n_beams >= 2, "a scan needs at least two beams");
    assert!(cfg.fov > 0.0 && cfg.fov <= 2.0 * PI);
    let angle_min = -cfg.fov / 2.0;
    let angle_max = cfg.fov / 2.0;
    let mut ranges = Vec::with_capacity(cfg.n_beams);
    for i in 0..cfg.n_beams {
        let rel = angle_min + i as f64 * cfg.fov / (cfg.n_beams - 1) as f64;
        let angle = normalize_angle(pose.theta + rel);
        ranges.push(ray_cast(grid, pose, angle, cfg.range_max)?);
    }
    Ok(LaserScan {
        pose,
        angle_min,
        angle_max,
        range_max: cfg.range_max,
        ranges,
    })
}

/// Add Gaussian range noise to returned beams; the no-return sentinel is
/// left untouched and noisy ranges are clamped to be nonnegative.
pub fn apply_range_noise<R: Rng>(scan: &mut LaserScan, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let range_max = scan.range_max;
    for r in scan.ranges.iter_mut() {
        if *r <= range_max {
            *r = (*r + normal.sample(rng)).max(0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Distance field
// ---------------------------------------------------------------------------

/// Exact Euclidean distance (meters) from each cell center to the nearest
/// occupied cell center. Shared by the likelihood-field measurement model
/// and costmap inflation.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2D,
    dist: Vec<f64>,
}

impl DistanceField {
    /// Compute via the two-pass exact squared Euclidean distance transform.
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let w = grid.width();
        let h = grid.height();
        let inf = f64::INFINITY;
        let mut sq = vec![inf; w * h];
        for iy in 0..h {
            for ix in 0..w {
                if grid.get(ix, iy) == Cell::Occupied {
                    sq[iy * w + ix] = 0.0;
                }
            }
        }

        // Columns, then rows.
        let mut f = vec![0.0; h.max(w)];
        let mut d = vec![0.0; h.max(w)];
        let mut v = vec![0usize; h.max(w)];
        let mut z = vec![0.0; h.max(w) + 1];
        for ix in 0..w {
            for iy in 0..h {
                f[iy] = sq[iy * w + ix];
            }
            dt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
            for iy in 0..h {
                sq[iy * w + ix] = d[iy];
            }
        }
        for iy in 0..h {
            f[..w].copy_from_slice(&sq[iy * w..(iy + 1) * w]);
            dt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
            for ix in 0..w {
                sq[iy * w + ix] = d[ix];
            }
        }

        let res = grid.resolution();
        let dist = sq.into_iter().map(|s| s.sqrt() * res).collect();
        Self {
            width: w,
            height: h,
            resolution: res,
            origin: grid.origin(),
            dist,
        }
    }

    pub fn at_cell(&self, ix: usize, iy: usize) -> f64 {
        self.dist[iy * self.width + ix]
    }

    /// Distance at the cell containing a world point; `None` outside the grid.
    pub fn at_world(&self, x: f64, y: f64) -> Option<f64> {
        let fx = (x - self.origin.x) / self.resolution;
        let fy = (y - self.origin.y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        if ix < self.width && iy < self.height {
            Some(self.at_cell(ix, iy))
        } else {
            None
        }
    }
}

/// 1D squared distance transform (lower envelope of parabolas), after
/// Felzenszwalb & Huttenlocher.
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let denom = 2.0 * (q as f64 - p as f64);
            let s = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / denom
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            let dq = q as f64 - p as f64;
            dq * dq + f[p]
        };
    }
}
