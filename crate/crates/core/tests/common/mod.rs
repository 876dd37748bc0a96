//! Shared fixtures: a deterministic synthetic office world with a
//! navigation graph built by the crate's own graph tooling.

use navsim_core::geometry::{Point2, Pose2D};
use navsim_core::gridworld::{Cell, DistanceField, OccupancyGrid};
use navsim_core::navgraph::{build_graph, NavGraph, Viewpoint};

pub const OFFICE_WIDTH_M: f64 = 24.0;
pub const OFFICE_HEIGHT_M: f64 = 18.0;

/// A 24 x 18 m office: a central east-west corridor between two rows of
/// rooms, four doors per side, and a little furniture so scans are
/// distinctive. Resolution 0.05 m.
pub fn office_world() -> OccupancyGrid {
    let res = 0.05;
    let w = (OFFICE_WIDTH_M / res).round() as usize;
    let h = (OFFICE_HEIGHT_M / res).round() as usize;
    let mut g = OccupancyGrid::new(w, h, res, Pose2D::new(0.0, 0.0, 0.0), Cell::Free);

    // Outer walls.
    g.fill_rect(0.0, 0.0, OFFICE_WIDTH_M, 0.1, Cell::Occupied);
    g.fill_rect(0.0, OFFICE_HEIGHT_M - 0.1, OFFICE_WIDTH_M, OFFICE_HEIGHT_M, Cell::Occupied);
    g.fill_rect(0.0, 0.0, 0.1, OFFICE_HEIGHT_M, Cell::Occupied);
    g.fill_rect(OFFICE_WIDTH_M - 0.1, 0.0, OFFICE_WIDTH_M, OFFICE_HEIGHT_M, Cell::Occupied);

    // Corridor walls at y = 7.9..8.0 and y = 10.0..10.1, pierced by 1.4 m
    // doors centered on x = 3, 9, 15, 21.
    let doors = [3.0, 9.0, 15.0, 21.0];
    for (y0, y1) in [(7.9, 8.0), (10.0, 10.1)] {
        let mut x = 0.1;
        for &d in &doors {
            g.fill_rect(x, y0, d - 0.7, y1, Cell::Occupied);
            x = d + 0.7;
        }
        g.fill_rect(x, y0, OFFICE_WIDTH_M - 0.1, y1, Cell::Occupied);
    }

    // Room dividers, above and below the corridor.
    for x in [6.0, 12.0, 18.0] {
        g.fill_rect(x - 0.05, 0.1, x + 0.05, 7.9, Cell::Occupied);
        g.fill_rect(x - 0.05, 10.1, x + 0.05, OFFICE_HEIGHT_M - 0.1, Cell::Occupied);
    }

    // Furniture: one block per room, placed off the viewpoint lattice.
    for (bx, by) in [
        (2.2, 2.2),
        (8.2, 5.0),
        (14.2, 2.2),
        (20.2, 5.0),
        (2.2, 13.0),
        (8.2, 15.8),
        (14.2, 13.0),
        (20.2, 15.8),
    ] {
        g.fill_rect(bx, by, bx + 0.6, by + 0.6, Cell::Occupied);
    }
    g
}

/// Viewpoints on a 1.5 m lattice over free space, connected by a
/// line-of-sight visibility relation with clearance, cut at 5 m.
pub fn office_graph(world: &OccupancyGrid) -> NavGraph {
    let df = DistanceField::from_grid(world);
    let mut viewpoints = Vec::new();
    let mut positions = Vec::new();
    let mut k = 0;
    for iy in 1..12 {
        for ix in 1..16 {
            let x = ix as f64 * 1.5;
            let y = iy as f64 * 1.5;
            if x > OFFICE_WIDTH_M - 0.8 || y > OFFICE_HEIGHT_M - 0.8 {
                continue;
            }
            if df.at_world(x, y).unwrap_or(0.0) >= 0.7 {
                viewpoints.push(Viewpoint::new(format!("vp{k:03}"), [x, y, 0.0]));
                positions.push(Point2::new(x, y));
                k += 1;
            }
        }
    }

    let mut visibility = Vec::new();
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i].distance(positions[j]) > 5.0 {
                continue;
            }
            if segment_clear(&df, positions[i], positions[j], 0.45) {
                visibility.push((viewpoints[i].id.clone(), viewpoints[j].id.clone()));
            }
        }
    }
    build_graph(viewpoints, &visibility, 5.0).expect("office graph builds")
}

/// Every 0.1 m along the segment keeps at least `clearance` to the nearest
/// occupied cell.
pub fn segment_clear(df: &DistanceField, a: Point2, b: Point2, clearance: f64) -> bool {
    let dist = a.distance(b);
    let steps = (dist / 0.1).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let f = s as f64 / steps as f64;
        let x = a.x + f * (b.x - a.x);
        let y = a.y + f * (b.y - a.y);
        if df.at_world(x, y).unwrap_or(0.0) < clearance {
            return false;
        }
    }
    true
}

/// Independent scalar color-jitter reference: one fused pass per pixel per
/// stage, mirroring the declared stage semantics directly.
#[allow(dead_code)] // each test target compiles its own copy of this module
pub fn jitter_oracle(
    img: &navsim_core::augment::RgbImage,
    p: &navsim_core::augment::JitterDraw,
) -> navsim_core::augment::RgbImage {
    let round = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    let lum = |px: [f64; 3]| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    let n = img.width * img.height;
    let mut px: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                img.data()[3 * i] as f64,
                img.data()[3 * i + 1] as f64,
                img.data()[3 * i + 2] as f64,
            ]
        })
        .collect();
    if p.brightness != 1.0 {
        for v in px.iter_mut() {
            for c in v.iter_mut() {
                *c = round(*c * p.brightness) as f64;
            }
        }
    }
    if p.contrast != 1.0 {
        let mean = px.iter().map(|v| lum(*v)).sum::<f64>() / n as f64;
        for v in px.iter_mut() {
            for c in v.iter_mut() {
                *c = round(p.contrast * *c + (1.0 - p.contrast) * mean) as f64;
            }
        }
    }
    if p.saturation != 1.0 {
        for v in px.iter_mut() {
            let l = lum(*v);
            for c in v.iter_mut() {
                *c = round(p.saturation * *c + (1.0 - p.saturation) * l) as f64;
            }
        }
    }
    let mut data = Vec::with_capacity(n * 3);
    for v in px {
        let bytes = [v[0] as u8, v[1] as u8, v[2] as u8];
        let rotated = if p.hue_shift == 0.0 {
            bytes
        } else {
            hue_rotate(bytes, p.hue_shift)
        };
        data.extend_from_slice(&rotated);
    }
    navsim_core::augment::RgbImage::new(img.width, img.height, data)
}

#[allow(dead_code)]
fn hue_rotate(rgb: [u8; 3], shift: f64) -> [u8; 3] {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let h6 = (h + shift).rem_euclid(1.0) * 6.0;
    let c = max * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = max - c;
    let clamp = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    [clamp(r + m), clamp(g + m), clamp(b + m)]
}
