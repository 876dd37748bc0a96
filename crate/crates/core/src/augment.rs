//! Color-jitter domain randomization for RGB image buffers.
//!
//! One jitter call draws brightness, contrast and saturation multipliers
//! from `[1 - f, 1 + f]` and a hue shift from `[-f_h, +f_h]` (as a fraction
//! of the full hue circle), then applies the stages in the fixed order
//! brightness, contrast, saturation, hue. Every stage rounds back to bytes
//! and clamps to [0, 255], so results are reproducible bit-for-bit from
//! `(image, factors, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interleaved RGB8 buffer, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Jitter strengths. Brightness, contrast and saturation vary by a factor;
/// hue shifts by a fraction of the full circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterFactors {
    fn default() -> Self {
        Self {
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.01,
        }
    }
}

impl JitterFactors {
    pub const fn zero() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
        }
    }
}

/// One concrete parameter draw: multipliers plus a hue rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

impl JitterDraw {
    pub const IDENTITY: Self = Self {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };
}

/// Draw jitter parameters for a seed. Draw order is fixed (brightness,
/// contrast, saturation, hue); zero factors yield the exact identity
/// parameter without consuming randomness.
pub fn draw_params(factors: &JitterFactors, seed: u64) -> JitterDraw {
    assert!(
        factors.brightness >= 0.0 && factors.contrast >= 0.0 && factors.saturation >= 0.0,
        "multiplier factors must be nonnegative"
    );
    assert!(
        (0.0..1.0).contains(&factors.hue),
        "hue factor must lie in [0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mult = |f: f64| {
        if f > 0.0 {
            rng.random_range(1.0 - f..1.0 + f)
        } else {
            1.0
        }
    };
    let brightness = mult(factors.brightness);
    let contrast = mult(factors.contrast);
    let saturation = mult(factors.saturation);
    let hue_shift = if factors.hue > 0.0 {
        rng.random_range(-factors.hue..factors.hue)
    } else {
        0.0
    };
    JitterDraw {
        brightness,
        contrast,
        saturation,
        hue_shift,
    }
}

fn clamp_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
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
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        clamp_byte((r + m) * 255.0),
        clamp_byte((g + m) * 255.0),
        clamp_byte((b + m) * 255.0),
    ]
}

/// Apply a concrete parameter draw, stage by stage.
pub fn apply_jitter(img: &RgbImage, params: &JitterDraw) -> RgbImage {
    let mut out = img.clone();

    // Brightness: scale channels.
    if params.brightness != 1.0 {
        for v in out.data.iter_mut() {
            *v = clamp_byte(*v as f64 * params.brightness);
        }
    }

    // Contrast: blend with the image's mean gray level.
    if params.contrast != 1.0 {
        let mut total = 0.0;
        for y in 0..out.height {
            for x in 0..out.width {
                total += luma(out.pixel(x, y));
            }
        }
        let mean = total / (out.width * out.height) as f64;
        let c = params.contrast;
        for v in out.data.iter_mut() {
            *v = clamp_byte(c * *v as f64 + (1.0 - c) * mean);
        }
    }

    // Saturation: blend each pixel with its own luma.
    if params.saturation != 1.0 {
        let s = params.saturation;
        for y in 0..out.height {
            for x in 0..out.width {
                let px = out.pixel(x, y);
                let l = luma(px);
                out.set_pixel(
                    x,
                    y,
                    [
                        clamp_byte(s * px[0] as f64 + (1.0 - s) * l),
                        clamp_byte(s * px[1] as f64 + (1.0 - s) * l),
                        clamp_byte(s * px[2] as f64 + (1.0 - s) * l),
                    ],
                );
            }
        }
    }

    // Hue: rotate in HSV space.
    if params.hue_shift != 0.0 {
        for y in 0..out.height {
            for x in 0..out.width {
                let (h, s, v) = rgb_to_hsv(out.pixel(x, y));
                out.set_pixel(x, y, hsv_to_rgb(h + params.hue_shift, s, v));
            }
        }
    }

    out
}

/// Randomized color jitter: draw parameters from the seed and apply them.
pub fn color_jitter(img: &RgbImage, factors: &JitterFactors, seed: u64) -> RgbImage {
    apply_jitter(img, &draw_params(factors, seed))
}
