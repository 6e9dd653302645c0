//! Synthetic text lines: light glyphs on a dark 32px canvas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::font::{glyph, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::error::{Result, ScanError};
use crate::windowing::{RawImage, LINE_HEIGHT};

/// Nominal glyph height in pixels.
pub const GLYPH_PX: f64 = 24.0;
const MARGIN: usize = 4;
const SPACING: i64 = 3;
/// Subsamples per pixel axis when rasterizing glyph coverage.
const SUPERSAMPLE: usize = 4;

/// Upper bounds of the random perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Relative glyph scale change, e.g. 0.2 for +/-20%.
    pub scale: f64,
    /// Vertical shift in pixels.
    pub baseline: f64,
    /// Per-gap spacing change in whole pixels.
    pub spacing: i64,
    /// Largest noise standard deviation.
    pub noise: f64,
    /// 0 keeps black on white extremes; 1 allows background up to 0.3 and ink down to 0.7.
    pub contrast: f64,
}

impl Jitter {
    pub fn none() -> Self {
        Jitter {
            scale: 0.0,
            baseline: 0.0,
            spacing: 0,
            noise: 0.0,
            contrast: 0.0,
        }
    }
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            scale: 0.2,
            baseline: 2.0,
            spacing: 1,
            noise: 0.05,
            contrast: 1.0,
        }
    }
}

fn sym(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Fraction of the glyph-box pixel `(y, x)` covered by ink.
fn coverage(bits: &[[bool; GLYPH_WIDTH]; GLYPH_HEIGHT], y: usize, x: usize, h: usize, w: usize) -> f32 {
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        let fy = (y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / h as f64;
        let row = ((fy * GLYPH_HEIGHT as f64) as usize).min(GLYPH_HEIGHT - 1);
        for sx in 0..SUPERSAMPLE {
            let fx = (x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / w as f64;
            let col = ((fx * GLYPH_WIDTH as f64) as usize).min(GLYPH_WIDTH - 1);
            hits += usize::from(bits[row][col]);
        }
    }
    hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32
}

/// Render `text` left to right; deterministic per `(text, seed, jitter)`.
pub fn render_textline(text: &str, seed: u64, jitter: &Jitter) -> Result<RawImage> {
    let bitmaps = text
        .chars()
        .map(|c| glyph(c).ok_or(ScanError::UnknownChar(c)))
        .collect::<Result<Vec<_>>>()?;
    if bitmaps.is_empty() {
        return Err(ScanError::Empty("text"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + sym(&mut rng, jitter.scale);
    let gh = ((GLYPH_PX * scale).round() as usize).clamp(GLYPH_HEIGHT, LINE_HEIGHT);
    let gw = ((GLYPH_PX * scale * GLYPH_WIDTH as f64 / GLYPH_HEIGHT as f64).round() as usize).max(GLYPH_WIDTH);
    let gaps: Vec<usize> = (1..bitmaps.len())
        .map(|_| {
            let d = if jitter.spacing > 0 { rng.random_range(-jitter.spacing..=jitter.spacing) } else { 0 };
            (SPACING + d).max(1) as usize
        })
        .collect();
    let shift = sym(&mut rng, jitter.baseline).round() as i64;
    let top = ((LINE_HEIGHT - gh) as i64 / 2 + shift).clamp(0, (LINE_HEIGHT - gh) as i64) as usize;
    let c = 0.3 * jitter.contrast.clamp(0.0, 1.0);
    let (bg, fg) = if c > 0.0 {
        (rng.random_range(0.0..=c) as f32, 1.0 - rng.random_range(0.0..=c) as f32)
    } else {
        (0.0, 1.0)
    };
    let sigma = if jitter.noise > 0.0 { rng.random_range(0.0..=jitter.noise) } else { 0.0 };

    let width = 2 * MARGIN + bitmaps.len() * gw + gaps.iter().sum::<usize>();
    let mut ink = vec![0f32; LINE_HEIGHT * width];
    let mut left = MARGIN;
    for (i, bits) in bitmaps.iter().enumerate() {
        for y in 0..gh {
            for x in 0..gw {
                ink[(top + y) * width + left + x] = coverage(bits, y, x, gh, gw);
            }
        }
        left += gw + gaps.get(i).copied().unwrap_or(0);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| ScanError::Internal(e.to_string()))?;
    let pixels = ink
        .iter()
        .map(|&a| {
            let n = if sigma > 0.0 { normal.sample(&mut rng) as f32 } else { 0.0 };
            (bg + (fg - bg) * a + n).clamp(0.0, 1.0)
        })
        .collect();
    RawImage::new(LINE_HEIGHT, width, pixels)
}
