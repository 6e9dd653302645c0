//! Text-line normalization and the multi-scale sliding-window glimpse
//! sequence.
//!
//! Every line is brought to 32x256. A 32-wide base window slides over it at
//! a fixed stride; each scale reads a window of its own width centered on
//! the base window's center, and every read is resized to 32x32 and stacked
//! as one channel (ascending scale order).

use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};

pub const LINE_HEIGHT: usize = 32;
pub const LINE_WIDTH: usize = 256;
/// Side of a resized glimpse and width of the base window.
pub const GLIMPSE: usize = 32;
/// Value used for right-padding and for reads outside the line.
pub const PAD_VALUE: f32 = 0.0;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ScanError::InvalidArgument(format!("degenerate image {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(ScanError::shape(
                "image",
                format!("{height}x{width} needs {} pixels, got {}", height * width, pixels.len()),
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ScanError::InvalidArgument(format!("pixel {p} outside [0, 1]")));
        }
        Ok(RawImage { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// A 32x256 line; columns at and beyond `content_width` hold [`PAD_VALUE`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage {
    pixels: Vec<f32>,
    content_width: usize,
}

impl NormalizedImage {
    pub fn from_pixels(pixels: Vec<f32>, content_width: usize) -> Result<Self> {
        if pixels.len() != LINE_HEIGHT * LINE_WIDTH || content_width == 0 || content_width > LINE_WIDTH {
            return Err(ScanError::shape(
                "normalized image",
                format!("{} pixels, content width {content_width}", pixels.len()),
            ));
        }
        Ok(NormalizedImage { pixels, content_width })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn content_width(&self) -> usize {
        self.content_width
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * LINE_WIDTH + x]
    }

    fn read(&self, y: usize, x: isize) -> f32 {
        if x < 0 || x >= LINE_WIDTH as isize {
            PAD_VALUE
        } else {
            self.pixels[y * LINE_WIDTH + x as usize]
        }
    }

    pub fn into_raw(self) -> RawImage {
        RawImage {
            height: LINE_HEIGHT,
            width: LINE_WIDTH,
            pixels: self.pixels,
        }
    }
}

/// Sliding-window parameters.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    /// Window widths, one glimpse channel each.
    pub scales: Vec<usize>,
    pub stride: usize,
}

impl WindowConfig {
    pub fn multi_scale() -> Self {
        WindowConfig {
            scales: vec![32, 40, 48],
            stride: 4,
        }
    }

    pub fn single_scale() -> Self {
        WindowConfig {
            scales: vec![40],
            stride: 4,
        }
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(ScanError::InvalidArgument("stride must be positive".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(ScanError::InvalidArgument(format!("bad scales {:?}", self.scales)));
        }
        Ok(())
    }

    pub fn window_count(&self) -> usize {
        window_count(self.stride)
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self::multi_scale()
    }
}

/// Number of base windows for a stride: `(256 - 32) / stride + 1`.
pub fn window_count(stride: usize) -> usize {
    (LINE_WIDTH - GLIMPSE) / stride + 1
}

/// Ordered glimpses `[m, 32, 32, n]` with their centers on the normalized line.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSequence {
    glimpses: Vec<f32>,
    centers: Vec<usize>,
    scales: Vec<usize>,
}

impl WindowSequence {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    /// Interleaved `32 x 32 x n` values of window `i`.
    pub fn glimpse(&self, i: usize) -> &[f32] {
        let size = GLIMPSE * GLIMPSE * self.channels();
        &self.glimpses[i * size..(i + 1) * size]
    }

    /// One channel of window `i` as a 32x32 row-major patch.
    pub fn channel(&self, i: usize, ch: usize) -> Vec<f32> {
        let n = self.channels();
        self.glimpse(i).iter().skip(ch).step_by(n).copied().collect()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.glimpses.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::new(&[self.len(), GLIMPSE, GLIMPSE, self.channels()], data).expect("window layout")
    }
}

/// Resample one row of `src` onto `dst_len` samples: box-filter averaging
/// when shrinking, half-pixel bilinear otherwise.
fn resample_row(src: &[f32], dst_len: usize, out: &mut Vec<f32>) {
    let n = src.len();
    if n == dst_len {
        out.extend_from_slice(src);
        return;
    }
    let scale = n as f64 / dst_len as f64;
    if n > dst_len {
        for j in 0..dst_len {
            let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
            let mut acc = 0.0;
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                acc += overlap * src[i] as f64;
                i += 1;
            }
            out.push((acc / scale) as f32);
        }
    } else {
        for j in 0..dst_len {
            let s = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let t = s - i0 as f64;
            out.push((src[i0] as f64 * (1.0 - t) + src[i1] as f64 * t) as f32);
        }
    }
}

/// Resize a row-major `h x w` image to `out_h x out_w` (separable).
pub(crate) fn resize(pixels: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut horiz = Vec::with_capacity(h * out_w);
    for row in pixels.chunks(w) {
        resample_row(row, out_w, &mut horiz);
    }
    let mut out = vec![0.0; out_h * out_w];
    let mut col = Vec::with_capacity(h);
    let mut res = Vec::with_capacity(out_h);
    for x in 0..out_w {
        col.clear();
        col.extend((0..h).map(|y| horiz[y * out_w + x]));
        res.clear();
        resample_row(&col, out_h, &mut res);
        for (y, &v) in res.iter().enumerate() {
            out[y * out_w + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Scale to height 32 keeping the aspect ratio, then right-pad to 256, or
/// squash to 256 when the scaled line is wider.
pub fn normalize_image(img: &RawImage) -> Result<NormalizedImage> {
    if img.height == 0 || img.width == 0 {
        return Err(ScanError::InvalidArgument("degenerate image".into()));
    }
    let scaled = ((img.width as f64 * LINE_HEIGHT as f64 / img.height as f64).round() as usize).max(1);
    let content_width = scaled.min(LINE_WIDTH);
    let resized = resize(&img.pixels, img.height, img.width, LINE_HEIGHT, content_width);
    let mut pixels = vec![PAD_VALUE; LINE_HEIGHT * LINE_WIDTH];
    for y in 0..LINE_HEIGHT {
        pixels[y * LINE_WIDTH..y * LINE_WIDTH + content_width]
            .copy_from_slice(&resized[y * content_width..(y + 1) * content_width]);
    }
    NormalizedImage::from_pixels(pixels, content_width)
}

/// Horizontal bilinear resize of a `32 x w` patch to 32x32 with aligned
/// corners: output column `j` samples source column `j * (w - 1) / 31`.
pub fn resize_patch(patch: &[f32], width: usize) -> Result<Vec<f32>> {
    if width == 0 || patch.len() != GLIMPSE * width {
        return Err(ScanError::shape("resize_patch", format!("{} values for width {width}", patch.len())));
    }
    let mut out = Vec::with_capacity(GLIMPSE * GLIMPSE);
    for row in patch.chunks(width) {
        for j in 0..GLIMPSE {
            let s = j as f64 * (width - 1) as f64 / (GLIMPSE - 1) as f64;
            let i0 = (s.floor() as usize).min(width - 1);
            let i1 = (i0 + 1).min(width - 1);
            let t = s - i0 as f64;
            out.push((row[i0] as f64 * (1.0 - t) + row[i1] as f64 * t) as f32);
        }
    }
    Ok(out)
}

pub fn extract_windows(img: &NormalizedImage, cfg: &WindowConfig) -> Result<WindowSequence> {
    cfg.validate()?;
    let mut scales = cfg.scales.clone();
    scales.sort_unstable();
    let n = scales.len();
    let m = cfg.window_count();
    let mut glimpses = vec![0.0f32; m * GLIMPSE * GLIMPSE * n];
    let mut centers = Vec::with_capacity(m);
    let mut patch = Vec::new();
    for i in 0..m {
        let center = i * cfg.stride + GLIMPSE / 2;
        centers.push(center);
        let dst = &mut glimpses[i * GLIMPSE * GLIMPSE * n..(i + 1) * GLIMPSE * GLIMPSE * n];
        for (ch, &w) in scales.iter().enumerate() {
            let x0 = center as isize - (w / 2) as isize;
            patch.clear();
            for y in 0..LINE_HEIGHT {
                patch.extend((0..w as isize).map(|dx| img.read(y, x0 + dx)));
            }
            let resized = resize_patch(&patch, w)?;
            for (k, &v) in resized.iter().enumerate() {
                dst[k * n + ch] = v;
            }
        }
    }
    Ok(WindowSequence {
        glimpses,
        centers,
        scales,
    })
}

/// Normalize then slide.
pub fn windows_for(img: &RawImage, cfg: &WindowConfig) -> Result<WindowSequence> {
    extract_windows(&normalize_image(img)?, cfg)
}
