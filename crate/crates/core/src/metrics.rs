//! Image and field quality metrics, boxplot statistics, and the
//! motion-to-photon latency budget.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("image smaller than the 11x11 SSIM window")]
    TooSmall,
    #[error("field has zero norm")]
    ZeroField,
    #[error("field lengths differ or are empty")]
    LengthMismatch,
    #[error("no finite values to summarize")]
    Empty,
    #[error("invalid latency range for `{0}`")]
    BadRange(String),
    #[error("png: {0}")]
    Png(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert!(height > 0 && width > 0, "image dims must be positive");
        assert_eq!(data.len(), height * width * 3, "data length must be h*w*3");
        ImageU8 { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> ImageU8 {
        ImageU8 { height: self.height, width: self.width, data: self.data.iter().map(|&b| f(b)).collect() }
    }

    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| MetricsError::Png(e.to_string()))?;
        writer.write_image_data(&self.data).map_err(|e| MetricsError::Png(e.to_string()))?;
        writer.finish().map_err(|e| MetricsError::Png(e.to_string()))
    }

    /// Reads an 8-bit RGB or RGBA PNG (alpha is dropped).
    pub fn read_png(path: impl AsRef<Path>) -> Result<ImageU8, MetricsError> {
        let dec = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = dec.read_info().map_err(|e| MetricsError::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| MetricsError::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| MetricsError::Png(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(MetricsError::Png("only 8-bit images are supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let data = match info.color_type {
            png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
            png::ColorType::Rgba => buf[..w * h * 4].chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf[..w * h].iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(MetricsError::Png(format!("unsupported color type {other:?}"))),
        };
        Ok(ImageU8::new(h, w, data))
    }
}

fn check_dims(a: &ImageU8, b: &ImageU8) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 255. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Normalized 1D Gaussian taps for the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WIN] {
    let mut taps = [0.0; SSIM_WIN];
    let half = (SSIM_WIN / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" filtering of one channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WIN]) -> Vec<f64> {
    let ow = w - SSIM_WIN + 1;
    let oh = h - SSIM_WIN + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the three channels: 11x11 Gaussian window (sigma 1.5),
/// constants `(0.01*255)^2` and `(0.03*255)^2`, window positions fully
/// inside the image only.
pub fn ssim(a: &ImageU8, b: &ImageU8) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(MetricsError::TooSmall);
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let mxx = filter_valid(&xx, h, w, &taps);
        let myy = filter_valid(&yy, h, w, &taps);
        let mxy = filter_valid(&xy, h, w, &taps);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

/// `|<f, g>| / (|f| |g|)`: one for fields equal up to a global complex
/// scale, zero for orthogonal fields.
pub fn field_fidelity(f: &[Complex64], g: &[Complex64]) -> Result<f64, MetricsError> {
    if f.len() != g.len() || f.is_empty() {
        return Err(MetricsError::LengthMismatch);
    }
    let nf = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let ng = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nf == 0.0 || ng == 0.0 {
        return Err(MetricsError::ZeroField);
    }
    let inner: Complex64 = f.iter().zip(g).map(|(a, b)| a.conj() * b).sum();
    Ok((inner.norm() / (nf * ng)).min(1.0))
}

/// Latency range of one pipeline stage, milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRange {
    pub name: String,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBudget {
    pub components: Vec<LatencyRange>,
}

/// Motion-to-photon threshold, milliseconds.
pub const MOTION_TO_PHOTON_LIMIT_MS: f64 = 20.0;

impl LatencyBudget {
    fn range(name: &str, min_ms: f64, max_ms: f64) -> LatencyRange {
        LatencyRange { name: name.into(), min_ms, max_ms }
    }

    /// Sensor sampling, scene rendering, display scanning and photon emission.
    pub fn xr_default() -> Self {
        LatencyBudget {
            components: vec![
                Self::range("sensor", 1.0, 5.0),
                Self::range("rendering", 4.0, 16.0),
                Self::range("display_scan", 2.0, 16.0),
                Self::range("photon_emission", 1.0, 2.0),
            ],
        }
    }

    /// The default budget plus a 1-20 ms network hop.
    pub fn xr_with_network() -> Self {
        let mut b = Self::xr_default();
        b.components.push(Self::range("network", 1.0, 20.0));
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyVerdict {
    pub min_total_ms: f64,
    pub max_total_ms: f64,
    /// Best case fits under the motion-to-photon limit.
    pub feasible_best: bool,
    /// Worst case fits under the limit.
    pub guaranteed: bool,
}

pub fn latency_budget(budget: &LatencyBudget) -> Result<LatencyVerdict, MetricsError> {
    for c in &budget.components {
        if !(c.min_ms >= 0.0 && c.min_ms <= c.max_ms) {
            return Err(MetricsError::BadRange(c.name.clone()));
        }
    }
    let min_total_ms: f64 = budget.components.iter().map(|c| c.min_ms).sum();
    let max_total_ms: f64 = budget.components.iter().map(|c| c.max_ms).sum();
    Ok(LatencyVerdict {
        min_total_ms,
        max_total_ms,
        feasible_best: min_total_ms <= MOTION_TO_PHOTON_LIMIT_MS,
        guaranteed: max_total_ms <= MOTION_TO_PHOTON_LIMIT_MS,
    })
}

/// Five-number summary. `excluded_infinite` counts `+inf` inputs (perfect
/// PSNR) that were left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
    pub excluded_infinite: usize,
}

/// Quantile with linear interpolation between order statistics at
/// position `(n - 1) * p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(values: &[f64]) -> Result<BoxStats, MetricsError> {
    let excluded_infinite = values.iter().filter(|v| **v == f64::INFINITY).count();
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(MetricsError::Empty);
    }
    v.sort_by(f64::total_cmp);
    Ok(BoxStats {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
        count: v.len(),
        excluded_infinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_edge_values() {
        let a = ImageU8::filled(4, 5, [10, 20, 30]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|x| x + 1);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
        let black = ImageU8::filled(3, 3, [0, 0, 0]);
        let white = ImageU8::filled(3, 3, [255, 255, 255]);
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
        assert!(matches!(psnr(&a, &black), Err(MetricsError::DimMismatch(..))));
    }

    #[test]
    fn ssim_identity_and_size_checks() {
        let mut img = ImageU8::filled(16, 16, [0, 0, 0]);
        for y in 0..16 {
            for x in 0..16 {
                img.set(y, x, [(x * 16) as u8, (y * 16) as u8, ((x ^ y) * 16) as u8]);
            }
        }
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        let small = ImageU8::filled(10, 16, [1, 2, 3]);
        assert!(matches!(ssim(&small, &small), Err(MetricsError::TooSmall)));
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_negative() {
        let mut img = ImageU8::filled(16, 16, [0, 0, 0]);
        for y in 0..16 {
            for x in 0..16 {
                let v = if (x + y) % 2 == 0 { 230 } else { 25 };
                img.set(y, x, [v, v, v]);
            }
        }
        let inv = img.map(|x| 255 - x);
        assert!(ssim(&img, &inv).unwrap() < 0.0);
    }

    #[test]
    fn fidelity_cases() {
        let f = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3)];
        assert!((field_fidelity(&f, &f).unwrap() - 1.0).abs() < 1e-12);
        let g: Vec<_> = f.iter().map(|z| z * Complex64::from_polar(3.5, 1.1)).collect();
        assert!((field_fidelity(&f, &g).unwrap() - 1.0).abs() < 1e-12);
        let e1 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let e2 = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        assert_eq!(field_fidelity(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(field_fidelity(&e1, &[Complex64::default(); 2]), Err(MetricsError::ZeroField)));
    }

    #[test]
    fn latency_sums() {
        let v = latency_budget(&LatencyBudget::xr_default()).unwrap();
        assert_eq!((v.min_total_ms, v.max_total_ms), (8.0, 39.0));
        assert!(v.feasible_best && !v.guaranteed);
        let v = latency_budget(&LatencyBudget::xr_with_network()).unwrap();
        assert_eq!((v.min_total_ms, v.max_total_ms), (9.0, 59.0));
        let zero = LatencyBudget { components: vec![LatencyBudget::range("x", 0.0, 0.0)] };
        let v = latency_budget(&zero).unwrap();
        assert_eq!((v.min_total_ms, v.max_total_ms), (0.0, 0.0));
        assert!(v.feasible_best && v.guaranteed);
    }

    #[test]
    fn summary_cases() {
        let s = summarize(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        let s = summarize(&[7.5]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (7.5, 7.5, 7.5, 7.5, 7.5));
        let s = summarize(&[1.0, f64::INFINITY, 3.0]).unwrap();
        assert_eq!(s.excluded_infinite, 1);
        assert_eq!(s.median, 2.0);
        assert!(matches!(summarize(&[f64::INFINITY]), Err(MetricsError::Empty)));
    }
}
