//! Challenging query subsets: blurry images (little high-frequency energy)
//! and dynamic scenes (large share of pixels on movable object classes).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CUTOFF: usize = 60;
pub const DEFAULT_BLUR_THRESHOLD: f64 = 20.0;
pub const DEFAULT_DYNAMIC_THRESHOLD: f64 = 0.20;

/// Row-major grayscale intensities, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} intensities for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`; gray inputs are used as is.
    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Self { width: w as usize, height: h as usize, data }
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(Self::from_dynamic(&image::open(path)?))
    }

    /// Quantized 8-bit copy for writing to disk.
    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    /// Half-width of the kept low-frequency square.
    pub cutoff: usize,
    pub threshold: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self { cutoff: DEFAULT_CUTOFF, threshold: DEFAULT_BLUR_THRESHOLD }
    }
}

impl BlurConfig {
    pub fn is_blurry(&self, mad: f64) -> bool {
        mad <= self.threshold
    }
}

fn fft_rows(buf: &mut [Complex<f64>], width: usize, fft: &dyn rustfft::Fft<f64>) {
    for row in buf.chunks_exact_mut(width) {
        fft.process(row);
    }
}

fn transpose(buf: &[Complex<f64>], width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); buf.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = buf[y * width + x];
        }
    }
    out
}

/// Signed frequency of DFT bin `i` out of `n`.
fn signed_frequency(i: usize, n: usize) -> usize {
    i.min(n - i)
}

/// Mean absolute difference between the image and its reconstruction from
/// frequencies `|fx|, |fy| <= cutoff`.
pub fn blur_score(image: &GrayImage, cutoff: usize) -> Result<f64> {
    let window = 2 * cutoff + 1;
    let (w, h) = (image.width, image.height);
    if w < window || h < window {
        return Err(Error::InvalidInput(format!("{w}x{h} image is smaller than the {window}x{window} window")));
    }
    let mut planner = FftPlanner::<f64>::new();
    let (fwd_w, fwd_h) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let (inv_w, inv_h) = (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h));

    let mut buf: Vec<Complex<f64>> = image.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_rows(&mut buf, w, fwd_w.as_ref());
    let mut cols = transpose(&buf, w, h);
    fft_rows(&mut cols, h, fwd_h.as_ref());
    // cols is indexed [fx][fy]
    for fx in 0..w {
        for fy in 0..h {
            if signed_frequency(fx, w) > cutoff || signed_frequency(fy, h) > cutoff {
                cols[fx * h + fy] = Complex::default();
            }
        }
    }
    fft_rows(&mut cols, h, inv_h.as_ref());
    let mut rows = transpose(&cols, h, w);
    fft_rows(&mut rows, w, inv_w.as_ref());

    let norm = (w * h) as f64;
    let total: f64 = image.data.iter().zip(&rows).map(|(&o, r)| (o - r.re / norm).abs()).sum();
    Ok(total / norm)
}

/// Separable Gaussian blur with clamped borders and a 3-sigma kernel.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let (w, h) = (image.width as isize, image.height as isize);
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(src.width, src.height, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let o = i as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w - 1), y as isize)
                    } else {
                        (x as isize, (y as isize + o).clamp(0, h - 1))
                    };
                    k * src.get(sx as usize, sy as usize)
                })
                .sum()
        })
    };
    pass(&pass(image, true), false)
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!("{} labels for a {width}x{height} mask", labels.len())));
        }
        Ok(Self { width, height, labels })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w as usize, height: h as usize, labels: img.into_raw() })
    }
}

/// Fraction of pixels whose label names one of `dynamic_classes`. Labels
/// missing from `label_names` count as static and are reported once.
pub fn dynamic_fraction(
    mask: &LabelMask,
    label_names: &BTreeMap<u8, String>,
    dynamic_classes: &BTreeSet<String>,
) -> f64 {
    if mask.labels.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; 256];
    for &l in &mask.labels {
        counts[l as usize] += 1;
    }
    let mut dynamic = 0usize;
    for (label, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        match label_names.get(&(label as u8)) {
            Some(name) if dynamic_classes.contains(name) => dynamic += count,
            Some(_) => {}
            None => log::warn!("mask label {label} has no name; treated as static"),
        }
    }
    dynamic as f64 / mask.labels.len() as f64
}

pub fn is_dynamic(fraction: f64, threshold: f64) -> bool {
    fraction >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(size: usize, square: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| if (x / square + y / square) % 2 == 0 { 255.0 } else { 0.0 })
    }

    #[test]
    fn constant_image_is_blurry() {
        let img = GrayImage::from_fn(130, 125, |_, _| 87.0);
        assert!(blur_score(&img, 60).unwrap() < 1e-9);
    }

    #[test]
    fn pixel_checkerboard_is_sharp() {
        let mad = blur_score(&checker(128, 1), 60).unwrap();
        assert!((mad - 127.5).abs() < 1e-9, "{mad}");
        assert!(!BlurConfig::default().is_blurry(mad));
    }

    #[test]
    fn blur_decreases_mad() {
        let img = checker(1024, 16);
        let mut last = blur_score(&img, 60).unwrap();
        for sigma in [1.0, 2.0, 4.0, 8.0] {
            let mad = blur_score(&gaussian_blur(&img, sigma), 60).unwrap();
            assert!(mad < last, "sigma {sigma}: {mad} !< {last}");
            last = mad;
        }
    }

    #[test]
    fn small_image_is_rejected() {
        assert!(blur_score(&GrayImage::from_fn(120, 200, |_, _| 0.0), 60).is_err());
    }

    #[test]
    fn dynamic_examples() {
        let names = BTreeMap::from([(0, "background".to_string()), (1, "person".to_string()), (2, "car".into())]);
        let dynamic = BTreeSet::from(["person".to_string(), "car".to_string()]);
        let bg = LabelMask::new(10, 10, vec![0; 100]).unwrap();
        assert_eq!(dynamic_fraction(&bg, &names, &dynamic), 0.0);
        let mut labels = vec![0; 100];
        labels[..20].fill(1);
        let f = dynamic_fraction(&LabelMask::new(10, 10, labels).unwrap(), &names, &dynamic);
        assert_eq!(f, 0.2);
        assert!(is_dynamic(f, DEFAULT_DYNAMIC_THRESHOLD));
        let cars = LabelMask::new(5, 4, vec![2; 20]).unwrap();
        assert_eq!(dynamic_fraction(&cars, &names, &dynamic), 1.0);
    }
}
