//! Deterministic, locality-preserving images from fingerprint vectors.
//!
//! A fixed seeded projection maps the 512-vector to 48 coefficients. Each
//! RGB channel is a superposition of the 16 separable cosine modes
//! `cos(πux)·cos(πwy)`, `u, w ∈ 0..4`, weighted by its 16 coefficients and
//! squashed by `0.5 + 0.5·tanh(GAIN·s)`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpm::encoder::FINGERPRINT_DIM;
use crate::numerics::Rng;

pub const RENDERER_VERSION: &str = "cosine-modes-1";
pub const DEFAULT_SIZE: usize = 256;
pub const MODES_PER_AXIS: usize = 4;
pub const MODES: usize = MODES_PER_AXIS * MODES_PER_AXIS;
pub const COEFFICIENTS: usize = 3 * MODES;
/// Brings the pre-squash value of a standard-Gaussian input to unit scale.
pub const GAIN: f64 = 0.4;
const PROJECTION_SEED: u64 = 0x5eed_1a7e;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub encoder_hash: String,
    pub renderer_version: String,
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    width: usize,
    height: usize,
    encoder_hash: &'a str,
    renderer_version: &'a str,
}

impl FingerprintImage {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_image_data(&self.pixels).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.finish().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(out)
    }

    /// Decodes an 8-bit RGB PNG; provenance is left empty.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::InvalidArgument("expected 8-bit RGB".into()));
        }
        buf.truncate(info.buffer_size());
        Ok(FingerprintImage {
            width: info.width as usize,
            height: info.height as usize,
            pixels: buf,
            provenance: Provenance {
                encoder_hash: String::new(),
                renderer_version: String::new(),
            },
        })
    }

    /// Writes the PNG and a `.json` sidecar with size and provenance;
    /// returns the sidecar path.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        fs::write(path, self.to_png()?)?;
        let sidecar = path.with_extension("json");
        let meta = Sidecar {
            width: self.width,
            height: self.height,
            encoder_hash: &self.provenance.encoder_hash,
            renderer_version: &self.provenance.renderer_version,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(&sidecar)?), &meta)?;
        Ok(sidecar)
    }
}

/// Mean absolute per-channel difference scaled to `[0, 1]`.
pub fn image_distance(a: &FingerprintImage, b: &FingerprintImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) || a.pixels.len() != b.pixels.len() {
        return Err(Error::InvalidArgument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.pixels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: u64 = a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| x.abs_diff(y) as u64).sum();
    Ok(sum as f64 / (255.0 * a.pixels.len() as f64))
}

pub trait Renderer {
    fn render(&self, v: &[f32], size: usize) -> Result<FingerprintImage>;
}

/// The built-in cosine-mode renderer.
#[derive(Debug, Clone)]
pub struct CosineRenderer {
    /// `48 × 512`, row-major.
    projection: Vec<f64>,
    projection_norm: f64,
    encoder_hash: String,
}

impl Default for CosineRenderer {
    fn default() -> Self {
        Self::new("")
    }
}

impl CosineRenderer {
    pub fn new(encoder_hash: &str) -> Self {
        let mut rng = Rng::new(PROJECTION_SEED);
        let std = 1.0 / (FINGERPRINT_DIM as f64).sqrt();
        let projection: Vec<f64> = (0..COEFFICIENTS * FINGERPRINT_DIM).map(|_| std * rng.normal()).collect();
        let projection_norm = spectral_norm(&projection, FINGERPRINT_DIM);
        CosineRenderer {
            projection,
            projection_norm,
            encoder_hash: encoder_hash.to_owned(),
        }
    }

    pub fn coefficients(&self, v: &[f32]) -> Result<Vec<f64>> {
        if v.len() != FINGERPRINT_DIM {
            return Err(Error::dims("fingerprint vector", FINGERPRINT_DIM, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("fingerprint vector".into()));
        }
        Ok(self
            .projection
            .chunks_exact(FINGERPRINT_DIM)
            .map(|row| row.iter().zip(v).map(|(p, &x)| p * x as f64).sum())
            .collect())
    }

    /// Upper bound on `image_distance(render(v), render(v'))` per unit of
    /// `‖v − v'‖₂`, before 8-bit rounding: `0.5 · GAIN · 4 · ‖P‖₂`, where
    /// 4 bounds the norm of the 16 mode values at any pixel.
    pub fn lipschitz_constant(&self) -> f64 {
        0.5 * GAIN * (MODES as f64).sqrt() * self.projection_norm
    }
}

/// Largest singular value by power iteration on `AᵀA`.
fn spectral_norm(a: &[f64], cols: usize) -> f64 {
    let mut x = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let y: Vec<f64> = a.chunks_exact(cols).map(|r| r.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        let mut z = vec![0.0; cols];
        for (r, &yi) in a.chunks_exact(cols).zip(&y) {
            for (zj, &p) in z.iter_mut().zip(r) {
                *zj += p * yi;
            }
        }
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        sigma = n.sqrt();
        x = z.iter().map(|v| v / n).collect();
    }
    sigma
}

fn mode_table(size: usize) -> Vec<[f64; MODES_PER_AXIS]> {
    (0..size)
        .map(|i| {
            let t = (i as f64 + 0.5) / size as f64;
            std::array::from_fn(|u| (std::f64::consts::PI * u as f64 * t).cos())
        })
        .collect()
}

impl Renderer for CosineRenderer {
    fn render(&self, v: &[f32], size: usize) -> Result<FingerprintImage> {
        if size == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let a = self.coefficients(v)?;
        let table = mode_table(size);
        let mut pixels = Vec::with_capacity(size * size * 3);
        for cy in &table {
            for cx in &table {
                for ch in 0..3 {
                    let w = &a[ch * MODES..(ch + 1) * MODES];
                    let mut s = 0.0;
                    for (u, &fx) in cx.iter().enumerate() {
                        for (wv, &fy) in cy.iter().enumerate() {
                            s += w[u * MODES_PER_AXIS + wv] * fx * fy;
                        }
                    }
                    let p = 0.5 + 0.5 * (GAIN * s).tanh();
                    pixels.push((255.0 * p).round() as u8);
                }
            }
        }
        Ok(FingerprintImage {
            width: size,
            height: size,
            pixels,
            provenance: Provenance {
                encoder_hash: self.encoder_hash.clone(),
                renderer_version: RENDERER_VERSION.into(),
            },
        })
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub const MIN_LOCALITY_PAIRS: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct LocalityReport {
    pub pairs: usize,
    pub rank_correlation: f64,
    pub latent_distances: Vec<f64>,
    pub image_distances: Vec<f64>,
}

/// Renders pairs `v`, `√(1−t²)·v + t·w` with `v, w ~ N(0, I)` and `t`
/// uniform, and correlates latent distance with image distance.
pub fn locality_check(renderer: &dyn Renderer, pairs: usize, size: usize, rng: &mut Rng) -> Result<LocalityReport> {
    if pairs < MIN_LOCALITY_PAIRS {
        return Err(Error::TooFewSamples {
            got: pairs,
            min: MIN_LOCALITY_PAIRS,
        });
    }
    let mut latent = Vec::with_capacity(pairs);
    let mut image = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let v: Vec<f64> = (0..FINGERPRINT_DIM).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..FINGERPRINT_DIM).map(|_| rng.normal()).collect();
        let t = rng.uniform();
        let c = (1.0 - t * t).sqrt();
        let a: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let b: Vec<f32> = v.iter().zip(&w).map(|(&x, &y)| (c * x + t * y) as f32).collect();
        latent.push(a.iter().zip(&b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt());
        image.push(image_distance(&renderer.render(&a, size)?, &renderer.render(&b, size)?)?);
    }
    Ok(LocalityReport {
        pairs,
        rank_correlation: spearman(&latent, &image)?,
        latent_distances: latent,
        image_distances: image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(value: u8, size: usize) -> FingerprintImage {
        FingerprintImage {
            width: size,
            height: size,
            pixels: vec![value; size * size * 3],
            provenance: Provenance {
                encoder_hash: String::new(),
                renderer_version: String::new(),
            },
        }
    }

    #[test]
    fn distance_extremes() {
        let (black, white) = (solid(0, 4), solid(255, 4));
        assert_eq!(image_distance(&black, &black).unwrap(), 0.0);
        assert_eq!(image_distance(&black, &white).unwrap(), 1.0);
        let mut half = black.clone();
        half.pixels[..24].fill(255);
        assert_eq!(image_distance(&half, &black).unwrap(), 0.5);
        assert!(image_distance(&black, &solid(0, 5)).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = [3.0, 0.0, 0.0, 0.0, -5.0, 0.0];
        assert!((spectral_norm(&a, 3) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn render_is_deterministic_and_png_roundtrips() {
        let r = CosineRenderer::new("abc");
        let v: Vec<f32> = (0..512).map(|i| ((i * 7) as f32).sin()).collect();
        let a = r.render(&v, 32).unwrap();
        assert_eq!(a, r.render(&v, 32).unwrap());
        assert_eq!(a.to_png().unwrap(), r.render(&v, 32).unwrap().to_png().unwrap());
        let back = FingerprintImage::from_png(&a.to_png().unwrap()).unwrap();
        assert_eq!(back.pixels, a.pixels);
        assert!(r.render(&v[1..], 32).is_err());
    }

    #[test]
    fn zero_vector_is_mid_grey() {
        let img = CosineRenderer::default().render(&[0.0; 512], 8).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 128));
    }
}
