//! Synthetic nodule images with two controllable factors of variation.
//!
//! A 100×100 canvas holds a soft-edged disk on a noisy background. The disk
//! diameter encodes the collider `x` and the spread of foreground intensities
//! encodes the prognostic factor `z`:
//!
//! ```text
//! diameter = 8 + 32·Φ(x)          px
//! sd_fg    = 0.05 + 0.45·Φ(z)
//! bg ~ N(-0.5, 0.1),  fg ~ N(0.5, sd_fg)
//! pixel = (1-α)·bg + α·fg,  α = box3(box3(disk mask))
//! ```
//!
//! Pixel `(r, c)` has its center at `(r + 0.5, c + 0.5)`; the disk center is
//! `50 + U(-5, 5)` on each axis. Image `i` of a pool with seed `s` draws from
//! substream `i` in the order gen_x, gen_z, center row, center column,
//! background field, foreground field.
//!
//! Measurement inverts the mapping: the mask is `box3(box3(image)) > 0`, its
//! equivalent diameter gives `meas_x`, and the population sd of raw pixels over
//! the mask eroded once (4-neighbourhood) gives `meas_z`. Erosion keeps the
//! blended rim, whose spread reflects the edge rather than the texture, out of
//! the heterogeneity estimate.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::stats::{norm_cdf, norm_ppf};

pub const CANVAS: usize = 100;
pub const BG_MEAN: f64 = -0.5;
pub const BG_SD: f64 = 0.1;
pub const FG_MEAN: f64 = 0.5;
pub const JITTER: f64 = 5.0;
const MEAS_EPS: f64 = 1e-4;

pub fn diameter(x: f64) -> f64 {
    8.0 + 32.0 * norm_cdf(x)
}

pub fn foreground_sd(z: f64) -> f64 {
    0.05 + 0.45 * norm_cdf(z)
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub jitter: bool,
    pub blur: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            jitter: true,
            blur: true,
        }
    }
}

/// 3×3 mean filter with zero padding.
fn box3(src: &[f64], n: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut s = src[r * n + c];
            if c > 0 {
                s += src[r * n + c - 1];
            }
            if c + 1 < n {
                s += src[r * n + c + 1];
            }
            tmp[r * n + c] = s;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut s = tmp[r * n + c];
            if r > 0 {
                s += tmp[(r - 1) * n + c];
            }
            if r + 1 < n {
                s += tmp[(r + 1) * n + c];
            }
            out[r * n + c] = s / 9.0;
        }
    }
    out
}

/// Renders one canvas for factors `(x, z)`.
pub fn render_image(x: f64, z: f64, opts: RenderOptions, s: &mut Stream) -> Vec<f32> {
    let n = CANVAS;
    let radius = diameter(x) / 2.0;
    let sd_fg = foreground_sd(z);
    let (mut cy, mut cx) = (n as f64 / 2.0, n as f64 / 2.0);
    if opts.jitter {
        cy += s.uniform_range(-JITTER, JITTER);
        cx += s.uniform_range(-JITTER, JITTER);
    }
    let mut alpha = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let dy = r as f64 + 0.5 - cy;
            let dx = c as f64 + 0.5 - cx;
            if dy * dy + dx * dx <= radius * radius {
                alpha[r * n + c] = 1.0;
            }
        }
    }
    if opts.blur {
        alpha = box3(&box3(&alpha, n), n);
    }
    let bg: Vec<f64> = (0..n * n).map(|_| s.normal(BG_MEAN, BG_SD)).collect();
    let fg: Vec<f64> = (0..n * n).map(|_| s.normal(FG_MEAN, sd_fg)).collect();
    alpha
        .iter()
        .zip(bg.iter().zip(&fg))
        .map(|(a, (b, f))| ((1.0 - a) * b + a * f) as f32)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub meas_x: f64,
    pub meas_z: f64,
    /// Empty foreground mask; both values sit at the clamp floor.
    pub degenerate: bool,
}

/// Recovers noisy views of `(x, z)` from a raw (unnormalized) canvas.
pub fn measure_image(pixels: &[f32], side: usize) -> Measurement {
    let raw: Vec<f64> = pixels.iter().map(|&v| f64::from(v)).collect();
    let smooth = box3(&box3(&raw, side), side);
    let mask: Vec<bool> = smooth.iter().map(|&v| v > 0.0).collect();
    let area = mask.iter().filter(|&&m| m).count();
    let floor = norm_ppf(MEAS_EPS);
    if area == 0 {
        log::warn!("empty foreground mask; measurement clamped");
        return Measurement {
            meas_x: floor,
            meas_z: floor,
            degenerate: true,
        };
    }
    let d = 2.0 * (area as f64 / std::f64::consts::PI).sqrt();
    let meas_x = norm_ppf(((d - 8.0) / 32.0).clamp(MEAS_EPS, 1.0 - MEAS_EPS));

    let inside = |r: isize, c: isize| -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < side
            && (c as usize) < side
            && mask[r as usize * side + c as usize]
    };
    let mut core = Vec::new();
    for r in 0..side as isize {
        for c in 0..side as isize {
            if inside(r, c)
                && inside(r - 1, c)
                && inside(r + 1, c)
                && inside(r, c - 1)
                && inside(r, c + 1)
            {
                core.push(raw[r as usize * side + c as usize]);
            }
        }
    }
    if core.len() < 2 {
        core = raw
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect();
    }
    let m = core.iter().sum::<f64>() / core.len() as f64;
    let sd = (core.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / core.len() as f64).sqrt();
    let meas_z = norm_ppf(((sd - 0.05) / 0.45).clamp(MEAS_EPS, 1.0 - MEAS_EPS));
    Measurement {
        meas_x,
        meas_z,
        degenerate: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub id: usize,
    pub gen_x: f64,
    pub gen_z: f64,
    pub meas_x: f64,
    pub meas_z: f64,
}

/// Immutable pool of rendered canvases plus measurement and normalization data.
#[derive(Clone, Debug)]
pub struct ImagePool {
    pub seed: u64,
    pub side: usize,
    pub meta: Vec<ImageMeta>,
    pixels: Vec<f32>,
    pub norm_mean: f64,
    pub norm_sd: f64,
}

impl ImagePool {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Raw pixels of image `id`.
    pub fn raw(&self, id: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.pixels[id * n..(id + 1) * n]
    }

    /// Pixels of image `id` standardized with the given statistics.
    pub fn normalized_with(&self, id: usize, mean: f64, sd: f64) -> Vec<f32> {
        self.raw(id)
            .iter()
            .map(|&v| ((f64::from(v) - mean) / sd) as f32)
            .collect()
    }

    pub fn normalized(&self, id: usize) -> Vec<f32> {
        self.normalized_with(id, self.norm_mean, self.norm_sd)
    }

    fn from_parts(seed: u64, side: usize, meta: Vec<ImageMeta>, pixels: Vec<f32>) -> Result<Self> {
        if meta.is_empty() {
            return Err(Error::Param("pool must hold at least one image".into()));
        }
        let (norm_mean, norm_sd) = pixel_stats(&pixels);
        if !(norm_sd > 0.0) {
            return Err(Error::Data("pool pixels have zero spread".into()));
        }
        Ok(ImagePool {
            seed,
            side,
            meta,
            pixels,
            norm_mean,
            norm_sd,
        })
    }
}

fn pixel_stats(px: &[f32]) -> (f64, f64) {
    let n = px.len() as f64;
    let mean = px.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = px
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

pub fn build_pool(m: usize, seed: u64) -> Result<ImagePool> {
    if m == 0 {
        return Err(Error::Param("pool size must be at least 1".into()));
    }
    let mut meta = Vec::with_capacity(m);
    let mut pixels = Vec::with_capacity(m * CANVAS * CANVAS);
    for id in 0..m {
        let mut s = Stream::substream(seed, id as u64);
        let gen_x = s.std_normal();
        let gen_z = s.std_normal();
        let img = render_image(gen_x, gen_z, RenderOptions::default(), &mut s);
        let ms = measure_image(&img, CANVAS);
        meta.push(ImageMeta {
            id,
            gen_x,
            gen_z,
            meas_x: ms.meas_x,
            meas_z: ms.meas_z,
        });
        pixels.extend_from_slice(&img);
    }
    ImagePool::from_parts(seed, CANVAS, meta, pixels)
}

/// Nearest image in measured (x', z') space; ties go to the lowest id.
pub fn match_image(
    pool: &ImagePool,
    x: f64,
    z: f64,
    exclude: Option<&HashSet<usize>>,
) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for m in &pool.meta {
        if exclude.is_some_and(|e| e.contains(&m.id)) {
            continue;
        }
        let d = (m.meas_x - x).powi(2) + (m.meas_z - z).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, m.id));
        }
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::Matching("every pool image is excluded".into()))
}

/// 2×2 average pooling of a square canvas (odd trailing row/column dropped).
pub fn downsample2(px: &[f32], side: usize) -> Vec<f32> {
    let h = side / 2;
    let mut out = vec![0.0f32; h * h];
    for r in 0..h {
        for c in 0..h {
            let a = px[2 * r * side + 2 * c]
                + px[2 * r * side + 2 * c + 1]
                + px[(2 * r + 1) * side + 2 * c]
                + px[(2 * r + 1) * side + 2 * c + 1];
            out[r * h + c] = a * 0.25;
        }
    }
    out
}

#[derive(Debug)]
pub enum CropMode<'a> {
    /// Uniform offset and independent horizontal/vertical mirrors at p = 0.5.
    Random(&'a mut Stream),
    Center,
}

/// Crops a `size`×`size` window from a square canvas into `out`.
pub fn crop_into(px: &[f32], side: usize, size: usize, mode: CropMode<'_>, out: &mut [f32]) {
    assert!(size <= side && out.len() == size * size);
    let (r0, c0, flip_h, flip_v) = match mode {
        CropMode::Center => {
            let o = (side - size) / 2;
            (o, o, false, false)
        }
        CropMode::Random(s) => {
            let span = side - size + 1;
            let (r0, c0) = (s.below(span), s.below(span));
            let fh = s.bernoulli(0.5);
            let fv = s.bernoulli(0.5);
            (r0, c0, fh, fv)
        }
    };
    for r in 0..size {
        let sr = if flip_v { size - 1 - r } else { r };
        for c in 0..size {
            let sc = if flip_h { size - 1 - c } else { c };
            out[r * size + c] = px[(r0 + sr) * side + c0 + sc];
        }
    }
}

pub fn crop(px: &[f32], side: usize, size: usize, mode: CropMode<'_>) -> Vec<f32> {
    let mut out = vec![0.0; size * size];
    crop_into(px, side, size, mode, &mut out);
    out
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    seed: u64,
    ids: Vec<usize>,
    gen_x: Vec<f64>,
    gen_z: Vec<f64>,
    meas_x: Vec<f64>,
    meas_z: Vec<f64>,
    norm_mean: f64,
    norm_sd: f64,
}

impl ImagePool {
    /// Writes `<stem>.f32` (raw little-endian pixels, image-major) and
    /// `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let bin = dir.join(format!("{stem}.f32"));
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let car = Sidecar {
            width: self.side,
            height: self.side,
            seed: self.seed,
            ids: self.meta.iter().map(|m| m.id).collect(),
            gen_x: self.meta.iter().map(|m| m.gen_x).collect(),
            gen_z: self.meta.iter().map(|m| m.gen_z).collect(),
            meas_x: self.meta.iter().map(|m| m.meas_x).collect(),
            meas_z: self.meta.iter().map(|m| m.meas_z).collect(),
            norm_mean: self.norm_mean,
            norm_sd: self.norm_sd,
        };
        let js = dir.join(format!("{stem}.json"));
        std::fs::write(&js, serde_json::to_string(&car)?).map_err(|e| Error::io(&js, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let js = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&js).map_err(|e| Error::io(&js, e))?;
        let car: Sidecar = serde_json::from_str(&text)?;
        let bin = dir.join(format!("{stem}.f32"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let n = car.ids.len();
        if car.width != car.height || bytes.len() != n * car.width * car.height * 4 {
            return Err(Error::Data(format!(
                "{} does not match its sidecar",
                bin.display()
            )));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let meta = (0..n)
            .map(|i| ImageMeta {
                id: car.ids[i],
                gen_x: car.gen_x[i],
                gen_z: car.gen_z[i],
                meas_x: car.meas_x[i],
                meas_z: car.meas_z[i],
            })
            .collect();
        let mut pool = ImagePool::from_parts(car.seed, car.width, meta, pixels)?;
        pool.norm_mean = car.norm_mean;
        pool.norm_sd = car.norm_sd;
        Ok(pool)
    }
}

/// Binary PGM (P5), min-max scaled to 0..=255.
pub fn to_pgm(px: &[f32], side: usize) -> Vec<u8> {
    let lo = px.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut header = String::new();
    let _ = write!(header, "P5\n{side} {side}\n255\n");
    let mut out = header.into_bytes();
    out.extend(
        px.iter()
            .map(|&v| (((v - lo) / span) * 255.0).round() as u8),
    );
    out
}
