//! Dataset ingestion and preprocessing.
//!
//! Sources: IDX-format archives (the MNIST-family binary layout), directories
//! of PNG/PPM files, seeded uniform noise, and procedural shape generators
//! for self-contained runs. Every sample is normalized to a 32×32 image with
//! values in [0,1]; larger sources are downscaled by exact area averaging,
//! smaller ones upscaled bilinearly.
//!
//! Preprocessing: per-sample contrast stretching anchored at the 5th/95th
//! percentiles (pooled over all channels), and 256-bin global histogram
//! equalization. Both are pure per-sample transforms; datasets are immutable
//! after construction and carry their preprocessing provenance so scoring can
//! refuse mismatched model/data pairs.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::scalar::Scalar;
use crate::{Tensor4f, TrainScalar};

/// Every dataset sample is resized to this height and width.
pub const IMAGE_HW: usize = 32;
/// Contrast stretches with a percentile range below this are degenerate and
/// leave the sample unchanged (avoids divide-by-zero on near-constant images).
pub const R_MIN: f64 = 1e-3;
/// Default validation fraction for [`split`].
pub const VAL_FRACTION: f64 = 0.10;

/// Preprocessing provenance a dataset carries after construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    None,
    ContrastStretch,
    HistEq,
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preprocessing::None => write!(f, "none"),
            Preprocessing::ContrastStretch => write!(f, "contrast-stretch"),
            Preprocessing::HistEq => write!(f, "histeq"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// An immutable collection of 32×32 images in [0,1] with shared channel
/// count, plus naming and provenance metadata.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    /// Each sample has shape `[1, 32, 32, nc]`.
    pub samples: Vec<Tensor4f>,
    pub split: SplitTag,
    pub preprocessing: Preprocessing,
}

impl Dataset {
    /// Validates the shared-geometry and value-range invariants.
    pub fn new(
        name: impl Into<String>,
        samples: Vec<Tensor4f>,
        split: SplitTag,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        let name = name.into();
        if let Some(first) = samples.first() {
            let nc = first.channels();
            for (i, s) in samples.iter().enumerate() {
                if s.shape() != [1, IMAGE_HW, IMAGE_HW, nc] {
                    return Err(Error::shape(format!(
                        "dataset {name}: sample {i} has shape {:?}, expected [1, {IMAGE_HW}, {IMAGE_HW}, {nc}]",
                        s.shape()
                    )));
                }
                if s.as_slice().iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                    return Err(Error::domain(format!(
                        "dataset {name}: sample {i} has values outside [0,1]"
                    )));
                }
            }
        }
        Ok(Self { name, samples, split, preprocessing })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel count shared by all samples (1 for an empty dataset).
    pub fn nc(&self) -> usize {
        self.samples.first().map_or(1, Tensor4::channels)
    }

    /// Applies a per-sample transform, tagging the result with new provenance.
    pub fn map_samples(
        &self,
        f: impl Fn(&Tensor4f) -> Tensor4f,
        preprocessing: Preprocessing,
    ) -> Result<Dataset> {
        Dataset::new(
            self.name.clone(),
            self.samples.iter().map(f).collect(),
            self.split,
            preprocessing,
        )
    }

    pub fn contrast_stretched(&self) -> Result<Dataset> {
        self.map_samples(contrast_stretch, Preprocessing::ContrastStretch)
    }

    pub fn hist_equalized(&self) -> Result<Dataset> {
        self.map_samples(hist_equalize, Preprocessing::HistEq)
    }

    /// Stacks samples at the given indices into one `[k, 32, 32, nc]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor4f> {
        let picked: Vec<Tensor4f> = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::shape(format!("batch index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        Tensor4::stack(&picked)
    }

    /// Truncates to the first `n` samples (for desk-scale subsets).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            name: self.name.clone(),
            samples: self.samples.iter().take(n).cloned().collect(),
            split: self.split,
            preprocessing: self.preprocessing,
        }
    }
}

// ---------------------------------------------------------------- IDX files

/// A raw IDX payload: big-endian dimension header plus unsigned-byte data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses the IDX container format: two zero magic bytes, a dtype byte
/// (0x08 = unsigned byte, the only supported type), a rank byte, big-endian
/// u32 dimensions, then the row-major payload. The byte count must match the
/// header exactly.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("IDX header needs 4 bytes, file has {}", bytes.len()),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad IDX magic: [{:#04x}, {:#04x}]", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != 0x08 {
        return Err(Error::Parse {
            offset: 2,
            message: format!("unsupported IDX dtype {:#04x} (only u8 = 0x08)", bytes[2]),
        });
    }
    let rank = bytes[3] as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::Parse {
            offset: 3,
            message: format!("implausible IDX rank {rank}"),
        });
    }
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("IDX header truncated: need {header_len} bytes for rank {rank}"),
        });
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header_len;
    if actual != expected {
        return Err(Error::Parse {
            offset: header_len,
            message: format!(
                "IDX payload length mismatch: dims {dims:?} expect {expected} bytes, file has {actual}"
            ),
        });
    }
    Ok(IdxArray { dims, data: bytes[header_len..].to_vec() })
}

/// Loads a rank-3 IDX image file (count × height × width of u8), maps bytes
/// to [0,1] by /255, and resizes each image to 32×32 grayscale.
pub fn load_idx(path: &Path, name: impl Into<String>) -> Result<Dataset> {
    let arr = parse_idx(&std::fs::read(path)?)?;
    let [n, h, w] = match arr.dims[..] {
        [n, h, w] => [n, h, w],
        _ => {
            return Err(Error::Parse {
                offset: 3,
                message: format!("expected rank-3 image IDX, got dims {:?}", arr.dims),
            })
        }
    };
    let mut samples = Vec::with_capacity(n);
    for img in 0..n {
        let start = img * h * w;
        let pixels: Vec<TrainScalar> = arr.data[start..start + h * w]
            .iter()
            .map(|&b| TrainScalar::from_f64_c(b as f64 / 255.0))
            .collect();
        let raw = Tensor4::new([1, h, w, 1], pixels)?;
        samples.push(resize_image(&raw, IMAGE_HW, IMAGE_HW)?);
    }
    Dataset::new(name, samples, SplitTag::Test, Preprocessing::None)
}

// ------------------------------------------------------------- image files

/// Loads every decodable PNG/PPM/PGM in a directory, in lexicographic file
/// order, converted to `nc` channels and resized to 32×32. Undecodable files
/// are skipped with a warning; an error is returned only if nothing loads.
pub fn load_image_dir(path: &Path, nc: usize, name: impl Into<String>) -> Result<Dataset> {
    if !(nc == 1 || nc == 3) {
        return Err(Error::Config(format!("nc must be 1 or 3, got {nc}")));
    }
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "ppm" | "pgm")
            )
        })
        .collect();
    files.sort();
    let mut samples = Vec::new();
    for file in &files {
        let decoded = match image::open(file) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping undecodable image {}: {e}", file.display());
                continue;
            }
        };
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let raw = if nc == 1 {
            let gray = decoded.to_luma8();
            Tensor4::new(
                [1, h, w, 1],
                gray.as_raw()
                    .iter()
                    .map(|&b| TrainScalar::from_f64_c(b as f64 / 255.0))
                    .collect(),
            )?
        } else {
            let rgb = decoded.to_rgb8();
            Tensor4::new(
                [1, h, w, 3],
                rgb.as_raw()
                    .iter()
                    .map(|&b| TrainScalar::from_f64_c(b as f64 / 255.0))
                    .collect(),
            )?
        };
        samples.push(resize_image(&raw, IMAGE_HW, IMAGE_HW)?);
    }
    if samples.is_empty() {
        return Err(Error::Missing(format!(
            "no decodable images among {} candidate files in {}",
            files.len(),
            path.display()
        )));
    }
    Dataset::new(name, samples, SplitTag::Test, Preprocessing::None)
}

// ---------------------------------------------------------------- resizing

/// Resizes one `[1, h, w, c]` image. Downscaling (both axes) uses exact area
/// averaging with fractional edge coverage — the anti-aliasing choice;
/// anything else uses center-aligned bilinear interpolation with edge clamp.
pub fn resize_image<S: Scalar>(x: &Tensor4<S>, oh: usize, ow: usize) -> Result<Tensor4<S>> {
    let [n, h, w, c] = x.shape();
    if n != 1 {
        return Err(Error::shape(format!("resize expects a single image, got batch {n}")));
    }
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let src = x.as_slice();
    let at = |y: usize, xx: usize, k: usize| src[(y * w + xx) * c + k].to_f64_c();
    let mut out = vec![S::zero(); oh * ow * c];

    if oh <= h && ow <= w {
        // Area average: each output pixel integrates the source box
        // [i·h/oh, (i+1)·h/oh) × [j·w/ow, (j+1)·w/ow).
        let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
        for i in 0..oh {
            let (y0, y1) = (i as f64 * sy, (i + 1) as f64 * sy);
            for j in 0..ow {
                let (x0, x1) = (j as f64 * sx, (j + 1) as f64 * sx);
                for k in 0..c {
                    let mut acc = 0.0;
                    let mut yy = y0.floor() as usize;
                    while (yy as f64) < y1 && yy < h {
                        let wy = (y1.min((yy + 1) as f64) - y0.max(yy as f64)).max(0.0);
                        let mut xx = x0.floor() as usize;
                        while (xx as f64) < x1 && xx < w {
                            let wx = (x1.min((xx + 1) as f64) - x0.max(xx as f64)).max(0.0);
                            acc += wy * wx * at(yy, xx, k);
                            xx += 1;
                        }
                        yy += 1;
                    }
                    out[(i * ow + j) * c + k] =
                        S::from_f64_c((acc / (sy * sx)).clamp(0.0, 1.0));
                }
            }
        }
    } else {
        // Bilinear with pixel-center alignment: src = (dst + ½)·scale − ½.
        let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
        for i in 0..oh {
            let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(h - 1);
            for j in 0..ow {
                let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(w - 1);
                for k in 0..c {
                    let top = at(y0, x0, k) * (1.0 - tx) + at(y0, x1, k) * tx;
                    let bot = at(y1, x0, k) * (1.0 - tx) + at(y1, x1, k) * tx;
                    let v = top * (1.0 - ty) + bot * ty;
                    out[(i * ow + j) * c + k] = S::from_f64_c(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Tensor4::new([1, oh, ow, c], out)
}

// ------------------------------------------------------------ preprocessing

/// Percentile of pre-sorted values by linear interpolation between order
/// statistics: rank = q/100·(m−1), interpolating between the two bracketing
/// values (the dominant numerical-library convention).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let rank = (q / 100.0).clamp(0.0, 1.0) * (m - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= m {
        sorted[m - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// The 5th/95th-percentile anchors of one sample, pooled over all channels.
#[derive(Clone, Copy, Debug)]
pub struct StretchParams {
    /// a = P₅(vec(x))
    pub a: f64,
    /// r = P₉₅(vec(x)) − P₅(vec(x))
    pub r: f64,
}

pub fn stretch_params<S: Scalar>(x: &Tensor4<S>) -> StretchParams {
    let mut v: Vec<f64> = x.as_slice().iter().map(|s| s.to_f64_c()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("pipeline values are never NaN"));
    let p5 = percentile(&v, 5.0);
    let p95 = percentile(&v, 95.0);
    StretchParams { a: p5, r: p95 - p5 }
}

/// Per-sample contrast stretch: `clamp((x − a)/r, 0, 1)` with the percentile
/// anchors of [`stretch_params`]. Samples with degenerate range (r < 1e-3,
/// e.g. constant images) pass through unchanged.
pub fn contrast_stretch<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let p = stretch_params(x);
    if p.r < R_MIN {
        return x.clone();
    }
    x.map(|v| S::from_f64_c(((v.to_f64_c() - p.a) / p.r).clamp(0.0, 1.0)))
}

/// Global histogram equalization: 256-bin CDF remap of the whole sample
/// (channels pooled) onto [0,1].
pub fn hist_equalize<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let bin = |v: f64| ((v * 256.0).floor() as usize).min(255);
    let mut hist = [0u64; 256];
    for v in x.as_slice() {
        hist[bin(v.to_f64_c().clamp(0.0, 1.0))] += 1;
    }
    let total = x.numel() as f64;
    let mut cdf = [0.0f64; 256];
    let mut cum = 0u64;
    for (k, h) in hist.iter().enumerate() {
        cum += h;
        cdf[k] = cum as f64 / total;
    }
    x.map(|v| S::from_f64_c(cdf[bin(v.to_f64_c().clamp(0.0, 1.0))]))
}

// ---------------------------------------------------------------- synthesis

/// Seeded i.i.d. Uniform[0,1] noise images.
pub fn gen_noise(n: usize, nc: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            Tensor4::new(
                [1, IMAGE_HW, IMAGE_HW, nc],
                (0..IMAGE_HW * IMAGE_HW * nc)
                    .map(|_| TrainScalar::from_f64_c(rng.gen::<f64>()))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    Dataset::new("noise", samples, SplitTag::Test, Preprocessing::None)
}

/// The equally spaced intensity grid 0, 1/(L−1), …, 1 for [`simulate_intensity_sweep`].
pub fn intensity_levels(n_levels: usize) -> Vec<f64> {
    (0..n_levels)
        .map(|k| k as f64 / (n_levels - 1) as f64)
        .collect()
}

/// Constant images at `n_levels` equally spaced intensities from full black
/// to full white.
pub fn simulate_intensity_sweep(n_levels: usize, nc: usize) -> Result<Dataset> {
    if n_levels < 2 {
        return Err(Error::Config(format!(
            "intensity sweep needs ≥ 2 levels, got {n_levels}"
        )));
    }
    let samples = intensity_levels(n_levels)
        .into_iter()
        .map(|v| Tensor4::full([1, IMAGE_HW, IMAGE_HW, nc], TrainScalar::from_f64_c(v)))
        .collect();
    Dataset::new("intensity-sweep", samples, SplitTag::Test, Preprocessing::None)
}

/// The decreasing contrast grid 1, (L−1)/L, …, 1/L for [`simulate_contrast_sweep`].
pub fn contrast_levels(n_levels: usize) -> Vec<f64> {
    (0..n_levels)
        .map(|j| (n_levels - j) as f64 / n_levels as f64)
        .collect()
}

/// Contrast sweep around mid-gray: level t gives `x_t = 0.5 + t·(x − 0.5)`,
/// with t decreasing from 1 toward 0 (the t→0 limit is the constant-½ image).
pub fn simulate_contrast_sweep(base: &Tensor4f, n_levels: usize) -> Result<Dataset> {
    if n_levels < 1 {
        return Err(Error::Config("contrast sweep needs ≥ 1 level".into()));
    }
    let samples = contrast_levels(n_levels)
        .into_iter()
        .map(|t| {
            base.map(|v| {
                TrainScalar::from_f64_c((0.5 + t * (v.to_f64_c() - 0.5)).clamp(0.0, 1.0))
            })
        })
        .collect();
    Dataset::new(
        format!("{}-contrast-sweep", base.numel()),
        samples,
        SplitTag::Test,
        Preprocessing::None,
    )
}

/// Seed-deterministic shuffle split into (train, val) with the given
/// validation fraction. Disjoint and exhaustive; within each side, samples
/// keep their original relative order.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val fraction must be in [0,1), got {val_fraction}"
        )));
    }
    let n = dataset.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n - 1);
    let mut indices: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx: Vec<usize> = indices[..n_val].to_vec();
    let mut train_idx: Vec<usize> = indices[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize], tag: SplitTag| {
        Dataset::new(
            dataset.name.clone(),
            idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
            tag,
            dataset.preprocessing,
        )
    };
    Ok((pick(&train_idx, SplitTag::Train)?, pick(&val_idx, SplitTag::Val)?))
}

// ----------------------------------------------------- procedural datasets

fn blank() -> Vec<f64> {
    vec![0.0; IMAGE_HW * IMAGE_HW]
}

fn to_sample(pixels: Vec<f64>) -> Result<Tensor4f> {
    Tensor4::new(
        [1, IMAGE_HW, IMAGE_HW, 1],
        pixels
            .into_iter()
            .map(|v| TrainScalar::from_f64_c(v.clamp(0.0, 1.0)))
            .collect(),
    )
}

/// Filled silhouettes (ellipses, rectangles, T-shapes) with heavily textured
/// mid-tone interiors on a black background — a garment-like grayscale
/// corpus. Three statistics are deliberate and load-bearing:
///
/// * **Wide per-image texture**: interiors span a broad sub-full dynamic
///   range, so even after contrast stretching they stay mid-toned rather
///   than saturating — the regime where a pixel-space likelihood prefers
///   sparser images (saturated pixels sit near the density ceiling, mid-tone
///   texture far below it).
/// * **Wide size range**: object area varies by almost an order of
///   magnitude, so a model of this corpus also learns to emit small/sparse
///   images.
/// * **A thin-structure minority**: a slice of the samples are hollow
///   (rings and frames — the straps and outlines of a clothing corpus), so
///   thin bright curves on black stay within the model's reconstructive
///   reach rather than being off-manifold outright.
pub fn gen_silhouettes(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = IMAGE_HW as f64;
    let samples = (0..n)
        .map(|_| {
            let mut px = blank();
            let cy = hw / 2.0 + rng.gen_range(-3.0..3.0);
            let cx = hw / 2.0 + rng.gen_range(-3.0..3.0);
            let base = rng.gen_range(0.38..0.65);
            let texture = rng.gen_range(0.12..0.22);
            let (gy, gx) = (rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25));
            let kind = rng.gen_range(0..3u8);
            let (ry, rx) = (rng.gen_range(8.0..20.0), rng.gen_range(8.0..20.0));
            let bar_h = rng.gen_range(3.0..6.0);
            let hollow = kind != 2 && rng.gen_bool(0.15);
            for y in 0..IMAGE_HW {
                for x in 0..IMAGE_HW {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let inside = match kind {
                        0 => {
                            let q = (dy / ry).powi(2) + (dx / rx).powi(2);
                            q <= 1.0 && (!hollow || q >= 0.78)
                        }
                        1 => {
                            let within = dy.abs() <= ry * 0.8 && dx.abs() <= rx * 0.8;
                            let core = dy.abs() <= ry * 0.68 && dx.abs() <= rx * 0.68;
                            within && (!hollow || !core)
                        }
                        // T-shape: wide top bar plus a vertical stem.
                        _ => {
                            (dy > -ry && dy < -ry + bar_h && dx.abs() <= rx)
                                || (dy >= -ry + bar_h && dy <= ry && dx.abs() <= rx * 0.45)
                        }
                    };
                    if inside {
                        let shade = base
                            + gy * dy / hw
                            + gx * dx / hw
                            + rng.gen_range(-texture..texture);
                        px[y * IMAGE_HW + x] = shade.clamp(0.06, 0.97);
                    }
                }
            }
            to_sample(px)
        })
        .collect::<Result<_>>()?;
    Dataset::new("silhouettes", samples, SplitTag::Train, Preprocessing::None)
}

/// Thin bright random-walk strokes on black — a digit-like grayscale corpus:
/// sparse images whose ink covers only 10–20% of the frame, mostly at high
/// intensity, the opposite pixel-statistics regime from [`gen_silhouettes`].
pub fn gen_strokes(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let mut px = blank();
            let strokes = rng.gen_range(2..=4);
            for _ in 0..strokes {
                let mut y = rng.gen_range(6.0..26.0);
                let mut x = rng.gen_range(6.0..26.0);
                let mut dir = rng.gen_range(0.0..std::f64::consts::TAU);
                let ink = rng.gen_range(0.75..1.0);
                for _ in 0..rng.gen_range(10..22) {
                    dir += rng.gen_range(-0.7..0.7);
                    y = (y + dir.sin()).clamp(1.0, 30.0);
                    x = (x + dir.cos()).clamp(1.0, 30.0);
                    // Stamp a 2×2 nib for stroke thickness.
                    for (oy, ox) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let iy = (y as usize + oy).min(IMAGE_HW - 1);
                        let ix = (x as usize + ox).min(IMAGE_HW - 1);
                        px[iy * IMAGE_HW + ix] = ink + rng.gen_range(-0.05..0.0);
                    }
                }
            }
            to_sample(px)
        })
        .collect::<Result<_>>()?;
    Dataset::new("strokes", samples, SplitTag::Test, Preprocessing::None)
}

/// Fixed-position, vertically asymmetric scenes: a bright wedge anchored to
/// the top of the frame over a faintly textured dark floor. Spatially
/// homogeneous across samples (only texture noise varies), so orientation
/// probes (vertical flip, rotation) move samples far from the data manifold.
pub fn gen_fixed_asymmetric(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = IMAGE_HW as f64;
    let samples = (0..n)
        .map(|_| {
            let mut px = blank();
            for y in 0..IMAGE_HW {
                for x in 0..IMAGE_HW {
                    let fy = y as f64 / hw;
                    // Wedge: full width at the top row, narrowing to nothing
                    // at 60% height; brightness fades downward.
                    let half_width = (1.0 - fy / 0.6).max(0.0) * hw / 2.0;
                    let in_wedge = (x as f64 - hw / 2.0).abs() <= half_width && fy < 0.6;
                    let v = if in_wedge {
                        0.9 - 0.5 * fy + rng.gen_range(-0.04..0.04)
                    } else {
                        0.12 + rng.gen_range(0.0..0.08)
                    };
                    px[y * IMAGE_HW + x] = v;
                }
            }
            to_sample(px)
        })
        .collect::<Result<_>>()?;
    Dataset::new("wedge-scenes", samples, SplitTag::Train, Preprocessing::None)
}
