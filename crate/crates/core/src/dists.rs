//! Visible distributions and their bias corrections.
//!
//! Three per-pixel likelihood families for the decoder — Bernoulli,
//! continuous Bernoulli, and 256-way categorical — together with the
//! sample-specific "perfect reconstruction" terms used to bias-correct
//! marginal log-likelihoods, and the empirical categorical correction table.
//!
//! The continuous Bernoulli density on [0,1] is `C(λ)·λˣ(1−λ)^(1−x)` with
//! normalizer `C(λ) = 2·atanh(1−2λ)/(1−2λ)` and `C(½) = 2`; it reduces to
//! Uniform(0,1) at λ = ½. All scalar functions here compute in f64 and are
//! exercised against quadrature oracles in the tests.
//!
//! The table-building algorithm is decoupled from any concrete model: it
//! consumes per-sample lists of (pixel value, channel, decoder probability)
//! so a stub decoder can drive it in tests; the model-facing wrapper lives
//! with the model code.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// Pixels are clamped to `[EPS_X, 1−EPS_X]` before the λ* solve, so the
/// optimum stays inside the admissible λ range at exact 0/1 pixels.
pub const EPS_X: f64 = 1e-4;
/// λ is clamped to `[EPS_LAMBDA, 1−EPS_LAMBDA]` everywhere (decoder outputs
/// and MLE solves alike).
pub const EPS_LAMBDA: f64 = 1e-6;
/// Half-width of the series window around λ = ½ where the closed forms for
/// `C(λ)` and the mean become 0/0 and Taylor expansions take over.
const SERIES_HALF_WIDTH: f64 = 1e-4;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain(format!("λ must lie in (0,1), got {lambda}")));
    }
    Ok(())
}

fn check_x(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x must lie in [0,1], got {x}")));
    }
    Ok(())
}

/// `atanh(1−2λ)` in the cancellation-free form `½·ln((1−λ)/λ)`.
fn atanh_one_minus_2l(lambda: f64) -> f64 {
    0.5 * ((1.0 - lambda) / lambda).ln()
}

/// `log C(λ)`, the log-normalizer of the continuous Bernoulli.
///
/// Within `|λ−½| < 1e-4` the direct quotient is 0/0-degenerate and a Taylor
/// series in `u = 1−2λ` is used instead: `ln 2 + u²/3 + 13u⁴/90 + O(u⁶)`.
pub fn cb_log_norm(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let u = 1.0 - 2.0 * lambda;
    if u.abs() < 2.0 * SERIES_HALF_WIDTH {
        let u2 = u * u;
        Ok(std::f64::consts::LN_2 + u2 / 3.0 + 13.0 * u2 * u2 / 90.0)
    } else {
        // atanh(u)/u > 0 on both sides of ½.
        Ok((2.0 * atanh_one_minus_2l(lambda) / u).ln())
    }
}

/// Derivative `d log C / dλ`, needed by training losses. Series window as in
/// [`cb_log_norm`]: `−4u/3 − 52u³/45 + O(u⁵)` with `u = 1−2λ`.
pub fn cb_log_norm_grad(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let u = 1.0 - 2.0 * lambda;
    if u.abs() < 2.0 * SERIES_HALF_WIDTH {
        Ok(-4.0 * u / 3.0 - 52.0 * u * u * u / 45.0)
    } else {
        let at = atanh_one_minus_2l(lambda);
        // d/du [ln(atanh u) − ln u] · du/dλ, du/dλ = −2.
        Ok(-2.0 * (1.0 / ((1.0 - u * u) * at) - 1.0 / u))
    }
}

/// Log-density `log C(λ) + x·log λ + (1−x)·log(1−λ)` on x ∈ [0,1].
pub fn cb_log_pdf(x: f64, lambda: f64) -> Result<f64> {
    check_x(x)?;
    Ok(cb_log_norm(lambda)? + x * lambda.ln() + (1.0 - x) * (1.0 - lambda).ln())
}

/// Mean of the continuous Bernoulli: `λ/(2λ−1) + 1/(2·atanh(1−2λ))`, equal
/// to ½ at λ = ½ and strictly increasing in λ. Series in the ½-window:
/// `½ − u/6 − 2u³/45 + O(u⁵)`.
pub fn cb_mean(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let u = 1.0 - 2.0 * lambda;
    if u.abs() < 2.0 * SERIES_HALF_WIDTH {
        Ok(0.5 - u / 6.0 - 2.0 * u * u * u / 45.0)
    } else {
        Ok(lambda / (2.0 * lambda - 1.0) + 0.5 / atanh_one_minus_2l(lambda))
    }
}

/// Maximum-likelihood λ for a single observation x: the exponential-family
/// stationarity condition is `cb_mean(λ*) = x`, solved by bisection on the
/// strictly increasing mean (the iterative direct maximization it replaces
/// finds the same point; the tests assert this against a grid search).
///
/// x is clamped to `[EPS_X, 1−EPS_X]` first. Where even the clamped x lies
/// outside the mean's range over admissible λ — x below `cb_mean(EPS_LAMBDA)`
/// ≈ 0.0724 or mirrored above — λ* saturates at the clamp boundary.
pub fn cb_lambda_star(x: f64) -> f64 {
    let x = x.clamp(EPS_X, 1.0 - EPS_X);
    let (mut lo, mut hi) = (EPS_LAMBDA, 1.0 - EPS_LAMBDA);
    let mean = |l: f64| cb_mean(l).expect("λ kept inside (0,1) by construction");
    if mean(lo) >= x {
        return lo;
    }
    if mean(hi) <= x {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mean(mid);
        if m == x {
            return mid;
        }
        if m < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Per-pixel perfect-reconstruction log-density under the continuous
/// Bernoulli: `cb_log_pdf(x, λ*(x))`.
pub fn cb_perfect_recon_pixel(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    cb_log_pdf(x, cb_lambda_star(x)).expect("x clamped to [0,1], λ* in (0,1)")
}

/// 256-entry table of `cb_perfect_recon_pixel(k/255)`; pixels that are exact
/// 8-bit quantization levels take this fast path.
fn cb_pr_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut t = [0.0; 256];
        for (k, slot) in t.iter_mut().enumerate() {
            *slot = cb_perfect_recon_pixel(k as f64 / 255.0);
        }
        t
    })
}

/// Bernoulli perfect-reconstruction term: `Σᵢ xᵢ·ln xᵢ + (1−xᵢ)·ln(1−xᵢ)`
/// with the `0·ln 0 := 0` convention. Always ≤ 0; zero iff x is binary.
pub fn bernoulli_perfect_recon<S: Scalar>(x: &Tensor4<S>) -> f64 {
    let mut total = 0.0;
    for &v in x.as_slice() {
        let p = v.to_f64_c().clamp(0.0, 1.0);
        if p > 0.0 {
            total += p * p.ln();
        }
        if p < 1.0 {
            total += (1.0 - p) * (1.0 - p).ln();
        }
    }
    total
}

/// Continuous-Bernoulli perfect-reconstruction term:
/// `Σᵢ cb_log_pdf(xᵢ, λ*(xᵢ))`.
///
/// Pixels exactly equal to an 8-bit level `k/255` (in the tensor's own
/// precision) are served from a 256-entry lookup table; anything else takes
/// the per-pixel solve, with a one-deep memo so constant images cost one
/// solve. Zero for an all-½ image, and large positive near extreme pixels —
/// the U-shape that the bias correction exists to cancel.
pub fn cb_perfect_recon<S: Scalar>(x: &Tensor4<S>) -> f64 {
    let lut = cb_pr_lut();
    let mut total = 0.0;
    let mut memo: Option<(S, f64)> = None;
    for &v in x.as_slice() {
        let p = v.to_f64_c().clamp(0.0, 1.0);
        let k = (p * 255.0).round() as usize; // p ∈ [0,1] ⇒ k ∈ 0..=255
        if v == S::from_f64_c(k as f64 / 255.0) {
            total += lut[k];
        } else {
            total += match memo {
                Some((pv, pr)) if pv == v => pr,
                _ => {
                    let r = cb_perfect_recon_pixel(p);
                    memo = Some((v, r));
                    r
                }
            };
        }
    }
    total
}

/// Log-probability of byte value `x_byte` under a 256-way categorical given
/// unnormalized logits: `logits[x] − logsumexp(logits)`.
pub fn categorical_log_pmf(x_byte: u8, logits: &[f64]) -> Result<f64> {
    if logits.len() != 256 {
        return Err(Error::shape(format!(
            "categorical logits must have 256 entries, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite categorical logit"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits[x_byte as usize] - lse)
}

/// Quantizes a unit-interval pixel to its 8-bit level.
pub fn pixel_to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

// ------------------------------------------------------------------------
// Categorical correction table
// ------------------------------------------------------------------------

/// One pixel's contribution to the correction-table build: the true 8-bit
/// value, the channel, and the probability the decoder assigned to that value.
#[derive(Clone, Copy, Debug)]
pub struct PixelProb {
    pub value: u8,
    pub channel: usize,
    pub prob: f64,
}

/// Log correction factor C(v,k) per pixel value v ∈ 0..=255 and channel k.
///
/// Entries are logs of mean probabilities, hence finite and ≤ 0; cells never
/// observed during the build are floored at `ln(1/256)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CatCorrectionTable {
    nc: usize,
    /// Row-major `[value][channel]`.
    table: Vec<f64>,
}

const CAT_TABLE_MAGIC: &[u8; 4] = b"CCT1";
/// Floor for table cells with no observations.
pub const CAT_TABLE_FLOOR: f64 = -5.545177444479562; // ln(1/256)

impl CatCorrectionTable {
    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn get(&self, value: u8, channel: usize) -> f64 {
        self.table[value as usize * self.nc + channel]
    }

    /// Total log-correction for a sample: Σ over pixels of C(v, k), with
    /// pixels quantized to 8 bits.
    pub fn correction<S: Scalar>(&self, x: &Tensor4<S>) -> Result<f64> {
        if x.channels() != self.nc {
            return Err(Error::shape(format!(
                "correction table built for {} channels, sample has {}",
                self.nc,
                x.channels()
            )));
        }
        let mut total = 0.0;
        for chunk in x.as_slice().chunks_exact(self.nc) {
            for (k, &v) in chunk.iter().enumerate() {
                total += self.get(pixel_to_byte(v.to_f64_c()), k);
            }
        }
        Ok(total)
    }

    /// Binary layout: magic, nc as u32 LE, then 256·nc f64 LE in
    /// `[value][channel]` order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CAT_TABLE_MAGIC)?;
        f.write_all(&(self.nc as u32).to_le_bytes())?;
        for v in &self.table {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|_| Error::Parse {
            offset: 0,
            message: "file too short for correction-table magic".into(),
        })?;
        if &magic != CAT_TABLE_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad correction-table magic {magic:?}"),
            });
        }
        let mut nc_bytes = [0u8; 4];
        f.read_exact(&mut nc_bytes).map_err(|_| Error::Parse {
            offset: 4,
            message: "file too short for channel count".into(),
        })?;
        let nc = u32::from_le_bytes(nc_bytes) as usize;
        if nc == 0 || nc > 16 {
            return Err(Error::Parse {
                offset: 4,
                message: format!("implausible channel count {nc}"),
            });
        }
        let mut table = Vec::with_capacity(256 * nc);
        let mut buf = [0u8; 8];
        for i in 0..256 * nc {
            f.read_exact(&mut buf).map_err(|_| Error::Parse {
                offset: 8 + i * 8,
                message: format!("truncated table: expected {} entries, got {i}", 256 * nc),
            })?;
            table.push(f64::from_le_bytes(buf));
        }
        let t = Self { nc, table };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.table.iter().any(|v| !v.is_finite() || *v > 0.0) {
            return Err(Error::domain(
                "correction table entries must be finite logs of probabilities (≤ 0)",
            ));
        }
        Ok(())
    }

    /// Human-inspectable dump: one row per value, one column per channel.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "value")?;
        for k in 0..self.nc {
            write!(w, ",c{k}")?;
        }
        writeln!(w)?;
        for v in 0..256 {
            write!(w, "{v}")?;
            for k in 0..self.nc {
                write!(w, ",{}", self.get(v as u8, k))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Builds the categorical correction table by two nested averaging stages:
/// within each sample, the probabilities assigned to a given (value, channel)
/// are averaged; across samples, those per-sample means are averaged; the
/// table stores the log of the cross-sample mean.
///
/// `per_sample` yields one pixel-probability list per training sample (the
/// decoder is consulted once per sample, at the posterior mean). Cells never
/// observed are floored at `ln(1/256)` with a warning.
pub fn build_cat_correction<I>(per_sample: I, nc: usize) -> Result<CatCorrectionTable>
where
    I: IntoIterator<Item = Result<Vec<PixelProb>>>,
{
    if nc == 0 {
        return Err(Error::Config("channel count must be ≥ 1".into()));
    }
    let cells = 256 * nc;
    // Cross-sample running sums of per-sample means, and observation counts.
    let mut mean_sums = vec![0.0f64; cells];
    let mut sample_counts = vec![0u64; cells];
    // Per-sample accumulators, reused across samples.
    let mut pixel_sums = vec![0.0f64; cells];
    let mut pixel_counts = vec![0u32; cells];
    let mut n_samples = 0u64;

    for sample in per_sample {
        let sample = sample?;
        n_samples += 1;
        pixel_sums.fill(0.0);
        pixel_counts.fill(0);
        for p in &sample {
            if p.channel >= nc {
                return Err(Error::shape(format!(
                    "pixel channel {} out of range for nc={nc}",
                    p.channel
                )));
            }
            if !(p.prob.is_finite() && (0.0..=1.0).contains(&p.prob)) {
                return Err(Error::domain(format!(
                    "decoder probability {} outside [0,1]",
                    p.prob
                )));
            }
            let idx = p.value as usize * nc + p.channel;
            pixel_sums[idx] += p.prob;
            pixel_counts[idx] += 1;
        }
        for idx in 0..cells {
            if pixel_counts[idx] > 0 {
                mean_sums[idx] += pixel_sums[idx] / pixel_counts[idx] as f64;
                sample_counts[idx] += 1;
            }
        }
    }
    if n_samples == 0 {
        return Err(Error::Config(
            "cannot build a correction table from an empty training set".into(),
        ));
    }

    let mut unobserved = 0usize;
    let table: Vec<f64> = (0..cells)
        .map(|idx| {
            if sample_counts[idx] == 0 {
                unobserved += 1;
                CAT_TABLE_FLOOR
            } else {
                // Guard the degenerate all-zero-probability cell against −∞.
                (mean_sums[idx] / sample_counts[idx] as f64).ln().max(-744.0)
            }
        })
        .collect();
    if unobserved > 0 {
        log::warn!(
            "correction table: {unobserved}/{cells} (value, channel) cells never observed; \
             floored at ln(1/256)"
        );
    }
    let t = CatCorrectionTable { nc, table };
    t.validate()?;
    Ok(t)
}

// ------------------------------------------------------------------------
// Applying corrections
// ------------------------------------------------------------------------

/// Which sample-specific correction to subtract from a marginal LL.
#[derive(Clone, Copy, Debug)]
pub enum Correction<'a> {
    Bernoulli,
    Cb,
    Categorical(&'a CatCorrectionTable),
}

impl Correction<'_> {
    /// The raw correction value for a sample (the term subtracted from LL).
    pub fn value<S: Scalar>(&self, x: &Tensor4<S>) -> Result<f64> {
        match self {
            Correction::Bernoulli => Ok(bernoulli_perfect_recon(x)),
            Correction::Cb => Ok(cb_perfect_recon(x)),
            Correction::Categorical(table) => table.correction(x),
        }
    }
}

/// Bias-corrected log-likelihood: `ll` minus the sample-specific correction.
/// The correction depends only on x (and, for categorical, a frozen table) —
/// never on the model being scored.
pub fn apply_correction<S: Scalar>(ll: f64, x: &Tensor4<S>, method: Correction) -> Result<f64> {
    Ok(ll - method.value(x)?)
}
