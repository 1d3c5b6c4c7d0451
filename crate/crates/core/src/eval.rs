//! Threshold-free outlier-detection metrics (AUROC, AUPRC, FPR@TPR), the
//! all-vs-all train×test grid report, affine-perturbation probes, and
//! wall-clock scoring timings.
//!
//! Metrics follow three conventions, fixed once here: out-of-distribution is
//! the positive class; AUROC uses the Mann-Whitney average-rank treatment of
//! ties; AUPRC is the step-function (average-precision) area, never the
//! optimistic trapezoid. All three are stored as fractions in `[0, 1]` —
//! reports format them ×100.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dists::CatCorrectionTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::{
    orientation, score_bc_ll, score_sample, Ensemble, Orientation, ScoreKind, ScoreRecord,
    ScoreRequest, Scorer,
};
use crate::Tensor4f;

/// The TPR level the headline FPR metric is quoted at.
pub const DEFAULT_TPR_TARGET: f64 = 0.80;

// -------------------------------------------------------------------- metrics

/// Inlier and outlier score samples plus the orientation needed to compare
/// them. Construction validates both sides are non-empty and finite.
#[derive(Clone, Debug)]
pub struct LabeledScores {
    inlier: Vec<f64>,
    outlier: Vec<f64>,
    orientation: Orientation,
}

impl LabeledScores {
    pub fn new(inlier: Vec<f64>, outlier: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if inlier.is_empty() || outlier.is_empty() {
            return Err(Error::Config(format!(
                "metrics need scores on both sides ({} inlier, {} outlier)",
                inlier.len(),
                outlier.len()
            )));
        }
        if inlier.iter().chain(&outlier).any(|v| !v.is_finite()) {
            return Err(Error::Domain("scores must be finite".into()));
        }
        Ok(Self { inlier, outlier, orientation })
    }

    /// Scores mapped so that larger ⇒ more outlier-like, as
    /// `(negatives, positives)` — OOD is the positive class.
    fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        let flip: fn(&f64) -> f64 = match self.orientation {
            Orientation::HigherIsInlier => |v| -v,
            Orientation::LowerIsInlier => |v| *v,
        };
        (
            self.inlier.iter().map(flip).collect(),
            self.outlier.iter().map(flip).collect(),
        )
    }

    /// Pooled `(score, is_outlier)` pairs sorted by descending score (most
    /// outlier-like first once normalized).
    fn pooled_descending(&self) -> Vec<(f64, bool)> {
        let (neg, pos) = self.normalized();
        let mut pooled: Vec<(f64, bool)> = neg
            .into_iter()
            .map(|v| (v, false))
            .chain(pos.into_iter().map(|v| (v, true)))
            .collect();
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
        pooled
    }
}

/// Area under the ROC curve: the Mann-Whitney statistic
/// `P(outlier > inlier) + ½·P(tie)` computed by rank summation with average
/// ranks for tied groups.
pub fn auroc(s: &LabeledScores) -> Result<f64> {
    let pooled = {
        let mut p = s.pooled_descending();
        p.reverse(); // ascending for 1-based ranks
        p
    };
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Tied block occupies 1-based ranks i+1 ..= j; each member gets the mean.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for entry in &pooled[i..j] {
            if entry.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = s.outlier.len() as f64;
    let n = s.inlier.len() as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve by the step (average-precision)
/// convention: `Σ (Rₖ − Rₖ₋₁)·Pₖ` over distinct thresholds in descending
/// order, with OOD positive.
pub fn auprc(s: &LabeledScores) -> Result<f64> {
    let pooled = s.pooled_descending();
    let total_pos = s.outlier.len() as f64;
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Smallest false-positive rate achievable at true-positive rate ≥
/// `tpr_target`. Both rates are monotone along the threshold sweep, so the
/// first qualifying threshold (scanning from the strictest) is optimal.
pub fn fpr_at_tpr(s: &LabeledScores, tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!(
            "TPR target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let pooled = s.pooled_descending();
    let total_pos = s.outlier.len() as f64;
    let total_neg = s.inlier.len() as f64;
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        if tp / total_pos >= tpr_target {
            return Ok(fp / total_neg);
        }
        i = j;
    }
    unreachable!("TPR reaches 1.0 at the loosest threshold, and target ≤ 1.0")
}

// ------------------------------------------------------------------ transforms

/// Affine image perturbations for likelihood-sensitivity probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// Per-sample random wrap-around shift of 0..=`max_shift` pixels on each
    /// axis. `max_shift` 0 degenerates to the identity; at most 10.
    Translate { max_shift: usize },
    Vflip,
    /// 90° anticlockwise rotation.
    Rot90,
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::Identity => write!(f, "identity"),
            Transform::Translate { max_shift } => write!(f, "translate-wrap-{max_shift}"),
            Transform::Vflip => write!(f, "vflip"),
            Transform::Rot90 => write!(f, "rot90"),
        }
    }
}

/// Wrap-around shift: output row `r` reads input row `(r + dy) mod H`,
/// likewise for columns.
pub fn translate_wrap(x: &Tensor4f, dy: usize, dx: usize) -> Tensor4f {
    let [_, h, w, _] = x.shape();
    Tensor4f::from_fn(x.shape(), |b, r, c, ch| {
        x.at(b, (r + dy) % h, (c + dx) % w, ch)
    })
}

/// Vertical flip (top row becomes bottom row).
pub fn vflip(x: &Tensor4f) -> Tensor4f {
    let [_, h, _, _] = x.shape();
    Tensor4f::from_fn(x.shape(), |b, r, c, ch| x.at(b, h - 1 - r, c, ch))
}

/// 90° anticlockwise rotation of a square image: the right edge becomes the
/// top edge (`out[r][c] = in[c][W−1−r]`).
pub fn rot90ccw(x: &Tensor4f) -> Tensor4f {
    let [_, h, w, _] = x.shape();
    assert_eq!(h, w, "rotation is defined for square images");
    Tensor4f::from_fn(x.shape(), |b, r, c, ch| x.at(b, c, w - 1 - r, ch))
}

fn apply_transform(x: &Tensor4f, transform: Transform, rng: &mut ChaCha8Rng) -> Tensor4f {
    match transform {
        Transform::Identity => x.clone(),
        Transform::Translate { max_shift } => {
            let dy = rng.gen_range(0..=max_shift);
            let dx = rng.gen_range(0..=max_shift);
            translate_wrap(x, dy, dx)
        }
        Transform::Vflip => vflip(x),
        Transform::Rot90 => rot90ccw(x),
    }
}

// ----------------------------------------------------------------------- probe

/// Paired score distributions from a perturbation probe: the bias-corrected
/// log-likelihood of every sample before and after the transform, plus how
/// well that score separates the two (original as inlier).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeResult {
    pub transform: String,
    pub original: Vec<f64>,
    pub transformed: Vec<f64>,
    pub auroc: f64,
}

/// Scores `dataset` and its transformed copy with BC-LL under the scorer's
/// reference model, pairing estimator seeds per sample so the identity
/// transform yields literally identical distributions.
pub fn perturb_probe<S: Scalar>(
    scorer: &Scorer<S>,
    dataset: &Dataset,
    transform: Transform,
    table: Option<&CatCorrectionTable>,
    k: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if let Transform::Translate { max_shift } = transform {
        if max_shift > 10 {
            return Err(Error::Config(format!(
                "wrap-around shifts are probed at 0..=10 pixels, got {max_shift}"
            )));
        }
    }
    if dataset.is_empty() {
        return Err(Error::Config("cannot probe an empty dataset".into()));
    }
    let model = match scorer {
        Scorer::Single(m) => *m,
        Scorer::Ensemble(e) => &e.members()[0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f62); // probe-specific stream
    let mut original = Vec::with_capacity(dataset.len());
    let mut transformed = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let x = dataset.batch(&[i])?;
        let y = apply_transform(&x, transform, &mut rng);
        let sample_seed = seed.wrapping_add(i as u64);
        original.push(score_bc_ll(model, &x.cast::<S>(), k, sample_seed, table)?);
        transformed.push(score_bc_ll(model, &y.cast::<S>(), k, sample_seed, table)?);
    }
    let auroc = auroc(&LabeledScores::new(
        original.clone(),
        transformed.clone(),
        orientation(ScoreKind::BcLl),
    )?)?;
    Ok(ProbeResult {
        transform: transform.to_string(),
        original,
        transformed,
        auroc,
    })
}

// ------------------------------------------------------------------------ grid

/// One training column of the evaluation grid: the ensemble trained on that
/// dataset and, for categorical models, its correction table.
pub struct GridColumn<'a, S: Scalar> {
    pub ensemble: &'a Ensemble<S>,
    pub table: Option<&'a CatCorrectionTable>,
}

/// One (train, test, score) grid entry. Metrics are fractions in `[0, 1]`;
/// a cell that could not be computed carries the reason instead — requested
/// cells are never silently dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub train: String,
    pub test: String,
    pub score: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpr_at_80_tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-(train, score) arithmetic mean over the successful off-diagonal test
/// rows — the "average AUROC across all test datasets" row of the figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub train: String,
    pub score: String,
    pub cells_counted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fpr_at_80_tpr: Option<f64>,
}

/// Wall-clock cost of one scoring method, normalized to 500 samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTiming {
    pub score: String,
    pub samples_timed: usize,
    pub seconds_per_500: f64,
}

/// The all-vs-all evaluation grid plus its average rows and method timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub cells: Vec<GridCell>,
    pub averages: Vec<AverageRow>,
    pub timing: Vec<ScoreTiming>,
}

fn request_for(kinds: &[ScoreKind], k: usize, seed: u64) -> ScoreRequest {
    ScoreRequest {
        ll: kinds.contains(&ScoreKind::Ll),
        bc_ll: kinds.contains(&ScoreKind::BcLl),
        ev_ll: kinds.contains(&ScoreKind::EvLl),
        waic: kinds.contains(&ScoreKind::Waic),
        ic: kinds.contains(&ScoreKind::Ic),
        k,
        seed,
        ev_on_raw: false,
        ic_flip_sign: false,
    }
}

fn record_score(r: &ScoreRecord, kind: ScoreKind) -> Option<f64> {
    match kind {
        ScoreKind::Ll => r.ll,
        ScoreKind::BcLl => r.bc_ll,
        ScoreKind::EvLl => r.ev_ll,
        ScoreKind::Waic => r.waic,
        ScoreKind::Ic => r.ic,
    }
}

/// Scores every sample of one test set under one column's ensemble.
fn score_set<S: Scalar>(
    column: &GridColumn<'_, S>,
    dataset: &Dataset,
    request: &ScoreRequest,
) -> Result<Vec<ScoreRecord>> {
    let scorer = Scorer::Ensemble(column.ensemble);
    let reference = &column.ensemble.members()[0];
    if reference.meta.preprocessing != dataset.preprocessing {
        return Err(Error::Provenance(format!(
            "ensemble trained on {} data, test set '{}' is {}",
            reference.meta.preprocessing, dataset.name, dataset.preprocessing
        )));
    }
    if reference.config.nc != dataset.nc() {
        return Err(Error::Config(format!(
            "ensemble has {} channels, test set '{}' has {}",
            reference.config.nc,
            dataset.name,
            dataset.nc()
        )));
    }
    (0..dataset.len())
        .map(|i| {
            let x = dataset.batch(&[i])?.cast::<S>();
            score_sample(&scorer, request, column.table, &dataset.name, i, &x)
        })
        .collect()
}

/// Times one scoring method on up to 500 samples of `dataset`, extrapolating
/// the wall-clock cost to exactly 500.
pub fn time_scoring<S: Scalar>(
    scorer: &Scorer<S>,
    dataset: &Dataset,
    kind: ScoreKind,
    table: Option<&CatCorrectionTable>,
    k: usize,
    seed: u64,
) -> Result<ScoreTiming> {
    let n = dataset.len().min(500);
    if n == 0 {
        return Err(Error::Config("cannot time scoring on an empty dataset".into()));
    }
    let request = request_for(&[kind], k, seed);
    request.validate(scorer)?;
    let start = Instant::now();
    for i in 0..n {
        let x = dataset.batch(&[i])?.cast::<S>();
        score_sample(scorer, &request, table, &dataset.name, i, &x)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(ScoreTiming {
        score: kind.to_string(),
        samples_timed: n,
        seconds_per_500: elapsed * 500.0 / n as f64,
    })
}

/// Builds the full train×test×score grid: each requested train set's
/// ensemble scores every test set, its own test split provides the inlier
/// side, and every cell gets AUROC / AUPRC / FPR@80%TPR (or an explicit
/// failure reason). Timings are measured on the first column's own test set.
///
/// Grid cells are independent, so the scoring passes run in parallel; the
/// report is assembled by a single-threaded reduction afterwards.
pub fn build_grid<S: Scalar>(
    ensembles: &BTreeMap<String, GridColumn<'_, S>>,
    trains: &[String],
    test_sets: &[Dataset],
    scores: &[ScoreKind],
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::Config("no scores requested for the grid".into()));
    }
    let request = request_for(scores, k, seed);
    let mut columns = Vec::with_capacity(trains.len());
    for train in trains {
        let column = ensembles.get(train).ok_or_else(|| {
            Error::Missing(format!("no ensemble for requested train set '{train}'"))
        })?;
        let own = test_sets
            .iter()
            .position(|d| d.name == *train)
            .ok_or_else(|| {
                Error::Missing(format!(
                    "no test split named '{train}' to provide the inlier side"
                ))
            })?;
        request.validate(&Scorer::Ensemble(column.ensemble))?;
        columns.push((train.clone(), column, own));
    }

    // Score all (column, test set) pairs in parallel.
    let pairs: Vec<(usize, usize)> = (0..columns.len())
        .flat_map(|ci| (0..test_sets.len()).map(move |ti| (ci, ti)))
        .collect();
    let scored: Vec<std::result::Result<Vec<ScoreRecord>, String>> = pairs
        .par_iter()
        .map(|&(ci, ti)| {
            score_set(columns[ci].1, &test_sets[ti], &request).map_err(|e| e.to_string())
        })
        .collect();
    let records = |ci: usize, ti: usize| &scored[ci * test_sets.len() + ti];

    let mut cells = Vec::with_capacity(columns.len() * test_sets.len() * scores.len());
    for (ci, (train, _, own)) in columns.iter().enumerate() {
        for (ti, test) in test_sets.iter().enumerate() {
            for &kind in scores {
                let mut cell = GridCell {
                    train: train.clone(),
                    test: test.name.clone(),
                    score: kind.to_string(),
                    auroc: None,
                    auprc: None,
                    fpr_at_80_tpr: None,
                    error: None,
                };
                let outcome = (|| -> std::result::Result<(f64, f64, f64), String> {
                    let inlier = records(ci, *own).as_ref().map_err(Clone::clone)?;
                    let outlier = records(ci, ti).as_ref().map_err(Clone::clone)?;
                    let extract = |recs: &[ScoreRecord]| -> std::result::Result<Vec<f64>, String> {
                        recs.iter()
                            .map(|r| {
                                record_score(r, kind).ok_or_else(|| {
                                    format!("score {kind} absent for sample {}", r.sample)
                                })
                            })
                            .collect()
                    };
                    let s = LabeledScores::new(extract(inlier)?, extract(outlier)?, orientation(kind))
                        .map_err(|e| e.to_string())?;
                    Ok((
                        auroc(&s).map_err(|e| e.to_string())?,
                        auprc(&s).map_err(|e| e.to_string())?,
                        fpr_at_tpr(&s, DEFAULT_TPR_TARGET).map_err(|e| e.to_string())?,
                    ))
                })();
                match outcome {
                    Ok((a, p, f)) => {
                        cell.auroc = Some(a);
                        cell.auprc = Some(p);
                        cell.fpr_at_80_tpr = Some(f);
                    }
                    Err(e) => cell.error = Some(e),
                }
                cells.push(cell);
            }
        }
    }

    // Average rows over the successful off-diagonal cells.
    let mut averages = Vec::new();
    for (train, _, _) in &columns {
        for &kind in scores {
            let picked: Vec<&GridCell> = cells
                .iter()
                .filter(|c| {
                    c.train == *train
                        && c.test != *train
                        && c.score == kind.to_string()
                        && c.error.is_none()
                })
                .collect();
            let mean = |get: fn(&GridCell) -> Option<f64>| -> Option<f64> {
                if picked.is_empty() {
                    None
                } else {
                    Some(picked.iter().filter_map(|c| get(c)).sum::<f64>() / picked.len() as f64)
                }
            };
            averages.push(AverageRow {
                train: train.clone(),
                score: kind.to_string(),
                cells_counted: picked.len(),
                auroc: mean(|c| c.auroc),
                auprc: mean(|c| c.auprc),
                fpr_at_80_tpr: mean(|c| c.fpr_at_80_tpr),
            });
        }
    }

    // Method timings on the first column's own test split.
    let mut timing = Vec::new();
    if let Some((_, column, own)) = columns.first() {
        for &kind in scores {
            match time_scoring(
                &Scorer::Ensemble(column.ensemble),
                &test_sets[*own],
                kind,
                column.table,
                k,
                seed,
            ) {
                Ok(t) => timing.push(t),
                Err(e) => log::warn!("timing {kind} failed: {e}"),
            }
        }
    }

    Ok(EvalReport { k, seed, cells, averages, timing })
}

// ---------------------------------------------------------------------- report

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Grid CSV in the figure layout (columns = train sets, rows = test sets,
    /// one block per score), numbers formatted ×100 with two decimals, the
    /// average row last. Failed cells render their reason.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "train,test,score,auroc_x100,auprc_x100,fpr_at_80tpr_x100,error")?;
        let fmt = |v: Option<f64>| v.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                csv_escape(&c.train),
                csv_escape(&c.test),
                c.score,
                fmt(c.auroc),
                fmt(c.auprc),
                fmt(c.fpr_at_80_tpr),
                csv_escape(c.error.as_deref().unwrap_or(""))
            )?;
        }
        for a in &self.averages {
            writeln!(
                w,
                "{},average,{},{},{},{},",
                csv_escape(&a.train),
                a.score,
                fmt(a.auroc),
                fmt(a.auprc),
                fmt(a.fpr_at_80_tpr),
            )?;
        }
        Ok(())
    }
}
