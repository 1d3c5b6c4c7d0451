//! Outlier scores built on trained models: vanilla marginal log-likelihood
//! (LL), bias-corrected log-likelihood (BC-LL), ensemble variance (EV-LL),
//! WAIC, and Input Complexity (IC) — plus streamed, resumable batch scoring
//! with line-delimited JSON records and CSV export.
//!
//! Orientation contract (fixed per score): LL, BC-LL, WAIC, and IC are
//! higher-is-inlier; EV-LL is lower-is-inlier (in-distribution samples show
//! less disagreement across ensemble members).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dists::{self, CatCorrectionTable, Correction};
use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::scalar::Scalar;
use crate::vae::{VaeModel, Visible};

/// Lossless compressor used for the Input Complexity term. Deflate is the
/// codec inside PNG; using the raw stream avoids the PNG container overhead,
/// which at 32×32 would swamp the content signal.
pub const IC_COMPRESSOR: &str = "deflate";

// -------------------------------------------------------------- orientations

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Ll,
    BcLl,
    EvLl,
    Waic,
    Ic,
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScoreKind::Ll => "ll",
            ScoreKind::BcLl => "bc-ll",
            ScoreKind::EvLl => "ev-ll",
            ScoreKind::Waic => "waic",
            ScoreKind::Ic => "ic",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherIsInlier,
    LowerIsInlier,
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Orientation::HigherIsInlier => write!(f, "higher-is-inlier"),
            Orientation::LowerIsInlier => write!(f, "lower-is-inlier"),
        }
    }
}

/// The fixed inlier orientation of each score type.
pub fn orientation(kind: ScoreKind) -> Orientation {
    match kind {
        ScoreKind::EvLl => Orientation::LowerIsInlier,
        _ => Orientation::HigherIsInlier,
    }
}

// -------------------------------------------------------------------- records

/// One sample's scores. `member_lls` holds the per-member log-likelihoods the
/// ensemble statistics were computed on — bias-corrected by default,
/// raw when requested (`member_basis` says which) — so `waic =
/// mean(member_lls) − ev_ll` is verifiable from the record alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample: usize,
    pub dataset: String,
    pub member_lls: Vec<f64>,
    /// Which likelihood the member list (and EV/WAIC) are computed on:
    /// "bc-ll" (default) or "ll".
    pub member_basis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bc_ll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ev_ll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ic: Option<f64>,
    /// Set when IC was requested: the compressor identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compressor: Option<String>,
    /// Inlier orientation of every score present in this record.
    pub orientations: BTreeMap<String, Orientation>,
}

// ------------------------------------------------------------------- ensemble

/// N ≥ 2 models trained with different seeds but otherwise identical
/// configuration and preprocessing provenance.
pub struct Ensemble<S: Scalar> {
    members: Vec<VaeModel<S>>,
}

impl<S: Scalar> std::fmt::Debug for Ensemble<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble").field("members", &self.members.len()).finish()
    }
}

impl<S: Scalar> Ensemble<S> {
    pub fn new(members: Vec<VaeModel<S>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let reference = {
            let mut c = members[0].config.clone();
            c.seed = 0;
            c
        };
        for (i, m) in members.iter().enumerate() {
            let mut c = m.config.clone();
            c.seed = 0;
            if c != reference {
                return Err(Error::Config(format!(
                    "member {i} config differs from member 0 beyond the seed"
                )));
            }
            if m.meta.preprocessing != members[0].meta.preprocessing {
                return Err(Error::Provenance(format!(
                    "member {i} was trained on {} data, member 0 on {}",
                    m.meta.preprocessing, members[0].meta.preprocessing
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[VaeModel<S>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

// ----------------------------------------------------------------- primitives

/// Population variance (divides by N, not N−1). AUROC is invariant to this
/// monotone-for-fixed-N choice; it is recorded here once for the whole crate.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// WAIC statistic from member log-likelihoods: mean − population variance.
pub fn waic_from_members(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    mean - population_variance(values)
}

/// The perfect-reconstruction correction matching a model's visible
/// distribution. Categorical models need a prebuilt table.
fn correction_method<'a>(
    visible: Visible,
    table: Option<&'a CatCorrectionTable>,
) -> Result<Correction<'a>> {
    match visible {
        Visible::Bernoulli => Ok(Correction::Bernoulli),
        Visible::Cb => Ok(Correction::Cb),
        Visible::Categorical => table.map(Correction::Categorical).ok_or_else(|| {
            Error::Missing(
                "categorical models need a correction table; build one over the training set \
                 with build_cat_correction and pass it to the scorer"
                    .into(),
            )
        }),
    }
}

// --------------------------------------------------------------- point scores

/// Vanilla marginal log-likelihood: the K-sample importance-weighted
/// estimate. Higher is inlier.
pub fn score_ll<S: Scalar>(model: &VaeModel<S>, x: &Tensor4<S>, k: usize, seed: u64) -> Result<f64> {
    model.iwae_ll(x, k, seed)
}

/// Bias-corrected log-likelihood: LL minus the perfect-reconstruction
/// correction for the model's visible distribution, applied post hoc —
/// no retraining. Higher is inlier.
pub fn score_bc_ll<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor4<S>,
    k: usize,
    seed: u64,
    table: Option<&CatCorrectionTable>,
) -> Result<f64> {
    let ll = model.iwae_ll(x, k, seed)?;
    dists::apply_correction(ll, x, correction_method(model.config.visible, table)?)
}

/// Per-member log-likelihoods with derived seeds (`seed_base + index`),
/// optionally bias-corrected (the correction is model-independent, so one
/// evaluation serves every member).
pub fn member_lls<S: Scalar>(
    ensemble: &Ensemble<S>,
    x: &Tensor4<S>,
    k: usize,
    seed_base: u64,
    bias_corrected: bool,
    table: Option<&CatCorrectionTable>,
) -> Result<Vec<f64>> {
    let correction = if bias_corrected {
        let method = correction_method(ensemble.members()[0].config.visible, table)?;
        method.value(x)?
    } else {
        0.0
    };
    ensemble
        .members()
        .iter()
        .enumerate()
        .map(|(i, m)| Ok(m.iwae_ll(x, k, seed_base + i as u64)? - correction))
        .collect()
}

/// Ensemble variance of member log-likelihoods (bias-corrected members by
/// default; `bias_corrected: false` gives the raw-LL variance — the two are
/// equal up to floating-point noise, since the correction is a per-sample
/// constant across members). Lower is inlier.
pub fn score_ev<S: Scalar>(
    ensemble: &Ensemble<S>,
    x: &Tensor4<S>,
    k: usize,
    seed_base: u64,
    bias_corrected: bool,
    table: Option<&CatCorrectionTable>,
) -> Result<f64> {
    Ok(population_variance(&member_lls(
        ensemble,
        x,
        k,
        seed_base,
        bias_corrected,
        table,
    )?))
}

/// WAIC: mean minus population variance of the same member log-likelihoods
/// used by [`score_ev`]. Higher is inlier.
pub fn score_waic<S: Scalar>(
    ensemble: &Ensemble<S>,
    x: &Tensor4<S>,
    k: usize,
    seed_base: u64,
    bias_corrected: bool,
    table: Option<&CatCorrectionTable>,
) -> Result<f64> {
    Ok(waic_from_members(&member_lls(
        ensemble,
        x,
        k,
        seed_base,
        bias_corrected,
        table,
    )?))
}

/// Compressed size of the 8-bit quantized image in bits per dimension, via
/// raw deflate at maximum compression.
pub fn complexity_bits_per_dim<S: Scalar>(x: &Tensor4<S>) -> Result<f64> {
    let bytes: Vec<u8> = x
        .as_slice()
        .iter()
        .map(|v| dists::pixel_to_byte(v.to_f64_c()))
        .collect();
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&bytes)?;
    let compressed = enc.finish()?;
    Ok((compressed.len() * 8) as f64 / x.numel() as f64)
}

/// Input Complexity outcome: the score (absent if the compressor failed),
/// the measured bits/dim, and the compressor identity.
#[derive(Clone, Debug)]
pub struct IcOutcome {
    pub ic: Option<f64>,
    pub bits_per_dim: Option<f64>,
    pub compressor: &'static str,
}

/// Input Complexity: LL (nats) minus the total compressed size converted to
/// nats, `d·L(x)·ln 2`. Higher is inlier. `flip_sign` adds the complexity
/// term instead of subtracting it (the sign convention of the original
/// compression-based score differs from the formula implemented here;
/// both are exposed rather than resolved). Compressor failure yields an
/// absent score, not an error.
pub fn score_ic<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor4<S>,
    k: usize,
    seed: u64,
    flip_sign: bool,
) -> Result<IcOutcome> {
    let ll = model.iwae_ll(x, k, seed)?;
    match complexity_bits_per_dim(x) {
        Ok(bits) => {
            let nats = x.numel() as f64 * bits * std::f64::consts::LN_2;
            let ic = if flip_sign { ll + nats } else { ll - nats };
            Ok(IcOutcome { ic: Some(ic), bits_per_dim: Some(bits), compressor: IC_COMPRESSOR })
        }
        Err(e) => {
            log::warn!("complexity term failed ({e}); IC marked absent");
            Ok(IcOutcome { ic: None, bits_per_dim: None, compressor: IC_COMPRESSOR })
        }
    }
}

// ------------------------------------------------------------- batch scoring

/// What [`score_batch`] scores with: one model or an ensemble (whose first
/// member doubles as the single-model reference for LL/BC-LL/IC).
pub enum Scorer<'a, S: Scalar> {
    Single(&'a VaeModel<S>),
    Ensemble(&'a Ensemble<S>),
}

impl<'a, S: Scalar> Scorer<'a, S> {
    fn reference(&self) -> &'a VaeModel<S> {
        match self {
            Scorer::Single(m) => m,
            Scorer::Ensemble(e) => &e.members()[0],
        }
    }
}

/// Which scores to compute, with shared estimator settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub ll: bool,
    pub bc_ll: bool,
    pub ev_ll: bool,
    pub waic: bool,
    pub ic: bool,
    /// Importance samples per likelihood evaluation.
    pub k: usize,
    /// Base seed; ensemble member i scores with `seed + i`.
    pub seed: u64,
    /// Compute EV/WAIC (and the recorded member list) on raw member LLs
    /// instead of bias-corrected ones.
    pub ev_on_raw: bool,
    /// Flip the IC sign convention (add the complexity term).
    pub ic_flip_sign: bool,
}

impl Default for ScoreRequest {
    fn default() -> Self {
        Self {
            ll: true,
            bc_ll: true,
            ev_ll: false,
            waic: false,
            ic: false,
            k: 100,
            seed: 0,
            ev_on_raw: false,
            ic_flip_sign: false,
        }
    }
}

impl ScoreRequest {
    /// Checks the request is satisfiable by the given scorer (K ≥ 1, at
    /// least one score selected, ensemble scores only with an ensemble).
    pub fn validate<S: Scalar>(&self, scorer: &Scorer<S>) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("score request needs K ≥ 1".into()));
        }
        if (self.ev_ll || self.waic) && matches!(scorer, Scorer::Single(_)) {
            return Err(Error::Config(
                "EV-LL and WAIC are ensemble scores; score with an Ensemble".into(),
            ));
        }
        if !(self.ll || self.bc_ll || self.ev_ll || self.waic || self.ic) {
            return Err(Error::Config("score request selects no scores".into()));
        }
        Ok(())
    }

    fn orientations(&self) -> BTreeMap<String, Orientation> {
        let mut map = BTreeMap::new();
        for (on, kind) in [
            (self.ll, ScoreKind::Ll),
            (self.bc_ll, ScoreKind::BcLl),
            (self.ev_ll, ScoreKind::EvLl),
            (self.waic, ScoreKind::Waic),
            (self.ic, ScoreKind::Ic),
        ] {
            if on {
                map.insert(kind.to_string(), orientation(kind));
            }
        }
        map
    }
}

/// Scores one sample, producing the full record for the requested score set.
/// This is the unit [`score_batch`] streams and the evaluation grid calls
/// directly; it does not touch disk.
pub fn score_sample<S: Scalar>(
    scorer: &Scorer<S>,
    request: &ScoreRequest,
    table: Option<&CatCorrectionTable>,
    dataset: &str,
    sample: usize,
    x: &Tensor4<S>,
) -> Result<ScoreRecord> {
    let reference = scorer.reference();
    let mut record = ScoreRecord {
        sample,
        dataset: dataset.to_string(),
        member_lls: Vec::new(),
        member_basis: if request.ev_on_raw { "ll" } else { "bc-ll" }.to_string(),
        ll: None,
        bc_ll: None,
        ev_ll: None,
        waic: None,
        ic: None,
        compressor: None,
        orientations: request.orientations(),
    };

    let reference_ll = if request.ll || request.bc_ll {
        Some(reference.iwae_ll(x, request.k, request.seed)?)
    } else {
        None
    };
    if request.ll {
        record.ll = reference_ll;
    }
    if request.bc_ll {
        let method = correction_method(reference.config.visible, table)?;
        record.bc_ll = Some(reference_ll.expect("computed above") - method.value(x)?);
    }
    match scorer {
        Scorer::Ensemble(e) => {
            record.member_lls = member_lls(e, x, request.k, request.seed, !request.ev_on_raw, table)?;
            if request.ev_ll {
                record.ev_ll = Some(population_variance(&record.member_lls));
            }
            if request.waic {
                record.waic = Some(waic_from_members(&record.member_lls));
            }
        }
        Scorer::Single(_) => {
            if let Some(ll) = reference_ll {
                record.member_lls = vec![ll];
                record.member_basis = "ll".to_string();
            }
        }
    }
    if request.ic {
        let outcome = score_ic(reference, x, request.k, request.seed, request.ic_flip_sign)?;
        record.ic = outcome.ic;
        record.compressor = Some(outcome.compressor.to_string());
        if outcome.ic.is_none() {
            record.orientations.remove(&ScoreKind::Ic.to_string());
        }
    }
    Ok(record)
}

/// Scores every sample of a dataset, streaming records to `out_path` as
/// line-delimited JSON. If the file already holds a prefix of this run's
/// records (same dataset, samples 0..n in order), scoring resumes after
/// them, so an interrupted run continues instead of restarting.
///
/// Preprocessing provenance between the model(s) and the dataset must match;
/// `override_provenance` reproduces deliberate train/test preprocessing
/// mismatches (an ablation, not a default).
pub fn score_batch<S: Scalar>(
    scorer: &Scorer<S>,
    dataset: &Dataset,
    request: &ScoreRequest,
    table: Option<&CatCorrectionTable>,
    out_path: &Path,
    override_provenance: bool,
) -> Result<Vec<ScoreRecord>> {
    request.validate(scorer)?;
    let reference = scorer.reference();
    if reference.meta.preprocessing != dataset.preprocessing && !override_provenance {
        return Err(Error::Provenance(format!(
            "model trained on {} data, dataset '{}' is {}",
            reference.meta.preprocessing, dataset.name, dataset.preprocessing
        )));
    }
    if reference.config.nc != dataset.nc() && !dataset.is_empty() {
        return Err(Error::Config(format!(
            "model has {} channels, dataset '{}' has {}",
            reference.config.nc,
            dataset.name,
            dataset.nc()
        )));
    }

    // Resume: accept an existing file that is a prefix of this run.
    let mut records: Vec<ScoreRecord> = Vec::new();
    if out_path.exists() {
        let file = std::io::BufReader::new(std::fs::File::open(out_path)?);
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Parse {
                    offset: i,
                    message: format!("resume file {}: line {}: {e}", out_path.display(), i + 1),
                }
            })?;
            if rec.sample != records.len() || rec.dataset != dataset.name {
                return Err(Error::Config(format!(
                    "resume file {} does not match this run: line {} holds sample {} of '{}', \
                     expected sample {} of '{}'",
                    out_path.display(),
                    i + 1,
                    rec.sample,
                    rec.dataset,
                    records.len(),
                    dataset.name
                )));
            }
            records.push(rec);
        }
        if records.len() > dataset.len() {
            return Err(Error::Config(format!(
                "resume file {} holds {} records but dataset '{}' has {} samples",
                out_path.display(),
                records.len(),
                dataset.name,
                dataset.len()
            )));
        }
    }

    let mut out = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_path)?;
    let start = records.len();
    // Parallel over samples within a chunk; emission stays ordered through
    // the single writer.
    const CHUNK: usize = 16;
    let mut next = start;
    while next < dataset.len() {
        let end = (next + CHUNK).min(dataset.len());
        let chunk: Vec<ScoreRecord> = (next..end)
            .into_par_iter()
            .map(|i| {
                let x = dataset.batch(&[i])?.cast::<S>();
                score_sample(scorer, request, table, &dataset.name, i, &x)
            })
            .collect::<Result<_>>()?;
        for rec in chunk {
            serde_json::to_writer(&mut out, &rec)?;
            writeln!(out)?;
            records.push(rec);
        }
        out.flush()?;
        next = end;
    }
    Ok(records)
}

/// CSV export of score records: one row per sample, one column per score,
/// then the member log-likelihoods. Absent scores are empty cells.
pub fn export_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let n_members = records.iter().map(|r| r.member_lls.len()).max().unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "sample,dataset,ll,bc_ll,ev_ll,waic,ic,member_basis")?;
    for i in 0..n_members {
        write!(out, ",member_{i}")?;
    }
    writeln!(out)?;
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sample,
            r.dataset,
            cell(r.ll),
            cell(r.bc_ll),
            cell(r.ev_ll),
            cell(r.waic),
            cell(r.ic),
            r.member_basis
        )?;
        for i in 0..n_members {
            match r.member_lls.get(i) {
                Some(v) => write!(out, ",{v:.17e}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
