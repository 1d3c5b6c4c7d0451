//! Integration tests for the evaluation harness: metric hand values, exact
//! equivalence against brute-force pair/threshold oracles, orientation
//! coherence, transform semantics, perturbation probes, and the grid report.

mod common;

use std::collections::BTreeSet;

use rand::Rng;
use vaeood::data::{Dataset, Preprocessing, SplitTag};
use vaeood::eval::{
    auprc, auroc, build_grid, fpr_at_tpr, perturb_probe, rot90ccw, time_scoring, translate_wrap,
    vflip, EvalReport, GridColumn, LabeledScores, Transform,
};
use vaeood::nn::Tensor4;
use vaeood::scoring::{Ensemble, Orientation, ScoreKind, Scorer};
use vaeood::vae::{VaeConfig, VaeModel, Visible};
use vaeood::{Tensor4f, TrainScalar};

// ------------------------------------------------------------------- fixtures

fn fresh(seed: u64) -> VaeModel<TrainScalar> {
    VaeModel::new(VaeConfig {
        nz: 3,
        nf: 4,
        nc: 1,
        visible: Visible::Cb,
        seed,
        ..VaeConfig::default()
    })
    .unwrap()
}

fn fresh_ensemble(seed: u64) -> Ensemble<TrainScalar> {
    Ensemble::new(vec![fresh(seed), fresh(seed + 1)]).unwrap()
}

fn rand_image(seed: u64) -> Tensor4f {
    let mut rng = common::rng(seed);
    Tensor4::from_fn([1, 32, 32, 1], |_, _, _, _| rng.gen_range(0.0..1.0))
}

fn rand_dataset(n: usize, name: &str, seed: u64) -> Dataset {
    Dataset::new(
        name,
        (0..n).map(|i| rand_image(seed + i as u64)).collect(),
        SplitTag::Test,
        Preprocessing::None,
    )
    .unwrap()
}

fn scores(
    inlier: &[f64],
    outlier: &[f64],
    orientation: Orientation,
) -> LabeledScores {
    LabeledScores::new(inlier.to_vec(), outlier.to_vec(), orientation).unwrap()
}

// ------------------------------------------------------- brute-force oracles

/// Maps scores so that larger ⇒ more outlier-like.
fn oriented(values: &[f64], orientation: Orientation) -> Vec<f64> {
    match orientation {
        Orientation::HigherIsInlier => values.iter().map(|v| -v).collect(),
        Orientation::LowerIsInlier => values.to_vec(),
    }
}

/// AUROC by exhaustive pair counting: concordant pairs count 1, ties ½.
fn oracle_auroc(inlier: &[f64], outlier: &[f64], o: Orientation) -> f64 {
    let neg = oriented(inlier, o);
    let pos = oriented(outlier, o);
    let mut acc = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                acc += 1.0;
            } else if p == n {
                acc += 0.5;
            }
        }
    }
    acc / (pos.len() as f64 * neg.len() as f64)
}

/// Distinct candidate thresholds, strictest first.
fn descending_thresholds(neg: &[f64], pos: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = neg.iter().chain(pos).copied().collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// AUPRC by recounting precision and recall from scratch at every distinct
/// threshold (predicate: score ≥ t), step-summed in descending order.
fn oracle_auprc(inlier: &[f64], outlier: &[f64], o: Orientation) -> f64 {
    let neg = oriented(inlier, o);
    let pos = oriented(outlier, o);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for &t in &descending_thresholds(&neg, &pos) {
        let tp = pos.iter().filter(|&&v| v >= t).count() as f64;
        let fp = neg.iter().filter(|&&v| v >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    ap
}

/// FPR@TPR by exhaustive sweep: minimum FPR over every threshold that
/// reaches the TPR target.
fn oracle_fpr_at_tpr(inlier: &[f64], outlier: &[f64], o: Orientation, target: f64) -> f64 {
    let neg = oriented(inlier, o);
    let pos = oriented(outlier, o);
    let mut best = f64::INFINITY;
    for &t in &descending_thresholds(&neg, &pos) {
        let tp = pos.iter().filter(|&&v| v >= t).count() as f64;
        let fp = neg.iter().filter(|&&v| v >= t).count() as f64;
        if tp / pos.len() as f64 >= target {
            best = best.min(fp / neg.len() as f64);
        }
    }
    best
}

// ------------------------------------------------------------- metric values

#[test]
fn auroc_hand_values() {
    // Perfect separation, both orientations.
    let s = scores(&[5.0, 6.0], &[1.0, 2.0], Orientation::HigherIsInlier);
    assert_eq!(auroc(&s).unwrap(), 1.0);
    let s = scores(&[1.0, 2.0], &[5.0, 6.0], Orientation::LowerIsInlier);
    assert_eq!(auroc(&s).unwrap(), 1.0);

    // Four-pair hand case: 3 of 4 (outlier, inlier) pairs rank the outlier
    // as more outlier-like.
    let s = scores(&[0.9, 0.8], &[0.7, 0.85], Orientation::HigherIsInlier);
    assert_eq!(auroc(&s).unwrap(), 0.75);

    // Pure ties.
    let s = scores(&[0.3, 0.3], &[0.3, 0.3, 0.3], Orientation::HigherIsInlier);
    assert_eq!(auroc(&s).unwrap(), 0.5);
}

#[test]
fn auprc_hand_values() {
    let s = scores(&[5.0, 6.0], &[1.0, 2.0], Orientation::HigherIsInlier);
    assert_eq!(auprc(&s).unwrap(), 1.0);

    // Same four points as the AUROC hand case; the exhaustive sweep gives
    // 1·0.5 + ⅔·0.5 = 5/6.
    let s = scores(&[0.9, 0.8], &[0.7, 0.85], Orientation::HigherIsInlier);
    assert!((auprc(&s).unwrap() - 5.0 / 6.0).abs() <= 1e-12);
    assert_eq!(
        auprc(&s).unwrap(),
        oracle_auprc(&[0.9, 0.8], &[0.7, 0.85], Orientation::HigherIsInlier)
    );
}

#[test]
fn fpr_at_tpr_hand_values() {
    let s = scores(&[5.0, 6.0], &[1.0, 2.0], Orientation::HigherIsInlier);
    assert_eq!(fpr_at_tpr(&s, 0.80).unwrap(), 0.0);

    // Interleaved hand case: walking thresholds from the strictest, TPR
    // first reaches 0.8 when 4/5 outliers are caught, at which point 3/5
    // inliers are false positives.
    let inlier = [1.0, 2.0, 3.0, 4.0, 5.0];
    let outlier = [0.5, 1.5, 2.5, 3.5, 4.5];
    let s = scores(&inlier, &outlier, Orientation::HigherIsInlier);
    assert_eq!(fpr_at_tpr(&s, 0.80).unwrap(), 0.6);
    assert_eq!(
        fpr_at_tpr(&s, 0.80).unwrap(),
        oracle_fpr_at_tpr(&inlier, &outlier, Orientation::HigherIsInlier, 0.80)
    );
}

#[test]
fn metrics_reject_degenerate_inputs() {
    assert!(LabeledScores::new(vec![], vec![1.0], Orientation::LowerIsInlier).is_err());
    assert!(LabeledScores::new(vec![1.0], vec![], Orientation::LowerIsInlier).is_err());
    assert!(
        LabeledScores::new(vec![f64::NAN], vec![1.0], Orientation::LowerIsInlier).is_err()
    );
    assert!(
        LabeledScores::new(vec![1.0], vec![f64::INFINITY], Orientation::LowerIsInlier).is_err()
    );

    let s = scores(&[1.0], &[2.0], Orientation::LowerIsInlier);
    assert!(fpr_at_tpr(&s, 0.0).is_err());
    assert!(fpr_at_tpr(&s, 1.2).is_err());
    assert!(fpr_at_tpr(&s, 1.0).is_ok());
}

#[test]
fn metrics_match_brute_force_oracles_on_random_sets() {
    let mut rng = common::rng(2024);
    for case in 0..500 {
        let n_in = rng.gen_range(1..=30);
        let n_out = rng.gen_range(1..=30);
        // Half the cases quantize scores to force heavy tie structure.
        let quantized = rng.gen_bool(0.5);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let v: f64 = rng.gen_range(-3.0..3.0);
            if quantized {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        };
        let inlier: Vec<f64> = (0..n_in).map(|_| draw(&mut rng)).collect();
        let outlier: Vec<f64> = (0..n_out).map(|_| draw(&mut rng)).collect();
        let orientation = if rng.gen_bool(0.5) {
            Orientation::HigherIsInlier
        } else {
            Orientation::LowerIsInlier
        };
        let target = *[0.5, 0.8, 1.0].iter().nth(rng.gen_range(0..3)).unwrap();

        let s = scores(&inlier, &outlier, orientation);
        let (a, p, f) = (
            auroc(&s).unwrap(),
            auprc(&s).unwrap(),
            fpr_at_tpr(&s, target).unwrap(),
        );
        let (oa, op, of) = (
            oracle_auroc(&inlier, &outlier, orientation),
            oracle_auprc(&inlier, &outlier, orientation),
            oracle_fpr_at_tpr(&inlier, &outlier, orientation, target),
        );
        assert!((a - oa).abs() <= 1e-12, "case {case}: auroc {a} vs oracle {oa}");
        assert!((p - op).abs() <= 1e-12, "case {case}: auprc {p} vs oracle {op}");
        assert!((f - of).abs() <= 1e-12, "case {case}: fpr {f} vs oracle {of}");
        assert!((0.0..=1.0).contains(&a));
        assert!((0.0..=1.0).contains(&p));
        assert!((0.0..=1.0).contains(&f));
    }
}

#[test]
fn balanced_random_scores_sit_at_the_chance_baselines() {
    let mut rng = common::rng(7);
    let inlier: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let outlier: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s = scores(&inlier, &outlier, Orientation::HigherIsInlier);
    // AUPRC of an uninformative score equals the positive prevalence (0.5
    // for balanced classes); AUROC sits at 0.5; at total overlap the FPR
    // needed to reach any TPR level is that level itself.
    assert!((auprc(&s).unwrap() - 0.5).abs() <= 0.05);
    assert!((auroc(&s).unwrap() - 0.5).abs() <= 0.02);
    assert!((fpr_at_tpr(&s, 0.80).unwrap() - 0.80).abs() <= 0.03);
}

#[test]
fn negating_scores_and_flipping_orientation_changes_nothing() {
    let mut rng = common::rng(99);
    for _ in 0..50 {
        let inlier: Vec<f64> = (0..rng.gen_range(2..20)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let outlier: Vec<f64> = (0..rng.gen_range(2..20)).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let s = scores(&inlier, &outlier, Orientation::HigherIsInlier);

        let neg_in: Vec<f64> = inlier.iter().map(|v| -v).collect();
        let neg_out: Vec<f64> = outlier.iter().map(|v| -v).collect();
        let flipped = scores(&neg_in, &neg_out, Orientation::LowerIsInlier);

        assert_eq!(auroc(&s).unwrap(), auroc(&flipped).unwrap());
        assert_eq!(auprc(&s).unwrap(), auprc(&flipped).unwrap());
        assert_eq!(
            fpr_at_tpr(&s, 0.80).unwrap(),
            fpr_at_tpr(&flipped, 0.80).unwrap()
        );

        // Negating WITHOUT flipping the flag reverses the ranking instead.
        let reversed = scores(&neg_in, &neg_out, Orientation::HigherIsInlier);
        assert!(
            (auroc(&reversed).unwrap() - (1.0 - auroc(&s).unwrap())).abs() <= 1e-12,
            "sign flip should mirror AUROC around ½"
        );
    }
}

#[test]
fn auroc_is_invariant_under_strictly_increasing_transforms() {
    let mut rng = common::rng(41);
    for _ in 0..50 {
        // Coarse grid keeps distinct scores well separated, so exp stays
        // strictly increasing through floating point.
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            rng.gen_range(-5_000i64..5_000) as f64 * 1e-3
        };
        let inlier: Vec<f64> = (0..rng.gen_range(2..25)).map(|_| draw(&mut rng)).collect();
        let outlier: Vec<f64> = (0..rng.gen_range(2..25)).map(|_| draw(&mut rng)).collect();
        let base = auroc(&scores(&inlier, &outlier, Orientation::HigherIsInlier)).unwrap();

        for map in [|v: f64| v.exp(), |v: f64| 2.5 * v + 7.0] {
            let mapped_in: Vec<f64> = inlier.iter().map(|&v| map(v)).collect();
            let mapped_out: Vec<f64> = outlier.iter().map(|&v| map(v)).collect();
            let mapped =
                auroc(&scores(&mapped_in, &mapped_out, Orientation::HigherIsInlier)).unwrap();
            assert!(
                (base - mapped).abs() <= 1e-12,
                "monotone transform moved AUROC: {base} vs {mapped}"
            );
        }
    }
}

// ------------------------------------------------------------------ transforms

#[test]
fn transform_pixel_semantics() {
    let x = rand_image(5);

    // Wrap-around translation: output (r, c) reads input (r+dy, c+dx).
    let t = translate_wrap(&x, 3, 7);
    assert_eq!(t.at(0, 0, 0, 0), x.at(0, 3, 7, 0));
    assert_eq!(t.at(0, 30, 28, 0), x.at(0, (30 + 3) % 32, (28 + 7) % 32, 0));
    // Shifting by the full image size wraps to the identity.
    assert_eq!(translate_wrap(&x, 32, 32).as_slice(), x.as_slice());
    assert_eq!(translate_wrap(&x, 0, 0).as_slice(), x.as_slice());

    // Vertical flip is an involution and swaps top for bottom.
    let f = vflip(&x);
    assert_eq!(f.at(0, 0, 4, 0), x.at(0, 31, 4, 0));
    assert_eq!(vflip(&f).as_slice(), x.as_slice());

    // Anticlockwise quarter turn: the top-right corner lands top-left, and
    // four turns restore the image.
    let r = rot90ccw(&x);
    assert_eq!(r.at(0, 0, 0, 0), x.at(0, 0, 31, 0));
    assert_eq!(r.at(0, 5, 2, 0), x.at(0, 2, 31 - 5, 0));
    let r4 = rot90ccw(&rot90ccw(&rot90ccw(&rot90ccw(&x))));
    assert_eq!(r4.as_slice(), x.as_slice());
}

#[test]
fn identity_probe_cannot_separate_anything() {
    let model = fresh(11);
    let dataset = rand_dataset(6, "probe", 900);
    let result = perturb_probe(
        &Scorer::Single(&model),
        &dataset,
        Transform::Identity,
        None,
        4,
        17,
    )
    .unwrap();
    assert_eq!(result.transform, "identity");
    assert_eq!(result.original.len(), 6);
    // Paired seeds make the two distributions literally identical…
    assert_eq!(result.original, result.transformed);
    // …so the separation is exactly chance.
    assert_eq!(result.auroc, 0.5);

    // A zero-pixel translation degenerates to the identity.
    let zero_shift = perturb_probe(
        &Scorer::Single(&model),
        &dataset,
        Transform::Translate { max_shift: 0 },
        None,
        4,
        17,
    )
    .unwrap();
    assert_eq!(zero_shift.original, result.original);
    assert_eq!(zero_shift.transformed, result.transformed);
    assert_eq!(zero_shift.auroc, 0.5);
}

#[test]
fn probe_validates_its_inputs() {
    let model = fresh(11);
    let dataset = rand_dataset(2, "probe", 910);
    let err = perturb_probe(
        &Scorer::Single(&model),
        &dataset,
        Transform::Translate { max_shift: 11 },
        None,
        2,
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("0..=10"), "{err}");

    let empty = Dataset::new("void", vec![], SplitTag::Test, Preprocessing::None).unwrap();
    assert!(perturb_probe(
        &Scorer::Single(&model),
        &empty,
        Transform::Vflip,
        None,
        2,
        0
    )
    .is_err());
}

#[test]
fn geometric_probes_produce_finite_paired_scores() {
    let ensemble = fresh_ensemble(40);
    let dataset = rand_dataset(4, "probe", 920);
    for transform in [
        Transform::Vflip,
        Transform::Rot90,
        Transform::Translate { max_shift: 10 },
    ] {
        let result =
            perturb_probe(&Scorer::Ensemble(&ensemble), &dataset, transform, None, 2, 3).unwrap();
        assert_eq!(result.original.len(), dataset.len());
        assert_eq!(result.transformed.len(), dataset.len());
        assert!(result
            .original
            .iter()
            .chain(&result.transformed)
            .all(|v| v.is_finite()));
        assert!((0.0..=1.0).contains(&result.auroc));
    }
}

// ------------------------------------------------------------------------ grid

fn grid_fixture() -> (Vec<Ensemble<TrainScalar>>, Vec<Dataset>) {
    let ensembles = vec![fresh_ensemble(50), fresh_ensemble(60)];
    let test_sets = vec![
        rand_dataset(4, "alpha", 1000),
        rand_dataset(4, "beta", 2000),
        rand_dataset(5, "gamma", 3000),
    ];
    (ensembles, test_sets)
}

fn grid_columns<'a>(
    ensembles: &'a [Ensemble<TrainScalar>],
) -> std::collections::BTreeMap<String, GridColumn<'a, TrainScalar>> {
    let mut map = std::collections::BTreeMap::new();
    map.insert("alpha".to_string(), GridColumn { ensemble: &ensembles[0], table: None });
    map.insert("beta".to_string(), GridColumn { ensemble: &ensembles[1], table: None });
    map
}

#[test]
fn grid_covers_every_requested_cell() {
    let (ensembles, test_sets) = grid_fixture();
    let trains = vec!["alpha".to_string(), "beta".to_string()];
    let kinds = [ScoreKind::Ll, ScoreKind::EvLl];
    let report = build_grid(&grid_columns(&ensembles), &trains, &test_sets, &kinds, 2, 5).unwrap();

    assert_eq!(report.cells.len(), 2 * 3 * 2);
    let mut seen = BTreeSet::new();
    for cell in &report.cells {
        assert!(seen.insert((cell.train.clone(), cell.test.clone(), cell.score.clone())));
        assert!(cell.error.is_none(), "unexpected failure: {:?}", cell.error);
        for v in [cell.auroc, cell.auprc, cell.fpr_at_80_tpr] {
            let v = v.unwrap();
            assert!((0.0..=1.0).contains(&v), "metrics are stored as fractions");
        }
        // Same-dataset comparisons cannot be separated better than chance.
        if cell.train == cell.test {
            assert_eq!(cell.auroc, Some(0.5));
        }
    }
    for train in ["alpha", "beta"] {
        for test in ["alpha", "beta", "gamma"] {
            for score in ["ll", "ev-ll"] {
                assert!(seen.contains(&(
                    train.to_string(),
                    test.to_string(),
                    score.to_string()
                )));
            }
        }
    }

    // Average rows: arithmetic mean over the off-diagonal cells, recomputed
    // here independently.
    assert_eq!(report.averages.len(), 2 * 2);
    for avg in &report.averages {
        let picked: Vec<&vaeood::eval::GridCell> = report
            .cells
            .iter()
            .filter(|c| c.train == avg.train && c.test != avg.train && c.score == avg.score)
            .collect();
        assert_eq!(avg.cells_counted, picked.len());
        assert_eq!(avg.cells_counted, 2);
        let mean =
            picked.iter().map(|c| c.auroc.unwrap()).sum::<f64>() / picked.len() as f64;
        assert_eq!(avg.auroc, Some(mean));
    }

    // One timing entry per requested method, normalized to 500 samples.
    assert_eq!(report.timing.len(), 2);
    for t in &report.timing {
        assert_eq!(t.samples_timed, 4);
        assert!(t.seconds_per_500 > 0.0 && t.seconds_per_500.is_finite());
    }
}

#[test]
fn grid_marks_failed_cells_rather_than_dropping_them() {
    let (ensembles, mut test_sets) = grid_fixture();
    // A provenance-mismatched test set: its cells must appear, marked failed.
    test_sets[2] = test_sets[2].contrast_stretched().unwrap();
    let trains = vec!["alpha".to_string(), "beta".to_string()];
    let kinds = [ScoreKind::Ll];
    let report = build_grid(&grid_columns(&ensembles), &trains, &test_sets, &kinds, 2, 5).unwrap();

    assert_eq!(report.cells.len(), 2 * 3);
    for cell in &report.cells {
        if cell.test == "gamma" {
            let err = cell.error.as_deref().expect("mismatched cell must be marked");
            assert!(err.contains("provenance"), "{err}");
            assert_eq!(cell.auroc, None);
        } else {
            assert!(cell.error.is_none());
            assert!(cell.auroc.is_some());
        }
    }
    // The averages skip the failed cells and say how many remain.
    for avg in &report.averages {
        assert_eq!(avg.cells_counted, 1);
        assert!(avg.auroc.is_some());
    }
}

#[test]
fn grid_requires_every_requested_train_set() {
    let (ensembles, test_sets) = grid_fixture();
    let kinds = [ScoreKind::Ll];

    let err = build_grid(
        &grid_columns(&ensembles),
        &["alpha".to_string(), "delta".to_string()],
        &test_sets,
        &kinds,
        2,
        5,
    )
    .unwrap_err();
    assert!(err.to_string().contains("no ensemble"), "{err}");
    assert!(err.to_string().contains("delta"), "{err}");

    // A train set without its own test split has no inlier side.
    let err = build_grid(
        &grid_columns(&ensembles),
        &["alpha".to_string(), "beta".to_string()],
        &test_sets[..1].to_vec(),
        &kinds,
        2,
        5,
    )
    .unwrap_err();
    assert!(err.to_string().contains("test split"), "{err}");

    // An empty score list is meaningless.
    assert!(build_grid(
        &grid_columns(&ensembles),
        &["alpha".to_string()],
        &test_sets,
        &[],
        2,
        5
    )
    .is_err());
}

#[test]
fn report_round_trips_through_json_and_formats_csv_times_100() {
    let (ensembles, test_sets) = grid_fixture();
    let trains = vec!["alpha".to_string()];
    let kinds = [ScoreKind::Ll];
    let report = build_grid(&grid_columns(&ensembles), &trains, &test_sets, &kinds, 2, 5).unwrap();

    let json = report.to_json().unwrap();
    let back = EvalReport::from_json(&json).unwrap();
    assert_eq!(back, report);

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "train,test,score,auroc_x100,auprc_x100,fpr_at_80tpr_x100,error"
    );
    // 3 cells + 1 average row + header.
    assert_eq!(lines.len(), 1 + 3 + 1);
    // The within-distribution diagonal prints the 50.0 of the published
    // tables (fractions are formatted ×100 in reports).
    let diagonal = lines
        .iter()
        .find(|l| l.starts_with("alpha,alpha,ll,"))
        .expect("diagonal row present");
    assert!(diagonal.contains(",50.00,"), "{diagonal}");
    let average = lines.last().unwrap();
    assert!(average.starts_with("alpha,average,ll,"), "{average}");
}

#[test]
fn timing_runs_a_500_sample_evaluation() {
    let model = fresh(70);
    let ensemble = Ensemble::new(vec![fresh(70), fresh(71)]).unwrap();
    let dataset = rand_dataset(503, "clock", 4000);
    let timing = time_scoring(
        &Scorer::Ensemble(&ensemble),
        &dataset,
        ScoreKind::Ll,
        None,
        1,
        0,
    )
    .unwrap();
    assert_eq!(timing.score, "ll");
    assert_eq!(timing.samples_timed, 500);
    assert!(timing.seconds_per_500 > 0.0 && timing.seconds_per_500.is_finite());

    // Shorter datasets time what they have and extrapolate.
    let short = rand_dataset(5, "clock", 5000);
    let t = time_scoring(&Scorer::Single(&model), &short, ScoreKind::BcLl, None, 2, 0).unwrap();
    assert_eq!(t.samples_timed, 5);

    let empty = Dataset::new("void", vec![], SplitTag::Test, Preprocessing::None).unwrap();
    assert!(
        time_scoring(&Scorer::Single(&model), &empty, ScoreKind::Ll, None, 1, 0).is_err()
    );
}
