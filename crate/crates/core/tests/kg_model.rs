mod common;

use kgsm::data::{
    compute_standardization, generate_synthetic, AuxFeature, FeatureSpec, SequenceBatch, SiteSeries, Standardization,
    SyntheticConfig, WcmContext,
};
use kgsm::eval::split_validation;
use kgsm::kg::{
    fit_kg, isolated_soil_db, kg_loss, kg_loss_at, kg_loss_value, labeled_windows, predict, Checkpoint, LossConfig,
    LstmModel, TrainConfig,
};
use kgsm::lstm::{finite_difference_gradients, AdamConfig, LstmParams};
use kgsm::{Error, Exec};

use common::*;

fn stats_for(sites: &[&SiteSeries], spec: &FeatureSpec, a_init: f64) -> Standardization {
    compute_standardization(sites, spec, &WcmContext::default(), a_init, 1e-10).unwrap()
}

fn windows(sites: &[&SiteSeries], window: usize, spec: &FeatureSpec, stats: &Standardization) -> SequenceBatch {
    labeled_windows(sites, window, spec, stats, &WcmContext::default(), Exec::Sequential).unwrap()
}

fn small_problem(seed: u64, lambda: f64) -> (SequenceBatch, LstmModel) {
    let ds = linear_clean(4, 20, seed);
    let refs: Vec<&SiteSeries> = ds.sites.iter().collect();
    let spec = FeatureSpec::default();
    let stats = stats_for(&refs, &spec, 0.03);
    let all = windows(&refs, 5, &spec, &stats);
    let picks = [(seed as usize * 7) % all.len(), (seed as usize * 13 + 3) % all.len(), 2];
    let batch = all.select(&picks);
    let loss = LossConfig {
        lambda,
        ..LossConfig::default()
    };
    let model = LstmModel::new(spec, 5, 4, WcmContext::default(), stats, loss, seed);
    (batch, model)
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..4 {
        let (batch, model) = small_problem(seed, 1.0);
        let (_, grads) = kg_loss(&batch, &model, Exec::Sequential).unwrap();
        let report = finite_difference_gradients(
            &model.params,
            &grads,
            |p| kg_loss_value(&batch, &model, p, Exec::Sequential).unwrap().total,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "seed {seed}: {:?}",
            report.per_parameter_errors
        );
        assert!(grads.log_a != 0.0);
    }
}

#[test]
fn boundary_term_gradient_checks_when_predictions_leave_unit_interval() {
    let (batch, mut model) = small_problem(9, 3.0);
    model.params.head_bias = 1.4;
    let (loss, grads) = kg_loss(&batch, &model, Exec::Sequential).unwrap();
    assert!(loss.boundary > 0.0);
    let report = finite_difference_gradients(
        &model.params,
        &grads,
        |p| kg_loss_value(&batch, &model, p, Exec::Sequential).unwrap().total,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{:?}", report.per_parameter_errors);
}

#[test]
fn bare_soil_has_no_log_a_gradient() {
    let n = 12;
    let obs: Vec<f64> = (0..n).map(|t| -18.0 + 0.3 * t as f64).collect();
    let sm: Vec<Option<f64>> = (0..n).map(|t| Some(0.1 + 0.02 * t as f64)).collect();
    let sites = [
        series("P1", 0.0, 0.0, &obs, &vec![0.0; n], &sm),
        series(
            "P2",
            1.0,
            0.0,
            &obs.iter().map(|v| v - 1.0).collect::<Vec<_>>(),
            &vec![0.0; n],
            &sm,
        ),
    ];
    let refs: Vec<&SiteSeries> = sites.iter().collect();
    let spec = FeatureSpec {
        aux: vec![AuxFeature::Albedo, AuxFeature::DoySin],
    };
    let stats = stats_for(&refs, &spec, 0.05);
    let batch = windows(&refs, 4, &spec, &stats);
    let model = LstmModel::new(spec, 4, 5, WcmContext::default(), stats, LossConfig::default(), 1);
    let (loss, grads) = kg_loss(&batch, &model, Exec::Sequential).unwrap();
    assert_eq!(loss.clamped_fraction, 0.0);
    assert_eq!(grads.log_a, 0.0);
}

#[test]
fn isolated_soil_backscatter_matches_linear_truth() {
    let ds = linear_clean(6, 30, 21);
    let refs: Vec<&SiteSeries> = ds.sites.iter().collect();
    let spec = FeatureSpec::default();
    let stats = stats_for(&refs, &spec, ds.truth.params.a);
    let batch = windows(&refs, 1, &spec, &stats);
    let soil = isolated_soil_db(&batch, &WcmContext::default(), ds.truth.params.a, 1e-10);
    let (c, d) = (ds.truth.params.c, ds.truth.params.d);
    for (s, t) in soil.iter().zip(batch.labeled_targets().unwrap()) {
        assert!((s - (c + d * t)).abs() < 1e-8, "{s} vs {}", c + d * t);
    }
}

#[test]
fn additivity_is_exact() {
    for seed in 0..6 {
        let (batch, mut model) = small_problem(seed, 2.5);
        model.params.head_bias = 0.9 - 0.3 * seed as f64;
        let loss = kg_loss_value(&batch, &model, &model.params, Exec::Sequential).unwrap();
        assert_eq!(loss.total, loss.soil_mse + loss.boundary);
        assert!(loss.soil_mse >= 0.0 && loss.boundary >= 0.0);
    }
}

#[test]
fn perfect_predictions_give_zero_loss() {
    let n = 10;
    let obs: Vec<f64> = (0..n).map(|t| -16.0 - 0.2 * t as f64).collect();
    let site = series("Z", 0.0, 0.0, &obs, &vec![0.4; n], &vec![Some(0.3); n]);
    let spec = FeatureSpec::default();
    let stats = stats_for(&[&site], &spec, 0.02);
    let batch = windows(&[&site], 3, &spec, &stats);
    let mut model = LstmModel::new(
        spec.clone(),
        3,
        4,
        WcmContext::default(),
        stats,
        LossConfig::default(),
        0,
    );
    model.params = LstmParams::zeros(spec.input_dim(), 4);
    model.params.log_a = 0.02f64.ln();
    model.params.head_bias = 0.3;
    let loss = kg_loss_value(&batch, &model, &model.params, Exec::Sequential).unwrap();
    assert_eq!(loss.total, 0.0);
}

#[test]
fn lowering_clamp_floor_never_increases_clamped_fraction() {
    let ds = linear_clean(4, 30, 2);
    let refs: Vec<&SiteSeries> = ds.sites.iter().collect();
    let spec = FeatureSpec::default();
    let stats = stats_for(&refs, &spec, 0.03);
    let batch = windows(&refs, 4, &spec, &stats);
    let mut model = LstmModel::new(spec, 4, 4, WcmContext::default(), stats, LossConfig::default(), 3);
    // A large vegetation factor pushes many residuals toward the floor.
    model.params.log_a = 0.09f64.ln();
    let mut previous = f64::INFINITY;
    let mut fractions = Vec::new();
    for floor in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-10, 1e-14] {
        model.loss.clamp_floor = floor;
        let f = kg_loss_value(&batch, &model, &model.params, Exec::Sequential)
            .unwrap()
            .clamped_fraction;
        assert!(f <= previous, "floor {floor}: {f} > {previous}");
        previous = f;
        fractions.push(f);
    }
    assert!(fractions[0] > 0.0, "probe never clamps: {fractions:?}");
}

#[test]
fn sequential_and_parallel_losses_agree_bitwise() {
    let (batch, model) = small_problem(5, 1.0);
    let (ls, gs) = kg_loss_at(&batch, &model, &model.params, Exec::Sequential).unwrap();
    let (lp, gp) = kg_loss_at(&batch, &model, &model.params, Exec::Parallel).unwrap();
    assert_eq!(ls, lp);
    assert_eq!(gs, gp);
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        window: 6,
        hidden: 12,
        max_epochs: epochs,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn train_split(ds: &kgsm::data::SyntheticDataset) -> (Vec<&SiteSeries>, Vec<&SiteSeries>) {
    let refs: Vec<&SiteSeries> = ds.sites.iter().collect();
    split_validation(&refs, 0.25, 1)
}

#[test]
fn training_halves_validation_error_on_clean_linear_data() {
    let ds = linear_clean(12, 60, 8);
    let (train, val) = train_split(&ds);
    let cfg = TrainConfig {
        max_epochs: 200,
        ..quick_config(200)
    };
    let out = fit_kg(
        &train,
        &val,
        &FeatureSpec::default(),
        &WcmContext::default(),
        0.05,
        &cfg,
    )
    .unwrap();
    let start = out.log[0].val_soil_mse;
    let best = out.log[out.best_epoch].val_soil_mse;
    assert!(out.log.len() <= 201);
    assert!(best <= 0.5 * start, "val soil mse {start} -> {best}");
    assert!(out.model.a() > 0.0 && out.model.params.log_a.is_finite());
}

#[test]
fn strong_boundary_weight_keeps_predictions_in_range() {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let refs: Vec<&SiteSeries> = ds.sites.iter().collect();
    let (train, val) = split_validation(&refs, 0.2, 7);
    let mut cfg = TrainConfig::default();
    cfg.loss.lambda = 10.0;
    let spec = FeatureSpec::default();
    let out = fit_kg(&train, &val, &spec, &WcmContext::default(), 0.05, &cfg).unwrap();
    let mut total = 0usize;
    let mut outside = 0usize;
    for s in &val {
        for p in predict(&out.model, s).unwrap() {
            total += 1;
            if !(0.0..=1.0).contains(&p.sm_pred) {
                outside += 1;
            }
        }
    }
    assert!(
        (outside as f64) < 0.01 * total as f64,
        "{outside} of {total} outside [0, 1]"
    );
}

#[test]
fn training_is_deterministic_across_runs_and_modes() {
    let ds = linear_clean(6, 30, 12);
    let (train, val) = train_split(&ds);
    let spec = FeatureSpec::default();
    let ctx = WcmContext::default();
    let mut cfg = quick_config(8);
    cfg.exec = Exec::Sequential;
    let a = fit_kg(&train, &val, &spec, &ctx, 0.05, &cfg).unwrap();
    let b = fit_kg(&train, &val, &spec, &ctx, 0.05, &cfg).unwrap();
    cfg.exec = Exec::Parallel;
    let c = fit_kg(&train, &val, &spec, &ctx, 0.05, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log, c.log);
    assert_eq!(a.model, c.model);
    cfg.seed += 1;
    let d = fit_kg(&train, &val, &spec, &ctx, 0.05, &cfg).unwrap();
    assert_ne!(a.log, d.log);
}

#[test]
fn predict_reproduces_final_training_pass() {
    let ds = generate_synthetic(&SyntheticConfig {
        n_sites: 5,
        n_timesteps: 25,
        missing_fraction: 0.3,
        ..Default::default()
    })
    .unwrap();
    let (train, val) = train_split(&ds);
    let out = fit_kg(
        &train,
        &val,
        &FeatureSpec::default(),
        &WcmContext::default(),
        0.05,
        &quick_config(5),
    )
    .unwrap();
    let mut from_predict = Vec::new();
    for s in &train {
        let preds = predict(&out.model, s).unwrap();
        assert_eq!(preds.len(), s.len());
        for (p, (t, r)) in preds.iter().zip(s.timestamps.iter().zip(&s.sm_ref)) {
            assert_eq!(p.timestamp, *t);
            if r.is_some() {
                from_predict.push(p.sm_pred);
            }
        }
    }
    assert_eq!(from_predict, out.final_train_predictions);
}

#[test]
fn constant_series_predicts_constant() {
    let n = 15;
    let site = series("K", 0.0, 0.0, &vec![-17.5; n], &vec![0.5; n], &vec![Some(0.25); n]);
    let other = series("L", 1.0, 1.0, &vec![-15.0; n], &vec![0.3; n], &vec![Some(0.35); n]);
    let spec = FeatureSpec {
        aux: vec![AuxFeature::Ndvi, AuxFeature::Albedo, AuxFeature::Clay],
    };
    let stats = stats_for(&[&site, &other], &spec, 0.02);
    let model = LstmModel::new(spec, 6, 8, WcmContext::default(), stats, LossConfig::default(), 17);
    let preds = predict(&model, &site).unwrap();
    assert_eq!(preds.len(), n);
    assert!(preds.iter().all(|p| p.sm_pred == preds[0].sm_pred));
}

#[test]
fn short_series_is_padded_and_flagged() {
    let site = series(
        "S",
        0.0,
        0.0,
        &[-17.0, -16.5, -16.0],
        &[0.4, 0.45, 0.5],
        &[Some(0.2), None, Some(0.3)],
    );
    let spec = FeatureSpec::default();
    let stats = stats_for(&[&site], &spec, 0.02);
    let model = LstmModel::new(spec, 8, 4, WcmContext::default(), stats, LossConfig::default(), 2);
    let preds = predict(&model, &site).unwrap();
    assert_eq!(preds.len(), 3);
    assert!(preds.iter().all(|p| p.padded && p.sm_pred.is_finite()));
}

#[test]
fn checkpoint_round_trip_and_version_guard() {
    let (_, model) = small_problem(3, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let ckpt = Checkpoint::new(model.clone(), AdamConfig::default(), None);
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.model, model);
    assert_eq!(back, ckpt);

    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("kgsm-lstm-checkpoint/1", "kgsm-lstm-checkpoint/7");
    match Checkpoint::from_json(&text) {
        Err(Error::CheckpointVersion { found, expected }) => {
            assert_eq!(found, "kgsm-lstm-checkpoint/7");
            assert_eq!(expected, "kgsm-lstm-checkpoint/1");
        }
        other => panic!("expected CheckpointVersion, got {other:?}"),
    }
}

#[test]
fn empty_training_batch_rejected() {
    let (batch, model) = small_problem(1, 1.0);
    let empty = SequenceBatch::empty(batch.window, batch.aux_dim);
    assert!(matches!(
        kg_loss(&empty, &model, Exec::Sequential),
        Err(Error::EmptyBatch)
    ));
    assert!(matches!(
        kgsm::kg::train(&empty, &batch, model, &TrainConfig::default()),
        Err(Error::EmptyBatch)
    ));
}
