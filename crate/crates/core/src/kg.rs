//! Knowledge-guided LSTM.
//!
//! Each time step's radar input is the soil backscatter isolated from the
//! observation with the model's own `a = exp(log_a)`; that value is
//! standardized with frozen training statistics and concatenated with the
//! auxiliaries. Training minimizes
//!
//! ```text
//! L = mean((ŷ − y)²) + λ · mean(max(0, −ŷ) + max(0, ŷ − 1))
//! ```
//!
//! with exact gradients for every LSTM weight and for `log_a`.

use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_windows, build_windows_at, compute_standardization, FeatureSpec, SequenceBatch, SiteSeries, Standardization,
    WcmContext,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lstm::{self, AdamConfig, AdamState, InputTensor, LstmParams};
use crate::wcm::{self, Decibel};

/// Version tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "kgsm-lstm-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the physical-bounds penalty.
    pub lambda: f64,
    /// Residual floor (linear power) for the soil-backscatter isolation.
    pub clamp_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            clamp_floor: wcm::DEFAULT_CLAMP_FLOOR,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.clamp_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clamp_floor must be > 0, got {}",
                self.clamp_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub soil_mse: f64,
    pub boundary: f64,
    /// Fraction of non-padded steps whose isolation hit the floor.
    pub clamped_fraction: f64,
}

/// Plain mean squared error between predictions and observations.
pub fn baseline_mse_loss(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions, {} observations",
            pred.len(),
            obs.len()
        )));
    }
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / pred.len() as f64)
}

fn bound_violation(p: f64) -> f64 {
    (-p).max(0.0) + (p - 1.0).max(0.0)
}

fn bound_slope(p: f64) -> f64 {
    if p < 0.0 {
        -1.0
    } else if p > 1.0 {
        1.0
    } else {
        0.0
    }
}

/// `λ · mean(max(0, −p) + max(0, p − 1))`.
pub fn boundary_loss(pred: &[f64], lambda: f64) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(lambda * pred.iter().map(|&p| bound_violation(p)).sum::<f64>() / pred.len() as f64)
}

/// Trained regressor together with everything needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub window: usize,
    pub spec: FeatureSpec,
    pub ctx: WcmContext,
    pub stats: Standardization,
    pub loss: LossConfig,
}

impl LstmModel {
    pub fn new(
        spec: FeatureSpec,
        window: usize,
        hidden: usize,
        ctx: WcmContext,
        stats: Standardization,
        loss: LossConfig,
        seed: u64,
    ) -> Self {
        let params = LstmParams::init(spec.input_dim(), hidden, stats.a_init.ln(), seed);
        Self {
            params,
            window,
            spec,
            ctx,
            stats,
            loss,
        }
    }

    pub fn a(&self) -> f64 {
        self.params.a()
    }
}

struct Assembled {
    inputs: InputTensor,
    /// ∂(standardized soil input)/∂(log a) per step, `batch × window`.
    soil_sensitivity: Vec<f64>,
    clamped: usize,
    counted: usize,
}

/// Isolated soil backscatter (dB, before standardization) for every step of
/// `batch`, using `a`.
pub fn isolated_soil_db(batch: &SequenceBatch, ctx: &WcmContext, a: f64, clamp_floor: f64) -> Vec<f64> {
    batch
        .raw
        .iter()
        .map(|raw| {
            let p = ctx.params_for(a, raw);
            wcm::isolate_soil_backscatter_clamped(Decibel(raw.obs_db), raw.vwc, a, &p, clamp_floor)
                .soil_db
                .0
        })
        .collect()
}

fn assemble(batch: &SequenceBatch, model: &LstmModel, params: &LstmParams) -> Result<Assembled> {
    batch.check()?;
    if batch.window != model.window {
        return Err(Error::DimensionMismatch(format!(
            "batch window {} but model window {}",
            batch.window, model.window
        )));
    }
    if batch.aux_dim != model.spec.aux.len() || params.input_size != model.spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} auxiliaries, model expects {}",
            batch.aux_dim,
            model.spec.aux.len()
        )));
    }
    let a = params.a();
    let dim = 1 + batch.aux_dim;
    let steps = batch.raw.len();
    let mut data = Vec::with_capacity(steps * dim);
    let mut soil_sensitivity = Vec::with_capacity(steps);
    let (mut clamped, mut counted) = (0, 0);
    let soil = &model.stats.soil;
    for (k, raw) in batch.raw.iter().enumerate() {
        let p = model.ctx.params_for(a, raw);
        let iso = wcm::isolate_soil_backscatter_clamped(Decibel(raw.obs_db), raw.vwc, a, &p, model.loss.clamp_floor);
        if !batch.padded[k] {
            counted += 1;
            clamped += iso.clamped as usize;
        }
        data.push(soil.apply(iso.soil_db.0));
        data.extend_from_slice(&batch.aux[k * batch.aux_dim..(k + 1) * batch.aux_dim]);
        soil_sensitivity.push(iso.d_soil_d_log_a / soil.std);
    }
    Ok(Assembled {
        inputs: InputTensor::new(batch.len(), batch.window, dim, data)?,
        soil_sensitivity,
        clamped,
        counted,
    })
}

fn breakdown(preds: &[f64], targets: &[f64], lambda: f64, clamped: usize, counted: usize) -> Result<LossBreakdown> {
    let soil_mse = baseline_mse_loss(preds, targets)?;
    let boundary = boundary_loss(preds, lambda)?;
    Ok(LossBreakdown {
        total: soil_mse + boundary,
        soil_mse,
        boundary,
        clamped_fraction: if counted == 0 {
            0.0
        } else {
            clamped as f64 / counted as f64
        },
    })
}

/// Loss and exact gradients at the model's current parameters.
pub fn kg_loss(batch: &SequenceBatch, model: &LstmModel, exec: Exec) -> Result<(LossBreakdown, LstmParams)> {
    kg_loss_at(batch, model, &model.params, exec)
}

/// Loss and exact gradients at `params`, using `model` for everything else.
pub fn kg_loss_at(
    batch: &SequenceBatch,
    model: &LstmModel,
    params: &LstmParams,
    exec: Exec,
) -> Result<(LossBreakdown, LstmParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets = batch.labeled_targets()?;
    let asm = assemble(batch, model, params)?;
    let pass = lstm::lstm_forward(&asm.inputs, params, exec)?;
    let loss = breakdown(&pass.predictions, &targets, model.loss.lambda, asm.clamped, asm.counted)?;

    let n = targets.len() as f64;
    let lambda = model.loss.lambda;
    let upstream: Vec<f64> = pass
        .predictions
        .iter()
        .zip(&targets)
        .map(|(&y, &t)| 2.0 * (y - t) / n + lambda * bound_slope(y) / n)
        .collect();
    let (mut grads, dx) = lstm::lstm_backward(&pass, params, &upstream, exec)?;
    let dim = asm.inputs.dim;
    grads.log_a = asm
        .soil_sensitivity
        .iter()
        .enumerate()
        .map(|(k, s)| dx[k * dim] * s)
        .sum();
    Ok((loss, grads))
}

/// Loss only, without the backward pass.
pub fn kg_loss_value(
    batch: &SequenceBatch,
    model: &LstmModel,
    params: &LstmParams,
    exec: Exec,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets = batch.labeled_targets()?;
    let asm = assemble(batch, model, params)?;
    let pass = lstm::lstm_forward(&asm.inputs, params, exec)?;
    breakdown(&pass.predictions, &targets, model.loss.lambda, asm.clamped, asm.counted)
}

/// Predictions for every window in `batch` (targets may be missing).
pub fn predict_batch(model: &LstmModel, batch: &SequenceBatch, exec: Exec) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let asm = assemble(batch, model, &model.params)?;
    Ok(lstm::lstm_forward(&asm.inputs, &model.params, exec)?.predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window: usize,
    pub hidden: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 8,
            hidden: 32,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            max_epochs: 500,
            patience: 20,
            batch_size: 32,
            clip_norm: 5.0,
            seed: 7,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden size must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.adam.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be > 0".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_soil: f64,
    pub train_boundary: f64,
    pub val_soil_mse: f64,
    pub clamped_fraction: f64,
    pub a: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: LstmModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub optimizer: AdamState,
    /// Best model's predictions on the full training batch, in window order.
    pub final_train_predictions: Vec<f64>,
}

/// Minibatch Adam on the knowledge-guided loss with early stopping on
/// validation soil MSE. An empty `val` monitors the training soil MSE.
pub fn train(
    train: &SequenceBatch,
    val: &SequenceBatch,
    model: LstmModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let exec = config.exec;
    let monitor = if val.is_empty() { train } else { val };
    let mut model = model;
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let init = kg_loss_value(train, &model, &model.params, exec)?;
    let init_val = kg_loss_value(monitor, &model, &model.params, exec)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_total: init.total,
        train_soil: init.soil_mse,
        train_boundary: init.boundary,
        val_soil_mse: init_val.soil_mse,
        clamped_fraction: init.clamped_fraction,
        a: model.a(),
    }];
    let mut best = (init_val.soil_mse, 0usize, model.params.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut soil, mut boundary, mut clamped) = (0.0, 0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mb = train.select(chunk);
            let (loss, mut grads) = kg_loss(&mb, &model, exec)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!(
                        "loss {:?}, a = {}, sites {:?}",
                        loss,
                        model.a(),
                        mb.site_ids.iter().collect::<std::collections::BTreeSet<_>>()
                    ),
                });
            }
            lstm::clip_global_norm(&mut grads, config.clip_norm);
            lstm::optimizer_step(&mut model.params, &grads, &mut state, &config.adam)?;
            if !model.params.log_a.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: "log_a became non-finite".into(),
                });
            }
            let w = chunk.len() as f64;
            total += loss.total * w;
            soil += loss.soil_mse * w;
            boundary += loss.boundary * w;
            clamped += loss.clamped_fraction * w;
        }
        let n = train.len() as f64;
        let val_loss = kg_loss_value(monitor, &model, &model.params, exec)?;
        if !val_loss.soil_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                detail: "validation loss is not finite".into(),
            });
        }
        log.push(EpochRecord {
            epoch,
            train_total: total / n,
            train_soil: soil / n,
            train_boundary: boundary / n,
            val_soil_mse: val_loss.soil_mse,
            clamped_fraction: clamped / n,
            a: model.a(),
        });
        if val_loss.soil_mse < best.0 {
            best = (val_loss.soil_mse, epoch, model.params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }

    model.params = best.2;
    let final_train_predictions = predict_batch(&model, train, exec)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.1,
        optimizer: state,
        final_train_predictions,
    })
}

/// Windows with reference SM for all `sites`, concatenated in site order.
pub fn labeled_windows(
    sites: &[&SiteSeries],
    window: usize,
    spec: &FeatureSpec,
    stats: &Standardization,
    ctx: &WcmContext,
    exec: Exec,
) -> Result<SequenceBatch> {
    let per_site = exec.map(sites, |s| build_windows(s, window, spec, stats, ctx));
    let mut out = SequenceBatch::empty(window, spec.aux.len());
    for b in per_site {
        out.append(&b?)?;
    }
    Ok(out)
}

/// Computes training statistics, builds windows and trains a fresh model.
/// `a_init` seeds `log_a` and the frozen soil-backscatter standardization.
pub fn fit_kg(
    train_sites: &[&SiteSeries],
    val_sites: &[&SiteSeries],
    spec: &FeatureSpec,
    ctx: &WcmContext,
    a_init: f64,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !(a_init > 0.0 && a_init.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial a must be > 0, got {a_init}")));
    }
    let stats = compute_standardization(train_sites, spec, ctx, a_init, config.loss.clamp_floor)?;
    let train_b = labeled_windows(train_sites, config.window, spec, &stats, ctx, config.exec)?;
    let val_b = labeled_windows(val_sites, config.window, spec, &stats, ctx, config.exec)?;
    let model = LstmModel::new(
        spec.clone(),
        config.window,
        config.hidden,
        *ctx,
        stats,
        config.loss,
        config.seed,
    );
    train(&train_b, &val_b, model, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub site_id: String,
    pub timestamp: NaiveDate,
    pub sm_pred: f64,
    /// The window reached back before the first acquisition.
    pub padded: bool,
}

/// One prediction per acquisition, windows built exactly as in training.
pub fn predict(model: &LstmModel, series: &SiteSeries) -> Result<Vec<Prediction>> {
    let ends: Vec<usize> = (0..series.len()).collect();
    let batch = build_windows_at(series, &ends, model.window, &model.spec, &model.stats, &model.ctx)?;
    let preds = predict_batch(model, &batch, Exec::Sequential)?;
    Ok(preds
        .into_iter()
        .enumerate()
        .map(|(i, sm_pred)| Prediction {
            site_id: series.site_id.clone(),
            timestamp: series.timestamps[i],
            sm_pred,
            padded: batch.padded[i * model.window],
        })
        .collect())
}

/// Writes the log as one JSON object per line.
pub fn write_training_log<W: Write>(mut w: W, log: &[EpochRecord]) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_training_log<R: BufRead>(r: R) -> Result<Vec<EpochRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Serialized model plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: LstmModel,
    pub adam: AdamConfig,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(model: LstmModel, adam: AdamConfig, optimizer: Option<AdamState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model,
            adam,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, rejecting other format tags before decoding the
    /// rest of the document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("<missing>");
        if found != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointVersion {
                found: found.to_string(),
                expected: CHECKPOINT_FORMAT.to_string(),
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.model.params.check_shape()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
