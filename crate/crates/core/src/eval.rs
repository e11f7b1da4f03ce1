//! Metrics and the spatial cross-validation driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_wcm, CalibrationConfig, CalibrationProblem, CalibrationResult};
use crate::data::{build_windows, FeatureSpec, FoldAssignment, SiteSeries, WcmContext};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kg::{self, TrainConfig};
use crate::wcm::{self, Decibel, WcmParams};

/// Starting vegetation factor when no usable calibration is available.
pub const DEFAULT_A_INIT: f64 = 0.05;

/// Warm-start value for the learned `a`: the calibrated A, unless it sits
/// on its bound (then it carries no information about the canopy).
pub fn initial_a(cal: &CalibrationResult, problem: &CalibrationProblem) -> f64 {
    let (lo, hi) = problem.bounds.log_a;
    let log_a = cal.params.a.ln();
    if log_a > lo + 1e-3 && log_a < hi - 1e-3 {
        cal.params.a
    } else {
        DEFAULT_A_INIT
    }
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs, 1)?;
    let mse = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean of `pred − obs`.
pub fn bias(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs, 1)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| p - o).sum::<f64>() / pred.len() as f64)
}

/// Sample Pearson correlation. Constant input is `DegenerateInput`, never 0.
pub fn pearson_r(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs, 2)?;
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(pred) || constant(obs) {
        return Err(Error::DegenerateInput("constant input has no correlation".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mo = obs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        let (dp, d_o) = (p - mp, o - mo);
        sxy += dp * d_o;
        sxx += dp * dp;
        syy += d_o * d_o;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_pair(pred: &[f64], obs: &[f64], min: usize) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions, {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::EmptyInput(format!(
            "need at least {min} pairs, got {}",
            pred.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    /// `None` when undefined (fewer than two pairs or constant input).
    pub pearson_r: Option<f64>,
    pub bias: f64,
    pub n: usize,
}

impl MetricSet {
    pub fn compute(pred: &[f64], obs: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, obs)?,
            pearson_r: pearson_r(pred, obs).ok(),
            bias: bias(pred, obs)?,
            n: pred.len(),
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (p, o): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        Self::compute(&p, &o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wcm,
    KgLstm,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Wcm, Method::KgLstm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wcm => "wcm",
            Method::KgLstm => "kg_lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub ctx: WcmContext,
    pub spec: FeatureSpec,
    /// Fraction of training-fold sites held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    /// Warm-start the learned `a` from the fold's WCM calibration when the
    /// calibrated value is not pinned to its bound.
    pub warm_start_a: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            calibration: CalibrationConfig::default(),
            ctx: WcmContext::default(),
            spec: FeatureSpec::default(),
            val_fraction: 0.2,
            seed: 2025,
            warm_start_a: true,
            exec: Exec::default(),
        }
    }
}

/// Which sites fed which quantity in a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldProvenance {
    pub test_sites: Vec<String>,
    pub train_sites: Vec<String>,
    pub val_sites: Vec<String>,
    pub calibration_sites: Vec<String>,
    pub standardization_sites: Vec<String>,
}

impl FoldProvenance {
    /// True when no test site contributed to calibration, standardization,
    /// training or validation.
    pub fn is_leak_free(&self) -> bool {
        let test: BTreeSet<&String> = self.test_sites.iter().collect();
        [
            &self.train_sites,
            &self.val_sites,
            &self.calibration_sites,
            &self.standardization_sites,
        ]
        .iter()
        .all(|set| set.iter().all(|s| !test.contains(s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub wcm: MetricSet,
    pub kg_lstm: MetricSet,
    pub wcm_params: WcmParams,
    /// Learned vegetation factor of the knowledge-guided model.
    pub fitted_a: f64,
    pub kg_best_epoch: usize,
    pub kg_epochs_run: usize,
    /// `(predicted, observed)` on the test sites.
    pub wcm_pairs: Vec<(f64, f64)>,
    pub kg_pairs: Vec<(f64, f64)>,
    pub provenance: FoldProvenance,
}

impl FoldReport {
    pub fn metrics(&self, m: Method) -> &MetricSet {
        match m {
            Method::Wcm => &self.wcm,
            Method::KgLstm => &self.kg_lstm,
        }
    }

    pub fn pairs(&self, m: Method) -> &[(f64, f64)] {
        match m {
            Method::Wcm => &self.wcm_pairs,
            Method::KgLstm => &self.kg_pairs,
        }
    }

    pub fn fitted_a(&self, m: Method) -> f64 {
        match m {
            Method::Wcm => self.wcm_params.a,
            Method::KgLstm => self.fitted_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold_count: usize,
    pub folds: Vec<FoldReport>,
    /// Metrics over the concatenated test pairs of all folds.
    pub pooled_wcm: MetricSet,
    pub pooled_kg_lstm: MetricSet,
}

impl EvalReport {
    pub fn pooled(&self, m: Method) -> &MetricSet {
        match m {
            Method::Wcm => &self.pooled_wcm,
            Method::KgLstm => &self.pooled_kg_lstm,
        }
    }
}

/// Seeded site-level split into `(train, val)`, each sorted by site id.
/// At least one site stays on each side when two or more are given.
pub fn split_validation<'a>(
    sites: &[&'a SiteSeries],
    val_fraction: f64,
    seed: u64,
) -> (Vec<&'a SiteSeries>, Vec<&'a SiteSeries>) {
    let mut shuffled = sites.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_val = if sites.len() >= 2 {
        ((sites.len() as f64 * val_fraction).round() as usize).clamp(1, sites.len() - 1)
    } else {
        0
    };
    let (val, train) = shuffled.split_at(n_val);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    train.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    (train, val)
}

fn run_fold(sites: &[SiteSeries], folds: &FoldAssignment, fold: usize, config: &CvConfig) -> Result<FoldReport> {
    let (test, rest): (Vec<&SiteSeries>, Vec<&SiteSeries>) =
        sites.iter().partition(|s| folds.fold_of(&s.site_id) == Some(fold));

    // WCM baseline, calibrated on every training-fold site.
    let mut problem = CalibrationProblem::from_sites(rest.iter().copied(), &config.ctx);
    problem.clamp_floor = config.train.loss.clamp_floor;
    let cal = calibrate_wcm(&problem, &config.calibration)?;
    let mut wcm_pairs = Vec::new();
    for s in &test {
        for t in 0..s.len() {
            if let Some(obs) = s.sm_ref[t] {
                let raw = config.ctx.raw_obs(s, t);
                let p = cal.params.with_theta(raw.theta);
                let (sm, _) = wcm::wcm_invert_sm_clamped(Decibel(raw.obs_db), raw.vwc, &p, problem.clamp_floor);
                wcm_pairs.push((sm.0, obs));
            }
        }
    }

    let (train, val) = split_validation(
        &rest,
        config.val_fraction,
        config.seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );

    let a_init = if config.warm_start_a {
        initial_a(&cal, &problem)
    } else {
        DEFAULT_A_INIT
    };
    let mut train_cfg = config.train.clone();
    train_cfg.exec = config.exec;
    let outcome = kg::fit_kg(&train, &val, &config.spec, &config.ctx, a_init, &train_cfg)?;
    let model = &outcome.model;

    let mut kg_pairs = Vec::new();
    for s in &test {
        let b = build_windows(s, model.window, &model.spec, &model.stats, &model.ctx)?;
        let preds = kg::predict_batch(model, &b, config.exec)?;
        kg_pairs.extend(preds.into_iter().zip(b.labeled_targets()?));
    }

    let ids = |v: &[&SiteSeries]| v.iter().map(|s| s.site_id.clone()).collect::<Vec<_>>();
    let provenance = FoldProvenance {
        test_sites: ids(&test),
        train_sites: ids(&train),
        val_sites: ids(&val),
        calibration_sites: ids(&rest),
        standardization_sites: model.stats.provenance.iter().cloned().collect(),
    };
    if !provenance.is_leak_free() {
        return Err(Error::InvalidArgument("test-fold site leaked into fitting".into()));
    }

    Ok(FoldReport {
        fold,
        wcm: MetricSet::from_pairs(&wcm_pairs)?,
        kg_lstm: MetricSet::from_pairs(&kg_pairs)?,
        wcm_params: cal.params,
        fitted_a: model.a(),
        kg_best_epoch: outcome.best_epoch,
        kg_epochs_run: outcome.log.len() - 1,
        wcm_pairs,
        kg_pairs,
        provenance,
    })
}

/// Calibrates the WCM and trains the knowledge-guided model on each
/// training fold, then scores both on the held-out sites.
pub fn run_cross_validation(sites: &[SiteSeries], folds: &FoldAssignment, config: &CvConfig) -> Result<EvalReport> {
    folds.validate_for(sites)?;
    let results = config.exec.map_range(folds.fold_count, |f| {
        run_fold(sites, folds, f, config).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })
    });
    let folds_out = results.into_iter().collect::<Result<Vec<_>>>()?;
    let pool = |m: Method| {
        let all: Vec<(f64, f64)> = folds_out.iter().flat_map(|f| f.pairs(m).iter().copied()).collect();
        MetricSet::from_pairs(&all)
    };
    Ok(EvalReport {
        fold_count: folds.fold_count,
        pooled_wcm: pool(Method::Wcm)?,
        pooled_kg_lstm: pool(Method::KgLstm)?,
        folds: folds_out,
    })
}

#[derive(Serialize)]
struct MetricEntry {
    rmse: f64,
    r: Option<f64>,
    bias: f64,
    n: usize,
    fitted_a: Option<f64>,
}

/// `report.json` content: method → fold → metrics, plus a `pooled` entry.
pub fn report_json(report: &EvalReport) -> Result<String> {
    let mut doc: BTreeMap<&str, BTreeMap<String, MetricEntry>> = BTreeMap::new();
    for m in Method::ALL {
        let mut per = BTreeMap::new();
        for f in &report.folds {
            let ms = f.metrics(m);
            per.insert(
                format!("fold{}", f.fold),
                MetricEntry {
                    rmse: ms.rmse,
                    r: ms.pearson_r,
                    bias: ms.bias,
                    n: ms.n,
                    fitted_a: Some(f.fitted_a(m)),
                },
            );
        }
        let p = report.pooled(m);
        per.insert(
            "pooled".into(),
            MetricEntry {
                rmse: p.rmse,
                r: p.pearson_r,
                bias: p.bias,
                n: p.n,
                fitted_a: None,
            },
        );
        doc.insert(m.name(), per);
    }
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into())
}

/// Fixed-column summary table.
pub fn summary_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<8} {:>6} {:>8} {:>8} {:>8} {:>10}",
        "fold", "method", "n", "rmse", "r", "bias", "fitted_a"
    );
    for f in &report.folds {
        for m in Method::ALL {
            let ms = f.metrics(m);
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>6} {:>8.4} {:>8} {:>8.4} {:>10.5}",
                f.fold,
                m.name(),
                ms.n,
                ms.rmse,
                fmt_opt(ms.pearson_r),
                ms.bias,
                f.fitted_a(m)
            );
        }
    }
    for m in Method::ALL {
        let ms = report.pooled(m);
        let _ = writeln!(
            out,
            "{:<8} {:<8} {:>6} {:>8.4} {:>8} {:>8.4} {:>10}",
            "pooled",
            m.name(),
            ms.n,
            ms.rmse,
            fmt_opt(ms.pearson_r),
            ms.bias,
            "-"
        );
    }
    out
}

/// Writes `report.json`, one `scatter_fold{f}_{method}.csv` per fold and
/// method, and `summary.txt`. Returns the written paths.
pub fn export_report(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    std::fs::write(&path, report_json(report)?)?;
    written.push(path);

    for f in &report.folds {
        for m in Method::ALL {
            let path = dir.join(format!("scatter_fold{}_{}.csv", f.fold, m.name()));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["predicted", "observed"])?;
            for (p, o) in f.pairs(m) {
                w.write_record([p.to_string(), o.to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
    }

    let path = dir.join("summary.txt");
    std::fs::write(&path, summary_table(report))?;
    written.push(path);
    Ok(written)
}
