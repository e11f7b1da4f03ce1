use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use kgsm::calibrate::{calibrate_wcm, CalibrationConfig, CalibrationProblem};
use kgsm::data::{assign_spatial_folds, generate_synthetic, load_csv, write_csv, SiteSeries};
use kgsm::eval::{export_report, initial_a, run_cross_validation, split_validation, summary_table};
use kgsm::kg::{fit_kg, predict as kg_predict, write_training_log, Checkpoint};
use kgsm::Error;
use log::{info, warn};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_IO: u8 = 3;

use crate::config::RunConfig;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(e: impl Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: impl Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Fold { source, .. } => exit_code(source),
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
        Error::Csv(c) if c.is_io_error() => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

/// The configured CSV, or the synthetic scene when none is given.
fn load_sites(cfg: &RunConfig) -> Result<Vec<SiteSeries>, Failure> {
    match &cfg.data.csv {
        Some(path) => {
            let sites = load_csv(path).map_err(|e| match e {
                Error::Io(io) => Failure::io(path, io),
                other => Failure {
                    code: exit_code(&other),
                    message: format!("{}: {other}", path.display()),
                },
            })?;
            info!("loaded {} sites from {}", sites.len(), path.display());
            Ok(sites)
        }
        None => {
            let ds = generate_synthetic(&cfg.data.synthetic)?;
            info!("generated {} synthetic sites", ds.sites.len());
            Ok(ds.sites)
        }
    }
}

fn labeled(sites: &[SiteSeries]) -> Result<Vec<&SiteSeries>, Failure> {
    let out: Vec<&SiteSeries> = sites.iter().filter(|s| s.labeled_count() > 0).collect();
    if out.is_empty() {
        return Err(Failure::usage(
            "no observation carries a reference soil moisture (sm_ref)",
        ));
    }
    Ok(out)
}

pub fn show_config(cfg: &RunConfig) -> Result<(), Failure> {
    print!("{}", toml::to_string_pretty(cfg).map_err(Failure::usage)?);
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let ds = generate_synthetic(&cfg.data.synthetic)?;
    let dir = out_dir(cfg)?;
    let csv_path = dir.join("synthetic.csv");
    let mut w = create(&csv_path)?;
    write_csv(&mut w, &ds.sites)?;
    w.flush().map_err(|e| Failure::io(&csv_path, e))?;
    info!("wrote {}", csv_path.display());
    let truth = serde_json::to_string_pretty(&ds.truth).map_err(Error::from)?;
    write_file(&dir.join("truth.json"), &truth)?;
    let samples: usize = ds.sites.iter().map(SiteSeries::len).sum();
    let (lo, hi) = ds
        .truth
        .sites
        .iter()
        .flat_map(|t| t.sm_true.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    println!(
        "sites = {}  samples = {}  labeled = {}  sm range = [{lo:.4}, {hi:.4}] m3/m3",
        ds.sites.len(),
        samples,
        ds.sites.iter().map(SiteSeries::labeled_count).sum::<usize>()
    );
    Ok(())
}

fn calibration_problem(cfg: &RunConfig, sites: &[&SiteSeries]) -> CalibrationProblem {
    let mut problem = CalibrationProblem::from_sites(sites.iter().copied(), &cfg.wcm_context());
    problem.clamp_floor = cfg.training.clamp_floor;
    problem
}

fn calibration_config(cfg: &RunConfig) -> CalibrationConfig {
    CalibrationConfig {
        seed: cfg.cv.seed,
        ..CalibrationConfig::default()
    }
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), Failure> {
    let sites = load_sites(cfg)?;
    let labeled = labeled(&sites)?;
    let problem = calibration_problem(cfg, &labeled);
    let result = calibrate_wcm(&problem, &calibration_config(cfg))?;
    let dir = out_dir(cfg)?;
    write_file(&dir.join("calibration.json"), &result.to_json()?)?;
    let p = &result.params;
    println!(
        "A = {:.6}  C = {:.4} dB  D = {:.4} dB/(m3/m3)  objective = {:.3e}  iterations = {}",
        p.a, p.c, p.d, result.objective, result.iterations
    );
    if !result.converged {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("calibration did not converge in {} iterations", result.iterations),
        });
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let sites = load_sites(cfg)?;
    let labeled = labeled(&sites)?;
    let (train_sites, val_sites) = split_validation(&labeled, cfg.cv.val_fraction, cfg.cv.seed);
    info!(
        "training on {} sites, validating on {}",
        train_sites.len(),
        val_sites.len()
    );

    let problem = calibration_problem(cfg, &train_sites);
    let a_init = match calibrate_wcm(&problem, &calibration_config(cfg)) {
        Ok(cal) => initial_a(&cal, &problem),
        Err(e) => {
            warn!("WCM warm start unavailable ({e}); using the default initial A");
            kgsm::eval::DEFAULT_A_INIT
        }
    };
    let tcfg = cfg.train_config();
    let outcome = fit_kg(
        &train_sites,
        &val_sites,
        &cfg.feature_spec(),
        &cfg.wcm_context(),
        a_init,
        &tcfg,
    )?;
    info!(
        "best epoch {} of {}, fitted A = {:.6}",
        outcome.best_epoch,
        outcome.log.len() - 1,
        outcome.model.a()
    );

    let dir = out_dir(cfg)?;
    let ckpt = Checkpoint::new(outcome.model.clone(), tcfg.adam, Some(outcome.optimizer.clone()));
    write_file(&dir.join("model.json"), &ckpt.to_json()?)?;

    let log_path = dir.join("training_log.jsonl");
    let mut w = create(&log_path)?;
    write_training_log(&mut w, &outcome.log)?;
    w.flush().map_err(|e| Failure::io(&log_path, e))?;
    info!("wrote {}", log_path.display());

    let pred_path = dir.join("train_predictions.csv");
    write_predictions(&pred_path, &outcome.model, &train_sites)
}

fn write_predictions(path: &Path, model: &kgsm::kg::LstmModel, sites: &[&SiteSeries]) -> Result<(), Failure> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| Failure::io(path, e);
    writeln!(w, "site_id,timestamp,sm_pred").map_err(io)?;
    for s in sites {
        for p in kg_predict(model, s)? {
            writeln!(w, "{},{},{}", p.site_id, p.timestamp.format("%Y-%m-%d"), p.sm_pred).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| match e {
        Error::Io(io) => Failure::io(checkpoint, io),
        other => Failure {
            code: exit_code(&other),
            message: format!("{}: {other}", checkpoint.display()),
        },
    })?;
    let sites = load_sites(cfg)?;
    let refs: Vec<&SiteSeries> = sites.iter().collect();
    let dir = out_dir(cfg)?;
    write_predictions(&dir.join("predictions.csv"), &ckpt.model, &refs)
}

pub fn crossval(cfg: &RunConfig) -> Result<(), Failure> {
    let sites = load_sites(cfg)?;
    let folds = assign_spatial_folds(&sites, cfg.cv.folds, cfg.cv.seed)?;
    let cv = cfg.cv_config();
    let report = run_cross_validation(&sites, &folds, &cv)?;
    let dir = out_dir(cfg)?;
    for p in export_report(&report, dir)? {
        info!("wrote {}", p.display());
    }
    print!("{}", summary_table(&report));
    Ok(())
}
