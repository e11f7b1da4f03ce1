//! Declarative run configuration (TOML) with `--set section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use kgsm::data::{AuxFeature, FeatureSpec, SyntheticConfig, WcmContext};
use kgsm::eval::CvConfig;
use kgsm::kg::{LossConfig, TrainConfig};
use kgsm::lstm::AdamConfig;
use serde::{Deserialize, Serialize};

/// Reference for every key, shown by `--help`.
pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (TOML; override any with --set section.key=value):
  [data]
    csv                      path to a site CSV; when absent the synthetic scene is used
  [data.synthetic]
    n_sites                  number of sites (count, default 24)
    n_timesteps              acquisitions per site (count, default 90)
    a                        generating vegetation factor A (linear, default 0.02)
    b                        generating vegetation parameter B (per kg/m2, default 0.084)
    c                        generating soil intercept C (dB, default -25)
    d                        generating soil slope D (dB per m3/m3, default 30)
    theta_deg                incidence angle (degrees, default 40)
    angle_jitter_deg         uniform incidence-angle jitter half-width (degrees, default 0)
    vwc_coeff                NDVI to VWC coefficient (kg/m2 per NDVI unit, default 1.0)
    sm_step_std              SM random-walk step std (m3/m3, default 0.04)
    ndvi_mean                mean NDVI (dimensionless, default 0.5)
    ndvi_amplitude           seasonal NDVI amplitude (dimensionless, default 0.25)
    noise_db                 observation noise std (dB, default 0.5, >= 0)
    nonlinear                saturating soil response (bool, default true)
    missing_fraction         fraction of reference SM dropped (0..1, default 0)
    n_clusters               spatial site clusters (count, default 4)
    cluster_spread           site scatter around cluster centres (planar units, default 4)
    cadence_days             revisit interval (days, default 12)
    start_date               first acquisition (ISO-8601 date, default 2019-01-01)
    seed                     generator seed (integer, default 42)
  [wcm]
    b                        vegetation parameter B (per kg/m2, default 0.084)
    theta_deg                incidence angle when a sample has none (degrees, default 40)
    vwc_coeff                NDVI to VWC coefficient (kg/m2 per NDVI unit, default 1.0)
  [training]
    window                   sequence length n (time steps, default 8)
    hidden                   LSTM hidden size (units, default 32)
    lambda                   boundary penalty weight (dimensionless, default 1.0)
    clamp_floor              soil residual floor (linear power, default 1e-10)
    learning_rate            Adam step size (default 0.003)
    epochs                   maximum epochs (count, default 500)
    patience                 early-stopping patience (epochs, default 20)
    batch_size               minibatch size (windows, default 32)
    clip_norm                global gradient-norm ceiling (default 5.0)
    seed                     initialization and shuffling seed (integer, default 7)
    aux                      auxiliary inputs (list of ndvi, albedo, clay, sand, silt, awc,
                             doy_sin, doy_cos; default all)
  [cv]
    folds                    spatial folds (count >= 2, default 4)
    seed                     clustering and validation-split seed (integer, default 2025)
    val_fraction             training-fold sites held out for early stopping (0..1, default 0.2)
  [output]
    dir                      output directory (path, default ./kgsm-out)
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub wcm: WcmSection,
    pub training: TrainingSection,
    pub cv: CvSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WcmSection {
    pub b: f64,
    pub theta_deg: f64,
    pub vwc_coeff: f64,
}

impl Default for WcmSection {
    fn default() -> Self {
        let ctx = WcmContext::default();
        Self {
            b: ctx.b,
            theta_deg: ctx.default_theta_deg,
            vwc_coeff: ctx.vwc_coeff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub window: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub clamp_floor: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub aux: Vec<AuxFeature>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            window: t.window,
            hidden: t.hidden,
            lambda: t.loss.lambda,
            clamp_floor: t.loss.clamp_floor,
            learning_rate: t.adam.learning_rate,
            epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            seed: t.seed,
            aux: FeatureSpec::default().aux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for CvSection {
    fn default() -> Self {
        let c = CvConfig::default();
        Self {
            folds: 4,
            seed: c.seed,
            val_fraction: c.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("kgsm-out"),
        }
    }
}

/// Validation failure naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        key: key.to_string(),
        message: message.into(),
    })
}

/// Parses TOML text, applies overrides, and deserializes.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError {
        key: "<file>".into(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let known = toml::Table::try_from(RunConfig::default()).map_err(|e| ConfigError {
        key: "<config>".into(),
        message: e.to_string(),
    })?;
    check_keys(&table, &known, "")?;
    RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError {
        key: "<config>".into(),
        message: e.to_string(),
    })
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError {
            key: "--config".into(),
            message: format!("{}: {e}", p.display()),
        })?,
        None => String::new(),
    };
    parse(&text, overrides)
}

/// Rejects keys absent from the default configuration, naming the full path.
fn check_keys(table: &toml::Table, known: &toml::Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if path == "data.csv" {
            continue;
        }
        match (known.get(k), v) {
            (None, _) => return err(&path, "unknown key"),
            (Some(toml::Value::Table(kt)), toml::Value::Table(vt)) => check_keys(vt, kt, &path)?,
            (Some(toml::Value::Table(_)), _) => return err(&path, "expected a section"),
            _ => {}
        }
    }
    Ok(())
}

/// `section.key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return err("--set", format!("expected section.key=value, got {assignment:?}"));
    };
    let path = path.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return err(path, "empty key segment");
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return err(path, format!("`{k}` is not a section")),
        };
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(csv) = &self.data.csv {
            if !csv.is_file() {
                return err("data.csv", format!("{} does not exist", csv.display()));
            }
        }
        self.data.synthetic.validate().or_else(|e| {
            let msg = e.to_string();
            let field = msg
                .trim_start_matches("invalid argument: ")
                .split(':')
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            let key = if field.contains(' ') {
                "data.synthetic".to_string()
            } else {
                format!("data.synthetic.{field}")
            };
            err(&key, msg)
        })?;
        let w = &self.wcm;
        if !(w.b > 0.0) {
            return err("wcm.b", "must be > 0");
        }
        if !(w.theta_deg > 0.0 && w.theta_deg < 90.0) {
            return err("wcm.theta_deg", "must lie in (0, 90) degrees");
        }
        if !(w.vwc_coeff > 0.0) {
            return err("wcm.vwc_coeff", "must be > 0");
        }
        let t = &self.training;
        if t.window == 0 {
            return err("training.window", "must be >= 1");
        }
        if t.hidden == 0 {
            return err("training.hidden", "must be >= 1");
        }
        if !(t.lambda >= 0.0) {
            return err("training.lambda", "must be >= 0");
        }
        if !(t.clamp_floor > 0.0) {
            return err("training.clamp_floor", "must be > 0");
        }
        if !(t.learning_rate > 0.0) {
            return err("training.learning_rate", "must be > 0");
        }
        if t.batch_size == 0 {
            return err("training.batch_size", "must be >= 1");
        }
        if !(t.clip_norm > 0.0) {
            return err("training.clip_norm", "must be > 0");
        }
        if t.aux.is_empty() {
            return err("training.aux", "list at least one auxiliary");
        }
        if self.cv.folds < 2 {
            return err("cv.folds", "must be >= 2");
        }
        if !(self.cv.val_fraction >= 0.0 && self.cv.val_fraction < 1.0) {
            return err("cv.val_fraction", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.data.synthetic.seed = seed;
        self.training.seed = seed;
        self.cv.seed = seed;
    }

    pub fn wcm_context(&self) -> WcmContext {
        WcmContext {
            b: self.wcm.b,
            default_theta_deg: self.wcm.theta_deg,
            vwc_coeff: self.wcm.vwc_coeff,
        }
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            aux: self.training.aux.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            window: t.window,
            hidden: t.hidden,
            loss: LossConfig {
                lambda: t.lambda,
                clamp_floor: t.clamp_floor,
            },
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                ..AdamConfig::default()
            },
            max_epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            seed: t.seed,
            ..TrainConfig::default()
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            train: self.train_config(),
            ctx: self.wcm_context(),
            spec: self.feature_spec(),
            val_fraction: self.cv.val_fraction,
            seed: self.cv.seed,
            ..CvConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert_eq!(
            parse("[training]\nwindoww = 3\n", &[]).unwrap_err().key,
            "training.windoww"
        );
        assert_eq!(parse("[bogus]\n", &[]).unwrap_err().key, "bogus");
        assert_eq!(
            parse("", &["data.synthetic.sead=1".into()]).unwrap_err().key,
            "data.synthetic.sead"
        );
    }

    #[test]
    fn overrides_apply() {
        let c = parse(
            "[training]\nwindow = 4\n",
            &[
                "training.window=6".into(),
                "data.synthetic.nonlinear=false".into(),
                "output.dir=out/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.training.window, 6);
        assert!(!c.data.synthetic.nonlinear);
        assert_eq!(c.output.dir, PathBuf::from("out/x"));
    }

    #[test]
    fn negative_noise_names_key() {
        let c = parse("", &["data.synthetic.noise_db=-1".into()]).unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.key, "data.synthetic.noise_db");
    }

    #[test]
    fn csv_key_accepted() {
        let c = parse("[data]\ncsv = \"x.csv\"\n", &[]).unwrap();
        assert_eq!(c.data.csv, Some(PathBuf::from("x.csv")));
    }

    #[test]
    fn aux_list_parses() {
        let c = parse("[training]\naux = [\"ndvi\", \"doy_sin\"]\n", &[]).unwrap();
        assert_eq!(c.training.aux, vec![AuxFeature::Ndvi, AuxFeature::DoySin]);
    }
}
