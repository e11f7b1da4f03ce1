//! Site time series, synthetic scenes, CSV ingestion, spatial folds and
//! sequence windowing.

mod csv_io;
mod folds;
mod synthetic;
mod windows;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, read_csv, write_csv, CSV_HEADER};
pub use folds::{assign_spatial_folds, FoldAssignment};
pub use synthetic::{generate_synthetic, GroundTruth, SiteTruth, SyntheticConfig, SyntheticDataset};
pub use windows::{
    build_windows, build_windows_at, compute_standardization, AuxFeature, FeatureSpec, Moments, RawObs, SequenceBatch,
    Standardization, WcmContext, STD_FLOOR,
};

/// Static soil descriptors for a site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilAux {
    pub clay: f64,
    pub sand: f64,
    pub silt: f64,
    /// Available water capacity.
    pub awc: f64,
}

/// One site's acquisition series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSeries {
    pub site_id: String,
    /// Planar location, arbitrary units.
    pub x: f64,
    pub y: f64,
    pub timestamps: Vec<NaiveDate>,
    /// VH backscatter (dB).
    pub sigma_obs_db: Vec<f64>,
    /// Local incidence angle (degrees); `None` falls back to the default.
    pub incidence_deg: Vec<Option<f64>>,
    pub ndvi: Vec<f64>,
    pub albedo: Vec<f64>,
    pub soil: SoilAux,
    /// Reference soil moisture (m³/m³), possibly missing.
    pub sm_ref: Vec<Option<f64>>,
}

impl SiteSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.sm_ref.iter().filter(|s| s.is_some()).count()
    }

    /// Checks every invariant; `row` in errors is the index within the series.
    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        let lens = [
            ("sigma_obs_db", self.sigma_obs_db.len()),
            ("incidence_deg", self.incidence_deg.len()),
            ("ndvi", self.ndvi.len()),
            ("albedo", self.albedo.len()),
            ("sm_ref", self.sm_ref.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::DimensionMismatch(format!(
                    "site {}: column {name} has {len} values, expected {n}",
                    self.site_id
                )));
            }
        }
        let violation = |row: usize, column: &str, message: String| Error::InvariantViolation {
            row,
            column: column.to_string(),
            message,
        };
        let s = &self.soil;
        for (name, v) in [("clay", s.clay), ("sand", s.sand), ("silt", s.silt)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(violation(0, name, format!("fraction {v} outside [0, 1]")));
            }
        }
        if s.clay + s.sand + s.silt > 1.0 + 1e-9 {
            return Err(violation(0, "silt", "soil fractions sum above 1".into()));
        }
        if !s.awc.is_finite() || s.awc < 0.0 {
            return Err(violation(
                0,
                "awc",
                format!("invalid available water capacity {}", s.awc),
            ));
        }
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(violation(0, "x", "non-finite site location".into()));
        }
        for i in 0..n {
            if i > 0 && self.timestamps[i] <= self.timestamps[i - 1] {
                return Err(violation(
                    i,
                    "timestamp",
                    "timestamps must be strictly increasing".into(),
                ));
            }
            if !self.sigma_obs_db[i].is_finite() {
                return Err(violation(i, "sigma_obs_db", "non-finite backscatter".into()));
            }
            if let Some(th) = self.incidence_deg[i] {
                if !(th > 0.0 && th < 90.0) {
                    return Err(violation(i, "incidence_deg", format!("angle {th} outside (0, 90)")));
                }
            }
            if !(-1.0..=1.0).contains(&self.ndvi[i]) {
                return Err(violation(i, "ndvi", format!("value {} outside [-1, 1]", self.ndvi[i])));
            }
            if !self.albedo[i].is_finite() {
                return Err(violation(i, "albedo", "non-finite albedo".into()));
            }
            if let Some(sm) = self.sm_ref[i] {
                if !(0.0..=1.0).contains(&sm) {
                    return Err(violation(i, "sm_ref", format!("value {sm} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}
