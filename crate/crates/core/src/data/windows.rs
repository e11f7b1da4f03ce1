//! Feature standardization and fixed-length sequence windows.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::SiteSeries;
use crate::error::{Error, Result};
use crate::wcm::{self, Decibel, WcmParams};

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Auxiliary (non-radar) inputs fed to the sequence model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxFeature {
    Ndvi,
    Albedo,
    Clay,
    Sand,
    Silt,
    Awc,
    DoySin,
    DoyCos,
}

impl AuxFeature {
    pub const ALL: [AuxFeature; 8] = [
        AuxFeature::Ndvi,
        AuxFeature::Albedo,
        AuxFeature::Clay,
        AuxFeature::Sand,
        AuxFeature::Silt,
        AuxFeature::Awc,
        AuxFeature::DoySin,
        AuxFeature::DoyCos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AuxFeature::Ndvi => "ndvi",
            AuxFeature::Albedo => "albedo",
            AuxFeature::Clay => "clay",
            AuxFeature::Sand => "sand",
            AuxFeature::Silt => "silt",
            AuxFeature::Awc => "awc",
            AuxFeature::DoySin => "doy_sin",
            AuxFeature::DoyCos => "doy_cos",
        }
    }

    fn value(self, s: &SiteSeries, t: usize) -> f64 {
        let doy_angle = || std::f64::consts::TAU * s.timestamps[t].ordinal() as f64 / 365.25;
        match self {
            AuxFeature::Ndvi => s.ndvi[t],
            AuxFeature::Albedo => s.albedo[t],
            AuxFeature::Clay => s.soil.clay,
            AuxFeature::Sand => s.soil.sand,
            AuxFeature::Silt => s.soil.silt,
            AuxFeature::Awc => s.soil.awc,
            AuxFeature::DoySin => doy_angle().sin(),
            AuxFeature::DoyCos => doy_angle().cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub aux: Vec<AuxFeature>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            aux: AuxFeature::ALL.to_vec(),
        }
    }
}

impl FeatureSpec {
    /// Model input width: isolated soil backscatter plus the auxiliaries.
    pub fn input_dim(&self) -> usize {
        1 + self.aux.len()
    }
}

/// WCM constants needed to turn a raw acquisition into model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcmContext {
    pub b: f64,
    /// Used when an acquisition carries no incidence angle.
    pub default_theta_deg: f64,
    pub vwc_coeff: f64,
}

impl Default for WcmContext {
    fn default() -> Self {
        Self {
            b: wcm::DEFAULT_B,
            default_theta_deg: wcm::DEFAULT_THETA_DEG,
            vwc_coeff: 1.0,
        }
    }
}

impl WcmContext {
    pub fn raw_obs(&self, s: &SiteSeries, t: usize) -> RawObs {
        RawObs {
            obs_db: s.sigma_obs_db[t],
            vwc: wcm::vwc_from_ndvi(s.ndvi[t], self.vwc_coeff),
            theta: s.incidence_deg[t].unwrap_or(self.default_theta_deg).to_radians(),
        }
    }

    /// WCM parameters for one acquisition with the given `a`. C and D are
    /// unused by the isolation and set to placeholders.
    pub fn params_for(&self, a: f64, raw: &RawObs) -> WcmParams {
        WcmParams {
            a,
            b: self.b,
            c: 0.0,
            d: 1.0,
            theta: raw.theta,
        }
    }
}

/// Per-acquisition physics inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawObs {
    pub obs_db: f64,
    /// Vegetation water content (kg/m²).
    pub vwc: f64,
    /// Incidence angle (radians).
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    /// Population mean and standard deviation, std floored at [`STD_FLOOR`].
    pub fn of(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Err(Error::EmptyInput("no values to standardize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Standardization statistics with the set of sites they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Isolated soil backscatter (dB), computed with `a_init`.
    pub soil: Moments,
    pub aux: Vec<Moments>,
    pub a_init: f64,
    pub provenance: BTreeSet<String>,
}

impl Standardization {
    pub fn touches_any<'a>(&self, sites: impl IntoIterator<Item = &'a str>) -> bool {
        sites.into_iter().any(|s| self.provenance.contains(s))
    }
}

/// Computes standardization statistics from training sites only.
///
/// The soil-backscatter statistics use the clamped isolation with `a_init`;
/// they stay frozen while `a` is learned.
pub fn compute_standardization(
    train_sites: &[&SiteSeries],
    spec: &FeatureSpec,
    ctx: &WcmContext,
    a_init: f64,
    clamp_floor: f64,
) -> Result<Standardization> {
    if train_sites.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("no training acquisitions".into()));
    }
    let soil = Moments::of(train_sites.iter().flat_map(|s| {
        (0..s.len()).map(move |t| {
            let raw = ctx.raw_obs(s, t);
            let p = ctx.params_for(a_init, &raw);
            wcm::isolate_soil_backscatter_clamped(Decibel(raw.obs_db), raw.vwc, a_init, &p, clamp_floor)
                .soil_db
                .0
        })
    }))?;
    let aux = spec
        .aux
        .iter()
        .map(|f| {
            Moments::of(
                train_sites
                    .iter()
                    .flat_map(|s| (0..s.len()).map(move |t| f.value(s, t))),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Standardization {
        soil,
        aux,
        a_init,
        provenance: train_sites.iter().map(|s| s.site_id.clone()).collect(),
    })
}

/// Windowed model inputs. Per-step arrays are laid out sample-major
/// (`sample * window + step`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub window: usize,
    pub aux_dim: usize,
    /// Standardized auxiliaries, `batch × window × aux_dim`.
    pub aux: Vec<f64>,
    /// Physics inputs for the soil-backscatter isolation, `batch × window`.
    pub raw: Vec<RawObs>,
    /// Step repeats the earliest observation, `batch × window`.
    pub padded: Vec<bool>,
    /// Reference SM at the window end; `None` for prediction-only windows.
    pub targets: Vec<Option<f64>>,
    pub site_ids: Vec<String>,
    pub end_times: Vec<NaiveDate>,
}

impl SequenceBatch {
    pub fn empty(window: usize, aux_dim: usize) -> Self {
        Self {
            window,
            aux_dim,
            aux: Vec::new(),
            raw: Vec::new(),
            padded: Vec::new(),
            targets: Vec::new(),
            site_ids: Vec::new(),
            end_times: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let b = self.len();
        if self.window == 0 {
            return Err(Error::DimensionMismatch("window length is zero".into()));
        }
        if self.aux.len() != b * self.window * self.aux_dim
            || self.raw.len() != b * self.window
            || self.padded.len() != b * self.window
            || self.site_ids.len() != b
            || self.end_times.len() != b
        {
            return Err(Error::DimensionMismatch(
                "sequence batch arrays disagree in length".into(),
            ));
        }
        Ok(())
    }

    /// Targets, failing if any window is unlabeled.
    pub fn labeled_targets(&self) -> Result<Vec<f64>> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| Error::MissingFeature(format!("target of window {i}"))))
            .collect()
    }

    pub fn append(&mut self, other: &SequenceBatch) -> Result<()> {
        if other.window != self.window || other.aux_dim != self.aux_dim {
            return Err(Error::DimensionMismatch(
                "cannot append batches of different shape".into(),
            ));
        }
        self.aux.extend_from_slice(&other.aux);
        self.raw.extend_from_slice(&other.raw);
        self.padded.extend_from_slice(&other.padded);
        self.targets.extend_from_slice(&other.targets);
        self.site_ids.extend_from_slice(&other.site_ids);
        self.end_times.extend_from_slice(&other.end_times);
        Ok(())
    }

    /// Sub-batch with the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let (w, d) = (self.window, self.aux_dim);
        let mut out = SequenceBatch::empty(w, d);
        for &i in indices {
            out.aux.extend_from_slice(&self.aux[i * w * d..(i + 1) * w * d]);
            out.raw.extend_from_slice(&self.raw[i * w..(i + 1) * w]);
            out.padded.extend_from_slice(&self.padded[i * w..(i + 1) * w]);
            out.targets.push(self.targets[i]);
            out.site_ids.push(self.site_ids[i].clone());
            out.end_times.push(self.end_times[i]);
        }
        out
    }
}

/// One window ending at every acquisition with a reference SM.
pub fn build_windows(
    series: &SiteSeries,
    window: usize,
    spec: &FeatureSpec,
    stats: &Standardization,
    ctx: &WcmContext,
) -> Result<SequenceBatch> {
    let ends: Vec<usize> = (0..series.len()).filter(|&t| series.sm_ref[t].is_some()).collect();
    build_windows_at(series, &ends, window, spec, stats, ctx)
}

/// Windows ending at the given acquisition indices. Steps before the start
/// of the series repeat the earliest acquisition and are flagged as padded.
pub fn build_windows_at(
    series: &SiteSeries,
    ends: &[usize],
    window: usize,
    spec: &FeatureSpec,
    stats: &Standardization,
    ctx: &WcmContext,
) -> Result<SequenceBatch> {
    if window == 0 {
        return Err(Error::InvalidArgument("window length must be >= 1".into()));
    }
    if stats.aux.len() != spec.aux.len() {
        return Err(Error::MissingFeature(format!(
            "standardization covers {} auxiliaries, feature spec lists {}",
            stats.aux.len(),
            spec.aux.len()
        )));
    }
    let mut out = SequenceBatch::empty(window, spec.aux.len());
    for &end in ends {
        if end >= series.len() {
            return Err(Error::InvalidArgument(format!(
                "window end {end} beyond series {} of length {}",
                series.site_id,
                series.len()
            )));
        }
        for k in 0..window {
            let offset = window - 1 - k;
            let (t, padded) = if offset > end { (0, true) } else { (end - offset, false) };
            out.raw.push(ctx.raw_obs(series, t));
            out.padded.push(padded);
            for (f, m) in spec.aux.iter().zip(&stats.aux) {
                let v = m.apply(f.value(series, t));
                if !v.is_finite() {
                    return Err(Error::MissingFeature(format!(
                        "site {} step {t}: non-finite {}",
                        series.site_id,
                        f.name()
                    )));
                }
                out.aux.push(v);
            }
        }
        out.targets.push(series.sm_ref[end]);
        out.site_ids.push(series.site_id.clone());
        out.end_times.push(series.timestamps[end]);
    }
    Ok(out)
}
