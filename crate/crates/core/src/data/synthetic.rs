//! Seeded synthetic scenes generated through the forward WCM.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SiteSeries, SoilAux};
use crate::error::{Error, Result};
use crate::wcm::{self, Decibel, WcmParams};

pub const SM_MIN: f64 = 0.02;
pub const SM_MAX: f64 = 0.45;
const NDVI_MIN: f64 = 0.1;
const NDVI_MAX: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sites: usize,
    pub n_timesteps: usize,
    /// Generating WCM parameters.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub theta_deg: f64,
    /// Half-width of the uniform per-acquisition incidence-angle jitter (degrees).
    pub angle_jitter_deg: f64,
    /// NDVI → VWC coefficient (kg/m² per NDVI unit).
    pub vwc_coeff: f64,
    /// Standard deviation of the SM random-walk increment (m³/m³ per step).
    pub sm_step_std: f64,
    /// Mean NDVI and seasonal amplitude; per-site values are jittered around these.
    pub ndvi_mean: f64,
    pub ndvi_amplitude: f64,
    /// Observation noise standard deviation (dB).
    pub noise_db: f64,
    /// Replace the linear soil response with a saturating one.
    pub nonlinear: bool,
    /// Fraction of reference SM values dropped at random.
    pub missing_fraction: f64,
    /// Number of spatial site clusters.
    pub n_clusters: usize,
    /// Standard deviation of site scatter around a cluster centre (planar units).
    pub cluster_spread: f64,
    pub cadence_days: i64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sites: 24,
            n_timesteps: 90,
            a: 0.02,
            b: wcm::DEFAULT_B,
            c: -25.0,
            d: 30.0,
            theta_deg: wcm::DEFAULT_THETA_DEG,
            angle_jitter_deg: 0.0,
            vwc_coeff: 1.0,
            sm_step_std: 0.04,
            ndvi_mean: 0.5,
            ndvi_amplitude: 0.25,
            noise_db: 0.5,
            nonlinear: true,
            missing_fraction: 0.0,
            n_clusters: 4,
            cluster_spread: 4.0,
            cadence_days: 12,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn params(&self) -> Result<WcmParams> {
        WcmParams::new(self.a, self.b, self.c, self.d, self.theta_deg)
    }

    /// Validates the config; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if self.n_sites == 0 {
            return bad("n_sites", "must be at least 1".into());
        }
        if self.n_timesteps == 0 {
            return bad("n_timesteps", "must be at least 1".into());
        }
        if !(self.noise_db >= 0.0) {
            return bad("noise_db", format!("must be >= 0, got {}", self.noise_db));
        }
        if !(self.sm_step_std >= 0.0) {
            return bad("sm_step_std", format!("must be >= 0, got {}", self.sm_step_std));
        }
        if !(self.vwc_coeff > 0.0) {
            return bad("vwc_coeff", format!("must be > 0, got {}", self.vwc_coeff));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad(
                "missing_fraction",
                format!("must lie in [0, 1), got {}", self.missing_fraction),
            );
        }
        if self.n_clusters == 0 {
            return bad("n_clusters", "must be at least 1".into());
        }
        if self.cadence_days <= 0 {
            return bad("cadence_days", "must be positive".into());
        }
        if !(self.angle_jitter_deg >= 0.0
            && self.theta_deg - self.angle_jitter_deg > 0.0
            && self.theta_deg + self.angle_jitter_deg < 90.0)
        {
            return bad("angle_jitter_deg", "angles must stay inside (0, 90) degrees".into());
        }
        if !(self.ndvi_amplitude >= 0.0) {
            return bad("ndvi_amplitude", "must be >= 0".into());
        }
        self.params()
            .map_err(|e| Error::InvalidArgument(format!("wcm parameters: {e}")))?;
        Ok(())
    }

    /// Soil backscatter (dB) for a given soil moisture under this config's
    /// soil response.
    pub fn soil_response_db(&self, sm: f64) -> f64 {
        if self.nonlinear {
            self.c + self.d * saturating_sm(sm)
        } else {
            self.c + self.d * sm
        }
    }
}

/// Saturating soil moisture used by the nonlinear soil response.
pub fn saturating_sm(sm: f64) -> f64 {
    0.45 * (sm / 0.25).tanh()
}

/// Noise-free quantities for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub site_id: String,
    pub sm_true: Vec<f64>,
    pub vwc: Vec<f64>,
    pub clean_sigma_db: Vec<f64>,
}

/// Ground-truth sidecar for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: WcmParams,
    pub theta_deg: f64,
    pub seed: u64,
    pub config: SyntheticConfig,
    pub sites: Vec<SiteTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub sites: Vec<SiteSeries>,
    pub truth: GroundTruth,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let params = config.params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_db).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let step = Normal::new(0.0, config.sm_step_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let scatter =
        Normal::new(0.0, config.cluster_spread.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let grid = (config.n_clusters as f64).sqrt().ceil() as usize;
    let centre = |k: usize| {
        let (col, row) = (k % grid, k / grid);
        (25.0 + 50.0 * col as f64, 25.0 + 50.0 * row as f64)
    };

    let dates: Vec<NaiveDate> = (0..config.n_timesteps)
        .map(|i| config.start_date + Duration::days(config.cadence_days * i as i64))
        .collect();

    let mut sites = Vec::with_capacity(config.n_sites);
    let mut truths = Vec::with_capacity(config.n_sites);
    for s in 0..config.n_sites {
        let site_id = format!("S{:03}", s + 1);
        let (cx, cy) = centre(s % config.n_clusters);
        let x = cx + scatter.sample(&mut rng);
        let y = cy + scatter.sample(&mut rng);

        let (u1, u2, u3): (f64, f64, f64) = (
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
        );
        let total = (u1 + u2 + u3) / 0.95;
        let soil = SoilAux {
            clay: u1 / total,
            sand: u2 / total,
            silt: u3 / total,
            awc: rng.random_range(0.10..0.25),
        };

        let ndvi_mid = config.ndvi_mean + rng.random_range(-0.05..0.05);
        let ndvi_amp = config.ndvi_amplitude * rng.random_range(0.7..1.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);

        let mut sm = rng.random_range(0.08..0.38);
        let n = config.n_timesteps;
        let mut series = SiteSeries {
            site_id: site_id.clone(),
            x,
            y,
            timestamps: dates.clone(),
            sigma_obs_db: Vec::with_capacity(n),
            incidence_deg: Vec::with_capacity(n),
            ndvi: Vec::with_capacity(n),
            albedo: Vec::with_capacity(n),
            soil,
            sm_ref: Vec::with_capacity(n),
        };
        let mut truth = SiteTruth {
            site_id,
            sm_true: Vec::with_capacity(n),
            vwc: Vec::with_capacity(n),
            clean_sigma_db: Vec::with_capacity(n),
        };

        for (t, date) in dates.iter().enumerate() {
            if t > 0 {
                sm = reflect(sm + step.sample(&mut rng), SM_MIN, SM_MAX);
            }
            let doy = date.ordinal() as f64;
            let ndvi =
                (ndvi_mid + ndvi_amp * (std::f64::consts::TAU * doy / 365.25 + phase).sin()).clamp(NDVI_MIN, NDVI_MAX);
            let vwc = wcm::vwc_from_ndvi(ndvi, config.vwc_coeff);
            let theta_deg = if config.angle_jitter_deg > 0.0 {
                config.theta_deg + rng.random_range(-config.angle_jitter_deg..=config.angle_jitter_deg)
            } else {
                config.theta_deg
            };
            let p = params.with_theta(theta_deg.to_radians());
            let clean = wcm::forward_from_soil_db(Decibel(config.soil_response_db(sm)), vwc, &p).0;
            let observed = clean + noise.sample(&mut rng);
            let albedo = 0.28 - 0.1 * ndvi + 0.005 * rng.random_range(-1.0..1.0);
            let dropped = config.missing_fraction > 0.0 && rng.random_bool(config.missing_fraction);

            series.sigma_obs_db.push(observed);
            series.incidence_deg.push(Some(theta_deg));
            series.ndvi.push(ndvi);
            series.albedo.push(albedo);
            series.sm_ref.push(if dropped { None } else { Some(sm) });
            truth.sm_true.push(sm);
            truth.vwc.push(vwc);
            truth.clean_sigma_db.push(clean);
        }
        sites.push(series);
        truths.push(truth);
    }

    Ok(SyntheticDataset {
        sites,
        truth: GroundTruth {
            params,
            theta_deg: config.theta_deg,
            seed: config.seed,
            config: config.clone(),
            sites: truths,
        },
    })
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    // Large steps fold repeatedly.
    for _ in 0..8 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    lo + (v - lo).rem_euclid(width)
}
