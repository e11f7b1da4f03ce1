//! Closed-form Water Cloud Model.
//!
//! Total backscatter is the sum of a vegetation volume term and the soil
//! term attenuated twice by the canopy:
//!
//! ```text
//! σ_obs = A·cosθ·(1 − γ²) + γ²·σ_soil          (linear power)
//! γ²    = exp(−2·B·VWC / cosθ)
//! σ_soil[dB] = C + D·SM
//! ```
//!
//! Arithmetic is done in linear power. Decibels appear only where the soil
//! regression lives and at I/O.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default local incidence angle in degrees.
pub const DEFAULT_THETA_DEG: f64 = 40.0;
/// Vegetation parameter for grassland.
pub const DEFAULT_B: f64 = 0.084;
/// Residual floor (linear power) used by the clamped isolation.
pub const DEFAULT_CLAMP_FLOOR: f64 = 1e-10;

const DB_PER_NEPER_POWER: f64 = 10.0 / std::f64::consts::LN_10;

/// Backscatter coefficient in decibels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Decibel(pub f64);

/// Backscatter coefficient in linear power units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LinearPower(pub f64);

/// Volumetric soil moisture (m³/m³). Values outside `[0, 1]` are
/// representable because the inversion can produce them.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SoilMoisture(pub f64);

impl SoilMoisture {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_physical(self) -> bool {
        (0.0..=1.0).contains(&self.0)
    }
}

pub fn db_to_linear(x: Decibel) -> LinearPower {
    LinearPower(10f64.powf(x.0 / 10.0))
}

pub fn linear_to_db(x: LinearPower) -> Result<Decibel> {
    if !(x.0 > 0.0) {
        return Err(Error::NonPositivePower(x.0));
    }
    Ok(Decibel(10.0 * x.0.log10()))
}

/// Semi-empirical WCM parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcmParams {
    /// Vegetation backscattering factor (linear).
    pub a: f64,
    /// Vegetation parameter, optical depth per kg/m² of VWC.
    pub b: f64,
    /// Soil regression intercept (dB).
    pub c: f64,
    /// Soil regression slope (dB per m³/m³).
    pub d: f64,
    /// Local incidence angle (radians).
    pub theta: f64,
}

impl WcmParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, theta_deg: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            c,
            d,
            theta: theta_deg.to_radians(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.a, self.b, self.c, self.d, self.theta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite field".into()));
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidParams(format!("a must be > 0, got {}", self.a)));
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidParams(format!("b must be > 0, got {}", self.b)));
        }
        if self.d == 0.0 {
            return Err(Error::InvalidParams("d must be non-zero".into()));
        }
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParams(format!(
                "theta must lie in (0, 90) degrees, got {}",
                self.theta.to_degrees()
            )));
        }
        Ok(())
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    /// Copy with a per-sample incidence angle.
    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }
}

/// Canopy state for one acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VegState {
    pub vwc: f64,
    pub tau: f64,
    pub gamma2: f64,
}

pub fn attenuation(vwc: f64, params: &WcmParams) -> VegState {
    let tau = params.b * vwc;
    let gamma2 = (-2.0 * tau / params.theta.cos()).exp();
    VegState { vwc, tau, gamma2 }
}

/// Vegetation volume contribution `a·cosθ·(1 − γ²)` in linear power.
pub fn vegetation_term(a: f64, veg: &VegState, theta: f64) -> LinearPower {
    LinearPower(a * theta.cos() * (1.0 - veg.gamma2))
}

/// Simulates total backscatter (dB) for a given soil moisture and canopy.
pub fn wcm_forward(sm: SoilMoisture, vwc: f64, params: &WcmParams) -> Decibel {
    let soil_db = Decibel(params.c + params.d * sm.0);
    forward_from_soil_db(soil_db, vwc, params)
}

/// Forward model starting from a soil backscatter already expressed in dB.
pub fn forward_from_soil_db(soil_db: Decibel, vwc: f64, params: &WcmParams) -> Decibel {
    let veg = attenuation(vwc, params);
    let soil = db_to_linear(soil_db).0;
    let total = vegetation_term(params.a, &veg, params.theta).0 + veg.gamma2 * soil;
    Decibel(10.0 * total.log10())
}

/// Removes the vegetation term from an observation and returns the soil
/// backscatter in dB. `a` is passed separately so learned values can be
/// used without rebuilding the parameter set.
pub fn isolate_soil_backscatter(obs: Decibel, vwc: f64, a: f64, params: &WcmParams) -> Result<Decibel> {
    let veg = attenuation(vwc, params);
    let residual = db_to_linear(obs).0 - vegetation_term(a, &veg, params.theta).0;
    if residual <= 0.0 {
        return Err(Error::NegativeResidual { residual });
    }
    Ok(Decibel(10.0 * (residual / veg.gamma2).log10()))
}

/// Result of the clamped soil-backscatter isolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isolation {
    pub soil_db: Decibel,
    /// The residual hit the floor; the derivative is zero there.
    pub clamped: bool,
    /// ∂σ_soil[dB] / ∂(log a).
    pub d_soil_d_log_a: f64,
}

/// Total variant of [`isolate_soil_backscatter`]: the residual is floored at
/// `floor` and the sample is flagged instead of failing.
pub fn isolate_soil_backscatter_clamped(obs: Decibel, vwc: f64, a: f64, params: &WcmParams, floor: f64) -> Isolation {
    let veg = attenuation(vwc, params);
    let veg_term = vegetation_term(a, &veg, params.theta).0;
    let residual = db_to_linear(obs).0 - veg_term;
    let (residual, clamped) = if residual < floor {
        (floor, true)
    } else {
        (residual, false)
    };
    let d_soil_d_log_a = if clamped {
        0.0
    } else {
        -DB_PER_NEPER_POWER * veg_term / residual
    };
    Isolation {
        soil_db: Decibel(10.0 * (residual / veg.gamma2).log10()),
        clamped,
        d_soil_d_log_a,
    }
}

/// Inverts the WCM for soil moisture.
pub fn wcm_invert_sm(obs: Decibel, vwc: f64, params: &WcmParams) -> Result<SoilMoisture> {
    if params.d == 0.0 {
        return Err(Error::InvalidParams("d must be non-zero".into()));
    }
    let soil = isolate_soil_backscatter(obs, vwc, params.a, params)?;
    Ok(SoilMoisture((soil.0 - params.c) / params.d))
}

/// Inversion through the clamped isolation. Returns the estimate and whether
/// the clamp was hit.
pub fn wcm_invert_sm_clamped(obs: Decibel, vwc: f64, params: &WcmParams, floor: f64) -> (SoilMoisture, bool) {
    let iso = isolate_soil_backscatter_clamped(obs, vwc, params.a, params, floor);
    (SoilMoisture((iso.soil_db.0 - params.c) / params.d), iso.clamped)
}

/// Clamped linear NDVI → VWC map (kg/m²).
pub fn vwc_from_ndvi(ndvi: f64, coeff: f64) -> f64 {
    coeff * ndvi.max(0.0)
}
