//! Fitting the WCM's empirical parameters (A, C, D) against reference SM.
//!
//! The search runs over `(log A, C, D)` so that `A = exp(log A)` is
//! positive for every candidate. B and the incidence angles are held fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SiteSeries, WcmContext};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::wcm::{self, Decibel, WcmParams};

/// Below this spread of γ² across the data, A is reported as poorly identified.
pub const GAMMA2_STD_WARN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub obs_db: f64,
    pub vwc: f64,
    /// Incidence angle (radians).
    pub theta: f64,
    pub sm_ref: f64,
}

/// Box constraints on `(log A, C, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub log_a: (f64, f64),
    pub c: (f64, f64),
    pub d: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            log_a: (1e-5f64.ln(), 1.0f64.ln()),
            c: (-60.0, 10.0),
            d: (0.5, 200.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProblem {
    pub observations: Vec<Observation>,
    pub fixed_b: f64,
    /// Reported as the parameter set's default incidence angle.
    pub theta_deg: f64,
    pub bounds: Bounds,
    /// Starting `(log A, C, D)`.
    pub initial: [f64; 3],
    /// Residual floor for the clamped isolation.
    pub clamp_floor: f64,
}

impl CalibrationProblem {
    pub fn new(observations: Vec<Observation>, fixed_b: f64, theta_deg: f64) -> Self {
        Self {
            observations,
            fixed_b,
            theta_deg,
            bounds: Bounds::default(),
            initial: [0.05f64.ln(), -25.0, 30.0],
            clamp_floor: wcm::DEFAULT_CLAMP_FLOOR,
        }
    }

    /// Collects every labeled acquisition from `sites`.
    pub fn from_sites<'a>(sites: impl IntoIterator<Item = &'a SiteSeries>, ctx: &WcmContext) -> Self {
        let observations = sites
            .into_iter()
            .flat_map(|s| {
                (0..s.len()).filter_map(move |t| {
                    s.sm_ref[t].map(|sm_ref| {
                        let raw = ctx.raw_obs(s, t);
                        Observation {
                            obs_db: raw.obs_db,
                            vwc: raw.vwc,
                            theta: raw.theta,
                            sm_ref,
                        }
                    })
                })
            })
            .collect();
        Self::new(observations, ctx.b, ctx.default_theta_deg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() < 3 {
            return Err(Error::EmptyInput(format!(
                "calibration needs at least 3 labeled observations, got {}",
                self.observations.len()
            )));
        }
        if let Some(o) = self.observations.iter().find(|o| !(0.0..=1.0).contains(&o.sm_ref)) {
            return Err(Error::InvalidArgument(format!(
                "reference SM {} outside [0, 1]",
                o.sm_ref
            )));
        }
        if !(self.fixed_b > 0.0) {
            return Err(Error::InvalidParams(format!("b must be > 0, got {}", self.fixed_b)));
        }
        if !(self.clamp_floor > 0.0) {
            return Err(Error::InvalidArgument("clamp floor must be > 0".into()));
        }
        Ok(())
    }

    pub fn params_at(&self, log_a: f64, c: f64, d: f64) -> WcmParams {
        WcmParams {
            a: log_a.exp(),
            b: self.fixed_b,
            c,
            d,
            theta: self.theta_deg.to_radians(),
        }
    }

    /// Population standard deviation of γ² across the observations.
    pub fn gamma2_std(&self) -> f64 {
        let g: Vec<f64> = self
            .observations
            .iter()
            .map(|o| {
                let p = self.params_at(0.0, 0.0, 1.0).with_theta(o.theta);
                wcm::attenuation(o.vwc, &p).gamma2
            })
            .collect();
        if g.is_empty() {
            return 0.0;
        }
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial simplex steps for `(log A, C, D)`.
    pub initial_steps: [f64; 3],
    /// Seed for the jittered restart.
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 5000,
            initial_steps: [0.5, 2.0, 5.0],
            seed: 0x5eed,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: WcmParams,
    /// Mean squared SM error, (m³/m³)².
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gamma2_std: f64,
    /// False when γ² barely varies and A is weakly determined.
    pub a_identifiable: bool,
    pub restarted: bool,
}

/// The calibration JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub theta_deg: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CalibrationResult {
    pub fn document(&self) -> CalibrationDocument {
        CalibrationDocument {
            a: self.params.a,
            b: self.params.b,
            c: self.params.c,
            d: self.params.d,
            theta_deg: self.params.theta_deg(),
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document())?)
    }
}

/// Mean squared difference between WCM-inverted and reference SM.
pub fn calibration_objective(log_a: f64, c: f64, d: f64, problem: &CalibrationProblem) -> f64 {
    calibration_objective_with(log_a, c, d, problem, Exec::default())
}

pub fn calibration_objective_with(log_a: f64, c: f64, d: f64, problem: &CalibrationProblem, exec: Exec) -> f64 {
    let base = problem.params_at(log_a, c, d);
    let floor = problem.clamp_floor;
    let squared = exec.map(&problem.observations, |o| {
        let p = base.with_theta(o.theta);
        let (sm, _) = wcm::wcm_invert_sm_clamped(Decibel(o.obs_db), o.vwc, &p, floor);
        (sm.0 - o.sm_ref).powi(2)
    });
    squared.iter().sum::<f64>() / problem.observations.len() as f64
}

pub fn calibrate_wcm(problem: &CalibrationProblem, config: &CalibrationConfig) -> Result<CalibrationResult> {
    problem.validate()?;
    let b = &problem.bounds;
    let opts = NelderMeadOptions {
        steps: config.initial_steps.to_vec(),
        f_tol: config.tolerance,
        x_tol: config.tolerance.sqrt(),
        max_iterations: config.max_iterations,
        lower: vec![b.log_a.0, b.c.0, b.d.0],
        upper: vec![b.log_a.1, b.c.1, b.d.1],
    };
    let objective = |x: &[f64]| calibration_objective_with(x[0], x[1], x[2], problem, config.exec);

    let mut outcome = nelder_mead::minimize(objective, &problem.initial, &opts);
    let mut iterations = outcome.iterations;
    let mut restarted = false;
    if !outcome.converged {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let start: Vec<f64> = outcome
            .x
            .iter()
            .zip(&config.initial_steps)
            .map(|(x, s)| x + 0.1 * s * rng.random_range(-1.0..1.0))
            .collect();
        let second = nelder_mead::minimize(objective, &start, &opts);
        iterations += second.iterations;
        restarted = true;
        log::debug!(
            "calibration restart: first f={:e} (degenerate={}), second f={:e}",
            outcome.f,
            outcome.degenerate,
            second.f
        );
        if second.f <= outcome.f {
            outcome = second;
        } else {
            outcome.converged = false;
        }
    }

    let initial_f = objective(&problem.initial);
    let (x, f) = if outcome.f <= initial_f {
        (outcome.x.clone(), outcome.f)
    } else {
        (problem.initial.to_vec(), initial_f)
    };

    let gamma2_std = problem.gamma2_std();
    let a_identifiable = gamma2_std >= GAMMA2_STD_WARN;
    if !a_identifiable {
        log::warn!(
            "std of two-way attenuation across calibration data is {gamma2_std:.2e} (< {GAMMA2_STD_WARN}); A is poorly identified"
        );
    }

    Ok(CalibrationResult {
        params: problem.params_at(x[0], x[1], x[2]),
        objective: f,
        iterations,
        converged: outcome.converged,
        gamma2_std,
        a_identifiable,
        restarted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn synthetic_problem(a: f64, c: f64, d: f64) -> CalibrationProblem {
        let p = WcmParams::new(a, 0.084, c, d, 40.0).unwrap();
        let mut obs = Vec::new();
        for i in 0..200 {
            let sm = 0.02 + 0.43 * ((i * 37) % 200) as f64 / 200.0;
            let vwc = 3.0 * ((i * 53) % 200) as f64 / 200.0;
            obs.push(Observation {
                obs_db: wcm::wcm_forward(wcm::SoilMoisture(sm), vwc, &p).0,
                vwc,
                theta: p.theta,
                sm_ref: sm,
            });
        }
        CalibrationProblem::new(obs, 0.084, 40.0)
    }

    #[test]
    fn objective_zero_at_truth() {
        let pr = synthetic_problem(0.02, -25.0, 30.0);
        assert!(calibration_objective(0.02f64.ln(), -25.0, 30.0, &pr) < 1e-18);
    }

    #[test]
    fn objective_uniform_offset() {
        let pr = synthetic_problem(0.02, -25.0, 30.0);
        let f = calibration_objective(0.02f64.ln(), -24.0, 30.0, &pr);
        assert!((f - (1.0 / 30.0f64).powi(2)).abs() < 1e-15, "{f}");
    }

    #[test]
    fn truth_is_local_minimum() {
        let pr = synthetic_problem(0.03, -22.0, 25.0);
        let x = [0.03f64.ln(), -22.0, 25.0];
        let f0 = calibration_objective(x[0], x[1], x[2], &pr);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            assert!(f0 <= calibration_objective(x[0] + d[0], x[1] + d[1], x[2] + d[2], &pr));
        }
    }

    #[test]
    fn objective_order_invariant() {
        let mut pr = synthetic_problem(0.02, -25.0, 30.0);
        let f = calibration_objective(0.01f64.ln(), -26.0, 28.0, &pr);
        pr.observations.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let g = calibration_objective(0.01f64.ln(), -26.0, 28.0, &pr);
        assert!(((f - g) / f).abs() < 1e-13);
    }

    #[test]
    fn recovers_generating_parameters() {
        for (a, c, d) in [(0.02, -25.0, 30.0), (0.035, -20.0, 18.0)] {
            let pr = synthetic_problem(a, c, d);
            let r = calibrate_wcm(&pr, &CalibrationConfig::default()).unwrap();
            assert!(r.params.a > 0.0);
            assert!(((r.params.a - a) / a).abs() < 0.01, "{:?}", r.params);
            assert!(((r.params.c - c) / c).abs() < 0.01);
            assert!(((r.params.d - d) / d).abs() < 0.01);
            assert!(r.a_identifiable);
        }
    }

    #[test]
    fn flags_unidentifiable_a() {
        let mut pr = synthetic_problem(0.02, -25.0, 30.0);
        for o in &mut pr.observations {
            let p = WcmParams::new(0.02, 0.084, -25.0, 30.0, 40.0).unwrap();
            o.vwc = 0.0;
            o.obs_db = wcm::wcm_forward(wcm::SoilMoisture(o.sm_ref), 0.0, &p).0;
        }
        let r = calibrate_wcm(&pr, &CalibrationConfig::default()).unwrap();
        assert_eq!(r.gamma2_std, 0.0);
        assert!(!r.a_identifiable);
        assert!(r.objective < 1e-12);
    }

    #[test]
    fn rejects_tiny_problem() {
        let mut pr = synthetic_problem(0.02, -25.0, 30.0);
        pr.observations.truncate(2);
        assert!(calibrate_wcm(&pr, &CalibrationConfig::default()).is_err());
    }

    #[test]
    fn document_keys() {
        let pr = synthetic_problem(0.02, -25.0, 30.0);
        let r = calibrate_wcm(&pr, &CalibrationConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["a", "b", "c", "converged", "d", "iterations", "objective", "theta_deg"]
        );
        assert!((v["theta_deg"].as_f64().unwrap() - 40.0).abs() < 1e-12);
    }
}
