#![allow(dead_code)]

use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use kgsm::data::{generate_synthetic, SiteSeries, SoilAux, SyntheticConfig, SyntheticDataset};

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sample_sites.csv")
}

pub fn linear_clean(n_sites: usize, n_timesteps: usize, seed: u64) -> SyntheticDataset {
    generate_synthetic(&SyntheticConfig {
        n_sites,
        n_timesteps,
        noise_db: 0.0,
        nonlinear: false,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// A hand-built series with every field explicit.
pub fn series(id: &str, x: f64, y: f64, obs_db: &[f64], ndvi: &[f64], sm_ref: &[Option<f64>]) -> SiteSeries {
    let n = obs_db.len();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    SiteSeries {
        site_id: id.to_string(),
        x,
        y,
        timestamps: (0..n).map(|t| start + Duration::days(12 * t as i64)).collect(),
        sigma_obs_db: obs_db.to_vec(),
        incidence_deg: vec![Some(40.0); n],
        ndvi: ndvi.to_vec(),
        albedo: vec![0.2; n],
        soil: SoilAux {
            clay: 0.2,
            sand: 0.5,
            silt: 0.3,
            awc: 0.15,
        },
        sm_ref: sm_ref.to_vec(),
    }
}

pub fn naive_rmse(p: &[f64], o: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - o[i]) * (p[i] - o[i]);
    }
    (s / p.len() as f64).sqrt()
}
