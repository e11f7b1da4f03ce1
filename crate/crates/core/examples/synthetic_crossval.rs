//! Four-fold spatial cross-validation on the default nonlinear synthetic scene.
//!
//! `cargo run --release -p kgsm --example synthetic_crossval [seed]`

use std::time::Instant;

use kgsm::data::{assign_spatial_folds, generate_synthetic, AuxFeature, SyntheticConfig};
use kgsm::eval::{run_cross_validation, summary_table, CvConfig};

fn main() -> kgsm::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let ds = generate_synthetic(&SyntheticConfig {
        seed,
        ..Default::default()
    })?;
    let folds = assign_spatial_folds(&ds.sites, 4, seed)?;
    let mut cfg = CvConfig::default();
    cfg.spec.aux = vec![
        AuxFeature::Ndvi,
        AuxFeature::Albedo,
        AuxFeature::DoySin,
        AuxFeature::DoyCos,
    ];

    let start = Instant::now();
    let report = run_cross_validation(&ds.sites, &folds, &cfg)?;
    print!("{}", summary_table(&report));
    for f in &report.folds {
        println!("fold {}: best epoch {} of {}", f.fold, f.kg_best_epoch, f.kg_epochs_run);
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
