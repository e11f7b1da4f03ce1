use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kgsm::calibrate::{calibration_objective_with, CalibrationProblem};
use kgsm::data::{compute_standardization, generate_synthetic, FeatureSpec, SiteSeries, SyntheticConfig, WcmContext};
use kgsm::kg::{kg_loss, labeled_windows, LossConfig, LstmModel};
use kgsm::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn scene() -> Vec<SiteSeries> {
    generate_synthetic(&SyntheticConfig::default()).unwrap().sites
}

fn bench_kg_loss(c: &mut Criterion) {
    let sites = scene();
    let refs: Vec<&SiteSeries> = sites.iter().collect();
    let spec = FeatureSpec::default();
    let ctx = WcmContext::default();
    let stats = compute_standardization(&refs, &spec, &ctx, 0.05, 1e-10).unwrap();
    let all = labeled_windows(&refs, 8, &spec, &stats, &ctx, Exec::Sequential).unwrap();
    let model = LstmModel::new(spec, 8, 32, ctx, stats, LossConfig::default(), 7);

    let mut group = c.benchmark_group("kg_loss");
    for size in [32usize, 256, all.len()] {
        let idx: Vec<usize> = (0..size).collect();
        let batch = all.select(&idx);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, size), &batch, |b, batch| {
                b.iter(|| kg_loss(batch, &model, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_calibration_objective(c: &mut Criterion) {
    let sites = scene();
    let problem = CalibrationProblem::from_sites(sites.iter(), &WcmContext::default());
    let mut group = c.benchmark_group("calibration_objective");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| calibration_objective_with(0.02f64.ln(), -25.0, 30.0, &problem, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_kg_loss, bench_calibration_objective);
criterion_main!(benches);
