use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cogsched::domain::ActionId;
use cogsched::eval::{evaluate, EvalConfig, SequenceRecord};
use cogsched::forecaster::{build_samples, teacher_coins, DecodeMode, Forecaster, ForecasterConfig};
use cogsched::par::Exec;
use cogsched::synthgen::{generate_dataset, GeneratorConfig};

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn forecaster(c: &mut Criterion) {
    let days = generate_dataset(&GeneratorConfig::with(40, 6, 1)).unwrap();
    let cfg = ForecasterConfig { hidden_dim: 32, n_heads: 4, seed: 1, ..Default::default() };
    let mut model = Forecaster::new(cfg).unwrap();
    let samples = build_samples(&days, &(3..35).collect::<Vec<_>>(), 3, 6).unwrap();
    let coins: Vec<Vec<bool>> = samples.iter().map(|s| teacher_coins(1, 0, s.day as u64, 24, 0.5)).collect();

    let mut g = c.benchmark_group("loss_and_grad_32_days");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.loss_and_grad(&samples, &coins, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("predict_32_days");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.predict(&samples, DecodeMode::Sample { seed: 2, min_prob: 0.1 }, exec).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let records: Vec<SequenceRecord> = (0..2000)
        .map(|d| SequenceRecord {
            day: d,
            truth: (0..24).map(|h| ActionId(((d * 7 + h * 3) % 6) as u8)).collect(),
            pred: (0..24).map(|h| ActionId(((d * 5 + h) % 6) as u8)).collect(),
        })
        .collect();
    let cfg = EvalConfig::default();
    let mut g = c.benchmark_group("evaluate_2000_days");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(records.clone(), 6, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forecaster, metrics);
criterion_main!(benches);
