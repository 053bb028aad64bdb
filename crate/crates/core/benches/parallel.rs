use std::hint::black_box;

use bd_spectra::analysis::spectrum_convergence;
use bd_spectra::exec::Execution;
use bd_spectra::simulate::{extinction_study, InitialState, SimulationConfig};
use bd_spectra::{build_operator, choose_truncation, top_eigenpairs, RateModel, SolverOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn logistic() -> RateModel {
    RateModel::logistic(2.0, 1.0).unwrap()
}

fn eigenpairs(c: &mut Criterion) {
    let model = logistic();
    let k = 1600;
    let op = build_operator(&model, k, &choose_truncation(&model, k).unwrap()).unwrap();
    let mut group = c.benchmark_group("top_eigenpairs_K1600_k8");
    for (name, execution) in MODES {
        let opts = SolverOptions { execution, ..SolverOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| top_eigenpairs(black_box(&op), 8, &opts).unwrap())
        });
    }
    group.finish();
}

fn convergence_ladder(c: &mut Criterion) {
    let model = logistic();
    let ladder = [100, 200, 400, 800, 1600];
    let mut group = c.benchmark_group("convergence_ladder");
    group.sample_size(10);
    for (name, execution) in MODES {
        let opts = SolverOptions { execution, ..SolverOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| spectrum_convergence(&model, black_box(&ladder), 5, &opts).unwrap())
        });
    }
    group.finish();
}

fn extinction(c: &mut Criterion) {
    let model = logistic();
    let mut group = c.benchmark_group("extinction_study_K20_500traj");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = SimulationConfig {
            seed: 1,
            n_traj: 500,
            t_max: 1e5,
            initial: InitialState::Fixed(20),
            execution,
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extinction_study(&model, 20, black_box(&cfg)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, eigenpairs, convergence_ladder, extinction);
criterion_main!(benches);
