use std::path::Path;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use cvcert::estimation::{accumulate, fidelity_functional, lo_functional};
use cvcert::fock::{prepare_lo_target, witness_expectation};
use cvcert::harness::Experiment;
use cvcert::symplectic::random_passive;
use cvcert::{BoundForm, ExperimentConfig, NetworkSpec};

const VACUUM2: &str = r#"{"m": 2, "O": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "D": [1,1,1,1], "Oprime": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "x": [0,0,0,0], "nvec": [0,0]}"#;

fn vacuum_config(budget: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"network": {VACUUM2}, "test": {{"f_t": 0.8, "alpha": 0.2, "epsilon": 0.1}}, "scenario": {{"backend": "gaussian", "recipe": "honest"}}, "budget_mode": "{budget}", "seed": 1}}"#
    );
    ExperimentConfig::from_json(&text, Path::new(".")).unwrap()
}

fn lo_net(m: usize, n: usize) -> NetworkSpec {
    let t = random_passive(m, m, 11);
    NetworkSpec::linear_optical(t.o, n).unwrap()
}

fn functionals(c: &mut Criterion) {
    let gauss = NetworkSpec::gaussian(random_passive(4, 4, 5));
    c.bench_function("functional/gaussian_m4", |b| b.iter(|| fidelity_functional(black_box(&gauss), BoundForm::Normalized).unwrap()));
    let lo = lo_net(3, 2);
    c.bench_function("functional/lo_m3_n2", |b| b.iter(|| lo_functional(black_box(&lo), BoundForm::Normalized).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    c.bench_function("experiment/compile_vacuum", |b| b.iter(|| Experiment::new(vacuum_config("reduced:10000")).unwrap()));
    let exp = Experiment::new(vacuum_config("reduced:10000")).unwrap();
    c.bench_function("experiment/trial_vacuum", |b| b.iter(|| exp.run_trial(black_box(7)).unwrap()));
    let records = exp.run_trial(7).unwrap().records;
    c.bench_function("estimation/accumulate_vacuum", |b| {
        b.iter_batched(|| records.clone(), |r| accumulate(&r, &exp.functional, &exp.design).unwrap(), BatchSize::SmallInput)
    });
}

fn witness(c: &mut Criterion) {
    let net = lo_net(3, 1);
    let state = prepare_lo_target(&net, 6).unwrap();
    c.bench_function("fock/witness_m3_n1", |b| b.iter(|| witness_expectation(black_box(&state), &net, BoundForm::Normalized).unwrap()));
}

criterion_group!(benches, functionals, pipeline, witness);
criterion_main!(benches);
