use std::hint::black_box;

use clonesim_bench::simulated_table;
use clonesim_core::stats::synthetic::log_wealth_table;
use clonesim_core::stats::{fit_cox, fit_lmm, fit_logistic, DesignSpec};
use clonesim_core::Outcome;
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_lmm(c: &mut Criterion) {
    let table = log_wealth_table(500, 9, 0.18, 0.3, 0.1);
    let spec = DesignSpec::treatment(Outcome::LogWealth);
    c.bench_function("fit_lmm_treatment_500", |b| {
        b.iter(|| black_box(fit_lmm(&spec, &table).unwrap()))
    });
}

fn bench_full_models(c: &mut Criterion) {
    let table = simulated_table(500);
    let mut g = c.benchmark_group("full_design_500");
    g.sample_size(10);
    g.bench_function("lmm_log_wealth", |b| {
        b.iter(|| black_box(fit_lmm(&DesignSpec::full(Outcome::LogWealth), &table).unwrap()))
    });
    g.bench_function("logistic_chronic", |b| {
        b.iter(|| black_box(fit_logistic(&DesignSpec::full(Outcome::Chronic), &table).unwrap()))
    });
    g.bench_function("cox_mortality", |b| {
        b.iter(|| black_box(fit_cox(&DesignSpec::full(Outcome::Mortality), &table).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench_lmm, bench_full_models);
criterion_main!(benches);
