use std::hint::black_box;

use clonesim_bench::{backend, inputs, personas};
use clonesim_core::engine::{run_life, simulate_in_memory};
use clonesim_core::events::sample_annual_event;
use clonesim_core::persona::CloneAssignment;
use clonesim_core::rng::derive_stream;
use clonesim_core::{AgentState, Arm};
use criterion::{criterion_group, criterion_main, Criterion, Throughput};

fn bench_event_draw(c: &mut Criterion) {
    let inputs = inputs();
    let persona = &personas(1)[0];
    let mut state = AgentState::new(40, 50_000.0);
    state.employed = true;
    c.bench_function("sample_annual_event", |b| {
        b.iter(|| {
            let mut s = derive_stream(inputs.master_seed, persona.persona_id, Arm::Sham6, 40);
            black_box(sample_annual_event(&inputs.catalog, persona, &state, &mut s).unwrap())
        })
    });
}

fn bench_run_life(c: &mut Criterion) {
    let inputs = inputs();
    let backend = backend();
    let persona = &personas(1)[0];
    c.bench_function("run_life_scripted", |b| {
        b.iter(|| {
            let clone = CloneAssignment::new(persona.persona_id, Arm::Ros6);
            black_box(run_life(clone, persona, &inputs, &backend).unwrap())
        })
    });
}

fn bench_cohort(c: &mut Criterion) {
    let inputs = inputs();
    let backend = backend();
    let ps = personas(250);
    let mut g = c.benchmark_group("cohort");
    g.sample_size(10);
    g.throughput(Throughput::Elements(4 * ps.len() as u64));
    g.bench_function("simulate_250_personas", |b| {
        b.iter(|| black_box(simulate_in_memory(&ps, &inputs, &backend).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench_event_draw, bench_run_life, bench_cohort);
criterion_main!(benches);
