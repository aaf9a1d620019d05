use std::collections::BTreeSet;
use std::hint::black_box;

use caaf_core::agents::{AgentSet, ScriptedPolicy};
use caaf_core::assets;
use caaf_core::converge::{run_pipeline, RunConfig};
use caaf_core::expr::{eval, parse};
use caaf_core::facts::Layered;
use caaf_core::lab::clopper_pearson;
use caaf_core::paradox::{feasible_uncached, minimal_unsat_subset_with, Oracle};
use caaf_core::uai::solve_boundary;
use caaf_core::FactMap;
use criterion::{criterion_group, criterion_main, Criterion};

const STOPPING: &str = "m_per_sec_to_km_per_h_factor * sqrt(2 * road_friction_mu * g * perception_range_m) >= vehicle_speed_kmph_t5";

fn expressions(c: &mut Criterion) {
    c.bench_function("parse stopping distance", |b| b.iter(|| parse(black_box(STOPPING)).unwrap()));
    let reg = assets::ad_registry();
    let expr = parse(STOPPING).unwrap();
    let facts = FactMap::new().with("perception_range_m", 30.0).with("vehicle_speed_kmph_t5", 55.0);
    c.bench_function("eval stopping distance", |b| {
        b.iter(|| eval(black_box(&expr), &Layered(&[&facts, &reg.constants])).unwrap())
    });
}

fn boundaries(c: &mut Criterion) {
    let reg = assets::ad_registry();
    let var = reg.variable("vehicle_speed_kmph_t5").unwrap().clone();
    let rule = reg.rule("FORWARD_COLLISION_PREVENTION_PERCEPTION").unwrap().clone();
    let env = Layered(&[&reg.constants]);
    c.bench_function("solve forward boundary", |b| b.iter(|| solve_boundary(&rule, &env, &var.name, &var)));
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    let ad = assets::ad_registry();
    g.bench_function("ad conflict set", |b| {
        b.iter(|| minimal_unsat_subset_with(&Oracle::new(), &ad, &ad.rule_ids(), &FactMap::new()).unwrap())
    });
    let pharma = assets::pharma_registry();
    let all: BTreeSet<String> = pharma.rule_ids();
    g.bench_function("pharma full scan", |b| b.iter(|| feasible_uncached(&pharma, &all, &FactMap::new()).unwrap()));
    g.bench_function("pharma conflict set", |b| {
        b.iter(|| minimal_unsat_subset_with(&Oracle::new(), &pharma, &all, &FactMap::new()).unwrap())
    });
    g.finish();
}

fn pipelines(c: &mut Criterion) {
    let agents = AgentSet::scripted(ScriptedPolicy::BoundaryChaser);
    let (paradox, paradox_reg) = (assets::ad_problem(), assets::ad_registry());
    let (pass, pass_reg) = (assets::ad_pass_problem(), assets::ad_pass_registry());
    c.bench_function("pipeline ad paradox", |b| {
        b.iter(|| run_pipeline(&paradox, &paradox_reg, &agents, &RunConfig::default()).unwrap())
    });
    c.bench_function("pipeline ad pass", |b| b.iter(|| run_pipeline(&pass, &pass_reg, &agents, &RunConfig::default()).unwrap()));
}

fn statistics(c: &mut Criterion) {
    c.bench_function("clopper-pearson 57/200", |b| b.iter(|| clopper_pearson(black_box(57), 200, 0.95).unwrap()));
}

criterion_group!(benches, expressions, boundaries, oracle, pipelines, statistics);
criterion_main!(benches);
