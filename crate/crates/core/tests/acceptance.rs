//! One line per headline criterion. Runs with scripted agents only and
//! exits non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use caaf_core::agents::{AgentSet, ScriptedPolicy};
use caaf_core::assets;
use caaf_core::converge::{check_monotonic, resume_after_override, run_pipeline, RunConfig, RunStatus};
use caaf_core::expr::{eval, parse};
use caaf_core::facts::Layered;
use caaf_core::harness::{load_registry_str, meta_validate, MetaOutcome};
use caaf_core::lab::{clopper_pearson, run_benchmark, BenchSpec};
use caaf_core::paradox::{apply_resolution, minimal_unsat_subset_with, Oracle, OptionKind};
use caaf_core::rad::{context_slice, FieldType, RadNode, RadPlan};
use caaf_core::uai::solve_boundary;
use caaf_core::{FactMap, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn bench(name: &str, n: u32) -> Result<caaf_core::lab::BenchReport, String> {
    let spec = BenchSpec::builtin(name).ok_or_else(|| format!("no bench {name}"))?.with_trials(n);
    run_benchmark(&spec).map_err(err)
}

fn ad_boundaries() -> Outcome {
    let reg = assets::ad_registry();
    let var = reg.variable("vehicle_speed_kmph_t5").ok_or("no speed variable")?;
    let c = |k: &str| reg.constants.get_f64(k).unwrap_or(f64::NAN);
    let closed = |d: f64| c("m_per_sec_to_km_per_h_factor") * (2.0 * c("road_friction_mu") * c("g") * d).sqrt();
    let env = Layered(&[&reg.constants]);
    let fwd = solve_boundary(reg.rule("FORWARD_COLLISION_PREVENTION_PERCEPTION").ok_or("no forward rule")?, &env, &var.name, var)
        .boundary
        .ok_or("no forward boundary")?;
    let rear = solve_boundary(reg.rule("REAR_COLLISION_PREVENTION_DECELERATION").ok_or("no rear rule")?, &env, &var.name, var)
        .boundary
        .ok_or("no rear boundary")?;
    let pass = assets::ad_pass_registry();
    let env = Layered(&[&pass.constants]);
    let up = solve_boundary(pass.rule("FORWARD_COLLISION_PREVENTION_PERCEPTION").ok_or("no forward rule")?, &env, &var.name, var)
        .boundary
        .ok_or("no pass boundary")?;
    ensure!((fwd - 55.21).abs() < 0.005 && (fwd - closed(30.0)).abs() <= 1e-6, "forward {fwd}");
    ensure!(rear == 84.0, "rear {rear}");
    ensure!((up - 95.63).abs() < 0.005 && (up - closed(90.0)).abs() <= 1e-6, "pass upper {up}");
    Ok(format!("forward {fwd:.4}, rear {rear}, pass upper {up:.4}"))
}

fn ad_paradox() -> Outcome {
    let r = bench("ad_paradox", 20)?;
    let both = vec!["FORWARD_COLLISION_PREVENTION_PERCEPTION".to_string(), "REAR_COLLISION_PREVENTION_DECELERATION".to_string()];
    let paradox = r.trials.iter().filter(|t| t.status == Some(RunStatus::FailedParadox)).count();
    let success = r.trials.iter().filter(|t| t.status == Some(RunStatus::Success)).count();
    let mus_ok = r.trials.iter().all(|t| t.mus.as_ref() == Some(&both));
    ensure!(paradox == 20 && success == 0 && mus_ok, "paradox {paradox}/20, success {success}, mus ok {mus_ok}");
    Ok(format!("FAILED_PARADOX 20/20, MUS = both rules, 0 SUCCESS, 95% CI [{:.3}, {:.3}]", r.summary.ci_low, r.summary.ci_high))
}

fn ad_pass() -> Outcome {
    let r = bench("ad_pass", 20)?;
    let ok = r.summary.matched;
    let monotonic = r.trials.iter().filter(|t| t.monotonic).count();
    let first = r.trials.iter().filter(|t| t.verified_at_first_review.len() == 2).count();
    ensure!(
        ok == 20 && r.summary.mean_retries == 0.0 && monotonic == 20 && first == 20,
        "success {ok}/20, retries {}, monotonic {monotonic}/20, locked first review {first}/20",
        r.summary.mean_retries
    );
    Ok("SUCCESS 20/20, mean retries 0.0, monotonic 20/20, both rules locked at first review 20/20".into())
}

fn pharma() -> Outcome {
    let reg = assets::pharma_registry();
    let c = |k: &str| reg.constants.get_f64(k).unwrap_or(f64::NAN);
    let arrhenius = parse(
        "arrhenius_prefactor_per_s * exp(-activation_energy_j_per_mol / \
         (gas_constant_j_per_mol_k * (reaction_temperature_c + kelvin_offset)))",
    )
    .map_err(err)?;
    let at = FactMap::new().with("reaction_temperature_c", 98.6);
    let layers = [&at, &reg.constants];
    let k = eval(&arrhenius, &Layered(&layers)).map_err(err)?.as_f64().ok_or("k not numeric")?;
    let tau = reg.variable("residence_time_s").ok_or("no tau")?;
    let bound = solve_boundary(reg.rule("C1").ok_or("no C1")?, &Layered(&layers), &tau.name, tau)
        .boundary
        .ok_or("no conversion bound")?;
    let gap = bound - c("residence_time_max_s");
    ensure!(((k - 0.01908) / 0.01908).abs() <= 0.005, "k = {k}");
    ensure!(((bound - 157.1) / 157.1).abs() <= 0.005, "tau bound {bound}");
    ensure!((gap - 37.1).abs() < 0.8, "gap {gap}");

    let oracle = Oracle::new();
    let start = Instant::now();
    let full = oracle.feasible(&reg, &reg.rule_ids(), &FactMap::new()).map_err(err)?;
    let mus = minimal_unsat_subset_with(&oracle, &reg, &reg.rule_ids(), &FactMap::new()).map_err(err)?;
    let mut pairs_sat = true;
    for pair in [["C1", "C2"], ["C1", "C4"], ["C2", "C4"]] {
        pairs_sat &= oracle.feasible(&reg, &set(&pair), &FactMap::new()).map_err(err)?.is_sat();
    }
    let scan = start.elapsed();
    ensure!(!full.is_sat(), "full set SAT");
    ensure!(mus == set(&["C1", "C2", "C4"]), "MUS {mus:?}");
    ensure!(pairs_sat, "a 2-subset of the MUS is UNSAT");
    ensure!(scan < Duration::from_secs(60), "grid analysis took {scan:?}");
    Ok(format!(
        "k(98.6) = {k:.5}/s, tau >= {bound:.2} s, gap {gap:.2} s, full set UNSAT, MUS {{C1, C2, C4}}, pairs SAT, scan {:.1} s",
        scan.as_secs_f64()
    ))
}

fn oscillation() -> Outcome {
    let naive = bench("oscillation", 20)?;
    let converged = naive.trials.iter().filter(|t| t.status == Some(RunStatus::Success)).count();
    let all: Vec<f64> = naive.trials.iter().flat_map(|t| t.proposals.iter().copied()).collect();
    let on = all.iter().filter(|v| **v == 55.0 || **v == 84.0).count();
    let share = on as f64 / all.len().max(1) as f64;
    let caaf = bench("oscillation_caaf", 20)?;
    let halted = caaf
        .trials
        .iter()
        .filter(|t| t.status == Some(RunStatus::FailedParadox) && t.iterations == 1)
        .count();
    ensure!(converged == 0, "naive converged {converged}/20");
    ensure!(share >= 0.8, "only {:.0}% of proposals on 55/84", share * 100.0);
    ensure!(halted == 20, "CAAF halted at first review {halted}/20");
    Ok(format!(
        "naive converged 0/20 with {:.0}% of {} proposals on 55/84; CAAF FAILED_PARADOX at first review 20/20",
        share * 100.0,
        all.len()
    ))
}

fn state_locking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10c4);
    let cases = [
        (assets::ad_problem(), assets::ad_registry()),
        (assets::ad_pass_problem(), assets::ad_pass_registry()),
        (assets::pharma_pass_problem(), assets::pharma_pass_registry()),
    ];
    let mut attacks = 0;
    for i in 0..1000 {
        let (problem, reg) = &cases[i % cases.len()];
        let agents = AgentSet::scripted(ScriptedPolicy::Adversarial { rate: rng.gen_range(0.0..=1.0) });
        let st = run_pipeline(problem, reg, &agents, &RunConfig::with_seed(rng.gen())).map_err(err)?;
        ensure!(check_monotonic(&st.trace), "case {i}: verified set shrank");
        for lock in st.locks.entries() {
            ensure!(st.artifact.get(&lock.field) == Some(&lock.value), "case {i}: locked {} changed", lock.field);
        }
        attacks += st.trace.iter().filter(|e| e.kind == "lock_violation").count();
    }
    ensure!(attacks > 0, "the adversary never touched a locked field");
    Ok(format!("1000 cases, {attacks} rewrite attempts reverted, 0 violations"))
}

fn negotiation() -> Outcome {
    let problem = assets::ad_problem();
    let reg = assets::ad_registry();
    let agents = AgentSet::scripted(ScriptedPolicy::BoundaryChaser);
    let cfg = RunConfig::default();
    let st = run_pipeline(&problem, &reg, &agents, &cfg).map_err(err)?;
    ensure!(st.status == RunStatus::FailedParadox, "status {:?}", st.status);
    let b = st
        .paradox
        .as_ref()
        .and_then(|p| p.menu.iter().find(|o| o.label == "B"))
        .cloned()
        .ok_or("no option B")?;
    let a_max = b.minimal_new_value.ok_or("option B has no value")?;
    ensure!(b.kind == OptionKind::RelaxParameter, "option B is {:?}", b.kind);
    ensure!((a_max - 65.0 / 18.0).abs() <= 1e-3, "a_max {a_max}");
    let (relaxed, record) = apply_resolution(&reg, &b, "lead-engineer", "accept reduced comfort margin").map_err(err)?;
    let st = resume_after_override(st, &problem, &relaxed, &record, &agents, &cfg, &mut |_| {}).map_err(err)?;
    let v = st.artifact.get_f64("vehicle_speed_kmph_t5");
    ensure!(st.status == RunStatus::Success && v == Some(55.0), "after override {:?} at {v:?}", st.status);
    ensure!(st.global_repairs == 1, "{} repair iterations", st.global_repairs);
    Ok(format!("option B a_max = {a_max:.4} m/s^2, SUCCESS at v = 55 after one repair iteration"))
}

fn statistics() -> Outcome {
    let mut out = Vec::new();
    for (x, n, lo, hi) in [(30, 30, 0.884, 1.0), (0, 30, 0.0, 0.116), (20, 20, 0.832, 1.0)] {
        let (l, h) = clopper_pearson(x, n, 0.95).map_err(err)?;
        ensure!((l - lo).abs() <= 1e-3 && (h - hi).abs() <= 1e-3, "{x}/{n} gave [{l:.4}, {h:.4}]");
        out.push(format!("{x}/{n} [{l:.3}, {h:.3}]"));
    }
    Ok(out.join(", "))
}

fn paradox_text(seed: u64) -> Result<String, String> {
    let agents = AgentSet::scripted(ScriptedPolicy::BoundaryChaser);
    let st = run_pipeline(&assets::ad_problem(), &assets::ad_registry(), &agents, &RunConfig::with_seed(seed)).map_err(err)?;
    Ok(st.paradox.ok_or("no paradox report")?.evidence.text)
}

fn formats() -> Outcome {
    let listing = load_registry_str(assets::AD_RULES_ONLY, "listing").map_err(err)?;
    let full = assets::ad_registry();
    let same = listing.rules.len() == 2
        && listing.rules.iter().all(|r| full.rule(&r.id).is_some_and(|t| t.expr() == r.expr()));
    ensure!(same, "listing rules differ from the shipped harness");
    let (a, b) = (paradox_text(3)?, paradox_text(4)?);
    ensure!(a == b, "evidence text differs between runs");
    ensure!(a.starts_with("[SYSTEM DEADLOCK] Formal Paradox Report"), "header missing");
    ensure!(
        a.contains("target speed must be >= 84 km/h.") && a.contains("target speed must be <= 55 km/h."),
        "bound lines missing:\n{a}"
    );
    Ok(format!("listing loads, evidence header and both bound lines present, {} bytes identical across runs", a.len()))
}

fn firewall() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1e);
    let reg = assets::ad_registry();
    let mut leaks = 0;
    for _ in 0..1000 {
        let depth: usize = rng.gen_range(2..7);
        let probe = rng.gen_range(1..depth);
        let mut plan = RadPlan::default();
        let mut upstream = FactMap::new();
        let mut wanted = Vec::new();
        for i in 0..depth {
            let mut node = RadNode::new(&format!("N{i}"));
            node.parent_id = i.checked_sub(1).map(|p| format!("N{p}"));
            for j in 0..rng.gen_range(1..4) {
                let f = format!("n{i}_out{j}");
                node.expected_schema.insert(f.clone(), FieldType::Float);
                upstream.insert(f.clone(), rng.gen_range(0.0..100.0));
                if i < probe && rng.gen_bool(0.5) {
                    wanted.push(f);
                }
            }
            plan.nodes.insert(node.id.clone(), node);
        }
        let mut noise = RadNode::new("Noise");
        let mut names = Vec::new();
        for j in 0..rng.gen_range(1..6) {
            let f = format!("noise_{j}_{}", rng.gen::<u32>());
            noise.expected_schema.insert(f.clone(), FieldType::Text);
            let text = format!("fleet advisory {}: keep {} km/h", rng.gen::<u32>(), rng.gen_range(90..140));
            upstream.insert(f.clone(), Value::Text(text.clone()));
            names.push((f, text));
        }
        plan.nodes.insert("Noise".into(), noise);
        let node = plan.nodes.get_mut(&format!("N{probe}")).ok_or("probe missing")?;
        node.parents.push("Noise".into());
        node.context_keys = wanted;
        let ctx = context_slice(&plan, &format!("N{probe}"), &upstream, &reg).map_err(err)?;
        let prompt = ctx.to_prompt_json().to_string();
        leaks += names
            .iter()
            .filter(|(n, text)| ctx.facts.contains_key(n) || prompt.contains(n.as_str()) || prompt.contains(text.as_str()))
            .count();
    }
    ensure!(leaks == 0, "{leaks} leaks");

    let noisy = bench("context_rot", 20)?;
    let clean = bench("ad_paradox", 20)?;
    let bench_leaks: u32 = noisy.trials.iter().map(|t| t.leaks.unwrap_or(u32::MAX)).sum();
    let same = noisy.trials.iter().zip(&clean.trials).all(|(a, b)| a.status == b.status && a.mus == b.mus);
    ensure!(bench_leaks == 0, "{bench_leaks} leaks in the context-rot bench");
    ensure!(same, "noise changed a paradox outcome");
    Ok("0 leaks over 1000 random plans, context-rot outcomes identical to the clean bench 20/20".into())
}

fn meta() -> Outcome {
    for name in ["ad_degradation", "ad_degradation_pass", "pharma_flow_reactor", "pharma_flow_reactor_pass"] {
        let reg = assets::harness(name).ok_or("missing harness")?;
        ensure!(meta_validate(&reg).passed(), "{name} corpus fails");
    }
    for (name, constant, value, case) in [
        ("ad_degradation", "max_deceleration_limit", 10.0, "hard braking is caught by rear safety"),
        ("pharma_flow_reactor", "impurity_max", 1.0, "hot and short overshoots impurity"),
    ] {
        let mut reg = assets::harness(name).ok_or("missing harness")?;
        reg.constants.insert(constant, value);
        let report = meta_validate(&reg);
        let hit = report.results.iter().find(|r| r.label == case).map(|r| r.outcome);
        ensure!(!report.passed() && hit == Some(MetaOutcome::MissedDetection), "{name}: weakened rule gave {hit:?}");
    }
    Ok("golden/poisoned corpora pass for all shipped registries, weakened rules flagged MISSED_DETECTION".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("AD boundaries", ad_boundaries, Duration::from_secs(1)),
        ("AD paradox", ad_paradox, Duration::from_secs(5)),
        ("AD PASS path", ad_pass, Duration::from_secs(5)),
        ("Pharma analytics", pharma, Duration::from_secs(60)),
        ("Oscillation", oscillation, Duration::MAX),
        ("State Locking adversarial", state_locking, Duration::MAX),
        ("Negotiation round-trip", negotiation, Duration::MAX),
        ("Statistics", statistics, Duration::MAX),
        ("Formats", formats, Duration::MAX),
        ("Firewall", firewall, Duration::MAX),
        ("Meta-validation", meta, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({} ms): {detail}", took.as_millis()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({} ms): {why}", took.as_millis());
            }
        }
    }
    println!("{} of {} criteria passed", 11 - failed, 11);
    if failed > 0 {
        std::process::exit(1);
    }
}
