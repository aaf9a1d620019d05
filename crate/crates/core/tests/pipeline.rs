use caaf_core::agents::{AgentSet, ScriptedPolicy};
use caaf_core::assets;
use caaf_core::converge::{check_monotonic, resume_after_override, run_pipeline, RunConfig, RunStatus};
use caaf_core::paradox::{apply_resolution, OptionKind};

fn chaser() -> AgentSet {
    AgentSet::scripted(ScriptedPolicy::BoundaryChaser)
}

#[test]
fn ad_paradox_halts_with_both_rules() {
    let st = run_pipeline(&assets::ad_problem(), &assets::ad_registry(), &chaser(), &RunConfig::default()).unwrap();
    assert_eq!(st.status, RunStatus::FailedParadox);
    assert!(st.awaiting_authorization);
    let p = st.paradox.as_ref().unwrap();
    let ids: Vec<&str> = p.mus.iter().map(String::as_str).collect();
    assert_eq!(ids, ["FORWARD_COLLISION_PREVENTION_PERCEPTION", "REAR_COLLISION_PREVENTION_DECELERATION"]);
    assert_eq!(st.iteration, 1);
    assert!(check_monotonic(&st.trace));
}

#[test]
fn ad_pass_succeeds_without_retries() {
    let st = run_pipeline(&assets::ad_pass_problem(), &assets::ad_pass_registry(), &chaser(), &RunConfig::default()).unwrap();
    assert_eq!(st.status, RunStatus::Success);
    assert_eq!(st.retries, 0);
    assert_eq!(st.artifact.get_f64("vehicle_speed_kmph_t5"), Some(84.0));
    assert_eq!(st.verified_rules.len(), 2);
    assert!(check_monotonic(&st.trace));
}

#[test]
fn option_b_resumes_to_success_at_55() {
    let problem = assets::ad_problem();
    let reg = assets::ad_registry();
    let cfg = RunConfig::default();
    let st = run_pipeline(&problem, &reg, &chaser(), &cfg).unwrap();
    let menu = &st.paradox.as_ref().unwrap().menu;
    let b = menu.iter().find(|o| o.label == "B").unwrap();
    assert_eq!(b.kind, OptionKind::RelaxParameter);
    let (relaxed, record) = apply_resolution(&reg, b, "lead-engineer", "accept comfort impact").unwrap();
    let before = st.iteration;
    let st = resume_after_override(st, &problem, &relaxed, &record, &chaser(), &cfg, &mut |_| {}).unwrap();
    assert_eq!(st.status, RunStatus::Success);
    assert_eq!(st.artifact.get_f64("vehicle_speed_kmph_t5"), Some(55.0));
    assert_eq!(st.iteration, before + 2);
    assert_eq!(st.overrides.len(), 1);
}

#[test]
fn pharma_paradox_mus() {
    let st = run_pipeline(&assets::pharma_problem(), &assets::pharma_registry(), &chaser(), &RunConfig::default()).unwrap();
    assert_eq!(st.status, RunStatus::FailedParadox);
    let mus: Vec<&str> = st.paradox.as_ref().unwrap().mus.iter().map(String::as_str).collect();
    assert_eq!(mus, ["C1", "C2", "C4"]);
}

#[test]
fn pharma_pass_succeeds_with_joint_operating_point() {
    for policy in [ScriptedPolicy::FirstFeasible, ScriptedPolicy::BoundaryChaser] {
        let agents = AgentSet::scripted(policy.clone());
        let st = run_pipeline(&assets::pharma_pass_problem(), &assets::pharma_pass_registry(), &agents, &RunConfig::default())
            .unwrap();
        assert_eq!(st.status, RunStatus::Success, "{policy:?}");
        assert_eq!(st.verified_rules.len(), 7);
        assert!(check_monotonic(&st.trace));
    }
}

#[test]
fn node_iterations_stay_within_budget() {
    let cfg = RunConfig::default();
    for (problem, reg) in [
        (assets::ad_problem(), assets::ad_registry()),
        (assets::pharma_problem(), assets::pharma_registry()),
    ] {
        let st = run_pipeline(&problem, &reg, &AgentSet::scripted(ScriptedPolicy::NaiveReflection), &cfg).unwrap();
        let bound = cfg.node_budget * problem.plan.nodes.len() as u32 * (1 + cfg.max_global_iters);
        assert!(st.node_iterations <= bound);
        assert!(st.iteration <= 1 + cfg.max_global_iters);
        assert!(st.status.is_terminal());
    }
}

#[test]
fn trace_is_gap_free_and_deterministic() {
    let run = || run_pipeline(&assets::ad_problem(), &assets::ad_registry(), &chaser(), &RunConfig::with_seed(7)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.iter().enumerate().all(|(i, e)| e.t == i as u64 && e.run_id == a.run_id));
    assert_eq!(a.trace.last().unwrap().kind, "status");
}
