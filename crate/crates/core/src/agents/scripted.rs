//! Deterministic executor policies. Each reproduces one behavioural regime
//! of a model-backed executor without calling one.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stable_hash, ProposalRequest};
use crate::converge::{AuditStatus, Direction};
use crate::facts::{FactMap, Layered, Value};
use crate::harness::{DecisionVariable, HarnessRule};
use crate::paradox::{feasible, fixed_inputs};
use crate::rad::FieldType;
use crate::uai::{assert_rule, solve_boundary, Side, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScriptedPolicy {
    /// Moves a failing field onto the boundary named by the gradient and
    /// keeps passing fields as they were.
    BoundaryChaser,
    /// Reacts only to the latest failure: jumps to the boundary of the last
    /// failing rule, with no memory and no locks.
    NaiveReflection,
    /// Proposes the oracle's first witness for the node's own rules.
    FirstFeasible,
    Constant { value: f64 },
    /// A base policy with seeded perturbations: with `jitter_rate` a shift of
    /// up to `jitter_steps` grid steps, with `outlier_rate` a value drawn
    /// from `outliers`.
    Noisy {
        base: Box<ScriptedPolicy>,
        #[serde(default = "one")]
        jitter_steps: u32,
        #[serde(default = "one_f")]
        jitter_rate: f64,
        #[serde(default)]
        outlier_rate: f64,
        #[serde(default)]
        outliers: Vec<f64>,
    },
    /// Rewrites fields at random (locked ones included) with probability
    /// `rate`, otherwise behaves like the boundary chaser.
    Adversarial {
        #[serde(default = "half")]
        rate: f64,
    },
}

fn one() -> u32 {
    1
}

fn one_f() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

pub(super) fn propose(policy: &ScriptedPolicy, req: &ProposalRequest) -> String {
    let mut out = serde_json::Map::new();
    for (field, ty) in &req.ctx.expected_schema {
        let v = match ty {
            FieldType::Text => serde_json::Value::String(summary(req)),
            FieldType::Bool => {
                let b = req
                    .previous
                    .and_then(|p| p.get(field))
                    .or_else(|| req.givens.get(field))
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
                serde_json::Value::Bool(b)
            }
            FieldType::Float | FieldType::Int => {
                let x = numeric(policy, req, field);
                if *ty == FieldType::Int {
                    serde_json::Value::from(x.round() as i64)
                } else {
                    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
                }
            }
        };
        out.insert(field.clone(), v);
    }
    serde_json::Value::Object(out).to_string()
}

fn summary(req: &ProposalRequest) -> String {
    let parts: Vec<String> = req.ctx.facts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if parts.is_empty() {
        format!("{}: no upstream inputs", req.ctx.node_id)
    } else {
        format!("{}: {}", req.ctx.node_id, parts.join(", "))
    }
}

fn rng_for(req: &ProposalRequest, field: &str, salt: &str) -> ChaCha8Rng {
    let seed = stable_hash(&[
        &req.seed.to_le_bytes(),
        &req.iteration.to_le_bytes(),
        &req.attempt.to_le_bytes(),
        req.ctx.node_id.as_bytes(),
        field.as_bytes(),
        salt.as_bytes(),
    ]);
    ChaCha8Rng::seed_from_u64(seed)
}

fn numeric(policy: &ScriptedPolicy, req: &ProposalRequest, field: &str) -> f64 {
    match policy {
        ScriptedPolicy::BoundaryChaser => chase(req, field),
        ScriptedPolicy::NaiveReflection => naive(req, field),
        ScriptedPolicy::FirstFeasible => first_feasible(req, field).unwrap_or_else(|| chase(req, field)),
        ScriptedPolicy::Constant { value } => *value,
        ScriptedPolicy::Noisy {
            base,
            jitter_steps,
            jitter_rate,
            outlier_rate,
            outliers,
        } => {
            let b = numeric(base, req, field);
            let mut rng = rng_for(req, field, "noisy");
            let roll: f64 = rng.gen();
            if roll < *outlier_rate && !outliers.is_empty() {
                return outliers[rng.gen_range(0..outliers.len())];
            }
            if roll < outlier_rate + jitter_rate && *jitter_steps > 0 {
                let k = *jitter_steps as i64;
                let shift = rng.gen_range(-k..=k) as f64;
                let var = req.registry.variable(field);
                let step = var.map_or(1.0, |v| v.resolution);
                let x = b + shift * step;
                return var.map_or(x, |v| v.min.max(v.max.min(x)));
            }
            b
        }
        ScriptedPolicy::Adversarial { rate } => {
            let mut rng = rng_for(req, field, "adversarial");
            if rng.gen::<f64>() < *rate {
                match req.registry.variable(field) {
                    Some(v) => v.value_at(rng.gen_range(0..v.steps())),
                    None => rng.gen_range(-1000.0..1000.0f64).round(),
                }
            } else {
                chase(req, field)
            }
        }
    }
}

/// Snaps `x` onto the variable's grid, rounding in the given direction.
fn snap(var: &DecisionVariable, x: f64, dir: Direction) -> f64 {
    let k = (x - var.min) / var.resolution;
    let k = match dir {
        Direction::Decrease => (k + 1e-9).floor(),
        Direction::Increase => (k - 1e-9).ceil(),
        Direction::Set => k.round(),
    };
    let max_k = (var.steps() - 1) as f64;
    var.value_at(k.clamp(0.0, max_k) as usize)
}

fn known_facts(req: &ProposalRequest) -> FactMap {
    let mut f = req.previous.cloned().unwrap_or_default();
    f.extend_from(&req.ctx.facts);
    f
}

fn node_rules<'a>(req: &'a ProposalRequest, field: &'a str) -> impl Iterator<Item = &'a HarnessRule> + 'a {
    req.ctx.applicable_rules(req.registry).filter(move |r| r.target_field == field)
}

fn holds_at(req: &ProposalRequest, rule: &HarnessRule, field: &str, x: f64) -> bool {
    let mut f = known_facts(req);
    f.insert(field, x);
    let layers = [&f, &req.registry.constants];
    assert_rule(rule, &Layered(&layers)).status != Status::Fail
}

fn chase(req: &ProposalRequest, field: &str) -> f64 {
    let var = req.registry.variable(field);
    if let (Some(entry), Some(var)) = (req.audit.and_then(|a| a.entry(field)), var) {
        if entry.status == AuditStatus::Fail {
            if let Some(g) = entry.semantic_gradient.as_ref().filter(|g| g.magnitude.is_some()) {
                let mut x = snap(var, g.magnitude.unwrap(), g.direction);
                if let Some(rule) = req.registry.rule(&g.rule_id) {
                    let step = match g.direction {
                        Direction::Increase => var.resolution,
                        _ => -var.resolution,
                    };
                    for _ in 0..3 {
                        if holds_at(req, rule, field, x) || g.direction == Direction::Set {
                            break;
                        }
                        x = snap(var, x + step, Direction::Set);
                    }
                }
                return x;
            }
        }
    }
    if let Some(x) = req.previous.and_then(|p| p.get_f64(field)) {
        return x;
    }
    if let Some(x) = req.givens.get_f64(field) {
        return x;
    }
    let Some(var) = var else { return 0.0 };
    initial(req, field, var)
}

/// Feasible interval of the node's own rules along `field`, taking the end
/// on the side the first bounded rule pushes towards.
fn initial(req: &ProposalRequest, field: &str, var: &DecisionVariable) -> f64 {
    let facts = known_facts(req);
    let layers = [&facts, &req.registry.constants];
    let env = Layered(&layers);
    let (mut lo, mut hi) = (var.min, var.max);
    let mut first: Option<(Side, f64)> = None;
    for r in node_rules(req, field) {
        let sol = solve_boundary(r, &env, field, var);
        let (Some(side), Some(fv)) = (sol.pass_side, sol.feasible_value) else { continue };
        match side {
            Side::Above => lo = lo.max(fv),
            Side::Below => hi = hi.min(fv),
        }
        first.get_or_insert((side, fv));
    }
    match first {
        None => var.min,
        Some(_) if lo > hi => first.unwrap().1,
        Some((Side::Above, _)) => lo,
        Some((Side::Below, _)) => hi,
    }
}

fn naive(req: &ProposalRequest, field: &str) -> f64 {
    let reg = req.registry;
    let Some(var) = reg.variable(field) else {
        return req.givens.get_f64(field).unwrap_or(0.0);
    };
    let facts = req.ctx.facts.clone();
    let layers = [&facts, &reg.constants];
    let env = Layered(&layers);
    let boundary_of = |r: &HarnessRule| solve_boundary(r, &env, field, var).feasible_value;
    if req.feedback.is_empty() {
        let loudest = reg
            .rules
            .iter()
            .filter(|r| r.target_field == field)
            .fold(None::<&HarnessRule>, |best, r| match best {
                Some(b) if b.severity.rank() >= r.severity.rank() => Some(b),
                _ => Some(r),
            });
        return loudest.and_then(boundary_of).unwrap_or(var.min);
    }
    let last_fail = req
        .feedback
        .iter()
        .filter(|v| v.status == Status::Fail && v.target_field == field)
        .last()
        .and_then(|v| reg.rule(&v.rule_id));
    match last_fail.and_then(boundary_of) {
        Some(x) => x,
        None => req.previous.and_then(|p| p.get_f64(field)).unwrap_or(var.min),
    }
}

fn first_feasible(req: &ProposalRequest, field: &str) -> Option<f64> {
    let ids: BTreeSet<String> = req.ctx.applicable_rules(req.registry).map(|r| r.id.clone()).collect();
    let fixed = fixed_inputs(req.registry, &req.ctx.facts);
    feasible(req.registry, &ids, &fixed).ok()?.witness?.get_f64(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{propose as run, AgentBackend};
    use crate::converge::{synthesize_gradient, AuditResult};
    use crate::harness::{load_registry_str, HarnessRegistry};
    use crate::rad::{context_slice, ProblemSpec};
    use crate::uai::{assert_all, Verdict};

    const AD: &str = include_str!("../../assets/harnesses/ad_degradation.yaml");
    const PROBLEM: &str = include_str!("../../assets/problems/ad_degradation.json");

    fn setup() -> (HarnessRegistry, ProblemSpec) {
        (load_registry_str(AD, "ad").unwrap(), ProblemSpec::from_json(PROBLEM).unwrap())
    }

    fn ask(policy: ScriptedPolicy, audit: Option<&AuditResult>, feedback: &[Verdict], seed: u64) -> String {
        let (reg, prob) = setup();
        let up = FactMap::new().with("perception_range_m", 30.0);
        let ctx = context_slice(&prob.plan, "Kinematics_Node", &up, &reg).unwrap();
        let req = ProposalRequest {
            ctx: &ctx,
            audit,
            feedback,
            previous: None,
            registry: &reg,
            givens: &prob.givens,
            statement: &prob.statement,
            seed,
            iteration: 1,
            attempt: 1,
            ledger: None,
        };
        run(&AgentBackend::scripted(policy), &req).unwrap()
    }

    fn audit_at(v: f64) -> AuditResult {
        let (reg, _) = setup();
        let facts = FactMap::new().with("vehicle_speed_kmph_t5", v);
        let verdicts = assert_all(&reg, &facts, None);
        let var = reg.variable("vehicle_speed_kmph_t5").unwrap();
        let layers = [&facts, &reg.constants];
        let b = reg
            .rules
            .iter()
            .map(|r| (r.id.clone(), solve_boundary(r, &Layered(&layers), &var.name, var)))
            .collect();
        synthesize_gradient(&verdicts, &b).unwrap()
    }

    #[test]
    fn chaser_starts_at_rear_boundary_and_follows_gradient() {
        assert_eq!(ask(ScriptedPolicy::BoundaryChaser, None, &[], 0), r#"{"vehicle_speed_kmph_t5":84}"#);
        let audit = audit_at(84.0);
        assert_eq!(ask(ScriptedPolicy::BoundaryChaser, Some(&audit), &[], 0), r#"{"vehicle_speed_kmph_t5":55}"#);
    }

    #[test]
    fn naive_seesaw() {
        let (reg, _) = setup();
        assert_eq!(ask(ScriptedPolicy::NaiveReflection, None, &[], 0), r#"{"vehicle_speed_kmph_t5":55}"#);
        let at55 = assert_all(&reg, &FactMap::new().with("vehicle_speed_kmph_t5", 55.0), None);
        assert_eq!(ask(ScriptedPolicy::NaiveReflection, None, &at55, 0), r#"{"vehicle_speed_kmph_t5":84}"#);
        let at84 = assert_all(&reg, &FactMap::new().with("vehicle_speed_kmph_t5", 84.0), None);
        assert_eq!(ask(ScriptedPolicy::NaiveReflection, None, &at84, 0), r#"{"vehicle_speed_kmph_t5":55}"#);
    }

    #[test]
    fn constant_and_first_feasible() {
        assert_eq!(ask(ScriptedPolicy::Constant { value: 120.0 }, None, &[], 3), r#"{"vehicle_speed_kmph_t5":120}"#);
        assert_eq!(ask(ScriptedPolicy::FirstFeasible, None, &[], 0), r#"{"vehicle_speed_kmph_t5":84}"#);
    }

    #[test]
    fn noisy_is_seeded() {
        let p = ScriptedPolicy::Noisy {
            base: Box::new(ScriptedPolicy::NaiveReflection),
            jitter_steps: 1,
            jitter_rate: 0.5,
            outlier_rate: 0.2,
            outliers: vec![0.0, 70.0, 90.0, 110.0],
        };
        let a: Vec<String> = (0..20).map(|s| ask(p.clone(), None, &[], s)).collect();
        let b: Vec<String> = (0..20).map(|s| ask(p.clone(), None, &[], s)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|x| x != r#"{"vehicle_speed_kmph_t5":55}"#));
    }

    #[test]
    fn snapping_directions() {
        let v = DecisionVariable::new("v", 0.0, 130.0, 1.0, true);
        assert_eq!(snap(&v, 55.21, Direction::Decrease), 55.0);
        assert_eq!(snap(&v, 83.2, Direction::Increase), 84.0);
        assert_eq!(snap(&v, 84.0, Direction::Increase), 84.0);
        assert_eq!(snap(&v, 500.0, Direction::Set), 130.0);
    }
}
