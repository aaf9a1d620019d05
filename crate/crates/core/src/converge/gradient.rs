//! Turning verdicts into per-field correction instructions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::CmpOp;
use crate::uai::{BoundarySolution, Side, Status, Verdict};

pub const LOCK_INSTRUCTION: &str = "LOCKED. Do not modify in next iteration.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Increase,
    Decrease,
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticGradient {
    pub dimension: String,
    pub direction: Direction,
    /// The solved boundary the field has to reach, when one exists.
    pub magnitude: Option<f64>,
    pub rule_id: String,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AuditStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub status: AuditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_gradient: Option<SemanticGradient>,
    /// Rules that constrain this field, in verdict order.
    #[serde(default)]
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditResult {
    pub audit_results: BTreeMap<String, AuditEntry>,
}

impl AuditResult {
    pub fn entry(&self, field: &str) -> Option<&AuditEntry> {
        self.audit_results.get(field)
    }

    pub fn all_pass(&self) -> bool {
        self.audit_results.values().all(|e| e.status == AuditStatus::Pass)
    }

    pub fn passed_fields(&self) -> impl Iterator<Item = &String> {
        self.audit_results.iter().filter(|(_, e)| e.status == AuditStatus::Pass).map(|(k, _)| k)
    }

    pub fn failed_fields(&self) -> impl Iterator<Item = &String> {
        self.audit_results.iter().filter(|(_, e)| e.status == AuditStatus::Fail).map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub rule_id: String,
    pub direction: Direction,
    pub magnitude: Option<f64>,
}

/// Two failing rules pull one field in opposite directions.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("conflicting verdicts on {dimension}")]
pub struct ConflictingVerdicts {
    pub dimension: String,
    pub bounds: Vec<HalfSpace>,
}

fn gradient_for(v: &Verdict, sol: Option<&BoundarySolution>) -> Option<SemanticGradient> {
    if v.status != Status::Fail {
        return None;
    }
    let boundary = sol.and_then(|s| s.boundary.zip(s.pass_side));
    let (direction, magnitude) = match (v.comparison, boundary) {
        (Some(CmpOp::Eq), Some((b, _))) => (Direction::Set, Some(b)),
        (_, Some((b, Side::Above))) => (Direction::Increase, Some(b)),
        (_, Some((b, Side::Below))) => (Direction::Decrease, Some(b)),
        (_, None) => (Direction::Set, None),
    };
    let rationale = match (direction, magnitude) {
        (Direction::Increase, Some(b)) => format!("Raise {} to at least {b:.2} to satisfy {}.", v.target_field, v.rule_id),
        (Direction::Decrease, Some(b)) => format!("Lower {} to at most {b:.2} to satisfy {}.", v.target_field, v.rule_id),
        (Direction::Set, Some(b)) => format!("Set {} to {b:.2} to satisfy {}.", v.target_field, v.rule_id),
        _ => format!(
            "{} has no single boundary in {}; revise {}.",
            v.rule_id, v.target_field, v.target_field
        ),
    };
    Some(SemanticGradient {
        dimension: v.target_field.clone(),
        direction,
        magnitude,
        rule_id: v.rule_id.clone(),
        rationale,
    })
}

/// Engine-mode review: one entry per target field. A field whose rules all
/// pass is locked; otherwise it fails with the joined traces and the most
/// restrictive gradient among its failing rules.
pub fn synthesize_gradient(
    verdicts: &[Verdict],
    boundaries: &BTreeMap<String, BoundarySolution>,
) -> Result<AuditResult, ConflictingVerdicts> {
    let mut by_field: BTreeMap<&str, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_field.entry(v.target_field.as_str()).or_default().push(v);
    }
    let mut out = AuditResult::default();
    for (field, vs) in by_field {
        let rules = vs.iter().map(|v| v.rule_id.clone()).collect();
        let failing: Vec<&&Verdict> = vs.iter().filter(|v| v.status != Status::Pass).collect();
        if failing.is_empty() {
            out.audit_results.insert(
                field.to_string(),
                AuditEntry {
                    status: AuditStatus::Pass,
                    instruction: Some(LOCK_INSTRUCTION.to_string()),
                    error_trace: None,
                    semantic_gradient: None,
                    rules,
                },
            );
            continue;
        }
        let grads: Vec<SemanticGradient> =
            failing.iter().filter_map(|v| gradient_for(v, boundaries.get(&v.rule_id))).collect();
        let has = |d: Direction| grads.iter().any(|g| g.direction == d);
        if has(Direction::Increase) && has(Direction::Decrease) {
            return Err(ConflictingVerdicts {
                dimension: field.to_string(),
                bounds: grads
                    .iter()
                    .map(|g| HalfSpace {
                        rule_id: g.rule_id.clone(),
                        direction: g.direction,
                        magnitude: g.magnitude,
                    })
                    .collect(),
            });
        }
        let pick = |better: fn(f64, f64) -> bool| {
            grads.iter().filter(|g| g.magnitude.is_some()).fold(None::<&SemanticGradient>, |best, g| match best {
                Some(b) if !better(g.magnitude.unwrap(), b.magnitude.unwrap()) => Some(b),
                _ => Some(g),
            })
        };
        let chosen = if has(Direction::Increase) {
            pick(|a, b| a > b)
        } else if has(Direction::Decrease) {
            pick(|a, b| a < b)
        } else {
            grads.iter().find(|g| g.magnitude.is_some()).or(grads.first())
        };
        out.audit_results.insert(
            field.to_string(),
            AuditEntry {
                status: AuditStatus::Fail,
                instruction: None,
                error_trace: Some(failing.iter().map(|v| v.trace.as_str()).collect::<Vec<_>>().join("; ")),
                semantic_gradient: chosen.cloned(),
                rules,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facts::{FactMap, Layered};
    use crate::harness::{load_registry_str, HarnessRegistry};
    use crate::uai::{assert_all, solve_boundary};

    const AD: &str = include_str!("../../assets/harnesses/ad_degradation.yaml");

    fn review(reg: &HarnessRegistry, v: f64) -> Result<AuditResult, ConflictingVerdicts> {
        let facts = FactMap::new().with("vehicle_speed_kmph_t5", v);
        let verdicts = assert_all(reg, &facts, None);
        let var = reg.variable("vehicle_speed_kmph_t5").unwrap();
        let layers = [&facts, &reg.constants];
        let b = reg
            .rules
            .iter()
            .map(|r| (r.id.clone(), solve_boundary(r, &Layered(&layers), &var.name, var)))
            .collect();
        synthesize_gradient(&verdicts, &b)
    }

    #[test]
    fn fail_wins_on_shared_field() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let audit = review(&reg, 84.0).unwrap();
        let e = audit.entry("vehicle_speed_kmph_t5").unwrap();
        assert_eq!(e.status, AuditStatus::Fail);
        assert_eq!(e.instruction, None);
        let g = e.semantic_gradient.as_ref().unwrap();
        assert_eq!(g.direction, Direction::Decrease);
        assert!((g.magnitude.unwrap() - 55.21).abs() < 0.01);
        assert_eq!(g.rule_id, "FORWARD_COLLISION_PREVENTION_PERCEPTION");
    }

    #[test]
    fn all_pass_locks() {
        let mut reg = load_registry_str(AD, "ad").unwrap();
        reg.constants.insert("perception_range_limit", 90.0);
        let audit = review(&reg, 90.0).unwrap();
        assert!(audit.all_pass());
        let e = audit.entry("vehicle_speed_kmph_t5").unwrap();
        assert_eq!(e.instruction.as_deref(), Some(LOCK_INSTRUCTION));
        assert_eq!(e.semantic_gradient, None);
    }

    #[test]
    fn opposite_pulls_conflict() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let err = review(&reg, 70.0).unwrap_err();
        assert_eq!(err.dimension, "vehicle_speed_kmph_t5");
        let dirs: Vec<Direction> = err.bounds.iter().map(|b| b.direction).collect();
        assert_eq!(dirs, vec![Direction::Increase, Direction::Decrease]);
        assert_eq!(err.bounds[0].magnitude, Some(84.0));
    }

    #[test]
    fn serialized_shape() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let json = serde_json::to_value(review(&reg, 84.0).unwrap()).unwrap();
        let e = &json["audit_results"]["vehicle_speed_kmph_t5"];
        assert_eq!(e["status"], "FAIL");
        assert_eq!(e["semantic_gradient"]["direction"], "DECREASE");
    }
}
