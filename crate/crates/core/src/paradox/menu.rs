//! Quantified resolution options for a minimal conflict set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeasibilityResult, Oracle, ParadoxError};
use crate::expr::CmpOp;
use crate::facts::{FactMap, Layered};
use crate::harness::{apply_override, round_to, HarnessRegistry, HarnessRule, OverrideError, OverrideRecord};
use crate::uai::assert_rule;

const DEFAULT_TOLERANCE: f64 = 1e-3;
const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptionKind {
    ReportDeadlock,
    RelaxParameter,
    StructuralChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOption {
    pub label: String,
    pub kind: OptionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimal_new_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resulting_witness: Option<FactMap>,
    /// Constants a structural change would have to touch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binding_constants: Vec<String>,
    pub impact_note: String,
}

fn letter(i: usize) -> String {
    char::from(b'A' + (i % 26) as u8).to_string()
}

/// Option A always preserves every rule and reports the deadlock. Then, for
/// each conflict-set rule in registry order, either the smallest relaxation
/// of its negotiable parameter that restores satisfiability, or a structural
/// change naming the constants it depends on.
pub fn resolution_menu(
    reg: &HarnessRegistry,
    mus: &BTreeSet<String>,
    fixed: &FactMap,
) -> Result<Vec<ResolutionOption>, ParadoxError> {
    resolution_menu_with(Oracle::global(), reg, mus, fixed)
}

pub fn resolution_menu_with(
    oracle: &Oracle,
    reg: &HarnessRegistry,
    mus: &BTreeSet<String>,
    fixed: &FactMap,
) -> Result<Vec<ResolutionOption>, ParadoxError> {
    if oracle.feasible(reg, mus, fixed)?.is_sat() {
        return Err(ParadoxError::NotUnsat);
    }
    let mut menu = vec![ResolutionOption {
        label: letter(0),
        kind: OptionKind::ReportDeadlock,
        rule_id: None,
        parameter: None,
        current_value: None,
        minimal_new_value: None,
        resulting_witness: None,
        binding_constants: Vec::new(),
        impact_note: "Keep every rule as written and hand the decision back with the formal deadlock report.".into(),
    }];
    for rule in reg.rules.iter().filter(|r| mus.contains(&r.id)) {
        let label = letter(menu.len());
        let relaxed = match (&rule.relaxation_parameter, rule.negotiable) {
            (Some(p), true) => relax(oracle, reg, mus, fixed, rule, p)?,
            _ => None,
        };
        let option = match relaxed {
            Some(r) => r.into_option(label, reg, rule),
            None => {
                let binding = reg.rule_constants(rule);
                ResolutionOption {
                    label,
                    kind: OptionKind::StructuralChange,
                    rule_id: Some(rule.id.clone()),
                    parameter: None,
                    current_value: None,
                    minimal_new_value: None,
                    resulting_witness: None,
                    impact_note: format!(
                        "{} cannot be relaxed by override; satisfying it needs a change to the system behind {}.",
                        rule.display_name(),
                        binding.join(", ")
                    ),
                    binding_constants: binding,
                }
            }
        };
        menu.push(option);
    }
    Ok(menu)
}

struct Relaxation {
    parameter: String,
    current: f64,
    minimal: f64,
    tolerance: f64,
    witness: Option<FactMap>,
}

impl Relaxation {
    fn into_option(self, label: String, reg: &HarnessRegistry, rule: &HarnessRule) -> ResolutionOption {
        let shown = round_to(self.minimal, self.tolerance);
        let mut note = format!(
            "Relax {} ({}) from {} to {}",
            rule.display_name(),
            self.parameter,
            self.current,
            shown
        );
        if let Some(w) = &self.witness {
            let parts: Vec<String> = reg
                .variables
                .iter()
                .filter_map(|v| {
                    let x = w.get_f64(&v.name)?;
                    let unit = v.unit.as_deref().map(|u| format!(" {u}")).unwrap_or_default();
                    Some(format!("{} = {}{}", v.display_name(), v.format(x), unit))
                })
                .collect();
            if !parts.is_empty() {
                note.push_str(&format!("; allows {}", parts.join(", ")));
            }
        }
        note.push('.');
        ResolutionOption {
            label,
            kind: OptionKind::RelaxParameter,
            rule_id: Some(rule.id.clone()),
            parameter: Some(self.parameter),
            current_value: Some(self.current),
            minimal_new_value: Some(self.minimal),
            resulting_witness: self.witness,
            binding_constants: Vec::new(),
            impact_note: note,
        }
    }
}

/// Signed distance from failing for a comparison rule; positive means
/// passing with room to spare.
fn margin(rule: &HarnessRule, env: &Layered) -> Option<f64> {
    let v = assert_rule(rule, env);
    let (l, r) = (v.lhs_value?, v.rhs_value?);
    match v.comparison? {
        CmpOp::Lt | CmpOp::Le => Some(r - l),
        CmpOp::Gt | CmpOp::Ge => Some(l - r),
        CmpOp::Eq | CmpOp::Ne => None,
    }
}

fn relax(
    oracle: &Oracle,
    reg: &HarnessRegistry,
    mus: &BTreeSet<String>,
    fixed: &FactMap,
    rule: &HarnessRule,
    param: &str,
) -> Result<Option<Relaxation>, ParadoxError> {
    let Some(current) = fixed.get_f64(param).or_else(|| reg.constants.get_f64(param)) else {
        return Ok(None);
    };
    let tolerance = reg.variable(param).map_or(DEFAULT_TOLERANCE, |v| v.resolution);
    let probe = |x: f64| -> Result<FeasibilityResult, ParadoxError> {
        oracle.feasible(reg, mus, &fixed.overlay(&FactMap::new().with(param, x)))
    };

    // Which way helps: the slope of the rule's margin in the parameter at a
    // point where the rest of the conflict set holds.
    let mut rest = mus.clone();
    rest.remove(&rule.id);
    let reference = oracle.feasible(reg, &rest, fixed)?.witness.unwrap_or_default();
    let slope = {
        let delta = 1e-6 * current.abs().max(1.0);
        let at = |x: f64| {
            let p = FactMap::new().with(param, x);
            let layers = [&p, &reference, fixed, &reg.constants];
            margin(rule, &Layered(&layers))
        };
        match (at(current), at(current + delta)) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    };
    let directions: &[f64] = if slope > 0.0 {
        &[1.0]
    } else if slope < 0.0 {
        &[-1.0]
    } else {
        &[1.0, -1.0]
    };

    for &dir in directions {
        let mut step = (current.abs() * 0.01).max(tolerance);
        let mut lo = current;
        let mut hi = None;
        for _ in 0..MAX_DOUBLINGS {
            let x = current + dir * step;
            if probe(x)?.is_sat() {
                hi = Some(x);
                break;
            }
            lo = x;
            step *= 2.0;
        }
        let Some(mut hi) = hi else { continue };
        while (hi - lo).abs() > tolerance {
            let mid = 0.5 * (lo + hi);
            if probe(mid)?.is_sat() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // One tolerance step short of the answer must still conflict.
        if probe(hi - dir * tolerance)?.is_sat() {
            return Err(ParadoxError::WitnessRejected(format!(
                "relaxing {param} to {} is already satisfiable",
                hi - dir * tolerance
            )));
        }
        let witness = probe(hi)?.witness;
        return Ok(Some(Relaxation {
            parameter: param.to_string(),
            current,
            minimal: hi,
            tolerance,
            witness,
        }));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolutionError {
    #[error("option {0} is not a parameter relaxation")]
    NotRelaxation(String),
    #[error(transparent)]
    Override(#[from] OverrideError),
}

/// Applies a relaxation option through the audited override path.
pub fn apply_resolution(
    reg: &HarnessRegistry,
    option: &ResolutionOption,
    actor: &str,
    justification: &str,
) -> Result<(HarnessRegistry, OverrideRecord), ResolutionError> {
    let (OptionKind::RelaxParameter, Some(rule_id), Some(value)) = (option.kind, &option.rule_id, option.minimal_new_value) else {
        return Err(ResolutionError::NotRelaxation(option.label.clone()));
    };
    Ok(apply_override(reg, rule_id, value, actor, justification)?)
}
