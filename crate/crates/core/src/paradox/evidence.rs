//! The deadlock report handed to the human who has to choose a resolution.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fixed_inputs, OptionKind, ParadoxError, ResolutionOption};
use crate::converge::{RunState, RunStatus};
use crate::facts::{FactMap, Layered};
use crate::harness::{DecisionVariable, HarnessRegistry, HarnessRule};
use crate::uai::{assert_rule, solve_boundary, Side, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundLine {
    pub rule_id: String,
    pub field: String,
    /// `>=` or `<=`; absent when the rule has no single bound on its field.
    pub relation: Option<String>,
    pub value: Option<f64>,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLine {
    pub field: String,
    pub value: f64,
    pub failing_rules: Vec<String>,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePackage {
    pub domain: String,
    pub harness_version: String,
    pub status: String,
    pub conflict_set: Vec<String>,
    pub reference_point: FactMap,
    pub bounds: Vec<BoundLine>,
    pub probes: Vec<ProbeLine>,
    pub menu: Vec<ResolutionOption>,
    pub text: String,
}

fn with_unit(var: &DecisionVariable, x: f64) -> String {
    match &var.unit {
        Some(u) => format!("{} {u}", var.format(x)),
        None => var.format(x),
    }
}

/// The trace without its rule-id prefix and verdict suffix.
fn trace_body(trace: &str) -> &str {
    let body = trace.split_once(": ").map_or(trace, |(_, rest)| rest);
    body.rsplit_once(" → ").map_or(body, |(head, _)| head)
}

/// Builds the report for a run that ended in `FAILED_PARADOX`.
///
/// Every conflict-set rule is solved for its own target field at a reference
/// point where the other rules are jointly satisfiable, then each solved
/// bound is probed against the remaining rules. The text contains nothing
/// run-specific (no ids or timestamps), so equal inputs give equal bytes.
pub fn evidence_package(
    run: &RunState,
    reg: &HarnessRegistry,
    mus: &BTreeSet<String>,
    menu: &[ResolutionOption],
) -> Result<EvidencePackage, ParadoxError> {
    if run.status != RunStatus::FailedParadox {
        return Err(ParadoxError::WrongStatus(run.status.as_str().to_string()));
    }
    let fixed = fixed_inputs(reg, &run.artifact);
    let rules: Vec<&HarnessRule> = reg.rules.iter().filter(|r| mus.contains(&r.id)).collect();
    let anchor = rules.iter().find(|r| r.negotiable).or(rules.last()).map(|r| r.id.clone());
    let mut rest = mus.clone();
    if let Some(a) = &anchor {
        rest.remove(a);
    }
    let reference = super::feasible(reg, &rest, &fixed)?.witness.unwrap_or_default();

    let mut bounds = Vec::new();
    let mut probe_points: Vec<Option<(&DecisionVariable, f64)>> = Vec::new();
    for (n, rule) in rules.iter().enumerate() {
        let var = reg.variable(&rule.target_field);
        let solved = var.and_then(|var| {
            let layers = [&reference, &fixed, &reg.constants];
            let sol = solve_boundary(rule, &Layered(&layers), &var.name, var);
            Some((var, sol.pass_side?, sol.feasible_value?))
        });
        let (line, probe) = match solved {
            Some((var, side, x)) => {
                let rel = if side == Side::Above { ">=" } else { "<=" };
                let sentence = format!(
                    "  {}. {} ({}): {} must be {} {}.",
                    n + 1,
                    rule.id,
                    rule.display_name(),
                    var.display_name(),
                    rel,
                    with_unit(var, x)
                );
                let line = BoundLine {
                    rule_id: rule.id.clone(),
                    field: var.name.clone(),
                    relation: Some(rel.to_string()),
                    value: Some(x),
                    sentence,
                };
                (line, Some((var, x)))
            }
            None => {
                let sentence = format!(
                    "  {}. {} ({}): no single bound on {} over its declared range.",
                    n + 1,
                    rule.id,
                    rule.display_name(),
                    rule.target_field
                );
                let line = BoundLine {
                    rule_id: rule.id.clone(),
                    field: rule.target_field.clone(),
                    relation: None,
                    value: None,
                    sentence,
                };
                (line, None)
            }
        };
        bounds.push(line);
        probe_points.push(probe);
    }

    let mut probes = Vec::new();
    for (rule, point) in rules.iter().zip(&probe_points) {
        let Some((var, x)) = point else { continue };
        let at = reference.overlay(&FactMap::new().with(var.name.clone(), *x));
        let layers = [&at, &fixed, &reg.constants];
        let env = Layered(&layers);
        let mut failing = Vec::new();
        let mut details = Vec::new();
        for other in rules.iter().filter(|o| o.id != rule.id) {
            let v = assert_rule(other, &env);
            if v.status != Status::Pass {
                failing.push(other.id.clone());
                details.push(format!("{} {} ({})", other.display_name(), v.status.as_str(), trace_body(&v.trace)));
            }
        }
        let outcome = if details.is_empty() {
            "every other rule in the set holds here".to_string()
        } else {
            details.join("; ")
        };
        probes.push(ProbeLine {
            field: var.name.clone(),
            value: *x,
            failing_rules: failing,
            sentence: format!("  - Attempting {} = {}: {}", var.display_name(), with_unit(var, *x), outcome),
        });
    }

    let mut text = String::new();
    let _ = writeln!(text, "[SYSTEM DEADLOCK] Formal Paradox Report");
    let _ = writeln!(text, "Status: FAILED_PARADOX");
    let _ = writeln!(text, "Domain: {}", reg.name);
    let _ = writeln!(text, "Harness version: {}", reg.version);
    let _ = writeln!(text);
    let _ = writeln!(text, "--- Conflict Summary ---");
    let _ = writeln!(
        text,
        "No assignment of the declared decision variables satisfies these {} rules together:",
        rules.len()
    );
    for b in &bounds {
        let _ = writeln!(text, "{}", b.sentence);
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "--- Evidence ---");
    for p in &probes {
        let _ = writeln!(text, "{}", p.sentence);
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "--- Resolution ---");
    for o in menu {
        let kind = match o.kind {
            OptionKind::ReportDeadlock => "report deadlock",
            OptionKind::RelaxParameter => "relax parameter",
            OptionKind::StructuralChange => "structural change",
        };
        let _ = writeln!(text, "  [{}] {}: {}", o.label, kind, o.impact_note);
    }
    let _ = writeln!(text, "An operator must authorize one option before the run can continue.");

    Ok(EvidencePackage {
        domain: reg.name.clone(),
        harness_version: reg.version.clone(),
        status: "FAILED_PARADOX".into(),
        conflict_set: rules.iter().map(|r| r.id.clone()).collect(),
        reference_point: reference,
        bounds,
        probes,
        menu: menu.to_vec(),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_body_strips_id_and_verdict() {
        assert_eq!(trace_body("R: decel=3.61 <= limit=2.00 → FAIL"), "decel=3.61 <= limit=2.00");
        assert_eq!(trace_body("plain"), "plain");
    }
}
