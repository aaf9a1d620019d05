//! Static checks over a loaded registry.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::HarnessRegistry;
use crate::expr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FindingKind {
    DuplicateId,
    Unparseable { error: String },
    UnboundVariable { name: String },
    TargetNotInAssertion { field: String },
    NegotiableWithoutParameter,
    RelaxationParameterNotConstant { parameter: String },
    RelaxationParameterUnused { parameter: String },
    BadVariableDomain { variable: String, message: String },
    MetaTestUnknownRule { test: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Rule id, variable name or meta-test label the finding is about.
    pub subject: String,
    #[serde(flatten)]
    pub kind: FindingKind,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            FindingKind::DuplicateId => write!(f, "{}: duplicate rule id", self.subject),
            FindingKind::Unparseable { error } => write!(f, "{}: assertion does not parse: {error}", self.subject),
            FindingKind::UnboundVariable { name } => write!(f, "{}: '{name}' is not a constant, variable or produced field", self.subject),
            FindingKind::TargetNotInAssertion { field } => write!(f, "{}: target field '{field}' does not appear in the assertion", self.subject),
            FindingKind::NegotiableWithoutParameter => write!(f, "{}: negotiable rule has no relaxation_parameter", self.subject),
            FindingKind::RelaxationParameterNotConstant { parameter } => {
                write!(f, "{}: relaxation parameter '{parameter}' is not a registry constant", self.subject)
            }
            FindingKind::RelaxationParameterUnused { parameter } => {
                write!(f, "{}: relaxation parameter '{parameter}' does not appear in the assertion", self.subject)
            }
            FindingKind::BadVariableDomain { message, .. } => write!(f, "{}: {message}", self.subject),
            FindingKind::MetaTestUnknownRule { test } => write!(f, "meta-test '{test}' expects unknown rule '{}'", self.subject),
        }
    }
}

pub fn validate_registry(reg: &HarnessRegistry) -> Vec<Finding> {
    validate_registry_with(reg, &BTreeSet::new())
}

/// Like [`validate_registry`], additionally treating `produced` (fields some
/// plan node emits) as bound names.
pub fn validate_registry_with(reg: &HarnessRegistry, produced: &BTreeSet<String>) -> Vec<Finding> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Finding>, subject: &str, kind: FindingKind| {
        out.push(Finding {
            subject: subject.to_string(),
            kind,
        })
    };

    let mut bound: HashSet<&str> = reg.constants.keys().map(String::as_str).collect();
    bound.extend(reg.variables.iter().map(|v| v.name.as_str()));
    bound.extend(reg.rules.iter().map(|r| r.target_field.as_str()));
    bound.extend(produced.iter().map(String::as_str));

    let mut seen = HashSet::new();
    for rule in &reg.rules {
        if !seen.insert(rule.id.as_str()) {
            push(&mut out, &rule.id, FindingKind::DuplicateId);
        }
        if let Err(e) = expr::parse_assertion(&rule.assertion) {
            push(&mut out, &rule.id, FindingKind::Unparseable { error: e.to_string() });
            continue;
        }
        let vars = rule.free_vars();
        for v in &vars {
            if !bound.contains(v.as_str()) {
                push(&mut out, &rule.id, FindingKind::UnboundVariable { name: v.clone() });
            }
        }
        if !vars.contains(&rule.target_field) {
            push(
                &mut out,
                &rule.id,
                FindingKind::TargetNotInAssertion {
                    field: rule.target_field.clone(),
                },
            );
        }
        match (&rule.relaxation_parameter, rule.negotiable) {
            (None, true) => push(&mut out, &rule.id, FindingKind::NegotiableWithoutParameter),
            (Some(p), _) => {
                if !vars.contains(p) {
                    push(&mut out, &rule.id, FindingKind::RelaxationParameterUnused { parameter: p.clone() });
                }
                if rule.negotiable && !reg.constants.contains_key(p) {
                    push(&mut out, &rule.id, FindingKind::RelaxationParameterNotConstant { parameter: p.clone() });
                }
            }
            (None, false) => {}
        }
    }

    for v in &reg.variables {
        let bad = if !(v.min.is_finite() && v.max.is_finite() && v.resolution.is_finite()) {
            Some("domain bounds must be finite")
        } else if v.min > v.max {
            Some("min exceeds max")
        } else if v.resolution <= 0.0 {
            Some("resolution must be positive")
        } else if v.integer && (v.min.fract() != 0.0 || v.max.fract() != 0.0 || v.resolution.fract() != 0.0) {
            Some("integer variables need integral bounds and resolution")
        } else {
            None
        };
        if let Some(message) = bad {
            push(
                &mut out,
                &v.name,
                FindingKind::BadVariableDomain {
                    variable: v.name.clone(),
                    message: message.to_string(),
                },
            );
        }
    }

    let ids = reg.rule_ids();
    for t in &reg.meta_tests {
        for r in t.expected_failing_rules.difference(&ids) {
            push(&mut out, r, FindingKind::MetaTestUnknownRule { test: t.label.clone() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{load_registry_str, HarnessRule, Severity};

    const RULES_ONLY: &str = include_str!("../../assets/harnesses/ad_degradation_rules.yaml");
    const FULL: &str = include_str!("../../assets/harnesses/ad_degradation.yaml");

    #[test]
    fn bare_rules_report_unbound_constants() {
        let reg = load_registry_str(RULES_ONLY, "ad").unwrap();
        let findings = validate_registry(&reg);
        let unbound: BTreeSet<_> = findings
            .iter()
            .filter_map(|f| match &f.kind {
                FindingKind::UnboundVariable { name } => Some(name.as_str()),
                _ => None,
            })
            .collect();
        assert!(unbound.contains("g"));
        assert!(unbound.contains("max_deceleration_limit"));
        assert!(!unbound.contains("vehicle_speed_kmph_t5"));
    }

    #[test]
    fn bare_rules_with_constants_are_clean() {
        let mut reg = load_registry_str(RULES_ONLY, "ad").unwrap();
        reg.constants = load_registry_str(FULL, "ad").unwrap().constants;
        assert_eq!(validate_registry(&reg), vec![]);
    }

    #[test]
    fn duplicates_and_negotiation_problems() {
        let mut reg = HarnessRegistry::new("t", "1");
        reg.constants.insert("lim", 1.0);
        let a = HarnessRule::new("A", "x", "x < lim", Severity::Critical).unwrap();
        let mut b = a.clone();
        b.negotiable = true;
        reg.rules = vec![a.clone(), b];
        let kinds: Vec<_> = validate_registry(&reg).into_iter().map(|f| f.kind).collect();
        assert!(kinds.contains(&FindingKind::DuplicateId));
        assert!(kinds.contains(&FindingKind::NegotiableWithoutParameter));

        let mut reg2 = HarnessRegistry::new("t", "1");
        reg2.rules = vec![HarnessRule::new("B", "y", "x < 1", Severity::Critical).unwrap().negotiable_on("lim")];
        let kinds: Vec<_> = validate_registry(&reg2).into_iter().map(|f| f.kind).collect();
        assert!(kinds.contains(&FindingKind::TargetNotInAssertion { field: "y".into() }));
        assert!(kinds.contains(&FindingKind::RelaxationParameterUnused { parameter: "lim".into() }));
        assert!(kinds.contains(&FindingKind::RelaxationParameterNotConstant { parameter: "lim".into() }));
    }

    #[test]
    fn produced_fields_count_as_bound() {
        let mut reg = HarnessRegistry::new("t", "1");
        reg.rules = vec![HarnessRule::new("A", "x", "x < range_m", Severity::Critical).unwrap()];
        assert_eq!(validate_registry(&reg).len(), 1);
        let produced: BTreeSet<String> = ["range_m".to_string()].into();
        assert!(validate_registry_with(&reg, &produced).is_empty());
    }
}
