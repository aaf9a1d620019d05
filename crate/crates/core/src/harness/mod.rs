//! The Harness Registry: declarative, frozen domain rules plus the constants,
//! decision variables and meta-tests that travel with them.
//!
//! Rules are loaded from YAML (see `docs/harness-schema.md`), their assertions
//! parsed once with [`crate::expr`], and never mutated afterwards. The only way
//! to change a frozen registry is [`apply_override`], which returns a new
//! registry and an [`OverrideRecord`] for the audit log.

mod load;
mod meta;
mod overrides;
mod validate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError};
use crate::facts::FactMap;

pub use load::{load_registry, load_registry_str, save_registry};
pub use meta::{meta_validate, MetaOutcome, MetaReport, MetaTestResult};
pub use overrides::{append_audit_log, apply_override, read_audit_log, OverrideError, OverrideRecord};
pub use validate::{validate_registry, validate_registry_with, Finding, FindingKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Critical,
    Fatal,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "CRITICAL",
            Severity::Fatal => "FATAL",
            Severity::Warning => "WARNING",
        }
    }

    /// Warnings are reported but never block success or enter the paradox
    /// analysis.
    pub fn is_blocking(self) -> bool {
        self != Severity::Warning
    }

    /// Higher is more severe.
    pub fn rank(self) -> u8 {
        match self {
            Severity::Fatal => 2,
            Severity::Critical => 1,
            Severity::Warning => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessRule {
    pub id: String,
    /// Short human name for reports, e.g. "Rear Safety".
    pub display_name: Option<String>,
    pub description: String,
    pub target_field: String,
    /// Human-readable restatement; not evaluated.
    pub condition: String,
    /// Assertion source exactly as written in the registry file.
    pub assertion: String,
    pub severity: Severity,
    pub negotiable: bool,
    pub relaxation_parameter: Option<String>,
    /// Role tags this rule applies to; `None` means every node.
    pub scope: Option<Vec<String>>,
    pub lhs_label: Option<String>,
    pub rhs_label: Option<String>,
    pub failure_label: Option<String>,
    expr: Expr,
}

impl HarnessRule {
    pub fn new(id: &str, target_field: &str, assertion: &str, severity: Severity) -> Result<Self, ExprError> {
        Ok(HarnessRule {
            id: id.to_string(),
            display_name: None,
            description: String::new(),
            target_field: target_field.to_string(),
            condition: String::new(),
            assertion: assertion.to_string(),
            severity,
            negotiable: false,
            relaxation_parameter: None,
            scope: None,
            lhs_label: None,
            rhs_label: None,
            failure_label: None,
            expr: expr::parse_assertion(assertion)?,
        })
    }

    pub fn negotiable_on(mut self, parameter: &str) -> Self {
        self.negotiable = true;
        self.relaxation_parameter = Some(parameter.to_string());
        self
    }

    pub fn scoped(mut self, tags: &[&str]) -> Self {
        self.scope = Some(tags.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        expr::free_vars(&self.expr)
    }

    pub fn in_scope(&self, tags: &BTreeSet<String>) -> bool {
        match &self.scope {
            None => true,
            Some(s) => s.iter().any(|t| tags.contains(t)),
        }
    }

    pub fn display_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.id)
    }

    pub fn lhs_label(&self) -> &str {
        self.lhs_label.as_deref().unwrap_or("lhs")
    }

    pub fn rhs_label(&self) -> &str {
        self.rhs_label.as_deref().unwrap_or("rhs")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVariable {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
    #[serde(default)]
    pub integer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl DecisionVariable {
    pub fn new(name: &str, min: f64, max: f64, resolution: f64, integer: bool) -> Self {
        DecisionVariable {
            name: name.to_string(),
            min,
            max,
            resolution,
            integer,
            label: None,
            unit: None,
        }
    }

    /// Number of grid points in `[min, max]` at `resolution`.
    pub fn steps(&self) -> usize {
        ((self.max - self.min) / self.resolution + 1e-9).floor() as usize + 1
    }

    /// Grid value `i`, rounded to the resolution's decimal precision so that
    /// accumulated float error never shows up in witnesses.
    pub fn value_at(&self, i: usize) -> f64 {
        let raw = self.min + i as f64 * self.resolution;
        round_to(raw, self.resolution).min(self.max)
    }

    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    /// Formats a value at the precision implied by the resolution.
    pub fn format(&self, x: f64) -> String {
        let decimals = decimals_of(self.resolution);
        format!("{x:.decimals$}")
    }
}

pub(crate) fn decimals_of(resolution: f64) -> usize {
    let mut d = 0;
    let mut r = resolution.abs();
    while d < 9 && (r - r.round()).abs() > 1e-9 {
        r *= 10.0;
        d += 1;
    }
    d
}

pub(crate) fn round_to(x: f64, resolution: f64) -> f64 {
    let d = decimals_of(resolution) as i32;
    let p = 10f64.powi(d);
    (x * p).round() / p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetaTestKind {
    Golden,
    Poisoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTest {
    pub label: String,
    pub kind: MetaTestKind,
    pub facts: FactMap,
    pub expected_failing_rules: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessRegistry {
    pub name: String,
    pub version: String,
    pub frozen: bool,
    pub rules: Vec<HarnessRule>,
    pub constants: FactMap,
    pub variables: Vec<DecisionVariable>,
    pub meta_tests: Vec<MetaTest>,
    /// Label for artifacts that break more than one rule, or leave a domain.
    pub multi_failure_label: Option<String>,
    pub audit_log: Vec<OverrideRecord>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("YAML error: {0}")]
    Yaml(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("rule {rule_id}: {source}")]
    Expr {
        rule_id: String,
        offset: Option<usize>,
        #[source]
        source: ExprError,
    },
    #[error("registry '{0}' is frozen")]
    Frozen(String),
}

impl HarnessRegistry {
    pub fn new(name: &str, version: &str) -> Self {
        HarnessRegistry {
            name: name.to_string(),
            version: version.to_string(),
            frozen: false,
            rules: Vec::new(),
            constants: FactMap::new(),
            variables: Vec::new(),
            meta_tests: Vec::new(),
            multi_failure_label: None,
            audit_log: Vec::new(),
        }
    }

    pub fn add_rule(&mut self, rule: HarnessRule) -> Result<(), HarnessError> {
        self.check_mutable()?;
        self.rules.push(rule);
        Ok(())
    }

    pub fn set_constant(&mut self, name: &str, value: f64) -> Result<(), HarnessError> {
        self.check_mutable()?;
        self.constants.insert(name, value);
        Ok(())
    }

    pub fn add_variable(&mut self, var: DecisionVariable) -> Result<(), HarnessError> {
        self.check_mutable()?;
        self.variables.push(var);
        Ok(())
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn check_mutable(&self) -> Result<(), HarnessError> {
        if self.frozen {
            Err(HarnessError::Frozen(self.name.clone()))
        } else {
            Ok(())
        }
    }

    pub fn rule(&self, id: &str) -> Option<&HarnessRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn variable(&self, name: &str) -> Option<&DecisionVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn rule_ids(&self) -> BTreeSet<String> {
        self.rules.iter().map(|r| r.id.clone()).collect()
    }

    pub fn blocking_rule_ids(&self) -> BTreeSet<String> {
        self.rules
            .iter()
            .filter(|r| r.severity.is_blocking())
            .map(|r| r.id.clone())
            .collect()
    }

    /// Position of a rule in declaration order; unknown ids sort last.
    pub fn rule_index(&self, id: &str) -> usize {
        self.rules.iter().position(|r| r.id == id).unwrap_or(usize::MAX)
    }

    /// Constant names referenced by a rule, in sorted order.
    pub fn rule_constants(&self, rule: &HarnessRule) -> Vec<String> {
        rule.free_vars().into_iter().filter(|v| self.constants.contains_key(v)).collect()
    }
}
