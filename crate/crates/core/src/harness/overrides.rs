//! Human-authorised constant overrides and their JSON-lines audit log.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HarnessRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub rule_id: String,
    pub parameter: String,
    pub old_value: f64,
    pub new_value: f64,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverrideError {
    #[error("rule '{0}' does not exist")]
    UnknownRule(String),
    #[error("rule '{0}' is not negotiable")]
    NotNegotiable(String),
    #[error("relaxation parameter '{0}' is not a numeric constant")]
    UnknownParameter(String),
    #[error("new value equals the current value {0}")]
    NoChange(f64),
    #[error("invalid override record: {0}")]
    InvalidRecord(String),
}

/// Returns a copy of `reg` with the rule's relaxation parameter set to
/// `new_value`, the version suffixed and the record appended to its audit log.
/// Rule assertions are untouched.
pub fn apply_override(
    reg: &HarnessRegistry,
    rule_id: &str,
    new_value: f64,
    actor: &str,
    justification: &str,
) -> Result<(HarnessRegistry, OverrideRecord), OverrideError> {
    let rule = reg.rule(rule_id).ok_or_else(|| OverrideError::UnknownRule(rule_id.to_string()))?;
    if !rule.negotiable {
        return Err(OverrideError::NotNegotiable(rule_id.to_string()));
    }
    let parameter = rule
        .relaxation_parameter
        .clone()
        .ok_or_else(|| OverrideError::NotNegotiable(rule_id.to_string()))?;
    let old_value = reg
        .constants
        .get_f64(&parameter)
        .ok_or_else(|| OverrideError::UnknownParameter(parameter.clone()))?;
    if actor.trim().is_empty() {
        return Err(OverrideError::InvalidRecord("actor must not be empty".into()));
    }
    if !new_value.is_finite() {
        return Err(OverrideError::InvalidRecord("new value must be finite".into()));
    }
    if new_value == old_value {
        return Err(OverrideError::NoChange(old_value));
    }
    let record = OverrideRecord {
        timestamp: Utc::now(),
        actor: actor.to_string(),
        rule_id: rule_id.to_string(),
        parameter: parameter.clone(),
        old_value,
        new_value,
        justification: justification.to_string(),
    };
    let mut next = reg.clone();
    next.constants.insert(parameter, new_value);
    next.audit_log.push(record.clone());
    let base = reg.version.split("+override.").next().unwrap_or(&reg.version);
    next.version = format!("{base}+override.{}", next.audit_log.len());
    Ok((next, record))
}

/// Appends one record as a JSON line and flushes it to disk.
pub fn append_audit_log(path: &Path, record: &OverrideRecord) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
    writeln!(f, "{line}")?;
    f.sync_data()
}

pub fn read_audit_log(path: &Path) -> std::io::Result<Vec<OverrideRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
