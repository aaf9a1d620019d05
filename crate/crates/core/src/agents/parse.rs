//! Strict output parsing with a bounded number of fresh attempts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::facts::{FactMap, Value};
use crate::rad::{parse_plan, FieldType, RadPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RetryOutcome<T> {
    Parsed { value: T, attempts: u32, raw: Vec<String> },
    /// Every attempt failed; the raw outputs and reasons are kept for the
    /// trace so excluded trials can be reported separately.
    Excluded { raw: Vec<String>, errors: Vec<String> },
}

impl<T> RetryOutcome<T> {
    pub fn raw(&self) -> &[String] {
        match self {
            RetryOutcome::Parsed { raw, .. } | RetryOutcome::Excluded { raw, .. } => raw,
        }
    }
}

/// Calls `producer(attempt)` until `parser` accepts its output or
/// `max_attempts` are used up. Producer errors count as failed attempts.
pub fn retry_with<T>(
    mut producer: impl FnMut(u32) -> Result<String, AgentError>,
    parser: impl Fn(&str) -> Result<T, String>,
    max_attempts: u32,
) -> RetryOutcome<T> {
    let mut raw = Vec::new();
    let mut errors = Vec::new();
    for attempt in 1..=max_attempts.max(1) {
        match producer(attempt) {
            Ok(text) => {
                let parsed = parser(&text);
                raw.push(text);
                match parsed {
                    Ok(value) => return RetryOutcome::Parsed { value, attempts: attempt, raw },
                    Err(e) => errors.push(e),
                }
            }
            Err(e) => {
                raw.push(String::new());
                errors.push(e.to_string());
            }
        }
    }
    RetryOutcome::Excluded { raw, errors }
}

pub fn parse_with_retry(
    producer: impl FnMut(u32) -> Result<String, AgentError>,
    schema: &BTreeMap<String, FieldType>,
    max_attempts: u32,
) -> RetryOutcome<FactMap> {
    retry_with(producer, |t| parse_artifact(t, schema), max_attempts)
}

/// Planner mode: the output must be a plan object with a `nodes` key.
pub fn parse_plan_with_retry(
    producer: impl FnMut(u32) -> Result<String, AgentError>,
    max_attempts: u32,
) -> RetryOutcome<RadPlan> {
    retry_with(producer, |t| parse_plan(t).map_err(|e| e.to_string()), max_attempts)
}

/// A JSON object with exactly the schema's keys. Integers may be written as
/// `55` or `55.0`; anything fractional is rejected for an `int` field.
pub fn parse_artifact(text: &str, schema: &BTreeMap<String, FieldType>) -> Result<FactMap, String> {
    let root: serde_json::Value = serde_json::from_str(text.trim()).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = root.as_object().ok_or_else(|| "expected a JSON object".to_string())?;
    let mut out = FactMap::new();
    for key in obj.keys() {
        if !schema.contains_key(key) {
            return Err(format!("unexpected field '{key}'"));
        }
    }
    for (field, ty) in schema {
        let v = obj.get(field).ok_or_else(|| format!("missing field '{field}'"))?;
        let value = match (ty, v) {
            (FieldType::Float, serde_json::Value::Number(n)) => Value::Num(n.as_f64().ok_or("number out of range")?),
            (FieldType::Int, serde_json::Value::Number(n)) => {
                let x = n.as_f64().ok_or("number out of range")?;
                if x.fract() != 0.0 || !x.is_finite() {
                    return Err(format!("field '{field}' must be an integer, got {x}"));
                }
                Value::Num(x)
            }
            (FieldType::Bool, serde_json::Value::Bool(b)) => Value::Bool(*b),
            (FieldType::Text, serde_json::Value::String(s)) => Value::Text(s.clone()),
            (ty, other) => return Err(format!("field '{field}' must be {}, got {other}", ty.as_str())),
        };
        out.insert(field.clone(), value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> BTreeMap<String, FieldType> {
        [("v".to_string(), FieldType::Int), ("note".to_string(), FieldType::Text)].into()
    }

    #[test]
    fn strict_keys_and_types() {
        assert!(parse_artifact(r#"{"v": 55, "note": "ok"}"#, &schema()).is_ok());
        assert_eq!(parse_artifact(r#"{"v": 55.0, "note": ""}"#, &schema()).unwrap().get_f64("v"), Some(55.0));
        assert!(parse_artifact(r#"{"v": 55.5, "note": ""}"#, &schema()).is_err());
        assert!(parse_artifact(r#"{"v": 55}"#, &schema()).is_err());
        assert!(parse_artifact(r#"{"v": 55, "note": "", "extra": 1}"#, &schema()).is_err());
        assert!(parse_artifact(r#"{"v": "55", "note": ""}"#, &schema()).is_err());
        assert!(parse_artifact(r#"[{"v": 55, "note": ""}]"#, &schema()).is_err());
    }

    #[test]
    fn retries_until_valid() {
        let outputs = ["[{\"nodes\": {}}]", "{\"nodes\": {}}"];
        let r = parse_plan_with_retry(|a| Ok(outputs[a as usize - 1].to_string()), 3);
        assert!(matches!(r, RetryOutcome::Parsed { attempts: 2, .. }));
    }

    #[test]
    fn three_failures_exclude() {
        let r = parse_with_retry(|_| Ok("not json".to_string()), &schema(), 3);
        match r {
            RetryOutcome::Excluded { raw, errors } => {
                assert_eq!(raw.len(), 3);
                assert_eq!(errors.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_attempt_success() {
        let r = parse_with_retry(|_| Ok(r#"{"v": 1, "note": "x"}"#.to_string()), &schema(), 3);
        assert!(matches!(r, RetryOutcome::Parsed { attempts: 1, .. }));
    }

    #[test]
    fn planner_mode_requires_nodes() {
        let r = parse_plan_with_retry(|_| Ok(r#"{"steps": {}}"#.to_string()), 2);
        let RetryOutcome::Excluded { errors, .. } = r else { panic!() };
        assert!(errors[0].contains("nodes"));
    }

    #[test]
    fn producer_errors_use_up_attempts() {
        let r = parse_with_retry(|_| Err(AgentError::HttpStatus(429)), &schema(), 2);
        let RetryOutcome::Excluded { errors, .. } = r else { panic!() };
        assert_eq!(errors, vec!["HTTP status 429", "HTTP status 429"]);
    }
}
