//! YAML decoding with path-qualified schema errors, and the inverse writer.

use std::collections::BTreeSet;
use std::path::Path;

use serde_yaml::{Mapping, Value as Yaml};

use super::{
    DecisionVariable, HarnessError, HarnessRegistry, HarnessRule, MetaTest, MetaTestKind, OverrideRecord, Severity,
};
use crate::expr;
use crate::facts::{is_identifier, FactMap, Value};

const TOP_KEYS: &[&str] = &[
    "name",
    "version",
    "frozen",
    "multi_failure_label",
    "rules",
    "constants",
    "variables",
    "meta_tests",
    "overrides",
];
const RULE_KEYS: &[&str] = &[
    "id",
    "display_name",
    "description",
    "target_field",
    "condition",
    "assertion",
    "severity",
    "negotiable",
    "relaxation_parameter",
    "scope",
    "lhs_label",
    "rhs_label",
    "failure_label",
];
const VAR_KEYS: &[&str] = &["name", "min", "max", "resolution", "integer", "label", "unit"];
const META_KEYS: &[&str] = &["label", "kind", "facts", "expected_failing_rules"];

pub fn load_registry(path: &Path) -> Result<HarnessRegistry, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("registry");
    load_registry_str(&text, stem)
}

/// Parses registry YAML. `default_name` is used when the document has no
/// `name` key (the bare rules-only layout).
pub fn load_registry_str(text: &str, default_name: &str) -> Result<HarnessRegistry, HarnessError> {
    let doc: Yaml = serde_yaml::from_str(text).map_err(|e| HarnessError::Yaml(e.to_string()))?;
    let top = as_map(&doc, "$")?;
    check_keys(top, TOP_KEYS, "")?;

    let name = opt_str(top, "name", "")?.unwrap_or_else(|| default_name.to_string());
    let version = opt_str(top, "version", "")?.unwrap_or_else(|| "0".to_string());
    let frozen = opt_bool(top, "frozen", "")?.unwrap_or(true);
    let multi_failure_label = opt_str(top, "multi_failure_label", "")?;

    let rules_yaml = top.get("rules").ok_or_else(|| schema("rules", "missing required key"))?;
    let rules_seq = as_seq(rules_yaml, "rules")?;
    let mut rules = Vec::with_capacity(rules_seq.len());
    for (i, r) in rules_seq.iter().enumerate() {
        rules.push(rule(r, &format!("rules[{i}]"))?);
    }

    let constants = match top.get("constants") {
        Some(c) => facts(c, "constants")?,
        None => FactMap::new(),
    };

    let mut variables = Vec::new();
    if let Some(v) = top.get("variables") {
        for (i, item) in as_seq(v, "variables")?.iter().enumerate() {
            variables.push(variable(item, &format!("variables[{i}]"))?);
        }
    }

    let mut meta_tests = Vec::new();
    if let Some(m) = top.get("meta_tests") {
        for (i, item) in as_seq(m, "meta_tests")?.iter().enumerate() {
            meta_tests.push(meta_test(item, &format!("meta_tests[{i}]"))?);
        }
    }

    let mut audit_log = Vec::new();
    if let Some(o) = top.get("overrides") {
        for (i, item) in as_seq(o, "overrides")?.iter().enumerate() {
            let rec: OverrideRecord = serde_yaml::from_value(item.clone()).map_err(|e| schema(&format!("overrides[{i}]"), &e.to_string()))?;
            audit_log.push(rec);
        }
    }

    Ok(HarnessRegistry {
        name,
        version,
        frozen,
        rules,
        constants,
        variables,
        meta_tests,
        multi_failure_label,
        audit_log,
    })
}

fn rule(y: &Yaml, path: &str) -> Result<HarnessRule, HarnessError> {
    let m = as_map(y, path)?;
    check_keys(m, RULE_KEYS, path)?;
    let id = req_str(m, "id", path)?;
    let target_field = req_str(m, "target_field", path)?;
    let assertion = req_str(m, "assertion", path)?;
    let severity = match req_str(m, "severity", path)?.as_str() {
        "CRITICAL" => Severity::Critical,
        "FATAL" => Severity::Fatal,
        "WARNING" => Severity::Warning,
        other => return Err(schema(&join(path, "severity"), &format!("unknown severity '{other}' (CRITICAL, FATAL, WARNING)"))),
    };
    let parsed = expr::parse_assertion(&assertion).map_err(|e| HarnessError::Expr {
        rule_id: id.clone(),
        offset: e.offset(),
        source: e,
    })?;
    let scope = match m.get("scope") {
        None | Some(Yaml::Null) => None,
        Some(s) => Some(str_list(s, &join(path, "scope"))?),
    };
    Ok(HarnessRule {
        display_name: opt_str(m, "display_name", path)?,
        description: opt_str(m, "description", path)?.unwrap_or_default(),
        condition: opt_str(m, "condition", path)?.unwrap_or_default(),
        negotiable: opt_bool(m, "negotiable", path)?.unwrap_or(false),
        relaxation_parameter: opt_str(m, "relaxation_parameter", path)?,
        lhs_label: opt_str(m, "lhs_label", path)?,
        rhs_label: opt_str(m, "rhs_label", path)?,
        failure_label: opt_str(m, "failure_label", path)?,
        id,
        target_field,
        assertion,
        severity,
        scope,
        expr: parsed,
    })
}

fn variable(y: &Yaml, path: &str) -> Result<DecisionVariable, HarnessError> {
    let m = as_map(y, path)?;
    check_keys(m, VAR_KEYS, path)?;
    let name = req_str(m, "name", path)?;
    if !is_identifier(&name) {
        return Err(schema(&join(path, "name"), "not an identifier"));
    }
    Ok(DecisionVariable {
        name,
        min: req_f64(m, "min", path)?,
        max: req_f64(m, "max", path)?,
        resolution: req_f64(m, "resolution", path)?,
        integer: opt_bool(m, "integer", path)?.unwrap_or(false),
        label: opt_str(m, "label", path)?,
        unit: opt_str(m, "unit", path)?,
    })
}

fn meta_test(y: &Yaml, path: &str) -> Result<MetaTest, HarnessError> {
    let m = as_map(y, path)?;
    check_keys(m, META_KEYS, path)?;
    let kind = match req_str(m, "kind", path)?.as_str() {
        "GOLDEN" => MetaTestKind::Golden,
        "POISONED" => MetaTestKind::Poisoned,
        other => return Err(schema(&join(path, "kind"), &format!("unknown kind '{other}' (GOLDEN, POISONED)"))),
    };
    let facts = match m.get("facts") {
        Some(f) => facts(f, &join(path, "facts"))?,
        None => return Err(schema(&join(path, "facts"), "missing required key")),
    };
    let expected: BTreeSet<String> = match m.get("expected_failing_rules") {
        Some(e) => str_list(e, &join(path, "expected_failing_rules"))?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    Ok(MetaTest {
        label: req_str(m, "label", path)?,
        kind,
        facts,
        expected_failing_rules: expected,
    })
}

fn facts(y: &Yaml, path: &str) -> Result<FactMap, HarnessError> {
    let m = as_map(y, path)?;
    let mut out = FactMap::new();
    for (k, v) in m {
        let key = k.as_str().ok_or_else(|| schema(path, "keys must be strings"))?;
        let p = join(path, key);
        if !is_identifier(key) {
            return Err(schema(&p, "not an identifier"));
        }
        let value = match v {
            Yaml::Bool(b) => Value::Bool(*b),
            Yaml::Number(n) => Value::Num(n.as_f64().ok_or_else(|| schema(&p, "number out of range"))?),
            _ => return Err(schema(&p, "expected a number or boolean")),
        };
        out.insert(key, value);
    }
    Ok(out)
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn schema(path: &str, message: &str) -> HarnessError {
    HarnessError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn as_map<'a>(y: &'a Yaml, path: &str) -> Result<&'a Mapping, HarnessError> {
    y.as_mapping().ok_or_else(|| schema(path, "expected a mapping"))
}

fn as_seq<'a>(y: &'a Yaml, path: &str) -> Result<&'a Vec<Yaml>, HarnessError> {
    y.as_sequence().ok_or_else(|| schema(path, "expected a list"))
}

fn check_keys(m: &Mapping, allowed: &[&str], path: &str) -> Result<(), HarnessError> {
    for k in m.keys() {
        match k.as_str() {
            Some(s) if allowed.contains(&s) => {}
            Some(s) => return Err(schema(&join(path, s), "unknown key")),
            None => return Err(schema(path, "keys must be strings")),
        }
    }
    Ok(())
}

fn req_str(m: &Mapping, key: &str, path: &str) -> Result<String, HarnessError> {
    opt_str(m, key, path)?.ok_or_else(|| schema(&join(path, key), "missing required key"))
}

fn opt_str(m: &Mapping, key: &str, path: &str) -> Result<Option<String>, HarnessError> {
    match m.get(key) {
        None | Some(Yaml::Null) => Ok(None),
        Some(Yaml::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(&join(path, key), "expected a string")),
    }
}

fn opt_bool(m: &Mapping, key: &str, path: &str) -> Result<Option<bool>, HarnessError> {
    match m.get(key) {
        None | Some(Yaml::Null) => Ok(None),
        Some(Yaml::Bool(b)) => Ok(Some(*b)),
        Some(_) => Err(schema(&join(path, key), "expected a boolean")),
    }
}

fn req_f64(m: &Mapping, key: &str, path: &str) -> Result<f64, HarnessError> {
    match m.get(key) {
        Some(Yaml::Number(n)) => n.as_f64().ok_or_else(|| schema(&join(path, key), "number out of range")),
        Some(_) => Err(schema(&join(path, key), "expected a number")),
        None => Err(schema(&join(path, key), "missing required key")),
    }
}

fn str_list(y: &Yaml, path: &str) -> Result<Vec<String>, HarnessError> {
    as_seq(y, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| s.as_str().map(String::from).ok_or_else(|| schema(&format!("{path}[{i}]"), "expected a string")))
        .collect()
}

fn s(x: &str) -> Yaml {
    Yaml::String(x.to_string())
}

fn facts_yaml(f: &FactMap) -> Yaml {
    let mut m = Mapping::new();
    for (k, v) in f {
        let y = match v {
            Value::Num(x) => Yaml::Number((*x).into()),
            Value::Bool(b) => Yaml::Bool(*b),
            Value::Text(t) => s(t),
        };
        m.insert(s(k), y);
    }
    Yaml::Mapping(m)
}

/// Writes a registry back to YAML. `load_registry_str(save_registry(r))`
/// reproduces `r` exactly.
pub fn save_registry(reg: &HarnessRegistry) -> String {
    let mut top = Mapping::new();
    top.insert(s("name"), s(&reg.name));
    top.insert(s("version"), s(&reg.version));
    top.insert(s("frozen"), Yaml::Bool(reg.frozen));
    if let Some(l) = &reg.multi_failure_label {
        top.insert(s("multi_failure_label"), s(l));
    }
    let rules = reg
        .rules
        .iter()
        .map(|r| {
            let mut m = Mapping::new();
            m.insert(s("id"), s(&r.id));
            if let Some(d) = &r.display_name {
                m.insert(s("display_name"), s(d));
            }
            m.insert(s("description"), s(&r.description));
            m.insert(s("target_field"), s(&r.target_field));
            m.insert(s("condition"), s(&r.condition));
            m.insert(s("assertion"), s(&r.assertion));
            m.insert(s("severity"), s(r.severity.as_str()));
            m.insert(s("negotiable"), Yaml::Bool(r.negotiable));
            let opts = [
                ("relaxation_parameter", &r.relaxation_parameter),
                ("lhs_label", &r.lhs_label),
                ("rhs_label", &r.rhs_label),
                ("failure_label", &r.failure_label),
            ];
            for (k, v) in opts {
                if let Some(v) = v {
                    m.insert(s(k), s(v));
                }
            }
            if let Some(scope) = &r.scope {
                m.insert(s("scope"), Yaml::Sequence(scope.iter().map(|t| s(t)).collect()));
            }
            Yaml::Mapping(m)
        })
        .collect();
    top.insert(s("rules"), Yaml::Sequence(rules));
    top.insert(s("constants"), facts_yaml(&reg.constants));
    let vars = reg
        .variables
        .iter()
        .map(|v| serde_yaml::to_value(v).expect("variables serialise"))
        .collect();
    top.insert(s("variables"), Yaml::Sequence(vars));
    let metas = reg
        .meta_tests
        .iter()
        .map(|t| {
            let mut m = Mapping::new();
            m.insert(s("label"), s(&t.label));
            m.insert(
                s("kind"),
                s(match t.kind {
                    MetaTestKind::Golden => "GOLDEN",
                    MetaTestKind::Poisoned => "POISONED",
                }),
            );
            m.insert(s("facts"), facts_yaml(&t.facts));
            m.insert(
                s("expected_failing_rules"),
                Yaml::Sequence(t.expected_failing_rules.iter().map(|r| s(r)).collect()),
            );
            Yaml::Mapping(m)
        })
        .collect();
    top.insert(s("meta_tests"), Yaml::Sequence(metas));
    if !reg.audit_log.is_empty() {
        let recs = reg
            .audit_log
            .iter()
            .map(|r| serde_yaml::to_value(r).expect("override records serialise"))
            .collect();
        top.insert(s("overrides"), Yaml::Sequence(recs));
    }
    serde_yaml::to_string(&Yaml::Mapping(top)).expect("registry serialises")
}
