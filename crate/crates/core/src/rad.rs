//! Decomposition plans: parsing, structural validation, deterministic
//! ordering and the per-node context firewall.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::facts::{FactMap, Value};
use crate::harness::{HarnessRegistry, HarnessRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Float,
    Int,
    Bool,
    Text,
}

impl FieldType {
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldType::Float | FieldType::Int)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldType::Float => "float",
            FieldType::Int => "int",
            FieldType::Bool => "bool",
            FieldType::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadNode {
    pub id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub context_keys: Vec<String>,
    #[serde(default)]
    pub expected_schema: BTreeMap<String, FieldType>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub role_tags: BTreeSet<String>,
}

impl RadNode {
    pub fn new(id: &str) -> Self {
        RadNode {
            id: id.to_string(),
            parent_id: None,
            parents: Vec::new(),
            description: String::new(),
            context_keys: Vec::new(),
            expected_schema: BTreeMap::new(),
            role_tags: BTreeSet::new(),
        }
    }

    /// `parent_id` followed by any extra `parents`, without duplicates.
    pub fn all_parents(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in self.parent_id.iter().chain(self.parents.iter()) {
            if !out.contains(&p.as_str()) {
                out.push(p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadPlan {
    pub nodes: BTreeMap<String, RadNode>,
    /// Keys that appeared more than once in the source `nodes` object.
    pub duplicate_keys: Vec<String>,
}

impl Serialize for RadPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            nodes: &'a BTreeMap<String, RadNode>,
        }
        Wire { nodes: &self.nodes }.serialize(s)
    }
}

struct NodesVisitor;

impl<'de> Visitor<'de> for NodesVisitor {
    type Value = (BTreeMap<String, RadNode>, Vec<String>);

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an object mapping node ids to nodes")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut nodes = BTreeMap::new();
        let mut dups = Vec::new();
        while let Some((k, v)) = map.next_entry::<String, RadNode>()? {
            if nodes.insert(k.clone(), v).is_some() {
                dups.push(k);
            }
        }
        Ok((nodes, dups))
    }
}

struct Nodes((BTreeMap<String, RadNode>, Vec<String>));

impl<'de> Deserialize<'de> for Nodes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_map(NodesVisitor).map(Nodes)
    }
}

impl<'de> Deserialize<'de> for RadPlan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            nodes: Nodes,
        }
        let Wire { nodes: Nodes((nodes, duplicate_keys)) } = Wire::deserialize(d)?;
        Ok(RadPlan { nodes, duplicate_keys })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan is not valid JSON: {0}")]
    Json(String),
    #[error("plan root must be an object, found {0}")]
    NotAnObject(&'static str),
    #[error("plan has no top-level \"nodes\" object")]
    MissingNodes,
    #[error("plan schema error: {0}")]
    Schema(String),
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "a list",
        serde_json::Value::Object(_) => "an object",
    }
}

/// Strict plan parsing: the root must be an object with a `nodes` object.
/// Unknown keys elsewhere are ignored.
pub fn parse_plan(text: &str) -> Result<RadPlan, PlanError> {
    let root: serde_json::Value = serde_json::from_str(text).map_err(|e| PlanError::Json(e.to_string()))?;
    let obj = root.as_object().ok_or(PlanError::NotAnObject(json_kind(&root)))?;
    match obj.get("nodes") {
        None => return Err(PlanError::MissingNodes),
        Some(serde_json::Value::Object(_)) => {}
        Some(other) => return Err(PlanError::Schema(format!("\"nodes\" must be an object, found {}", json_kind(other)))),
    }
    // Re-read from text rather than the Value so duplicate keys are seen.
    serde_json::from_str(text).map_err(|e| PlanError::Schema(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanFinding {
    DuplicateId { id: String },
    IdMismatch { key: String, id: String },
    DanglingParent { node: String, parent: String },
    CycleDetected { path: Vec<String> },
    UnsatisfiedContextKey { node: String, key: String },
    NoRoot,
    EmptySchema { node: String },
}

/// Structural checks. An empty report means `topo_order` and
/// `context_slice` are well defined for every node.
pub fn validate_plan(plan: &RadPlan) -> Vec<PlanFinding> {
    let mut out = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for id in &plan.duplicate_keys {
        out.push(PlanFinding::DuplicateId { id: id.clone() });
        seen_ids.insert(id.clone());
    }
    let mut by_inner: BTreeMap<&str, usize> = BTreeMap::new();
    for (key, node) in &plan.nodes {
        if key != &node.id {
            out.push(PlanFinding::IdMismatch { key: key.clone(), id: node.id.clone() });
        }
        *by_inner.entry(node.id.as_str()).or_default() += 1;
    }
    for (id, n) in by_inner {
        if n > 1 && !seen_ids.contains(id) {
            out.push(PlanFinding::DuplicateId { id: id.to_string() });
        }
    }
    for (key, node) in &plan.nodes {
        for p in node.all_parents() {
            if !plan.nodes.contains_key(p) {
                out.push(PlanFinding::DanglingParent { node: key.clone(), parent: p.to_string() });
            }
        }
    }
    if let Some(path) = find_cycle(plan) {
        out.push(PlanFinding::CycleDetected { path });
    }
    if !plan.nodes.is_empty() && plan.nodes.values().all(|n| !n.all_parents().is_empty()) {
        out.push(PlanFinding::NoRoot);
    }
    let children = children_of(plan);
    for (key, node) in &plan.nodes {
        let exported: BTreeSet<&str> = ancestors(plan, key)
            .iter()
            .filter_map(|a| plan.nodes.get(a))
            .flat_map(|n| n.expected_schema.keys().map(String::as_str))
            .collect();
        for k in &node.context_keys {
            if !exported.contains(k.as_str()) {
                out.push(PlanFinding::UnsatisfiedContextKey { node: key.clone(), key: k.clone() });
            }
        }
        let is_leaf = children.get(key.as_str()).map_or(true, |c| c.is_empty());
        if is_leaf && node.expected_schema.is_empty() {
            out.push(PlanFinding::EmptySchema { node: key.clone() });
        }
    }
    out
}

fn children_of(plan: &RadPlan) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (key, node) in &plan.nodes {
        for p in node.all_parents() {
            if let Some((pk, _)) = plan.nodes.get_key_value(p) {
                out.entry(pk.as_str()).or_default().insert(key.as_str());
            }
        }
    }
    out
}

/// All transitive ancestors of `id` (excluding `id` unless it is on a cycle),
/// ignoring dangling references.
pub fn ancestors(plan: &RadPlan, id: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<&str> = plan.nodes.get(id).map(|n| n.all_parents()).unwrap_or_default();
    while let Some(p) = stack.pop() {
        if let Some(n) = plan.nodes.get(p) {
            if out.insert(p.to_string()) {
                stack.extend(n.all_parents());
            }
        }
    }
    out
}

/// All transitive descendants of `id`.
pub fn descendants(plan: &RadPlan, id: &str) -> BTreeSet<String> {
    let children = children_of(plan);
    let mut out = BTreeSet::new();
    let mut stack: Vec<&str> = vec![id];
    while let Some(n) = stack.pop() {
        for c in children.get(n).into_iter().flatten() {
            if out.insert(c.to_string()) {
                stack.push(c);
            }
        }
    }
    out
}

/// First cycle found by a depth-first walk in key order, reported as a closed
/// path (`[A, B, A]`). Edges run parent → child.
fn find_cycle(plan: &RadPlan) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let children = children_of(plan);
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();

    fn visit<'a>(
        n: &'a str,
        children: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(n, Mark::Open);
        path.push(n);
        for &c in children.get(n).into_iter().flatten() {
            match marks.get(c) {
                Some(Mark::Open) => {
                    let start = path.iter().position(|&p| p == c).unwrap_or(0);
                    let mut cyc: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                    cyc.push(c.to_string());
                    return Some(cyc);
                }
                Some(Mark::Done) => {}
                None => {
                    if let Some(c) = visit(c, children, marks, path) {
                        return Some(c);
                    }
                }
            }
        }
        path.pop();
        marks.insert(n, Mark::Done);
        None
    }

    for key in plan.nodes.keys() {
        if !marks.contains_key(key.as_str()) {
            let mut path = Vec::new();
            if let Some(c) = visit(key, &children, &mut marks, &mut path) {
                return Some(c);
            }
        }
    }
    None
}

/// Kahn's algorithm with a sorted ready set, so independent nodes always
/// come out in lexicographic order. Dangling parents are ignored.
pub fn topo_order(plan: &RadPlan) -> Result<Vec<String>, PlanError> {
    Ok(topo_levels(plan)?.into_iter().flatten().collect())
}

/// Nodes grouped into waves: every node's parents sit in earlier waves, and
/// nodes within a wave are independent. Flattening gives [`topo_order`].
pub fn topo_levels(plan: &RadPlan) -> Result<Vec<Vec<String>>, PlanError> {
    let children = children_of(plan);
    let mut indeg: BTreeMap<&str, usize> = plan
        .nodes
        .iter()
        .map(|(k, n)| (k.as_str(), n.all_parents().iter().filter(|p| plan.nodes.contains_key(**p)).count()))
        .collect();
    let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    let mut levels = Vec::new();
    let mut placed = 0;
    while !ready.is_empty() {
        let wave: Vec<&str> = std::mem::take(&mut ready).into_iter().collect();
        for n in &wave {
            for c in children.get(n).into_iter().flatten() {
                let d = indeg.get_mut(c).expect("child is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        placed += wave.len();
        levels.push(wave.into_iter().map(String::from).collect());
    }
    if placed != plan.nodes.len() {
        return Err(PlanError::Cycle(find_cycle(plan).unwrap_or_default()));
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SliceError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("upstream output '{0}' is missing")]
    MissingUpstream(String),
}

/// Everything an executor for one node is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeContext {
    pub node_id: String,
    pub description: String,
    /// Exactly the node's `context_keys`, taken from upstream outputs.
    pub facts: FactMap,
    /// Registry rules whose scope matches the node's role tags.
    pub rules: Vec<HarnessRule>,
    pub expected_schema: BTreeMap<String, FieldType>,
    pub role_tags: BTreeSet<String>,
}

impl NodeContext {
    /// Rules the node itself is judged by: in the slice, aimed at one of its
    /// output fields, and evaluable from its inputs and outputs alone. Other
    /// slice rules are left to the global review.
    pub fn applicable_rules<'a>(&'a self, reg: &'a HarnessRegistry) -> impl Iterator<Item = &'a HarnessRule> + 'a {
        self.rules.iter().filter(move |r| {
            self.expected_schema.contains_key(&r.target_field)
                && r.free_vars().iter().all(|v| {
                    reg.constants.contains_key(v) || self.facts.contains_key(v) || self.expected_schema.contains_key(v)
                })
        })
    }

    /// Prompt-safe view: rule text without any constant values.
    pub fn to_prompt_json(&self) -> serde_json::Value {
        let rules: Vec<serde_json::Value> = self
            .rules
            .iter()
            .map(|r| {
                serde_json::json!({
                    "id": r.id,
                    "description": r.description,
                    "target_field": r.target_field,
                    "condition": r.condition,
                    "severity": r.severity,
                })
            })
            .collect();
        serde_json::json!({
            "node_id": self.node_id,
            "description": self.description,
            "facts": self.facts,
            "rules": rules,
            "expected_schema": self.expected_schema,
        })
    }
}

/// Builds the firewalled context for `node_id`. Only `context_keys` are
/// copied out of `upstream`; every other upstream field stays invisible.
pub fn context_slice(
    plan: &RadPlan,
    node_id: &str,
    upstream: &FactMap,
    reg: &HarnessRegistry,
) -> Result<NodeContext, SliceError> {
    let node = plan.nodes.get(node_id).ok_or_else(|| SliceError::UnknownNode(node_id.to_string()))?;
    let mut facts = FactMap::new();
    for k in &node.context_keys {
        let v: &Value = upstream.get(k).ok_or_else(|| SliceError::MissingUpstream(k.clone()))?;
        facts.insert(k.clone(), v.clone());
    }
    Ok(NodeContext {
        node_id: node.id.clone(),
        description: node.description.clone(),
        facts,
        rules: reg.rules.iter().filter(|r| r.in_scope(&node.role_tags)).cloned().collect(),
        expected_schema: node.expected_schema.clone(),
        role_tags: node.role_tags.clone(),
    })
}

/// A problem: statement, plan and the values the scripted world supplies for
/// fields no rule constrains (sensor readings and the like).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    #[serde(default)]
    pub statement: String,
    pub plan: RadPlan,
    #[serde(default)]
    pub givens: FactMap,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let root: serde_json::Value = serde_json::from_str(text).map_err(|e| PlanError::Json(e.to_string()))?;
        let plan_text = root
            .get("plan")
            .ok_or_else(|| PlanError::Schema("problem has no \"plan\"".into()))?
            .to_string();
        let plan = parse_plan(&plan_text)?;
        let name = root
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| PlanError::Schema("problem has no \"name\"".into()))?
            .to_string();
        let statement = root.get("statement").and_then(|v| v.as_str()).unwrap_or_default().to_string();
        let givens = match root.get("givens") {
            None => FactMap::new(),
            Some(g) => serde_json::from_value(g.clone()).map_err(|e| PlanError::Schema(format!("givens: {e}")))?,
        };
        Ok(ProblemSpec { name, statement, plan, givens })
    }

    /// Adds a root node that exports `noise` as outputs nobody asked for.
    /// Used to check that unrelated upstream data never leaks into slices.
    pub fn with_noise(mut self, node_id: &str, noise: &FactMap) -> Self {
        let mut node = RadNode::new(node_id);
        node.description = "Report ambient cabin and fleet telemetry".into();
        node.role_tags.insert("telemetry".into());
        for (k, v) in noise {
            let ty = match v {
                Value::Bool(_) => FieldType::Bool,
                Value::Num(_) => FieldType::Float,
                Value::Text(_) => FieldType::Text,
            };
            node.expected_schema.insert(k.clone(), ty);
            self.givens.insert(k.clone(), v.clone());
        }
        self.plan.nodes.insert(node_id.to_string(), node);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::load_registry_str;

    const LISTING: &str = include_str!("../assets/plans/ad_listing.json");
    const AD: &str = include_str!("../assets/harnesses/ad_degradation.yaml");

    fn node(id: &str, parent: Option<&str>, ctx: &[&str], out: &[&str]) -> RadNode {
        let mut n = RadNode::new(id);
        n.parent_id = parent.map(String::from);
        n.context_keys = ctx.iter().map(|s| s.to_string()).collect();
        n.expected_schema = out.iter().map(|s| (s.to_string(), FieldType::Float)).collect();
        n
    }

    fn plan(nodes: Vec<RadNode>) -> RadPlan {
        RadPlan {
            nodes: nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            duplicate_keys: vec![],
        }
    }

    #[test]
    fn listing_plan_is_valid_and_ordered() {
        let p = parse_plan(LISTING).unwrap();
        assert!(validate_plan(&p).is_empty());
        assert_eq!(topo_order(&p).unwrap(), vec!["Vision_Node", "Kinematics_Node"]);
    }

    #[test]
    fn strict_root_shape() {
        assert_eq!(parse_plan("[{\"nodes\": {}}]"), Err(PlanError::NotAnObject("a list")));
        assert_eq!(parse_plan("{\"steps\": {}}"), Err(PlanError::MissingNodes));
        assert!(matches!(parse_plan("{\"nodes\": []}"), Err(PlanError::Schema(_))));
        assert!(matches!(parse_plan("{\"nodes\": "), Err(PlanError::Json(_))));
    }

    #[test]
    fn duplicate_keys_are_reported() {
        let p = parse_plan(r#"{"nodes": {"A": {"id": "A", "expected_schema": {"x": "float"}}, "A": {"id": "A", "expected_schema": {"x": "float"}}}}"#).unwrap();
        assert_eq!(validate_plan(&p), vec![PlanFinding::DuplicateId { id: "A".into() }]);
    }

    #[test]
    fn cycle_path() {
        let p = plan(vec![node("A", Some("B"), &[], &["a"]), node("B", Some("A"), &[], &["b"]), node("R", None, &[], &["r"])]);
        let f = validate_plan(&p);
        assert!(f.contains(&PlanFinding::CycleDetected { path: vec!["A".into(), "B".into(), "A".into()] }), "{f:?}");
        assert!(matches!(topo_order(&p), Err(PlanError::Cycle(_))));
    }

    #[test]
    fn dangling_and_unsatisfied() {
        let p = plan(vec![node("A", None, &["x"], &["a"]), node("B", Some("Z"), &[], &["b"])]);
        let f = validate_plan(&p);
        assert!(f.contains(&PlanFinding::UnsatisfiedContextKey { node: "A".into(), key: "x".into() }));
        assert!(f.contains(&PlanFinding::DanglingParent { node: "B".into(), parent: "Z".into() }));
    }

    #[test]
    fn transitive_context_keys_are_allowed() {
        let p = plan(vec![node("A", None, &[], &["a"]), node("B", Some("A"), &["a"], &["b"]), node("C", Some("B"), &["a", "b"], &["c"])]);
        assert!(validate_plan(&p).is_empty());
        assert_eq!(ancestors(&p, "C"), ["A".to_string(), "B".to_string()].into());
        assert_eq!(descendants(&p, "A"), ["B".to_string(), "C".to_string()].into());
    }

    #[test]
    fn lexicographic_ties() {
        let p = plan(vec![node("B", None, &[], &["b"]), node("A", None, &[], &["a"])]);
        assert_eq!(topo_order(&p).unwrap(), vec!["A", "B"]);
        let single = plan(vec![node("Only", None, &[], &["o"])]);
        assert_eq!(topo_order(&single).unwrap(), vec!["Only"]);
    }

    #[test]
    fn levels_group_independent_nodes() {
        let p = plan(vec![
            node("R", None, &[], &["r"]),
            node("Y", Some("R"), &[], &["y"]),
            node("X", Some("R"), &[], &["x"]),
        ]);
        assert_eq!(topo_levels(&p).unwrap(), vec![vec!["R".to_string()], vec!["X".to_string(), "Y".to_string()]]);
    }

    #[test]
    fn slice_is_firewalled() {
        let p = parse_plan(LISTING).unwrap();
        let reg = load_registry_str(AD, "ad").unwrap();
        let up = FactMap::new().with("perception_range_m", 30.0).with("irrelevant_budget", 1e6);
        let ctx = context_slice(&p, "Kinematics_Node", &up, &reg).unwrap();
        assert_eq!(ctx.facts, FactMap::new().with("perception_range_m", 30.0));
        let root = context_slice(&p, "Vision_Node", &up, &reg).unwrap();
        assert!(root.facts.is_empty());
        assert_eq!(
            context_slice(&p, "Kinematics_Node", &FactMap::new(), &reg),
            Err(SliceError::MissingUpstream("perception_range_m".into()))
        );
    }

    #[test]
    fn unscoped_rules_reach_every_node() {
        let p = parse_plan(LISTING).unwrap();
        let mut reg = load_registry_str(AD, "ad").unwrap();
        for r in &mut reg.rules {
            r.scope = None;
        }
        let up = FactMap::new().with("perception_range_m", 30.0);
        let ctx = context_slice(&p, "Kinematics_Node", &up, &reg).unwrap();
        assert_eq!(ctx.rules.len(), 2);
    }

    #[test]
    fn scoped_slice_and_applicability() {
        let p = parse_plan(LISTING).unwrap();
        let reg = load_registry_str(AD, "ad").unwrap();
        let up = FactMap::new().with("perception_range_m", 30.0);
        let mut p2 = p.clone();
        p2.nodes.get_mut("Kinematics_Node").unwrap().role_tags.insert("kinematics".into());
        let ctx = context_slice(&p2, "Kinematics_Node", &up, &reg).unwrap();
        let ids: Vec<&str> = ctx.applicable_rules(&reg).map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["REAR_COLLISION_PREVENTION_DECELERATION"]);
        let prompt = ctx.to_prompt_json().to_string();
        assert!(!prompt.contains("max_deceleration_limit\":"));
        assert!(!prompt.contains("2.0"));
    }

    #[test]
    fn noise_injection_adds_a_root() {
        let text = include_str!("../assets/problems/ad_degradation.json");
        let prob = ProblemSpec::from_json(text).unwrap();
        let noisy = prob.with_noise("Ambient_Node", &FactMap::new().with("cabin_temp_c", 22.0));
        assert!(validate_plan(&noisy.plan).is_empty());
        assert_eq!(topo_order(&noisy.plan).unwrap()[0], "Ambient_Node");
    }
}
