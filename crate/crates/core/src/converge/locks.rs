//! Read-only fields: once verified, a field keeps its value for the rest of
//! the run.

use serde::{Deserialize, Serialize};

use crate::facts::{FactMap, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockEntry {
    pub node_id: String,
    pub field: String,
    pub value: Value,
}

/// Append-only set of `(node, field, value)`. A field is locked at most once
/// per node; later attempts to lock it again are ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LockSet {
    entries: Vec<LockEntry>,
}

impl LockSet {
    pub fn new() -> Self {
        LockSet::default()
    }

    /// Returns true when the entry is new.
    pub fn lock(&mut self, node_id: &str, field: &str, value: Value) -> bool {
        if self.get(node_id, field).is_some() {
            return false;
        }
        self.entries.push(LockEntry {
            node_id: node_id.to_string(),
            field: field.to_string(),
            value,
        });
        true
    }

    pub fn get(&self, node_id: &str, field: &str) -> Option<&Value> {
        self.entries.iter().find(|e| e.node_id == node_id && e.field == field).map(|e| &e.value)
    }

    pub fn is_locked(&self, node_id: &str, field: &str) -> bool {
        self.get(node_id, field).is_some()
    }

    pub fn entries(&self) -> &[LockEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every entry of `self` is also in `later` with the same value.
    pub fn is_subset_of(&self, later: &LockSet) -> bool {
        self.entries.iter().all(|e| later.get(&e.node_id, &e.field) == Some(&e.value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockViolation {
    pub node_id: String,
    pub field: String,
    pub locked: Value,
    pub proposed: Option<Value>,
}

/// Reverts every locked field of `node_id` that the proposal changed or
/// dropped; unlocked fields pass through untouched.
pub fn enforce_locks(proposed: &FactMap, locks: &LockSet, node_id: &str) -> (FactMap, Vec<LockViolation>) {
    let mut out = proposed.clone();
    let mut violations = Vec::new();
    for e in locks.entries().iter().filter(|e| e.node_id == node_id) {
        let p = proposed.get(&e.field);
        if p != Some(&e.value) {
            violations.push(LockViolation {
                node_id: node_id.to_string(),
                field: e.field.clone(),
                locked: e.value.clone(),
                proposed: p.cloned(),
            });
            out.insert(e.field.clone(), e.value.clone());
        }
    }
    (out, violations)
}
