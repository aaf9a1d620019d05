//! Satisfiability over declared decision variables.
//!
//! The oracle is an exhaustive grid scan at each variable's declared
//! resolution, followed by one level of refinement at a tenth of the
//! resolution around near-misses (points failing exactly one rule next to a
//! point where that rule holds). On top of it sit the minimal conflict set
//! search, the resolution menu and the evidence report.

mod evidence;
mod menu;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Program;
use crate::facts::{FactMap, Layered, Value};
use crate::harness::{round_to, DecisionVariable, HarnessRegistry, HarnessRule};
use crate::uai::{assert_rule, Status};

pub use evidence::{evidence_package, BoundLine, EvidencePackage, ProbeLine};
pub use menu::{apply_resolution, resolution_menu, OptionKind, ResolutionError, ResolutionOption};

/// Largest grid the oracle agrees to scan.
pub const MAX_GRID_POINTS: u64 = 50_000_000;
const BLOCK: usize = 1 << 16;
const CHUNK: usize = 4096;
const ALL_PASS: u8 = u8::MAX;
const MULTI_FAIL: u8 = u8::MAX - 1;
const REFINE_STEPS: usize = 10;
/// Runs this short are evaluated point by point.
const MIN_RUN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Satisfiability {
    #[serde(rename = "SAT")]
    Sat,
    #[serde(rename = "UNSAT")]
    Unsat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub verdict: Satisfiability,
    pub witness: Option<FactMap>,
    pub scanned_points: u64,
    pub refinement_depth: u32,
}

impl FeasibilityResult {
    pub fn is_sat(&self) -> bool {
        self.verdict == Satisfiability::Sat
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParadoxError {
    #[error("variable '{0}' is neither declared, fixed nor a constant")]
    UndeclaredVariable(String),
    #[error("unknown rule '{0}'")]
    UnknownRule(String),
    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: u64, limit: u64 },
    #[error("at most 253 rules can be analysed at once, got {0}")]
    TooManyRules(usize),
    #[error("witness failed re-verification: {0}")]
    WitnessRejected(String),
    #[error("rule set is satisfiable")]
    NotUnsat,
    #[error("run status is {0}, not FAILED_PARADOX")]
    WrongStatus(String),
}

/// A compiled scan problem: rules in registry order, variables in
/// declaration order (the first one is the outermost loop).
struct Problem<'a> {
    rules: Vec<&'a HarnessRule>,
    vars: Vec<&'a DecisionVariable>,
    programs: Vec<Program>,
}

impl<'a> Problem<'a> {
    fn build(reg: &'a HarnessRegistry, subset: &BTreeSet<String>, fixed: &FactMap) -> Result<Self, ParadoxError> {
        for id in subset {
            if reg.rule(id).is_none() {
                return Err(ParadoxError::UnknownRule(id.clone()));
            }
        }
        let rules: Vec<&HarnessRule> = reg.rules.iter().filter(|r| subset.contains(&r.id)).collect();
        if rules.len() >= MULTI_FAIL as usize {
            return Err(ParadoxError::TooManyRules(rules.len()));
        }
        let mut referenced = BTreeSet::new();
        for r in &rules {
            for v in r.free_vars() {
                if fixed.contains_key(&v) {
                    continue;
                }
                if reg.variable(&v).is_some() {
                    referenced.insert(v);
                } else if !reg.constants.contains_key(&v) {
                    return Err(ParadoxError::UndeclaredVariable(v));
                }
            }
        }
        let vars: Vec<&DecisionVariable> = reg.variables.iter().filter(|v| referenced.contains(&v.name)).collect();
        let names: Vec<&str> = vars.iter().map(|v| v.name.as_str()).collect();
        let layers = [fixed, &reg.constants];
        let env = Layered(&layers);
        let programs = rules.iter().map(|r| Program::compile(r.expr(), &names, &env)).collect();
        Ok(Problem { rules, vars, programs })
    }

    /// `ALL_PASS`, the index of the only failing rule, or `MULTI_FAIL`.
    fn status(&self, x: &[f64]) -> u8 {
        let mut failed = None;
        for (i, p) in self.programs.iter().enumerate() {
            if !matches!(p.holds(x), Ok(true)) {
                if failed.is_some() {
                    return MULTI_FAIL;
                }
                failed = Some(i as u8);
            }
        }
        failed.unwrap_or(ALL_PASS)
    }

    /// [`status`](Self::status) shared by every point of a box, when
    /// interval bounds settle it.
    fn box_status(&self, b: &[(f64, f64)]) -> Option<u8> {
        let mut failed = None;
        let mut open = false;
        for (i, p) in self.programs.iter().enumerate() {
            match p.decide(b) {
                Some(true) => {}
                Some(false) => {
                    if failed.is_some() {
                        return Some(MULTI_FAIL);
                    }
                    failed = Some(i as u8);
                }
                None => open = true,
            }
        }
        if open {
            None
        } else {
            Some(failed.unwrap_or(ALL_PASS))
        }
    }

    /// Statuses of the run of points starting at `coords` along the last
    /// axis. Whole stretches are settled by interval bounds where possible
    /// and split in half where not.
    fn fill_run(&self, grid: &Grid, coords: &mut [usize], out: &mut [u8]) {
        let d = coords.len();
        let mut x = vec![0f64; d];
        if d == 0 || out.len() <= MIN_RUN {
            grid.fill(coords, &mut x);
            let last = coords.to_vec();
            for s in out.iter_mut() {
                *s = self.status(&x);
                grid.advance(coords, &mut x);
            }
            coords.copy_from_slice(&last);
            return;
        }
        let inner = d - 1;
        let first = coords[inner];
        let b: Vec<(f64, f64)> = (0..d)
            .map(|k| {
                if k == inner {
                    (grid.values[k][first], grid.values[k][first + out.len() - 1])
                } else {
                    let v = grid.values[k][coords[k]];
                    (v, v)
                }
            })
            .collect();
        if let Some(s) = self.box_status(&b) {
            out.fill(s);
            return;
        }
        let half = out.len() / 2;
        let (left, right) = out.split_at_mut(half);
        self.fill_run(grid, coords, left);
        coords[inner] = first + half;
        self.fill_run(grid, coords, right);
        coords[inner] = first;
    }

    fn rule_holds(&self, r: usize, x: &[f64]) -> bool {
        matches!(self.programs[r].holds(x), Ok(true))
    }

    fn witness(&self, x: &[f64]) -> FactMap {
        let mut w = FactMap::new();
        for (v, &val) in self.vars.iter().zip(x) {
            w.insert(v.name.clone(), val);
        }
        w
    }
}

struct Grid {
    dims: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl Grid {
    fn new(vars: &[&DecisionVariable]) -> Result<Self, ParadoxError> {
        let dims: Vec<usize> = vars.iter().map(|v| v.steps()).collect();
        let points = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64)).unwrap_or(u64::MAX);
        if points > MAX_GRID_POINTS {
            return Err(ParadoxError::GridTooLarge {
                points,
                limit: MAX_GRID_POINTS,
            });
        }
        let values = vars.iter().map(|v| (0..v.steps()).map(|i| v.value_at(i)).collect()).collect();
        Ok(Grid { dims, values })
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn decode(&self, mut idx: usize, coords: &mut [usize]) {
        for d in (0..self.dims.len()).rev() {
            coords[d] = idx % self.dims[d];
            idx /= self.dims[d];
        }
    }

    fn encode(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.dims).fold(0, |acc, (&c, &n)| acc * n + c)
    }

    fn fill(&self, coords: &[usize], x: &mut [f64]) {
        for d in 0..coords.len() {
            x[d] = self.values[d][coords[d]];
        }
    }

    /// Odometer step, last dimension fastest.
    fn advance(&self, coords: &mut [usize], x: &mut [f64]) {
        for d in (0..coords.len()).rev() {
            coords[d] += 1;
            if coords[d] < self.dims[d] {
                x[d] = self.values[d][coords[d]];
                return;
            }
            coords[d] = 0;
            x[d] = self.values[d][0];
        }
    }
}

/// Memoizing front end for [`feasible_uncached`]. Results are keyed by the
/// printed rule expressions, the effective value of every non-scanned name,
/// and the scanned domains, so two registries that differ only in unrelated
/// metadata share entries.
#[derive(Default)]
pub struct Oracle {
    cache: Mutex<HashMap<String, FeasibilityResult>>,
}

impl Oracle {
    pub fn new() -> Self {
        Oracle::default()
    }

    /// Process-wide instance used by the pipeline.
    pub fn global() -> &'static Oracle {
        static GLOBAL: OnceLock<Oracle> = OnceLock::new();
        GLOBAL.get_or_init(Oracle::new)
    }

    pub fn feasible(
        &self,
        reg: &HarnessRegistry,
        subset: &BTreeSet<String>,
        fixed: &FactMap,
    ) -> Result<FeasibilityResult, ParadoxError> {
        let key = cache_key(reg, subset, fixed)?;
        if let Some(hit) = self.cache.lock().expect("oracle cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let result = feasible_uncached(reg, subset, fixed)?;
        self.cache.lock().expect("oracle cache poisoned").insert(key, result.clone());
        Ok(result)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("oracle cache poisoned").len()
    }
}

fn cache_key(reg: &HarnessRegistry, subset: &BTreeSet<String>, fixed: &FactMap) -> Result<String, ParadoxError> {
    let mut key = String::new();
    let mut names = BTreeSet::new();
    for id in subset {
        let r = reg.rule(id).ok_or_else(|| ParadoxError::UnknownRule(id.clone()))?;
        let _ = write!(key, "{}|", r.expr());
        names.extend(r.free_vars());
    }
    // Declaration order decides scan order, so it is part of the key.
    for v in &reg.variables {
        if names.contains(&v.name) && !fixed.contains_key(&v.name) {
            let _ = write!(key, "@{}[{:?},{:?},{:?},{}]", v.name, v.min, v.max, v.resolution, v.integer);
        }
    }
    for n in &names {
        match fixed.get(n).or_else(|| reg.constants.get(n)) {
            Some(Value::Num(x)) => {
                let _ = write!(key, "#{n}={:x}", x.to_bits());
            }
            Some(other) => {
                let _ = write!(key, "#{n}={other:?}");
            }
            None => {}
        }
    }
    Ok(key)
}

/// Uses the process-wide [`Oracle`].
pub fn feasible(reg: &HarnessRegistry, subset: &BTreeSet<String>, fixed: &FactMap) -> Result<FeasibilityResult, ParadoxError> {
    Oracle::global().feasible(reg, subset, fixed)
}

/// Grid scan plus near-miss refinement. Names in `fixed` take precedence over
/// registry constants and are never scanned.
pub fn feasible_uncached(
    reg: &HarnessRegistry,
    subset: &BTreeSet<String>,
    fixed: &FactMap,
) -> Result<FeasibilityResult, ParadoxError> {
    let prob = Problem::build(reg, subset, fixed)?;
    let grid = Grid::new(&prob.vars)?;
    let d = prob.vars.len();
    let total = grid.len();

    // Pass 1: per-point status, block by block so the first witness in scan
    // order is found without scanning the whole grid.
    let mut status = vec![0u8; total];
    let mut scanned = 0u64;
    for start in (0..total).step_by(BLOCK) {
        let end = (start + BLOCK).min(total);
        status[start..end].par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let mut coords = vec![0usize; d];
            let mut pos = 0;
            while pos < chunk.len() {
                grid.decode(start + ci * CHUNK + pos, &mut coords);
                let row_left = if d == 0 { 1 } else { grid.dims[d - 1] - coords[d - 1] };
                let n = row_left.min(chunk.len() - pos);
                prob.fill_run(&grid, &mut coords, &mut chunk[pos..pos + n]);
                pos += n;
            }
        });
        scanned += (end - start) as u64;
        if let Some(p) = status[start..end].iter().position(|&s| s == ALL_PASS) {
            let mut coords = vec![0usize; d];
            let mut x = vec![0f64; d];
            grid.decode(start + p, &mut coords);
            grid.fill(&coords, &mut x);
            return sat(reg, &prob, fixed, &x, scanned, 0);
        }
    }

    if prob.vars.iter().all(|v| v.integer) {
        return Ok(unsat(scanned, 0));
    }

    // Pass 2: near-miss cells, in index order.
    let cells: Vec<usize> = (0..total)
        .into_par_iter()
        .map_init(
            || Scratch::new(d),
            |sc, i| (status[i] < MULTI_FAIL && near_miss(&prob, &grid, &status, i, sc)).then_some(i),
        )
        .flatten()
        .collect();
    if cells.is_empty() {
        return Ok(unsat(scanned, 0));
    }
    for batch in cells.chunks(64) {
        let found: Vec<(u64, Option<Vec<f64>>)> = batch.par_iter().map(|&i| refine_cell(&prob, &grid, i)).collect();
        for (n, w) in found {
            scanned += n;
            if let Some(x) = w {
                return sat(reg, &prob, fixed, &x, scanned, 1);
            }
        }
    }
    Ok(unsat(scanned, 1))
}

fn unsat(scanned: u64, depth: u32) -> FeasibilityResult {
    FeasibilityResult {
        verdict: Satisfiability::Unsat,
        witness: None,
        scanned_points: scanned,
        refinement_depth: depth,
    }
}

fn sat(
    reg: &HarnessRegistry,
    prob: &Problem,
    fixed: &FactMap,
    x: &[f64],
    scanned: u64,
    depth: u32,
) -> Result<FeasibilityResult, ParadoxError> {
    let witness = prob.witness(x);
    let layers = [&witness, fixed, &reg.constants];
    let env = Layered(&layers);
    for r in &prob.rules {
        let v = assert_rule(r, &env);
        if v.status != Status::Pass {
            return Err(ParadoxError::WitnessRejected(v.trace));
        }
    }
    Ok(FeasibilityResult {
        verdict: Satisfiability::Sat,
        witness: Some(witness),
        scanned_points: scanned,
        refinement_depth: depth,
    })
}

/// Per-thread buffers for [`near_miss`].
struct Scratch {
    coords: Vec<usize>,
    offset: Vec<i64>,
    nc: Vec<usize>,
    x: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            coords: vec![0; d],
            offset: vec![-1; d],
            nc: vec![0; d],
            x: vec![0.0; d],
        }
    }
}

/// True when point `i` fails exactly one rule that holds at some grid
/// neighbour (including diagonals).
fn near_miss(prob: &Problem, grid: &Grid, status: &[u8], i: usize, sc: &mut Scratch) -> bool {
    let r = status[i];
    let d = grid.dims.len();
    let Scratch { coords, offset, nc, x } = sc;
    grid.decode(i, coords);
    offset.fill(-1);
    loop {
        if offset.iter().any(|&o| o != 0) {
            let mut inside = true;
            for k in 0..d {
                let c = coords[k] as i64 + offset[k];
                if c < 0 || c >= grid.dims[k] as i64 {
                    inside = false;
                    break;
                }
                nc[k] = c as usize;
            }
            if inside {
                let s = status[grid.encode(nc)];
                let passes = match s {
                    ALL_PASS => true,
                    MULTI_FAIL => {
                        grid.fill(nc, x);
                        prob.rule_holds(r as usize, x)
                    }
                    other => other != r,
                };
                if passes {
                    return true;
                }
            }
        }
        // Next offset in {-1, 0, 1}^d.
        let mut k = d;
        loop {
            if k == 0 {
                return false;
            }
            k -= 1;
            if offset[k] < 1 {
                offset[k] += 1;
                break;
            }
            offset[k] = -1;
        }
    }
}

/// Scans the box of plus or minus one resolution step around point `i` at a
/// tenth of the resolution. Integer variables stay on their grid value.
fn refine_cell(prob: &Problem, grid: &Grid, i: usize) -> (u64, Option<Vec<f64>>) {
    let d = grid.dims.len();
    let mut coords = vec![0usize; d];
    grid.decode(i, &mut coords);
    let axes: Vec<Vec<f64>> = prob
        .vars
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let centre = grid.values[k][coords[k]];
            if v.integer {
                return vec![centre];
            }
            let step = v.resolution / REFINE_STEPS as f64;
            (0..=2 * REFINE_STEPS)
                .map(|j| round_to(centre - v.resolution + j as f64 * step, step))
                .filter(|x| *x >= v.min - 1e-12 && *x <= v.max + 1e-12)
                .collect()
        })
        .collect();
    let total: u64 = axes.iter().map(|a| a.len() as u64).product();
    let bounds: Vec<(f64, f64)> = axes.iter().map(|a| (a[0], a[a.len() - 1])).collect();
    if prob.box_status(&bounds).is_some_and(|s| s != ALL_PASS) {
        return (total, None);
    }
    let mut idx = vec![0usize; d];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut n = 0u64;
    loop {
        n += 1;
        if prob.status(&x) == ALL_PASS {
            return (n, Some(x));
        }
        let mut k = d;
        loop {
            if k == 0 {
                return (n, None);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                x[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = axes[k][0];
        }
    }
}

/// Artifact entries the oracle should treat as given: referenced by some
/// rule, not a decision variable, and not text.
pub fn fixed_inputs(reg: &HarnessRegistry, artifact: &FactMap) -> FactMap {
    let referenced: BTreeSet<String> = reg.rules.iter().flat_map(|r| r.free_vars()).collect();
    artifact
        .iter()
        .filter(|(k, v)| referenced.contains(*k) && reg.variable(k).is_none() && !matches!(v, Value::Text(_)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Smallest unsatisfiable subset of `in_scope`, searched by increasing size
/// with ties broken by lexicographic rule id. The result is checked to be
/// minimal: dropping any one rule makes it satisfiable.
pub fn minimal_unsat_subset(
    reg: &HarnessRegistry,
    in_scope: &BTreeSet<String>,
    fixed: &FactMap,
) -> Result<BTreeSet<String>, ParadoxError> {
    minimal_unsat_subset_with(Oracle::global(), reg, in_scope, fixed)
}

pub fn minimal_unsat_subset_with(
    oracle: &Oracle,
    reg: &HarnessRegistry,
    in_scope: &BTreeSet<String>,
    fixed: &FactMap,
) -> Result<BTreeSet<String>, ParadoxError> {
    if oracle.feasible(reg, in_scope, fixed)?.is_sat() {
        return Err(ParadoxError::NotUnsat);
    }
    let ids: Vec<&String> = in_scope.iter().collect();
    for k in 1..=ids.len() {
        let mut pick: Vec<usize> = (0..k).collect();
        loop {
            let subset: BTreeSet<String> = pick.iter().map(|&i| ids[i].clone()).collect();
            if !oracle.feasible(reg, &subset, fixed)?.is_sat() {
                for drop in &subset {
                    let mut smaller = subset.clone();
                    smaller.remove(drop);
                    if !oracle.feasible(reg, &smaller, fixed)?.is_sat() {
                        // Unreachable when every smaller size was SAT; kept
                        // as the explicit minimality check.
                        return Err(ParadoxError::NotUnsat);
                    }
                }
                return Ok(subset);
            }
            if !next_combination(&mut pick, ids.len()) {
                break;
            }
        }
    }
    Err(ParadoxError::NotUnsat)
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::load_registry_str;

    const AD: &str = include_str!("../../assets/harnesses/ad_degradation.yaml");
    const AD_PASS: &str = include_str!("../../assets/harnesses/ad_degradation_pass.yaml");

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ad_paradox_is_unsat() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let r = feasible_uncached(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        assert_eq!(r.verdict, Satisfiability::Unsat);
        assert_eq!(r.scanned_points, 131);
        assert_eq!(r.refinement_depth, 0);
    }

    #[test]
    fn ad_pass_witness_is_84() {
        let reg = load_registry_str(AD_PASS, "ad").unwrap();
        let r = feasible_uncached(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        assert_eq!(r.witness, Some(FactMap::new().with("vehicle_speed_kmph_t5", 84.0)));
    }

    #[test]
    fn fixed_values_override_constants() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let fixed = FactMap::new().with("perception_range_limit", 90.0);
        assert!(feasible_uncached(&reg, &reg.rule_ids(), &fixed).unwrap().is_sat());
        let v = FactMap::new().with("vehicle_speed_kmph_t5", 70.0);
        assert!(!feasible_uncached(&reg, &reg.rule_ids(), &v).unwrap().is_sat());
    }

    #[test]
    fn undeclared_and_unknown() {
        let mut reg = load_registry_str(AD, "ad").unwrap();
        reg.variables.clear();
        assert_eq!(
            feasible_uncached(&reg, &reg.rule_ids(), &FactMap::new()),
            Err(ParadoxError::UndeclaredVariable("vehicle_speed_kmph_t5".into()))
        );
        assert!(matches!(feasible_uncached(&reg, &ids(&["X"]), &FactMap::new()), Err(ParadoxError::UnknownRule(_))));
    }

    #[test]
    fn refinement_finds_sub_resolution_windows() {
        let mut reg = HarnessRegistry::new("w", "1");
        reg.add_rule(HarnessRule::new("LO", "x", "x >= 1.04", crate::harness::Severity::Critical).unwrap()).unwrap();
        reg.add_rule(HarnessRule::new("HI", "x", "x <= 1.06", crate::harness::Severity::Critical).unwrap()).unwrap();
        reg.add_variable(DecisionVariable::new("x", 0.0, 2.0, 0.1, false)).unwrap();
        let r = feasible_uncached(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        assert_eq!(r.refinement_depth, 1);
        assert_eq!(r.witness, Some(FactMap::new().with("x", 1.04)));
    }

    #[test]
    fn ad_mus_has_both_rules() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let mus = minimal_unsat_subset(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        assert_eq!(mus, reg.rule_ids());
        let pass = load_registry_str(AD_PASS, "ad").unwrap();
        assert_eq!(minimal_unsat_subset(&pass, &pass.rule_ids(), &FactMap::new()), Err(ParadoxError::NotUnsat));
    }

    #[test]
    fn single_rule_conflicts_are_found() {
        let mut reg = HarnessRegistry::new("s", "1");
        reg.add_rule(HarnessRule::new("A", "x", "x > 5", crate::harness::Severity::Critical).unwrap()).unwrap();
        reg.add_rule(HarnessRule::new("B", "x", "x > 50", crate::harness::Severity::Critical).unwrap()).unwrap();
        reg.add_variable(DecisionVariable::new("x", 0.0, 10.0, 1.0, true)).unwrap();
        assert_eq!(minimal_unsat_subset(&reg, &reg.rule_ids(), &FactMap::new()).unwrap(), ids(&["B"]));
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut p = vec![0, 1];
        let mut seen = vec![p.clone()];
        while next_combination(&mut p, 4) {
            seen.push(p.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn cache_distinguishes_fixed_values() {
        let reg = load_registry_str(AD, "ad").unwrap();
        let o = Oracle::new();
        let a = o.feasible(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        let b = o.feasible(&reg, &reg.rule_ids(), &FactMap::new().with("perception_range_limit", 90.0)).unwrap();
        assert_ne!(a.verdict, b.verdict);
        assert_eq!(o.cached_entries(), 2);
        o.feasible(&reg, &reg.rule_ids(), &FactMap::new()).unwrap();
        assert_eq!(o.cached_entries(), 2);
    }
}
