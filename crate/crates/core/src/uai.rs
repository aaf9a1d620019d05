//! The assertion engine: rules in, structured verdicts out.
//!
//! Every verdict carries the evaluated sides of the comparison and a
//! one-line trace such as
//! `FORWARD_COLLISION_PREVENTION_PERCEPTION: stopping=69.44 < limit=30.00 → FAIL`.
//! [`solve_boundary`] finds where a rule flips along one decision variable.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::expr::ops::{self, Scalar};
use crate::expr::{self, CmpOp, EvalError, Program};
use crate::facts::{Env, FactMap, Layered};
use crate::harness::{DecisionVariable, HarnessRegistry, HarnessRule, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rule_id: String,
    pub status: Status,
    pub lhs_value: Option<f64>,
    pub rhs_value: Option<f64>,
    pub comparison: Option<CmpOp>,
    pub boundary: Option<f64>,
    pub trace: String,
    pub severity: Severity,
    pub target_field: String,
    /// Value of the target field when it was numeric and bound.
    pub target_value: Option<f64>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn record(&self) -> VerdictRecord {
        VerdictRecord {
            id: self.rule_id.clone(),
            status: self.status,
            error: (self.status != Status::Pass).then(|| self.trace.clone()),
        }
    }
}

/// Compact review record: `{"id", "status", "error"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn num(x: f64) -> String {
    format!("{x:.2}")
}

fn show(s: Scalar) -> String {
    match s {
        Scalar::Num(x) => num(x),
        Scalar::Bool(b) => b.to_string(),
    }
}

pub fn render_trace(v: &Verdict, rule: &HarnessRule) -> String {
    match (v.status, v.comparison, v.lhs_value, v.rhs_value) {
        (Status::Error, ..) => v.trace.clone(),
        (_, Some(op), Some(l), Some(r)) => format!(
            "{}: {}={} {} {}={} → {}",
            v.rule_id,
            rule.lhs_label(),
            num(l),
            op,
            rule.rhs_label(),
            num(r),
            v.status.as_str()
        ),
        _ => v.trace.clone(),
    }
}

/// Evaluates one rule. Never panics: evaluation problems become `ERROR`
/// verdicts whose trace names the typed error.
pub fn assert_rule(rule: &HarnessRule, facts: &dyn Env) -> Verdict {
    let target_value = facts.lookup(&rule.target_field).and_then(|v| v.as_f64());
    let mut v = Verdict {
        rule_id: rule.id.clone(),
        status: Status::Error,
        lhs_value: None,
        rhs_value: None,
        comparison: None,
        boundary: None,
        trace: String::new(),
        severity: rule.severity,
        target_field: rule.target_field.clone(),
        target_value,
    };
    let result = match rule.expr().as_comparison() {
        Some((op, l, r)) => {
            v.comparison = Some(op);
            eval_scalar(l, facts).and_then(|ls| {
                let rs = eval_scalar(r, facts)?;
                v.lhs_value = num_of(ls);
                v.rhs_value = num_of(rs);
                let ok = ops::compare(op, ls, rs)?;
                Ok((ok, format!("{} {} {}", show(ls), op, show(rs))))
            })
        }
        None => expr::eval(rule.expr(), facts).and_then(|val| match val.as_bool() {
            Some(b) => Ok((b, format!("value={b}"))),
            None => Err(EvalError::TypeMismatch {
                op: "assert".into(),
                value: val.to_string(),
            }),
        }),
    };
    match result {
        Ok((ok, detail)) => {
            v.status = if ok { Status::Pass } else { Status::Fail };
            v.trace = if v.lhs_value.is_some() && v.rhs_value.is_some() {
                render_trace(&v, rule)
            } else {
                format!("{}: {} → {}", rule.id, detail, v.status.as_str())
            };
        }
        Err(e) => {
            v.status = Status::Error;
            v.lhs_value = None;
            v.rhs_value = None;
            v.trace = format!("{}: {} → ERROR", rule.id, e);
        }
    }
    v
}

fn eval_scalar(e: &expr::Expr, facts: &dyn Env) -> Result<Scalar, EvalError> {
    Ok(match expr::eval(e, facts)? {
        crate::facts::Value::Num(x) => Scalar::Num(x),
        crate::facts::Value::Bool(b) => Scalar::Bool(b),
        crate::facts::Value::Text(t) => {
            return Err(EvalError::TypeMismatch {
                op: "compare".into(),
                value: t,
            })
        }
    })
}

fn num_of(s: Scalar) -> Option<f64> {
    match s {
        Scalar::Num(x) => Some(x),
        Scalar::Bool(_) => None,
    }
}

/// Asserts every rule in registry order. With `scope`, only rules whose scope
/// intersects the given tags (or that have no scope) are evaluated.
/// Registry constants sit underneath `facts`.
pub fn assert_all(reg: &HarnessRegistry, facts: &FactMap, scope: Option<&BTreeSet<String>>) -> Vec<Verdict> {
    let layers = [facts, &reg.constants];
    let env = Layered(&layers);
    reg.rules
        .iter()
        .filter(|r| scope.map_or(true, |tags| r.in_scope(tags)))
        .map(|r| assert_rule(r, &env))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// The rule passes for values below the boundary.
    Below,
    /// The rule passes for values above the boundary.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    Monotone,
    Constant,
    NonMonotone,
    EvaluationError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySolution {
    pub boundary: Option<f64>,
    pub pass_side: Option<Side>,
    /// Grid value adjacent to the flip on the passing side.
    pub feasible_value: Option<f64>,
    pub reason: BoundaryReason,
}

impl BoundarySolution {
    fn absent(reason: BoundaryReason) -> Self {
        BoundarySolution {
            boundary: None,
            pass_side: None,
            feasible_value: None,
            reason,
        }
    }
}

const BISECTION_TOL: f64 = 1e-9;

/// Locates where `rule` flips as `target` sweeps `domain`, all other names
/// taken from `facts` (constants included by the caller).
///
/// Truth values are sampled at every grid point of the domain. A single flip
/// is refined by bisection to 1e-9; the returned boundary is the bracket end
/// on the passing side, so a flip that lands exactly on a grid value (as with
/// non-strict comparisons) comes back exact. No flip or several flips leave
/// the boundary absent.
pub fn solve_boundary(rule: &HarnessRule, facts: &dyn Env, target: &str, domain: &DecisionVariable) -> BoundarySolution {
    let prog = Program::compile(rule.expr(), &[target], facts);
    let truth = |x: f64| -> Result<bool, EvalError> { prog.holds(&[x]) };

    let n = domain.steps();
    let mut prev: Option<(f64, bool)> = None;
    let mut flip: Option<((f64, bool), (f64, bool))> = None;
    for i in 0..n {
        let x = domain.value_at(i);
        let t = match truth(x) {
            Ok(t) => t,
            Err(e) => return BoundarySolution::absent(BoundaryReason::EvaluationError(e.to_string())),
        };
        if let Some((px, pt)) = prev {
            if pt != t {
                if flip.is_some() {
                    return BoundarySolution::absent(BoundaryReason::NonMonotone);
                }
                flip = Some(((px, pt), (x, t)));
            }
        }
        prev = Some((x, t));
    }
    let Some(((mut lo, lo_pass), (mut hi, _))) = flip else {
        return BoundarySolution::absent(BoundaryReason::Constant);
    };
    let feasible_value = if lo_pass { lo } else { hi };
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match truth(mid) {
            Ok(t) if t == lo_pass => lo = mid,
            Ok(_) => hi = mid,
            Err(e) => return BoundarySolution::absent(BoundaryReason::EvaluationError(e.to_string())),
        }
    }
    let (boundary, side) = if lo_pass { (lo, Side::Below) } else { (hi, Side::Above) };
    BoundarySolution {
        boundary: Some(boundary),
        pass_side: Some(side),
        feasible_value: Some(feasible_value),
        reason: BoundaryReason::Monotone,
    }
}

/// Fills `boundary` on every non-passing verdict whose target field is a
/// declared decision variable.
pub fn attach_boundaries(reg: &HarnessRegistry, facts: &FactMap, verdicts: &mut [Verdict]) {
    let layers = [facts, &reg.constants];
    let env = Layered(&layers);
    for v in verdicts.iter_mut().filter(|v| v.status == Status::Fail) {
        let (Some(rule), Some(var)) = (reg.rule(&v.rule_id), reg.variable(&v.target_field)) else {
            continue;
        };
        v.boundary = solve_boundary(rule, &env, &var.name, var).boundary;
    }
}
