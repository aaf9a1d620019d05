//! A small, total expression language for harness assertions.
//!
//! Assertions used to be strings handed to a host-language `eval()`. This
//! module replaces that with a closed grammar (see `docs/expression-grammar.md`):
//! numbers, booleans, arithmetic, comparisons, boolean connectives and a fixed
//! set of math functions. Evaluation is pure and every failure is a typed
//! [`EvalError`], never a panic.
//!
//! Two evaluators share the same arithmetic kernel in [`ops`]: the tree walker
//! ([`eval`]) and the slot-compiled [`Program`] used by grid scans. Both give
//! bit-identical results.

mod compiled;
mod lexer;
mod legacy;
pub mod ops;
mod parser;
mod print;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compiled::Program;
pub use legacy::translate_legacy;
pub use parser::parse;
pub use print::print;

use crate::facts::{Env, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Log10,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 7] = [Func::Exp, Func::Ln, Func::Log10, Func::Sqrt, Func::Abs, Func::Min, Func::Max];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Log10 => "log10",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Var(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Expr {
        Expr::Compare(op, Box::new(a), Box::new(b))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    /// Top-level comparison, if the expression is one.
    pub fn as_comparison(&self) -> Option<(CmpOp, &Expr, &Expr)> {
        match self {
            Expr::Compare(op, a, b) => Some((*op, a, b)),
            _ => None,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Bool(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Not(a) => 1 + a.depth(),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                1 + a.depth().max(b.depth())
            }
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

/// Errors raised while turning source text into an [`Expr`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message} (expected one of: {})", expected.join(", "))]
    Syntax {
        offset: usize,
        message: String,
        expected: Vec<String>,
    },
    #[error("{function}() takes {want} argument(s), got {got}")]
    Arity {
        function: String,
        got: usize,
        want: usize,
    },
    #[error("malformed input accessor at offset {offset}")]
    MalformedAccessor { offset: usize },
}

impl ExprError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Syntax { offset, .. } | ExprError::MalformedAccessor { offset } => Some(*offset),
            ExprError::Arity { .. } => None,
        }
    }
}

/// Errors raised while evaluating a well-formed expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("UnboundVariable({0})")]
    UnboundVariable(String),
    #[error("TypeMismatch({op}, {value})")]
    TypeMismatch { op: String, value: String },
    #[error("DomainError({0})")]
    Domain(String),
}

/// Free variables in first-seen order are not needed anywhere; a sorted set
/// keeps reports stable.
pub fn free_vars(expr: &Expr) -> BTreeSet<String> {
    fn walk(e: &Expr, out: &mut BTreeSet<String>) {
        match e {
            Expr::Num(_) | Expr::Bool(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Not(a) => walk(a, out),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
        }
    }
    let mut out = BTreeSet::new();
    walk(expr, &mut out);
    out
}

/// Tree-walking evaluation. `and`/`or` short-circuit.
pub fn eval(expr: &Expr, env: &dyn Env) -> Result<Value, EvalError> {
    use ops::Scalar;
    fn go(e: &Expr, env: &dyn Env) -> Result<Scalar, EvalError> {
        Ok(match e {
            Expr::Num(x) => Scalar::Num(*x),
            Expr::Bool(b) => Scalar::Bool(*b),
            Expr::Var(name) => match env.lookup(name) {
                Some(v) => Scalar::from_value(v, name)?,
                None => return Err(EvalError::UnboundVariable(name.clone())),
            },
            Expr::Neg(a) => Scalar::Num(ops::neg(go(a, env)?)?),
            Expr::Not(a) => Scalar::Bool(!go(a, env)?.expect_bool("not")?),
            Expr::Binary(op, a, b) => {
                let x = go(a, env)?.expect_num(op.symbol())?;
                let y = go(b, env)?.expect_num(op.symbol())?;
                Scalar::Num(ops::arith(*op, x, y)?)
            }
            Expr::Compare(op, a, b) => Scalar::Bool(ops::compare(*op, go(a, env)?, go(b, env)?)?),
            Expr::And(a, b) => {
                if !go(a, env)?.expect_bool("and")? {
                    Scalar::Bool(false)
                } else {
                    Scalar::Bool(go(b, env)?.expect_bool("and")?)
                }
            }
            Expr::Or(a, b) => {
                if go(a, env)?.expect_bool("or")? {
                    Scalar::Bool(true)
                } else {
                    Scalar::Bool(go(b, env)?.expect_bool("or")?)
                }
            }
            Expr::Call(f, args) => {
                let mut xs = [0.0f64; 2];
                for (slot, a) in xs.iter_mut().zip(args) {
                    *slot = go(a, env)?.expect_num(f.name())?;
                }
                Scalar::Num(ops::call(*f, &xs[..args.len()])?)
            }
        })
    }
    go(expr, env).map(Scalar::into_value)
}

/// Parses after rewriting legacy `input.get('x')` accessors.
pub fn parse_assertion(src: &str) -> Result<Expr, ExprError> {
    parse(&translate_legacy(src)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facts::FactMap;

    fn ev(src: &str, facts: &FactMap) -> Result<Value, EvalError> {
        eval(&parse(src).unwrap(), facts)
    }

    #[test]
    fn arithmetic_and_precedence() {
        let f = FactMap::new();
        assert_eq!(ev("1 + 2 * 3", &f), Ok(Value::Num(7.0)));
        assert_eq!(ev("2 ** 3 ** 2", &f), Ok(Value::Num(512.0)));
        assert_eq!(ev("-2 ** 2", &f), Ok(Value::Num(-4.0)));
        assert_eq!(ev("(-2) ** 2", &f), Ok(Value::Num(4.0)));
        assert_eq!(ev("2 ** -1", &f), Ok(Value::Num(0.5)));
        assert_eq!(ev("10 - 4 - 3", &f), Ok(Value::Num(3.0)));
        assert_eq!(ev("12 / 3 / 2", &f), Ok(Value::Num(2.0)));
        assert_eq!(ev("min(3, max(1, 2)) + abs(-4)", &f), Ok(Value::Num(6.0)));
        assert_eq!(ev("log10(1000)", &f), Ok(Value::Num(3.0)));
    }

    #[test]
    fn boolean_connectives() {
        let f = FactMap::new().with("flag", true);
        assert_eq!(ev("not 1 < 2 or flag", &f), Ok(Value::Bool(true)));
        assert_eq!(ev("1 < 2 and 3 < 2", &f), Ok(Value::Bool(false)));
        assert_eq!(ev("flag == true", &f), Ok(Value::Bool(true)));
        // short circuit skips the division by zero
        assert_eq!(ev("false and 1 / 0 > 1", &f), Ok(Value::Bool(false)));
    }

    #[test]
    fn stopping_distance_example() {
        let f = FactMap::new().with("v", 84.0).with("mu", 0.4).with("g", 9.8);
        let v = ev("((v / 3.6) ** 2) / (2 * mu * g)", &f).unwrap().as_f64().unwrap();
        assert!((v - 69.4444).abs() < 1e-3, "{v}");
    }

    #[test]
    fn typed_errors() {
        let f = FactMap::new().with("b", true).with("x", -1.0);
        assert_eq!(ev("y + 1", &f), Err(EvalError::UnboundVariable("y".into())));
        assert!(matches!(ev("b + 1", &f), Err(EvalError::TypeMismatch { .. })));
        assert!(matches!(ev("1 and b", &f), Err(EvalError::TypeMismatch { .. })));
        assert!(matches!(ev("b < 1", &f), Err(EvalError::TypeMismatch { .. })));
        assert!(matches!(ev("ln(x)", &f), Err(EvalError::Domain(_))));
        assert!(matches!(ev("sqrt(x)", &f), Err(EvalError::Domain(_))));
        assert!(matches!(ev("1 / 0", &f), Err(EvalError::Domain(_))));
        assert!(matches!(ev("x ** 0.5", &f), Err(EvalError::Domain(_))));
        assert!(matches!(ev("exp(1000)", &f), Err(EvalError::Domain(_))));
        assert_eq!(ev("x ** 2", &f), Ok(Value::Num(1.0)));
    }

    #[test]
    fn exact_comparisons() {
        let f = FactMap::new();
        assert_eq!(ev("0.1 + 0.2 == 0.3", &f), Ok(Value::Bool(false)));
        assert_eq!(ev("0.5 + 0.25 == 0.75", &f), Ok(Value::Bool(true)));
    }

    #[test]
    fn free_vars_is_a_set() {
        let e = parse("a + b * a < min(c, a)").unwrap();
        let v: Vec<_> = free_vars(&e).into_iter().collect();
        assert_eq!(v, vec!["a", "b", "c"]);
    }

    #[test]
    fn legacy_assertion_parses() {
        let src = "((input.get('vehicle_speed_kmph_t5') / input.get(\"k\")) ** 2) < input.get('limit')";
        let e = parse_assertion(src).unwrap();
        let v: Vec<_> = free_vars(&e).into_iter().collect();
        assert_eq!(v, vec!["k", "limit", "vehicle_speed_kmph_t5"]);
    }
}
