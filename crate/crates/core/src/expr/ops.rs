//! Arithmetic kernel shared by both evaluators.

use super::{BinOp, CmpOp, EvalError, Func};
use crate::facts::Value;

/// Evaluation-time value. Text never flows through arithmetic, so it is
/// rejected when a variable is read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Num(f64),
    Bool(bool),
}

impl Scalar {
    pub fn from_value(v: &Value, name: &str) -> Result<Scalar, EvalError> {
        match v {
            Value::Num(x) => Ok(Scalar::Num(*x)),
            Value::Bool(b) => Ok(Scalar::Bool(*b)),
            Value::Text(_) => Err(EvalError::TypeMismatch {
                op: "read".into(),
                value: format!("{name}: text"),
            }),
        }
    }

    pub fn into_value(self) -> Value {
        match self {
            Scalar::Num(x) => Value::Num(x),
            Scalar::Bool(b) => Value::Bool(b),
        }
    }

    pub fn expect_num(self, op: &str) -> Result<f64, EvalError> {
        match self {
            Scalar::Num(x) => Ok(x),
            Scalar::Bool(b) => Err(mismatch(op, &b.to_string())),
        }
    }

    pub fn expect_bool(self, op: &str) -> Result<bool, EvalError> {
        match self {
            Scalar::Bool(b) => Ok(b),
            Scalar::Num(x) => Err(mismatch(op, &x.to_string())),
        }
    }
}

fn mismatch(op: &str, value: &str) -> EvalError {
    EvalError::TypeMismatch {
        op: op.to_string(),
        value: value.to_string(),
    }
}

fn finite(x: f64, what: &str) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EvalError::Domain(format!("{what} produced a non-finite result")))
    }
}

pub fn neg(v: Scalar) -> Result<f64, EvalError> {
    Ok(-v.expect_num("-")?)
}

#[inline]
pub fn arith(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let r = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            a / b
        }
        BinOp::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(EvalError::Domain(format!("negative base {a} with non-integer exponent {b}")));
            }
            if a == 0.0 && b < 0.0 {
                return Err(EvalError::Domain("zero raised to a negative power".into()));
            }
            a.powf(b)
        }
    };
    finite(r, op.symbol())
}

#[inline]
pub fn call(f: Func, args: &[f64]) -> Result<f64, EvalError> {
    let x = args[0];
    let r = match f {
        Func::Exp => x.exp(),
        Func::Ln | Func::Log10 => {
            if x <= 0.0 {
                return Err(EvalError::Domain(format!("{}({x}) is undefined", f.name())));
            }
            if f == Func::Ln {
                x.ln()
            } else {
                x.log10()
            }
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err(EvalError::Domain(format!("sqrt({x}) is undefined")));
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
        Func::Min => x.min(args[1]),
        Func::Max => x.max(args[1]),
    };
    finite(r, f.name())
}

/// Exact IEEE comparison; `==`/`!=` also accept two booleans.
#[inline]
pub fn compare(op: CmpOp, a: Scalar, b: Scalar) -> Result<bool, EvalError> {
    match (a, b) {
        (Scalar::Num(x), Scalar::Num(y)) => Ok(match op {
            CmpOp::Lt => x < y,
            CmpOp::Le => x <= y,
            CmpOp::Gt => x > y,
            CmpOp::Ge => x >= y,
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
        }),
        (Scalar::Bool(x), Scalar::Bool(y)) => match op {
            CmpOp::Eq => Ok(x == y),
            CmpOp::Ne => Ok(x != y),
            _ => Err(mismatch(op.symbol(), &x.to_string())),
        },
        (Scalar::Bool(x), _) => Err(mismatch(op.symbol(), &x.to_string())),
        (_, Scalar::Bool(y)) => Err(mismatch(op.symbol(), &y.to_string())),
    }
}
