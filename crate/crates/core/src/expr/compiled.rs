//! Slot-indexed form of an [`Expr`] for hot loops.
//!
//! Names listed as slots are read by index at evaluation time; every other
//! name is resolved once against a fixed environment and constant subtrees
//! are folded. Unresolvable names and text values compile to nodes that fail
//! when reached, so short-circuit behaviour matches the tree walker exactly.

use super::ops::{self, Scalar};
use super::{BinOp, CmpOp, EvalError, Expr, Func};
use crate::facts::Env;

#[derive(Debug, Clone)]
enum Node {
    Const(Scalar),
    Fail(EvalError),
    Slot(usize),
    Neg(Box<Node>),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Cmp(CmpOp, Box<Node>, Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Something that can serve slot values.
pub trait Slots {
    fn slot(&self, i: usize) -> Scalar;
}

impl Slots for [f64] {
    #[inline]
    fn slot(&self, i: usize) -> Scalar {
        Scalar::Num(self[i])
    }
}

impl Slots for [Scalar] {
    #[inline]
    fn slot(&self, i: usize) -> Scalar {
        self[i]
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    root: Node,
}

impl Program {
    pub fn compile(expr: &Expr, slots: &[&str], fixed: &dyn Env) -> Program {
        Program {
            root: build(expr, slots, fixed),
        }
    }

    #[inline]
    pub fn eval<S: Slots + ?Sized>(&self, slots: &S) -> Result<Scalar, EvalError> {
        run(&self.root, slots)
    }

    /// Convenience for boolean assertions over numeric slots.
    #[inline]
    pub fn holds(&self, slots: &[f64]) -> Result<bool, EvalError> {
        self.eval(slots)?.expect_bool("assert")
    }

    /// Decides the assertion for every point of a box at once, with each slot
    /// ranging over `[lo, hi]`. `Some(true)` means [`holds`](Self::holds)
    /// returns `Ok(true)` everywhere in the box, `Some(false)` that it never
    /// does. `None` when interval bounds are too loose to tell, or an error
    /// is possible somewhere inside.
    pub fn decide(&self, slots: &[(f64, f64)]) -> Option<bool> {
        match range(&self.root, slots)? {
            Range::Bool(b) => b,
            Range::Num(..) => None,
        }
    }
}

/// Interval image of a node. Bounds are widened outward after every
/// operation so rounding in the point evaluator can never land outside.
#[derive(Debug, Clone, Copy)]
enum Range {
    Num(f64, f64),
    /// `None` when the comparison goes both ways inside the box.
    Bool(Option<bool>),
}

fn widened(lo: f64, hi: f64) -> Option<Range> {
    const REL: f64 = 1e-12;
    const ABS: f64 = 1e-300;
    let (lo, hi) = (lo - lo.abs() * REL - ABS, hi + hi.abs() * REL + ABS);
    (lo.is_finite() && hi.is_finite() && lo <= hi).then_some(Range::Num(lo, hi))
}

fn hull(xs: &[f64]) -> Option<Range> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    widened(lo, hi)
}

fn num(r: Range) -> Option<(f64, f64)> {
    match r {
        Range::Num(lo, hi) => Some((lo, hi)),
        Range::Bool(_) => None,
    }
}

fn truth(r: Range) -> Option<Option<bool>> {
    match r {
        Range::Bool(b) => Some(b),
        Range::Num(..) => None,
    }
}

fn pow_range((a, b): (f64, f64), (c, d): (f64, f64)) -> Option<Range> {
    if c == d && c.fract() == 0.0 {
        let n = c as i32;
        if n == 0 {
            return widened(1.0, 1.0);
        }
        if n < 0 && a <= 0.0 && b >= 0.0 {
            return None;
        }
        let (pa, pb) = (a.powi(n), b.powi(n));
        if n % 2 == 0 && a < 0.0 && b > 0.0 {
            return if n > 0 { hull(&[0.0, pa, pb]) } else { None };
        }
        return hull(&[pa, pb]);
    }
    // Fractional exponents: only strictly positive bases, where powf is
    // monotone in each argument.
    if a <= 0.0 {
        return None;
    }
    hull(&[a.powf(c), a.powf(d), b.powf(c), b.powf(d)])
}

fn range(n: &Node, s: &[(f64, f64)]) -> Option<Range> {
    Some(match n {
        Node::Const(Scalar::Num(x)) => Range::Num(*x, *x),
        Node::Const(Scalar::Bool(b)) => Range::Bool(Some(*b)),
        Node::Fail(_) => return None,
        Node::Slot(i) => {
            let (lo, hi) = s[*i];
            Range::Num(lo, hi)
        }
        Node::Neg(a) => {
            let (lo, hi) = num(range(a, s)?)?;
            Range::Num(-hi, -lo)
        }
        Node::Not(a) => Range::Bool(truth(range(a, s)?)?.map(|b| !b)),
        Node::Bin(op, a, b) => {
            let (x0, x1) = num(range(a, s)?)?;
            let (y0, y1) = num(range(b, s)?)?;
            return match op {
                BinOp::Add => widened(x0 + y0, x1 + y1),
                BinOp::Sub => widened(x0 - y1, x1 - y0),
                BinOp::Mul => hull(&[x0 * y0, x0 * y1, x1 * y0, x1 * y1]),
                BinOp::Div => {
                    if y0 <= 0.0 && y1 >= 0.0 {
                        return None;
                    }
                    hull(&[x0 / y0, x0 / y1, x1 / y0, x1 / y1])
                }
                BinOp::Pow => pow_range((x0, x1), (y0, y1)),
            };
        }
        Node::Cmp(op, a, b) => {
            let (x0, x1) = num(range(a, s)?)?;
            let (y0, y1) = num(range(b, s)?)?;
            let verdict = match op {
                CmpOp::Lt => (x1 < y0).then_some(true).or((x0 >= y1).then_some(false)),
                CmpOp::Le => (x1 <= y0).then_some(true).or((x0 > y1).then_some(false)),
                CmpOp::Gt => (x0 > y1).then_some(true).or((x1 <= y0).then_some(false)),
                CmpOp::Ge => (x0 >= y1).then_some(true).or((x1 < y0).then_some(false)),
                CmpOp::Eq => (x1 < y0 || x0 > y1).then_some(false),
                CmpOp::Ne => (x1 < y0 || x0 > y1).then_some(true),
            };
            Range::Bool(verdict)
        }
        Node::And(a, b) => match truth(range(a, s)?)? {
            Some(false) => Range::Bool(Some(false)),
            Some(true) => Range::Bool(truth(range(b, s)?)?),
            None => match truth(range(b, s)?)? {
                Some(false) => Range::Bool(Some(false)),
                _ => Range::Bool(None),
            },
        },
        Node::Or(a, b) => match truth(range(a, s)?)? {
            Some(true) => Range::Bool(Some(true)),
            Some(false) => Range::Bool(truth(range(b, s)?)?),
            None => match truth(range(b, s)?)? {
                Some(true) => Range::Bool(Some(true)),
                _ => Range::Bool(None),
            },
        },
        Node::Call(f, args) => {
            let (x0, x1) = num(range(&args[0], s)?)?;
            return match f {
                Func::Exp => widened(x0.exp(), x1.exp()),
                Func::Ln if x0 > 0.0 => widened(x0.ln(), x1.ln()),
                Func::Log10 if x0 > 0.0 => widened(x0.log10(), x1.log10()),
                Func::Sqrt if x0 >= 0.0 => widened(x0.sqrt(), x1.sqrt()),
                Func::Ln | Func::Log10 | Func::Sqrt => None,
                Func::Abs => {
                    if x0 >= 0.0 {
                        widened(x0, x1)
                    } else if x1 <= 0.0 {
                        widened(-x1, -x0)
                    } else {
                        widened(0.0, x1.max(-x0))
                    }
                }
                Func::Min | Func::Max => {
                    let (y0, y1) = num(range(args.get(1)?, s)?)?;
                    if *f == Func::Min {
                        widened(x0.min(y0), x1.min(y1))
                    } else {
                        widened(x0.max(y0), x1.max(y1))
                    }
                }
            };
        }
    })
}

fn is_const(n: &Node) -> bool {
    matches!(n, Node::Const(_))
}

fn fold(n: Node) -> Node {
    let foldable = match &n {
        Node::Neg(a) | Node::Not(a) => is_const(a),
        Node::Bin(_, a, b) | Node::Cmp(_, a, b) | Node::And(a, b) | Node::Or(a, b) => is_const(a) && is_const(b),
        Node::Call(_, args) => args.iter().all(is_const),
        _ => false,
    };
    if !foldable {
        return n;
    }
    let empty: [f64; 0] = [];
    match run(&n, &empty[..]) {
        Ok(v) => Node::Const(v),
        Err(_) => n,
    }
}

fn build(e: &Expr, slots: &[&str], fixed: &dyn Env) -> Node {
    let b = |x: &Expr| Box::new(build(x, slots, fixed));
    let node = match e {
        Expr::Num(x) => Node::Const(Scalar::Num(*x)),
        Expr::Bool(v) => Node::Const(Scalar::Bool(*v)),
        Expr::Var(name) => {
            if let Some(i) = slots.iter().position(|s| s == name) {
                Node::Slot(i)
            } else {
                match fixed.lookup(name) {
                    Some(v) => match Scalar::from_value(v, name) {
                        Ok(s) => Node::Const(s),
                        Err(err) => Node::Fail(err),
                    },
                    None => Node::Fail(EvalError::UnboundVariable(name.clone())),
                }
            }
        }
        Expr::Neg(a) => Node::Neg(b(a)),
        Expr::Not(a) => Node::Not(b(a)),
        Expr::Binary(op, x, y) => Node::Bin(*op, b(x), b(y)),
        Expr::Compare(op, x, y) => Node::Cmp(*op, b(x), b(y)),
        Expr::And(x, y) => Node::And(b(x), b(y)),
        Expr::Or(x, y) => Node::Or(b(x), b(y)),
        Expr::Call(f, args) => Node::Call(*f, args.iter().map(|a| build(a, slots, fixed)).collect()),
    };
    fold(node)
}

fn run<S: Slots + ?Sized>(n: &Node, s: &S) -> Result<Scalar, EvalError> {
    Ok(match n {
        Node::Const(v) => *v,
        Node::Fail(e) => return Err(e.clone()),
        Node::Slot(i) => s.slot(*i),
        Node::Neg(a) => Scalar::Num(ops::neg(run(a, s)?)?),
        Node::Not(a) => Scalar::Bool(!run(a, s)?.expect_bool("not")?),
        Node::Bin(op, a, b) => {
            let x = run(a, s)?.expect_num(op.symbol())?;
            let y = run(b, s)?.expect_num(op.symbol())?;
            Scalar::Num(ops::arith(*op, x, y)?)
        }
        Node::Cmp(op, a, b) => Scalar::Bool(ops::compare(*op, run(a, s)?, run(b, s)?)?),
        Node::And(a, b) => {
            if !run(a, s)?.expect_bool("and")? {
                Scalar::Bool(false)
            } else {
                Scalar::Bool(run(b, s)?.expect_bool("and")?)
            }
        }
        Node::Or(a, b) => {
            if run(a, s)?.expect_bool("or")? {
                Scalar::Bool(true)
            } else {
                Scalar::Bool(run(b, s)?.expect_bool("or")?)
            }
        }
        Node::Call(f, args) => {
            let mut xs = [0.0f64; 2];
            for (slot, a) in xs.iter_mut().zip(args) {
                *slot = run(a, s)?.expect_num(f.name())?;
            }
            Scalar::Num(ops::call(*f, &xs[..args.len()])?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::super::{eval, parse};
    use super::*;
    use crate::facts::FactMap;

    #[test]
    fn matches_tree_walker_on_arrhenius() {
        let src = "1 - exp(-(a * exp(-ea / (r * (t + 273.15)))) * tau) >= 0.95";
        let e = parse(src).unwrap();
        let consts = FactMap::new().with("a", 2.5e8).with("ea", 72000.0).with("r", 8.314);
        let p = Program::compile(&e, &["t", "tau"], &consts);
        for (t, tau) in [(98.6, 157.0), (20.0, 1.0), (150.0, 300.0), (98.59, 157.06)] {
            let facts = consts.clone().with("t", t).with("tau", tau);
            let tree = eval(&e, &facts).unwrap();
            let fast = p.eval(&[t, tau][..]).unwrap().into_value();
            assert_eq!(tree, fast);
        }
    }

    #[test]
    fn unbound_names_fail_lazily() {
        let e = parse("false and missing > 1").unwrap();
        let p = Program::compile(&e, &[], &FactMap::new());
        let none: [f64; 0] = [];
        assert_eq!(p.eval(&none[..]).unwrap(), Scalar::Bool(false));
        let e = parse("missing > 1").unwrap();
        let p = Program::compile(&e, &[], &FactMap::new());
        let empty: [f64; 0] = [];
        assert_eq!(p.eval(&empty[..]), Err(EvalError::UnboundVariable("missing".into())));
    }

    #[test]
    fn folding_keeps_runtime_errors() {
        let e = parse("x > 0 or 1 / 0 > 1").unwrap();
        let p = Program::compile(&e, &["x"], &FactMap::new());
        assert_eq!(p.holds(&[1.0]), Ok(true));
        assert!(matches!(p.holds(&[-1.0]), Err(EvalError::Domain(_))));
    }
}
