//! Canonical printer. `parse(print(e)) == e` for every AST the parser can
//! produce (literals are non-negative; negation is always an explicit node).

use super::{BinOp, Expr};

const OR: u8 = 1;
const AND: u8 = 2;
const NOT: u8 = 3;
const CMP: u8 = 4;
const ADD: u8 = 5;
const MUL: u8 = 6;
const NEG: u8 = 7;
const POW: u8 = 8;
const ATOM: u8 = 9;

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => OR,
        Expr::And(..) => AND,
        Expr::Not(_) => NOT,
        Expr::Compare(..) => CMP,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => ADD,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => MUL,
        Expr::Neg(_) => NEG,
        Expr::Binary(BinOp::Pow, ..) => POW,
        Expr::Num(x) if x.is_sign_negative() => NEG,
        Expr::Num(_) | Expr::Bool(_) | Expr::Var(_) | Expr::Call(..) => ATOM,
    }
}

pub fn print(e: &Expr) -> String {
    let mut out = String::new();
    write(e, &mut out);
    out
}

/// Writes `e`, parenthesised unless its level is at least `min`.
fn child(e: &Expr, min: u8, out: &mut String) {
    if level(e) >= min {
        write(e, out);
    } else {
        out.push('(');
        write(e, out);
        out.push(')');
    }
}

fn number(x: f64, out: &mut String) {
    // Debug output is the shortest string that round-trips, and always
    // contains a '.' or an exponent so it lexes back as the same literal.
    out.push_str(&format!("{x:?}"));
}

fn write(e: &Expr, out: &mut String) {
    match e {
        Expr::Num(x) => number(*x, out),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Var(v) => out.push_str(v),
        Expr::Neg(a) => {
            out.push('-');
            // keep "- -x" from lexing as a single token in other printers
            if matches!(**a, Expr::Neg(_)) {
                out.push(' ');
            }
            child(a, NEG, out);
        }
        Expr::Not(a) => {
            out.push_str("not ");
            child(a, NOT, out);
        }
        Expr::Binary(BinOp::Pow, a, b) => {
            child(a, ATOM, out);
            out.push_str(" ** ");
            child(b, NEG, out);
        }
        Expr::Binary(op, a, b) => {
            let lv = level(e);
            child(a, lv, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            child(b, lv + 1, out);
        }
        Expr::Compare(op, a, b) => {
            child(a, CMP + 1, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            child(b, CMP + 1, out);
        }
        Expr::And(a, b) => {
            child(a, AND, out);
            out.push_str(" and ");
            child(b, AND + 1, out);
        }
        Expr::Or(a, b) => {
            child(a, OR, out);
            out.push_str(" or ");
            child(b, OR + 1, out);
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write(a, out);
            }
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn rt(src: &str) -> String {
        print(&parse(src).unwrap())
    }

    #[test]
    fn minimal_parentheses() {
        assert_eq!(rt("((a + b) * c)"), "(a + b) * c");
        assert_eq!(rt("a - (b - c)"), "a - (b - c)");
        assert_eq!(rt("(a - b) - c"), "a - b - c");
        assert_eq!(rt("(-2) ** 2"), "(-2.0) ** 2.0");
        assert_eq!(rt("-2 ** 2"), "-2.0 ** 2.0");
        assert_eq!(rt("(a ** b) ** c"), "(a ** b) ** c");
        assert_eq!(rt("a ** -b"), "a ** -b");
        assert_eq!(rt("(a < b) == c"), "(a < b) == c");
        assert_eq!(rt("not (a and b)"), "not (a and b)");
        assert_eq!(rt("min(a, b + 1) >= 2.5e8"), "min(a, b + 1.0) >= 250000000.0");
    }

    #[test]
    fn printed_form_reparses_to_same_tree() {
        for src in ["- - a", "a or (b or c)", "1e-7 * x", "not not x", "-(a + b)"] {
            let e = parse(src).unwrap();
            assert_eq!(parse(&print(&e)).unwrap(), e, "{src}");
        }
    }
}
