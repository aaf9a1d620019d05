//! Recursive descent, one function per precedence level.

use super::lexer::{lex, Tok, Token};
use super::{BinOp, CmpOp, Expr, ExprError, Func};

const MAX_DEPTH: usize = 200;

const OPERAND_START: &[&str] = &["number", "identifier", "(", "-", "not", "true", "false"];
const BINARY_OPS: &[&str] = &["+", "-", "*", "/", "**", "<", "<=", ">", ">=", "==", "!=", "and", "or"];

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let e = p.or_expr()?;
    if p.peek() != &Tok::Eof {
        let mut expected: Vec<&str> = BINARY_OPS.to_vec();
        expected.push("end of input");
        return Err(p.error(format!("unexpected {}", p.peek().describe()), &expected));
    }
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].offset
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: String, expected: &[&str]) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            message,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply".into(), OPERAND_START));
        }
        Ok(())
    }

    fn or_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == &Tok::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.not_expr()?;
        while self.peek() == &Tok::And {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == &Tok::Not {
            self.bump();
            self.enter()?;
            let inner = self.not_expr()?;
            self.depth -= 1;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.cmp_expr()
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            Tok::EqEq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            _ => return None,
        })
    }

    fn cmp_expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.add_expr()?;
        let Some(op) = self.cmp_op() else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = self.add_expr()?;
        if self.cmp_op().is_some() {
            return Err(self.error(
                "comparisons do not chain; parenthesise one side".into(),
                &["and", "or", ")", "end of input"],
            ));
        }
        Ok(Expr::cmp(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == &Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    /// `**` binds tighter than unary minus on its left and is right
    /// associative; its exponent may itself carry a unary minus.
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == &Tok::StarStar {
            self.bump();
            self.enter()?;
            let exp = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::bin(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Bool(false))
            }
            Tok::LParen => {
                self.bump();
                self.enter()?;
                let e = self.or_expr()?;
                self.depth -= 1;
                if self.peek() != &Tok::RParen {
                    let mut expected: Vec<&str> = BINARY_OPS.to_vec();
                    expected.push(")");
                    return Err(self.error(format!("unexpected {}", self.peek().describe()), &expected));
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek() != &Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                let Some(func) = Func::from_name(&name) else {
                    let names: Vec<&str> = Func::ALL.iter().map(|f| f.name()).collect();
                    return Err(ExprError::Syntax {
                        offset,
                        message: format!("unknown function '{name}'"),
                        expected: names.into_iter().map(String::from).collect(),
                    });
                };
                self.bump();
                self.enter()?;
                let mut args = Vec::new();
                if self.peek() != &Tok::RParen {
                    loop {
                        args.push(self.or_expr()?);
                        match self.peek() {
                            Tok::Comma => {
                                self.bump();
                            }
                            Tok::RParen => break,
                            other => {
                                return Err(self.error(format!("unexpected {}", other.describe()), &[",", ")"]));
                            }
                        }
                    }
                }
                self.bump();
                self.depth -= 1;
                if args.len() != func.arity() {
                    return Err(ExprError::Arity {
                        function: func.name().to_string(),
                        got: args.len(),
                        want: func.arity(),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(self.error(format!("unexpected {}", other.describe()), OPERAND_START)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_shapes() {
        assert_eq!(
            parse("a or b and not c < d").unwrap(),
            Expr::Or(
                Box::new(Expr::var("a")),
                Box::new(Expr::And(
                    Box::new(Expr::var("b")),
                    Box::new(Expr::Not(Box::new(Expr::cmp(CmpOp::Lt, Expr::var("c"), Expr::var("d")))))
                ))
            )
        );
        assert_eq!(
            parse("-a ** b").unwrap(),
            Expr::Neg(Box::new(Expr::bin(BinOp::Pow, Expr::var("a"), Expr::var("b"))))
        );
        assert_eq!(
            parse("a ** b ** c").unwrap(),
            Expr::bin(BinOp::Pow, Expr::var("a"), Expr::bin(BinOp::Pow, Expr::var("b"), Expr::var("c")))
        );
    }

    #[test]
    fn arity_checked_at_parse_time() {
        assert_eq!(
            parse("min(1)"),
            Err(ExprError::Arity {
                function: "min".into(),
                got: 1,
                want: 2
            })
        );
        assert!(matches!(parse("sqrt(1, 2)"), Err(ExprError::Arity { got: 2, want: 1, .. })));
        assert!(matches!(parse("exp()"), Err(ExprError::Arity { got: 0, .. })));
    }

    #[test]
    fn syntax_errors_carry_offset_and_expectations() {
        match parse("(a + ") {
            Err(ExprError::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 5);
                assert!(expected.contains(&"number".to_string()));
            }
            other => panic!("{other:?}"),
        }
        match parse("(a + b") {
            Err(ExprError::Syntax { expected, .. }) => assert!(expected.contains(&")".to_string())),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("a < b < c"), Err(ExprError::Syntax { offset: 6, .. })));
        assert!(matches!(parse("foo(1)"), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("a b"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = format!("{}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(matches!(parse(&src), Err(ExprError::Syntax { .. })));
        let src = format!("{}1", "-".repeat(5000));
        assert!(matches!(parse(&src), Err(ExprError::Syntax { .. })));
    }
}
