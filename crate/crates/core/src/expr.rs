//! A tiny whitelisted arithmetic language for Lévy densities `r ↦ π(r)`.
//!
//! Grammar: numbers, the variable `r`, constants `pi` and `e`, the binary
//! operators `+ - * / ^`, unary minus, parentheses and the functions
//! `exp`, `log` (alias `ln`), `sqrt`, `abs`. Nothing else is accepted.

use std::fmt;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
}

/// Compiled expression; keeps its source for round-tripping.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { toks: &tokens, pos: 0 };
        let root = p.sum()?;
        if p.pos != tokens.len() {
            return Err(invalid("pi", format!("unexpected token {:?}", tokens[p.pos])));
        }
        Ok(Expr { source: src.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, r: f64) -> f64 {
        eval(&self.root, r)
    }
}

fn eval(n: &Node, r: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var => r,
        Node::Neg(a) => -eval(a, r),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval(a, r), eval(b, r));
            match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                '/' => x / y,
                _ => x.powf(y),
            }
        }
        Node::Call(f, a) => {
            let x = eval(a, r);
            match f {
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Abs => x.abs(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| invalid("pi", format!("bad number `{text}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(invalid("pi", format!("character `{c}` not allowed")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if let Some(Tok::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    // right-associative; binds tighter than unary minus on its left
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "r" | "x" => Ok(Node::Var),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                "exp" | "log" | "ln" | "sqrt" | "abs" => {
                    let f = match name.as_str() {
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        _ => Func::Log,
                    };
                    if self.peek() != Some(&Tok::LParen) {
                        return Err(invalid("pi", format!("`{name}` must be called")));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(f, Box::new(arg)))
                }
                other => Err(invalid("pi", format!("identifier `{other}` not allowed"))),
            },
            Some(t) => Err(invalid("pi", format!("unexpected token {t:?}"))),
            None => Err(invalid("pi", "unexpected end of expression")),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(invalid("pi", "missing `)`"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn arithmetic_and_precedence() {
        let e = Expr::parse("2 + 3 * r ^ 2").unwrap();
        assert_eq!(e.eval(2.0), 14.0);
        let e = Expr::parse("-r^2").unwrap();
        assert_eq!(e.eval(3.0), -9.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(0.0), 512.0);
        let e = Expr::parse("r^-2").unwrap();
        assert_eq!(e.eval(2.0), 0.25);
    }

    #[test]
    fn functions_and_constants() {
        let e = Expr::parse("exp(-r) * r^(-2) + log(e) - sqrt(4) + abs(-1) + 0*pi").unwrap();
        assert_relative_eq!(e.eval(1.0), (-1f64).exp());
        let e = Expr::parse("1.5e-1 * r").unwrap();
        assert_relative_eq!(e.eval(2.0), 0.3);
    }

    #[test]
    fn rejects_anything_else() {
        for bad in ["system(1)", "r; 1", "y + 1", "exp r", "(r", "r $ 2", ""] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }
}
