//! A small arithmetic expression language for rate functions in JSON model
//! files.
//!
//! Expressions are compiled once against a fixed list of variable names and
//! evaluated against a slice of values without allocation, so JSON-defined
//! models can be used in the simulator's inner loop.
//!
//! Grammar:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp ln log sqrt abs sin cos tanh min max pow step ind`.
//! `step(v)` is 1 for `v >= 0` and 0 otherwise; `ind(v, lo, hi)` is 1 when
//! `lo <= v <= hi`. Constants: `pi`, `e`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
    Ind(Box<Node>, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func1 {
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func2 {
    Min,
    Max,
    Pow,
}

/// A compiled expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    /// Compiles `source`; every identifier must be a function, a constant
    /// or one of `vars` (its position is the slot read at evaluation).
    pub fn compile(source: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
        };
        let root = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in `{source}`"
            )));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    #[inline]
    pub fn eval(&self, vars: &[f64]) -> f64 {
        eval(&self.root, vars)
    }
}

fn eval(node: &Node, v: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => v[*i],
        Node::Neg(a) => -eval(a, v),
        Node::Add(a, b) => eval(a, v) + eval(b, v),
        Node::Sub(a, b) => eval(a, v) - eval(b, v),
        Node::Mul(a, b) => eval(a, v) * eval(b, v),
        Node::Div(a, b) => eval(a, v) / eval(b, v),
        Node::Pow(a, b) => eval(a, v).powf(eval(b, v)),
        Node::Call1(f, a) => {
            let x = eval(a, v);
            match f {
                Func1::Exp => x.exp(),
                Func1::Ln => x.ln(),
                Func1::Sqrt => x.sqrt(),
                Func1::Abs => x.abs(),
                Func1::Sin => x.sin(),
                Func1::Cos => x.cos(),
                Func1::Tanh => x.tanh(),
                Func1::Step => {
                    if x >= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
        Node::Call2(f, a, b) => {
            let (x, y) = (eval(a, v), eval(b, v));
            match f {
                Func2::Min => x.min(y),
                Func2::Max => x.max(y),
                Func2::Pow => x.powf(y),
            }
        }
        Node::Ind(x, lo, hi) => {
            let x = eval(x, v);
            if eval(lo, v) <= x && x <= eval(hi, v) {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
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
            // exponent part
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}` in `{s}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expr(format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek_op() == Some('(') {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek_op() == Some(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    return call(&name, args);
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(Error::Expr(format!(
                        "unknown variable `{name}` (allowed: {})",
                        self.vars.join(", ")
                    ))),
                }
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn call(name: &str, mut args: Vec<Node>) -> Result<Node> {
    let arity = |n: usize, args: &Vec<Node>| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Error::Expr(format!(
                "`{name}` takes {n} argument(s), got {}",
                args.len()
            )))
        }
    };
    let f1 = match name {
        "exp" => Some(Func1::Exp),
        "ln" | "log" => Some(Func1::Ln),
        "sqrt" => Some(Func1::Sqrt),
        "abs" => Some(Func1::Abs),
        "sin" => Some(Func1::Sin),
        "cos" => Some(Func1::Cos),
        "tanh" => Some(Func1::Tanh),
        "step" => Some(Func1::Step),
        _ => None,
    };
    if let Some(f) = f1 {
        arity(1, &args)?;
        return Ok(Node::Call1(f, Box::new(args.remove(0))));
    }
    let f2 = match name {
        "min" => Some(Func2::Min),
        "max" => Some(Func2::Max),
        "pow" => Some(Func2::Pow),
        _ => None,
    };
    if let Some(f) = f2 {
        arity(2, &args)?;
        let b = args.pop().unwrap();
        let a = args.pop().unwrap();
        return Ok(Node::Call2(f, Box::new(a), Box::new(b)));
    }
    if name == "ind" {
        arity(3, &args)?;
        let hi = args.pop().unwrap();
        let lo = args.pop().unwrap();
        let x = args.pop().unwrap();
        return Ok(Node::Ind(Box::new(x), Box::new(lo), Box::new(hi)));
    }
    Err(Error::Expr(format!("unknown function `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: &[&str], vals: &[f64]) -> f64 {
        Expr::compile(src, vars).unwrap().eval(vals)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[], &[]), 9.0);
        assert_eq!(ev("8 / 4 / 2", &[], &[]), 1.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[], &[]), -4.0);
        assert_eq!(ev("1e-3 * 2E2", &[], &[]), 0.2);
    }

    #[test]
    fn example_birth_rate() {
        let e = Expr::compile("x*(4-x)*exp(-a)", &["x", "a"]).unwrap();
        assert_eq!(e.eval(&[2.0, 0.0]), 4.0);
        assert!((e.eval(&[1.0, 1.0]) - 3.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn functions_and_constants() {
        assert_eq!(ev("max(1, min(5, 3))", &[], &[]), 3.0);
        assert_eq!(ev("step(0) + step(-1)", &[], &[]), 1.0);
        assert_eq!(ev("ind(a, 0, 1)", &["a"], &[0.5]), 1.0);
        assert_eq!(ev("ind(a, 0, 1)", &["a"], &[1.5]), 0.0);
        assert!((ev("sqrt(2*pi)", &[], &[]) - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        assert!(Expr::compile("q + 1", &["x"]).is_err());
        assert!(Expr::compile("exp(1, 2)", &[]).is_err());
        assert!(Expr::compile("1 +", &[]).is_err());
        assert!(Expr::compile("(1", &[]).is_err());
        assert!(Expr::compile("1 $ 2", &[]).is_err());
        assert!(Expr::compile("foo(1)", &[]).is_err());
    }
}
