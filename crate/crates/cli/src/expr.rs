//! Arithmetic expressions over `t`, `v`, `x1..xn` and `w1..wk`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 't' | 'v' | 'x' index | 'w' index | 'pi'
//!          | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | abs
//! ```
//!
//! Indices are 1-based. `^` is right associative and binds tighter than unary
//! minus, so `-x1^2` is `-(x1^2)`.

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub struct ExprError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.msg, self.pos)
    }
}

impl std::error::Error for ExprError {}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    T,
    V,
    X(usize),
    W(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Values bound to the variables during evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Vars<'a> {
    pub t: f64,
    pub v: f64,
    pub x: &'a [f64],
    pub w: &'a [f64],
}

/// A parsed expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    text: String,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Expr {
            root,
            text: text.to_string(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Largest `x` index used (0 if none).
    pub fn max_x(&self) -> usize {
        max_index(&self.root, |n| matches!(n, Node::X(_)))
    }

    /// Largest `w` index used (0 if none).
    pub fn max_w(&self) -> usize {
        max_index(&self.root, |n| matches!(n, Node::W(_)))
    }

    pub fn uses_v(&self) -> bool {
        uses(&self.root, &|n| matches!(n, Node::V))
    }

    pub fn uses_t(&self) -> bool {
        uses(&self.root, &|n| matches!(n, Node::T))
    }

    /// Evaluate; indices beyond the bound slices read as NaN.
    pub fn eval(&self, vars: &Vars<'_>) -> f64 {
        eval(&self.root, vars)
    }
}

fn children(n: &Node) -> Vec<&Node> {
    match n {
        Node::Neg(a) | Node::Call(_, a) => vec![a],
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => vec![a, b],
        _ => vec![],
    }
}

fn uses(n: &Node, pred: &dyn Fn(&Node) -> bool) -> bool {
    pred(n) || children(n).into_iter().any(|c| uses(c, pred))
}

fn max_index(n: &Node, pick: fn(&Node) -> bool) -> usize {
    let own = match n {
        Node::X(i) | Node::W(i) if pick(n) => *i,
        _ => 0,
    };
    children(n).into_iter().map(|c| max_index(c, pick)).fold(own, usize::max)
}

fn eval(n: &Node, vars: &Vars<'_>) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::T => vars.t,
        Node::V => vars.v,
        Node::X(i) => vars.x.get(i - 1).copied().unwrap_or(f64::NAN),
        Node::W(i) => vars.w.get(i - 1).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval(a, vars),
        Node::Add(a, b) => eval(a, vars) + eval(b, vars),
        Node::Sub(a, b) => eval(a, vars) - eval(b, vars),
        Node::Mul(a, b) => eval(a, vars) * eval(b, vars),
        Node::Div(a, b) => eval(a, vars) / eval(b, vars),
        Node::Pow(a, b) => {
            let (base, e) = (eval(a, vars), eval(b, vars));
            if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                base.powi(e as i32)
            } else {
                base.powf(e)
            }
        }
        Node::Call(f, a) => {
            let v = eval(a, vars);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Abs => v.abs(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut k = self.pos + 1;
            if k < s.len() && (s[k] == b'+' || s[k] == b'-') {
                k += 1;
            }
            if k < s.len() && s[k].is_ascii_digit() {
                while k < s.len() && s[k].is_ascii_digit() {
                    k += 1;
                }
                self.pos = k;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii");
        text.parse().map(Node::Num).map_err(|_| ExprError {
            pos: start,
            msg: format!("bad number {text:?}"),
        })
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "abs" => Some(Func::Abs),
            _ => None,
        };
        if let Some(f) = func {
            if !self.eat(b'(') {
                return Err(self.err("expected '(' after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(Node::Call(f, Box::new(arg)));
        }
        let indexed = |prefix: char| -> Option<usize> {
            name.strip_prefix(prefix)
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|d| d.parse().ok())
                .filter(|&i: &usize| i >= 1)
        };
        match name {
            "t" => Ok(Node::T),
            "v" => Ok(Node::V),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            _ => {
                if let Some(i) = indexed('x') {
                    Ok(Node::X(i))
                } else if let Some(i) = indexed('w') {
                    Ok(Node::W(i))
                } else {
                    Err(ExprError {
                        pos: start,
                        msg: format!("unknown name {name:?}"),
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(&Vars {
            t: 0.5,
            v: 3.0,
            x,
            w: &[2.0],
        })
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
        assert_eq!(ev("2 * -3", &[]), -6.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("x1 - x3", &[5.0, 0.0, 2.0]), 3.0);
        assert_eq!(ev("t", &[]), 0.5);
        assert_eq!(ev("v^1.5", &[]), 3f64.powf(1.5));
        assert_eq!(ev("w1", &[]), 2.0);
        assert_eq!(ev("sin(t) + cos(0) + exp(0) + abs(-2)", &[]), 0.5f64.sin() + 4.0);
        assert_eq!(ev("1.5e-3 * 2E2", &[]), 0.3);
        assert!((ev("pi", &[]) - std::f64::consts::PI).abs() < 1e-15);
        assert!(ev("x4", &[1.0]).is_nan());
    }

    #[test]
    fn introspection() {
        let e = Expr::parse("x1*x12 + w3 - v").unwrap();
        assert_eq!((e.max_x(), e.max_w(), e.uses_v(), e.uses_t()), (12, 3, true, false));
        assert!(Expr::parse("sin(2*t)").unwrap().uses_t());
        assert_eq!(Expr::parse("2").unwrap().max_x(), 0);
    }

    #[test]
    fn errors() {
        for bad in ["", "1 +", "(1", "foo", "x0", "sin 1", "1 2", "x", "$"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
        assert_eq!(Expr::parse("1 + y").unwrap_err().pos, 4);
    }
}
