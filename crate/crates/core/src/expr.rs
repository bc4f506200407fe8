//! Closed-form expressions in chart coordinates.
//!
//! Custom metric components, wave profiles and test functions are written in a
//! small grammar: `+ - * / ^`, the functions `sin`, `cos`, `exp` (plus `ln`),
//! numeric literals, the constant `pi` and named variables. Expressions are
//! compiled against an ordered variable list, so evaluation takes a plain slice.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
        }
    }
}

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
    Call(Func, Box<Node>),
}

/// A compiled expression over a fixed, ordered set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    node: Node,
    vars: Vec<String>,
}

impl Expr {
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let tokens = lex(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            vars: &vars,
        };
        let node = parser.expr()?;
        if parser.pos != tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in `{source}` at token {}",
                parser.pos
            )));
        }
        Ok(Expr {
            node: simplify(node),
            vars,
        })
    }

    pub fn constant(value: f64, vars: &[&str]) -> Self {
        Expr {
            node: Node::Const(value),
            vars: vars.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Returns the constant value if the expression does not depend on any variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.node {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.vars.len());
        eval(&self.node, x)
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        Expr {
            node: simplify(diff(&self.node, var)),
            vars: self.vars.clone(),
        }
    }

    pub fn gradient(&self) -> Vec<Expr> {
        (0..self.vars.len()).map(|i| self.derivative(i)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Expr {
        Expr {
            node: simplify(Node::Mul(
                Box::new(Node::Const(factor)),
                Box::new(self.node.clone()),
            )),
            vars: self.vars.clone(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.node, &self.vars, f)
    }
}

fn write_node(node: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{c}"),
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            let op = match node {
                Node::Add(..) => "+",
                Node::Sub(..) => "-",
                Node::Mul(..) => "*",
                Node::Div(..) => "/",
                _ => "^",
            };
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, " {op} ")?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
    }
}

fn eval(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => {
            let base = eval(a, x);
            match **b {
                Node::Const(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                _ => base.powf(eval(b, x)),
            }
        }
        Node::Call(func, a) => func.apply(eval(a, x)),
    }
}

fn is_const(node: &Node, value: f64) -> bool {
    matches!(node, Node::Const(c) if *c == value)
}

fn contains_var(node: &Node, var: usize) -> bool {
    match node {
        Node::Const(_) => false,
        Node::Var(i) => *i == var,
        Node::Neg(a) | Node::Call(_, a) => contains_var(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            contains_var(a, var) || contains_var(b, var)
        }
    }
}

fn diff(node: &Node, var: usize) -> Node {
    use Node::*;
    let bx = |n: Node| Box::new(n);
    match node {
        Const(_) => Const(0.0),
        Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
        Neg(a) => Neg(bx(diff(a, var))),
        Add(a, b) => Add(bx(diff(a, var)), bx(diff(b, var))),
        Sub(a, b) => Sub(bx(diff(a, var)), bx(diff(b, var))),
        Mul(a, b) => Add(
            bx(Mul(bx(diff(a, var)), b.clone())),
            bx(Mul(a.clone(), bx(diff(b, var)))),
        ),
        Div(a, b) => Div(
            bx(Sub(
                bx(Mul(bx(diff(a, var)), b.clone())),
                bx(Mul(a.clone(), bx(diff(b, var)))),
            )),
            bx(Pow(b.clone(), bx(Const(2.0)))),
        ),
        Pow(a, b) => {
            if !contains_var(b, var) {
                // d(a^c) = c a^(c-1) a'
                Mul(
                    bx(Mul(
                        b.clone(),
                        bx(Pow(a.clone(), bx(Sub(b.clone(), bx(Const(1.0)))))),
                    )),
                    bx(diff(a, var)),
                )
            } else {
                // d(a^b) = a^b (b' ln a + b a'/a)
                Mul(
                    bx(node.clone()),
                    bx(Add(
                        bx(Mul(bx(diff(b, var)), bx(Call(Func::Ln, a.clone())))),
                        bx(Div(bx(Mul(b.clone(), bx(diff(a, var)))), a.clone())),
                    )),
                )
            }
        }
        Call(func, a) => {
            let outer = match func {
                Func::Sin => Call(Func::Cos, a.clone()),
                Func::Cos => Neg(bx(Call(Func::Sin, a.clone()))),
                Func::Exp => node.clone(),
                Func::Ln => Div(bx(Const(1.0)), a.clone()),
            };
            Mul(bx(outer), bx(diff(a, var)))
        }
    }
}

fn simplify(node: Node) -> Node {
    use Node::*;
    match node {
        Neg(a) => match simplify(*a) {
            Const(c) => Const(-c),
            Neg(inner) => *inner,
            a => Neg(Box::new(a)),
        },
        Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(x), Const(y)) => Const(x + y),
            (a, b) if is_const(&a, 0.0) => b,
            (a, b) if is_const(&b, 0.0) => a,
            (a, b) => Add(Box::new(a), Box::new(b)),
        },
        Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(x), Const(y)) => Const(x - y),
            (a, b) if is_const(&b, 0.0) => a,
            (a, b) if is_const(&a, 0.0) => Neg(Box::new(b)),
            (a, b) => Sub(Box::new(a), Box::new(b)),
        },
        Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(x), Const(y)) => Const(x * y),
            (a, b) if is_const(&a, 0.0) || is_const(&b, 0.0) => Const(0.0),
            (a, b) if is_const(&a, 1.0) => b,
            (a, b) if is_const(&b, 1.0) => a,
            (a, b) => Mul(Box::new(a), Box::new(b)),
        },
        Div(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(x), Const(y)) if y != 0.0 => Const(x / y),
            (a, _) if is_const(&a, 0.0) => Const(0.0),
            (a, b) if is_const(&b, 1.0) => a,
            (a, b) => Div(Box::new(a), Box::new(b)),
        },
        Pow(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(x), Const(y)) => Const(x.powf(y)),
            (_, b) if is_const(&b, 0.0) => Const(1.0),
            (a, b) if is_const(&b, 1.0) => a,
            (a, b) => Pow(Box::new(a), Box::new(b)),
        },
        Call(func, a) => match simplify(*a) {
            Const(c) => Const(func.apply(c)),
            a => Call(func, Box::new(a)),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(source: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = source.chars().collect();
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
            let value = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number literal `{text}`")))?;
            out.push(Token::Num(value));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expr(format!(
                "unexpected character `{c}` in `{source}`"
            )));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(Error::Expr("missing `)`".into())),
                }
            }
            Some(Token::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "ln" => Some(Func::Ln),
                    _ => None,
                };
                if let Some(func) = func {
                    if self.next() != Some(Token::LParen) {
                        return Err(Error::Expr(format!("`{name}` must be followed by `(`")));
                    }
                    let arg = self.expr()?;
                    if self.next() != Some(Token::RParen) {
                        return Err(Error::Expr(format!("missing `)` after `{name}(`")));
                    }
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(idx));
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                Err(Error::Expr(format!(
                    "unknown identifier `{name}` (variables: {:?})",
                    self.vars
                )))
            }
            Some(tok) => Err(Error::Expr(format!("unexpected token {tok:?}"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }
}
