//! Integer expressions and their big-step evaluation.
//!
//! Expressions appear in program text and in topology functions. Besides the
//! tagged-tree form they have a compact infix syntax (`tag * (size - 1)`),
//! which is what the JSON loaders accept and what [`Expr`]'s `Display` emits.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A process-local variable environment.
pub type Env = BTreeMap<String, i64>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Int(i64),
    Var(String),
    Eq(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

impl Expr {
    pub fn int(n: i64) -> Self {
        Expr::Int(n)
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_owned())
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    /// `a - b`, encoded as `a + -b` since the language has no subtraction.
    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::add(a, Expr::neg(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn eq(a: Expr, b: Expr) -> Self {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Self {
        Expr::Neg(Box::new(a))
    }

    /// Logical negation: `a = 0`.
    pub fn not(a: Expr) -> Self {
        Expr::eq(a, Expr::Int(0))
    }

    /// Euclidean remainder `a - (a div b) * b`.
    pub fn rem(a: Expr, b: Expr) -> Self {
        Expr::sub(a.clone(), Expr::mul(Expr::div(a, b.clone()), b))
    }

    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        Parser::new(src)?.parse_all()
    }

    pub fn eval(&self, env: &Env) -> Result<i64, EvalError> {
        eval_expr(self, env)
    }

    /// Collects every variable this expression reads.
    pub fn reads<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Int(_) => {}
            Expr::Var(x) => out.push(x),
            Expr::Neg(a) => a.reads(out),
            Expr::Eq(a, b) | Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.reads(out);
                b.reads(out);
            }
        }
    }
}

/// Big-step evaluation. `=` yields 1 or 0; `div` is Euclidean division.
pub fn eval_expr(e: &Expr, env: &Env) -> Result<i64, EvalError> {
    e.eval_in(&|x| env.get(x).copied())
}

impl Expr {
    /// Evaluates against an arbitrary variable lookup, which avoids building a
    /// map for the two- and three-variable topology functions.
    pub fn eval_in(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Result<i64, EvalError> {
        Ok(match self {
            Expr::Int(n) => *n,
            Expr::Var(x) => lookup(x).ok_or_else(|| EvalError::UnboundVariable(x.clone()))?,
            Expr::Eq(a, b) => (a.eval_in(lookup)? == b.eval_in(lookup)?) as i64,
            Expr::Add(a, b) => a
                .eval_in(lookup)?
                .checked_add(b.eval_in(lookup)?)
                .ok_or(EvalError::Overflow)?,
            Expr::Neg(a) => a.eval_in(lookup)?.checked_neg().ok_or(EvalError::Overflow)?,
            Expr::Mul(a, b) => a
                .eval_in(lookup)?
                .checked_mul(b.eval_in(lookup)?)
                .ok_or(EvalError::Overflow)?,
            Expr::Div(a, b) => {
                let num = a.eval_in(lookup)?;
                let den = b.eval_in(lookup)?;
                if den == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                num.checked_div_euclid(den).ok_or(EvalError::Overflow)?
            }
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Var(x) => f.write_str(x),
            Expr::Eq(a, b) => write!(f, "({a} = {b})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} div {b})"),
            Expr::Neg(a) => write!(f, "-({a})"),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Expr::Int(n) => s.serialize_i64(*n),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Ok(Expr::Int(n)),
            Repr::Text(t) => Expr::parse(&t).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("expression syntax error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(u64),
    Ident(String),
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Div,
    Equals,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        let bytes = src.as_bytes();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let start = i;
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    i += 1;
                    continue;
                }
                b'(' => toks.push((start, Tok::LParen)),
                b')' => toks.push((start, Tok::RParen)),
                b'+' => toks.push((start, Tok::Plus)),
                b'-' => toks.push((start, Tok::Minus)),
                b'*' => toks.push((start, Tok::Star)),
                b'/' => toks.push((start, Tok::Div)),
                b'=' => {
                    if bytes.get(i + 1) == Some(&b'=') {
                        i += 1;
                    }
                    toks.push((start, Tok::Equals));
                }
                b'0'..=b'9' => {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    let n = src[start..i].parse::<u64>().map_err(|_| ParseError {
                        pos: start,
                        msg: "integer literal out of range".into(),
                    })?;
                    toks.push((start, Tok::Num(n)));
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    let word = &src[start..i];
                    toks.push((
                        start,
                        if word == "div" {
                            Tok::Div
                        } else {
                            Tok::Ident(word.to_owned())
                        },
                    ));
                    continue;
                }
                _ => {
                    return Err(ParseError {
                        pos: start,
                        msg: format!("unexpected character `{}`", c as char),
                    })
                }
            }
            i += 1;
        }
        Ok(Parser {
            toks,
            at: 0,
            end: src.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: &str) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos(),
            msg: msg.to_owned(),
        })
    }

    fn parse_all(mut self) -> Result<Expr, ParseError> {
        let e = self.parse_eq()?;
        if self.at != self.toks.len() {
            return self.err("trailing input");
        }
        Ok(e)
    }

    fn parse_eq(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_add()?;
        while self.peek() == Some(&Tok::Equals) {
            self.at += 1;
            let rhs = self.parse_add()?;
            lhs = Expr::eq(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_mul()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.at += 1;
                    lhs = Expr::add(lhs, self.parse_mul()?);
                }
                Some(Tok::Minus) => {
                    self.at += 1;
                    lhs = Expr::sub(lhs, self.parse_mul()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.at += 1;
                    lhs = Expr::mul(lhs, self.parse_unary()?);
                }
                Some(Tok::Div) => {
                    self.at += 1;
                    lhs = Expr::div(lhs, self.parse_unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.at += 1;
            if let Some(Tok::Num(n)) = self.peek().cloned() {
                self.at += 1;
                let v = -(n as i128);
                return i64::try_from(v)
                    .map(Expr::Int)
                    .or_else(|_| self.err("integer literal out of range"));
            }
            return Ok(Expr::neg(self.parse_unary()?));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.at += 1;
                i64::try_from(n)
                    .map(Expr::Int)
                    .or_else(|_| self.err("integer literal out of range"))
            }
            Some(Tok::Ident(x)) => {
                self.at += 1;
                Ok(Expr::Var(x))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let e = self.parse_eq()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.at += 1;
                Ok(e)
            }
            _ => self.err("expected an expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(pairs: &[(&str, i64)]) -> Env {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn literal_arithmetic() {
        let e = Expr::add(Expr::int(2), Expr::mul(Expr::int(3), Expr::int(4)));
        assert_eq!(e.eval(&Env::new()), Ok(14));
    }

    #[test]
    fn variable_lookup() {
        let e = Expr::var("rank");
        assert_eq!(e.eval(&env(&[("rank", 3), ("size", 4)])), Ok(3));
    }

    #[test]
    fn equality_yields_one_or_zero() {
        assert_eq!(Expr::eq(Expr::int(5), Expr::int(5)).eval(&Env::new()), Ok(1));
        assert_eq!(Expr::eq(Expr::int(5), Expr::int(6)).eval(&Env::new()), Ok(0));
    }

    #[test]
    fn errors_are_not_values() {
        let e = Expr::div(Expr::int(1), Expr::int(0));
        assert_eq!(e.eval(&Env::new()), Err(EvalError::DivisionByZero));
        assert_eq!(
            Expr::var("x").eval(&Env::new()),
            Err(EvalError::UnboundVariable("x".into()))
        );
        let big = Expr::mul(Expr::int(i64::MAX), Expr::int(2));
        assert_eq!(big.eval(&Env::new()), Err(EvalError::Overflow));
    }

    #[test]
    fn division_is_euclidean() {
        let e = Expr::parse("-7 div 2").unwrap();
        assert_eq!(e.eval(&Env::new()), Ok(-4));
    }

    #[test]
    fn infix_syntax() {
        let e = Expr::parse("tag * (size - 1) + 2 == 8").unwrap();
        assert_eq!(e.eval(&env(&[("tag", 2), ("size", 4)])), Ok(1));
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("1 $ 2").is_err());
        assert_eq!(Expr::parse("-9223372036854775808"), Ok(Expr::Int(i64::MIN)));
        assert!(Expr::parse("9223372036854775808").is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Expr::Int),
            "[a-z][a-z0-9_]{0,4}"
                .prop_filter("keyword", |s| s != "div")
                .prop_map(Expr::Var),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::eq(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
                inner.prop_map(Expr::neg),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parses_back(e in arb_expr()) {
            prop_assert_eq!(Expr::parse(&e.to_string()), Ok(e));
        }

        #[test]
        fn evaluation_is_deterministic(e in arb_expr(), x in -50i64..50) {
            let mut vars = Vec::new();
            e.reads(&mut vars);
            let env: Env = vars.into_iter().map(|v| (v.to_owned(), x)).collect();
            prop_assert_eq!(e.eval(&env), e.eval(&env));
        }
    }
}
