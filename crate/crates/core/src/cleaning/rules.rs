//! Process/machine constraint rules.
//!
//! Four expression shapes are accepted, over canonical parameter names
//! (names containing spaces or operators can be double-quoted):
//!
//! - ratio:  `A / B = c`
//! - bound:  `lo <= A <= hi`
//! - fixed:  `A = c`
//! - linear: `A = a * B + b` (also `A = B`, `A = a * B`, `A = B - b`)

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Ratio,
    Bound,
    Fixed,
    Linear,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleKind::Ratio => "ratio",
            RuleKind::Bound => "bound",
            RuleKind::Fixed => "fixed",
            RuleKind::Linear => "linear",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRule {
    pub kind: RuleKind,
    pub expression: String,
    #[serde(default)]
    pub tolerance: f64,
}

impl ConstraintRule {
    pub fn new(kind: RuleKind, expression: impl Into<String>, tolerance: f64) -> Self {
        Self { kind, expression: expression.into(), tolerance }
    }

    /// Parses the expression and checks it matches the declared kind.
    pub fn parse(&self) -> Result<ParsedRule> {
        if !(self.tolerance >= 0.0) {
            return Err(self.invalid("tolerance must be >= 0"));
        }
        let parsed = parse_expression(&self.expression).map_err(|m| self.invalid(&m))?;
        if parsed.kind() != self.kind {
            return Err(self.invalid(&format!(
                "declared as {} but the expression is a {} rule",
                self.kind,
                parsed.kind()
            )));
        }
        Ok(parsed)
    }

    fn invalid(&self, message: &str) -> Error {
        Error::InvalidRule { expression: self.expression.clone(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedRule {
    Ratio { target: String, source: String, value: f64 },
    Bound { param: String, lo: f64, hi: f64 },
    Fixed { target: String, value: f64 },
    Linear { target: String, source: String, slope: f64, intercept: f64 },
}

impl ParsedRule {
    pub fn kind(&self) -> RuleKind {
        match self {
            ParsedRule::Ratio { .. } => RuleKind::Ratio,
            ParsedRule::Bound { .. } => RuleKind::Bound,
            ParsedRule::Fixed { .. } => RuleKind::Fixed,
            ParsedRule::Linear { .. } => RuleKind::Linear,
        }
    }

    pub fn params(&self) -> Vec<&str> {
        match self {
            ParsedRule::Ratio { target, source, .. } | ParsedRule::Linear { target, source, .. } => {
                vec![target, source]
            }
            ParsedRule::Bound { param, .. } => vec![param],
            ParsedRule::Fixed { target, .. } => vec![target],
        }
    }

    /// The column this rule fully determines, with the columns it is
    /// computed from.
    pub fn determined(&self) -> Option<(&str, Vec<&str>)> {
        match self {
            ParsedRule::Ratio { target, source, .. } | ParsedRule::Linear { target, source, .. } => {
                Some((target, vec![source]))
            }
            ParsedRule::Fixed { target, .. } => Some((target, vec![])),
            ParsedRule::Bound { .. } => None,
        }
    }

    /// Value of the determined column given its sources.
    pub fn compute(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<f64> {
        match self {
            ParsedRule::Ratio { source, value, .. } => lookup(source).map(|b| value * b),
            ParsedRule::Linear { source, slope, intercept, .. } => lookup(source).map(|b| slope * b + intercept),
            ParsedRule::Fixed { value, .. } => Some(*value),
            ParsedRule::Bound { .. } => None,
        }
    }

    /// Violation magnitude in the rule's natural form; 0 when satisfied
    /// exactly, `None` when a referenced value is unavailable.
    pub fn residual(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<f64> {
        match self {
            ParsedRule::Ratio { target, source, value } => {
                let (a, b) = (lookup(target)?, lookup(source)?);
                if b == 0.0 {
                    return Some(if a == 0.0 { 0.0 } else { f64::INFINITY });
                }
                Some((a / b - value).abs())
            }
            ParsedRule::Bound { param, lo, hi } => {
                let a = lookup(param)?;
                Some((lo - a).max(a - hi).max(0.0))
            }
            ParsedRule::Fixed { target, value } => Some((lookup(target)? - value).abs()),
            ParsedRule::Linear { target, source, slope, intercept } => {
                Some((lookup(target)? - (slope * lookup(source)? + intercept)).abs())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Op(&'static str),
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' {
            let end = chars[i + 1..]
                .iter()
                .position(|&d| d == '"')
                .ok_or("unterminated quoted name")?;
            out.push(Tok::Ident(chars[i + 1..i + 1 + end].iter().collect()));
            i += end + 2;
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
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number `{text}`"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || "_@.".contains(chars[i])) {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = match (c, two.as_str()) {
                (_, "<=") => "<=",
                (_, ">=") => ">=",
                ('<', _) => "<",
                ('>', _) => ">",
                ('=', _) => "=",
                ('/', _) => "/",
                ('*', _) => "*",
                ('+', _) => "+",
                ('-', _) => "-",
                _ => return Err(format!("unexpected character `{c}`")),
            };
            i += op.len();
            out.push(Tok::Op(op));
        }
    }
    Ok(out)
}

/// Parses a signed number at the start of `toks`, returning it and the rest.
fn signed_num(toks: &[Tok]) -> Option<(f64, &[Tok])> {
    match toks {
        [Tok::Op("-"), Tok::Num(v), rest @ ..] => Some((-v, rest)),
        [Tok::Op("+"), Tok::Num(v), rest @ ..] => Some((*v, rest)),
        [Tok::Num(v), rest @ ..] => Some((*v, rest)),
        _ => None,
    }
}

fn parse_expression(expr: &str) -> std::result::Result<ParsedRule, String> {
    let toks = tokenize(expr)?;
    if toks.iter().any(|t| matches!(t, Tok::Op("<" | "<=" | ">" | ">="))) {
        let (lo, rest) = signed_num(&toks).ok_or("bound rule must start with a number")?;
        match rest {
            [Tok::Op("<" | "<="), Tok::Ident(p), Tok::Op("<" | "<="), tail @ ..] => {
                let (hi, tail) = signed_num(tail).ok_or("bound rule must end with a number")?;
                if !tail.is_empty() {
                    return Err("trailing tokens after bound".into());
                }
                if lo > hi {
                    return Err(format!("empty bound [{lo}, {hi}]"));
                }
                return Ok(ParsedRule::Bound { param: p.clone(), lo, hi });
            }
            _ => return Err("bound rules have the form `lo <= name <= hi`".into()),
        }
    }
    let eq = toks
        .iter()
        .position(|t| *t == Tok::Op("="))
        .ok_or("expected `=`")?;
    let (lhs, rhs) = (&toks[..eq], &toks[eq + 1..]);
    match lhs {
        [Tok::Ident(a), Tok::Op("/"), Tok::Ident(b)] => {
            let (value, rest) = signed_num(rhs).ok_or("ratio rule needs a numeric right-hand side")?;
            if !rest.is_empty() {
                return Err("trailing tokens after ratio value".into());
            }
            Ok(ParsedRule::Ratio { target: a.clone(), source: b.clone(), value })
        }
        [Tok::Ident(a)] => parse_affine_rhs(a, rhs),
        _ => Err("left-hand side must be `name` or `name / name`".into()),
    }
}

fn parse_affine_rhs(target: &str, rhs: &[Tok]) -> std::result::Result<ParsedRule, String> {
    if let Some((value, [])) = signed_num(rhs) {
        return Ok(ParsedRule::Fixed { target: target.into(), value });
    }
    let (slope, rest) = match rhs {
        [Tok::Ident(_), ..] => (1.0, rhs),
        [Tok::Op("-"), Tok::Ident(_), ..] => (-1.0, &rhs[1..]),
        _ => {
            let (a, rest) = signed_num(rhs).ok_or("expected a number or a name")?;
            match rest {
                [Tok::Op("*"), tail @ ..] => (a, tail),
                _ => return Err("expected `*` after the slope".into()),
            }
        }
    };
    let (source, rest) = match rest {
        [Tok::Ident(b), tail @ ..] => (b.clone(), tail),
        _ => return Err("expected a parameter name".into()),
    };
    let intercept = match rest {
        [] => 0.0,
        [Tok::Op("+"), Tok::Num(v)] => *v,
        [Tok::Op("-"), Tok::Num(v)] => -v,
        _ => return Err("expected `+ b` or `- b` after the parameter".into()),
    };
    if source == target {
        return Err("a linear rule cannot reference its own target".into());
    }
    Ok(ParsedRule::Linear { target: target.into(), source, slope, intercept })
}
