//! Pipeline grammar:
//!
//! ```text
//! expr  := NAME | NAME '(' args ')'
//! args  := arg (',' arg)*
//! arg   := value | NAME '=' value
//! value := expr | NUMBER | '[' expr (',' expr)* ']'
//! ```

use std::collections::BTreeMap;

use crate::composition::expr::{Expr, VoteMode};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::mitigation::{CostConstraint, LfrParams, MitigatorKind, MitigatorSpec, PrejudiceParams};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Open,
    Close,
    LBracket,
    RBracket,
    Comma,
    Eq,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::Open, i)),
            b')' => out.push((Tok::Close, i)),
            b'[' => out.push((Tok::LBracket, i)),
            b']' => out.push((Tok::RBracket, i)),
            b',' => out.push((Tok::Comma, i)),
            b'=' => out.push((Tok::Eq, i)),
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            c if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' => {
                i += 1;
                while i < b.len() {
                    let d = b[i];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(b[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", text[i..].chars().next().unwrap_or('?')),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Term {
    Call {
        name: String,
        offset: usize,
        args: Option<Vec<Arg>>,
    },
    Num(f64, usize),
    List(Vec<Term>, usize),
}

#[derive(Debug, Clone)]
struct Arg {
    key: Option<(String, usize)>,
    value: Term,
}

impl Term {
    fn offset(&self) -> usize {
        match self {
            Term::Call { offset, .. } | Term::Num(_, offset) | Term::List(_, offset) => *offset,
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.1)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        let message = if self.pos >= self.toks.len() {
            format!("{} at end of input", message.into())
        } else {
            message.into()
        };
        Err(Error::Syntax {
            offset: self.offset(),
            message,
        })
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn value(&mut self) -> Result<Term> {
        let off = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Term::Num(v, off))
            }
            Some(Tok::LBracket) => {
                self.pos += 1;
                let mut items = vec![self.value()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    items.push(self.value()?);
                }
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Term::List(items, off))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() != Some(&Tok::Open) {
                    return Ok(Term::Call { name, offset: off, args: None });
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() != Some(&Tok::Close) {
                    args.push(self.arg()?);
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.arg()?);
                    }
                }
                self.expect(Tok::Close, "`)` or `,`")?;
                Ok(Term::Call {
                    name,
                    offset: off,
                    args: Some(args),
                })
            }
            _ => self.fail("expected a name, number or list"),
        }
    }

    fn arg(&mut self) -> Result<Arg> {
        if let (Some((Tok::Ident(k), off)), Some((Tok::Eq, _))) = (self.toks.get(self.pos), self.toks.get(self.pos + 1)) {
            let key = Some((k.clone(), *off));
            self.pos += 2;
            return Ok(Arg { key, value: self.value()? });
        }
        Ok(Arg { key: None, value: self.value()? })
    }
}

fn syntax<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Syntax {
        offset,
        message: message.into(),
    })
}

/// Splits arguments into positional values and keyword values, rejecting
/// positionals after keywords and repeated keys.
fn split_args(args: Vec<Arg>) -> Result<(Vec<Term>, BTreeMap<String, (Term, usize)>)> {
    let mut pos = Vec::new();
    let mut kw = BTreeMap::new();
    for a in args {
        match a.key {
            None if !kw.is_empty() => return syntax(a.value.offset(), "positional argument after keyword argument"),
            None => pos.push(a.value),
            Some((k, off)) => {
                if kw.insert(k.clone(), (a.value, off)).is_some() {
                    return syntax(off, format!("repeated argument `{k}`"));
                }
            }
        }
    }
    Ok((pos, kw))
}

fn number(t: &Term, what: &str) -> Result<f64> {
    match t {
        Term::Num(v, _) => Ok(*v),
        other => syntax(other.offset(), format!("{what} must be a number")),
    }
}

fn count(t: &Term, what: &str) -> Result<usize> {
    let v = number(t, what)?;
    if v.fract() != 0.0 || v < 1.0 {
        return syntax(t.offset(), format!("{what} must be a positive integer, got {v}"));
    }
    Ok(v as usize)
}

fn word(t: &Term, what: &str) -> Result<String> {
    match t {
        Term::Call { name, args: None, .. } => Ok(name.clone()),
        other => syntax(other.offset(), format!("{what} must be a bare word")),
    }
}

fn boolean(t: &Term, what: &str) -> Result<bool> {
    match word(t, what)?.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => syntax(t.offset(), format!("{what} must be true or false")),
    }
}

/// Binds positional and keyword arguments to parameter names.
fn bind(
    name: &str,
    offset: usize,
    args: Option<Vec<Arg>>,
    params: &[&str],
    required: usize,
) -> Result<BTreeMap<String, Term>> {
    let (pos, kw) = split_args(args.unwrap_or_default())?;
    if pos.len() > params.len() {
        return syntax(pos[params.len()].offset(), format!("too many arguments to {name}"));
    }
    let mut out: BTreeMap<String, Term> = BTreeMap::new();
    for (p, v) in params.iter().zip(pos) {
        out.insert((*p).to_string(), v);
    }
    for (k, (v, off)) in kw {
        if !params.contains(&k.as_str()) {
            return syntax(off, format!("{name} has no argument `{k}`"));
        }
        if out.insert(k.clone(), v).is_some() {
            return syntax(off, format!("argument `{k}` given twice"));
        }
    }
    for p in &params[..required] {
        if !out.contains_key(*p) {
            return syntax(offset, format!("{name} requires `{p}`"));
        }
    }
    Ok(out)
}

const MITIGATORS: [&str; 5] = ["Reweigh", "DIR", "LFR", "PR", "CEO"];

fn mitigator(t: Term) -> Result<MitigatorSpec> {
    let Term::Call { name, offset, args } = t else {
        return syntax(t.offset(), "expected a mitigator");
    };
    match name.as_str() {
        "Reweigh" => {
            bind(&name, offset, args, &[], 0)?;
            Ok(MitigatorSpec::Reweigh)
        }
        "DIR" => {
            let a = bind(&name, offset, args, &["level"], 0)?;
            let level = a.get("level").map_or(Ok(1.0), |t| number(t, "level"))?;
            if !(0.0..=1.0).contains(&level) {
                return syntax(offset, format!("repair level {level} outside [0, 1]"));
            }
            Ok(MitigatorSpec::Dir { level })
        }
        "LFR" => {
            let a = bind(&name, offset, args, &["k", "Ax", "Ay", "Az", "max_iter", "restarts"], 0)?;
            let mut p = LfrParams::default();
            if let Some(t) = a.get("k") {
                p.k = count(t, "k")?;
                if p.k < 2 {
                    return syntax(t.offset(), "LFR needs k >= 2");
                }
            }
            for (key, slot) in [("Ax", &mut p.ax), ("Ay", &mut p.ay), ("Az", &mut p.az)] {
                if let Some(t) = a.get(key) {
                    let v = number(t, key)?;
                    if v < 0.0 {
                        return syntax(t.offset(), format!("{key} must be nonnegative"));
                    }
                    *slot = v;
                }
            }
            if let Some(t) = a.get("max_iter") {
                p.max_iter = count(t, "max_iter")?;
            }
            if let Some(t) = a.get("restarts") {
                p.restarts = count(t, "restarts")?;
            }
            Ok(MitigatorSpec::Lfr(p))
        }
        "PR" => {
            let a = bind(&name, offset, args, &["eta", "l2", "max_iter"], 0)?;
            let mut p = PrejudiceParams::default();
            if let Some(t) = a.get("eta") {
                p.eta = number(t, "eta")?;
                if p.eta < 0.0 {
                    return syntax(t.offset(), "eta must be nonnegative");
                }
            }
            if let Some(t) = a.get("l2") {
                p.l2 = number(t, "l2")?;
                if p.l2 < 0.0 {
                    return syntax(t.offset(), "l2 must be nonnegative");
                }
            }
            if let Some(t) = a.get("max_iter") {
                p.max_iter = count(t, "max_iter")?;
            }
            Ok(MitigatorSpec::Pr(p))
        }
        "CEO" => {
            let a = bind(&name, offset, args, &["cost"], 0)?;
            let cost = match a.get("cost") {
                None => CostConstraint::Weighted,
                Some(t) => word(t, "cost")?.parse().map_err(|_| Error::Syntax {
                    offset: t.offset(),
                    message: "cost must be weighted, fpr or fnr".into(),
                })?,
            };
            Ok(MitigatorSpec::Ceo { cost })
        }
        _ => Err(Error::UnknownName { name, offset }),
    }
}

fn members(t: Term, what: &str) -> Result<Vec<Expr>> {
    match t {
        Term::List(items, off) => {
            if items.len() < 2 {
                return syntax(off, format!("{what} needs at least two estimators"));
            }
            items.into_iter().map(expr).collect()
        }
        other => syntax(other.offset(), format!("{what} expects a list `[..]` of estimators")),
    }
}

fn expr(t: Term) -> Result<Expr> {
    let Term::Call { name, offset, args } = t else {
        return syntax(t.offset(), "expected an estimator");
    };
    if let Some(kind) = LearnerKind::from_short_name(&name) {
        let (pos, kw) = split_args(args.unwrap_or_default())?;
        if let Some(p) = pos.first() {
            return syntax(p.offset(), format!("{name} takes keyword arguments only"));
        }
        let mut params = BTreeMap::new();
        for (k, (v, _)) in kw {
            params.insert(k.clone(), number(&v, &k)?);
        }
        return LearnerSpec::from_params(kind, params)
            .map(Expr::Learner)
            .map_err(|e| Error::Syntax {
                offset,
                message: e.to_string(),
            });
    }
    match name.as_str() {
        "Pr" | "Post" => {
            let mut a = bind(&name, offset, args, &["mitigator", "estimator"], 2)?;
            let m_term = a.remove("mitigator").expect("bound");
            let m_off = m_term.offset();
            let m = mitigator(m_term)?;
            let inner = Box::new(expr(a.remove("estimator").expect("bound"))?);
            match (name.as_str(), m.kind()) {
                ("Pr", MitigatorKind::Pre) => Ok(Expr::Pre { mitigator: m, inner }),
                ("Post", MitigatorKind::Post) => Ok(Expr::Post { mitigator: m, inner }),
                _ => syntax(m_off, format!("{} is not a valid mitigator for {name}", m.name())),
            }
        }
        "In" => {
            let mut a = bind(&name, offset, args, &["mitigator", "estimator"], 1)?;
            let m_term = a.remove("mitigator").expect("bound");
            let m_off = m_term.offset();
            let m = mitigator(m_term)?;
            if m.kind() != MitigatorKind::In {
                return syntax(m_off, format!("{} is not an in-estimator mitigator", m.name()));
            }
            let inner = a.remove("estimator").map(expr).transpose()?.map(Box::new);
            Ok(Expr::In { mitigator: m, inner })
        }
        "PR" => Ok(Expr::In {
            mitigator: mitigator(Term::Call { name, offset, args })?,
            inner: None,
        }),
        "Bag" => {
            let mut a = bind(&name, offset, args, &["estimator", "n", "bootstrap"], 2)?;
            let inner = Box::new(expr(a.remove("estimator").expect("bound"))?);
            let n = count(&a.remove("n").expect("bound"), "n")?;
            let bootstrap = a.remove("bootstrap").map_or(Ok(true), |t| boolean(&t, "bootstrap"))?;
            Ok(Expr::Bag { inner, n, bootstrap })
        }
        "Boost" => {
            let mut a = bind(&name, offset, args, &["estimator", "n"], 2)?;
            let inner = Box::new(expr(a.remove("estimator").expect("bound"))?);
            let n = count(&a.remove("n").expect("bound"), "n")?;
            Ok(Expr::Boost { inner, n })
        }
        "Vote" => {
            let mut a = bind(&name, offset, args, &["estimators", "mode"], 1)?;
            let ms = members(a.remove("estimators").expect("bound"), "Vote")?;
            let mode = match a.remove("mode") {
                None => VoteMode::Hard,
                Some(t) => match word(&t, "mode")?.as_str() {
                    "hard" => VoteMode::Hard,
                    "soft" => VoteMode::Soft,
                    _ => return syntax(t.offset(), "mode must be hard or soft"),
                },
            };
            Ok(Expr::Vote { members: ms, mode })
        }
        "Stack" => {
            let mut a = bind(&name, offset, args, &["estimators", "final", "passthrough"], 2)?;
            let ms = members(a.remove("estimators").expect("bound"), "Stack")?;
            let final_estimator = Box::new(expr(a.remove("final").expect("bound"))?);
            let passthrough = a.remove("passthrough").map_or(Ok(false), |t| boolean(&t, "passthrough"))?;
            Ok(Expr::Stack {
                members: ms,
                final_estimator,
                passthrough,
            })
        }
        n if MITIGATORS.contains(&n) => syntax(offset, format!("mitigator {n} used where an estimator is expected")),
        _ => Err(Error::UnknownName { name, offset }),
    }
}

/// Parses a pipeline expression. Whitespace is insignificant and names are
/// case-sensitive.
pub fn parse(text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return syntax(0, "empty pipeline text");
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let term = p.value()?;
    if p.pos < p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    expr(term)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unterminated_call_reports_end_of_input() {
        match parse("Bag(tree") {
            Err(Error::Syntax { offset, message }) => {
                assert_eq!(offset, 8);
                assert!(message.contains("end of input"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_name_has_offset() {
        match parse("Bag(forest, 3)") {
            Err(Error::UnknownName { name, offset }) => {
                assert_eq!(name, "forest");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn names_are_case_sensitive() {
        assert!(matches!(parse("bag(tree, 3)"), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn whitespace_is_insignificant() {
        assert_eq!(parse(" Boost ( tree ,\n 2 ) ").unwrap(), parse("Boost(tree,2)").unwrap());
    }
}
