//! Textual model format.
//!
//! ```text
//! automaton physician controller
//! param alpha in [0,1] = 0.5
//! location idle
//! location acting_A rate lambda
//! edge idle -> acting_A on TV^low?
//! edge acting_A -> monitoring on on! guard r_on < 1 weight 1
//! initial idle
//! ```
//!
//! A file holds one or more automata; `#` starts a comment.

use std::fmt::Write as _;

use thiserror::Error;

use super::expr::fmt_num;
use super::{ActionKind, CmpOp, Edge, FlowCondition, Guard, LinearConstraint, Location, Param, ParamExpr, Sha, Variable};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

const SYMBOLS: [&str; 17] =
    ["->", ":=", "<=", ">=", "<", ">", "!", "?", "[", "]", ",", "=", "+", "-", "*", "/", "&"];

const KEYWORDS: [&str; 9] = ["rate", "flow", "invariant", "guard", "weight", "reset", "fixed", "on", "noise"];

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '^'
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    'outer: while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let col = i + 1;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
            let v = text.parse::<f64>().map_err(|_| ParseError {
                line: line_no,
                col,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token { tok: Tok::Num(v), col });
            continue;
        }
        for s in SYMBOLS {
            let n = s.len();
            if i + n <= chars.len() && chars[i..i + n].iter().copied().eq(s.chars()) {
                out.push(Token { tok: Tok::Sym(s), col });
                i += n;
                continue 'outer;
            }
        }
        return Err(ParseError { line: line_no, col, message: format!("unexpected character `{c}`") });
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let col = self.toks.get(self.pos).map_or(self.end_col, |t| t.col);
        Err(ParseError { line: self.line, col, message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn at_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == k)
    }

    fn sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.at_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn kw(&mut self, k: &str) -> Result<(), ParseError> {
        if self.at_kw(k) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{k}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    /// `[-] num [/ num]`
    fn number(&mut self) -> Result<f64, ParseError> {
        let neg = if self.at_sym("-") {
            self.pos += 1;
            true
        } else {
            false
        };
        let v = match self.peek() {
            Some(Tok::Num(v)) => *v,
            _ => return self.err("expected number"),
        };
        self.pos += 1;
        let v = if self.at_sym("/") {
            self.pos += 1;
            match self.peek() {
                Some(Tok::Num(d)) if *d != 0.0 => {
                    let d = *d;
                    self.pos += 1;
                    v / d
                }
                _ => return self.err("expected nonzero denominator"),
            }
        } else {
            v
        };
        Ok(if neg { -v } else { v })
    }

    /// `term (('+'|'-') term)*`, `term = num ['*' ident] | ident`, one parameter at most.
    fn param_expr(&mut self) -> Result<ParamExpr, ParseError> {
        let mut e = ParamExpr::constant(0.0);
        let mut sign = 1.0;
        if self.at_sym("-") {
            self.pos += 1;
            sign = -1.0;
        }
        loop {
            let (coeff, name) = match self.peek() {
                Some(Tok::Ident(n)) if !KEYWORDS.contains(&n.as_str()) => {
                    let n = n.clone();
                    self.pos += 1;
                    (1.0, Some(n))
                }
                Some(Tok::Num(_)) => {
                    let v = self.number()?;
                    if self.at_sym("*") {
                        self.pos += 1;
                        (v, Some(self.ident("parameter name")?))
                    } else {
                        (v, None)
                    }
                }
                _ => return self.err("expected number or parameter"),
            };
            match name {
                None => e.constant += sign * coeff,
                Some(n) => {
                    if e.param.as_ref().is_some_and(|p| *p != n) {
                        return self.err("expression may reference one parameter only");
                    }
                    e.param = Some(n);
                    e.coeff += sign * coeff;
                }
            }
            if self.at_sym("+") {
                sign = 1.0;
            } else if self.at_sym("-") {
                sign = -1.0;
            } else {
                break;
            }
            self.pos += 1;
        }
        if e.param.is_some() && e.coeff == 0.0 {
            e.param = None;
        }
        Ok(e)
    }

    fn constraint(&mut self) -> Result<LinearConstraint, ParseError> {
        let mut terms: Vec<(f64, String)> = Vec::new();
        let mut sign = 1.0;
        if self.at_sym("-") {
            self.pos += 1;
            sign = -1.0;
        }
        loop {
            let (coeff, name) = match self.peek() {
                Some(Tok::Ident(n)) if !KEYWORDS.contains(&n.as_str()) => {
                    let n = n.clone();
                    self.pos += 1;
                    (1.0, n)
                }
                Some(Tok::Num(_)) => {
                    let v = self.number()?;
                    self.sym("*")?;
                    (v, self.ident("variable name")?)
                }
                _ => return self.err("expected variable term"),
            };
            terms.push((sign * coeff, name));
            if self.at_sym("+") {
                sign = 1.0;
            } else if self.at_sym("-") {
                sign = -1.0;
            } else {
                break;
            }
            self.pos += 1;
        }
        let op = match self.next() {
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => {
                self.pos -= 1;
                return self.err("expected comparison operator");
            }
        };
        let rhs = self.number()?;
        Ok(LinearConstraint { terms, op, rhs })
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        if self.at_kw("true") {
            self.pos += 1;
            return Ok(Guard::always());
        }
        let mut g = Guard::always();
        loop {
            g.0.push(self.constraint()?);
            if self.at_sym("&") {
                self.pos += 1;
            } else {
                return Ok(g);
            }
        }
    }
}

/// Parse a file holding one or more automata.
pub fn parse_network(text: &str) -> Result<Vec<Sha>, ParseError> {
    let mut out: Vec<Sha> = Vec::new();
    let mut saw_initial = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = tokenize(raw, line_no)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks: &toks, pos: 0, line: line_no, end_col: raw.chars().count() + 1 };
        let head = c.ident("declaration keyword")?;
        if head == "automaton" {
            if let Some(prev) = out.last() {
                if !saw_initial {
                    return Err(ParseError {
                        line: line_no,
                        col: 1,
                        message: format!("automaton `{}` has no initial location", prev.name),
                    });
                }
            }
            let name = c.ident("automaton name")?;
            let mut sha = Sha::new(&name);
            if c.at_kw("controller") {
                c.pos += 1;
                sha.controller = true;
            }
            if !c.done() {
                return c.err("unexpected trailing input");
            }
            out.push(sha);
            saw_initial = false;
            continue;
        }
        let Some(sha) = out.last_mut() else {
            return Err(ParseError { line: line_no, col: 1, message: "declaration outside automaton".into() });
        };
        match head.as_str() {
            "var" => {
                let name = c.ident("variable name")?;
                c.kw("unit")?;
                let unit = c.ident("unit")?;
                c.kw("init")?;
                let init = c.number()?;
                sha.variables.push(Variable { name, unit, init });
            }
            "param" => {
                let name = c.ident("parameter name")?;
                c.kw("in")?;
                c.sym("[")?;
                let lo = c.number()?;
                c.sym(",")?;
                let hi = c.number()?;
                c.sym("]")?;
                c.sym("=")?;
                let value = c.number()?;
                sha.params.push(Param { name, lo, hi, value });
            }
            "location" => {
                let id = c.ident("location id")?;
                let mut loc = Location::new(&id);
                while !c.done() {
                    if c.at_kw("rate") {
                        c.pos += 1;
                        loc.rate = Some(c.param_expr()?);
                    } else if c.at_kw("flow") {
                        c.pos += 1;
                        let var = c.ident("flow variable")?;
                        c.kw("a")?;
                        let a = c.number()?;
                        c.kw("b")?;
                        let b = c.number()?;
                        let noise_std = if c.at_kw("noise") {
                            c.pos += 1;
                            c.number()?
                        } else {
                            0.0
                        };
                        loc.flows.push(FlowCondition { var, a, b, noise_std });
                    } else if c.at_kw("invariant") {
                        c.pos += 1;
                        loc.invariant = c.guard()?;
                    } else {
                        return c.err("expected `rate`, `flow` or `invariant`");
                    }
                }
                sha.locations.push(loc);
            }
            "edge" => {
                let src = c.ident("source location")?;
                c.sym("->")?;
                let dst = c.ident("target location")?;
                c.kw("on")?;
                let action = c.ident("action name")?;
                let kind = if c.at_sym("!") {
                    ActionKind::Output
                } else if c.at_sym("?") {
                    ActionKind::Input
                } else {
                    return c.err("expected `!` or `?` after action");
                };
                c.pos += 1;
                let mut e = Edge::new(&src, &dst, &action, kind);
                while !c.done() {
                    if c.at_kw("guard") {
                        c.pos += 1;
                        e.guard = c.guard()?;
                    } else if c.at_kw("weight") {
                        c.pos += 1;
                        e.weight = c.param_expr()?;
                    } else if c.at_kw("reset") {
                        c.pos += 1;
                        let var = c.ident("reset variable")?;
                        c.sym(":=")?;
                        let v = c.number()?;
                        e.resets.push((var, v));
                    } else if c.at_kw("fixed") {
                        c.pos += 1;
                        e.removable = false;
                    } else {
                        return c.err("expected `guard`, `weight`, `reset` or `fixed`");
                    }
                }
                sha.edges.push(e);
            }
            "initial" => {
                sha.initial = c.ident("initial location")?;
                saw_initial = true;
            }
            other => {
                c.pos -= 1;
                return c.err(format!("unknown declaration `{other}`"));
            }
        }
        if !c.done() {
            return c.err("unexpected trailing input");
        }
    }
    match out.last() {
        None => Err(ParseError { line: 1, col: 1, message: "no automaton declared".into() }),
        Some(s) if !saw_initial => Err(ParseError {
            line: text.lines().count().max(1),
            col: 1,
            message: format!("automaton `{}` has no initial location", s.name),
        }),
        _ => Ok(out),
    }
}

/// Parse a file that must hold exactly one automaton.
pub fn parse_sha(text: &str) -> Result<Sha, ParseError> {
    let mut v = parse_network(text)?;
    if v.len() != 1 {
        return Err(ParseError { line: 1, col: 1, message: format!("expected one automaton, found {}", v.len()) });
    }
    Ok(v.remove(0))
}

/// Canonical text of one automaton.
pub fn serialize_sha(sha: &Sha) -> String {
    let mut s = String::new();
    let _ = write!(s, "automaton {}", sha.name);
    if sha.controller {
        s.push_str(" controller");
    }
    s.push('\n');
    for v in &sha.variables {
        let _ = writeln!(s, "var {} unit {} init {}", v.name, v.unit, fmt_num(v.init));
    }
    for p in &sha.params {
        let _ = writeln!(s, "param {} in [{},{}] = {}", p.name, fmt_num(p.lo), fmt_num(p.hi), fmt_num(p.value));
    }
    for l in &sha.locations {
        let _ = write!(s, "location {}", l.id);
        if let Some(r) = &l.rate {
            let _ = write!(s, " rate {r}");
        }
        for f in &l.flows {
            let _ = write!(s, " flow {} a {} b {} noise {}", f.var, fmt_num(f.a), fmt_num(f.b), fmt_num(f.noise_std));
        }
        if !l.invariant.is_trivial() {
            let _ = write!(s, " invariant {}", l.invariant);
        }
        s.push('\n');
    }
    for e in &sha.edges {
        let mark = match e.kind {
            ActionKind::Output => '!',
            ActionKind::Input => '?',
        };
        let _ = write!(s, "edge {} -> {} on {}{}", e.src, e.dst, e.action, mark);
        if !e.guard.is_trivial() {
            let _ = write!(s, " guard {}", e.guard);
        }
        if e.weight != ParamExpr::constant(1.0) {
            let _ = write!(s, " weight {}", e.weight);
        }
        for (v, val) in &e.resets {
            let _ = write!(s, " reset {v}:={}", fmt_num(*val));
        }
        if !e.removable {
            s.push_str(" fixed");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "initial {}", sha.initial);
    s
}

/// Canonical text of several automata, separated by blank lines.
pub fn serialize_network(shas: &[Sha]) -> String {
    shas.iter().map(serialize_sha).collect::<Vec<_>>().join("\n")
}
