//! Linear constraints, guards and affine parameter expressions.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Operator obtained when both sides are multiplied by a negative number.
    pub fn flipped(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn is_strict(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Gt)
    }

    /// True for `<`/`<=`, i.e. the constraint bounds its left side from above.
    pub fn is_upper(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Le)
    }
}

/// `Σ coeff·name  op  rhs`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(f64, String)>,
    pub op: CmpOp,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(f64, String)>, op: CmpOp, rhs: f64) -> Self {
        Self { terms, op, rhs }
    }

    /// Single-variable constraint `name op rhs`.
    pub fn var(name: &str, op: CmpOp, rhs: f64) -> Self {
        Self::new(vec![(1.0, name.to_string())], op, rhs)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(_, n)| n.as_str())
    }

    /// Evaluate against a lookup; `None` when a name is unknown.
    pub fn eval(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<bool> {
        let mut lhs = 0.0;
        for (c, n) in &self.terms {
            lhs += c * lookup(n)?;
        }
        Some(self.op.holds(lhs, self.rhs))
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, n)) in self.terms.iter().enumerate() {
            let (neg, mag) = (*c < 0.0, c.abs());
            match (i, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            if mag == 1.0 {
                write!(f, "{n}")?;
            } else {
                write!(f, "{}*{n}", fmt_num(mag))?;
            }
        }
        write!(f, " {} {}", self.op.symbol(), fmt_num(self.rhs))
    }
}

/// Conjunction of linear constraints; empty means `true`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Guard(pub Vec<LinearConstraint>);

impl Guard {
    pub fn always() -> Self {
        Self(Vec::new())
    }

    pub fn is_trivial(&self) -> bool {
        self.0.is_empty()
    }

    pub fn and(mut self, c: LinearConstraint) -> Self {
        self.0.push(c);
        self
    }

    pub fn eval(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<bool> {
        let mut all = true;
        for c in &self.0 {
            all &= c.eval(&lookup)?;
        }
        Some(all)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "true");
        }
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Affine expression `constant + coeff·param` used for weights and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamExpr {
    pub constant: f64,
    pub coeff: f64,
    pub param: Option<String>,
}

impl ParamExpr {
    pub fn constant(v: f64) -> Self {
        Self { constant: v, coeff: 0.0, param: None }
    }

    pub fn param(name: &str) -> Self {
        Self { constant: 0.0, coeff: 1.0, param: Some(name.to_string()) }
    }

    /// `1 - name`
    pub fn complement(name: &str) -> Self {
        Self { constant: 1.0, coeff: -1.0, param: Some(name.to_string()) }
    }

    pub fn eval(&self, lookup: impl Fn(&str) -> Option<f64>) -> Option<f64> {
        match &self.param {
            None => Some(self.constant),
            Some(p) => Some(self.constant + self.coeff * lookup(p)?),
        }
    }
}

impl fmt::Display for ParamExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(p) = &self.param else {
            return write!(f, "{}", fmt_num(self.constant));
        };
        let has_const = self.constant != 0.0;
        if has_const {
            write!(f, "{}", fmt_num(self.constant))?;
        }
        let (neg, mag) = (self.coeff < 0.0, self.coeff.abs());
        if neg {
            write!(f, "-")?;
        } else if has_const {
            write!(f, "+")?;
        }
        if mag == 1.0 {
            write!(f, "{p}")
        } else {
            write!(f, "{}*{p}", fmt_num(mag))
        }
    }
}

/// Shortest round-trippable decimal rendering.
pub fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
