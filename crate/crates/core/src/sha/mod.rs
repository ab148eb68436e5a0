//! Stochastic hybrid automata: types, validation, textual DSL, network
//! composition and the executable firing/simulation semantics.

pub mod dsl;
pub mod expr;
pub mod flow;
pub mod network;
pub mod sim;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::FLAG_NAMES;
pub use expr::{CmpOp, Guard, LinearConstraint, ParamExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Controllable,
    Uncontrollable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    pub kind: ActionKind,
    pub control: Control,
}

/// `dx/dt = a·x + b` with `b ~ N(b, noise_std²)` drawn on location entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCondition {
    pub var: String,
    pub a: f64,
    pub b: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    /// Exponential exit rate; `None` means the location only exits on synchronization.
    pub rate: Option<ParamExpr>,
    pub flows: Vec<FlowCondition>,
    pub invariant: Guard,
}

impl Location {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string(), rate: None, flows: Vec::new(), invariant: Guard::always() }
    }

    pub fn with_rate(mut self, rate: ParamExpr) -> Self {
        self.rate = Some(rate);
        self
    }

    pub fn with_flow(mut self, var: &str, a: f64, b: f64, noise_std: f64) -> Self {
        self.flows.push(FlowCondition { var: var.to_string(), a, b, noise_std });
        self
    }

    pub fn with_invariant(mut self, c: LinearConstraint) -> Self {
        self.invariant.0.push(c);
        self
    }

    pub fn flow(&self, var: &str) -> Option<&FlowCondition> {
        self.flows.iter().find(|f| f.var == var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub action: String,
    pub kind: ActionKind,
    pub guard: Guard,
    pub weight: ParamExpr,
    pub resets: Vec<(String, f64)>,
    pub removable: bool,
}

impl Edge {
    pub fn new(src: &str, dst: &str, action: &str, kind: ActionKind) -> Self {
        Self {
            src: src.to_string(),
            dst: dst.to_string(),
            action: action.to_string(),
            kind,
            guard: Guard::always(),
            weight: ParamExpr::constant(1.0),
            resets: Vec::new(),
            removable: true,
        }
    }

    pub fn output(src: &str, dst: &str, action: &str) -> Self {
        Self::new(src, dst, action, ActionKind::Output)
    }

    pub fn input(src: &str, dst: &str, action: &str) -> Self {
        Self::new(src, dst, action, ActionKind::Input)
    }

    pub fn guarded(mut self, c: LinearConstraint) -> Self {
        self.guard.0.push(c);
        self
    }

    pub fn weighted(mut self, w: ParamExpr) -> Self {
        self.weight = w;
        self
    }

    pub fn reset(mut self, var: &str, v: f64) -> Self {
        self.resets.push((var.to_string(), v));
        self
    }

    pub fn fixed(mut self) -> Self {
        self.removable = false;
        self
    }

    /// Stable identifier `src->dst:action` used by constraint files and reports.
    pub fn id(&self) -> String {
        format!("{}->{}:{}", self.src, self.dst, self.action)
    }

    /// Key of the probabilistic choice group this edge belongs to.
    pub fn group_key(&self) -> (String, ActionKind, String, String) {
        let action = match self.kind {
            ActionKind::Input => self.action.clone(),
            ActionKind::Output => String::new(),
        };
        (self.src.clone(), self.kind, action, self.guard.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub unit: String,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sha {
    pub name: String,
    /// Marks the physician/device side whose outputs are controllable.
    pub controller: bool,
    pub variables: Vec<Variable>,
    pub params: Vec<Param>,
    pub locations: Vec<Location>,
    pub edges: Vec<Edge>,
    pub initial: String,
}

impl Sha {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            controller: false,
            variables: Vec::new(),
            params: Vec::new(),
            locations: Vec::new(),
            edges: Vec::new(),
            initial: String::new(),
        }
    }

    pub fn location(&self, id: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.id == id)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> bool {
        match self.params.iter_mut().find(|p| p.name == name) {
            Some(p) => {
                p.value = value;
                true
            }
            None => false,
        }
    }

    pub fn eval_expr(&self, e: &ParamExpr) -> Option<f64> {
        e.eval(|n| self.param(n))
    }

    /// Derived alphabet: one action per name, in first-use order.
    pub fn alphabet(&self) -> Vec<Action> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            if seen.insert(e.action.clone()) {
                let control = if e.kind == ActionKind::Output && self.controller {
                    Control::Controllable
                } else {
                    Control::Uncontrollable
                };
                out.push(Action { name: e.action.clone(), kind: e.kind, control });
            }
        }
        out
    }

    pub fn outputs(&self) -> Vec<String> {
        self.alphabet().into_iter().filter(|a| a.kind == ActionKind::Output).map(|a| a.name).collect()
    }

    pub fn inputs(&self) -> Vec<String> {
        self.alphabet().into_iter().filter(|a| a.kind == ActionKind::Input).map(|a| a.name).collect()
    }

    /// Indices of edges that structural mutation may remove.
    pub fn removable_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].removable).collect()
    }

    /// Copy with the removable edges whose mask bit is false dropped.
    pub fn with_edge_mask(&self, mask: &[bool]) -> Sha {
        let removable = self.removable_edges();
        let dropped: HashSet<usize> =
            removable.iter().zip(mask).filter(|(_, keep)| !**keep).map(|(i, _)| *i).collect();
        let mut out = self.clone();
        out.edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, e)| e.clone())
            .collect();
        out
    }

    /// Variables whose trajectories are governed by this automaton's flows.
    pub fn flow_variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.locations {
            for f in &l.flows {
                if !out.contains(&f.var) {
                    out.push(f.var.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    MissingInitial,
    DuplicateLocation,
    DuplicateVariable,
    DuplicateParam,
    DanglingEdge,
    UndeclaredName,
    UnknownParam,
    ParamOutOfBounds,
    NegativeWeight,
    WeightSum,
    NonPositiveRate,
    NegativeNoise,
    MixedActionKind,
    NonFinite,
    CoupledInvariant,
}

impl DiagnosticKind {
    pub fn describe(self) -> &'static str {
        match self {
            Self::MissingInitial => "initial location missing",
            Self::DuplicateLocation => "duplicate location",
            Self::DuplicateVariable => "duplicate variable",
            Self::DuplicateParam => "duplicate parameter",
            Self::DanglingEdge => "dangling edge",
            Self::UndeclaredName => "undeclared variable",
            Self::UnknownParam => "unknown parameter",
            Self::ParamOutOfBounds => "parameter out of bounds",
            Self::NegativeWeight => "negative weight",
            Self::WeightSum => "weights sum ≠ 1",
            Self::NonPositiveRate => "non-positive exit rate",
            Self::NegativeNoise => "negative noise stddev",
            Self::MixedActionKind => "action used as both input and output",
            Self::NonFinite => "non-finite coefficient",
            Self::CoupledInvariant => "invariant couples several flow variables",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub element: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.kind.describe(), self.element, self.message)
    }
}

pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Check every structural and numeric well-formedness rule.
pub fn validate_sha(sha: &Sha) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |kind, element: String, message: String| out.push(Diagnostic { kind, element, message });

    let mut locs = HashSet::new();
    for l in &sha.locations {
        if !locs.insert(l.id.as_str()) {
            diag(DiagnosticKind::DuplicateLocation, l.id.clone(), "declared twice".into());
        }
    }
    let mut vars = HashSet::new();
    for v in &sha.variables {
        if !vars.insert(v.name.as_str()) {
            diag(DiagnosticKind::DuplicateVariable, v.name.clone(), "declared twice".into());
        }
        if !v.init.is_finite() {
            diag(DiagnosticKind::NonFinite, v.name.clone(), "initial value".into());
        }
    }
    let mut params = HashSet::new();
    for p in &sha.params {
        if !params.insert(p.name.as_str()) {
            diag(DiagnosticKind::DuplicateParam, p.name.clone(), "declared twice".into());
        }
        if !(p.lo <= p.value && p.value <= p.hi) {
            diag(
                DiagnosticKind::ParamOutOfBounds,
                p.name.clone(),
                format!("value {} outside [{}, {}]", p.value, p.lo, p.hi),
            );
        }
    }
    if !locs.contains(sha.initial.as_str()) {
        diag(DiagnosticKind::MissingInitial, sha.initial.clone(), "not a declared location".into());
    }

    let known = |n: &str| vars.contains(n) || FLAG_NAMES.contains(&n);
    let check_expr = |e: &ParamExpr| -> Option<String> {
        match &e.param {
            Some(p) if !params.contains(p.as_str()) => Some(p.clone()),
            _ => None,
        }
    };

    for l in &sha.locations {
        if let Some(r) = &l.rate {
            if let Some(p) = check_expr(r) {
                diag(DiagnosticKind::UnknownParam, l.id.clone(), format!("rate uses `{p}`"));
            } else if let Some(v) = sha.eval_expr(r) {
                if !(v > 0.0 && v.is_finite()) {
                    diag(DiagnosticKind::NonPositiveRate, l.id.clone(), format!("rate {v}"));
                }
            }
        }
        let mut flow_vars = HashSet::new();
        for f in &l.flows {
            if !vars.contains(f.var.as_str()) {
                diag(DiagnosticKind::UndeclaredName, l.id.clone(), format!("flow on `{}`", f.var));
            }
            if !(f.a.is_finite() && f.b.is_finite() && f.noise_std.is_finite()) {
                diag(DiagnosticKind::NonFinite, l.id.clone(), format!("flow on `{}`", f.var));
            }
            if f.noise_std < 0.0 {
                diag(DiagnosticKind::NegativeNoise, l.id.clone(), format!("flow on `{}`", f.var));
            }
            flow_vars.insert(f.var.as_str());
        }
        for c in &l.invariant.0 {
            for n in c.names() {
                if !known(n) {
                    diag(DiagnosticKind::UndeclaredName, l.id.clone(), format!("invariant uses `{n}`"));
                }
            }
            if c.names().filter(|n| flow_vars.contains(n)).count() > 1 {
                diag(DiagnosticKind::CoupledInvariant, l.id.clone(), c.to_string());
            }
        }
    }

    let mut kinds: HashMap<&str, ActionKind> = HashMap::new();
    let mut groups: BTreeMap<(String, ActionKind, String, String), (f64, Vec<String>)> = BTreeMap::new();
    for e in &sha.edges {
        let id = e.id();
        for end in [&e.src, &e.dst] {
            if !locs.contains(end.as_str()) {
                diag(DiagnosticKind::DanglingEdge, id.clone(), format!("unknown location `{end}`"));
            }
        }
        if let Some(k) = kinds.get(e.action.as_str()) {
            if *k != e.kind {
                diag(DiagnosticKind::MixedActionKind, id.clone(), e.action.clone());
            }
        } else {
            kinds.insert(e.action.as_str(), e.kind);
        }
        for n in e.guard.0.iter().flat_map(|c| c.names()) {
            if !known(n) {
                diag(DiagnosticKind::UndeclaredName, id.clone(), format!("guard uses `{n}`"));
            }
        }
        for (v, val) in &e.resets {
            if !vars.contains(v.as_str()) {
                diag(DiagnosticKind::UndeclaredName, id.clone(), format!("reset of `{v}`"));
            }
            if !val.is_finite() {
                diag(DiagnosticKind::NonFinite, id.clone(), format!("reset of `{v}`"));
            }
        }
        if let Some(p) = check_expr(&e.weight) {
            diag(DiagnosticKind::UnknownParam, id.clone(), format!("weight uses `{p}`"));
            continue;
        }
        let w = sha.eval_expr(&e.weight).unwrap_or(f64::NAN);
        if !(w >= 0.0) {
            diag(DiagnosticKind::NegativeWeight, id.clone(), format!("weight {w}"));
        }
        let g = groups.entry(e.group_key()).or_insert((0.0, Vec::new()));
        g.0 += w;
        g.1.push(id);
    }
    for ((src, _, _, _), (sum, members)) in groups {
        // all-zero groups are fallback edges (sink completion) that never win a draw
        if sum != 0.0 && (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            diag(
                DiagnosticKind::WeightSum,
                src,
                format!("weights of [{}] sum to {sum}", members.join(", ")),
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShaError {
    #[error("input action `{0}` has no matching output in the network")]
    UnmatchedInput(String),
    #[error("event `{0}` is not enabled")]
    EventNotEnabled(String),
    #[error("event `{event}` has several weighted alternatives in `{automaton}` and no randomness source")]
    AmbiguousWithoutRng { event: String, automaton: String },
    #[error("numeric overflow while integrating `{0}`")]
    NumericOverflow(String),
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("invariant of `{location}` in `{automaton}` violated with no enabled exit")]
    StuckLocation { automaton: String, location: String },
    #[error("more than {0} discrete steps without time progress")]
    Zeno(usize),
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("variable `{0}` has flows in more than one automaton")]
    ConflictingFlow(String),
    #[error("invariant `{0}` couples several flow variables")]
    CoupledInvariant(String),
    #[error("invalid automaton `{name}`: {diagnostics:?}")]
    Invalid { name: String, diagnostics: Vec<Diagnostic> },
}
