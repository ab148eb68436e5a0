//! Network composition and discrete firing semantics.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{validate_sha, ActionKind, CmpOp, Diagnostic, LinearConstraint, Sha, ShaError, Variable};
use crate::domain::{EventName, ParamEvent, VitalEvent, DEFAULT_SAFE_RANGES, FLAG_NAMES, FLAG_ON, SINK, VENT_PARAMS, VITALS};

pub type Locs = SmallVec<[usize; 4]>;
pub type Vals = SmallVec<[f64; 4]>;

/// Vital flags `r1..r5` and the ventilation flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flags {
    pub vitals: [bool; 5],
    pub on: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self { vitals: [true; 5], on: false }
    }
}

impl Flags {
    pub fn get(&self, i: usize) -> bool {
        if i == FLAG_ON {
            self.on
        } else {
            self.vitals[i]
        }
    }

    /// Apply the flag effect of an event name; unknown names are ignored.
    pub fn apply_event(&mut self, event: &str) {
        match EventName::parse(event) {
            Some(EventName::Vital(i, VitalEvent::Ok)) => self.vitals[i] = true,
            Some(EventName::Vital(i, _)) => self.vitals[i] = false,
            Some(EventName::On) => self.on = true,
            Some(EventName::Off) => self.on = false,
            Some(EventName::Param(_, ParamEvent::Up | ParamEvent::Down)) | None => {}
        }
    }

    pub fn out_of_range(&self) -> usize {
        self.vitals.iter().filter(|v| !**v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    /// Current location index per automaton.
    pub locations: Locs,
    /// Valuation, indexed like [`ShaNetwork::variables`].
    pub values: Vals,
    /// Sampled flow offset `b` per variable for the current sojourn.
    pub drift: Vals,
    pub flags: Flags,
    pub clock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Var(usize),
    Flag(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct CConstraint {
    pub terms: Vec<(f64, Slot)>,
    pub op: CmpOp,
    pub rhs: f64,
    pub text: String,
}

#[derive(Debug, Clone)]
pub(crate) struct CLocation {
    pub rate: Option<f64>,
    /// (variable, a, b, noise stddev)
    pub flows: Vec<(usize, f64, f64, f64)>,
    pub invariant: Vec<CConstraint>,
}

#[derive(Debug, Clone)]
pub(crate) struct CEdge {
    pub dst: usize,
    pub action: usize,
    pub kind: ActionKind,
    pub guard: Vec<CConstraint>,
    pub weight: f64,
    pub resets: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub locs: Vec<CLocation>,
    pub edges: Vec<CEdge>,
    /// Edge indices leaving each location, in declaration order.
    pub by_src: Vec<Vec<usize>>,
    pub initial: usize,
}

/// How probabilistic alternatives (and flow noise) are resolved.
pub enum Resolver<'a> {
    /// Single uniform draw against the cumulative weights; noise is sampled.
    Sample(&'a mut dyn RngCore),
    /// Highest weight, first declared on ties; flows use their mean.
    MostLikely,
    /// Fail on any genuine choice; flows use their mean.
    Strict,
}

/// Outcome of a discrete transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub config: Configuration,
    pub action: usize,
    pub emitter: Option<usize>,
    /// Edge taken per automaton, `None` when it stayed put.
    pub taken: SmallVec<[Option<usize>; 4]>,
}

/// Synchronized product of automata.
#[derive(Debug, Clone)]
pub struct ShaNetwork {
    pub automata: Vec<Sha>,
    pub variables: Vec<Variable>,
    pub actions: Vec<String>,
    pub(crate) compiled: Vec<Compiled>,
    /// Automaton whose flows drive each variable.
    pub(crate) flow_owner: Vec<Option<usize>>,
    action_index: HashMap<String, usize>,
}

fn compile_constraint(
    c: &LinearConstraint,
    var_index: &HashMap<String, usize>,
) -> Result<CConstraint, ShaError> {
    let mut terms = Vec::with_capacity(c.terms.len());
    for (k, n) in &c.terms {
        let slot = if let Some(&i) = var_index.get(n) {
            Slot::Var(i)
        } else if let Some(i) = FLAG_NAMES.iter().position(|f| f == n) {
            Slot::Flag(i)
        } else {
            return Err(ShaError::UnknownName(n.clone()));
        };
        terms.push((*k, slot));
    }
    Ok(CConstraint { terms, op: c.op, rhs: c.rhs, text: c.to_string() })
}

impl CConstraint {
    pub fn lhs(&self, values: &[f64], flags: &Flags) -> f64 {
        self.terms
            .iter()
            .map(|(k, s)| {
                k * match *s {
                    Slot::Var(i) => values[i],
                    Slot::Flag(i) => f64::from(u8::from(flags.get(i))),
                }
            })
            .sum()
    }

    pub fn holds(&self, values: &[f64], flags: &Flags) -> bool {
        self.op.holds(self.lhs(values, flags), self.rhs)
    }
}

pub(crate) fn all_hold(cs: &[CConstraint], values: &[f64], flags: &Flags) -> bool {
    cs.iter().all(|c| c.holds(values, flags))
}

/// Compose automata into a network; every input must be matched by some output.
pub fn compose_network(shas: Vec<Sha>) -> Result<ShaNetwork, ShaError> {
    build(shas, true)
}

/// Composition without the matched-input check, for replaying observed
/// traces where the environment may produce events no automaton emits.
pub fn compose_unchecked(shas: Vec<Sha>) -> Result<ShaNetwork, ShaError> {
    build(shas, false)
}

fn build(shas: Vec<Sha>, check_inputs: bool) -> Result<ShaNetwork, ShaError> {
    for s in &shas {
        let diags: Vec<Diagnostic> = validate_sha(s)
            .into_iter()
            .filter(|d| d.kind != super::DiagnosticKind::WeightSum)
            .collect();
        if !diags.is_empty() {
            return Err(ShaError::Invalid { name: s.name.clone(), diagnostics: diags });
        }
    }
    let mut outputs = std::collections::HashSet::new();
    for s in &shas {
        outputs.extend(s.outputs());
    }
    for s in shas.iter().filter(|_| check_inputs) {
        for a in s.inputs() {
            if !outputs.contains(&a) {
                return Err(ShaError::UnmatchedInput(a));
            }
        }
    }

    let mut variables: Vec<Variable> = Vec::new();
    let mut var_index = HashMap::new();
    for s in &shas {
        for v in &s.variables {
            if !var_index.contains_key(&v.name) {
                var_index.insert(v.name.clone(), variables.len());
                variables.push(v.clone());
            }
        }
    }
    let mut flow_owner = vec![None; variables.len()];
    for (ai, s) in shas.iter().enumerate() {
        for v in s.flow_variables() {
            let i = var_index[&v];
            if flow_owner[i].is_some_and(|o| o != ai) {
                return Err(ShaError::ConflictingFlow(v));
            }
            flow_owner[i] = Some(ai);
        }
    }

    let mut actions: Vec<String> = Vec::new();
    let mut action_index = HashMap::new();
    for s in &shas {
        for e in &s.edges {
            if !action_index.contains_key(&e.action) {
                action_index.insert(e.action.clone(), actions.len());
                actions.push(e.action.clone());
            }
        }
    }

    let mut compiled = Vec::with_capacity(shas.len());
    for s in &shas {
        let loc_index: HashMap<&str, usize> =
            s.locations.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
        let mut locs = Vec::with_capacity(s.locations.len());
        for l in &s.locations {
            let rate = match &l.rate {
                Some(r) => Some(s.eval_expr(r).ok_or_else(|| ShaError::UnknownName(format!("{r}")))?),
                None => None,
            };
            let flows = l.flows.iter().map(|f| (var_index[&f.var], f.a, f.b, f.noise_std)).collect();
            let invariant = l
                .invariant
                .0
                .iter()
                .map(|c| compile_constraint(c, &var_index))
                .collect::<Result<Vec<_>, _>>()?;
            locs.push(CLocation { rate, flows, invariant });
        }
        let mut edges = Vec::with_capacity(s.edges.len());
        let mut by_src = vec![Vec::new(); s.locations.len()];
        for e in &s.edges {
            let src = loc_index[e.src.as_str()];
            let guard =
                e.guard.0.iter().map(|c| compile_constraint(c, &var_index)).collect::<Result<Vec<_>, _>>()?;
            let weight = s.eval_expr(&e.weight).unwrap_or(0.0);
            by_src[src].push(edges.len());
            edges.push(CEdge {
                dst: loc_index[e.dst.as_str()],
                action: action_index[&e.action],
                kind: e.kind,
                guard,
                weight,
                resets: e.resets.iter().map(|(v, x)| (var_index[v], *x)).collect(),
            });
        }
        let initial = loc_index[s.initial.as_str()];
        compiled.push(Compiled { locs, edges, by_src, initial });
    }

    Ok(ShaNetwork { automata: shas, variables, actions, compiled, flow_owner, action_index })
}

impl ShaNetwork {
    pub fn len(&self) -> usize {
        self.automata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.automata.is_empty()
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.action_index.get(name).copied()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn automaton_index(&self, name: &str) -> Option<usize> {
        self.automata.iter().position(|s| s.name == name)
    }

    /// Index of the controller-side automaton, if exactly one is flagged.
    pub fn controller_index(&self) -> Option<usize> {
        let mut it = self.automata.iter().enumerate().filter(|(_, s)| s.controller);
        let first = it.next()?.0;
        it.next().is_none().then_some(first)
    }

    pub fn location_name(&self, automaton: usize, loc: usize) -> &str {
        &self.automata[automaton].locations[loc].id
    }

    pub fn location_names(&self, config: &Configuration) -> Vec<String> {
        config.locations.iter().enumerate().map(|(a, &l)| self.location_name(a, l).to_string()).collect()
    }

    pub fn sink_index(&self, automaton: usize) -> Option<usize> {
        self.automata[automaton].location_index(SINK)
    }

    pub fn is_in_sink(&self, config: &Configuration) -> bool {
        config
            .locations
            .iter()
            .enumerate()
            .any(|(a, &l)| self.automata[a].locations[l].id == SINK)
    }

    /// Initial configuration; flags follow the initial valuation of any
    /// declared vital or ventilator variables.
    pub fn initial_config(&self, rng: Option<&mut dyn RngCore>) -> Configuration {
        let locations: Locs = self.compiled.iter().map(|c| c.initial).collect();
        let values: Vals = self.variables.iter().map(|v| v.init).collect();
        let mut flags = Flags::default();
        for (i, v) in self.variables.iter().enumerate() {
            if let Some(k) = VITALS.iter().position(|n| *n == v.name) {
                let (lo, hi) = DEFAULT_SAFE_RANGES[k];
                flags.vitals[k] = lo <= values[i] && values[i] <= hi;
            }
            if VENT_PARAMS.contains(&v.name.as_str()) && values[i] > 0.0 {
                flags.on = true;
            }
        }
        let mut cfg = Configuration { locations, values, drift: SmallVec::from_elem(0.0, self.variables.len()), flags, clock: 0.0 };
        let mut resolver = match rng {
            Some(r) => Resolver::Sample(r),
            None => Resolver::MostLikely,
        };
        for a in 0..self.len() {
            self.enter(&mut cfg, a, &mut resolver);
        }
        cfg
    }

    /// Resample the flow offsets of the variables driven by automaton `a`
    /// for the location it currently occupies.
    fn enter(&self, cfg: &mut Configuration, a: usize, resolver: &mut Resolver) {
        for (v, owner) in self.flow_owner.iter().enumerate() {
            if *owner == Some(a) {
                cfg.drift[v] = 0.0;
            }
        }
        let loc = &self.compiled[a].locs[cfg.locations[a]];
        for &(v, _, b, sd) in &loc.flows {
            cfg.drift[v] = match resolver {
                Resolver::Sample(rng) if sd > 0.0 => Normal::new(b, sd).map(|n| n.sample(rng)).unwrap_or(b),
                _ => b,
            };
        }
    }

    /// Whether location `l` of automaton `a` has any output edge at all.
    pub(crate) fn has_outputs(&self, a: usize, l: usize) -> bool {
        let c = &self.compiled[a];
        c.by_src[l].iter().any(|&e| c.edges[e].kind == ActionKind::Output)
    }

    pub fn flow_slopes(&self, cfg: &Configuration) -> Vals {
        self.slopes(cfg)
    }

    /// Flow slope coefficient `a` currently acting on each variable.
    pub(crate) fn slopes(&self, cfg: &Configuration) -> Vals {
        let mut out: Vals = SmallVec::from_elem(0.0, self.variables.len());
        for (a, c) in self.compiled.iter().enumerate() {
            for &(v, k, _, _) in &c.locs[cfg.locations[a]].flows {
                out[v] = k;
            }
        }
        out
    }

    /// Enabled edges of automaton `a` on `action` with the given kind.
    pub fn enabled_edges(&self, cfg: &Configuration, a: usize, action: usize, kind: ActionKind) -> SmallVec<[usize; 4]> {
        let c = &self.compiled[a];
        c.by_src[cfg.locations[a]]
            .iter()
            .copied()
            .filter(|&e| {
                let e = &c.edges[e];
                e.action == action && e.kind == kind && all_hold(&e.guard, &cfg.values, &cfg.flags)
            })
            .collect()
    }

    /// Enabled output edges of automaton `a`, any action.
    pub fn enabled_outputs(&self, cfg: &Configuration, a: usize) -> SmallVec<[usize; 8]> {
        let c = &self.compiled[a];
        c.by_src[cfg.locations[a]]
            .iter()
            .copied()
            .filter(|&e| {
                let e = &c.edges[e];
                e.kind == ActionKind::Output && all_hold(&e.guard, &cfg.values, &cfg.flags)
            })
            .collect()
    }

    pub fn edge_action(&self, a: usize, e: usize) -> &str {
        &self.actions[self.compiled[a].edges[e].action]
    }

    /// Pick one of `cands` (non-empty) according to the resolver.
    pub(crate) fn choose(&self, a: usize, cands: &[usize], resolver: &mut Resolver) -> Result<usize, ShaError> {
        if cands.len() == 1 {
            return Ok(cands[0]);
        }
        let w = |e: usize| self.compiled[a].edges[e].weight.max(0.0);
        match resolver {
            Resolver::Sample(rng) => {
                let total: f64 = cands.iter().map(|&e| w(e)).sum();
                if total <= 0.0 {
                    return Ok(cands[rng.random_range(0..cands.len())]);
                }
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for &e in cands {
                    acc += w(e);
                    if u < acc {
                        return Ok(e);
                    }
                }
                Ok(*cands.iter().rev().find(|&&e| w(e) > 0.0).unwrap_or(&cands[0]))
            }
            Resolver::MostLikely => {
                let mut best = cands[0];
                for &e in &cands[1..] {
                    if w(e) > w(best) {
                        best = e;
                    }
                }
                Ok(best)
            }
            Resolver::Strict => Err(ShaError::AmbiguousWithoutRng {
                event: self.edge_action(a, cands[0]).to_string(),
                automaton: self.automata[a].name.clone(),
            }),
        }
    }

    /// Take `edge` in the emitting automaton and every matching input edge elsewhere.
    pub(crate) fn broadcast(
        &self,
        cfg: &Configuration,
        emitter: usize,
        edge: usize,
        resolver: &mut Resolver,
    ) -> Result<Transition, ShaError> {
        let action = self.compiled[emitter].edges[edge].action;
        let mut taken: SmallVec<[Option<usize>; 4]> = SmallVec::from_elem(None, self.len());
        taken[emitter] = Some(edge);
        for a in 0..self.len() {
            if a == emitter {
                continue;
            }
            let cands = self.enabled_edges(cfg, a, action, ActionKind::Input);
            if !cands.is_empty() {
                taken[a] = Some(self.choose(a, &cands, resolver)?);
            }
        }
        Ok(self.apply(cfg, action, Some(emitter), taken, resolver))
    }

    /// Move the automata along the chosen edges, apply resets and flag effects.
    pub(crate) fn apply(
        &self,
        cfg: &Configuration,
        action: usize,
        emitter: Option<usize>,
        taken: SmallVec<[Option<usize>; 4]>,
        resolver: &mut Resolver,
    ) -> Transition {
        let mut next = cfg.clone();
        for (a, t) in taken.iter().enumerate() {
            if let Some(e) = *t {
                let edge = &self.compiled[a].edges[e];
                next.locations[a] = edge.dst;
                for &(v, x) in &edge.resets {
                    next.values[v] = x;
                }
            }
        }
        next.flags.apply_event(&self.actions[action]);
        for (a, t) in taken.iter().enumerate() {
            if t.is_some() {
                self.enter(&mut next, a, resolver);
            }
        }
        Transition { config: next, action, emitter, taken }
    }

    /// Fire `event`: the first automaton with an enabled output on it emits,
    /// every automaton with an enabled matching input follows.
    pub fn fire(&self, cfg: &Configuration, event: &str, resolver: &mut Resolver) -> Result<Transition, ShaError> {
        let action = self.action_id(event).ok_or_else(|| ShaError::EventNotEnabled(event.to_string()))?;
        for a in 0..self.len() {
            let cands = self.enabled_edges(cfg, a, action, ActionKind::Output);
            if !cands.is_empty() {
                let e = self.choose(a, &cands, resolver)?;
                return self.broadcast(cfg, a, e, resolver);
            }
        }
        Err(ShaError::EventNotEnabled(event.to_string()))
    }

    /// Fire an output of a specific automaton, taking its first enabled edge
    /// on `event` (used when a strategy resolves controllable choices).
    pub fn fire_from(
        &self,
        cfg: &Configuration,
        emitter: usize,
        event: &str,
        resolver: &mut Resolver,
    ) -> Result<Transition, ShaError> {
        let action = self.action_id(event).ok_or_else(|| ShaError::EventNotEnabled(event.to_string()))?;
        let cands = self.enabled_edges(cfg, emitter, action, ActionKind::Output);
        let Some(&e) = cands.first() else {
            return Err(ShaError::EventNotEnabled(event.to_string()));
        };
        self.broadcast(cfg, emitter, e, resolver)
    }

    /// Observation-driven firing: every automaton with an enabled edge on
    /// `event` (output preferred over input) moves, the rest stay. Events the
    /// network does not know only update the flags.
    pub fn fire_observed(&self, cfg: &Configuration, event: &str, resolver: &mut Resolver) -> Result<Transition, ShaError> {
        let Some(action) = self.action_id(event) else {
            let mut next = cfg.clone();
            next.flags.apply_event(event);
            return Ok(Transition { config: next, action: usize::MAX, emitter: None, taken: SmallVec::from_elem(None, self.len()) });
        };
        let mut taken: SmallVec<[Option<usize>; 4]> = SmallVec::from_elem(None, self.len());
        let mut emitter = None;
        for a in 0..self.len() {
            let mut cands = self.enabled_edges(cfg, a, action, ActionKind::Output);
            if cands.is_empty() {
                cands = self.enabled_edges(cfg, a, action, ActionKind::Input);
            } else if emitter.is_none() {
                emitter = Some(a);
            }
            if !cands.is_empty() {
                taken[a] = Some(self.choose(a, &cands, resolver)?);
            }
        }
        Ok(self.apply(cfg, action, emitter, taken, resolver))
    }

    /// Whether some automaton can emit `event` right now.
    pub fn is_enabled(&self, cfg: &Configuration, event: &str) -> bool {
        self.action_id(event)
            .is_some_and(|act| (0..self.len()).any(|a| !self.enabled_edges(cfg, a, act, ActionKind::Output).is_empty()))
    }

    /// Force automaton `a` into location `loc` (operator realignment).
    pub fn relocate(&self, cfg: &mut Configuration, a: usize, loc: usize) {
        cfg.locations[a] = loc;
        self.enter(cfg, a, &mut Resolver::MostLikely);
    }
}
