//! Timed stochastic execution of a network.

use rand::RngCore;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::flow;
use super::network::{Configuration, Resolver, ShaNetwork, Transition, Vals};
use super::ShaError;

/// Cap on consecutive zero-duration discrete steps.
pub const ZENO_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    /// Absolute time at which the run stops.
    pub horizon: f64,
    /// Automaton whose exit delays are ignored (its moves are decided externally).
    pub suppress_delays: Option<usize>,
}

impl StepOptions {
    pub fn until(horizon: f64) -> Self {
        Self { horizon, suppress_delays: None }
    }
}

/// Continuous evolution over one step: per variable `(x0, a, b)` for `dt` seconds from `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub t0: f64,
    pub dt: f64,
    pub x0: Vals,
    pub a: Vals,
    pub b: Vals,
}

impl FlowSegment {
    pub fn value_at(&self, var: usize, t: f64) -> f64 {
        flow::advance(self.x0[var], self.a[var], self.b[var], (t - self.t0).clamp(0.0, self.dt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepCause {
    Delay(usize),
    Invariant(usize),
    Horizon,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub config: Configuration,
    pub event: Option<Transition>,
    pub dt: f64,
    pub cause: StepCause,
    pub segment: FlowSegment,
}

impl ShaNetwork {
    /// Time until the current location invariant of automaton `a` stops holding
    /// under the present flows, with the variable and boundary that bind.
    fn invariant_exit(&self, cfg: &Configuration, a: usize, slopes: &Vals) -> Result<Option<(f64, Option<(usize, f64)>)>, ShaError> {
        let loc = &self.compiled[a].locs[cfg.locations[a]];
        let mut best: Option<(f64, Option<(usize, f64)>)> = None;
        for c in &loc.invariant {
            let mut moving = None;
            let mut static_sum = 0.0;
            for (k, s) in &c.terms {
                match *s {
                    super::network::Slot::Var(v) if slopes[v] != 0.0 || cfg.drift[v] != 0.0 => {
                        if moving.is_some() {
                            return Err(ShaError::CoupledInvariant(c.text.clone()));
                        }
                        moving = Some((v, *k));
                    }
                    super::network::Slot::Var(v) => static_sum += k * cfg.values[v],
                    super::network::Slot::Flag(i) => static_sum += k * f64::from(u8::from(cfg.flags.get(i))),
                }
            }
            let hit = match moving {
                None => (!c.op.holds(static_sum, c.rhs)).then_some((0.0, None)),
                Some((v, k)) => {
                    let theta = (c.rhs - static_sum) / k;
                    let op = if k < 0.0 { c.op.flipped() } else { c.op };
                    flow::exit_time(cfg.values[v], slopes[v], cfg.drift[v], theta, op.is_upper(), op.is_strict())
                        .map(|t| (t, Some((v, theta))))
                }
            };
            if let Some(h) = hit {
                if best.is_none_or(|b| h.0 < b.0) {
                    best = Some(h);
                }
            }
        }
        Ok(best)
    }

    /// Advance by one discrete step: race the exit delays against invariant
    /// crossings and the horizon, integrate the flows, then fire.
    pub fn step(&self, cfg: &Configuration, opts: &StepOptions, rng: &mut dyn RngCore) -> Result<StepOutcome, ShaError> {
        let remaining = (opts.horizon - cfg.clock).max(0.0);
        let slopes = self.slopes(cfg);
        let mut dt = remaining;
        let mut cause = StepCause::Horizon;
        let mut clamp: Option<(usize, f64)> = None;

        for a in 0..self.len() {
            if let Some((t, bind)) = self.invariant_exit(cfg, a, &slopes)? {
                if t < dt {
                    dt = t;
                    cause = StepCause::Invariant(a);
                    clamp = bind;
                }
            }
        }
        for a in 0..self.len() {
            if opts.suppress_delays == Some(a) {
                continue;
            }
            if !self.has_outputs(a, cfg.locations[a]) {
                continue;
            }
            if let Some(rate) = self.compiled[a].locs[cfg.locations[a]].rate {
                let d = Exp::new(rate).map(|e| e.sample(rng)).unwrap_or(f64::INFINITY);
                if d < dt {
                    dt = d;
                    cause = StepCause::Delay(a);
                    clamp = None;
                }
            }
        }

        let segment = FlowSegment {
            t0: cfg.clock,
            dt,
            x0: cfg.values.clone(),
            a: slopes.clone(),
            b: cfg.drift.clone(),
        };
        let mut next = cfg.clone();
        for v in 0..next.values.len() {
            let x = flow::advance(cfg.values[v], slopes[v], cfg.drift[v], dt);
            if !x.is_finite() {
                return Err(ShaError::NumericOverflow(self.variables[v].name.clone()));
            }
            next.values[v] = x;
        }
        next.clock = if cause == StepCause::Horizon { opts.horizon.max(cfg.clock) } else { cfg.clock + dt };
        if let Some((v, theta)) = clamp {
            next.values[v] = theta;
        }

        let event = match cause {
            StepCause::Horizon => None,
            StepCause::Delay(a) | StepCause::Invariant(a) => {
                let outs = self.enabled_outputs(&next, a);
                if outs.is_empty() {
                    if let StepCause::Invariant(_) = cause {
                        return Err(ShaError::StuckLocation {
                            automaton: self.automata[a].name.clone(),
                            location: self.location_name(a, next.locations[a]).to_string(),
                        });
                    }
                    None
                } else {
                    let mut res = Resolver::Sample(rng);
                    let e = self.choose(a, &outs, &mut res)?;
                    Some(self.broadcast(&next, a, e, &mut res)?)
                }
            }
        };
        if let Some(t) = &event {
            next = t.config.clone();
        }
        Ok(StepOutcome { config: next, event, dt, cause, segment })
    }

    /// Simulate from the initial configuration until `horizon`.
    pub fn simulate(&self, horizon: f64, rng: &mut dyn RngCore) -> Result<Run, ShaError> {
        self.simulate_with(horizon, None, rng)
    }

    pub fn simulate_with(&self, horizon: f64, suppress_delays: Option<usize>, rng: &mut dyn RngCore) -> Result<Run, ShaError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ShaError::InvalidHorizon(horizon));
        }
        let init = self.initial_config(Some(&mut *rng));
        let opts = StepOptions { horizon, suppress_delays };
        let mut run = Run { horizon, steps: vec![RunStep { t: 0.0, event: None, config: init.clone() }], segments: Vec::new() };
        let mut cfg = init;
        let mut zero_steps = 0;
        while cfg.clock < horizon {
            let out = self.step(&cfg, &opts, rng)?;
            if out.dt == 0.0 {
                zero_steps += 1;
                if zero_steps > ZENO_LIMIT {
                    return Err(ShaError::Zeno(ZENO_LIMIT));
                }
            } else {
                zero_steps = 0;
            }
            run.segments.push(out.segment);
            cfg = out.config;
            run.steps.push(RunStep {
                t: cfg.clock,
                event: out.event.as_ref().map(|t| RunEvent { action: t.action, emitter: t.emitter }),
                config: cfg.clone(),
            });
        }
        Ok(run)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEvent {
    pub action: usize,
    pub emitter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStep {
    pub t: f64,
    pub event: Option<RunEvent>,
    pub config: Configuration,
}

/// One execution: `steps[0]` is the initial configuration and `segments[i]`
/// is the continuous evolution between `steps[i]` and `steps[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub horizon: f64,
    pub steps: Vec<RunStep>,
    pub segments: Vec<FlowSegment>,
}

impl Run {
    /// `(t, event name)` pairs of the fired events.
    pub fn events<'a>(&'a self, net: &'a ShaNetwork) -> impl Iterator<Item = (f64, &'a str)> + 'a {
        self.steps.iter().filter_map(move |s| s.event.map(|e| (s.t, net.actions[e.action].as_str())))
    }

    pub fn final_config(&self) -> &Configuration {
        &self.steps.last().expect("run has an initial step").config
    }

    /// Locations of automaton `a` over time as `(entry time, location)` changes.
    pub fn location_changes(&self, a: usize) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for s in &self.steps {
            let l = s.config.locations[a];
            if out.last().is_none_or(|&(_, p)| p != l) {
                out.push((s.t, l));
            }
        }
        out
    }
}

/// Deterministic per-run seed derived from a master seed and a run index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
