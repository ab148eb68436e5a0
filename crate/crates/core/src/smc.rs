//! Dependability properties and their Monte-Carlo estimation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{parse_number, KvFile};
use crate::sha::flow;
use crate::sha::network::ShaNetwork;
use crate::sha::sim::{derive_seed, Run};
use crate::sha::ShaError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("bounds must satisfy 0 < epsilon < 1 and 0 < delta < 1 (got {0}, {1})")]
    BadBound(f64, f64),
    #[error("run horizon {run} shorter than property horizon {property}")]
    HorizonTooShort { run: f64, property: f64 },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("expected one estimate per requirement ({estimates} vs {requirements})")]
    MissingEstimate { estimates: usize, requirements: usize },
    #[error("invalid property: {0}")]
    BadProperty(String),
    #[error("requirements file: {0}")]
    Parse(String),
    #[error(transparent)]
    Simulation(#[from] ShaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Property {
    /// A goal location is entered at or before `horizon`. Goals are location
    /// names, optionally qualified as `automaton.location`.
    ReachStable { goal: Vec<String>, horizon: f64 },
    /// `variable < threshold` holds throughout some window of length `duration`.
    DurationBelow { variable: String, threshold: f64, duration: f64, horizon: f64 },
    /// At least `min_out` vitals are out of range throughout some window of length `duration`.
    PersistCritical { min_out: usize, duration: f64, horizon: f64 },
}

impl Property {
    pub fn horizon(&self) -> f64 {
        match self {
            Property::ReachStable { horizon, .. }
            | Property::DurationBelow { horizon, .. }
            | Property::PersistCritical { horizon, .. } => *horizon,
        }
    }

    pub fn validate(&self) -> Result<(), SmcError> {
        let t = self.horizon();
        if !(t > 0.0) {
            return Err(SmcError::BadProperty(format!("horizon {t}")));
        }
        match self {
            Property::ReachStable { goal, .. } if goal.is_empty() => Err(SmcError::BadProperty("empty goal".into())),
            Property::DurationBelow { duration, .. } | Property::PersistCritical { duration, .. }
                if !(*duration > 0.0 && *duration <= t) =>
            {
                Err(SmcError::BadProperty(format!("duration {duration} not in (0, {t}]")))
            }
            Property::PersistCritical { min_out, .. } if *min_out < 2 => {
                Err(SmcError::BadProperty(format!("min_out {min_out} < 2")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    FailBelow,
    FailAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub name: String,
    pub property: Property,
    pub direction: Direction,
    pub threshold: f64,
}

impl Requirement {
    /// Probability mass of the undesirable outcome.
    pub fn violation_likelihood(&self, p: f64) -> f64 {
        match self.direction {
            Direction::FailBelow => 1.0 - p,
            Direction::FailAbove => p,
        }
    }

    /// Distance past the threshold, zero when passing.
    pub fn score(&self, p: f64) -> f64 {
        match self.direction {
            Direction::FailBelow => (self.threshold - p).max(0.0),
            Direction::FailAbove => (p - self.threshold).max(0.0),
        }
    }

    pub fn fails(&self, p: f64) -> bool {
        self.score(p) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub n_runs: usize,
    pub satisfied: usize,
    pub sink_runs: usize,
}

/// Runs needed for an additive error `epsilon` with confidence `1 - delta`.
pub fn required_runs(epsilon: f64, delta: f64) -> Result<usize, SmcError> {
    if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(SmcError::BadBound(epsilon, delta));
    }
    Ok(((2.0 / delta).ln() / (2.0 * epsilon * epsilon)).ceil() as usize)
}

fn goal_matches(net: &ShaNetwork, goal: &[String], a: usize, loc: usize) -> bool {
    let aut = &net.automata[a].name;
    let id = &net.automata[a].locations[loc].id;
    goal.iter().any(|g| match g.split_once('.') {
        Some((an, l)) => an == aut && l == id,
        None => g == id,
    })
}

/// Longest stretch, within `[0, horizon]`, of a predicate that is constant on
/// each step interval. Returns true once a stretch reaches `duration`.
fn longest_stretch(run: &Run, horizon: f64, duration: f64, pred: impl Fn(usize) -> bool) -> bool {
    let mut start: Option<f64> = None;
    for i in 0..run.segments.len() {
        let t0 = run.steps[i].t;
        if t0 > horizon {
            break;
        }
        let t1 = run.steps[i + 1].t.min(horizon);
        if pred(i) {
            let s = *start.get_or_insert(t0);
            if t1 - s >= duration {
                return true;
            }
        } else {
            start = None;
        }
    }
    false
}

/// Evaluate one property on one run: `(satisfied, hit_sink)`.
pub fn eval_property(run: &Run, property: &Property, net: &ShaNetwork) -> Result<(bool, bool), SmcError> {
    let t_max = property.horizon();
    if run.horizon < t_max {
        return Err(SmcError::HorizonTooShort { run: run.horizon, property: t_max });
    }
    let hit_sink = run.steps.iter().any(|s| s.t <= t_max && net.is_in_sink(&s.config));
    let sat = match property {
        Property::ReachStable { goal, .. } => run.steps.iter().take_while(|s| s.t <= t_max).any(|s| {
            s.config.locations.iter().enumerate().any(|(a, &l)| goal_matches(net, goal, a, l))
        }),
        Property::DurationBelow { variable, threshold, duration, .. } => {
            let v = net.variable_index(variable).ok_or_else(|| SmcError::UnknownVariable(variable.clone()))?;
            let mut start: Option<f64> = None;
            let mut found = false;
            for seg in &run.segments {
                if seg.t0 > t_max {
                    break;
                }
                let dt = seg.dt.min(t_max - seg.t0);
                match flow::below_interval(seg.x0[v], seg.a[v], seg.b[v], dt, *threshold) {
                    Some((s, e)) => {
                        let s_abs = seg.t0 + s;
                        let begin = if s == 0.0 { *start.get_or_insert(s_abs) } else { s_abs };
                        if seg.t0 + e - begin >= *duration {
                            found = true;
                            break;
                        }
                        start = if e >= dt { Some(begin) } else { None };
                    }
                    None => start = None,
                }
            }
            found
        }
        Property::PersistCritical { min_out, duration, .. } => {
            longest_stretch(run, t_max, *duration, |i| run.steps[i].config.flags.out_of_range() >= *min_out)
        }
    };
    Ok((sat, hit_sink))
}

/// Estimate several properties on the same set of runs drawn by `sample(seed)`.
pub fn estimate_with<F>(
    sample: F,
    net: &ShaNetwork,
    properties: &[Property],
    epsilon: f64,
    delta: f64,
    master_seed: u64,
) -> Result<Vec<Estimate>, SmcError>
where
    F: Fn(u64) -> Result<Run, ShaError> + Sync,
{
    let n = required_runs(epsilon, delta)?;
    for p in properties {
        p.validate()?;
    }
    let per_run: Vec<Vec<(bool, bool)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let run = sample(derive_seed(master_seed, i))?;
            properties.iter().map(|p| eval_property(&run, p, net)).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok((0..properties.len())
        .map(|k| {
            let satisfied = per_run.iter().filter(|r| r[k].0 && !r[k].1).count();
            let sink_runs = per_run.iter().filter(|r| r[k].1).count();
            Estimate { p_hat: satisfied as f64 / n as f64, epsilon, delta, n_runs: n, satisfied, sink_runs }
        })
        .collect())
}

/// Estimate several properties on plain network simulations.
pub fn estimate_many(
    net: &ShaNetwork,
    properties: &[Property],
    epsilon: f64,
    delta: f64,
    master_seed: u64,
) -> Result<Vec<Estimate>, SmcError> {
    let horizon = properties.iter().map(Property::horizon).fold(0.0, f64::max);
    estimate_with(
        |seed| net.simulate(horizon, &mut ChaCha8Rng::seed_from_u64(seed)),
        net,
        properties,
        epsilon,
        delta,
        master_seed,
    )
}

pub fn estimate(net: &ShaNetwork, property: &Property, epsilon: f64, delta: f64, master_seed: u64) -> Result<Estimate, SmcError> {
    Ok(estimate_many(net, std::slice::from_ref(property), epsilon, delta, master_seed)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub failures: Vec<bool>,
    pub overall: bool,
}

pub fn classify(estimates: &[Estimate], requirements: &[Requirement]) -> Result<Classification, SmcError> {
    if estimates.len() != requirements.len() {
        return Err(SmcError::MissingEstimate { estimates: estimates.len(), requirements: requirements.len() });
    }
    let failures: Vec<bool> = estimates.iter().zip(requirements).map(|(e, r)| r.fails(e.p_hat)).collect();
    let overall = failures.iter().any(|f| *f);
    Ok(Classification { failures, overall })
}

/// Default stakeholder requirements.
pub fn default_requirements() -> Vec<Requirement> {
    parse_requirements(DEFAULT_REQUIREMENTS).expect("default requirements parse")
}

pub const DEFAULT_REQUIREMENTS: &str = "\
req1 = reach stable within 3600 fail_below 0.5
req2 = duration TV < 300 for 60 within 3600 fail_above 0.2
req3 = persist 2 for 120 within 3600 fail_above 0.2
";

fn parse_requirement(name: &str, text: &str) -> Result<Requirement, SmcError> {
    let bad = || SmcError::Parse(format!("{name}: cannot parse `{text}`"));
    let tok: Vec<&str> = text.split_whitespace().collect();
    let num = |s: &str| parse_number(s).ok_or_else(bad);
    let n = tok.len();
    if n < 4 {
        return Err(bad());
    }
    let direction = match tok[n - 2] {
        "fail_below" => Direction::FailBelow,
        "fail_above" => Direction::FailAbove,
        _ => return Err(bad()),
    };
    let threshold = num(tok[n - 1])?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(SmcError::Parse(format!("{name}: threshold {threshold} outside [0,1]")));
    }
    let body = &tok[..n - 2];
    let property = match body {
        ["reach", goals, "within", t] => Property::ReachStable {
            goal: goals.split(',').map(str::to_string).collect(),
            horizon: num(t)?,
        },
        ["duration", var, "<", thr, "for", d, "within", t] => Property::DurationBelow {
            variable: var.to_string(),
            threshold: num(thr)?,
            duration: num(d)?,
            horizon: num(t)?,
        },
        ["persist", m, "for", d, "within", t] => Property::PersistCritical {
            min_out: m.parse().map_err(|_| bad())?,
            duration: num(d)?,
            horizon: num(t)?,
        },
        _ => return Err(bad()),
    };
    property.validate()?;
    Ok(Requirement { name: name.to_string(), property, direction, threshold })
}

/// Parse a requirements file (`reqN = ...` lines, in file order).
pub fn parse_requirements(text: &str) -> Result<Vec<Requirement>, SmcError> {
    let kv = KvFile::parse(text).map_err(|e| SmcError::Parse(e.to_string()))?;
    kv.entries.iter().map(|(k, v, _)| parse_requirement(k, v)).collect()
}

pub fn format_requirement(r: &Requirement) -> String {
    let body = match &r.property {
        Property::ReachStable { goal, horizon } => format!("reach {} within {horizon}", goal.join(",")),
        Property::DurationBelow { variable, threshold, duration, horizon } => {
            format!("duration {variable} < {threshold} for {duration} within {horizon}")
        }
        Property::PersistCritical { min_out, duration, horizon } => {
            format!("persist {min_out} for {duration} within {horizon}")
        }
    };
    let dir = match r.direction {
        Direction::FailBelow => "fail_below",
        Direction::FailAbove => "fail_above",
    };
    format!("{} = {body} {dir} {}", r.name, r.threshold)
}
