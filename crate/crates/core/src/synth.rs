//! Strategy synthesis on the physician/patient game: the physician's outputs
//! become controllable choices, the patient stays stochastic, and episodic
//! Q-learning maximizes the time the patient spends in the goal locations.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{controllable_alphabet, DEFAULT_SAFE_RANGES, VITALS};
use crate::sha::network::{compose_unchecked, Configuration, Flags, Resolver, ShaNetwork};
use crate::sha::sim::{derive_seed, StepOptions, ZENO_LIMIT};
use crate::sha::{ActionKind, ParamExpr, ShaError};

pub const WAIT: &str = "wait";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("network has no single controller automaton")]
    NoControllerAutomaton,
    #[error("goal set is empty")]
    EmptyGoal,
    #[error("unknown goal location `{0}`")]
    UnknownGoal(String),
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error("strategy file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ShaError),
}

/// Abstract configuration: the two locations and the six boolean registers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbstractState {
    pub ph_loc: String,
    pub pa_loc: String,
    pub flags: Flags,
}

impl AbstractState {
    pub fn new(ph_loc: &str, pa_loc: &str, flags: Flags) -> Self {
        Self { ph_loc: ph_loc.to_string(), pa_loc: pa_loc.to_string(), flags }
    }

    /// Flags as `T`/`F` letters in `r1..r5, r_on` order.
    pub fn flag_letters(&self) -> String {
        let mut s = String::with_capacity(6);
        for v in self.flags.vitals {
            s.push(if v { 'T' } else { 'F' });
        }
        s.push(if self.flags.on { 'T' } else { 'F' });
        s
    }
}

impl std::fmt::Display for AbstractState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let l: Vec<String> = self.flag_letters().chars().map(String::from).collect();
        write!(f, "({}, {}; {})", self.ph_loc, self.pa_loc, l.join(","))
    }
}

type Key = (usize, usize, Flags);

/// The network with the controller's outputs turned into decisions.
#[derive(Debug, Clone)]
pub struct Game {
    pub network: ShaNetwork,
    pub controller: usize,
    pub patient: usize,
    /// Controllable actions; decision slot `i + 1` is `actions[i]`, slot 0 is wait.
    pub actions: Vec<String>,
}

pub fn to_game(network: &ShaNetwork) -> Result<Game, SynthError> {
    let controller = network.controller_index().ok_or(SynthError::NoControllerAutomaton)?;
    let patient = (0..network.len()).find(|&a| a != controller).ok_or(SynthError::NoControllerAutomaton)?;
    let mut shas = network.automata.clone();
    for e in shas[controller].edges.iter_mut().filter(|e| e.kind == ActionKind::Output) {
        e.weight = ParamExpr::constant(1.0);
    }
    let outputs = shas[controller].outputs();
    let mut actions: Vec<String> = controllable_alphabet().into_iter().filter(|a| outputs.contains(a)).collect();
    for a in outputs {
        if !actions.contains(&a) {
            actions.push(a);
        }
    }
    Ok(Game { network: compose_unchecked(shas)?, controller, patient, actions })
}

impl Game {
    pub fn slots(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn slot_name(&self, slot: usize) -> &str {
        if slot == 0 {
            WAIT
        } else {
            &self.actions[slot - 1]
        }
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        if name == WAIT {
            return Some(0);
        }
        self.actions.iter().position(|a| a == name).map(|i| i + 1)
    }

    fn key(&self, cfg: &Configuration) -> Key {
        (cfg.locations[self.controller], cfg.locations[self.patient], cfg.flags)
    }

    fn state_of(&self, k: &Key) -> AbstractState {
        AbstractState::new(
            self.network.location_name(self.controller, k.0),
            self.network.location_name(self.patient, k.1),
            k.2,
        )
    }

    pub fn abstract_state(&self, cfg: &Configuration) -> AbstractState {
        self.state_of(&self.key(cfg))
    }

    pub fn goal_mask(&self, goal: &[String]) -> Result<Vec<bool>, SynthError> {
        if goal.is_empty() {
            return Err(SynthError::EmptyGoal);
        }
        let pa = &self.network.automata[self.patient];
        let mut mask = vec![false; pa.locations.len()];
        for g in goal {
            let i = pa.location_index(g).ok_or_else(|| SynthError::UnknownGoal(g.clone()))?;
            mask[i] = true;
        }
        Ok(mask)
    }

    /// Whether firing `action` would leave the environment and the flags
    /// unchanged. Such actions are indistinguishable from waiting.
    pub fn is_noop(&self, cfg: &Configuration, action: &str) -> bool {
        let Some(act) = self.network.action_id(action) else { return true };
        let mut flags = cfg.flags;
        flags.apply_event(action);
        if flags != cfg.flags {
            return false;
        }
        let c = &self.network.compiled;
        (0..self.network.len()).filter(|&a| a != self.controller).all(|a| {
            self.network.enabled_edges(cfg, a, act, ActionKind::Input).iter().all(|&e| {
                let edge = &c[a].edges[e];
                edge.dst == cfg.locations[a] && edge.resets.is_empty()
            })
        })
    }

    /// Decision slots open in `cfg`: wait, then every enabled controllable
    /// action that is not a no-op, in declaration order.
    pub fn available(&self, cfg: &Configuration) -> Vec<usize> {
        let mut out = vec![0];
        for (i, a) in self.actions.iter().enumerate() {
            let Some(act) = self.network.action_id(a) else { continue };
            if !self.network.enabled_edges(cfg, self.controller, act, ActionKind::Output).is_empty() && !self.is_noop(cfg, a) {
                out.push(i + 1);
            }
        }
        out
    }

    /// Fire the action of `slot` from the controller; wait returns `cfg` unchanged.
    pub fn act(&self, cfg: &Configuration, slot: usize, resolver: &mut Resolver) -> Result<Configuration, ShaError> {
        if slot == 0 {
            return Ok(cfg.clone());
        }
        Ok(self.network.fire_from(cfg, self.controller, &self.actions[slot - 1], resolver)?.config)
    }

    /// Let the environment move until its next event, `period` seconds or the
    /// horizon, whichever comes first. Returns the new configuration and the
    /// time spent in the goal.
    pub fn advance(
        &self,
        cfg: &Configuration,
        period: f64,
        horizon: f64,
        goal: &[bool],
        rng: &mut dyn RngCore,
    ) -> Result<(Configuration, f64), ShaError> {
        let opts = StepOptions { horizon: (cfg.clock + period).min(horizon), suppress_delays: Some(self.controller) };
        let mut cur = cfg.clone();
        let mut reward = 0.0;
        for _ in 0..ZENO_LIMIT {
            if cur.clock >= opts.horizon {
                return Ok((cur, reward));
            }
            let out = self.network.step(&cur, &opts, rng)?;
            if goal[cur.locations[self.patient]] {
                reward += out.dt;
            }
            let fired = out.event.is_some();
            cur = out.config;
            if fired {
                return Ok((cur, reward));
            }
        }
        Err(ShaError::Zeno(ZENO_LIMIT))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub episodes: usize,
    pub horizon: f64,
    /// Step size floor; the first `1/learning_rate` updates of each pair
    /// use sample averages.
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Longest interval between two decisions when the environment is quiet.
    pub decision_period: f64,
    /// Trailing fraction of episodes over which the Q-table is averaged
    /// before determinization; 0 uses the final table.
    pub averaging: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            episodes: 5000,
            horizon: 600.0,
            learning_rate: 0.1,
            discount: 0.99,
            epsilon_start: 0.2,
            epsilon_end: 0.01,
            decision_period: 10.0,
            averaging: 0.5,
        }
    }
}

impl SynthOptions {
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let f = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// One-step Q-learning backup `q[a] += lr·(r + γ·max_next − q[a])`.
pub fn q_update(q: &mut [f64], slot: usize, reward: f64, discount: f64, next_max: f64, lr: f64) {
    q[slot] += lr * (reward + discount * next_max - q[slot]);
}

/// First slot of `avail` with the highest value.
pub fn greedy(q: &[f64], avail: &[usize]) -> usize {
    let mut best = avail[0];
    for &s in &avail[1..] {
        if q[s] > q[best] {
            best = s;
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
pub struct QTable {
    values: HashMap<Key, Vec<f64>>,
    counts: HashMap<Key, Vec<u64>>,
    avail: HashMap<Key, Vec<usize>>,
    visits: HashMap<Key, u64>,
    init: f64,
}

impl QTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn row(&mut self, k: Key, slots: usize, init: f64) -> &mut Vec<f64> {
        self.values.entry(k).or_insert_with(|| vec![init; slots])
    }

    /// Greedy slot among the actions tried at least once; wait if none was.
    fn best_tried(&self, k: &Key, q: &[f64]) -> usize {
        let avail = &self.avail[k];
        let tried: Vec<usize> = match self.counts.get(k) {
            Some(c) => avail.iter().copied().filter(|&s| c[s] > 0).collect(),
            None => Vec::new(),
        };
        if tried.is_empty() { 0 } else { greedy(q, &tried) }
    }

    /// Bootstrap value of `k`: best tried action, or the initial value when
    /// nothing was tried yet.
    fn max_over(&self, k: &Key, avail: &[usize]) -> f64 {
        match (self.values.get(k), self.counts.get(k)) {
            (Some(q), Some(c)) => {
                let v = avail.iter().filter(|&&s| c[s] > 0).map(|&s| q[s]).fold(f64::NEG_INFINITY, f64::max);
                if v.is_finite() { v } else { self.init }
            }
            _ => self.init,
        }
    }
}

/// Learned strategy plus the training statistics behind it.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub strategy: Strategy,
    pub q: QTable,
    pub visits: BTreeMap<AbstractState, u64>,
}

pub fn synthesize(game: &Game, goal: &[String], opts: &SynthOptions, rng_seed: u64) -> Result<Synthesis, SynthError> {
    if opts.episodes == 0 {
        return Err(SynthError::NoEpisodes);
    }
    let goal = game.goal_mask(goal)?;
    let slots = game.slots();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let init = opts.horizon.max(0.0);
    let mut table = QTable { init, ..QTable::default() };
    let avg_from = opts.episodes - ((opts.episodes as f64 * opts.averaging.clamp(0.0, 1.0)) as usize).min(opts.episodes);
    let mut mean: HashMap<Key, (Vec<f64>, usize)> = HashMap::new();
    for ep in 0..opts.episodes {
        let eps = opts.epsilon(ep);
        let mut cfg = game.network.initial_config(Some(&mut rng));
        let mut key = game.key(&cfg);
        let mut avail = game.available(&cfg);
        while cfg.clock < opts.horizon {
            table.avail.entry(key).or_insert_with(|| avail.clone());
            *table.visits.entry(key).or_insert(0) += 1;
            let slot = if rng.random::<f64>() < eps {
                avail[rng.random_range(0..avail.len())]
            } else {
                greedy(table.row(key, slots, init), &avail)
            };
            let acted = game.act(&cfg, slot, &mut Resolver::Sample(&mut rng))?;
            let (next, reward) = game.advance(&acted, opts.decision_period, opts.horizon, &goal, &mut rng)?;
            let next_key = game.key(&next);
            let next_avail = game.available(&next);
            let next_max = table.max_over(&next_key, &next_avail);
            let dt = next.clock - cfg.clock;
            let discount = opts.discount.powf(dt / opts.decision_period);
            let n = &mut table.counts.entry(key).or_insert_with(|| vec![0; slots])[slot];
            *n += 1;
            let lr = opts.learning_rate.max(1.0 / *n as f64);
            q_update(table.row(key, slots, init), slot, reward, discount, next_max, lr);
            cfg = next;
            key = next_key;
            avail = next_avail;
        }
        if ep >= avg_from {
            for (k, q) in &table.values {
                let (m, n) = mean.entry(*k).or_insert_with(|| (vec![0.0; slots], 0));
                *n += 1;
                for (mi, qi) in m.iter_mut().zip(q) {
                    *mi += (qi - *mi) / *n as f64;
                }
            }
        }
    }
    for (k, (m, _)) in mean {
        table.values.insert(k, m);
    }
    let mut entries = BTreeMap::new();
    let mut visits = BTreeMap::new();
    for (k, q) in &table.values {
        let state = game.state_of(k);
        entries.insert(state.clone(), game.slot_name(table.best_tried(k, q)).to_string());
        visits.insert(state, table.visits[k]);
    }
    Ok(Synthesis { strategy: Strategy { entries }, q: table, visits })
}

/// Determinized mapping from abstract states to actions; absent states wait.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub entries: BTreeMap<AbstractState, String>,
}

pub const STRATEGY_HEADER: &str = "ph_loc,pa_loc,r1,r2,r3,r4,r5,r_on,action";

impl Strategy {
    pub fn recommend(&self, state: &AbstractState) -> &str {
        self.entries.get(state).map_or(WAIT, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(STRATEGY_HEADER);
        out.push('\n');
        for (s, a) in &self.entries {
            out.push_str(&s.ph_loc);
            out.push(',');
            out.push_str(&s.pa_loc);
            for c in s.flag_letters().chars() {
                out.push(',');
                out.push(c);
            }
            out.push(',');
            out.push_str(a);
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SynthError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| SynthError::Parse { line: 1, msg: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        if header.join(",") != STRATEGY_HEADER {
            return Err(SynthError::Parse { line: 1, msg: format!("expected header `{STRATEGY_HEADER}`") });
        }
        let mut entries = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| SynthError::Parse { line, msg: e.to_string() })?;
            if rec.len() != 9 {
                return Err(SynthError::Parse { line, msg: format!("expected 9 fields, got {}", rec.len()) });
            }
            let mut bits = [false; 6];
            for (j, b) in bits.iter_mut().enumerate() {
                *b = match &rec[2 + j] {
                    "T" | "1" | "true" => true,
                    "F" | "0" | "false" => false,
                    other => return Err(SynthError::Parse { line, msg: format!("bad flag `{other}`") }),
                };
            }
            let flags = Flags { vitals: [bits[0], bits[1], bits[2], bits[3], bits[4]], on: bits[5] };
            entries.insert(AbstractState::new(&rec[0], &rec[1], flags), rec[8].to_string());
        }
        Ok(Self { entries })
    }

    /// Names the strategy mentions that `game` does not know, as messages.
    pub fn mismatches(&self, game: &Game) -> Vec<String> {
        let ph = &game.network.automata[game.controller];
        let pa = &game.network.automata[game.patient];
        let mut out = Vec::new();
        for (s, a) in &self.entries {
            if ph.location_index(&s.ph_loc).is_none() {
                out.push(format!("unknown physician location `{}`", s.ph_loc));
            }
            if pa.location_index(&s.pa_loc).is_none() {
                out.push(format!("unknown patient location `{}`", s.pa_loc));
            }
            if game.slot_of(a).is_none() {
                out.push(format!("unknown action `{a}`"));
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Fraction of seeds agreeing with the modal action, per state seen in at
/// least `min_seeds` of the syntheses.
pub fn argmax_agreement(runs: &[Synthesis], min_seeds: usize) -> BTreeMap<AbstractState, f64> {
    let mut seen: BTreeMap<&AbstractState, Vec<&str>> = BTreeMap::new();
    for r in runs {
        for (s, a) in &r.strategy.entries {
            seen.entry(s).or_default().push(a);
        }
    }
    let mut out = BTreeMap::new();
    for (s, acts) in seen {
        if acts.len() < min_seeds {
            continue;
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &acts {
            *counts.entry(a).or_insert(0) += 1;
        }
        let modal = counts.values().copied().max().unwrap_or(0);
        out.insert(s.clone(), modal as f64 / acts.len() as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEval {
    pub runs: usize,
    pub mean_sojourn: f64,
    pub std_sojourn: f64,
    /// Runs ending with each vital (in `r1..r5` order) inside its range.
    pub in_range: [usize; 5],
    /// Fraction of decisions taken in states the strategy maps.
    pub coverage: f64,
}

impl StrategyEval {
    pub fn std_error(&self) -> f64 {
        self.std_sojourn / (self.runs as f64).sqrt()
    }
}

/// Simulate the game `runs` times with decisions taken by `policy`.
pub fn evaluate_policy<P>(game: &Game, goal: &[String], policy: P, horizon: f64, period: f64, runs: usize, seed: u64) -> Result<StrategyEval, SynthError>
where
    P: Fn(&AbstractState, &[usize], &mut dyn RngCore) -> Option<usize> + Sync,
{
    let goal = game.goal_mask(goal)?;
    let results: Vec<(f64, Flags, usize, usize)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut cfg = game.network.initial_config(Some(&mut rng));
            let mut sojourn = 0.0;
            let (mut decisions, mut covered) = (0, 0);
            while cfg.clock < horizon {
                let avail = game.available(&cfg);
                let state = game.abstract_state(&cfg);
                decisions += 1;
                let slot = match policy(&state, &avail, &mut rng) {
                    Some(s) => {
                        covered += 1;
                        if avail.contains(&s) {
                            s
                        } else {
                            0
                        }
                    }
                    None => 0,
                };
                let acted = game.act(&cfg, slot, &mut Resolver::Sample(&mut rng))?;
                let (next, r) = game.advance(&acted, period, horizon, &goal, &mut rng)?;
                sojourn += r;
                cfg = next;
            }
            Ok((sojourn, cfg.flags, decisions, covered))
        })
        .collect::<Result<_, ShaError>>()?;
    let n = results.len();
    let mean = if n == 0 { 0.0 } else { results.iter().map(|r| r.0).sum::<f64>() / n as f64 };
    let var = if n < 2 { 0.0 } else { results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
    let mut in_range = [0; 5];
    for r in &results {
        for (i, ok) in r.1.vitals.iter().enumerate() {
            if *ok {
                in_range[i] += 1;
            }
        }
    }
    let decisions: usize = results.iter().map(|r| r.2).sum();
    let covered: usize = results.iter().map(|r| r.3).sum();
    Ok(StrategyEval {
        runs: n,
        mean_sojourn: mean,
        std_sojourn: var.sqrt(),
        in_range,
        coverage: if decisions == 0 { 1.0 } else { covered as f64 / decisions as f64 },
    })
}

pub fn evaluate_strategy(game: &Game, goal: &[String], strategy: &Strategy, horizon: f64, period: f64, runs: usize, seed: u64) -> Result<StrategyEval, SynthError> {
    evaluate_policy(
        game,
        goal,
        |s, _, _| strategy.entries.get(s).and_then(|a| game.slot_of(a)),
        horizon,
        period,
        runs,
        seed,
    )
}

/// Uniformly random choice among the open decision slots.
pub fn evaluate_random(game: &Game, goal: &[String], horizon: f64, period: f64, runs: usize, seed: u64) -> Result<StrategyEval, SynthError> {
    evaluate_policy(game, goal, |_, avail, rng| Some(avail[rng.random_range(0..avail.len())]), horizon, period, runs, seed)
}

/// In-range check of one vital value against the default safe range.
pub fn vital_in_range(vital: &str, value: f64) -> bool {
    VITALS
        .iter()
        .position(|v| *v == vital)
        .is_some_and(|i| (DEFAULT_SAFE_RANGES[i].0..=DEFAULT_SAFE_RANGES[i].1).contains(&value))
}
