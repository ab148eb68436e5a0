//! Online decision support: a session keeps the digital state of the
//! physician/patient network aligned with a simulated patient, serves the
//! strategy's recommendation and actuates accepted actions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::domain::{EventName, FLAG_NAMES, SINK, VENT_PARAMS, VITALS};
use crate::labeling::{label_step, LabelingConfig, Reading};
use crate::physio::{PhysioError, ScenarioScript, Simulator, VentilatorSettings};
use crate::sha::dsl::parse_network;
use crate::sha::network::{compose_unchecked, Configuration, Flags, Resolver};
use crate::sha::{ActionKind, Location, Sha, ShaError};
use crate::synth::{to_game, AbstractState, Game, Strategy, SynthError, WAIT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("strategy does not match the model: {}", .0.join("; "))]
    StrategyModelMismatch(Vec<String>),
    #[error("`{0}` is not a controllable action")]
    NotControllable(String),
    #[error("session is closed")]
    SessionClosed,
    #[error(transparent)]
    Model(#[from] ShaError),
    #[error(transparent)]
    Physio(#[from] PhysioError),
}

impl From<SynthError> for RuntimeError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Model(m) => RuntimeError::Model(m),
            other => RuntimeError::Parse(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Recommendations are applied to the simulator as they are issued.
    Auto,
    /// Settings change only through [`Session::post_action`].
    RecommendOnly,
}

impl std::str::FromStr for Mode {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" | "auto-actuate" | "auto_actuate" => Ok(Mode::Auto),
            "recommend" | "recommend-only" | "recommend_only" => Ok(Mode::RecommendOnly),
            other => Err(RuntimeError::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Vital,
    Action,
    Realign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: f64,
    pub source: Source,
    /// Event name; for realignment the flag letters it restored.
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeOptions {
    /// Step per up/down action, in FIOX, PEEP, RERA, TVOL order.
    pub increments: [f64; 4],
    /// In auto mode, longest time an unchanged state waits before the
    /// strategy is consulted again.
    pub decision_period: f64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self { increments: [0.1, 2.0, 2.0, 50.0], decision_period: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub action: String,
    pub abstract_state: AbstractState,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub action: String,
    pub clamped: bool,
    pub warning: Option<String>,
    pub settings: VentilatorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub vitals: BTreeMap<String, f64>,
    pub settings: VentilatorSettings,
    pub events: Vec<String>,
    pub actions: Vec<String>,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub locations: BTreeMap<String, String>,
    pub vitals: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub r_on: bool,
    pub clock: f64,
    pub degraded: bool,
    pub closed: bool,
    pub mode: Mode,
    pub settings: VentilatorSettings,
}

/// Add an edgeless `sink` location to `sha` unless it already has one.
pub fn with_sink(mut sha: Sha) -> Sha {
    if sha.location(SINK).is_none() {
        let mut sink = Location::new(SINK);
        for v in &sha.variables {
            sink = sink.with_flow(&v.name, 0.0, 0.0, 0.0);
        }
        sha.locations.push(sink);
    }
    sha
}

/// The runtime view of a physician/patient network: the synthesis game
/// over the network whose patient has a sink.
pub fn runtime_game(shas: Vec<Sha>) -> Result<(Game, usize), RuntimeError> {
    let ctl = shas.iter().position(|s| s.controller);
    let shas: Vec<Sha> = shas.into_iter().enumerate().map(|(i, s)| if Some(i) == ctl { s } else { with_sink(s) }).collect();
    let game = to_game(&compose_unchecked(shas)?)?;
    let sink = game.network.automata[game.patient].location_index(SINK).expect("sink was added");
    Ok((game, sink))
}

/// Apply one logged entry. Returns the next configuration and whether the
/// patient is now in the sink.
///
/// Observed vitals move automata by their most likely enabled edge; a vital
/// event from the patient's alphabet that its location cannot take sends it
/// to the sink. An action moves the
/// physician along its first enabled output and leaves the patient where it
/// is whenever the model allows it to stay: the effect of an action is
/// confirmed by later vitals, not assumed.
pub fn step_entry(game: &Game, sink: usize, cfg: &Configuration, entry: &LogEntry) -> Result<(Configuration, bool), ShaError> {
    let net = &game.network;
    let pat = game.patient;
    match entry.source {
        Source::Vital => {
            let tr = net.fire_observed(cfg, &entry.event, &mut Resolver::MostLikely)?;
            let mut next = tr.config;
            let known = net.automata[pat].edges.iter().any(|e| e.action == entry.event);
            let lost = known && tr.taken[pat].is_none() && next.locations[pat] != sink;
            if lost {
                net.relocate(&mut next, pat, sink);
            }
            let in_sink = next.locations[pat] == sink;
            Ok((next, in_sink))
        }
        Source::Action => {
            let Some(act) = net.action_id(&entry.event) else {
                let mut next = cfg.clone();
                next.flags.apply_event(&entry.event);
                return Ok((next, cfg.locations[pat] == sink));
            };
            let mut taken: SmallVec<[Option<usize>; 4]> = SmallVec::from_elem(None, net.len());
            let out = net.enabled_edges(cfg, game.controller, act, ActionKind::Output);
            let emitter = out.first().map(|_| game.controller);
            taken[game.controller] = out.first().copied();
            for a in (0..net.len()).filter(|&a| a != game.controller) {
                let cands = net.enabled_edges(cfg, a, act, ActionKind::Input);
                if cands.is_empty() {
                    continue;
                }
                let stay = cands.iter().copied().find(|&e| net.compiled[a].edges[e].dst == cfg.locations[a]);
                taken[a] = Some(match stay {
                    Some(e) => e,
                    None => net.choose(a, &cands, &mut Resolver::MostLikely)?,
                });
            }
            let next = net.apply(cfg, act, emitter, taken, &mut Resolver::MostLikely).config;
            let in_sink = next.locations[pat] == sink;
            Ok((next, in_sink))
        }
        Source::Realign => {
            let mut next = cfg.clone();
            for a in 0..net.len() {
                let init = net.compiled[a].initial;
                net.relocate(&mut next, a, init);
            }
            next.flags = parse_flag_letters(&entry.event).ok_or_else(|| ShaError::EventNotEnabled(entry.event.clone()))?;
            Ok((next, false))
        }
    }
}

fn flag_letters(f: &Flags) -> String {
    f.vitals.iter().chain(std::iter::once(&f.on)).map(|&b| if b { 'T' } else { 'F' }).collect()
}

fn parse_flag_letters(s: &str) -> Option<Flags> {
    let b: Vec<bool> = s
        .chars()
        .map(|c| match c {
            'T' => Some(true),
            'F' => Some(false),
            _ => None,
        })
        .collect::<Option<_>>()?;
    (b.len() == 6).then(|| Flags { vitals: [b[0], b[1], b[2], b[3], b[4]], on: b[5] })
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: u64,
    pub game: Game,
    pub strategy: Strategy,
    pub labeling: LabelingConfig,
    pub options: RuntimeOptions,
    pub mode: Mode,
    pub sim: Simulator,
    sink: usize,
    initial: Configuration,
    config: Configuration,
    log: Vec<LogEntry>,
    last: Reading,
    degraded: bool,
    closed: bool,
    decided: Option<(AbstractState, f64)>,
}

/// Parse the model, strategy and scenario texts and open a session.
pub fn start_session(model: &str, strategy: &str, scenario: &str, mode: Mode) -> Result<Session, RuntimeError> {
    let shas = parse_network(model).map_err(|e| RuntimeError::Parse(format!("model: {e}")))?;
    let strategy = Strategy::from_csv(strategy).map_err(|e| RuntimeError::Parse(format!("strategy: {e}")))?;
    let script = ScenarioScript::parse(scenario).map_err(|e| RuntimeError::Parse(format!("scenario: {e}")))?;
    Session::new(shas, strategy, script, mode, LabelingConfig::default(), RuntimeOptions::default())
}

impl Session {
    pub fn new(
        shas: Vec<Sha>,
        strategy: Strategy,
        script: ScenarioScript,
        mode: Mode,
        labeling: LabelingConfig,
        options: RuntimeOptions,
    ) -> Result<Self, RuntimeError> {
        script.validate()?;
        let (game, sink) = runtime_game(shas)?;
        let bad = strategy.mismatches(&game);
        if !bad.is_empty() {
            return Err(RuntimeError::StrategyModelMismatch(bad));
        }
        let mut sim = Simulator::new(script);
        sim.apply_due(false)?;
        let last = sim.reading();
        let mut initial = game.network.initial_config(None);
        initial.flags = last.flags(&labeling);
        Ok(Self {
            id: 0,
            game,
            strategy,
            labeling,
            options,
            mode,
            sim,
            sink,
            config: initial.clone(),
            initial,
            log: Vec::new(),
            last,
            degraded: false,
            closed: false,
            decided: None,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn degraded(&self) -> bool {
        self.degraded
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn abstract_state(&self) -> AbstractState {
        self.game.abstract_state(&self.config)
    }

    fn record(&mut self, entry: LogEntry) -> Result<(), RuntimeError> {
        let (next, in_sink) = step_entry(&self.game, self.sink, &self.config, &entry)?;
        self.config = next;
        self.degraded = in_sink;
        self.log.push(entry);
        Ok(())
    }

    /// Label a new reading against the previous one and fire the vital
    /// events on the digital state. Device settings are not labeled: they
    /// only change through actions, which are logged when posted.
    pub fn ingest(&mut self, reading: &Reading) -> Result<Vec<String>, RuntimeError> {
        if self.closed {
            return Err(RuntimeError::SessionClosed);
        }
        let events: Vec<String> = label_step(&self.last, reading, &self.labeling)
            .into_iter()
            .filter(|e| matches!(e, EventName::Vital(..)))
            .map(EventName::name)
            .collect();
        let t = self.sim.t();
        for e in &events {
            self.record(LogEntry { t, source: Source::Vital, event: e.clone() })?;
        }
        self.last = *reading;
        Ok(events)
    }

    pub fn recommendation(&self) -> Recommendation {
        let state = self.abstract_state();
        if self.degraded {
            return Recommendation {
                action: WAIT.to_string(),
                abstract_state: state,
                warning: Some("patient model left its known behavior; realign before acting".to_string()),
            };
        }
        let action = self.strategy.recommend(&state).to_string();
        let warning = (!self.strategy.entries.contains_key(&state)).then(|| "state not covered by the strategy".to_string());
        Recommendation { action, abstract_state: state, warning }
    }

    /// Apply `action` to the ventilator and fire it on the digital state.
    pub fn post_action(&mut self, action: &str) -> Result<Ack, RuntimeError> {
        if self.closed {
            return Err(RuntimeError::SessionClosed);
        }
        if self.game.slot_of(action).is_none_or(|s| s == 0) {
            return Err(RuntimeError::NotControllable(action.to_string()));
        }
        let mut clamped = false;
        match EventName::parse(action) {
            Some(EventName::On) => self.sim.settings.on = true,
            Some(EventName::Off) => self.sim.settings.on = false,
            Some(EventName::Param(j, dir)) => {
                let step = self.options.increments[j];
                let v = self.sim.settings.get(j);
                let target = if dir == crate::domain::ParamEvent::Up { v + step } else { v - step };
                clamped = self.sim.settings.set(j, target);
            }
            _ => {}
        }
        self.record(LogEntry { t: self.sim.t(), source: Source::Action, event: action.to_string() })?;
        self.last = self.sim.reading();
        let warning = clamped.then(|| format!("{action} clamped to the admissible range"));
        Ok(Ack { action: action.to_string(), clamped, warning, settings: self.sim.settings })
    }

    /// Reset both automata to their initial locations with the flags of the
    /// latest reading; clears degraded alignment.
    pub fn realign(&mut self) -> Result<(), RuntimeError> {
        if self.closed {
            return Err(RuntimeError::SessionClosed);
        }
        let flags = self.last.flags(&self.labeling);
        self.record(LogEntry { t: self.sim.t(), source: Source::Realign, event: flag_letters(&flags) })?;
        self.decided = None;
        Ok(())
    }

    /// Advance the simulation by `dt` seconds at 1 Hz, ingesting every
    /// sample; in auto mode the strategy acts on state changes and at least
    /// every decision period.
    pub fn tick(&mut self, dt: f64) -> Result<Vec<Frame>, RuntimeError> {
        if self.closed {
            return Err(RuntimeError::SessionClosed);
        }
        let steps = dt.max(0.0).round() as usize;
        let mut frames = Vec::with_capacity(steps);
        for _ in 0..steps {
            self.sim.advance(1.0)?;
            self.sim.apply_due(false)?;
            let reading = self.sim.reading();
            let events = self.ingest(&reading)?;
            let mut actions = Vec::new();
            if self.mode == Mode::Auto {
                if let Some(a) = self.auto_decision() {
                    self.post_action(&a)?;
                    self.decided = Some((self.abstract_state(), self.sim.t()));
                    actions.push(a);
                }
            }
            frames.push(Frame {
                t: self.sim.t(),
                vitals: self.vitals(),
                settings: self.sim.settings,
                events,
                actions,
                recommendation: self.recommendation(),
            });
        }
        Ok(frames)
    }

    fn auto_decision(&mut self) -> Option<String> {
        let t = self.sim.t();
        let state = self.abstract_state();
        let due = match &self.decided {
            Some((s, t0)) => *s != state || t - t0 >= self.options.decision_period - 1e-9,
            None => true,
        };
        if !due {
            return None;
        }
        let rec = self.recommendation();
        self.decided = Some((state, t));
        (rec.action != WAIT && rec.warning.is_none()).then_some(rec.action)
    }

    pub fn vitals(&self) -> BTreeMap<String, f64> {
        VITALS.iter().zip(self.sim.state.vitals).map(|(n, v)| (n.to_string(), v)).collect()
    }

    pub fn state(&self) -> SessionState {
        let net = &self.game.network;
        let locations = (0..net.len())
            .map(|a| (net.automata[a].name.clone(), net.location_name(a, self.config.locations[a]).to_string()))
            .collect();
        let f = &self.config.flags;
        let flags = FLAG_NAMES.iter().zip(f.vitals.iter().chain(std::iter::once(&f.on))).map(|(n, &b)| (n.to_string(), b)).collect();
        SessionState {
            locations,
            vitals: self.vitals(),
            flags,
            r_on: f.on,
            clock: self.sim.t(),
            degraded: self.degraded,
            closed: self.closed,
            mode: self.mode,
            settings: self.sim.settings,
        }
    }

    /// Re-run the log from the initial configuration.
    pub fn replay(&self) -> Result<Configuration, ShaError> {
        let mut cfg = self.initial.clone();
        for e in &self.log {
            cfg = step_entry(&self.game, self.sink, &cfg, e)?.0;
        }
        Ok(cfg)
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("t,source,event\n");
        for e in &self.log {
            let src = match e.source {
                Source::Vital => "vital",
                Source::Action => "action",
                Source::Realign => "realign",
            };
            out.push_str(&format!("{},{},{}\n", e.t, src, e.event));
        }
        out
    }

    /// Close the session and return its event log as CSV.
    pub fn close(&mut self) -> String {
        self.closed = true;
        self.log_csv()
    }

    /// Current reported ventilator parameters by name.
    pub fn parameters(&self) -> BTreeMap<String, f64> {
        VENT_PARAMS.iter().zip(self.sim.settings.reported()).map(|(n, v)| (n.to_string(), v)).collect()
    }
}
