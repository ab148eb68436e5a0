//! Lightweight respiratory physiology simulator driven by ventilator settings
//! and scripted complications.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{VENT_PARAMS, VENT_RANGES, VITALS};
use crate::kv::{parse_number, KvFile};
use crate::labeling::{Reading, Signal, SignalBundle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysioError {
    #[error("unknown complication `{0}`")]
    UnknownKind(String),
    #[error("severity {0} outside [0,1]")]
    BadSeverity(f64),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("scenario: {0}")]
    Script(String),
    #[error("controller: {0}")]
    Controller(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComplicationKind {
    Asthma,
    Pneumonia,
    Ards,
    Copd,
}

impl ComplicationKind {
    pub fn parse(s: &str) -> Result<Self, PhysioError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asthma" => Ok(Self::Asthma),
            "pneumonia" => Ok(Self::Pneumonia),
            "ards" => Ok(Self::Ards),
            "copd" => Ok(Self::Copd),
            _ => Err(PhysioError::UnknownKind(s.trim().to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Asthma => "asthma",
            Self::Pneumonia => "pneumonia",
            Self::Ards => "ards",
            Self::Copd => "copd",
        }
    }

    /// Seconds from onset to full severity.
    pub fn ramp(self) -> f64 {
        match self {
            Self::Asthma => 10.0,
            Self::Pneumonia => 120.0,
            Self::Ards => 60.0,
            Self::Copd => 300.0,
        }
    }

    pub fn default_severity(self) -> f64 {
        match self {
            Self::Asthma => 0.6,
            Self::Pneumonia => 0.5,
            Self::Ards => 0.8,
            Self::Copd => 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complication {
    pub kind: ComplicationKind,
    pub severity: f64,
    pub onset: f64,
}

impl Complication {
    pub fn effective(&self, t: f64) -> f64 {
        let ramp = self.kind.ramp();
        let frac = if ramp > 0.0 { ((t - self.onset) / ramp).clamp(0.0, 1.0) } else { 1.0 };
        self.severity * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VentilatorSettings {
    pub fiox: f64,
    pub peep: f64,
    pub rera: f64,
    pub tvol: f64,
    pub on: bool,
}

impl Default for VentilatorSettings {
    fn default() -> Self {
        Self { fiox: 0.4, peep: 5.0, rera: 12.0, tvol: 400.0, on: false }
    }
}

impl VentilatorSettings {
    pub fn get(&self, j: usize) -> f64 {
        [self.fiox, self.peep, self.rera, self.tvol][j]
    }

    /// Set parameter `j`, clamped to its admissible range; returns true if clamped.
    pub fn set(&mut self, j: usize, v: f64) -> bool {
        let (lo, hi) = VENT_RANGES[j];
        let c = v.clamp(lo, hi);
        match j {
            0 => self.fiox = c,
            1 => self.peep = c,
            2 => self.rera = c,
            _ => self.tvol = c,
        }
        c != v
    }

    /// Parameter values as reported by the device: all zero when off.
    pub fn reported(&self) -> [f64; 4] {
        if self.on {
            [self.fiox, self.peep, self.rera, self.tvol]
        } else {
            [0.0; 4]
        }
    }
}

/// Relaxation time constants in seconds, in vitals order CD, HR, OS, RR, TV.
pub const TAU: [f64; 5] = [45.0, 20.0, 30.0, 5.0, 10.0];

/// Relative noise amplitude on each vital.
pub const NOISE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    /// Vitals in order CD, HR, OS, RR, TV.
    pub vitals: [f64; 5],
    pub complications: Vec<Complication>,
    pub t: f64,
}

impl Default for PatientState {
    fn default() -> Self {
        Self { vitals: [40.0, 75.0, 97.0, 14.0, 400.0], complications: Vec::new(), t: 0.0 }
    }
}

impl PatientState {
    pub fn vital(&self, name: &str) -> Option<f64> {
        VITALS.iter().position(|v| *v == name).map(|i| self.vitals[i])
    }

    pub fn respiratory_severity(&self) -> f64 {
        self.complications.iter().map(|c| c.effective(self.t)).fold(0.0, f64::max)
    }

    pub fn inject_complication(&mut self, kind: ComplicationKind, severity: f64) -> Result<(), PhysioError> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(PhysioError::BadSeverity(severity));
        }
        self.complications.retain(|c| c.kind != kind);
        self.complications.push(Complication { kind, severity, onset: self.t });
        Ok(())
    }

    pub fn clear_complication(&mut self, kind: ComplicationKind) {
        self.complications.retain(|c| c.kind != kind);
    }
}

/// Steady-state targets for the vitals, in order CD, HR, OS, RR, TV.
pub fn targets(sev: f64, s: &VentilatorSettings) -> [f64; 5] {
    let (tv, os, cd, rr);
    if s.on {
        tv = s.tvol * (1.0 - 0.5 * sev);
        os = (82.0 + 18.0 * s.fiox + 0.3 * (s.peep - 5.0) - 25.0 * sev).clamp(50.0, 100.0);
        cd = 40.0 + 15.0 * sev - 0.8 * (s.rera - 12.0);
        rr = s.rera;
    } else {
        tv = 400.0 * (1.0 - 0.8 * sev);
        os = (97.0 - 30.0 * sev).clamp(50.0, 100.0);
        cd = 40.0 + 15.0 * sev;
        rr = 14.0 + 8.0 * sev;
    }
    let hr = 75.0 + 40.0 * sev;
    [cd, hr, os, rr, tv]
}

/// Advance the patient by `dt` seconds. Each vital relaxes exponentially
/// toward its target; `rng` adds zero-mean noise of 1 % of the target.
pub fn tick(state: &PatientState, settings: &VentilatorSettings, dt: f64, rng: Option<&mut ChaCha8Rng>) -> Result<PatientState, PhysioError> {
    if !(dt > 0.0) {
        return Err(PhysioError::BadStep(dt));
    }
    let sev = state.respiratory_severity();
    let target = targets(sev, settings);
    let mut next = state.clone();
    let mut rng = rng;
    for i in 0..5 {
        let decay = (-dt / TAU[i]).exp();
        let mut x = target[i] + (state.vitals[i] - target[i]) * decay;
        if let Some(r) = rng.as_deref_mut() {
            let sd = NOISE_FRACTION * target[i].abs();
            if sd > 0.0 {
                x += Normal::new(0.0, sd).expect("positive sd").sample(r);
            }
        }
        next.vitals[i] = x.max(0.0);
    }
    next.vitals[2] = next.vitals[2].clamp(50.0, 100.0);
    next.t = state.t + dt;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScriptEvent {
    Inject { kind: ComplicationKind, severity: f64 },
    Clear { kind: ComplicationKind },
    /// Ventilator parameter index (see [`VENT_PARAMS`]) or `None` for the on/off switch.
    Set { param: Option<usize>, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    pub duration: f64,
    pub timeline: Vec<(f64, ScriptEvent)>,
    pub initial: PatientState,
    pub initial_settings: VentilatorSettings,
    pub seed: u64,
}

impl ScenarioScript {
    pub fn new(name: &str, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            duration,
            timeline: Vec::new(),
            initial: PatientState::default(),
            initial_settings: VentilatorSettings::default(),
            seed: 0,
        }
    }

    pub fn inject(mut self, t: f64, kind: ComplicationKind, severity: f64) -> Self {
        self.timeline.push((t, ScriptEvent::Inject { kind, severity }));
        self
    }

    pub fn clear(mut self, t: f64, kind: ComplicationKind) -> Self {
        self.timeline.push((t, ScriptEvent::Clear { kind }));
        self
    }

    pub fn set(mut self, t: f64, param: &str, value: f64) -> Self {
        let param = VENT_PARAMS.iter().position(|p| *p == param);
        self.timeline.push((t, ScriptEvent::Set { param, value }));
        self
    }

    pub fn validate(&self) -> Result<(), PhysioError> {
        if !(self.duration > 0.0) {
            return Err(PhysioError::Script(format!("duration {}", self.duration)));
        }
        for (t, e) in &self.timeline {
            if !(0.0..=self.duration).contains(t) {
                return Err(PhysioError::Script(format!("event at {t} outside [0, {}]", self.duration)));
            }
            if let ScriptEvent::Inject { severity, .. } = e {
                if !(0.0..=1.0).contains(severity) {
                    return Err(PhysioError::BadSeverity(*severity));
                }
            }
        }
        Ok(())
    }

    /// Keys: `duration`, `seed`, `name`, `inject = t,kind,severity`,
    /// `clear = t,kind`, `set = t,param,value` (param `on` takes 0/1),
    /// `init.<vital> = v`.
    pub fn parse(text: &str) -> Result<Self, PhysioError> {
        let kv = KvFile::parse(text).map_err(|e| PhysioError::Script(e.to_string()))?;
        let err = |e: crate::kv::KvError| PhysioError::Script(e.to_string());
        let duration = kv.get_f64("duration").map_err(err)?.ok_or_else(|| PhysioError::Script("missing duration".into()))?;
        let mut s = ScenarioScript::new(kv.get("name").unwrap_or("scenario"), duration);
        s.seed = kv.get_u64("seed").map_err(err)?.unwrap_or(0);
        let num = |v: &str| parse_number(v).ok_or_else(|| PhysioError::Script(format!("bad number `{v}`")));
        for (key, value, _) in &kv.entries {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            match (key.as_str(), parts.as_slice()) {
                ("inject", [t, kind, sev]) => {
                    s.timeline.push((num(t)?, ScriptEvent::Inject { kind: ComplicationKind::parse(kind)?, severity: num(sev)? }))
                }
                ("inject", [t, kind]) => {
                    let kind = ComplicationKind::parse(kind)?;
                    s.timeline.push((num(t)?, ScriptEvent::Inject { kind, severity: kind.default_severity() }))
                }
                ("clear", [t, kind]) => s.timeline.push((num(t)?, ScriptEvent::Clear { kind: ComplicationKind::parse(kind)? })),
                ("set", [t, p, v]) => {
                    let param = if *p == "on" {
                        None
                    } else {
                        Some(VENT_PARAMS.iter().position(|x| x == p).ok_or_else(|| PhysioError::Script(format!("unknown parameter `{p}`")))?)
                    };
                    s.timeline.push((num(t)?, ScriptEvent::Set { param, value: num(v)? }))
                }
                ("inject" | "clear" | "set", _) => return Err(PhysioError::Script(format!("malformed `{key} = {value}`"))),
                (k, _) if k.starts_with("init.") => {
                    let v = &k[5..];
                    let i = VITALS.iter().position(|x| *x == v).ok_or_else(|| PhysioError::Script(format!("unknown vital `{v}`")))?;
                    s.initial.vitals[i] = num(value)?;
                }
                ("duration" | "seed" | "name", _) => {}
                (k, _) => return Err(PhysioError::Script(format!("unknown key `{k}`"))),
            }
        }
        s.timeline.sort_by(|a, b| a.0.total_cmp(&b.0));
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("name = {}\nduration = {}\nseed = {}\n", self.name, self.duration, self.seed);
        let def = PatientState::default();
        for (i, v) in VITALS.iter().enumerate() {
            if self.initial.vitals[i] != def.vitals[i] {
                out.push_str(&format!("init.{v} = {}\n", self.initial.vitals[i]));
            }
        }
        for (t, e) in &self.timeline {
            match e {
                ScriptEvent::Inject { kind, severity } => out.push_str(&format!("inject = {t},{},{severity}\n", kind.name())),
                ScriptEvent::Clear { kind } => out.push_str(&format!("clear = {t},{}\n", kind.name())),
                ScriptEvent::Set { param, value } => {
                    let p = param.map_or("on", |j| VENT_PARAMS[j]);
                    out.push_str(&format!("set = {t},{p},{value}\n"))
                }
            }
        }
        out
    }
}

/// Apply a `set` script line to the settings; returns true if a value was clamped.
pub fn apply_set(settings: &mut VentilatorSettings, param: Option<usize>, value: f64) -> bool {
    match param {
        None => {
            settings.on = value > 0.0;
            false
        }
        Some(j) => settings.set(j, value),
    }
}

/// Who drives the ventilator during a scenario.
pub enum Controller<'a> {
    /// Settings never change.
    None,
    /// The script's `set` lines are applied at their times.
    Scripted,
    /// Consulted once per tick with `(t, current reading, settings)`.
    Callback(&'a mut dyn FnMut(f64, &Reading, &mut VentilatorSettings) -> Result<(), String>),
}

/// Live simulator instance: patient, settings and the pending script.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub state: PatientState,
    pub settings: VentilatorSettings,
    pub script: ScenarioScript,
    next_event: usize,
    rng: ChaCha8Rng,
    pub noise: bool,
}

impl Simulator {
    pub fn new(script: ScenarioScript) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(script.seed);
        Self {
            state: script.initial.clone(),
            settings: script.initial_settings,
            script,
            next_event: 0,
            rng,
            noise: true,
        }
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    pub fn reading(&self) -> Reading {
        Reading { vitals: self.state.vitals, params: self.settings.reported() }
    }

    /// Apply due timeline entries; `set` lines only when `scripted`.
    pub fn apply_due(&mut self, scripted: bool) -> Result<(), PhysioError> {
        while self.next_event < self.script.timeline.len() && self.script.timeline[self.next_event].0 <= self.state.t + 1e-9 {
            let (_, e) = self.script.timeline[self.next_event].clone();
            match e {
                ScriptEvent::Inject { kind, severity } => self.state.inject_complication(kind, severity)?,
                ScriptEvent::Clear { kind } => self.state.clear_complication(kind),
                ScriptEvent::Set { param, value } => {
                    if scripted {
                        apply_set(&mut self.settings, param, value);
                    }
                }
            }
            self.next_event += 1;
        }
        Ok(())
    }

    pub fn advance(&mut self, dt: f64) -> Result<(), PhysioError> {
        let rng = if self.noise { Some(&mut self.rng) } else { None };
        self.state = tick(&self.state, &self.settings, dt, rng)?;
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.state.t >= self.script.duration - 1e-9
    }
}

/// Run a scenario at 1 Hz and return all nine signals.
pub fn run_scenario(script: &ScenarioScript, controller: Controller) -> Result<SignalBundle, PhysioError> {
    script.validate()?;
    let mut sim = Simulator::new(script.clone());
    let mut ctl = controller;
    let scripted = matches!(ctl, Controller::Scripted);
    let n = script.duration.floor() as usize + 1;
    let mut cols: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(n); 9];
    for k in 0..n {
        sim.apply_due(scripted)?;
        if let Controller::Callback(f) = &mut ctl {
            let r = sim.reading();
            f(sim.t(), &r, &mut sim.settings).map_err(PhysioError::Controller)?;
        }
        let r = sim.reading();
        for i in 0..5 {
            cols[i].push((sim.t(), r.vitals[i]));
        }
        for j in 0..4 {
            cols[5 + j].push((sim.t(), r.params[j]));
        }
        if k + 1 < n {
            sim.advance(1.0)?;
        }
    }
    let mut b = SignalBundle::new();
    for (i, name) in VITALS.iter().chain(VENT_PARAMS.iter()).enumerate() {
        b.insert(Signal::new(name, std::mem::take(&mut cols[i])));
    }
    Ok(b)
}
