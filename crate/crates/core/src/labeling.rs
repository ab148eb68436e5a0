//! Signals, pre-processing and the event labeling function.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EventName, ParamEvent, VitalEvent, DEFAULT_SAFE_RANGES, VENT_PARAMS, VITALS};
use crate::kv::{KvError, KvFile};
use crate::sha::network::Flags;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("peak hold needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("signal `{0}` is empty")]
    EmptySignal(String),
    #[error("missing signal `{0}`")]
    MissingSignal(String),
    #[error("time {0} outside the bundle span")]
    OutOfSpan(f64),
    #[error("signals are not on a shared time grid")]
    GridMismatch,
    #[error("invalid labeling config: {0}")]
    BadConfig(String),
    #[error("signal file: {0}")]
    Io(String),
}

impl From<KvError> for LabelError {
    fn from(e: KvError) -> Self {
        LabelError::BadConfig(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub name: String,
    pub unit: String,
    pub samples: Vec<(f64, f64)>,
}

/// Conventional unit of a vital or ventilator signal.
pub fn default_unit(name: &str) -> &'static str {
    match name {
        "CD" => "mmHg",
        "HR" | "RR" | "RERA" => "1/min",
        "OS" => "%",
        "TV" | "TVOL" => "mL",
        "PEEP" => "cmH2O",
        "FIOX" => "fraction",
        _ => "",
    }
}

impl Signal {
    pub fn new(name: &str, samples: Vec<(f64, f64)>) -> Self {
        Self { name: name.to_string(), unit: default_unit(name).to_string(), samples }
    }

    /// Signal sampled at `t = t0 + k·dt`.
    pub fn uniform(name: &str, t0: f64, dt: f64, values: &[f64]) -> Self {
        Self::new(name, values.iter().enumerate().map(|(k, &v)| (t0 + k as f64 * dt, v)).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    /// Linear interpolation, `None` outside the sampled span.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let s = &self.samples;
        let first = s.first()?;
        let last = s.last()?;
        if t < first.0 || t > last.0 {
            return None;
        }
        let k = s.partition_point(|p| p.0 <= t);
        if k == 0 {
            return Some(first.1);
        }
        let (t0, v0) = s[k - 1];
        if k == s.len() || t0 == t {
            return Some(v0);
        }
        let (t1, v1) = s[k];
        Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }
}

/// Replace each value by the most recent strict local maximum at or before it;
/// samples before the first peak hold the first value.
pub fn peak_hold(signal: &Signal) -> Result<Signal, LabelError> {
    let n = signal.samples.len();
    if n < 3 {
        return Err(LabelError::TooFewSamples(n));
    }
    let v = signal.values();
    let mut held = v[0];
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 && k + 1 < n && v[k] > v[k - 1] && v[k] > v[k + 1] {
            held = v[k];
        }
        out.push((signal.samples[k].0, held));
    }
    Ok(Signal { name: signal.name.clone(), unit: signal.unit.clone(), samples: out })
}

/// Linear interpolation onto a uniform grid from the first to the last timestamp.
pub fn resample(signal: &Signal, step: f64) -> Result<Signal, LabelError> {
    let (Some(first), Some(last)) = (signal.samples.first(), signal.samples.last()) else {
        return Err(LabelError::EmptySignal(signal.name.clone()));
    };
    if !(step > 0.0) {
        return Err(LabelError::BadConfig(format!("resample step {step}")));
    }
    let (t0, t1) = (first.0, last.0);
    let n = ((t1 - t0) / step + 1e-9).floor() as usize + 1;
    let samples = (0..n)
        .map(|k| {
            let t = t0 + k as f64 * step;
            (t, signal.value_at(t.min(t1)).unwrap_or(last.1))
        })
        .collect();
    Ok(Signal { name: signal.name.clone(), unit: signal.unit.clone(), samples })
}

/// The nine vital and ventilator signals of one patient.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalBundle {
    pub signals: BTreeMap<String, Signal>,
}

impl SignalBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: Signal) {
        self.signals.insert(s.name.clone(), s);
    }

    pub fn get(&self, name: &str) -> Result<&Signal, LabelError> {
        self.signals.get(name).ok_or_else(|| LabelError::MissingSignal(name.to_string()))
    }

    /// All nine signals in vitals-then-parameters order.
    pub fn ordered(&self) -> Result<Vec<&Signal>, LabelError> {
        VITALS.iter().chain(VENT_PARAMS.iter()).map(|n| self.get(n)).collect()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in self.signals.values() {
            if let (Some(a), Some(b)) = (s.samples.first(), s.samples.last()) {
                lo = lo.min(a.0);
                hi = hi.max(b.0);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Resample every signal onto the same uniform grid.
    pub fn resampled(&self, step: f64) -> Result<SignalBundle, LabelError> {
        let mut out = SignalBundle::new();
        for s in self.signals.values() {
            out.insert(resample(s, step)?);
        }
        Ok(out)
    }

    /// Read the long-format CSV `t,name,value`.
    pub fn read_csv<R: Read>(reader: R) -> Result<SignalBundle, LabelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut by_name: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for rec in rdr.deserialize::<(f64, String, f64)>() {
            let (t, name, value) = rec.map_err(|e| LabelError::Io(e.to_string()))?;
            if !t.is_finite() || !value.is_finite() {
                return Err(LabelError::Io(format!("non-finite sample for `{name}` at {t}")));
            }
            by_name.entry(name).or_default().push((t, value));
        }
        let mut out = SignalBundle::new();
        for (name, mut samples) in by_name {
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            out.insert(Signal::new(&name, samples));
        }
        Ok(out)
    }

    pub fn read_csv_file(path: &Path) -> Result<SignalBundle, LabelError> {
        let f = std::fs::File::open(path).map_err(|e| LabelError::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(f)
    }

    /// Write the long-format CSV, time-major, vitals then parameters.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LabelError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| LabelError::Io(e.to_string());
        w.write_record(["t", "name", "value"]).map_err(io)?;
        let mut rows: Vec<(f64, usize, &str, f64)> = Vec::new();
        for s in self.signals.values() {
            let order = VITALS
                .iter()
                .chain(VENT_PARAMS.iter())
                .position(|n| *n == s.name)
                .unwrap_or(usize::MAX);
            rows.extend(s.samples.iter().map(|&(t, v)| (t, order, s.name.as_str(), v)));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
        for (t, _, name, v) in rows {
            w.write_record([t.to_string(), name.to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| LabelError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    /// Safe range per vital, in [`VITALS`] order.
    pub ranges: [(f64, f64); 5],
    pub step: f64,
    /// Apply [`peak_hold`] to CD during pre-processing.
    pub peak_hold_cd: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { ranges: DEFAULT_SAFE_RANGES, step: 1.0, peak_hold_cd: false }
    }
}

impl LabelingConfig {
    /// Keys: `range.<vital> = lo,hi`, `resample.step = s`, `preprocess.peak_hold = CD`.
    pub fn from_kv(kv: &KvFile) -> Result<Self, LabelError> {
        let mut cfg = Self::default();
        for (i, v) in VITALS.iter().enumerate() {
            if let Some(pair) = kv.get_pair(&format!("range.{v}"))? {
                cfg.ranges[i] = pair;
            }
        }
        if let Some(s) = kv.get_f64("resample.step")? {
            cfg.step = s;
        }
        if let Some(p) = kv.get("preprocess.peak_hold") {
            cfg.peak_hold_cd = p.split(',').any(|x| x.trim() == "CD");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        for (i, (lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo < hi) {
                return Err(LabelError::BadConfig(format!("range of {} is [{lo}, {hi}]", VITALS[i])));
            }
        }
        if !(self.step > 0.0) {
            return Err(LabelError::BadConfig(format!("resample step {}", self.step)));
        }
        Ok(())
    }

    pub fn in_range(&self, vital: usize, v: f64) -> bool {
        let (lo, hi) = self.ranges[vital];
        lo <= v && v <= hi
    }

    /// Resample (and optionally peak-hold CD) onto the labeling grid.
    pub fn preprocess(&self, bundle: &SignalBundle) -> Result<SignalBundle, LabelError> {
        let mut out = bundle.resampled(self.step)?;
        if self.peak_hold_cd {
            if let Some(cd) = out.signals.get("CD") {
                if cd.samples.len() >= 3 {
                    let held = peak_hold(cd)?;
                    out.insert(held);
                }
            }
        }
        Ok(out)
    }
}

/// All nine readings at one instant: vitals then ventilator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Reading {
    pub vitals: [f64; 5],
    pub params: [f64; 4],
}

impl Reading {
    pub fn flags(&self, cfg: &LabelingConfig) -> Flags {
        let mut f = Flags::default();
        for i in 0..5 {
            f.vitals[i] = cfg.in_range(i, self.vitals[i]);
        }
        f.on = self.params.iter().any(|&p| p > 0.0);
        f
    }
}

/// Events between two consecutive readings, vitals first, then parameters,
/// then `on`/`off`, each group in declaration order.
pub fn label_step(prev: &Reading, cur: &Reading, cfg: &LabelingConfig) -> Vec<EventName> {
    let mut out = Vec::new();
    for i in 0..5 {
        let (lo, hi) = cfg.ranges[i];
        let (p, c) = (prev.vitals[i], cur.vitals[i]);
        if c > hi && p <= hi {
            out.push(EventName::Vital(i, VitalEvent::High));
        } else if c < lo && p >= lo {
            out.push(EventName::Vital(i, VitalEvent::Low));
        } else if cfg.in_range(i, c) && !cfg.in_range(i, p) {
            out.push(EventName::Vital(i, VitalEvent::Ok));
        }
    }
    for j in 0..4 {
        let (p, c) = (prev.params[j], cur.params[j]);
        if p != 0.0 && c != 0.0 {
            if c > p {
                out.push(EventName::Param(j, ParamEvent::Up));
            } else if c < p {
                out.push(EventName::Param(j, ParamEvent::Down));
            }
        }
    }
    if (0..4).all(|j| cur.params[j] > 0.0 && prev.params[j] == 0.0) {
        out.push(EventName::On);
    }
    if (0..4).all(|j| cur.params[j] == 0.0 && prev.params[j] > 0.0) {
        out.push(EventName::Off);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<(f64, String)>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, t: f64, e: impl Into<String>) {
        self.events.push((t, e.into()));
    }
}

/// Readings of a bundle on its shared grid.
pub fn readings(bundle: &SignalBundle) -> Result<Vec<(f64, Reading)>, LabelError> {
    let sigs = bundle.ordered()?;
    let n = sigs[0].samples.len();
    if sigs.iter().any(|s| s.samples.len() != n) {
        return Err(LabelError::GridMismatch);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = sigs[0].samples[k].0;
        let mut r = Reading::default();
        for (i, s) in sigs.iter().enumerate() {
            if (s.samples[k].0 - t).abs() > 1e-9 {
                return Err(LabelError::GridMismatch);
            }
            if i < 5 {
                r.vitals[i] = s.samples[k].1;
            } else {
                r.params[i - 5] = s.samples[k].1;
            }
        }
        out.push((t, r));
    }
    Ok(out)
}

/// Apply the labeling function along a bundle already on a shared grid.
pub fn label(bundle: &SignalBundle, cfg: &LabelingConfig) -> Result<EventTrace, LabelError> {
    let rs = readings(bundle)?;
    let mut trace = EventTrace::default();
    for w in rs.windows(2) {
        for e in label_step(&w[0].1, &w[1].1, cfg) {
            trace.push(w[1].0, e.name());
        }
    }
    Ok(trace)
}

/// Flags `r1..r5` and `r_on` at time `t`.
pub fn vitals_flags(bundle: &SignalBundle, cfg: &LabelingConfig, t: f64) -> Result<Flags, LabelError> {
    let sigs = bundle.ordered()?;
    let mut r = Reading::default();
    for (i, s) in sigs.iter().enumerate() {
        let v = s.value_at(t).ok_or(LabelError::OutOfSpan(t))?;
        if i < 5 {
            r.vitals[i] = v;
        } else {
            r.params[i - 5] = v;
        }
    }
    Ok(r.flags(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_bundle(n: usize) -> SignalBundle {
        let mut b = SignalBundle::new();
        for (i, v) in VITALS.iter().enumerate() {
            let (lo, hi) = DEFAULT_SAFE_RANGES[i];
            b.insert(Signal::uniform(v, 0.0, 1.0, &vec![(lo + hi) / 2.0; n]));
        }
        for p in VENT_PARAMS {
            b.insert(Signal::uniform(p, 0.0, 1.0, &vec![0.0; n]));
        }
        b
    }

    #[test]
    fn peak_hold_examples() {
        let s = Signal::uniform("CD", 0.0, 1.0, &[0.0, 1.0, 0.0, 2.0, 0.0]);
        assert_eq!(peak_hold(&s).unwrap().values(), vec![0.0, 1.0, 1.0, 2.0, 2.0]);
        let c = Signal::uniform("CD", 0.0, 1.0, &[3.0; 4]);
        assert_eq!(peak_hold(&c).unwrap().values(), vec![3.0; 4]);
        let two = Signal::uniform("CD", 0.0, 1.0, &[1.0, 2.0]);
        assert_eq!(peak_hold(&two).unwrap_err(), LabelError::TooFewSamples(2));
    }

    #[test]
    fn resample_examples() {
        let s = Signal::new("TV", vec![(0.0, 0.0), (2.0, 4.0)]);
        assert_eq!(resample(&s, 1.0).unwrap().samples, vec![(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)]);
        let u = Signal::uniform("TV", 0.0, 1.0, &[1.0, 5.0, 2.0]);
        assert_eq!(resample(&u, 1.0).unwrap(), u);
        assert!(matches!(resample(&Signal::new("TV", vec![]), 1.0), Err(LabelError::EmptySignal(_))));
    }

    #[test]
    fn tv_dip_is_labeled() {
        let mut b = constant_bundle(3);
        b.insert(Signal::uniform("TV", 0.0, 1.0, &[400.0, 340.0, 360.0]));
        let tr = label(&b, &LabelingConfig::default()).unwrap();
        assert_eq!(tr.events, vec![(1.0, "TV^low".to_string()), (2.0, "TV^ok".to_string())]);
    }

    #[test]
    fn constant_bundle_has_no_events() {
        assert!(label(&constant_bundle(10), &LabelingConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn switching_on_emits_only_on() {
        let mut b = constant_bundle(3);
        b.insert(Signal::uniform("FIOX", 0.0, 1.0, &[0.0, 0.4, 0.5]));
        b.insert(Signal::uniform("PEEP", 0.0, 1.0, &[0.0, 5.0, 5.0]));
        b.insert(Signal::uniform("RERA", 0.0, 1.0, &[0.0, 12.0, 12.0]));
        b.insert(Signal::uniform("TVOL", 0.0, 1.0, &[0.0, 400.0, 400.0]));
        let tr = label(&b, &LabelingConfig::default()).unwrap();
        assert_eq!(tr.events, vec![(1.0, "on".to_string()), (2.0, "FIOX^up".to_string())]);
    }

    #[test]
    fn missing_signal_is_named() {
        let mut b = constant_bundle(3);
        b.signals.remove("RR");
        assert_eq!(label(&b, &LabelingConfig::default()).unwrap_err(), LabelError::MissingSignal("RR".into()));
    }

    #[test]
    fn flags_at_time() {
        let mut b = constant_bundle(3);
        let cfg = LabelingConfig::default();
        let f = vitals_flags(&b, &cfg, 1.0).unwrap();
        assert_eq!((f.vitals, f.on), ([true; 5], false));
        b.insert(Signal::uniform("TV", 0.0, 1.0, &[300.0; 3]));
        let f = vitals_flags(&b, &cfg, 1.5).unwrap();
        assert_eq!((f.vitals, f.on), ([true, true, true, true, false], false));
        assert_eq!(vitals_flags(&b, &cfg, 5.0).unwrap_err(), LabelError::OutOfSpan(5.0));
    }

    #[test]
    fn csv_round_trip() {
        let b = constant_bundle(4);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let back = SignalBundle::read_csv(&buf[..]).unwrap();
        assert_eq!(back, b);
    }
}
