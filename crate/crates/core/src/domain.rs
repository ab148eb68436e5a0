//! Fixed vocabulary of the respiratory-ICU triad: monitored vitals, ventilator
//! parameters and the event names derived from them.

/// Monitored vitals, in flag order `r1..r5`.
pub const VITALS: [&str; 5] = ["CD", "HR", "OS", "RR", "TV"];

/// Ventilator parameters, in declaration order.
pub const VENT_PARAMS: [&str; 4] = ["FIOX", "PEEP", "RERA", "TVOL"];

/// Guard-visible flag names: one per vital plus the ventilation flag.
pub const FLAG_NAMES: [&str; 6] = ["r_CD", "r_HR", "r_OS", "r_RR", "r_TV", "r_on"];

/// Index of the ventilation flag inside [`FLAG_NAMES`].
pub const FLAG_ON: usize = 5;

/// Name of the catch-all location added by model completion.
pub const SINK: &str = "sink";

/// Name of the flow-modelled vital.
pub const FLOW_VITAL: &str = "TV";

/// Nominal healthy tidal volume in mL.
pub const NOMINAL_TV: f64 = 400.0;

/// Admissible ventilator ranges: FIOX fraction, PEEP cmH2O, RERA 1/min, TVOL mL.
pub const VENT_RANGES: [(f64, f64); 4] = [(0.0, 1.0), (5.0, 25.0), (6.0, 18.0), (300.0, 500.0)];

/// Default safe ranges per vital, aligned with [`VITALS`].
pub const DEFAULT_SAFE_RANGES: [(f64, f64); 5] = [
    (35.0, 45.0),
    (60.0, 100.0),
    (90.0, 100.0),
    (10.0, 20.0),
    (350.0, 450.0),
];

/// Direction of a vital event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VitalEvent {
    High,
    Low,
    Ok,
}

/// Direction of a parameter event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamEvent {
    Up,
    Down,
}

/// Parsed form of an event name of the labeling alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventName {
    Vital(usize, VitalEvent),
    Param(usize, ParamEvent),
    On,
    Off,
}

impl EventName {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "on" => return Some(Self::On),
            "off" => return Some(Self::Off),
            _ => {}
        }
        let (base, suffix) = name.split_once('^')?;
        if let Some(i) = VITALS.iter().position(|v| *v == base) {
            let kind = match suffix {
                "high" => VitalEvent::High,
                "low" => VitalEvent::Low,
                "ok" => VitalEvent::Ok,
                _ => return None,
            };
            return Some(Self::Vital(i, kind));
        }
        if let Some(j) = VENT_PARAMS.iter().position(|p| *p == base) {
            let kind = match suffix {
                "up" => ParamEvent::Up,
                "down" => ParamEvent::Down,
                _ => return None,
            };
            return Some(Self::Param(j, kind));
        }
        None
    }

    pub fn name(self) -> String {
        match self {
            Self::On => "on".into(),
            Self::Off => "off".into(),
            Self::Vital(i, k) => format!(
                "{}^{}",
                VITALS[i],
                match k {
                    VitalEvent::High => "high",
                    VitalEvent::Low => "low",
                    VitalEvent::Ok => "ok",
                }
            ),
            Self::Param(j, k) => format!(
                "{}^{}",
                VENT_PARAMS[j],
                match k {
                    ParamEvent::Up => "up",
                    ParamEvent::Down => "down",
                }
            ),
        }
    }

    /// Events issued by the physician/device side.
    pub fn is_device_action(self) -> bool {
        matches!(self, Self::Param(..) | Self::On | Self::Off)
    }
}

/// The full labeling alphabet in canonical order: vital events, then
/// parameter events, then `on`/`off`.
pub fn labeling_alphabet() -> Vec<String> {
    let mut out = Vec::with_capacity(25);
    for i in 0..VITALS.len() {
        for k in [VitalEvent::High, VitalEvent::Low, VitalEvent::Ok] {
            out.push(EventName::Vital(i, k).name());
        }
    }
    out.extend(controllable_alphabet());
    out
}

/// Controllable device actions: `P^up`, `P^down` per parameter, then `on`, `off`.
pub fn controllable_alphabet() -> Vec<String> {
    let mut out = Vec::with_capacity(10);
    for j in 0..VENT_PARAMS.len() {
        for k in [ParamEvent::Up, ParamEvent::Down] {
            out.push(EventName::Param(j, k).name());
        }
    }
    out.push("on".into());
    out.push("off".into());
    out
}
