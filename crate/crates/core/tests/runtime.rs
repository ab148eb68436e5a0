use pdp_twin::labeling::LabelingConfig;
use pdp_twin::physio::{ComplicationKind, ScenarioScript};
use pdp_twin::runtime::*;
use pdp_twin::synth::{AbstractState, Strategy};
use pdp_twin::{models, Flags};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;

fn scenario() -> ScenarioScript {
    ScenarioScript::new("ards", 900.0).inject(20.0, ComplicationKind::Ards, 0.5)
}

fn session(strategy: Strategy, mode: Mode) -> Session {
    Session::new(
        vec![models::physician_general(), models::patient_dt()],
        strategy,
        scenario(),
        mode,
        LabelingConfig::default(),
        RuntimeOptions::default(),
    )
    .unwrap()
}

fn placed(s: &Session, ph: &str, pa: &str, flags: Flags) -> pdp_twin::Configuration {
    let net = &s.game.network;
    let mut cfg = s.config().clone();
    cfg.locations[s.game.controller] = net.automata[s.game.controller].location_index(ph).unwrap();
    cfg.locations[s.game.patient] = net.automata[s.game.patient].location_index(pa).unwrap();
    cfg.flags = flags;
    cfg
}

fn names(s: &Session, cfg: &pdp_twin::Configuration) -> (String, String) {
    let st = s.game.abstract_state(cfg);
    (st.ph_loc, st.pa_loc)
}

fn all_in_range() -> Flags {
    Flags { vitals: [true; 5], on: false }
}

#[test]
fn low_tidal_volume_alarms_the_physician() {
    let s = session(Strategy::default(), Mode::RecommendOnly);
    let (game, sink) = runtime_game(vec![models::physician_general(), models::patient_dt()]).unwrap();
    let cfg = placed(&s, "idle", "q8", all_in_range());
    let entry = LogEntry { t: 0.0, source: Source::Vital, event: "TV^low".into() };
    let (next, lost) = step_entry(&game, sink, &cfg, &entry).unwrap();
    assert_eq!(names(&s, &next), ("acting_A".into(), "q9".into()));
    assert!(!next.flags.vitals[4]);
    assert!(!lost);
}

#[test]
fn switching_on_moves_the_physician_to_monitoring() {
    let s = session(Strategy::default(), Mode::RecommendOnly);
    let (game, sink) = runtime_game(vec![models::physician_general(), models::patient_dt()]).unwrap();
    let flags = Flags { vitals: [true, true, true, true, false], on: false };
    let cfg = placed(&s, "acting_A", "q9", flags);
    let entry = LogEntry { t: 0.0, source: Source::Action, event: "on".into() };
    let (next, _) = step_entry(&game, sink, &cfg, &entry).unwrap();
    assert_eq!(next.locations[game.controller], game.network.automata[game.controller].location_index("monitoring").unwrap());
    assert!(next.flags.on);
}

#[test]
fn unknown_vital_behaviour_degrades_alignment() {
    let s = session(Strategy::default(), Mode::RecommendOnly);
    let (game, sink) = runtime_game(vec![models::physician_general(), models::patient_dt()]).unwrap();
    let cfg = placed(&s, "idle", "q8", all_in_range());
    let (next, lost) = step_entry(&game, sink, &cfg, &LogEntry { t: 0.0, source: Source::Vital, event: "TV^ok".into() }).unwrap();
    if lost {
        assert_eq!(next.locations[game.patient], sink);
    }
    let (back, lost) = step_entry(&game, sink, &next, &LogEntry { t: 1.0, source: Source::Realign, event: "TTTTTF".into() }).unwrap();
    assert!(!lost);
    assert_eq!(back.locations, game.network.initial_config(None).locations);
}

#[test]
fn over_range_actions_are_clamped_with_a_warning() {
    let mut s = session(Strategy::default(), Mode::RecommendOnly);
    s.post_action("on").unwrap();
    let mut last = None;
    for _ in 0..20 {
        last = Some(s.post_action("TVOL^up").unwrap());
    }
    let ack = last.unwrap();
    assert!(ack.clamped);
    assert!(ack.warning.is_some());
    let hi = pdp_twin::domain::VENT_RANGES[3].1;
    assert_eq!(ack.settings.tvol, hi);
    let first = s.post_action("TVOL^down").unwrap();
    assert!(!first.clamped && first.warning.is_none());
    assert_eq!(first.settings.tvol, hi - RuntimeOptions::default().increments[3]);
}

#[test]
fn only_controllable_actions_are_accepted() {
    let mut s = session(Strategy::default(), Mode::RecommendOnly);
    assert_eq!(s.post_action("TV^low").unwrap_err(), RuntimeError::NotControllable("TV^low".into()));
    assert_eq!(s.post_action("wait").unwrap_err(), RuntimeError::NotControllable("wait".into()));
    s.close();
    assert_eq!(s.post_action("on").unwrap_err(), RuntimeError::SessionClosed);
    assert_eq!(s.tick(1.0).unwrap_err(), RuntimeError::SessionClosed);
}

#[test]
fn foreign_strategies_are_rejected() {
    let mut st = Strategy::default();
    st.entries.insert(AbstractState::new("nowhere", "q8", all_in_range()), "on".into());
    let err = Session::new(
        vec![models::physician_general(), models::patient_dt()],
        st,
        scenario(),
        Mode::Auto,
        LabelingConfig::default(),
        RuntimeOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, RuntimeError::StrategyModelMismatch(ref m) if m.len() == 1), "{err:?}");
}

#[test]
fn recommend_only_never_touches_the_ventilator() {
    let mut s = session(Strategy::default(), Mode::RecommendOnly);
    let before = s.sim.settings;
    let frames = s.tick(300.0).unwrap();
    assert_eq!(frames.len(), 300);
    assert!(frames.iter().all(|f| f.actions.is_empty() && f.settings == before));
    assert_eq!(s.sim.settings, before);
    assert!(frames.iter().any(|f| !f.events.is_empty()));
}

#[test]
fn recommendations_are_pure() {
    let mut s = session(Strategy::default(), Mode::RecommendOnly);
    s.tick(120.0).unwrap();
    let (state, log) = (s.state(), s.log().len());
    let a = s.recommendation();
    let b = s.recommendation();
    assert_eq!(a, b);
    assert_eq!(s.state(), state);
    assert_eq!(s.log().len(), log);
    assert_eq!(a.action, "wait");
    assert!(a.warning.is_some());
}

#[test]
fn auto_mode_applies_covered_recommendations() {
    let probe = session(Strategy::default(), Mode::Auto);
    let mut st = Strategy::default();
    st.entries.insert(probe.abstract_state(), "on".into());
    let mut s = session(st, Mode::Auto);
    let frames = s.tick(1.0).unwrap();
    assert_eq!(frames[0].actions, vec!["on".to_string()]);
    assert!(s.sim.settings.on);
    assert!(s.log().iter().any(|e| e.source == Source::Action && e.event == "on"));
}

#[test]
fn close_returns_the_log() {
    let mut s = session(Strategy::default(), Mode::RecommendOnly);
    s.tick(60.0).unwrap();
    s.post_action("on").unwrap();
    let csv = s.close();
    assert!(csv.starts_with("t,source,event\n"));
    assert_eq!(csv.lines().count(), 1 + s.log().len());
    assert!(csv.contains(",action,on\n"));
}

#[derive(Debug, Clone)]
enum Op {
    Tick(u8),
    Act(usize),
    Realign,
}

fn op() -> impl proptest::strategy::Strategy<Value = Op> {
    prop_oneof![
        4 => (1u8..40).prop_map(Op::Tick),
        3 => (0usize..9).prop_map(Op::Act),
        1 => Just(Op::Realign),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replaying_the_log_reproduces_the_state(ops in proptest::collection::vec(op(), 1..25), severity in 0.1f64..0.9) {
        let mut script = ScenarioScript::new("p", 2000.0).inject(5.0, ComplicationKind::Pneumonia, severity);
        script.seed = (severity * 1000.0) as u64;
        let mut s = Session::new(
            vec![models::physician_general(), models::patient_dt()],
            Strategy::default(),
            script,
            Mode::RecommendOnly,
            LabelingConfig::default(),
            RuntimeOptions::default(),
        ).unwrap();
        for o in ops {
            match o {
                Op::Tick(n) => { s.tick(f64::from(n)).unwrap(); }
                Op::Act(i) => {
                    let a = s.game.actions[i % s.game.actions.len()].clone();
                    s.post_action(&a).unwrap();
                }
                Op::Realign => s.realign().unwrap(),
            }
            prop_assert_eq!(&s.replay().unwrap(), s.config());
            prop_assert_eq!(s.state().degraded, s.degraded());
        }
    }
}
