use pdp_twin::domain::{DEFAULT_SAFE_RANGES, VENT_PARAMS, VITALS};
use pdp_twin::labeling::*;
use proptest::prelude::*;

fn bundle(vitals: &[Vec<f64>; 5], params: &[Vec<f64>; 4]) -> SignalBundle {
    let mut b = SignalBundle::new();
    for (i, v) in VITALS.iter().enumerate() {
        b.insert(Signal::uniform(v, 0.0, 1.0, &vitals[i]));
    }
    for (j, p) in VENT_PARAMS.iter().enumerate() {
        b.insert(Signal::uniform(p, 0.0, 1.0, &params[j]));
    }
    b
}

fn mid(i: usize) -> f64 {
    (DEFAULT_SAFE_RANGES[i].0 + DEFAULT_SAFE_RANGES[i].1) / 2.0
}

#[test]
fn config_file_overrides_ranges() {
    let kv = pdp_twin::kv::KvFile::parse("range.TV = 300,500\nresample.step = 2\n").unwrap();
    let cfg = LabelingConfig::from_kv(&kv).unwrap();
    assert_eq!(cfg.ranges[4], (300.0, 500.0));
    assert_eq!(cfg.step, 2.0);
    let bad = pdp_twin::kv::KvFile::parse("range.TV = 500,300\n").unwrap();
    assert!(LabelingConfig::from_kv(&bad).is_err());
}

#[test]
fn boundary_values_are_inside() {
    let n = 3;
    let mut v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
    v[4] = vec![400.0, 350.0, 349.0];
    let b = bundle(&v, &std::array::from_fn(|_| vec![0.0; n]));
    let tr = label(&b, &LabelingConfig::default()).unwrap();
    assert_eq!(tr.events, vec![(2.0, "TV^low".to_string())]);
}

#[test]
fn switching_off_emits_only_off() {
    let n = 3;
    let v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
    let p = [vec![0.5, 0.4, 0.0], vec![5.0, 5.0, 0.0], vec![12.0, 12.0, 0.0], vec![400.0, 400.0, 0.0]];
    let tr = label(&bundle(&v, &p), &LabelingConfig::default()).unwrap();
    assert_eq!(tr.events, vec![(1.0, "FIOX^down".to_string()), (2.0, "off".to_string())]);
}

#[test]
fn simultaneous_events_follow_declaration_order() {
    let n = 2;
    let mut v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
    v[0] = vec![40.0, 60.0];
    v[2] = vec![95.0, 80.0];
    let p = [vec![0.5, 0.6], vec![5.0, 5.0], vec![12.0, 10.0], vec![400.0, 400.0]];
    let tr = label(&bundle(&v, &p), &LabelingConfig::default()).unwrap();
    let names: Vec<&str> = tr.events.iter().map(|e| e.1.as_str()).collect();
    assert_eq!(names, vec!["CD^high", "OS^low", "FIOX^up", "RERA^down"]);
}

#[test]
fn signals_csv_is_long_format() {
    let n = 2;
    let v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
    let b = bundle(&v, &std::array::from_fn(|_| vec![0.0; n]));
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,name,value\n"));
    assert_eq!(text.lines().count(), 1 + 9 * n);
    assert_eq!(SignalBundle::read_csv(text.as_bytes()).unwrap(), b);
}

fn walk(start: f64, steps: Vec<f64>) -> Vec<f64> {
    let mut out = vec![start];
    for s in steps {
        let last = *out.last().unwrap();
        out.push(last + s);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn crossings_alternate_with_recoveries(
        starts in proptest::array::uniform5(-1.0f64..2.0),
        steps in proptest::collection::vec(proptest::array::uniform5(-0.45f64..0.45), 1..80),
    ) {
        let cfg = LabelingConfig::default();
        let vitals: [Vec<f64>; 5] = std::array::from_fn(|i| {
            let (lo, hi) = cfg.ranges[i];
            let w = hi - lo;
            walk(lo + starts[i] * w, steps.iter().map(|s| s[i] * w).collect())
        });
        let n = vitals[0].len();
        let b = bundle(&vitals, &std::array::from_fn(|_| vec![0.0; n]));
        let tr = label(&b, &cfg).unwrap();
        for (i, v) in VITALS.iter().enumerate() {
            let mut inside = cfg.in_range(i, vitals[i][0]);
            for (_, e) in tr.events.iter().filter(|e| e.1.starts_with(&format!("{v}^"))) {
                let ok = e.ends_with("^ok");
                prop_assert_eq!(ok, !inside, "{} after inside={}", e, inside);
                inside = ok;
            }
            prop_assert_eq!(inside, cfg.in_range(i, vitals[i][n - 1]));
        }
    }

    #[test]
    fn labeling_is_pure(
        tv in proptest::collection::vec(250.0f64..550.0, 2..60),
        fiox in proptest::collection::vec(prop_oneof![Just(0.0), 0.2f64..1.0], 2..60),
    ) {
        let n = tv.len().min(fiox.len());
        let mut v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
        v[4] = tv[..n].to_vec();
        let p = [fiox[..n].to_vec(), vec![5.0; n], vec![12.0; n], vec![400.0; n]];
        let b = bundle(&v, &p);
        let cfg = LabelingConfig::default();
        prop_assert_eq!(label(&b, &cfg).unwrap(), label(&b.clone(), &cfg).unwrap());
    }

    #[test]
    fn switching_never_coincides_with_adjustments(
        params in proptest::collection::vec(
            prop_oneof![Just([0.0; 4]), proptest::array::uniform4(0.1f64..20.0), proptest::array::uniform4(prop_oneof![Just(0.0), 0.1f64..20.0])],
            2..60,
        ),
    ) {
        let n = params.len();
        let v: [Vec<f64>; 5] = std::array::from_fn(|i| vec![mid(i); n]);
        let p: [Vec<f64>; 4] = std::array::from_fn(|j| params.iter().map(|r| r[j]).collect());
        let tr = label(&bundle(&v, &p), &LabelingConfig::default()).unwrap();
        for (t, e) in &tr.events {
            if e == "on" || e == "off" {
                prop_assert!(!tr.events.iter().any(|(u, f)| u == t && (f.ends_with("^up") || f.ends_with("^down"))));
            }
        }
        prop_assert!(tr.events.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn peak_hold_tracks_latest_local_maximum(values in proptest::collection::vec(0.0f64..100.0, 3..80)) {
        let s = Signal::uniform("CD", 0.0, 1.0, &values);
        let held = peak_hold(&s).unwrap().values();
        prop_assert_eq!(held.len(), values.len());
        let mut expect = values[0];
        let mut running_min = f64::INFINITY;
        for k in 0..values.len() {
            let peak = k > 0 && k + 1 < values.len() && values[k] > values[k - 1] && values[k] > values[k + 1];
            if peak {
                expect = values[k];
            }
            prop_assert_eq!(held[k], expect);
            if k > 0 && held[k] != held[k - 1] {
                prop_assert!(peak);
            }
            running_min = running_min.min(held[k]);
            prop_assert!(held[k] >= running_min);
        }
    }

    #[test]
    fn resampling_on_native_grid_is_identity(values in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let s = Signal::uniform("HR", 0.0, 1.0, &values);
        prop_assert_eq!(resample(&s, 1.0).unwrap(), s);
    }
}
