//! Patient model learning from a flow signal and its event trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EventName, FLOW_VITAL, SINK};
use crate::labeling::{EventTrace, Signal, SignalBundle};
use crate::scalar::{self, Scalar};
use crate::sha::network::{compose_unchecked, Resolver};
use crate::sha::sim::FlowSegment;
use crate::sha::{flow, ActionKind, Edge, Location, ParamExpr, Sha, ShaError, Variable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("no inter-event interval has at least {0} samples")]
    NoSegments(usize),
    #[error("missing signal `{0}`")]
    MissingSignal(String),
    #[error("trace rejected: event `{event}` at {t} is not enabled")]
    TraceRejected { event: String, t: f64 },
    #[error("no training data")]
    NoData,
    #[error(transparent)]
    Model(#[from] ShaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub entry: Option<String>,
    pub exit: Option<String>,
    /// Index of the training example the segment came from.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDynamics<T = f64> {
    pub a: T,
    pub b: T,
    pub residual_std: T,
    pub n: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnOptions {
    pub tol_a: f64,
    pub tol_b: f64,
    pub min_samples: usize,
    /// Refit growing dynamics (`a > 0`) as a constant slope.
    pub stable: bool,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self { tol_a: 0.02, tol_b: 5.0, min_samples: 4, stable: true }
    }
}

/// Event groups of a trace: distinct timestamps with their events in order.
fn event_groups(trace: &EventTrace) -> Vec<(f64, Vec<String>)> {
    let mut out: Vec<(f64, Vec<String>)> = Vec::new();
    for (t, e) in &trace.events {
        match out.last_mut() {
            Some((lt, es)) if *lt == *t => es.push(e.clone()),
            _ => out.push((*t, vec![e.clone()])),
        }
    }
    out
}

/// Inter-event intervals of one example: `(start, end, entry, exit, kept samples)`.
struct Interval {
    start: f64,
    end: f64,
    times: Vec<f64>,
    values: Vec<f64>,
}

fn intervals(signal: &Signal, groups: &[(f64, Vec<String>)]) -> Vec<Interval> {
    let (Some(first), Some(last)) = (signal.samples.first(), signal.samples.last()) else {
        return Vec::new();
    };
    let mut bounds = vec![first.0];
    bounds.extend(groups.iter().map(|g| g.0).filter(|t| *t > first.0 && *t <= last.0));
    let n = bounds.len();
    (0..n)
        .map(|k| {
            let start = bounds[k];
            let end = if k + 1 < n { bounds[k + 1] } else { last.0 };
            let last_interval = k + 1 == n;
            let (times, values) = signal
                .samples
                .iter()
                .filter(|(t, _)| *t >= start && (*t < end || (last_interval && *t <= end)))
                .map(|&(t, v)| (t, v))
                .unzip();
            Interval { start, end, times, values }
        })
        .collect()
}

/// Cut the flow signal at every event timestamp; keep intervals with enough samples.
/// Returns the kept segments and the number of dropped intervals.
pub fn segment(bundle: &SignalBundle, trace: &EventTrace, min_samples: usize) -> Result<(Vec<Segment>, usize), LearnError> {
    let sig = bundle.signals.get(FLOW_VITAL).ok_or_else(|| LearnError::MissingSignal(FLOW_VITAL.into()))?;
    let groups = event_groups(trace);
    let ivs = intervals(sig, &groups);
    let mut out = Vec::new();
    let mut dropped = 0;
    let group_at = |t: f64| groups.iter().find(|g| g.0 == t).and_then(|g| g.1.last().cloned());
    for iv in ivs {
        if iv.times.len() < min_samples {
            dropped += 1;
            continue;
        }
        out.push(Segment {
            start: iv.start,
            end: iv.end,
            entry: group_at(iv.start),
            exit: group_at(iv.end),
            times: iv.times,
            values: iv.values,
            source: 0,
        });
    }
    if out.is_empty() {
        return Err(LearnError::NoSegments(min_samples));
    }
    Ok((out, dropped))
}

/// Least-squares fit of finite-difference slopes against midpoints. On a
/// uniform grid the slope coefficient is mapped back to the continuous-time
/// rate so exact exponentials are recovered.
pub fn fit_affine<T: Scalar>(times: &[T], values: &[T]) -> FittedDynamics<T> {
    let n = times.len().min(values.len());
    let mut slopes = Vec::with_capacity(n.saturating_sub(1));
    let mut mids = Vec::with_capacity(n.saturating_sub(1));
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let dt = times[i + 1] - times[i];
        if dt > T::zero() {
            slopes.push((values[i + 1] - values[i]) / dt);
            mids.push((values[i] + values[i + 1]) / T::lit(2.0));
            steps.push(dt);
        }
    }
    if slopes.is_empty() {
        return FittedDynamics { a: T::zero(), b: T::zero(), residual_std: T::zero(), n, degenerate: true };
    }
    let mm = scalar::mean(&mids).unwrap_or_else(T::zero);
    let ms = scalar::mean(&slopes).unwrap_or_else(T::zero);
    let sxx: T = mids.iter().map(|&m| (m - mm) * (m - mm)).sum();
    let sxy: T = mids.iter().zip(&slopes).map(|(&m, &s)| (m - mm) * (s - ms)).sum();
    let scale = T::one() + mm * mm;
    if sxx <= T::lit(1e-10) * scale * T::from_count(mids.len()) {
        let res: Vec<T> = slopes.iter().map(|&s| s - ms).collect();
        return FittedDynamics { a: T::zero(), b: ms, residual_std: rms(&res), n, degenerate: true };
    }
    let a_fd = sxy / sxx;
    let b_fd = ms - a_fd * mm;
    let res: Vec<T> = mids.iter().zip(&slopes).map(|(&m, &s)| s - (a_fd * m + b_fd)).collect();
    let residual_std = rms(&res);
    let d0 = steps[0];
    let uniform = steps.iter().all(|&d| (d - d0).abs() <= T::lit(1e-9) * d0);
    let half = a_fd * d0 / T::lit(2.0);
    let (a, b) = if uniform && a_fd != T::zero() && half.abs() < T::one() {
        let a = T::lit(2.0) / d0 * half.atanh();
        (a, b_fd * a / a_fd)
    } else {
        (a_fd, b_fd)
    };
    FittedDynamics { a, b, residual_std, n, degenerate: false }
}

fn rms<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    (xs.iter().map(|&x| x * x).sum::<T>() / T::from_count(xs.len())).sqrt()
}

pub fn fit_flow(seg: &Segment) -> FittedDynamics {
    fit_affine(&seg.times, &seg.values)
}

/// Constant-slope fit: `a = 0`, `b` the mean finite-difference slope.
pub fn fit_constant(times: &[f64], values: &[f64]) -> FittedDynamics {
    let n = times.len().min(values.len());
    let slopes: Vec<f64> = (1..n).filter(|&i| times[i] > times[i - 1]).map(|i| (values[i] - values[i - 1]) / (times[i] - times[i - 1])).collect();
    let b = scalar::mean(&slopes).unwrap_or(0.0);
    let res: Vec<f64> = slopes.iter().map(|s| s - b).collect();
    FittedDynamics { a: 0.0, b, residual_std: rms(&res), n, degenerate: true }
}

/// Group of segments sharing one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub members: Vec<usize>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
}

fn summarize(members: Vec<usize>, dyns: &[FittedDynamics]) -> Group {
    let a: Vec<f64> = members.iter().map(|&i| dyns[i].a).collect();
    let b: Vec<f64> = members.iter().map(|&i| dyns[i].b).collect();
    Group {
        mean_a: scalar::mean(&a).unwrap_or(0.0),
        mean_b: scalar::mean(&b).unwrap_or(0.0),
        std_b: scalar::sample_std(&b),
        members,
    }
}

/// Greedy agglomeration in input order, then pairwise group merging until
/// no two group means are within tolerance.
pub fn merge_locations(dyns: &[FittedDynamics], tol_a: f64, tol_b: f64) -> Vec<Group> {
    let close = |g: &Group, a: f64, b: f64| (g.mean_a - a).abs() <= tol_a && (g.mean_b - b).abs() <= tol_b;
    let mut groups: Vec<Group> = Vec::new();
    for (i, d) in dyns.iter().enumerate() {
        match groups.iter().position(|g| close(g, d.a, d.b)) {
            Some(k) => {
                let mut m = std::mem::take(&mut groups[k].members);
                m.push(i);
                groups[k] = summarize(m, dyns);
            }
            None => groups.push(summarize(vec![i], dyns)),
        }
    }
    loop {
        let mut pair = None;
        'search: for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                if close(&groups[i], groups[j].mean_a, groups[j].mean_b) {
                    pair = Some((i, j));
                    break 'search;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let gj = groups.remove(j);
        let mut m = std::mem::take(&mut groups[i].members);
        m.extend(gj.members);
        m.sort_unstable();
        groups[i] = summarize(m, dyns);
    }
    groups
}

/// Patient model with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedSha {
    pub sha: Sha,
    /// `(location, segment start, segment end, example index)`
    pub provenance: Vec<(String, f64, f64, usize)>,
    pub sink: Option<String>,
    pub dropped: usize,
    pub segments: usize,
}

impl LearnedSha {
    pub fn provenance_csv(&self) -> String {
        let mut s = String::from("location,segment_start,segment_end\n");
        for (l, a, b, _) in &self.provenance {
            s.push_str(&format!("{l},{a},{b}\n"));
        }
        s
    }

    /// Number of locations other than the sink.
    pub fn modeled_locations(&self) -> usize {
        self.sha.locations.iter().filter(|l| Some(&l.id) != self.sink.as_ref()).count()
    }
}

/// Side of an event in the patient model.
pub fn patient_event_kind(event: &str) -> ActionKind {
    match EventName::parse(event) {
        Some(e) if e.is_device_action() => ActionKind::Input,
        _ => ActionKind::Output,
    }
}

/// Build the automaton: one location per group, event-labelled edges between
/// consecutive kept segments, empirical exit rates and edge weights.
pub fn assemble_sha(
    examples: &[(SignalBundle, EventTrace)],
    segments: &[Segment],
    groups: &[Group],
    opts: &LearnOptions,
) -> Result<LearnedSha, LearnError> {
    let loc_name = |g: usize| format!("q{g}");
    let mut loc_of = vec![0usize; segments.len()];
    for (g, grp) in groups.iter().enumerate() {
        for &m in &grp.members {
            loc_of[m] = g;
        }
    }
    // (src, dst, action, kind) -> count, plus per-location sojourn time
    let mut counts: BTreeMap<(usize, usize, String), usize> = BTreeMap::new();
    let mut first_order: Vec<(usize, usize, String)> = Vec::new();
    let mut sojourn = vec![0.0; groups.len()];
    let mut initial_votes = vec![0usize; groups.len()];
    for (si, s) in segments.iter().enumerate() {
        sojourn[loc_of[si]] += s.end - s.start;
    }
    for (ex, (bundle, trace)) in examples.iter().enumerate() {
        let Some(sig) = bundle.signals.get(FLOW_VITAL) else { continue };
        let groups_ev = event_groups(trace);
        let ivs = intervals(sig, &groups_ev);
        let seg_of_start: BTreeMap<u64, usize> = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.source == ex)
            .map(|(i, s)| (s.start.to_bits(), i))
            .collect();
        let kept = |iv: &Interval| -> Option<usize> {
            (iv.times.len() >= opts.min_samples).then(|| seg_of_start.get(&iv.start.to_bits()).copied()).flatten()
        };
        let mut cur: Option<usize> = ivs.first().and_then(|iv| kept(iv)).map(|s| loc_of[s]);
        if let Some(c) = cur {
            initial_votes[c] += 1;
        }
        for k in 1..ivs.len() {
            let Some(evs) = groups_ev.iter().find(|g| g.0 == ivs[k].start).map(|g| &g.1) else { continue };
            let next = kept(&ivs[k]).map(|s| loc_of[s]);
            if let (Some(c), Some(n)) = (cur, next) {
                for (i, e) in evs.iter().enumerate() {
                    let dst = if i + 1 == evs.len() { n } else { c };
                    let key = (c, dst, e.clone());
                    let slot = counts.entry(key.clone()).or_insert(0);
                    if *slot == 0 {
                        first_order.push(key);
                    }
                    *slot += 1;
                }
            }
            cur = next;
        }
    }

    let mut sha = Sha::new("patient");
    let inits: Vec<f64> = examples
        .iter()
        .filter_map(|(b, _)| b.signals.get(FLOW_VITAL).and_then(|s| s.samples.first()).map(|p| p.1))
        .collect();
    sha.variables.push(Variable { name: FLOW_VITAL.into(), unit: "mL".into(), init: scalar::mean(&inits).unwrap_or(0.0) });

    let mut out_total = vec![0usize; groups.len()];
    let mut in_total: BTreeMap<(usize, String), usize> = BTreeMap::new();
    for ((src, _, e), c) in &counts {
        match patient_event_kind(e) {
            ActionKind::Output => out_total[*src] += c,
            ActionKind::Input => *in_total.entry((*src, e.clone())).or_insert(0) += c,
        }
    }
    for (g, grp) in groups.iter().enumerate() {
        let mut loc = Location::new(&loc_name(g)).with_flow(FLOW_VITAL, grp.mean_a, grp.mean_b, grp.std_b);
        if out_total[g] > 0 && sojourn[g] > 0.0 {
            loc.rate = Some(ParamExpr::constant(out_total[g] as f64 / sojourn[g]));
        }
        sha.locations.push(loc);
    }
    for key in &first_order {
        let (src, dst, e) = key;
        let c = counts[key] as f64;
        let kind = patient_event_kind(e);
        let w = match kind {
            ActionKind::Output => c / out_total[*src] as f64,
            ActionKind::Input => c / in_total[&(*src, e.clone())] as f64,
        };
        sha.edges.push(Edge::new(&loc_name(*src), &loc_name(*dst), e, kind).weighted(ParamExpr::constant(w)));
    }
    let init = (0..groups.len()).max_by_key(|&g| (initial_votes[g], std::cmp::Reverse(g))).unwrap_or(0);
    sha.initial = loc_name(init);

    let provenance = segments
        .iter()
        .enumerate()
        .map(|(i, s)| (loc_name(loc_of[i]), s.start, s.end, s.source))
        .collect();
    Ok(LearnedSha { sha, provenance, sink: None, dropped: 0, segments: segments.len() })
}

/// Add a sink and route every missing `(location, event)` pair to it.
pub fn complete_with_sink(learned: &LearnedSha, alphabet: &[String]) -> LearnedSha {
    let mut out = learned.clone();
    let sha = &mut out.sha;
    if sha.location(SINK).is_none() {
        let mut sink = Location::new(SINK);
        for v in &sha.variables {
            sink = sink.with_flow(&v.name, 0.0, 0.0, 0.0);
        }
        sha.locations.push(sink);
    }
    let mut events: Vec<String> = sha.edges.iter().map(|e| e.action.clone()).collect();
    events.extend(alphabet.iter().cloned());
    let mut seen = std::collections::HashSet::new();
    events.retain(|e| seen.insert(e.clone()));
    let locs: Vec<String> = sha.locations.iter().map(|l| l.id.clone()).collect();
    for l in &locs {
        for e in &events {
            if sha.edges.iter().any(|x| x.src == *l && x.action == *e) {
                continue;
            }
            let kind = sha.edges.iter().find(|x| x.action == *e).map_or_else(|| patient_event_kind(e), |x| x.kind);
            let w = if kind == ActionKind::Output { 0.0 } else { 1.0 };
            sha.edges.push(Edge::new(l, SINK, e, kind).weighted(ParamExpr::constant(w)));
        }
    }
    out.sink = Some(SINK.to_string());
    out
}

/// Full pipeline over several examples.
pub fn learn(examples: &[(SignalBundle, EventTrace)], opts: &LearnOptions) -> Result<LearnedSha, LearnError> {
    if examples.is_empty() {
        return Err(LearnError::NoData);
    }
    let mut segments = Vec::new();
    let mut dropped = 0;
    for (i, (b, t)) in examples.iter().enumerate() {
        match segment(b, t, opts.min_samples) {
            Ok((segs, d)) => {
                dropped += d;
                segments.extend(segs.into_iter().map(|mut s| {
                    s.source = i;
                    s
                }));
            }
            Err(LearnError::NoSegments(_)) => dropped += t.len() + 1,
            Err(e) => return Err(e),
        }
    }
    if segments.is_empty() {
        return Err(LearnError::NoSegments(opts.min_samples));
    }
    let dyns: Vec<FittedDynamics> = segments
        .iter()
        .map(|seg| {
            let f = fit_flow(seg);
            if opts.stable && f.a > 0.0 {
                fit_constant(&seg.times, &seg.values)
            } else {
                f
            }
        })
        .collect();
    let groups = merge_locations(&dyns, opts.tol_a, opts.tol_b);
    let mut learned = assemble_sha(examples, &segments, &groups, opts)?;
    learned.dropped = dropped;
    Ok(learned)
}

/// Replay `trace` on the patient (optionally composed with a physician) with
/// mean flows and return the flow variable at `horizon`.
pub fn predict_tv(
    learned: &Sha,
    physician: Option<&Sha>,
    trace: &EventTrace,
    horizon: f64,
    initial_tv: Option<f64>,
) -> Result<f64, LearnError> {
    let mut shas = vec![learned.clone()];
    if let Some(p) = physician {
        shas.insert(0, p.clone());
    }
    let net = compose_unchecked(shas)?;
    let v = net.variable_index(FLOW_VITAL).ok_or_else(|| LearnError::MissingSignal(FLOW_VITAL.into()))?;
    let mut cfg = net.initial_config(None);
    if let Some(x) = initial_tv {
        cfg.values[v] = x;
    }
    let advance_to = |cfg: &mut crate::sha::network::Configuration, t: f64| {
        let dt = (t - cfg.clock).max(0.0);
        if dt > 0.0 {
            let slopes = net.flow_slopes(cfg);
            for i in 0..cfg.values.len() {
                cfg.values[i] = flow::advance(cfg.values[i], slopes[i], cfg.drift[i], dt);
            }
            cfg.clock = t;
        }
    };
    for (t, e) in &trace.events {
        if *t > horizon {
            break;
        }
        advance_to(&mut cfg, *t);
        let tr = net.fire_observed(&cfg, e, &mut Resolver::MostLikely)?;
        if tr.taken.iter().all(Option::is_none) {
            return Err(LearnError::TraceRejected { event: e.clone(), t: *t });
        }
        cfg = tr.config;
    }
    advance_to(&mut cfg, horizon);
    Ok(cfg.values[v])
}

/// Sample a simulated run's flow variable on a uniform grid.
pub fn sample_segments(segments: &[FlowSegment], var: usize, t0: f64, t1: f64, step: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = 0usize;
    let mut i = 0usize;
    loop {
        let t = t0 + k as f64 * step;
        if t > t1 + 1e-9 {
            break;
        }
        while i + 1 < segments.len() && segments[i].t0 + segments[i].dt <= t && segments[i + 1].t0 <= t {
            i += 1;
        }
        if let Some(s) = segments.get(i) {
            out.push((t, s.value_at(var, t)));
        }
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_tv(values: &[f64]) -> SignalBundle {
        let mut b = SignalBundle::new();
        b.insert(Signal::uniform("TV", 0.0, 1.0, values));
        b
    }

    fn trace(ev: &[(f64, &str)]) -> EventTrace {
        EventTrace { events: ev.iter().map(|(t, e)| (*t, e.to_string())).collect() }
    }

    #[test]
    fn segment_counts() {
        let b = bundle_tv(&[400.0; 31]);
        let (s, d) = segment(&b, &trace(&[(10.0, "x"), (20.0, "y")]), 4).unwrap();
        assert_eq!((s.len(), d), (3, 0));
        assert_eq!(s[0].times.len(), 10);
        assert_eq!(s[2].times.len(), 11);
        assert_eq!(s[1].entry.as_deref(), Some("x"));
        let (s, _) = segment(&b, &EventTrace::default(), 4).unwrap();
        assert_eq!(s.len(), 1);
        let every: Vec<(f64, &str)> = (1..31).map(|t| (t as f64, "x")).collect();
        assert_eq!(segment(&b, &trace(&every), 4).unwrap_err(), LearnError::NoSegments(4));
    }

    #[test]
    fn fit_examples() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let lin: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        let f = fit_affine(&t, &lin);
        assert!(f.a.abs() < 1e-6 && (f.b - 2.0).abs() < 1e-6, "{f:?}");
        let c = fit_affine(&t, &[400.0; 10]);
        assert!(c.degenerate && c.a == 0.0 && c.b == 0.0);
        let ex: Vec<f64> = t.iter().map(|x| 100.0 * (-0.1 * x).exp()).collect();
        let e = fit_affine(&t, &ex);
        assert!((e.a + 0.1).abs() < 0.01, "{e:?}");
        assert!((e.a + 0.1).abs() < 1e-9);
    }

    #[test]
    fn merge_examples() {
        let d = |a, b| FittedDynamics { a, b, residual_std: 0.0, n: 10, degenerate: false };
        assert_eq!(merge_locations(&[d(0.0, 2.0), d(0.0, 2.0)], 0.02, 5.0).len(), 1);
        assert_eq!(merge_locations(&[d(0.0, 2.0), d(0.0, 50.0)], 0.02, 1.0).len(), 2);
        let planted = [(-0.05, 20.0), (-0.25, 75.0), (-0.45, 225.0)];
        let six: Vec<FittedDynamics> = (0..6).map(|i| d(planted[i % 3].0, planted[i % 3].1)).collect();
        assert_eq!(merge_locations(&six, 0.02, 5.0).len(), 3);
    }

    #[test]
    fn assembly_deduplicates_edges() {
        // L1 (flat 400), e, L2 (rising), e', L1
        let mut v = vec![400.0; 10];
        v.extend((0..10).map(|k| 300.0 + 10.0 * k as f64));
        v.extend(vec![400.0; 10]);
        v.extend((0..10).map(|k| 300.0 + 10.0 * k as f64));
        v.extend(vec![400.0; 10]);
        let b = bundle_tv(&v);
        let tr = trace(&[(10.0, "e"), (20.0, "f"), (30.0, "e"), (40.0, "f")]);
        let l = learn(&[(b, tr)], &LearnOptions::default()).unwrap();
        assert_eq!(l.sha.locations.len(), 2);
        let edges: Vec<(String, String, String)> =
            l.sha.edges.iter().map(|e| (e.src.clone(), e.dst.clone(), e.action.clone())).collect();
        assert_eq!(
            edges,
            vec![("q0".into(), "q1".into(), "e".into()), ("q1".into(), "q0".into(), "f".into())]
        );
        let done = complete_with_sink(&l, &["g".to_string()]);
        assert_eq!(done.modeled_locations(), 2);
        for loc in ["q0", "q1", SINK] {
            for e in ["e", "f", "g"] {
                assert!(done.sha.edges.iter().any(|x| x.src == loc && x.action == e));
            }
        }
    }

    #[test]
    fn prediction_examples() {
        let mut s = Sha::new("p");
        s.variables.push(Variable { name: "TV".into(), unit: "mL".into(), init: 400.0 });
        s.locations.push(Location::new("q0").with_flow("TV", 0.0, 0.0, 0.0));
        s.locations.push(Location::new("q1").with_flow("TV", 0.0, 2.0, 0.0));
        s.edges.push(Edge::output("q0", "q1", "go"));
        s.initial = "q0".into();
        assert_eq!(predict_tv(&s, None, &EventTrace::default(), 30.0, None).unwrap(), 400.0);
        let p = predict_tv(&s, None, &trace(&[(5.0, "go")]), 15.0, None).unwrap();
        assert!((p - 420.0).abs() < 1e-9);
        assert!(matches!(
            predict_tv(&s, None, &trace(&[(5.0, "zzz")]), 15.0, None),
            Err(LearnError::TraceRejected { .. })
        ));
    }
}
