//! Experiment runners for the four evaluation questions, with CSV and
//! Markdown report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{NOMINAL_TV, VITALS};
use crate::explorer::{fuzz, nsga2, random_search, Campaign, EvaluatedMutant, Evaluator, ExploreError, SearchOptions};
use crate::kv::{KvError, KvFile};
use crate::labeling::{label, EventTrace, LabelError, LabelingConfig, SignalBundle};
use crate::learner::{complete_with_sink, learn, predict_tv, LearnError, LearnOptions};
use crate::physio::{run_scenario, ComplicationKind, Controller, PhysioError, ScenarioScript};
use crate::runtime::{Mode, RuntimeError, RuntimeOptions, Session};
use crate::sha::network::compose_unchecked;
use crate::sha::Sha;
use crate::smc::Requirement;
use crate::stats::{a12, accuracy, classify_tv, mann_whitney, mape, StatsError, TvClass};
use crate::synth::{argmax_agreement, synthesize, to_game, Synthesis, SynthError, SynthOptions};
use crate::triage::{check_realism, triage, RealismConstraints, TriageError};
use crate::{derive_seed, models};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Physio(#[from] PhysioError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Settings shared by all runners. Keys in the key-value config are the
/// field names with a section prefix, e.g. `rq2.reps = 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub rq1_train: usize,
    pub rq1_test: usize,
    pub rq1_duration: f64,
    pub rq1_learn: LearnOptions,
    pub rq2_reps: usize,
    pub rq2_budget: usize,
    pub rq2_population: usize,
    pub rq2_generations: usize,
    pub k_max: usize,
    pub rq4_seeds: usize,
    pub rq4_episodes: usize,
    pub rq4_min_seeds: usize,
    pub rq4_tail: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rq1_train: 20,
            rq1_test: 20,
            rq1_duration: 300.0,
            rq1_learn: LearnOptions { min_samples: 8, ..LearnOptions::default() },
            rq2_reps: 10,
            rq2_budget: 500,
            rq2_population: 10,
            rq2_generations: 50,
            k_max: 20,
            rq4_seeds: 20,
            rq4_episodes: 5000,
            rq4_min_seeds: 10,
            rq4_tail: 30.0,
        }
    }
}

impl EvalConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self, EvalError> {
        let mut c = Self::default();
        let usize_key = |key: &str, dst: &mut usize| -> Result<(), EvalError> {
            if let Some(v) = kv.get_u64(key)? {
                *dst = v as usize;
            }
            Ok(())
        };
        if let Some(v) = kv.get_u64("seed")? {
            c.seed = v;
        }
        usize_key("rq1.train", &mut c.rq1_train)?;
        usize_key("rq1.test", &mut c.rq1_test)?;
        usize_key("rq2.reps", &mut c.rq2_reps)?;
        usize_key("rq2.budget", &mut c.rq2_budget)?;
        usize_key("rq2.population", &mut c.rq2_population)?;
        usize_key("rq2.generations", &mut c.rq2_generations)?;
        usize_key("triage.k_max", &mut c.k_max)?;
        usize_key("rq4.seeds", &mut c.rq4_seeds)?;
        usize_key("rq4.episodes", &mut c.rq4_episodes)?;
        usize_key("rq4.min_seeds", &mut c.rq4_min_seeds)?;
        usize_key("rq1.min_samples", &mut c.rq1_learn.min_samples)?;
        if let Some(v) = kv.get_f64("rq1.tol_a")? {
            c.rq1_learn.tol_a = v;
        }
        if let Some(v) = kv.get_f64("rq1.tol_b")? {
            c.rq1_learn.tol_b = v;
        }
        if let Some(v) = kv.get_f64("rq1.duration")? {
            c.rq1_duration = v;
        }
        if let Some(v) = kv.get_f64("rq4.tail")? {
            c.rq4_tail = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.to_string()));
        if self.rq1_train == 0 || self.rq1_test == 0 {
            return bad("rq1 needs at least one training and one test scenario");
        }
        if !(self.rq1_duration >= 30.0) {
            return bad("rq1.duration must be at least 30 s");
        }
        if self.rq2_reps == 0 || self.rq2_budget == 0 || self.rq2_population == 0 || self.rq2_generations == 0 {
            return bad("rq2 counts must be positive");
        }
        if self.k_max < 2 {
            return bad("triage.k_max must be at least 2");
        }
        if self.rq4_seeds == 0 || self.rq4_episodes == 0 {
            return bad("rq4 counts must be positive");
        }
        if !(self.rq4_tail >= 1.0) {
            return bad("rq4.tail must be at least 1 s");
        }
        Ok(())
    }
}

/// Outcome of one pairwise comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub label: String,
    pub p_value: f64,
    pub a12: f64,
    pub class: char,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    /// CSV tables by file stem.
    pub tables: BTreeMap<String, String>,
    pub tests: Vec<TestResult>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
    /// Headline numbers by key, used by the summary and by callers.
    pub metrics: BTreeMap<String, f64>,
    pub summary: String,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), ..Self::default() }
    }

    fn compare(&mut self, label: &str, a: &[f64], b: &[f64]) -> Result<(), EvalError> {
        let mw = mann_whitney(a, b)?;
        let (v, class) = a12(a, b)?;
        self.tests.push(TestResult { label: label.to_string(), p_value: mw.p, a12: v, class: class.letter() });
        Ok(())
    }

    pub fn tests_csv(&self) -> String {
        let mut out = String::from("comparison,p_value,a12,class\n");
        for t in &self.tests {
            let _ = writeln!(out, "{},{},{},{}", t.label, t.p_value, t.a12, t.class);
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let total: f64 = self.timings.iter().map(|t| t.1).sum();
        let mut out = String::from("stage,seconds,fraction\n");
        for (s, v) in &self.timings {
            let _ = writeln!(out, "{s},{v},{}", if total > 0.0 { v / total } else { 0.0 });
        }
        out
    }

    /// Share of stage `name` in the summed stage time.
    pub fn timing_fraction(&self, name: &str) -> Option<f64> {
        let total: f64 = self.timings.iter().map(|t| t.1).sum();
        let v = self.timings.iter().find(|t| t.0 == name)?.1;
        (total > 0.0).then(|| v / total)
    }

    /// Write every table, the tests, the timings and `summary.md` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        for (name, csv) in &self.tables {
            std::fs::write(dir.join(format!("{name}.csv")), csv)?;
        }
        if !self.tests.is_empty() {
            std::fs::write(dir.join("tests.csv"), self.tests_csv())?;
        }
        if !self.timings.is_empty() {
            std::fs::write(dir.join("timings.csv"), self.timings_csv())?;
        }
        std::fs::write(dir.join("summary.md"), &self.summary)?;
        Ok(())
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

// ---------------------------------------------------------------- RQ1

/// A random single-complication scenario with a physician who switches the
/// ventilator on and makes one or two adjustments.
pub fn random_scenario(name: &str, duration: f64, seed: u64) -> ScenarioScript {
    const KINDS: [ComplicationKind; 4] = [ComplicationKind::Asthma, ComplicationKind::Pneumonia, ComplicationKind::Ards, ComplicationKind::Copd];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = KINDS[rng.random_range(0..4)];
    let onset = rng.random_range(0.05..0.3) * duration;
    let severity = rng.random_range(0.2..0.7);
    let mut s = ScenarioScript::new(name, duration).inject(onset, kind, severity);
    s.seed = seed;
    if rng.random_bool(0.8) {
        let on_at = (onset + rng.random_range(10.0..60.0)).min(duration);
        s = s.set(on_at, "on", 1.0);
        let adjust_at = (on_at + rng.random_range(20.0..90.0)).min(duration);
        s = match rng.random_range(0..4) {
            0 => s.set(adjust_at, "TVOL", rng.random_range(400.0..550.0)),
            1 => s.set(adjust_at, "FIOX", rng.random_range(0.4..0.8)),
            2 => s.set(adjust_at, "PEEP", rng.random_range(5.0..10.0)),
            _ => s.set(adjust_at, "RERA", rng.random_range(12.0..18.0)),
        };
    }
    if rng.random_bool(0.3) {
        let clear_at = rng.random_range(0.6..0.9) * duration;
        s = s.clear(clear_at, kind);
    }
    s
}

/// Labeled scripted run of `script`.
pub fn simulate_labeled(script: &ScenarioScript, cfg: &LabelingConfig) -> Result<(SignalBundle, EventTrace), EvalError> {
    let bundle = run_scenario(script, Controller::Scripted)?;
    let pre = cfg.preprocess(&bundle)?;
    let trace = label(&pre, cfg)?;
    Ok((pre, trace))
}

/// Hold-last-value baseline: the initial TV plus the mean TV jump observed
/// across each event type in training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HoldLastValue {
    pub offsets: BTreeMap<String, f64>,
    /// Seconds averaged on each side of an event.
    pub window: f64,
}

impl HoldLastValue {
    pub fn fit(examples: &[(SignalBundle, EventTrace)], window: f64) -> Result<Self, EvalError> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (b, trace) in examples {
            let tv = b.get("TV")?;
            let avg = |lo: f64, hi: f64| {
                let v: Vec<f64> = tv.samples.iter().filter(|s| s.0 >= lo && s.0 <= hi).map(|s| s.1).collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            for (t, e) in &trace.events {
                if let (Some(before), Some(after)) = (avg(t - window, t - 1.0), avg(*t, t + window)) {
                    let s = sums.entry(e.clone()).or_default();
                    s.0 += after - before;
                    s.1 += 1;
                }
            }
        }
        Ok(Self { offsets: sums.into_iter().map(|(e, (s, n))| (e, s / n as f64)).collect(), window })
    }

    pub fn predict(&self, trace: &EventTrace, horizon: f64, initial_tv: f64) -> f64 {
        initial_tv + trace.events.iter().filter(|(t, _)| *t <= horizon).map(|(_, e)| self.offsets.get(e).copied().unwrap_or(0.0)).sum::<f64>()
    }
}

/// Learner vs hold-last-value on TV at the end of held-out scenarios.
pub fn run_rq1(cfg: &EvalConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let labeling = LabelingConfig::default();
    let mut report = ExperimentReport::new("rq1");
    let t0 = Instant::now();
    let gen = |offset: usize, n: usize| -> Result<Vec<(SignalBundle, EventTrace)>, EvalError> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let s = random_scenario(&format!("s{}", offset + i), cfg.rq1_duration, derive_seed(cfg.seed, (offset + i) as u64));
                simulate_labeled(&s, &labeling)
            })
            .collect()
    };
    let train = gen(0, cfg.rq1_train)?;
    let test = gen(cfg.rq1_train, cfg.rq1_test)?;
    report.timings.push(("simulation".into(), secs(t0.elapsed())));

    let t1 = Instant::now();
    let learned = learn(&train, &cfg.rq1_learn)?;
    let alphabet: Vec<String> = crate::domain::labeling_alphabet();
    let completed = complete_with_sink(&learned, &alphabet);
    let baseline = HoldLastValue::fit(&train, 10.0)?;
    report.timings.push(("learning".into(), secs(t1.elapsed())));

    let range = labeling.ranges[VITALS.iter().position(|v| *v == "TV").unwrap_or(4)];
    let mut rows = String::from("scenario,truth,learner,baseline,truth_class,learner_class,baseline_class\n");
    let (mut truth, mut pl, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    let t2 = Instant::now();
    for (i, (b, trace)) in test.iter().enumerate() {
        let tv = b.get("TV")?;
        let (Some(first), Some(last)) = (tv.samples.first(), tv.samples.last()) else { continue };
        let horizon = last.0;
        let l = predict_tv(&completed.sha, None, trace, horizon, Some(first.1))?;
        let h = baseline.predict(trace, horizon, first.1);
        let _ = writeln!(
            rows,
            "{},{},{l},{h},{},{},{}",
            cfg.rq1_train + i,
            last.1,
            classify_tv(last.1, range).name(),
            classify_tv(l, range).name(),
            classify_tv(h, range).name()
        );
        truth.push(last.1);
        pl.push(l);
        pb.push(h);
    }
    report.timings.push(("prediction".into(), secs(t2.elapsed())));
    let classes = |xs: &[f64]| xs.iter().map(|&x| classify_tv(x, range)).collect::<Vec<TvClass>>();
    let (ct, cl, cb) = (classes(&truth), classes(&pl), classes(&pb));
    let m = [
        ("learner.mape", mape(&pl, &truth)?),
        ("baseline.mape", mape(&pb, &truth)?),
        ("learner.accuracy", accuracy(&cl, &ct)?),
        ("baseline.accuracy", accuracy(&cb, &ct)?),
        ("learner.locations", learned.modeled_locations() as f64),
    ];
    report.metrics.extend(m.iter().map(|(k, v)| (k.to_string(), *v)));
    report.tables.insert("predictions".into(), rows);
    let mut s = String::from("# TV prediction\n\n");
    let _ = writeln!(s, "{} training and {} test scenarios of {} s.\n", cfg.rq1_train, cfg.rq1_test, cfg.rq1_duration);
    s.push_str("| model | MAPE | accuracy |\n|---|---|---|\n");
    let _ = writeln!(s, "| learned SHA | {:.3} | {:.2} |", m[0].1, m[2].1);
    let _ = writeln!(s, "| hold last value | {:.3} | {:.2} |", m[1].1, m[3].1);
    let _ = writeln!(s, "\nThe learned automaton has {} locations.", learned.modeled_locations());
    report.summary = s;
    Ok(report)
}

// ---------------------------------------------------------------- RQ2, RQ3

pub const STRATEGIES: [&str; 3] = ["fuzz", "nsga2", "random"];

fn run_campaign(ev: &Evaluator, strategy: &str, cfg: &EvalConfig, seed: u64) -> Result<Campaign, ExploreError> {
    let start = ev.seed_genome();
    match strategy {
        "fuzz" => fuzz(ev, &start, cfg.rq2_budget, &SearchOptions::default(), seed),
        "nsga2" => nsga2(ev, &start, cfg.rq2_population, cfg.rq2_generations, &SearchOptions::default(), seed),
        _ => random_search(ev, &start, cfg.rq2_budget, seed),
    }
}

/// Per-campaign outcome used by the detection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub strategy: String,
    pub rep: usize,
    pub evaluated: usize,
    pub failures: usize,
    pub realistic: usize,
    /// Realistic failures of each requirement over the evaluated mutants.
    pub rates: Vec<f64>,
    pub clusters: usize,
    pub seconds: f64,
}

fn realistic_rates(c: &Campaign, ev: &Evaluator, rc: &RealismConstraints, n_req: usize) -> Vec<f64> {
    let n = c.evaluated.len().max(1) as f64;
    let real: Vec<&EvaluatedMutant> = c.evaluated.iter().filter(|m| check_realism(&m.genome, &ev.schema, rc).realistic).collect();
    (0..n_req).map(|r| real.iter().filter(|m| m.fails(r)).count() as f64 / n).collect()
}

fn default_evaluator() -> (Evaluator, Vec<Requirement>) {
    let reqs = models::requirements();
    (Evaluator::new(models::physician(), vec![models::patient()], reqs.clone()), reqs)
}

/// Exploration campaigns for every strategy and repetition, with realism
/// filtering, clustering and pairwise tests of fuzzing against the others.
pub fn run_rq2(cfg: &EvalConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let (ev, reqs) = default_evaluator();
    let rc = RealismConstraints::parse(models::REALISM)?;
    let jobs: Vec<(usize, usize)> = (0..STRATEGIES.len()).flat_map(|s| (0..cfg.rq2_reps).map(move |r| (s, r))).collect();
    let rows: Vec<CampaignRow> = jobs
        .par_iter()
        .map(|&(s, rep)| -> Result<CampaignRow, EvalError> {
            let t = Instant::now();
            let c = run_campaign(&ev, STRATEGIES[s], cfg, derive_seed(cfg.seed, rep as u64))?;
            let fails = c.failures();
            let tr = triage(&fails, &ev.schema, &rc, cfg.k_max)?;
            Ok(CampaignRow {
                strategy: STRATEGIES[s].to_string(),
                rep,
                evaluated: c.evaluated.len(),
                failures: fails.len(),
                realistic: tr.realistic.len(),
                rates: realistic_rates(&c, &ev, &rc, reqs.len()),
                clusters: tr.clustering.k,
                seconds: secs(t.elapsed()),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut report = ExperimentReport::new("rq2");
    let mut csv = String::from("strategy,rep,evaluated,failures,realistic");
    for r in &reqs {
        let _ = write!(csv, ",rate_{}", r.name);
    }
    csv.push_str(",clusters,seconds\n");
    for row in &rows {
        let _ = write!(csv, "{},{},{},{},{}", row.strategy, row.rep, row.evaluated, row.failures, row.realistic);
        for r in &row.rates {
            let _ = write!(csv, ",{r}");
        }
        let _ = writeln!(csv, ",{},{}", row.clusters, row.seconds);
    }
    report.tables.insert("campaigns".into(), csv);

    let of = |s: &str| rows.iter().filter(|r| r.strategy == s).collect::<Vec<_>>();
    let mut s = String::from("# Failure detection\n\n");
    let _ = writeln!(s, "{} repetitions per strategy, budget {}.\n", cfg.rq2_reps, cfg.rq2_budget);
    s.push_str("| strategy |");
    for r in &reqs {
        let _ = write!(s, " median rate {} |", r.name);
    }
    s.push_str(" median clusters |\n|---|");
    s.push_str(&"---|".repeat(reqs.len() + 1));
    s.push('\n');
    for st in STRATEGIES {
        let sr = of(st);
        let _ = write!(s, "| {st} |");
        for r in 0..reqs.len() {
            let v: Vec<f64> = sr.iter().map(|x| x.rates[r]).collect();
            let m = median(&v);
            report.metrics.insert(format!("{st}.median_rate.{}", reqs[r].name), m);
            let _ = write!(s, " {m:.3} |");
        }
        let k: Vec<f64> = sr.iter().map(|x| x.clusters as f64).collect();
        let mk = median(&k);
        report.metrics.insert(format!("{st}.median_clusters"), mk);
        let _ = writeln!(s, " {mk} |");
    }
    let fz = of("fuzz");
    for other in &STRATEGIES[1..] {
        let ot = of(other);
        for (r, req) in reqs.iter().enumerate() {
            let a: Vec<f64> = fz.iter().map(|x| x.rates[r]).collect();
            let b: Vec<f64> = ot.iter().map(|x| x.rates[r]).collect();
            report.compare(&format!("fuzz-vs-{other}:{}", req.name), &a, &b)?;
        }
    }
    s.push_str("\n| comparison | p | A12 | class |\n|---|---|---|---|\n");
    for t in &report.tests {
        let _ = writeln!(s, "| {} | {:.4} | {:.3} | {} |", t.label, t.p_value, t.a12, t.class);
    }
    report.summary = s;
    Ok(report)
}

/// Stage timings of one default fuzzing campaign followed by triage.
pub fn run_rq3(cfg: &EvalConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let (ev, _) = default_evaluator();
    let rc = RealismConstraints::parse(models::REALISM)?;
    let c = run_campaign(&ev, "fuzz", cfg, derive_seed(cfg.seed, 0))?;
    let t = Instant::now();
    let fails = c.failures();
    let tr = triage(&fails, &ev.schema, &rc, cfg.k_max)?;
    let clustering = t.elapsed();
    let mut report = ExperimentReport::new("rq3");
    report.timings = vec![
        ("generation".into(), secs(c.timings.generation)),
        ("smc".into(), secs(c.timings.smc)),
        ("selection".into(), secs(c.timings.selection)),
        ("clustering".into(), secs(clustering)),
    ];
    for (name, _) in report.timings.clone() {
        let f = report.timing_fraction(&name).unwrap_or(0.0);
        report.metrics.insert(format!("{name}.fraction"), f);
    }
    report.metrics.insert("failures".into(), fails.len() as f64);
    report.metrics.insert("clusters".into(), tr.clustering.k as f64);
    let mut s = String::from("# Execution cost\n\n| stage | seconds | share |\n|---|---|---|\n");
    for (name, v) in &report.timings {
        let _ = writeln!(s, "| {name} | {v:.3} | {:.1}% |", 100.0 * report.timing_fraction(name).unwrap_or(0.0));
    }
    let _ = writeln!(s, "\n{} mutants evaluated, {} failures, {} clusters.", c.evaluated.len(), fails.len(), tr.clustering.k);
    report.summary = s;
    Ok(report)
}

// ---------------------------------------------------------------- RQ4

/// Eight complication scenarios, each with a scripted physician who switches
/// the ventilator on and makes one adjustment.
pub fn rq4_scenarios() -> Vec<ScenarioScript> {
    use ComplicationKind::*;
    let d = 600.0;
    let named = |i: usize, s: ScenarioScript| {
        let mut s = s;
        s.name = format!("scenario{}", i + 1);
        s.seed = 1000 + i as u64;
        s
    };
    vec![
        ScenarioScript::new("", d).inject(30.0, Asthma, 0.4).set(60.0, "on", 1.0).set(120.0, "FIOX", 0.5),
        ScenarioScript::new("", d).inject(30.0, Pneumonia, 0.3).set(90.0, "on", 1.0).set(180.0, "PEEP", 7.0),
        ScenarioScript::new("", d).inject(30.0, Ards, 0.5).set(70.0, "on", 1.0).set(150.0, "FIOX", 0.6),
        ScenarioScript::new("", d).inject(30.0, Copd, 0.35).set(120.0, "on", 1.0).set(200.0, "RERA", 14.0),
        ScenarioScript::new("", d).inject(30.0, Asthma, 0.3).inject(240.0, Pneumonia, 0.45).set(60.0, "on", 1.0).set(300.0, "TVOL", 450.0),
        ScenarioScript::new("", d).inject(30.0, Ards, 0.45).clear(400.0, Ards).set(80.0, "on", 1.0).set(160.0, "FIOX", 0.5),
        ScenarioScript::new("", d).inject(20.0, Copd, 0.5).set(45.0, "on", 1.0).set(120.0, "RERA", 14.0),
        ScenarioScript::new("", d).inject(30.0, Pneumonia, 0.6).set(100.0, "on", 1.0).set(200.0, "FIOX", 0.5),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, s)| {
        let mut s = named(i, s);
        s.timeline.sort_by(|a, b| a.0.total_cmp(&b.0));
        s
    })
    .collect()
}

/// Tail means of the five vitals over samples with `t >= from`.
fn tail_means(series: &[(f64, [f64; 5])], from: f64) -> [f64; 5] {
    let tail: Vec<&[f64; 5]> = series.iter().filter(|s| s.0 >= from).map(|s| &s.1).collect();
    let mut out = [0.0; 5];
    for (i, o) in out.iter_mut().enumerate() {
        *o = tail.iter().map(|v| v[i]).sum::<f64>() / tail.len().max(1) as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub final_vitals: [f64; 5],
    pub in_range: usize,
    pub tv_deviation: f64,
}

fn outcome(name: &str, series: &[(f64, [f64; 5])], duration: f64, tail: f64, labeling: &LabelingConfig) -> ScenarioOutcome {
    let v = tail_means(series, duration - tail);
    let tv = VITALS.iter().position(|x| *x == "TV").unwrap_or(4);
    ScenarioOutcome {
        scenario: name.to_string(),
        final_vitals: v,
        in_range: (0..5).filter(|&i| labeling.in_range(i, v[i])).count(),
        tv_deviation: (v[tv] - NOMINAL_TV).abs(),
    }
}

/// The scenario under its scripted physician.
pub fn scripted_outcome(script: &ScenarioScript, tail: f64, labeling: &LabelingConfig) -> Result<ScenarioOutcome, EvalError> {
    let b = run_scenario(script, Controller::Scripted)?;
    let sigs = b.ordered()?;
    let series: Vec<(f64, [f64; 5])> =
        (0..sigs[0].samples.len()).map(|k| (sigs[0].samples[k].0, std::array::from_fn(|i| sigs[i].samples[k].1))).collect();
    Ok(outcome(&script.name, &series, script.duration, tail, labeling))
}

/// The scenario with the ventilator driven by `strategy` in auto mode; the
/// script's `set` lines are ignored.
pub fn strategy_outcome(
    shas: &[Sha],
    synthesis: &Synthesis,
    script: &ScenarioScript,
    tail: f64,
    labeling: &LabelingConfig,
) -> Result<ScenarioOutcome, EvalError> {
    let mut s = Session::new(shas.to_vec(), synthesis.strategy.clone(), script.clone(), Mode::Auto, labeling.clone(), RuntimeOptions::default())?;
    let mut series = vec![(s.sim.t(), s.sim.state.vitals)];
    for f in s.tick(script.duration)? {
        series.push((f.t, std::array::from_fn(|i| f.vitals[VITALS[i]])));
    }
    Ok(outcome(&script.name, &series, script.duration, tail, labeling))
}

/// Synthesize on the generalized physician and the digital-twin patient
/// with several seeds, then compare the first seed's strategy against the
/// scripted physician on the eight scenarios.
pub fn run_rq4(cfg: &EvalConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let shas = vec![models::physician_general(), models::patient_dt()];
    let net = compose_unchecked(shas.clone()).map_err(SynthError::from)?;
    let game = to_game(&net)?;
    let goal = vec!["q8".to_string()];
    let opts = SynthOptions { episodes: cfg.rq4_episodes, ..SynthOptions::default() };
    let mut report = ExperimentReport::new("rq4");
    let t = Instant::now();
    let runs: Vec<Synthesis> =
        (0..cfg.rq4_seeds).into_par_iter().map(|i| synthesize(&game, &goal, &opts, derive_seed(cfg.seed, i as u64))).collect::<Result<_, _>>()?;
    report.timings.push(("synthesis".into(), secs(t.elapsed())));
    let agreement = argmax_agreement(&runs, cfg.rq4_min_seeds.min(runs.len()));
    let agree_mean = if agreement.is_empty() { 1.0 } else { agreement.values().sum::<f64>() / agreement.len() as f64 };
    let mut agree_csv = String::from("state,agreement\n");
    for (s, a) in &agreement {
        let _ = writeln!(agree_csv, "\"{s}\",{a}");
    }
    report.tables.insert("agreement".into(), agree_csv);
    report.tables.insert("strategy".into(), runs[0].strategy.to_csv());

    let labeling = LabelingConfig::default();
    let t = Instant::now();
    let scenarios = rq4_scenarios();
    let pairs: Vec<(ScenarioOutcome, ScenarioOutcome)> = scenarios
        .par_iter()
        .map(|sc| Ok((scripted_outcome(sc, cfg.rq4_tail, &labeling)?, strategy_outcome(&shas, &runs[0], sc, cfg.rq4_tail, &labeling)?)))
        .collect::<Result<_, EvalError>>()?;
    report.timings.push(("scenarios".into(), secs(t.elapsed())));

    let mut csv = String::from("scenario,physician_in_range,strategy_in_range,physician_tv,strategy_tv,physician_dev,strategy_dev,delta_abs,delta_rel\n");
    let mut s = String::from("# Strategy effectiveness\n\n");
    s.push_str("| scenario | in range (physician) | in range (strategy) | TV physician | TV strategy | Δ physician | Δ strategy | Δ abs | Δ rel |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let mut wins = 0;
    for (p, q) in &pairs {
        let d_abs = p.tv_deviation - q.tv_deviation;
        let d_rel = if p.tv_deviation > 0.0 { d_abs / p.tv_deviation } else { 0.0 };
        if q.in_range >= p.in_range {
            wins += 1;
        }
        let (ptv, qtv) = (p.final_vitals[4], q.final_vitals[4]);
        let _ = writeln!(csv, "{},{},{},{ptv},{qtv},{},{},{d_abs},{d_rel}", p.scenario, p.in_range, q.in_range, p.tv_deviation, q.tv_deviation);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {ptv:.0} | {qtv:.0} | {:.1} | {:.1} | {d_abs:+.1} | {:+.0}% |",
            p.scenario,
            p.in_range,
            q.in_range,
            p.tv_deviation,
            q.tv_deviation,
            100.0 * d_rel
        );
    }
    report.tables.insert("scenarios".into(), csv);
    let pdev = mean(&pairs.iter().map(|p| p.0.tv_deviation).collect::<Vec<_>>());
    let qdev = mean(&pairs.iter().map(|p| p.1.tv_deviation).collect::<Vec<_>>());
    report.metrics.insert("wins".into(), wins as f64);
    report.metrics.insert("scenarios".into(), pairs.len() as f64);
    report.metrics.insert("physician.mean_deviation".into(), pdev);
    report.metrics.insert("strategy.mean_deviation".into(), qdev);
    report.metrics.insert("agreement.mean".into(), agree_mean);
    report.metrics.insert("agreement.states".into(), agreement.len() as f64);
    let _ = writeln!(
        s,
        "\nStrategy at least as many vitals in range in {wins} of {} scenarios; mean |TV-400| {pdev:.1} (physician) vs {qdev:.1} (strategy).",
        pairs.len()
    );
    let _ = writeln!(
        s,
        "Argmax agreement over {} seeds: {:.3} mean across {} states seen in at least {} seeds.",
        runs.len(),
        agree_mean,
        agreement.len(),
        cfg.rq4_min_seeds
    );
    report.summary = s;
    Ok(report)
}
