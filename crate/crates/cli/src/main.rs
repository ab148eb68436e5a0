use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pdp_twin::eval::{self, EvalConfig, EvalError, ExperimentReport};
use pdp_twin::explorer::{failure_models, fuzz, nsga2, parse_mutants_csv, random_search, Evaluator, SearchOptions};
use pdp_twin::kv::KvFile;
use pdp_twin::labeling::{label, LabelingConfig, SignalBundle};
use pdp_twin::learner::{complete_with_sink, learn, LearnOptions};
use pdp_twin::physio::{run_scenario, Controller, ScenarioScript};
use pdp_twin::sha::dsl::{parse_network, parse_sha, serialize_sha};
use pdp_twin::sha::network::compose_unchecked;
use pdp_twin::smc::parse_requirements;
use pdp_twin::synth::{evaluate_strategy, synthesize, to_game, SynthOptions};
use pdp_twin::triage::{triage, RealismConstraints};
use pdp_twin::{models, validate_sha, Sha};

#[derive(Parser)]
#[command(name = "pdp-twin", version, about = "Digital-twin dependability toolkit for physician-device-patient systems")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long = "rng-seed", global = true)]
    rng_seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script on the patient simulator and write its signals.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Learn a patient automaton from signal files.
    Learn {
        /// Signal CSV files (`t,name,value`).
        #[arg(required = true)]
        signals: Vec<PathBuf>,
        /// Add a sink location absorbing unsupported events.
        #[arg(long)]
        complete: bool,
    },
    /// Search the model space for failure scenarios.
    Detect {
        /// fuzz, nsga2 or random.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        /// Controller automaton to mutate (default: bundled physician).
        #[arg(long = "seed-model")]
        seed_model: Option<PathBuf>,
        /// Environment automata (default: bundled patient).
        #[arg(long)]
        patient: Vec<PathBuf>,
        #[arg(long)]
        requirements: Option<PathBuf>,
    },
    /// Filter failures for realism and cluster them.
    Triage {
        /// `mutants.csv` written by `detect`.
        #[arg(long)]
        mutants: PathBuf,
        #[arg(long = "seed-model")]
        seed_model: Option<PathBuf>,
        #[arg(long)]
        realism: Option<PathBuf>,
    },
    /// Learn a ventilator strategy on a physician/patient network.
    Synthesize {
        /// Network file with the controller and the patient (default: bundled models).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Goal locations of the patient.
        #[arg(long)]
        goal: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Serve the live-session HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Learner against the hold-last-value baseline.
    #[command(name = "eval-rq1")]
    EvalRq1,
    /// Failure detection across exploration strategies.
    #[command(name = "eval-rq2")]
    EvalRq2,
    /// Stage timings of one campaign.
    #[command(name = "eval-rq3")]
    EvalRq3,
    /// Synthesized strategy against the scripted physician.
    #[command(name = "eval-rq4")]
    EvalRq4,
}

/// Bad input: configuration, models or arguments. Exits with 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn load_sha(path: Option<&Path>, fallback: fn() -> Sha) -> Result<Sha> {
    let sha = match path {
        Some(p) => parse_sha(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => fallback(),
    };
    let diags = validate_sha(&sha);
    if !diags.is_empty() {
        let list: Vec<String> = diags.iter().map(ToString::to_string).collect();
        return Err(invalid(format!("model `{}`: {}", sha.name, list.join("; "))));
    }
    Ok(sha)
}

struct Ctx {
    kv: KvFile,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.kv.get_f64(key).map_err(invalid)
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.kv.get_usize(key).map_err(invalid)
    }
}

fn learn_options(ctx: &Ctx) -> Result<LearnOptions> {
    let mut o = LearnOptions::default();
    if let Some(v) = ctx.f64("learn.tol_a")? {
        o.tol_a = v;
    }
    if let Some(v) = ctx.f64("learn.tol_b")? {
        o.tol_b = v;
    }
    if let Some(v) = ctx.usize("learn.min_samples")? {
        o.min_samples = v;
    }
    if let Some(v) = ctx.kv.get_bool("learn.stable").map_err(invalid)? {
        o.stable = v;
    }
    Ok(o)
}

fn synth_options(ctx: &Ctx) -> Result<SynthOptions> {
    let mut o = SynthOptions::default();
    if let Some(v) = ctx.usize("synth.episodes")? {
        o.episodes = v;
    }
    for (key, dst) in [
        ("synth.horizon", &mut o.horizon),
        ("synth.learning_rate", &mut o.learning_rate),
        ("synth.discount", &mut o.discount),
        ("synth.decision_period", &mut o.decision_period),
        ("synth.averaging", &mut o.averaging),
    ] {
        if let Some(v) = ctx.f64(key)? {
            *dst = v;
        }
    }
    if o.episodes == 0 || !(o.horizon > 0.0) || !(o.decision_period > 0.0) || !(0.0..=1.0).contains(&o.discount) {
        return Err(invalid("synth: episodes, horizon and decision_period must be positive and discount in [0, 1]"));
    }
    Ok(o)
}

fn simulate(ctx: &Ctx, scenario: &Path) -> Result<()> {
    let script = ScenarioScript::parse(&read(scenario)?).map_err(invalid)?;
    let bundle = run_scenario(&script, Controller::Scripted)?;
    let mut buf = Vec::new();
    bundle.write_csv(&mut buf)?;
    write(&ctx.out, "signals.csv", &String::from_utf8(buf)?)?;
    println!("{} s simulated, signals in {}", script.duration, ctx.out.join("signals.csv").display());
    Ok(())
}

fn learn_cmd(ctx: &Ctx, files: &[PathBuf], complete: bool) -> Result<()> {
    let lab = LabelingConfig::from_kv(&ctx.kv).map_err(invalid)?;
    let mut examples = Vec::new();
    let mut events = String::from("file,t,event\n");
    for f in files {
        let bundle = SignalBundle::read_csv_file(f).map_err(|e| invalid(format!("{}: {e}", f.display())))?;
        let pre = lab.preprocess(&bundle).map_err(|e| invalid(format!("{}: {e}", f.display())))?;
        let trace = label(&pre, &lab)?;
        for (t, e) in &trace.events {
            events.push_str(&format!("{},{t},{e}\n", f.display()));
        }
        examples.push((pre, trace));
    }
    let mut learned = learn(&examples, &learn_options(ctx)?)?;
    if complete {
        learned = complete_with_sink(&learned, &pdp_twin::domain::labeling_alphabet());
    }
    write(&ctx.out, "learned.sha", &serialize_sha(&learned.sha))?;
    write(&ctx.out, "provenance.csv", &learned.provenance_csv())?;
    write(&ctx.out, "events.csv", &events)?;
    println!(
        "{} locations from {} segments ({} dropped), model in {}",
        learned.modeled_locations(),
        learned.segments,
        learned.dropped,
        ctx.out.join("learned.sha").display()
    );
    Ok(())
}

fn detect(ctx: &Ctx, strategy: Option<String>, budget: Option<usize>, seed_model: Option<&Path>, patients: &[PathBuf], reqs: Option<&Path>) -> Result<()> {
    let strategy = strategy.or_else(|| ctx.kv.get("detect.strategy").map(str::to_string)).unwrap_or_else(|| "fuzz".into());
    let budget = match budget {
        Some(b) => b,
        None => ctx.usize("detect.budget")?.unwrap_or(500),
    };
    if budget == 0 {
        return Err(invalid("budget must be at least 1"));
    }
    let seed = load_sha(seed_model, models::physician)?;
    let env = if patients.is_empty() {
        vec![models::patient()]
    } else {
        patients.iter().map(|p| load_sha(Some(p), models::patient)).collect::<Result<_>>()?
    };
    let requirements = match reqs {
        Some(p) => parse_requirements(&read(p)?).map_err(invalid)?,
        None => models::requirements(),
    };
    let mut ev = Evaluator::new(seed, env, requirements);
    ev.epsilon = ctx.f64("detect.epsilon")?.unwrap_or(ev.epsilon);
    ev.delta = ctx.f64("detect.delta")?.unwrap_or(ev.delta);
    if !(ev.epsilon > 0.0 && ev.epsilon < 1.0 && ev.delta > 0.0 && ev.delta < 1.0) {
        return Err(invalid("detect.epsilon and detect.delta must lie in (0, 1)"));
    }
    let opts = SearchOptions { k: ctx.f64("mutation.k")?.unwrap_or(1.5), p_param: ctx.f64("mutation.p_param")?.unwrap_or(0.8) };
    let g = ev.seed_genome();
    let campaign = match strategy.as_str() {
        "fuzz" => fuzz(&ev, &g, budget, &opts, ctx.seed)?,
        "random" => random_search(&ev, &g, budget, ctx.seed)?,
        "nsga2" => {
            let pop = ctx.usize("detect.population")?.unwrap_or(10);
            if pop == 0 || budget % pop != 0 {
                return Err(invalid(format!("budget {budget} is not a multiple of the population {pop}")));
            }
            nsga2(&ev, &g, pop, budget / pop, &opts, ctx.seed).map_err(invalid)?
        }
        other => return Err(invalid(format!("unknown strategy `{other}` (fuzz, nsga2, random)"))),
    };
    write(&ctx.out, "mutants.csv", &campaign.mutants_csv(&ev.schema, &ev.requirements))?;
    for (name, text) in failure_models(&campaign, &ev) {
        write(&ctx.out, &name, &text)?;
    }
    println!(
        "{strategy}: {} mutants evaluated, {} failures, written to {}",
        campaign.evaluated.len(),
        campaign.failures().len(),
        ctx.out.display()
    );
    Ok(())
}

fn triage_cmd(ctx: &Ctx, mutants: &Path, seed_model: Option<&Path>, realism: Option<&Path>) -> Result<()> {
    let seed = load_sha(seed_model, models::physician)?;
    let ev = Evaluator::new(seed, vec![], vec![]);
    let ms = parse_mutants_csv(&read(mutants)?, &ev.schema).map_err(|e| invalid(format!("{}: {e}", mutants.display())))?;
    let text = match realism {
        Some(p) => read(p)?,
        None => models::REALISM.to_string(),
    };
    let rc = RealismConstraints::parse(&text).map_err(invalid)?;
    let problems = rc.validate(&ev.schema);
    if !problems.is_empty() {
        return Err(invalid(format!("realism constraints: {}", problems.join("; "))));
    }
    let k_max = ctx.usize("triage.k_max")?.unwrap_or(20);
    if k_max < 2 {
        return Err(invalid("triage.k_max must be at least 2"));
    }
    let fails: Vec<_> = ms.iter().filter(|m| m.is_failure).collect();
    let r = triage(&fails, &ev.schema, &rc, k_max)?;
    write(&ctx.out, "clusters.csv", &r.clusters_csv())?;
    write(&ctx.out, "dendrogram.txt", &r.dendrogram_txt())?;
    let mut rejected = String::from("genome_id,reasons\n");
    for (id, reasons) in &r.rejected {
        rejected.push_str(&format!("{id},\"{}\"\n", reasons.join("; ").replace('"', "'")));
    }
    write(&ctx.out, "rejected.csv", &rejected)?;
    println!(
        "{} failures, {} realistic, {} clusters (representatives {:?})",
        fails.len(),
        r.realistic.len(),
        r.clustering.k,
        r.representatives
    );
    Ok(())
}

fn synthesize_cmd(ctx: &Ctx, model: Option<&Path>, goal: Vec<String>, episodes: Option<usize>) -> Result<()> {
    let shas = match model {
        Some(p) => parse_network(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => vec![models::physician_general(), models::patient_dt()],
    };
    let net = compose_unchecked(shas).map_err(invalid)?;
    let game = to_game(&net).map_err(invalid)?;
    let goal = if !goal.is_empty() {
        goal
    } else {
        ctx.kv.get("synth.goal").unwrap_or("q8").split(',').map(|s| s.trim().to_string()).collect()
    };
    let mut opts = synth_options(ctx)?;
    if let Some(e) = episodes {
        opts.episodes = e;
    }
    let s = synthesize(&game, &goal, &opts, ctx.seed).map_err(|e| match e {
        pdp_twin::synth::SynthError::Model(m) => anyhow::Error::new(m),
        other => invalid(other),
    })?;
    write(&ctx.out, "strategy.csv", &s.strategy.to_csv())?;
    let check = evaluate_strategy(&game, &goal, &s.strategy, opts.horizon, opts.decision_period, 200, ctx.seed)?;
    println!(
        "{} states mapped; mean time in goal {:.1} s of {} s over {} runs (coverage {:.2}); strategy in {}",
        s.strategy.entries.len(),
        check.mean_sojourn,
        opts.horizon,
        check.runs,
        check.coverage,
        ctx.out.join("strategy.csv").display()
    );
    Ok(())
}

fn run_eval(ctx: &Ctx, f: fn(&EvalConfig) -> Result<ExperimentReport, EvalError>) -> Result<()> {
    let mut cfg = EvalConfig::from_kv(&ctx.kv).map_err(invalid)?;
    cfg.seed = ctx.seed;
    let report = f(&cfg).map_err(|e| match e {
        EvalError::Config(_) | EvalError::Kv(_) => invalid(e),
        other => anyhow::Error::new(other),
    })?;
    report.write_to(&ctx.out)?;
    print!("{}", report.summary);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let kv = match &cli.config {
        Some(p) => KvFile::load(p).map_err(invalid)?,
        None => KvFile::default(),
    };
    let seed = match cli.rng_seed {
        Some(s) => s,
        None => kv.get_u64("seed").map_err(invalid)?.unwrap_or(0),
    };
    let ctx = Ctx { kv, seed, out: cli.out };
    match cli.command {
        Command::Simulate { scenario } => simulate(&ctx, &scenario),
        Command::Learn { signals, complete } => learn_cmd(&ctx, &signals, complete),
        Command::Detect { strategy, budget, seed_model, patient, requirements } => {
            detect(&ctx, strategy, budget, seed_model.as_deref(), &patient, requirements.as_deref())
        }
        Command::Triage { mutants, seed_model, realism } => triage_cmd(&ctx, &mutants, seed_model.as_deref(), realism.as_deref()),
        Command::Synthesize { model, goal, episodes } => synthesize_cmd(&ctx, model.as_deref(), goal, episodes),
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(pdp_twin_server::serve(addr))?;
            Ok(())
        }
        Command::EvalRq1 => run_eval(&ctx, eval::run_rq1),
        Command::EvalRq2 => run_eval(&ctx, eval::run_rq2),
        Command::EvalRq3 => run_eval(&ctx, eval::run_rq3),
        Command::EvalRq4 => run_eval(&ctx, eval::run_rq4),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
