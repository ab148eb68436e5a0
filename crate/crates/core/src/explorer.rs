//! Model-space exploration: archive-based fuzzing, NSGA-II and random search
//! over physician model genomes.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sha::network::compose_unchecked;
use crate::sha::sim::derive_seed;
use crate::sha::{dsl, Sha, ShaError};
use crate::smc::{estimate_many, Estimate, Property, Requirement, SmcError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExploreError {
    #[error("mutation factor must exceed 1 (got {0})")]
    BadFactor(f64),
    #[error("no removable edge left to remove")]
    NothingToRemove,
    #[error("budget must be at least 1")]
    BudgetZero,
    #[error("population must be even and at least 4 (got {0})")]
    BadPopulation(usize),
    #[error("objective vectors have different lengths")]
    RaggedInput,
    #[error("genome does not match the schema")]
    SchemaMismatch,
    #[error("mutants table: {0}")]
    Csv(String),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Model(#[from] ShaError),
}

/// Layout of a genome: tunable parameters with bounds and removable edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeSchema {
    pub params: Vec<(String, f64, f64)>,
    pub edges: Vec<String>,
}

impl GenomeSchema {
    pub fn from_sha(sha: &Sha) -> Self {
        Self {
            params: sha.params.iter().map(|p| (p.name.clone(), p.lo, p.hi)).collect(),
            edges: sha.removable_edges().into_iter().map(|i| sha.edges[i].id()).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.params.len() + self.edges.len()
    }

    pub fn check(&self, g: &Genome) -> Result<(), ExploreError> {
        if g.params.len() != self.params.len() || g.mask.len() != self.edges.len() {
            return Err(ExploreError::SchemaMismatch);
        }
        Ok(())
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.0 == name)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e == id)
    }

    /// Point in the unit hypercube: min-max normalized params then mask bits.
    pub fn normalized(&self, g: &Genome) -> Vec<f64> {
        let mut v: Vec<f64> = g
            .params
            .iter()
            .zip(&self.params)
            .map(|(x, (_, lo, hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
            .collect();
        v.extend(g.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub params: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Genome {
    pub fn from_sha(sha: &Sha) -> Self {
        Self { params: sha.params.iter().map(|p| p.value).collect(), mask: vec![true; sha.removable_edges().len()] }
    }

    /// Apply to the seed model: set parameter values and drop masked edges.
    pub fn instantiate(&self, seed: &Sha) -> Sha {
        let mut out = seed.with_edge_mask(&self.mask);
        for (p, v) in out.params.iter_mut().zip(&self.params) {
            p.value = *v;
        }
        out
    }

    pub fn mask_string(&self) -> String {
        self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Multiply one uniformly chosen parameter by a factor from `[1/k, k]`, clamped to bounds.
pub fn mutate_parameter(g: &Genome, schema: &GenomeSchema, rng: &mut dyn RngCore, k: f64) -> Result<Genome, ExploreError> {
    if !(k > 1.0) {
        return Err(ExploreError::BadFactor(k));
    }
    let mut out = g.clone();
    if schema.params.is_empty() {
        return Ok(out);
    }
    let i = rng.random_range(0..schema.params.len());
    let f = rng.random_range(1.0 / k..=k);
    out.params[i] = scale_param(out.params[i], f, schema.params[i].1, schema.params[i].2);
    Ok(out)
}

pub fn scale_param(x: f64, factor: f64, lo: f64, hi: f64) -> f64 {
    (x * factor).clamp(lo, hi)
}

/// Flip exactly one present removable edge to absent.
pub fn mutate_structure(g: &Genome, rng: &mut dyn RngCore) -> Result<Genome, ExploreError> {
    let present: Vec<usize> = (0..g.mask.len()).filter(|&i| g.mask[i]).collect();
    if present.is_empty() {
        return Err(ExploreError::NothingToRemove);
    }
    let mut out = g.clone();
    out.mask[present[rng.random_range(0..present.len())]] = false;
    Ok(out)
}

/// Parametric mutation with probability `p_param`, structural otherwise;
/// falls back to parametric when nothing is left to remove.
pub fn mutate(g: &Genome, schema: &GenomeSchema, rng: &mut dyn RngCore, k: f64, p_param: f64) -> Result<Genome, ExploreError> {
    if rng.random_bool(p_param) {
        return mutate_parameter(g, schema, rng, k);
    }
    match mutate_structure(g, rng) {
        Err(ExploreError::NothingToRemove) => mutate_parameter(g, schema, rng, k),
        r => r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedMutant {
    pub id: usize,
    pub genome: Genome,
    pub estimates: Vec<Estimate>,
    pub violation: Vec<f64>,
    pub scores: Vec<f64>,
    pub is_failure: bool,
}

impl EvaluatedMutant {
    pub fn p_hat(&self, r: usize) -> f64 {
        self.estimates[r].p_hat
    }

    pub fn fails(&self, r: usize) -> bool {
        self.scores[r] > 0.0
    }
}

/// Evaluates genomes of the controller automaton against requirements by SMC.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub seed_model: Sha,
    pub environment: Vec<Sha>,
    pub schema: GenomeSchema,
    pub requirements: Vec<Requirement>,
    pub epsilon: f64,
    pub delta: f64,
}

impl Evaluator {
    pub fn new(seed_model: Sha, environment: Vec<Sha>, requirements: Vec<Requirement>) -> Self {
        let schema = GenomeSchema::from_sha(&seed_model);
        Self { seed_model, environment, schema, requirements, epsilon: 0.05, delta: 0.05 }
    }

    pub fn seed_genome(&self) -> Genome {
        Genome::from_sha(&self.seed_model)
    }

    pub fn model(&self, g: &Genome) -> Sha {
        g.instantiate(&self.seed_model)
    }

    pub fn evaluate(&self, id: usize, g: &Genome, seed: u64) -> Result<EvaluatedMutant, ExploreError> {
        self.schema.check(g)?;
        let mut shas = vec![self.model(g)];
        shas.extend(self.environment.iter().cloned());
        let net = compose_unchecked(shas)?;
        let props: Vec<Property> = self.requirements.iter().map(|r| r.property.clone()).collect();
        let estimates = estimate_many(&net, &props, self.epsilon, self.delta, seed)?;
        let violation = self.requirements.iter().zip(&estimates).map(|(r, e)| r.violation_likelihood(e.p_hat)).collect();
        let scores: Vec<f64> = self.requirements.iter().zip(&estimates).map(|(r, e)| r.score(e.p_hat)).collect();
        let is_failure = scores.iter().any(|s| *s > 0.0);
        Ok(EvaluatedMutant { id, genome: g.clone(), estimates, violation, scores, is_failure })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub members: Vec<usize>,
    pub max_violation: Vec<f64>,
}

impl Archive {
    pub fn new(n_requirements: usize) -> Self {
        Self { members: Vec::new(), max_violation: vec![f64::NEG_INFINITY; n_requirements] }
    }

    /// Admit the mutant iff it raises the running maximum of some requirement.
    pub fn offer(&mut self, m: &EvaluatedMutant) -> bool {
        let improves = m.violation.iter().zip(&self.max_violation).any(|(v, mx)| v > mx);
        if improves {
            for (mx, v) in self.max_violation.iter_mut().zip(&m.violation) {
                *mx = mx.max(*v);
            }
            self.members.push(m.id);
        }
        improves
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub generation: Duration,
    pub smc: Duration,
    pub selection: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.generation + self.smc + self.selection
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub strategy: String,
    pub evaluated: Vec<EvaluatedMutant>,
    pub archive: Option<Archive>,
    pub timings: Timings,
}

impl Campaign {
    /// Φ: the failing evaluations.
    pub fn failures(&self) -> Vec<&EvaluatedMutant> {
        self.evaluated.iter().filter(|m| m.is_failure).collect()
    }

    pub fn mutants_csv(&self, schema: &GenomeSchema, requirements: &[Requirement]) -> String {
        mutants_csv(&self.evaluated, schema, requirements)
    }
}

pub fn mutants_csv(ms: &[EvaluatedMutant], schema: &GenomeSchema, requirements: &[Requirement]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(schema.params.iter().map(|p| p.0.clone()));
    header.push("edge_mask".into());
    for r in requirements {
        header.push(format!("p_hat_{}", r.name));
    }
    for r in requirements {
        header.push(format!("score_{}", r.name));
    }
    header.push("is_failure".into());
    w.write_record(&header).expect("in-memory csv");
    for m in ms {
        let mut row = vec![m.id.to_string()];
        row.extend(m.genome.params.iter().map(f64::to_string));
        row.push(m.genome.mask_string());
        row.extend(m.estimates.iter().map(|e| e.p_hat.to_string()));
        row.extend(m.scores.iter().map(f64::to_string));
        row.push(m.is_failure.to_string());
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Read a table written by [`mutants_csv`] back into mutants. Genomes,
/// scores and failure flags are restored; SMC estimates are not.
pub fn parse_mutants_csv(text: &str, schema: &GenomeSchema) -> Result<Vec<EvaluatedMutant>, ExploreError> {
    let bad = |m: String| ExploreError::Csv(m);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column `{name}`")));
    let id = col("id")?;
    let params: Vec<usize> = schema.params.iter().map(|p| col(&p.0)).collect::<Result<_, _>>()?;
    let mask = col("edge_mask")?;
    let failure = col("is_failure")?;
    let scores: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("score_")).collect();
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{}`", line + 1, field(i))));
        let genome = Genome {
            params: params.iter().map(|&i| num(i)).collect::<Result<_, _>>()?,
            mask: field(mask).chars().map(|c| c == '1').collect(),
        };
        schema.check(&genome)?;
        out.push(EvaluatedMutant {
            id: field(id).parse().map_err(|_| bad(format!("row {}: bad id", line + 1)))?,
            genome,
            estimates: Vec::new(),
            violation: Vec::new(),
            scores: scores.iter().map(|&i| num(i)).collect::<Result<_, _>>()?,
            is_failure: field(failure) == "true",
        });
    }
    Ok(out)
}

/// Write the failing models as DSL files named `failure_<id>.sha`.
pub fn failure_models(c: &Campaign, ev: &Evaluator) -> Vec<(String, String)> {
    c.failures().iter().map(|m| (format!("failure_{}.sha", m.id), dsl::serialize_sha(&ev.model(&m.genome)))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub k: f64,
    pub p_param: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { k: 1.5, p_param: 0.8 }
    }
}

fn timed<T>(acc: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *acc += t.elapsed();
    out
}

/// Archive-driven mutational fuzzing with exactly `budget` evaluations.
pub fn fuzz(ev: &Evaluator, seed: &Genome, budget: usize, opts: &SearchOptions, rng_seed: u64) -> Result<Campaign, ExploreError> {
    if budget == 0 {
        return Err(ExploreError::BudgetZero);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut tm = Timings::default();
    let mut archive = Archive::new(ev.requirements.len());
    let mut evaluated: Vec<EvaluatedMutant> = Vec::with_capacity(budget);
    for i in 0..budget {
        let g = if i == 0 {
            seed.clone()
        } else {
            timed(&mut tm.generation, || {
                let parent = if archive.members.is_empty() {
                    seed
                } else {
                    &evaluated[archive.members[rng.random_range(0..archive.members.len())]].genome
                };
                mutate(parent, &ev.schema, &mut rng, opts.k, opts.p_param)
            })?
        };
        let m = timed(&mut tm.smc, || ev.evaluate(i, &g, derive_seed(rng_seed, i as u64)))?;
        timed(&mut tm.selection, || archive.offer(&m));
        evaluated.push(m);
    }
    Ok(Campaign { strategy: "fuzz".into(), evaluated, archive: Some(archive), timings: tm })
}

/// Uniform re-sampling around the seed: either fresh parameters or a fresh mask.
pub fn random_search(ev: &Evaluator, seed: &Genome, budget: usize, rng_seed: u64) -> Result<Campaign, ExploreError> {
    if budget == 0 {
        return Err(ExploreError::BudgetZero);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut tm = Timings::default();
    let mut evaluated = Vec::with_capacity(budget);
    for i in 0..budget {
        let g = timed(&mut tm.generation, || random_genome(seed, &ev.schema, &mut rng));
        evaluated.push(timed(&mut tm.smc, || ev.evaluate(i, &g, derive_seed(rng_seed, i as u64)))?);
    }
    Ok(Campaign { strategy: "random".into(), evaluated, archive: None, timings: tm })
}

pub fn random_genome(seed: &Genome, schema: &GenomeSchema, rng: &mut dyn RngCore) -> Genome {
    let mut g = seed.clone();
    if rng.random_bool(0.5) {
        for (x, (_, lo, hi)) in g.params.iter_mut().zip(&schema.params) {
            *x = if hi > lo { rng.random_range(*lo..=*hi) } else { *lo };
        }
    } else {
        for b in g.mask.iter_mut() {
            *b = rng.random_bool(0.5);
        }
    }
    g
}

/// `a` dominates `b` under minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fast non-dominated sorting; fronts hold point indices in ascending order.
pub fn nondominated_sort(points: &[Vec<f64>]) -> Result<Vec<Vec<usize>>, ExploreError> {
    let n = points.len();
    if let Some(m) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != m) {
            return Err(ExploreError::RaggedInput);
        }
    }
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    Ok(fronts)
}

/// Crowding distance of each member of `front` (same order); boundary points get infinity.
pub fn crowding_distance(points: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = points[front[0]].len();
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[front[a]][k].total_cmp(&points[front[b]][k]));
        let lo = points[front[order[0]]][k];
        let hi = points[front[order[n - 1]]][k];
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                let gap = points[front[order[w + 1]]][k] - points[front[order[w - 1]]][k];
                d[order[w]] += gap / (hi - lo);
            }
        }
    }
    d
}

/// Rank (front index) and crowding distance for every point.
fn rank_and_crowd(points: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<usize>>), ExploreError> {
    let fronts = nondominated_sort(points)?;
    let mut rank = vec![0; points.len()];
    let mut crowd = vec![0.0; points.len()];
    for (r, f) in fronts.iter().enumerate() {
        for (i, c) in f.iter().zip(crowding_distance(points, f)) {
            rank[*i] = r;
            crowd[*i] = c;
        }
    }
    Ok((rank, crowd, fronts))
}

fn better(i: usize, j: usize, rank: &[usize], crowd: &[f64]) -> bool {
    rank[i] < rank[j] || (rank[i] == rank[j] && crowd[i] > crowd[j])
}

/// Objectives for NSGA-II: probability of satisfying each requirement.
pub fn objectives(m: &EvaluatedMutant) -> Vec<f64> {
    m.violation.iter().map(|v| 1.0 - v).collect()
}

pub fn uniform_crossover(a: &Genome, b: &Genome, rng: &mut dyn RngCore) -> (Genome, Genome) {
    let (mut x, mut y) = (a.clone(), b.clone());
    for i in 0..x.params.len() {
        if rng.random_bool(0.5) {
            std::mem::swap(&mut x.params[i], &mut y.params[i]);
        }
    }
    for i in 0..x.mask.len() {
        if rng.random_bool(0.5) {
            std::mem::swap(&mut x.mask[i], &mut y.mask[i]);
        }
    }
    (x, y)
}

/// NSGA-II; the initial population counts as the first generation, so the
/// campaign performs exactly `pop * gens` evaluations.
pub fn nsga2(
    ev: &Evaluator,
    seed: &Genome,
    pop: usize,
    gens: usize,
    opts: &SearchOptions,
    rng_seed: u64,
) -> Result<Campaign, ExploreError> {
    if pop < 4 || pop % 2 != 0 {
        return Err(ExploreError::BadPopulation(pop));
    }
    if gens == 0 {
        return Err(ExploreError::BudgetZero);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut tm = Timings::default();
    let mut evaluated: Vec<EvaluatedMutant> = Vec::with_capacity(pop * gens);
    let eval = |g: Genome, evaluated: &mut Vec<EvaluatedMutant>, tm: &mut Timings| -> Result<usize, ExploreError> {
        let id = evaluated.len();
        let m = timed(&mut tm.smc, || ev.evaluate(id, &g, derive_seed(rng_seed, id as u64)))?;
        evaluated.push(m);
        Ok(id)
    };

    let init: Vec<Genome> = timed(&mut tm.generation, || {
        (0..pop).map(|_| mutate(seed, &ev.schema, &mut rng, opts.k, opts.p_param)).collect::<Result<_, _>>()
    })?;
    let mut population = Vec::with_capacity(pop);
    for g in init {
        population.push(eval(g, &mut evaluated, &mut tm)?);
    }

    for _ in 1..gens {
        let pts: Vec<Vec<f64>> = population.iter().map(|&i| objectives(&evaluated[i])).collect();
        let (rank, crowd, _) = timed(&mut tm.selection, || rank_and_crowd(&pts))?;
        let children: Vec<Genome> = timed(&mut tm.generation, || -> Result<Vec<Genome>, ExploreError> {
            let mut out = Vec::with_capacity(pop);
            while out.len() < pop {
                let mut pick = || {
                    let i = rng.random_range(0..pop);
                    let j = rng.random_range(0..pop);
                    if better(j, i, &rank, &crowd) { j } else { i }
                };
                let (p1, p2) = (pick(), pick());
                let (c1, c2) =
                    uniform_crossover(&evaluated[population[p1]].genome, &evaluated[population[p2]].genome, &mut rng);
                out.push(mutate(&c1, &ev.schema, &mut rng, opts.k, opts.p_param)?);
                out.push(mutate(&c2, &ev.schema, &mut rng, opts.k, opts.p_param)?);
            }
            Ok(out)
        })?;
        let mut combined = population.clone();
        for g in children {
            combined.push(eval(g, &mut evaluated, &mut tm)?);
        }
        population = timed(&mut tm.selection, || -> Result<Vec<usize>, ExploreError> {
            let pts: Vec<Vec<f64>> = combined.iter().map(|&i| objectives(&evaluated[i])).collect();
            let (_, _, fronts) = rank_and_crowd(&pts)?;
            let mut next = Vec::with_capacity(pop);
            for f in fronts {
                if next.len() + f.len() <= pop {
                    next.extend(f.iter().map(|&i| combined[i]));
                } else {
                    let cd = crowding_distance(&pts, &f);
                    let mut order: Vec<usize> = (0..f.len()).collect();
                    order.sort_by(|&a, &b| cd[b].total_cmp(&cd[a]).then(a.cmp(&b)));
                    next.extend(order.into_iter().take(pop - next.len()).map(|w| combined[f[w]]));
                    break;
                }
            }
            Ok(next)
        })?;
    }
    Ok(Campaign { strategy: "nsga2".into(), evaluated, archive: None, timings: tm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> GenomeSchema {
        GenomeSchema {
            params: vec![("alpha".into(), 0.0, 1.0), ("beta".into(), 0.0, 1.0), ("lambda".into(), 1.0 / 15.0, 1.0)],
            edges: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn parameter_scaling_examples() {
        assert!((scale_param(0.5, 1.2, 0.0, 1.0) - 0.6).abs() < 1e-12);
        assert_eq!(scale_param(1.0, 1.5, 1.0 / 15.0, 1.0), 1.0);
        let g = Genome { params: vec![0.5, 0.5, 0.2], mask: vec![true; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(mutate_parameter(&g, &schema(), &mut rng, 1.0), Err(ExploreError::BadFactor(1.0)));
        for _ in 0..200 {
            let m = mutate_parameter(&g, &schema(), &mut rng, 1.5).unwrap();
            let changed = m.params.iter().zip(&g.params).filter(|(a, b)| a != b).count();
            assert!(changed <= 1);
        }
    }

    #[test]
    fn structural_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Genome { params: vec![], mask: vec![true; 3] };
        let m = mutate_structure(&g, &mut rng).unwrap();
        assert_eq!(m.mask.iter().filter(|b| !**b).count(), 1);
        let none = Genome { params: vec![], mask: vec![false; 3] };
        assert_eq!(mutate_structure(&none, &mut rng), Err(ExploreError::NothingToRemove));
    }

    #[test]
    fn sort_examples() {
        let p = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(nondominated_sort(&p).unwrap(), vec![vec![0, 1], vec![2]]);
        assert_eq!(nondominated_sort(&[vec![1.0]]).unwrap(), vec![vec![0]]);
        assert_eq!(nondominated_sort(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), vec![vec![0, 1]]);
        assert_eq!(nondominated_sort(&[vec![1.0, 1.0], vec![1.0]]), Err(ExploreError::RaggedInput));
    }

    #[test]
    fn crowding_boundaries() {
        let p = vec![vec![0.0, 3.0], vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.0]];
        let d = crowding_distance(&p, &[0, 1, 2, 3]);
        assert!(d[0].is_infinite() && d[3].is_infinite());
        assert!((d[1] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn archive_admission() {
        let mk = |v: Vec<f64>| EvaluatedMutant {
            id: 0,
            genome: Genome { params: vec![], mask: vec![] },
            estimates: vec![],
            scores: vec![0.0; v.len()],
            violation: v,
            is_failure: false,
        };
        let mut a = Archive::new(2);
        assert!(a.offer(&mk(vec![0.1, 0.1])));
        assert!(!a.offer(&mk(vec![0.1, 0.05])));
        assert!(a.offer(&mk(vec![0.0, 0.2])));
        assert_eq!(a.max_violation, vec![0.1, 0.2]);
    }

    #[test]
    fn random_genomes_in_bounds() {
        let s = schema();
        let seed = Genome { params: vec![0.5, 0.5, 0.2], mask: vec![true; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let g = random_genome(&seed, &s, &mut rng);
            for (x, (_, lo, hi)) in g.params.iter().zip(&s.params) {
                assert!(x >= lo && x <= hi);
            }
        }
    }
}
