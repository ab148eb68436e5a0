mod common;

use common::oracles::oracle_fronts;
use pdp_twin::explorer::*;
use pdp_twin::models;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn evaluator() -> Evaluator {
    let mut ev = Evaluator::new(models::physician(), vec![models::patient()], models::requirements());
    ev.epsilon = 0.3;
    ev.delta = 0.3;
    ev
}

fn strip(c: &Campaign) -> Vec<EvaluatedMutant> {
    c.evaluated.clone()
}

#[test]
fn fuzz_spends_exactly_the_budget() {
    let ev = evaluator();
    let c = fuzz(&ev, &ev.seed_genome(), 12, &SearchOptions::default(), 5).unwrap();
    assert_eq!(c.evaluated.len(), 12);
    assert!(c.evaluated.iter().enumerate().all(|(i, m)| m.id == i));
    assert_eq!(c.evaluated[0].genome, ev.seed_genome());
    assert!(matches!(fuzz(&ev, &ev.seed_genome(), 0, &SearchOptions::default(), 5), Err(ExploreError::BudgetZero)));
}

#[test]
fn archive_holds_exactly_the_improvers() {
    let ev = evaluator();
    let c = fuzz(&ev, &ev.seed_genome(), 25, &SearchOptions::default(), 6).unwrap();
    let archive = c.archive.clone().unwrap();
    let mut best = vec![f64::NEG_INFINITY; ev.requirements.len()];
    let mut want = Vec::new();
    for m in &c.evaluated {
        if m.violation.iter().zip(&best).any(|(v, b)| v > b) {
            want.push(m.id);
            for (b, v) in best.iter_mut().zip(&m.violation) {
                *b = b.max(*v);
            }
        }
    }
    assert_eq!(archive.members, want);
    assert_eq!(archive.max_violation, best);
    assert_eq!(archive.members[0], 0);
}

#[test]
fn campaigns_are_reproducible() {
    let ev = evaluator();
    let g = ev.seed_genome();
    let opts = SearchOptions::default();
    assert_eq!(strip(&fuzz(&ev, &g, 8, &opts, 3).unwrap()), strip(&fuzz(&ev, &g, 8, &opts, 3).unwrap()));
    assert_eq!(strip(&random_search(&ev, &g, 8, 3).unwrap()), strip(&random_search(&ev, &g, 8, 3).unwrap()));
    assert_eq!(strip(&nsga2(&ev, &g, 4, 2, &opts, 3).unwrap()), strip(&nsga2(&ev, &g, 4, 2, &opts, 3).unwrap()));
}

#[test]
fn nsga2_evaluates_population_times_generations() {
    let ev = evaluator();
    let c = nsga2(&ev, &ev.seed_genome(), 10, 50, &SearchOptions::default(), 1).unwrap();
    assert_eq!(c.evaluated.len(), 500);
    assert!(matches!(nsga2(&ev, &ev.seed_genome(), 5, 2, &SearchOptions::default(), 1), Err(ExploreError::BadPopulation(5))));
}

#[test]
fn mutant_tables_read_back() {
    let ev = evaluator();
    let c = random_search(&ev, &ev.seed_genome(), 6, 8).unwrap();
    let csv = c.mutants_csv(&ev.schema, &ev.requirements);
    let back = parse_mutants_csv(&csv, &ev.schema).unwrap();
    assert_eq!(back.len(), 6);
    for (a, b) in c.evaluated.iter().zip(&back) {
        assert_eq!((a.id, &a.genome, &a.scores, a.is_failure), (b.id, &b.genome, &b.scores, b.is_failure));
    }
    assert!(matches!(parse_mutants_csv("id,is_failure\n0,false\n", &ev.schema), Err(ExploreError::Csv(_))));
    let broken = csv.replacen("\n0,", "\n0,x", 1);
    assert!(parse_mutants_csv(&broken, &ev.schema).is_err());
}

#[test]
fn failing_mutants_have_positive_scores() {
    let ev = evaluator();
    let c = random_search(&ev, &ev.seed_genome(), 15, 9).unwrap();
    for m in &c.evaluated {
        assert_eq!(m.is_failure, (0..ev.requirements.len()).any(|r| m.fails(r)));
        for (r, req) in ev.requirements.iter().enumerate() {
            assert_eq!(m.scores[r], req.score(m.p_hat(r)));
        }
    }
    let csv = c.mutants_csv(&ev.schema, &ev.requirements);
    assert_eq!(csv.lines().count(), 16);
    assert_eq!(failure_models(&c, &ev).len(), c.failures().len());
}

#[test]
fn crowding_marks_the_extremes() {
    let pts = vec![vec![0.0, 3.0], vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.0]];
    let d = crowding_distance(&pts, &[0, 1, 2, 3]);
    assert!(d[0].is_infinite() && d[3].is_infinite());
    assert!((d[1] - 4.0 / 3.0).abs() < 1e-12 && (d[2] - 4.0 / 3.0).abs() < 1e-12);
    assert!(matches!(nondominated_sort(&[vec![1.0], vec![1.0, 2.0]]), Err(ExploreError::RaggedInput)));
}

fn genome_strategy() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 1usize..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sorting_matches_the_quadratic_oracle(points in proptest::collection::vec(proptest::collection::vec(0u8..5, 3), 0..20)) {
        let pts: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|&x| f64::from(x)).collect()).collect();
        let mut got = nondominated_sort(&pts).unwrap();
        for f in &mut got {
            f.sort_unstable();
        }
        prop_assert_eq!(got, oracle_fronts(&pts));
    }

    #[test]
    fn mutants_stay_inside_the_schema((seed, steps) in genome_strategy(), k in 1.01f64..4.0, p in 0.0f64..=1.0) {
        let ev = evaluator();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ev.seed_genome();
        for _ in 0..steps {
            let before = g.mask.iter().filter(|&&b| b).count();
            g = mutate(&g, &ev.schema, &mut rng, k, p).unwrap();
            let after = g.mask.iter().filter(|&&b| b).count();
            prop_assert!(after == before || after + 1 == before);
            prop_assert!(ev.schema.check(&g).is_ok());
            for (x, (_, lo, hi)) in g.params.iter().zip(&ev.schema.params) {
                prop_assert!(lo <= x && x <= hi);
            }
        }
        let r = random_genome(&ev.seed_genome(), &ev.schema, &mut rng);
        prop_assert!(ev.schema.check(&r).is_ok());
        prop_assert!(ev.schema.normalized(&r).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn crossover_preserves_genes(seed in any::<u64>()) {
        let ev = evaluator();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_genome(&ev.seed_genome(), &ev.schema, &mut rng);
        let b = random_genome(&ev.seed_genome(), &ev.schema, &mut rng);
        let (x, y) = uniform_crossover(&a, &b, &mut rng);
        for i in 0..a.params.len() {
            let mut got = [x.params[i], y.params[i]];
            let mut want = [a.params[i], b.params[i]];
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            prop_assert_eq!(got, want);
        }
        for i in 0..a.mask.len() {
            prop_assert_eq!(x.mask[i] as u8 + y.mask[i] as u8, a.mask[i] as u8 + b.mask[i] as u8);
        }
    }
}
