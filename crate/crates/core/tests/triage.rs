mod common;

use common::oracles::*;
use pdp_twin::explorer::{random_genome, EvaluatedMutant, Genome, GenomeSchema};
use pdp_twin::kv::KvFile;
use pdp_twin::models;
use pdp_twin::triage::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mutant(id: usize, genome: Genome) -> EvaluatedMutant {
    EvaluatedMutant { id, genome, estimates: vec![], violation: vec![1.0], scores: vec![1.0], is_failure: true }
}

fn schema() -> GenomeSchema {
    GenomeSchema::from_sha(&models::physician())
}

#[test]
fn bundled_realism_matches_the_reference_schema() {
    let c = RealismConstraints::from_kv(&KvFile::parse(models::REALISM).unwrap()).unwrap();
    assert_eq!(c.mandatory_edges.len(), 2);
    assert!(c.validate(&schema()).is_empty(), "{:?}", c.validate(&schema()));
}

#[test]
fn removing_a_mandatory_edge_is_unrealistic() {
    let s = schema();
    let c = RealismConstraints::from_kv(&KvFile::parse(models::REALISM).unwrap()).unwrap();
    let mut g = Genome::from_sha(&models::physician());
    assert!(check_realism(&g, &s, &c).realistic);
    g.mask[s.edge_index(&c.mandatory_edges[1]).unwrap()] = false;
    let chk = check_realism(&g, &s, &c);
    assert!(!chk.realistic);
    assert_eq!(chk.reasons.len(), 1);
    g.params[s.param_index("lambda").unwrap()] = 0.01;
    assert_eq!(check_realism(&g, &s, &c).reasons.len(), 2);
}

#[test]
fn fewer_than_two_survivors_give_a_trivial_cluster() {
    let s = schema();
    let g = Genome::from_sha(&models::physician());
    let ms = [mutant(7, g)];
    let refs: Vec<&EvaluatedMutant> = ms.iter().collect();
    let r = triage(&refs, &s, &RealismConstraints::default(), 20).unwrap();
    assert!(r.clustering.degenerate);
    assert_eq!(r.representatives, vec![7]);
    assert_eq!(r.clusters_csv(), "genome_id,cluster_id,is_representative\n7,0,true\n");
    let none = triage(&[], &s, &RealismConstraints::default(), 20).unwrap();
    assert!(none.realistic.is_empty() && none.representatives.is_empty());
}

#[test]
fn separated_groups_are_recovered() {
    let mut pts = Vec::new();
    for (cx, cy) in [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)] {
        for d in [0.0, 0.2, 0.4] {
            pts.push((cx + d, cy - d));
        }
    }
    let (c, tree) = select_clustering(&matrix(&pts), 20).unwrap();
    assert_eq!(c.k, 3);
    assert_eq!(c.assignment, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    assert_eq!(tree.unwrap().merges.len(), 8);
}

fn points_strategy(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upgma_matches_brute_force(pts in points_strategy(8)) {
        let dm = matrix(&pts);
        let tree = upgma(&dm).unwrap();
        let bad = upgma_mismatch(&tree, &dm);
        prop_assert!(bad.is_none(), "{:?}", bad);
        prop_assert!(tree.merges.windows(2).all(|w| w[0].height <= w[1].height + 1e-9));
    }

    #[test]
    fn cuts_have_k_labels_in_first_member_order(pts in points_strategy(12), k in 1usize..12) {
        let tree = upgma(&matrix(&pts)).unwrap();
        let a = tree.cut(k);
        let k = k.min(pts.len());
        prop_assert_eq!(a.iter().max().unwrap() + 1, k);
        let mut seen = 0;
        for &c in &a {
            prop_assert!(c <= seen);
            if c == seen {
                seen += 1;
            }
        }
    }

    #[test]
    fn silhouette_follows_its_definition(pts in points_strategy(12), k in 2usize..6) {
        let dm = matrix(&pts);
        prop_assume!(k < pts.len());
        let a = upgma(&dm).unwrap().cut(k);
        let s = silhouette(&a, &dm).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - silhouette_by_definition(&a, &dm)).abs() < 1e-9);
        let dm32 = DistanceMatrix::from_fn(dm.n, |i, j| dm.get(i, j) as f32);
        prop_assert!((f64::from(silhouette(&a, &dm32).unwrap()) - s).abs() < 1e-4);
    }

    #[test]
    fn triage_filters_soundly_and_picks_members(seed in any::<u64>(), n in 0usize..30) {
        let s = schema();
        let c = RealismConstraints::from_kv(&KvFile::parse(models::REALISM).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seed_g = Genome::from_sha(&models::physician());
        let ms: Vec<EvaluatedMutant> = (0..n).map(|i| mutant(i, random_genome(&seed_g, &s, &mut rng))).collect();
        let refs: Vec<&EvaluatedMutant> = ms.iter().collect();
        let r = triage(&refs, &s, &c, 20).unwrap();
        prop_assert_eq!(r.realistic.len() + r.rejected.len(), n);
        for &id in &r.realistic {
            prop_assert!(check_realism(&ms[id].genome, &s, &c).realistic);
        }
        for (id, reasons) in &r.rejected {
            prop_assert!(!reasons.is_empty());
            prop_assert!(!check_realism(&ms[*id].genome, &s, &c).realistic);
        }
        prop_assert_eq!(r.representatives.len(), r.clustering.k);
        for (cluster, rep) in r.representatives.iter().enumerate() {
            let pos = r.realistic.iter().position(|x| x == rep).unwrap();
            prop_assert_eq!(r.clustering.assignment[pos], cluster);
        }
        if r.realistic.len() >= 2 {
            prop_assert!(r.clustering.k >= 2 && r.clustering.k <= 20.min(r.realistic.len()));
        }
    }
}
