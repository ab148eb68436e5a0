//! Brute-force reference implementations.

use std::collections::BTreeSet;

use pdp_twin::explorer::dominates;
use pdp_twin::stats::for_each_subset;
use pdp_twin::triage::{Dendrogram, DistanceMatrix};

pub fn matrix(points: &[(f64, f64)]) -> DistanceMatrix<f64> {
    DistanceMatrix::from_fn(points.len(), |i, j| {
        let (a, b) = (points[i], points[j]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    })
}

/// Merge sequence by recomputing every average linkage from scratch.
pub fn brute_upgma(dm: &DistanceMatrix<f64>) -> Vec<(BTreeSet<usize>, f64)> {
    let n = dm.n;
    let mut active: Vec<(usize, BTreeSet<usize>)> = (0..n).map(|i| (i, BTreeSet::from([i]))).collect();
    let mut out = Vec::new();
    let mut next = n;
    while active.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let (a, b) = (&active[x].1, &active[y].1);
                let d = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| dm.get(i, j)).sum::<f64>()
                    / (a.len() * b.len()) as f64;
                let ids = (active[x].0.min(active[y].0), active[x].0.max(active[y].0));
                let better = match best {
                    None => true,
                    Some((bd, bids, ..)) => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && ids < bids),
                };
                if better {
                    best = Some((d, ids, x, y));
                }
            }
        }
        let (d, _, x, y) = best.unwrap();
        let merged: BTreeSet<usize> = active[x].1.union(&active[y].1).copied().collect();
        out.push((merged.clone(), d));
        active.remove(y);
        active.remove(x);
        active.push((next, merged));
        next += 1;
    }
    out
}

pub fn leaves(t: &Dendrogram<f64>, id: usize) -> BTreeSet<usize> {
    if id < t.n {
        return BTreeSet::from([id]);
    }
    let m = &t.merges[id - t.n];
    leaves(t, m.left).union(&leaves(t, m.right)).copied().collect()
}

/// First mismatch between a dendrogram and the brute-force merge sequence.
pub fn upgma_mismatch(tree: &Dendrogram<f64>, dm: &DistanceMatrix<f64>) -> Option<String> {
    let brute = brute_upgma(dm);
    if tree.merges.len() != brute.len() {
        return Some(format!("{} merges vs {}", tree.merges.len(), brute.len()));
    }
    for (s, (m, (set, h))) in tree.merges.iter().zip(&brute).enumerate() {
        if &leaves(tree, dm.n + s) != set || m.size != set.len() || (m.height - h).abs() >= 1e-9 {
            return Some(format!("merge {s}: {:?} at {} vs {set:?} at {h}", leaves(tree, dm.n + s), m.height));
        }
    }
    None
}

pub fn silhouette_by_definition(assign: &[usize], dm: &DistanceMatrix<f64>) -> f64 {
    let n = assign.len();
    let k = assign.iter().max().unwrap() + 1;
    let mean_to = |i: usize, c: usize| {
        let others: Vec<usize> = (0..n).filter(|&j| j != i && assign[j] == c).collect();
        (!others.is_empty()).then(|| others.iter().map(|&j| dm.get(i, j)).sum::<f64>() / others.len() as f64)
    };
    let mut total = 0.0;
    for i in 0..n {
        let Some(a) = mean_to(i, assign[i]) else { continue };
        let b = (0..k).filter(|&c| c != assign[i]).filter_map(|c| mean_to(i, c)).fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// `#{a > b} + ½·#{a = b}` over all pairs.
pub fn pair_wins(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided Mann-Whitney p by relabelling the pooled sample in every possible way.
pub fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let u_of = |sel: &[usize]| {
        let (x, y): (Vec<f64>, Vec<f64>) = {
            let x = sel.iter().map(|&i| pooled[i]).collect();
            let y = (0..pooled.len()).filter(|j| !sel.contains(j)).map(|j| pooled[j]).collect();
            (x, y)
        };
        pair_wins(&x, &y)
    };
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let obs = (pair_wins(a, b) - mu).abs();
    let (mut hit, mut total) = (0usize, 0usize);
    for_each_subset(pooled.len(), a.len(), &mut |sel: &[usize]| {
        total += 1;
        if (u_of(sel) - mu).abs() >= obs - 1e-9 {
            hit += 1;
        }
    });
    hit as f64 / total as f64
}

pub fn oracle_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left.iter().copied().filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i]))).collect();
        left.retain(|i| !front.contains(i));
        out.push(front);
    }
    out
}
