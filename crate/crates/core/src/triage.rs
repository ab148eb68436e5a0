//! Realism filtering, UPGMA clustering, silhouette-based cut selection and
//! representative extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{EvaluatedMutant, Genome, GenomeSchema};
use crate::kv::{KvError, KvFile};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriageError {
    #[error("distance matrix must be square, symmetric with zero diagonal and n >= 2")]
    BadMatrix,
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("genome schemas differ")]
    SchemaMismatch,
    #[error("fewer than two failures to cluster")]
    TooFewFailures,
}

/// Square distance matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix<T> {
    pub n: usize,
    pub d: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    /// Euclidean distances between points.
    pub fn euclidean(points: &[Vec<T>]) -> Self {
        Self::from_fn(points.len(), |i, j| euclidean(&points[i], &points[j]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[i * self.n + j]
    }

    pub fn check(&self) -> Result<(), TriageError> {
        if self.n < 2 || self.d.len() != self.n * self.n {
            return Err(TriageError::BadMatrix);
        }
        for i in 0..self.n {
            if self.get(i, i) != T::zero() {
                return Err(TriageError::BadMatrix);
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !(v >= T::zero()) || v != self.get(j, i) {
                    return Err(TriageError::BadMatrix);
                }
            }
        }
        Ok(())
    }
}

pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// One agglomeration: clusters `left` and `right` (ids as in scipy: leaves
/// `0..n`, merge `k` creates id `n + k`) joined at `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    pub left: usize,
    pub right: usize,
    pub height: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram<T> {
    pub n: usize,
    pub merges: Vec<Merge<T>>,
}

/// Average-linkage agglomeration. Ties go to the pair with the smallest
/// `(min id, max id)` among active cluster ids.
pub fn upgma<T: Scalar>(dm: &DistanceMatrix<T>) -> Result<Dendrogram<T>, TriageError> {
    dm.check()?;
    let n = dm.n;
    // active clusters: (id, size); sums of cross distances kept between active ones
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes: Vec<usize> = vec![1; n];
    let mut sum: Vec<Vec<T>> = (0..n).map(|i| (0..n).map(|j| dm.get(i, j)).collect()).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let m = ids.len();
        let mut best: Option<(T, usize, usize)> = None;
        for i in 0..m {
            for j in (i + 1)..m {
                let avg = sum[i][j] / T::from_count(sizes[i] * sizes[j]);
                let better = match best {
                    None => true,
                    Some((b, bi, bj)) => {
                        avg < b || (avg == b && {
                            let key = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                            key < (ids[bi].min(ids[bj]), ids[bi].max(ids[bj]))
                        })
                    }
                };
                if better {
                    best = Some((avg, i, j));
                }
            }
        }
        let (h, i, j) = best.expect("at least two active clusters");
        let (a, b) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
        let size = sizes[i] + sizes[j];
        merges.push(Merge { left: a, right: b, height: h, size });
        // fold j into i, then drop j
        for x in 0..m {
            if x != i && x != j {
                let v = sum[i][x] + sum[j][x];
                sum[i][x] = v;
                sum[x][i] = v;
            }
        }
        ids[i] = n + k;
        sizes[i] = size;
        ids.remove(j);
        sizes.remove(j);
        sum.remove(j);
        for row in sum.iter_mut() {
            row.remove(j);
        }
    }
    Ok(Dendrogram { n, merges })
}

impl<T: Scalar> Dendrogram<T> {
    /// Flat assignment with `k` clusters, labelled `0..k` in order of first member.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let n = self.n;
        let k = k.clamp(1, n);
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            let id = n + s;
            let (l, r) = (find(&mut parent, m.left), find(&mut parent, m.right));
            parent[l] = id;
            parent[r] = id;
        }
        let mut label = std::collections::HashMap::new();
        (0..n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = label.len();
                *label.entry(root).or_insert(next)
            })
            .collect()
    }

    /// Text merge list: `left right height size`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("left right height size\n");
        for m in &self.merges {
            s.push_str(&format!("{} {} {} {}\n", m.left, m.right, m.height, m.size));
        }
        s
    }
}

/// Mean silhouette; singletons contribute 0.
pub fn silhouette<T: Scalar>(assign: &[usize], dm: &DistanceMatrix<T>) -> Result<T, TriageError> {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(TriageError::SingleCluster);
    }
    let n = assign.len();
    let mut size = vec![0usize; k];
    for &c in assign {
        size[c] += 1;
    }
    let mut total = T::zero();
    for i in 0..n {
        let ci = assign[i];
        if size[ci] <= 1 {
            continue;
        }
        let mut sums = vec![T::zero(); k];
        for j in 0..n {
            if j != i {
                sums[assign[j]] = sums[assign[j]] + dm.get(i, j);
            }
        }
        let a = sums[ci] / T::from_count(size[ci] - 1);
        let b = (0..k)
            .filter(|&c| c != ci && size[c] > 0)
            .map(|c| sums[c] / T::from_count(size[c]))
            .fold(T::infinity(), T::min);
        let m = a.max(b);
        if m > T::zero() {
            total = total + (b - a) / m;
        }
    }
    Ok(total / T::from_count(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering<T> {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub silhouette: T,
    /// Set when fewer than two items were available.
    pub degenerate: bool,
}

/// Cut the UPGMA tree at every `k` in `2..=min(k_max, n)` and keep the best
/// silhouette (smaller `k` on ties).
pub fn select_clustering<T: Scalar>(dm: &DistanceMatrix<T>, k_max: usize) -> Result<(Clustering<T>, Option<Dendrogram<T>>), TriageError> {
    if dm.n < 2 {
        return Ok((
            Clustering { assignment: vec![0; dm.n], k: dm.n.min(1), silhouette: T::zero(), degenerate: true },
            None,
        ));
    }
    let tree = upgma(dm)?;
    let mut best: Option<Clustering<T>> = None;
    for k in 2..=k_max.min(dm.n).max(2) {
        let assignment = tree.cut(k);
        let s = if k == dm.n { T::zero() } else { silhouette(&assignment, dm)? };
        if best.as_ref().is_none_or(|b| s > b.silhouette) {
            best = Some(Clustering { assignment, k, silhouette: s, degenerate: false });
        }
    }
    Ok((best.expect("at least one cut"), Some(tree)))
}

/// Per cluster, the member nearest to the cluster's mean vector (lowest index on ties).
pub fn representatives<T: Scalar>(assign: &[usize], points: &[Vec<T>]) -> Vec<usize> {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    let dim = points.first().map_or(0, Vec::len);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == c).collect();
            let mut centre = vec![T::zero(); dim];
            for &i in &members {
                for (d, x) in centre.iter_mut().zip(&points[i]) {
                    *d = *d + *x;
                }
            }
            let m = T::from_count(members.len().max(1));
            for d in centre.iter_mut() {
                *d = *d / m;
            }
            let mut best = members[0];
            let mut best_d = euclidean(&points[best], &centre);
            for &i in &members[1..] {
                let d = euclidean(&points[i], &centre);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Structural and parametric exclusion criteria for failing genomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealismConstraints {
    pub mandatory_edges: Vec<String>,
    pub param_bounds: Vec<(String, f64, f64)>,
}

impl RealismConstraints {
    /// Keys: repeated `mandatory = <edge id>` and `param.<name> = lo,hi`.
    pub fn from_kv(kv: &KvFile) -> Result<Self, KvError> {
        let mandatory_edges = kv.get_all("mandatory").into_iter().map(str::to_string).collect();
        let mut param_bounds = Vec::new();
        for (name, _) in kv.with_prefix("param.") {
            let (lo, hi) = kv.get_pair(&format!("param.{name}"))?.expect("key present");
            param_bounds.push((name.to_string(), lo, hi));
        }
        Ok(Self { mandatory_edges, param_bounds })
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_kv(&KvFile::parse(text)?)
    }

    /// Sub-intervals must lie within the genome bounds and edges must exist.
    pub fn validate(&self, schema: &GenomeSchema) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.mandatory_edges {
            if schema.edge_index(e).is_none() {
                out.push(format!("mandatory edge `{e}` is not a removable edge of the model"));
            }
        }
        for (name, lo, hi) in &self.param_bounds {
            match schema.param_index(name) {
                None => out.push(format!("unknown parameter `{name}`")),
                Some(i) => {
                    let (_, glo, ghi) = schema.params[i];
                    if lo > hi || *lo < glo - 1e-12 || *hi > ghi + 1e-12 {
                        out.push(format!("`{name}` interval [{lo}, {hi}] outside [{glo}, {ghi}]"));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismCheck {
    pub realistic: bool,
    pub reasons: Vec<String>,
}

pub fn check_realism(genome: &Genome, schema: &GenomeSchema, c: &RealismConstraints) -> RealismCheck {
    let mut reasons = Vec::new();
    for e in &c.mandatory_edges {
        if let Some(i) = schema.edge_index(e) {
            if !genome.mask.get(i).copied().unwrap_or(false) {
                reasons.push(format!("mandatory edge absent: {e}"));
            }
        }
    }
    for (name, lo, hi) in &c.param_bounds {
        if let Some(i) = schema.param_index(name) {
            let v = genome.params[i];
            if v < *lo || v > *hi {
                reasons.push(format!("{name} = {v} outside [{lo}, {hi}]"));
            }
        }
    }
    RealismCheck { realistic: reasons.is_empty(), reasons }
}

/// Euclidean distance in the normalized genome hypercube.
pub fn genome_distance(schema: &GenomeSchema, a: &Genome, b: &Genome) -> Result<f64, TriageError> {
    if schema.check(a).is_err() || schema.check(b).is_err() {
        return Err(TriageError::SchemaMismatch);
    }
    Ok(euclidean(&schema.normalized(a), &schema.normalized(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    /// Ids of realistic failures (Φ′), in input order.
    pub realistic: Vec<usize>,
    pub rejected: Vec<(usize, Vec<String>)>,
    pub clustering: Clustering<f64>,
    pub dendrogram: Option<Dendrogram<f64>>,
    /// Ids of cluster representatives, by cluster.
    pub representatives: Vec<usize>,
}

impl TriageReport {
    pub fn clusters_csv(&self) -> String {
        let mut s = String::from("genome_id,cluster_id,is_representative\n");
        for (i, id) in self.realistic.iter().enumerate() {
            let c = self.clustering.assignment[i];
            let rep = self.representatives.get(c) == Some(id);
            s.push_str(&format!("{id},{c},{rep}\n"));
        }
        s
    }

    pub fn dendrogram_txt(&self) -> String {
        self.dendrogram.as_ref().map(Dendrogram::to_text).unwrap_or_default()
    }
}

/// Filter failures for realism, cluster the survivors and pick representatives.
pub fn triage(
    failures: &[&EvaluatedMutant],
    schema: &GenomeSchema,
    constraints: &RealismConstraints,
    k_max: usize,
) -> Result<TriageReport, TriageError> {
    let mut realistic = Vec::new();
    let mut rejected = Vec::new();
    let mut points = Vec::new();
    for m in failures {
        let chk = check_realism(&m.genome, schema, constraints);
        if chk.realistic {
            realistic.push(m.id);
            points.push(schema.normalized(&m.genome));
        } else {
            rejected.push((m.id, chk.reasons));
        }
    }
    if points.len() < 2 {
        log::warn!("{} realistic failure(s); reporting a single trivial cluster", points.len());
    }
    let dm = DistanceMatrix::euclidean(&points);
    let (clustering, dendrogram) = select_clustering(&dm, k_max)?;
    let representatives = representatives(&clustering.assignment, &points).into_iter().map(|i| realistic[i]).collect();
    Ok(TriageReport { realistic, rejected, clustering, dendrogram, representatives })
}
