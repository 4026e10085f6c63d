//! PCA reduction, density clustering and silhouette scoring on small point
//! sets (rows of a matrix).

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg;

pub const NOISE: i64 = -1;

/// Most radii tried by the `hdbscan_lite` sweep.
const SWEEP_STEPS: usize = 64;

/// PCA projection with the eigenvalues of the centered scatter matrix
/// `XᵀX`, descending.
#[derive(Clone, Debug)]
pub struct Pca {
    pub points: Mat<f64>,
    pub components: Mat<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Squared reconstruction error of the kept components.
    pub fn discarded_variance(&self) -> f64 {
        self.eigenvalues.iter().skip(self.components.ncols()).map(|l| l.max(0.0)).sum()
    }
}

/// Projects centered rows onto the top `dims` principal directions. Each
/// direction is signed so its largest-magnitude loading is positive. When
/// fewer than `dims` directions carry variance, the rest are zero columns.
pub fn pca(m: &Mat<f64>, dims: usize) -> Result<Pca> {
    if m.nrows() <= dims {
        return Err(Error::TooFewRows {
            rows: m.nrows(),
            needed: dims,
        });
    }
    let mut x = m.clone();
    linalg::center_columns(&mut x);
    let scatter = linalg::cross_gram(x.as_ref(), x.as_ref());
    let (values, vectors) = linalg::symmetric_eigen(scatter.as_ref())?;
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let usable = values.iter().filter(|&&l| l > top * 1e-12 && l > 0.0).count();
    if usable < dims {
        log::warn!("only {usable} principal directions carry variance; padding to {dims} with zero columns");
    }
    let d = m.ncols();
    let mut components = Mat::<f64>::zeros(d, dims);
    for c in 0..dims.min(usable).min(d) {
        let mut lead = 0;
        for i in 0..d {
            if vectors[(i, c)].abs() > vectors[(lead, c)].abs() + 1e-12 {
                lead = i;
            }
        }
        let sign = if vectors[(lead, c)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[(i, c)] = sign * vectors[(i, c)];
        }
    }
    let points = linalg::mul(x.as_ref(), components.as_ref());
    Ok(Pca {
        points,
        components,
        eigenvalues: values,
    })
}

pub fn rows_of(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(&points[i], &points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// DBSCAN over a precomputed distance matrix. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Core components are
/// numbered by their lowest core index; a border point joins the cluster of
/// its nearest core neighbor, ties going to the lower index.
pub fn dbscan_with(dist: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = dist.len();
    let core: Vec<bool> = (0..n)
        .map(|i| dist[i].iter().filter(|&&d| d <= eps).count() >= min_pts)
        .collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && labels[q] == NOISE && dist[p][q] <= eps {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for p in 0..n {
        if core[p] {
            continue;
        }
        let nearest = (0..n)
            .filter(|&q| core[q] && dist[p][q] <= eps)
            .min_by(|&a, &b| dist[p][a].total_cmp(&dist[p][b]).then(a.cmp(&b)));
        if let Some(q) = nearest {
            labels[p] = labels[q];
        }
    }
    labels
}

pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    dbscan_with(&distance_matrix(points), eps, min_pts)
}

pub fn cluster_count(labels: &[i64]) -> usize {
    labels.iter().filter(|&&l| l >= 0).max().map_or(0, |&m| m as usize + 1)
}

/// Density clustering without a fixed radius: mutual-reachability
/// distances, their minimum spanning tree, then a DBSCAN sweep over the
/// tree's edge weights. The cluster count that stays stable over the widest
/// range of radii wins (counts of two or more preferred), and the largest
/// radius giving that count is used.
pub fn hdbscan_lite(points: &[Vec<f64>], min_pts: usize) -> Vec<i64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dist = distance_matrix(points);
    let core_dist: Vec<f64> = dist
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[(min_pts.max(1) - 1).min(n - 1)]
        })
        .collect();
    let reach: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist[i][j].max(core_dist[i]).max(core_dist[j])).collect())
        .collect();

    // Prim's algorithm on the dense mutual-reachability graph.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut weights = Vec::with_capacity(n);
    best[0] = 0.0;
    for step in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .unwrap();
        in_tree[u] = true;
        if step > 0 {
            weights.push(best[u]);
        }
        for v in 0..n {
            if !in_tree[v] && reach[u][v] < best[v] {
                best[v] = reach[u][v];
            }
        }
    }
    let mut radii = weights;
    radii.extend(core_dist.iter().copied());
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    if radii.len() > SWEEP_STEPS {
        let last = radii.len() - 1;
        radii = (0..SWEEP_STEPS).map(|i| radii[i * last / (SWEEP_STEPS - 1)]).collect();
    }

    let runs: Vec<(f64, usize)> = radii
        .iter()
        .map(|&eps| (eps, cluster_count(&dbscan_with(&reach, eps, min_pts))))
        .collect();
    let mut best_run: Option<(bool, f64, usize)> = None; // (multi, span, end)
    let mut i = 0;
    while i < runs.len() {
        let mut j = i;
        while j + 1 < runs.len() && runs[j + 1].1 == runs[i].1 {
            j += 1;
        }
        let span = if j + 1 < runs.len() {
            runs[j + 1].0 - runs[i].0
        } else {
            runs[j].0 - runs[i].0
        };
        let cand = (runs[i].1 >= 2, span, j);
        let better = match best_run {
            None => runs[i].1 >= 1,
            Some(b) => runs[i].1 >= 1 && (cand.0, cand.1) > (b.0, b.1),
        };
        if better {
            best_run = Some(cand);
        }
        i = j + 1;
    }
    match best_run {
        Some((_, _, end)) => dbscan_with(&reach, runs[end].0, min_pts),
        None => vec![NOISE; n],
    }
}

/// Mean silhouette over non-noise points; points alone in their cluster
/// score 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[i64]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let mut ids: Vec<i64> = kept.iter().map(|&i| labels[i]).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::TooFewClusters(ids.len()));
    }
    let mut total = 0.0;
    for &i in &kept {
        let mut sums = vec![0.0; ids.len()];
        let mut counts = vec![0usize; ids.len()];
        for &j in &kept {
            if j == i {
                continue;
            }
            let c = ids.binary_search(&labels[j]).unwrap();
            sums[c] += euclidean(&points[i], &points[j]);
            counts[c] += 1;
        }
        let own = ids.binary_search(&labels[i]).unwrap();
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..ids.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / kept.len() as f64)
}
