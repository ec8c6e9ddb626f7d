//! k-means over activation maps and clustering quality scores.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;
use crate::multilayer::{multilayer_factorize, ChemInitConfig, LayerInit, LayerStack};
use crate::nmf::AlphaNmfConfig;
use crate::rng;
use crate::spectral::Spectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InternalScores {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub variance: f64,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput("no points to cluster".into()));
    };
    let dim = first.len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points must share a non-zero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point coordinates must be finite".into()));
    }
    Ok(dim)
}

/// Nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn farthest_point_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut stream = rng::stream(seed);
    let start = stream.gen_range(0..points.len());
    let mut centroids = vec![points[start].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[start])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        let c = points[far].clone();
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(p, centroids);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

/// Centroids as cluster means; an empty cluster keeps `None`.
fn cluster_means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

/// Lloyd's algorithm from a seeded farthest-point start.
///
/// An empty cluster is reseeded at the point farthest from its own
/// centroid. Stops at an assignment fixpoint or after `max_iter` rounds.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment> {
    check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} must lie in 1..={}",
            points.len()
        )));
    }
    let mut centroids = farthest_point_init(points, k, seed);
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut inertia_trace = vec![inertia];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let means = cluster_means(points, &labels, k);
        let mut taken = vec![false; points.len()];
        for (j, m) in means.into_iter().enumerate() {
            match m {
                Some(c) => centroids[j] = c,
                None => {
                    let mut far: Option<(usize, f64)> = None;
                    for (i, p) in points.iter().enumerate() {
                        let d = sq_dist(p, &centroids[labels[i]]);
                        if !taken[i] && far.is_none_or(|(_, fd)| d > fd) {
                            far = Some((i, d));
                        }
                    }
                    if let Some((i, _)) = far {
                        taken[i] = true;
                        centroids[j] = points[i].clone();
                    }
                }
            }
        }
        let (next, next_inertia) = assign(points, &centroids);
        inertia = next_inertia;
        inertia_trace.push(inertia);
        if next == labels {
            break;
        }
        labels = next;
    }

    Ok(ClusterAssignment {
        labels,
        k,
        centroids,
        inertia,
        inertia_trace,
        iterations,
    })
}

/// Cluster sizes, or an error when fewer than 2 clusters or a gap exists.
fn cluster_sizes(labels: &[usize]) -> Result<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if k < 2 {
        return Err(Error::InvalidInput("internal scores need at least 2 clusters".into()));
    }
    if let Some(j) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("cluster {j} is empty")));
    }
    Ok(sizes)
}

/// Silhouette, Davies-Bouldin, Calinski-Harabasz and mean within-cluster
/// variance under Euclidean distance. Labels must be `0..k` with every
/// cluster non-empty. A singleton's silhouette is 0.
pub fn internal_scores(points: &[Vec<f64>], labels: &[usize]) -> Result<InternalScores> {
    let dim = check_points(points)?;
    if labels.len() != points.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let sizes = cluster_sizes(labels)?;
    let k = sizes.len();
    let n = points.len();
    let centroids: Vec<Vec<f64>> = cluster_means(points, labels, k)
        .into_iter()
        .map(|c| c.expect("sizes checked"))
        .collect();

    let mut silhouette = 0.0;
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = labels[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            silhouette += (b - a) / m;
        }
    }
    silhouette /= n as f64;

    let mut scatter = vec![0.0; k];
    let mut within_sq = vec![0.0; k];
    for (p, &l) in points.iter().zip(labels) {
        scatter[l] += dist(p, &centroids[l]);
        within_sq[l] += sq_dist(p, &centroids[l]);
    }
    for c in 0..k {
        scatter[c] /= sizes[c] as f64;
    }
    let mut davies_bouldin = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| {
                let num = scatter[i] + scatter[j];
                let sep = dist(&centroids[i], &centroids[j]);
                if num == 0.0 {
                    0.0
                } else if sep == 0.0 {
                    f64::INFINITY
                } else {
                    num / sep
                }
            })
            .fold(0.0, f64::max);
        davies_bouldin += worst;
    }
    davies_bouldin /= k as f64;

    let mut grand = vec![0.0; dim];
    for p in points {
        grand.iter_mut().zip(p).for_each(|(g, v)| *g += v / n as f64);
    }
    let between: f64 = (0..k)
        .map(|c| sizes[c] as f64 * sq_dist(&centroids[c], &grand))
        .sum();
    let within: f64 = within_sq.iter().sum();
    // Zero within-cluster dispersion scores 1, as in common toolkits.
    let calinski_harabasz = if within == 0.0 {
        1.0
    } else {
        between * (n - k) as f64 / (within * (k - 1) as f64)
    };
    let variance = (0..k).map(|c| within_sq[c] / sizes[c] as f64).sum::<f64>() / k as f64;

    Ok(InternalScores {
        silhouette,
        davies_bouldin,
        calinski_harabasz,
        variance,
    })
}

/// Minimum-cost perfect assignment on a square cost matrix (rows to
/// columns). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials u (rows) and v (columns), 1-based with a virtual column 0.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Relabels arbitrary labels to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<usize>>, usize, usize)> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("label vectors are empty".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted labels against {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok((table, kp, kt))
}

/// Best matched fraction over one-to-one cluster-to-class mappings.
pub fn accuracy_hungarian(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let size = kp.max(kt);
    let max = pred.len() as i64;
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let c = if i < kp && j < kt { table[i][j] as i64 } else { 0 };
                    max - c
                })
                .collect()
        })
        .collect();
    let matched: usize = hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < kp && j < kt)
        .map(|(i, j)| table[i][j])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Mutual information over the arithmetic mean of the two entropies.
///
/// Two single-cluster labelings score 1; a single-cluster labeling against
/// anything else scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    if kp == 1 && kt == 1 {
        return Ok(1.0);
    }
    let n = pred.len() as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..kt)
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let entropy = |m: &[f64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * (c * n / (row[i] * col[j])).ln();
            }
        }
    }
    let denom = 0.5 * (entropy(&row) + entropy(&col));
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub assignment: ClusterAssignment,
    pub scores: ClusterScores,
    pub stack: LayerStack,
    /// `A_tot X`, one column per spectrogram.
    pub reconstructions: NonNegMatrix,
}

pub const KMEANS_MAX_ITER: usize = 300;

/// Flattens each spectrogram (bin-major) into one column of a data matrix.
pub fn spectrogram_matrix(spectrograms: &[Spectrogram]) -> Result<NonNegMatrix> {
    let Some(first) = spectrograms.first() else {
        return Err(Error::InvalidInput("no spectrograms given".into()));
    };
    let shape = first.magnitudes.shape();
    if let Some(bad) = spectrograms.iter().position(|s| s.magnitudes.shape() != shape) {
        return Err(Error::Dimension(format!(
            "spectrogram {bad} has shape {:?}, expected {shape:?}",
            spectrograms[bad].magnitudes.shape()
        )));
    }
    let rows = shape.0 * shape.1;
    let cols = spectrograms.len();
    NonNegMatrix::from_fn(rows, cols, |r, c| spectrograms[c].magnitudes.data()[r])
}

/// Multilayer Chem factorization of the flattened spectrograms followed by
/// k-means on the columns of the final activation map.
pub fn chem_cluster_pipeline(
    spectrograms: &[Spectrogram],
    ranks: &[usize],
    nmf_config: &AlphaNmfConfig,
    chem: &ChemInitConfig,
    k: usize,
    truth: Option<&[usize]>,
) -> Result<ClusterOutput> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let y = spectrogram_matrix(spectrograms)?;
    let stack = multilayer_factorize(&y, ranks, nmf_config, &LayerInit::Chem(chem.clone()))?;
    let x = &stack.final_x;
    let points: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
    let assignment = kmeans(
        &points,
        k,
        rng::derive_seed(nmf_config.seed, &[0x6b6d]),
        KMEANS_MAX_ITER,
    )?;
    let (labels, _) = compact(&assignment.labels);
    let internal = internal_scores(&points, &labels)?;
    let (acc, nmi_score) = match truth {
        Some(t) => (
            Some(accuracy_hungarian(&assignment.labels, t)?),
            Some(nmi(&assignment.labels, t)?),
        ),
        None => (None, None),
    };
    let reconstructions = stack.reconstruction();
    Ok(ClusterOutput {
        assignment,
        scores: ClusterScores {
            silhouette: internal.silhouette,
            davies_bouldin: internal.davies_bouldin,
            calinski_harabasz: internal.calinski_harabasz,
            variance: internal.variance,
            acc,
            nmi: nmi_score,
        },
        stack,
        reconstructions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn kmeans_edge_cases() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 3.0], &[5.0, 5.0]]);
        let one = kmeans(&p, 1, 3, 100).unwrap();
        assert_eq!(one.labels, vec![0; 4]);
        assert!((one.centroids[0][0] - 1.5).abs() < 1e-12);
        assert!((one.centroids[0][1] - 2.0).abs() < 1e-12);
        let all = kmeans(&p, 4, 3, 100).unwrap();
        assert_eq!(all.inertia, 0.0);
        assert!(kmeans(&p, 5, 3, 100).is_err());
        assert!(kmeans(&[], 1, 3, 100).is_err());
    }

    #[test]
    fn small_internal_scores() {
        let p = pts(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let s = internal_scores(&p, &[0, 0, 1, 1]).unwrap();
        assert!(s.silhouette > 0.9);
        let q = pts(&[&[0.0], &[0.0], &[4.0], &[4.0]]);
        let s = internal_scores(&q, &[0, 0, 1, 1]).unwrap();
        assert_eq!(s.davies_bouldin, 0.0);
        assert!(internal_scores(&p, &[0, 0, 0, 0]).is_err());
        assert!(internal_scores(&p, &[0, 0, 2, 2]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_hungarian(&[2, 2, 0, 0, 1], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy_hungarian(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        let acc = accuracy_hungarian(&[1, 1, 0, 0, 0, 2], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
        assert!(accuracy_hungarian(&[], &[]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[4, 4, 4, 4], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap().abs() < 1e-15);
        assert!(nmi(&[0], &[]).is_err());
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let a = hungarian(&cost);
        let total: i64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5);
    }
}
