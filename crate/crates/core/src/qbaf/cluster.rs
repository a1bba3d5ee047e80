//! Seeded k-means over neuron activation profiles.

use super::QbafError;
use crate::rng::Rng;

const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct KmeansResult {
    /// Cluster index per row.
    pub assignment: Vec<usize>,
    /// True when k exceeded the row count and was clamped down.
    pub clamped: bool,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic given the seed:
/// assignment ties go to the lowest center index, empty clusters keep their
/// previous center, and iteration stops at `MAX_ITERATIONS` or when no
/// center moves more than `CONVERGENCE_TOL`.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> KmeansResult {
    assert!(!rows.is_empty() && k >= 1);
    let clamped = k > rows.len();
    let k = k.min(rows.len());
    let dim = rows[0].len();
    let mut rng = Rng::new(seed);

    // k-means++ seeding: spread initial centers by squared distance.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; rows.len()];
    let first = rng.below(rows.len() as u64) as usize;
    chosen[first] = true;
    centers.push(rows[first].clone());
    while centers.len() < k {
        let d2: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| sq_dist(r, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can exhaust the walk; fall back to the last positive-
            // distance row, then to the first unchosen one.
            pick.or_else(|| (0..rows.len()).rev().find(|&i| d2[i] > 0.0))
                .or_else(|| (0..rows.len()).find(|&i| !chosen[i]))
                .expect("k <= distinct row count")
        } else {
            (0..rows.len()).find(|&i| !chosen[i]).expect("k <= row count")
        };
        chosen[next] = true;
        centers.push(rows[next].clone());
    }

    let mut assignment = vec![0usize; rows.len()];
    let mut iterations = 0;
    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        for (i, row) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(row, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }

        let mut moved: f64 = 0.0;
        for (c, center) in centers.iter_mut().enumerate() {
            let mut acc = vec![0.0; dim];
            let mut count = 0usize;
            for (i, row) in rows.iter().enumerate() {
                if assignment[i] == c {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            for a in acc.iter_mut() {
                *a /= count as f64;
            }
            moved = moved.max(sq_dist(center, &acc).sqrt());
            *center = acc;
        }
        if moved <= CONVERGENCE_TOL {
            break;
        }
    }

    KmeansResult { assignment, clamped, iterations }
}

/// Partition hidden neurons by activation profile. `profiles[neuron]` holds
/// that neuron's activations over the reference samples. Cluster count is
/// max(1, round((1 - ratio) * width)). Clusters come back ordered by their
/// smallest member, members sorted ascending.
pub fn cluster_hidden(profiles: &[Vec<f64>], ratio: f64, seed: u64) -> Result<Vec<Vec<usize>>, QbafError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(QbafError::BadRatio(ratio));
    }
    if profiles.is_empty() || profiles[0].is_empty() {
        return Err(QbafError::EmptyReference);
    }
    let width = profiles.len();
    let k = (((1.0 - ratio) * width as f64).round() as usize).clamp(1, width);
    let result = kmeans(profiles, k, seed);

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (neuron, &c) in result.assignment.iter().enumerate() {
        clusters[c].push(neuron);
    }
    clusters.retain(|c| !c.is_empty());
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}
