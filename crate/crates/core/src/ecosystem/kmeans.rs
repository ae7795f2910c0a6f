use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EcosystemError;
use crate::rng::rng_from_seed;

pub const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Inertia after each iteration's centroid update.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia(data: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter().zip(assignments).map(|(x, &a)| dist2(x, &centroids[a])).sum()
}

/// k-means++ seeding: the first centre uniformly, each later one with
/// probability proportional to squared distance from the nearest chosen
/// centre.
fn seed_centroids(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // all remaining points coincide with a centre
            rng.random_range(0..data.len())
        };
        centroids.push(data[pick].clone());
        for (x, d) in data.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds, until the assignment stops
/// changing or [`KMEANS_MAX_ITERATIONS`] is reached. A cluster that ends up
/// empty takes the point farthest from its own centroid.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, EcosystemError> {
    if k == 0 || k > data.len() {
        return Err(EcosystemError::TooManyClusters { k, rows: data.len() });
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(EcosystemError::DimensionError { expected: d, got: bad.len() });
    }

    let mut centroids = seed_centroids(data, k, seed);
    let mut assignments: Vec<usize> = data.iter().map(|x| nearest(x, &centroids).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        repair_empty(data, &mut assignments, &centroids, k);
        centroids = means(data, &assignments, k, d);
        trace.push(inertia(data, &assignments, &centroids));

        let next: Vec<usize> = data.iter().map(|x| nearest(x, &centroids).0).collect();
        if next == assignments || iterations >= KMEANS_MAX_ITERATIONS {
            break;
        }
        assignments = next;
    }
    Ok(KMeans {
        inertia: inertia(data, &assignments, &centroids),
        assignments,
        centroids,
        iterations,
        inertia_trace: trace,
    })
}

fn means(data: &[Vec<f64>], assignments: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    sums
}

fn repair_empty(data: &[Vec<f64>], assignments: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point among clusters that can spare one
        let donor = (0..data.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| {
                dist2(&data[i], &centroids[assignments[i]]).total_cmp(&dist2(&data[j], &centroids[assignments[j]]))
            });
        match donor {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cluster_per_point() {
        let data: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&data, 5, 1).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut a = km.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let km = kmeans(&data, 1, 9).unwrap();
        assert_eq!(km.centroids[0], vec![2.0, 4.0]);
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(
            kmeans(&[vec![0.0]], 2, 0),
            Err(EcosystemError::TooManyClusters { k: 2, rows: 1 })
        ));
    }

    #[test]
    fn duplicate_points_never_leave_a_cluster_empty() {
        let data = vec![vec![1.0, 1.0]; 6];
        let km = kmeans(&data, 3, 2).unwrap();
        for c in 0..3 {
            assert!(km.assignments.contains(&c));
        }
    }
}
