//! Seeded k-means over embedding vectors.
//!
//! k-means++ initialization, Lloyd iterations, squared-Euclidean
//! assignment with distance ties broken toward the lower cluster index.
//! Centroids are the raw member mean and are NOT renormalized, so they
//! live slightly inside the unit sphere; cosine against them is still
//! well-defined. An emptied cluster is re-seeded mid-run with the point
//! farthest from its current centroid (taken from a donor cluster with
//! at least two members); no cluster ends empty when k is at most the
//! number of distinct points, but coincident duplicates above that bound
//! collapse onto the lowest index and leave the surplus clusters empty.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::Vector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, max_iterations: 100, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    /// assignments[i] = cluster index of point i.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vector>,
    pub iterations: usize,
    /// Within-cluster sum of squared distances at convergence.
    pub wcss: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices of one cluster, in input order.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of the given vectors. Errors on an empty slice.
pub fn centroid(points: &[&Vector]) -> Result<Vector> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("centroid of empty set".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for p in points {
        if p.dim() != dim {
            return Err(Error::InvalidInput("centroid over mixed dimensions".into()));
        }
        for (a, x) in acc.iter_mut().zip(&p.0) {
            *a += x;
        }
    }
    let n = points.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Vector(acc))
}

fn nearest(centroids: &[Vector], p: &Vector) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        // Strict < keeps ties at the lower cluster index.
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus_init(points: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let mut centroids: Vec<Vector> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    while centroids.len() < k {
        let weights: Vec<f64> =
            points.iter().map(|p| nearest(&centroids, p).1).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&weights)
                .expect("non-negative weights with positive sum")
                .sample(rng)
        } else {
            // All remaining points coincide with chosen centers; take the
            // first index not yet used so duplicates stay deterministic.
            let used: Vec<&Vector> = centroids.iter().collect();
            points
                .iter()
                .position(|p| !used.iter().any(|c| *c == p))
                .unwrap_or(centroids.len() % points.len())
        };
        centroids.push(points[next].clone());
    }
    centroids
}

pub fn kmeans(points: &[Vector], cfg: &KMeansConfig) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::InvalidInput("kmeans over zero points".into()));
    }
    if cfg.k == 0 || cfg.k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {} must be in 1..={}",
            cfg.k,
            points.len()
        )));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(Error::InvalidInput("kmeans over mixed dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_plus_plus_init(points, cfg.k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut iterations = 0usize;
    let mut prev_wcss = f64::INFINITY;

    for iter in 0..cfg.max_iterations {
        iterations = iter + 1;

        // 1. Assign points to their nearest centroid.
        let mut wcss = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            assignments[i] = c;
            wcss += d;
        }
        // Lloyd monotonicity: the objective never increases.
        debug_assert!(
            wcss <= prev_wcss + 1e-9,
            "WCSS increased: {prev_wcss} -> {wcss}"
        );
        prev_wcss = wcss;

        // 2. Re-seed any emptied cluster with the globally farthest point
        //    taken from a cluster that can spare one.
        repair_empty_clusters(points, &mut assignments, &mut centroids);

        // 3. Recompute centroids as the raw member mean.
        let mut shift: f64 = 0.0;
        for c in 0..cfg.k {
            let members: Vec<&Vector> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignments[*i] == c)
                .map(|(_, p)| p)
                .collect();
            let new_c = centroid(&members)?;
            shift = shift.max(sq_dist(&new_c, &centroids[c]).sqrt());
            centroids[c] = new_c;
        }

        if shift < cfg.tolerance {
            break;
        }
    }

    // Final assignment pass so assignments match the returned centroids.
    // Ties still break toward the lower cluster index, so coincident
    // centroids (duplicate points with k above the distinct count) may
    // leave higher-index clusters empty; callers treat those as flagged
    // empty.
    let mut wcss = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(&centroids, p);
        assignments[i] = c;
        wcss += d;
    }

    Ok(Clustering { assignments, centroids, iterations, wcss })
}

/// Moves one point into each empty cluster, taking the point farthest from
/// its centroid among clusters that keep at least one member. The empty
/// cluster's centroid becomes the moved point, so an iteration never ends
/// with a silently dead cluster while distinct points remain.
fn repair_empty_clusters(
    points: &[Vector],
    assignments: &mut [usize],
    centroids: &mut [Vector],
) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let donor = assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| counts[a] >= 2)
            .max_by(|(i, &a), (j, &b)| {
                let da = sq_dist(&points[*i], &centroids[a]);
                let db = sq_dist(&points[*j], &centroids[b]);
                da.partial_cmp(&db)
                    .unwrap()
                    // On distance ties prefer the lower point index.
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .expect("k <= n guarantees a donor exists");
        assignments[donor] = empty;
        centroids[empty] = points[donor].clone();
    }
}
