//! k-means clustering of the stacked points z_i = (y_i, x_iᵀ)ᵀ.
//!
//! Coordinates are standardized to unit sample variance before any distance
//! is computed; centroids are reported on the original scale.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{stream, Purpose};

const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    dim: usize,
    /// K × dim, row-major, original scale
    centroids: Vec<f64>,
    assignment: Vec<usize>,
    /// within-cluster sum of squares in standardized space after each
    /// assignment step
    objective_history: Vec<f64>,
}

impl Clustering {
    /// Wraps explicit centroids, assigning every point to its nearest one
    /// in standardized space.
    pub fn from_centroids(data: &Dataset, centroids: Vec<f64>) -> Result<Self> {
        let dim = data.p() + 1;
        if centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::Domain(format!(
                "centroid buffer length {} is not a multiple of {dim}",
                centroids.len()
            )));
        }
        let std = Standardized::new(data);
        let scaled: Vec<f64> = centroids
            .chunks(dim)
            .flat_map(|c| std.scale_point(c))
            .collect();
        let (assignment, _) = assign(&std, &scaled);
        Ok(Self {
            dim,
            centroids,
            assignment,
            objective_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn objective_history(&self) -> &[f64] {
        &self.objective_history
    }
}

struct Standardized {
    dim: usize,
    mean: Vec<f64>,
    sd: Vec<f64>,
    /// n × dim, row-major
    points: Vec<f64>,
}

impl Standardized {
    fn new(data: &Dataset) -> Self {
        let n = data.n();
        let dim = data.p() + 1;
        let coord = |i: usize, j: usize| {
            if j == 0 {
                data.y(i)
            } else {
                data.row(i)[j - 1]
            }
        };
        let mut mean = vec![0.0; dim];
        let mut sd = vec![1.0; dim];
        for j in 0..dim {
            let m = (0..n).map(|i| coord(i, j)).sum::<f64>() / n as f64;
            mean[j] = m;
            if n > 1 {
                let v = (0..n).map(|i| (coord(i, j) - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                if v > 0.0 {
                    sd[j] = v.sqrt();
                }
            }
        }
        let mut points = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..dim {
                points[i * dim + j] = (coord(i, j) - mean[j]) / sd[j];
            }
        }
        Self {
            dim,
            mean,
            sd,
            points,
        }
    }

    fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn scale_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.sd[j])
            .collect()
    }

    fn unscale_point(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| self.mean[j] + self.sd[j] * v)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every point (lowest index on ties) and the
/// squared distance to it.
fn assign(std: &Standardized, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let dim = std.dim;
    (0..std.n())
        .into_par_iter()
        .map(|i| {
            let p = std.point(i);
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.chunks(dim).enumerate() {
                let dist = sq_dist(p, cen);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best
        })
        .unzip()
}

fn plusplus_seed(std: &Standardized, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = std.n();
    let dim = std.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(std.point(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(std.point(i), std.point(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).unwrap())
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(std.point(next));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(std.point(i), std.point(next)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Stops at an assignment fixed point or after 100 iterations. A cluster
/// that empties is re-seeded at the point farthest from its own centroid.
pub fn kmeans_cluster(data: &Dataset, k: usize, seed: u64) -> Result<Clustering> {
    let n = data.n();
    if k == 0 || k > n {
        return Err(Error::config(
            "cv.k",
            format!("need 1 ≤ K ≤ n = {n}, got K = {k}"),
        ));
    }
    let std = Standardized::new(data);
    let dim = std.dim;
    let mut rng = stream(seed, 0, Purpose::Auxiliary);
    let mut centroids = plusplus_seed(&std, k, &mut rng);
    let (mut assignment, mut dist) = assign(&std, &centroids);
    let mut history = vec![dist.iter().sum::<f64>()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(std.point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n ≥ 1");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(std.point(far));
                dist[far] = 0.0;
            }
        }
        let (next, next_dist) = assign(&std, &centroids);
        history.push(next_dist.iter().sum());
        let stable = next == assignment;
        assignment = next;
        dist = next_dist;
        if stable {
            break;
        }
    }
    let original: Vec<f64> = centroids
        .chunks(dim)
        .flat_map(|c| std.unscale_point(c))
        .collect();
    Ok(Clustering {
        dim,
        centroids: original,
        assignment,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_variates::testutil::poisson_posterior;

    #[test]
    fn one_cluster_is_the_mean() {
        let post = poisson_posterior(400, 1);
        let cl = kmeans_cluster(post.data(), 1, 3).unwrap();
        let n = post.n() as f64;
        let ybar = post.data().ys().iter().sum::<f64>() / n;
        let xbar = (0..post.n()).map(|i| post.data().row(i)[0]).sum::<f64>() / n;
        assert!((cl.centroid(0)[0] - ybar).abs() < 1e-10);
        assert!((cl.centroid(0)[1] - xbar).abs() < 1e-10);
        assert!(cl.assignment().iter().all(|&c| c == 0));
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let post = poisson_posterior(60, 2);
        let cl = kmeans_cluster(post.data(), 60, 3).unwrap();
        for i in 0..60 {
            let c = cl.centroid(cl.assignment()[i]);
            assert!((c[0] - post.data().y(i)).abs() < 1e-9);
            assert!((c[1] - post.data().row(i)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_never_increases() {
        let post = poisson_posterior(3000, 3);
        let cl = kmeans_cluster(post.data(), 25, 11).unwrap();
        let h = cl.objective_history();
        assert!(h.len() >= 2);
        for w in h.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_and_nearest() {
        let post = poisson_posterior(2000, 4);
        let a = kmeans_cluster(post.data(), 30, 5).unwrap();
        let b = kmeans_cluster(post.data(), 30, 5).unwrap();
        assert_eq!(a, b);
        let again = Clustering::from_centroids(post.data(), a.centroids().to_vec()).unwrap();
        assert_eq!(again.assignment(), a.assignment());
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let post = poisson_posterior(10, 5);
        assert!(kmeans_cluster(post.data(), 11, 0).is_err());
        assert!(kmeans_cluster(post.data(), 0, 0).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let data =
            Dataset::from_rows(vec![0.0, 2.0, 1.0], &[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let cl = Clustering::from_centroids(&data, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(cl.assignment(), &[0, 1, 0]);
    }

    #[test]
    fn duplicate_points_still_yield_k_centroids() {
        let data = Dataset::from_rows(vec![1.0; 8], &vec![vec![0.5]; 8]).unwrap();
        let cl = kmeans_cluster(&data, 3, 1).unwrap();
        assert_eq!(cl.k(), 3);
        assert_eq!(cl.assignment().len(), 8);
    }
}
