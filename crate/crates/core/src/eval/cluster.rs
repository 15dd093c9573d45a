use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::Result;

/// Principal axes of a point set, largest variance first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm axes; the largest-magnitude loading of each is positive.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fit on `points` with the sample covariance (`n − 1` denominator).
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(CoreError::Data(format!("PCA needs at least 2 points, got {n}")));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(CoreError::Data("PCA points differ in size".into()));
        }
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n as f64;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in points {
            for r in 0..d {
                for c in 0..d {
                    cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]);
                }
            }
        }
        cov /= (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(d);
        let mut variances = Vec::with_capacity(d);
        for k in order {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            variances.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Self { mean, components, variances })
    }

    /// Scores on the first `k` axes.
    pub fn project(&self, p: &[f64], k: usize) -> Vec<f64> {
        self.components
            .iter()
            .take(k)
            .map(|c| c.iter().zip(p).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    /// Mean squared error of reconstructing `points` from their first `k` scores.
    pub fn reconstruction_error(&self, points: &[Vec<f64>], k: usize) -> f64 {
        let mut total = 0.0;
        for p in points {
            let s = self.project(p, k);
            for (i, (&x, &m)) in p.iter().zip(&self.mean).enumerate() {
                let r: f64 = m + s.iter().zip(&self.components).map(|(si, c)| si * c[i]).sum::<f64>();
                total += (x - r) * (x - r);
            }
        }
        total / points.len() as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding and Lloyd iterations, best inertia over `restarts` runs.
/// Returns the cluster index of every point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        return Err(CoreError::Data(format!("k-means with k = {k} on {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centres = vec![points[rng.random_range(0..points.len())].clone()];
        while centres.len() < k {
            let w: Vec<f64> = points
                .iter()
                .map(|p| centres.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = w.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                w.iter().position(|&x| {
                    u -= x;
                    u < 0.0
                })
                .unwrap_or(points.len() - 1)
            } else {
                rng.random_range(0..points.len())
            };
            centres.push(points[pick].clone());
        }
        let mut assign = vec![usize::MAX; points.len()];
        for _ in 0..300 {
            let next: Vec<usize> = points
                .iter()
                .map(|p| {
                    (0..k)
                        .min_by(|&a, &b| sq_dist(p, &centres[a]).total_cmp(&sq_dist(p, &centres[b])))
                        .expect("k > 0")
                })
                .collect();
            if next == assign {
                break;
            }
            assign = next;
            for (c, centre) in centres.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (d, v) in centre.iter_mut().enumerate() {
                    *v = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centres[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity<L: PartialEq>(assign: &[usize], labels: &[L]) -> f64 {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut hit = 0;
    for c in 0..k {
        let members: Vec<&L> = assign.iter().zip(labels).filter(|(&a, _)| a == c).map(|(_, l)| l).collect();
        hit += members
            .iter()
            .map(|l| members.iter().filter(|m| *m == l).count())
            .max()
            .unwrap_or(0);
    }
    hit as f64 / assign.len().max(1) as f64
}
