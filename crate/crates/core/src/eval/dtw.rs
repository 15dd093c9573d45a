use crate::error::CoreError;
use crate::Result;

/// Monotone alignment from `(0, 0)` to `(N−1, M−1)` with unit steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub path: Vec<(usize, usize)>,
    /// Sum of the frame distances over every cell of the path.
    pub cost: f64,
}

impl Alignment {
    pub fn mean_cost(&self) -> f64 {
        self.cost / self.path.len() as f64
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Optimal alignment under steps `(1,0)`, `(0,1)`, `(1,1)`. Among paths of
/// equal cost the shortest wins; remaining ties prefer the diagonal, then
/// advancing `a`.
pub fn dtw<T>(a: &[T], b: &[T], dist: impl Fn(&T, &T) -> f64) -> Result<Alignment> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(CoreError::Data("dtw needs two non-empty sequences".into()));
    }
    // (cost, length) per cell, row-major
    let mut acc = vec![(0.0f64, 0usize); n * m];
    let better = |x: (f64, usize), y: (f64, usize)| x.0 < y.0 || (x.0 == y.0 && x.1 < y.1);
    for i in 0..n {
        for j in 0..m {
            let d = dist(&a[i], &b[j]);
            if !d.is_finite() {
                return Err(CoreError::Numeric(format!("dtw frame distance at ({i}, {j})")));
            }
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best: Option<(f64, usize)> = None;
                for (ok, di, dj) in [(i > 0 && j > 0, 1, 1), (i > 0, 1, 0), (j > 0, 0, 1)] {
                    if ok {
                        let c = acc[(i - di) * m + (j - dj)];
                        if best.is_none_or(|b| better(c, b)) {
                            best = Some(c);
                        }
                    }
                }
                best.expect("a predecessor exists")
            };
            acc[i * m + j] = (prev.0 + d, prev.1 + 1);
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut best: Option<((f64, usize), usize, usize)> = None;
        for (ok, di, dj) in [(i > 0 && j > 0, 1, 1), (i > 0, 1, 0), (j > 0, 0, 1)] {
            if ok {
                let c = acc[(i - di) * m + (j - dj)];
                if best.is_none_or(|(b, _, _)| better(c, b)) {
                    best = Some((c, i - di, j - dj));
                }
            }
        }
        let (_, pi, pj) = best.expect("a predecessor exists");
        i = pi;
        j = pj;
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment { path, cost: acc[n * m - 1].0 })
}
