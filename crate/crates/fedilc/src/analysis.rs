//! Inconsistency scores for pairs of quadratic environments.
//!
//! An environment is a quadratic basin (or a piecewise-quadratic landscape
//! built as the pointwise minimum of several basins). Two environments are
//! consistent at a shared minimum when their Hessians have matching
//! curvature; the score scales the worst eigenvalue ratio by the probe
//! radius epsilon.

use crate::aggregation::{arith_mean, weighted_geo_mean, GradientSet};
use crate::error::{Error, Result};

/// A quadratic environment `L(theta) = 1/2 (theta - t)^T H (theta - t) + c`
/// with symmetric positive-definite `H`.
#[derive(Debug, Clone)]
pub struct QuadEnv {
    dim: usize,
    hessian: Vec<f64>,
    theta_star: Vec<f64>,
    offset: f64,
}

impl QuadEnv {
    pub fn new(dim: usize, hessian: Vec<f64>, theta_star: Vec<f64>, offset: f64) -> Result<Self> {
        if hessian.len() != dim * dim || theta_star.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "hessian {} / optimum {} entries for dim {dim}",
                hessian.len(),
                theta_star.len()
            )));
        }
        let scale = hessian.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (hessian[i * dim + j] - hessian[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "hessian asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            hessian,
            theta_star,
            offset,
        })
    }

    pub fn diagonal(diag: &[f64], theta_star: Vec<f64>, offset: f64) -> Result<Self> {
        let dim = diag.len();
        let mut hessian = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            hessian[i * dim + i] = d;
        }
        Self::new(dim, hessian, theta_star, offset)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let d: Vec<f64> = theta
            .iter()
            .zip(self.theta_star.iter())
            .map(|(&t, &s)| t - s)
            .collect();
        let mut quad = 0.0;
        for i in 0..self.dim {
            let mut hd = 0.0;
            for j in 0..self.dim {
                hd += self.hessian[i * self.dim + j] * d[j];
            }
            quad += d[i] * hd;
        }
        0.5 * quad + self.offset
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = theta
            .iter()
            .zip(self.theta_star.iter())
            .map(|(&t, &s)| t - s)
            .collect();
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| self.hessian[i * self.dim + j] * d[j])
                    .sum()
            })
            .collect()
    }
}

/// Piecewise-quadratic landscape: the pointwise minimum over basins.
/// Loss and gradient come from whichever basin is lowest at the point.
#[derive(Debug, Clone)]
pub struct BasinEnv {
    basins: Vec<QuadEnv>,
}

impl BasinEnv {
    pub fn new(basins: Vec<QuadEnv>) -> Result<Self> {
        if basins.is_empty() {
            return Err(Error::InvalidInput("environment needs >= 1 basin".into()));
        }
        let dim = basins[0].dim();
        if basins.iter().any(|b| b.dim() != dim) {
            return Err(Error::ShapeMismatch("basins have mixed dimensions".into()));
        }
        Ok(Self { basins })
    }

    pub fn dim(&self) -> usize {
        self.basins[0].dim()
    }

    /// The basin with the lowest loss at `theta`; first wins ties.
    pub fn active_basin(&self, theta: &[f64]) -> &QuadEnv {
        let mut best = 0;
        let mut best_loss = self.basins[0].loss(theta);
        for (i, b) in self.basins.iter().enumerate().skip(1) {
            let l = b.loss(theta);
            if l < best_loss {
                best = i;
                best_loss = l;
            }
        }
        &self.basins[best]
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.active_basin(theta).loss(theta)
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.active_basin(theta).grad(theta)
    }
}

impl From<QuadEnv> for BasinEnv {
    fn from(q: QuadEnv) -> Self {
        Self { basins: vec![q] }
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns `(values ascending, vectors column-major)` with
/// residuals `||Hv - lambda v|| < 1e-10` for k <= 16.
pub fn sym_eigen(h: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.len() != dim * dim {
        return Err(Error::ShapeMismatch(format!(
            "{} entries for a {dim}x{dim} matrix",
            h.len()
        )));
    }
    if dim > 16 {
        return Err(Error::InvalidInput(
            "jacobi eigensolver is limited to dim <= 16".into(),
        ));
    }
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..dim {
        for j in (i + 1)..dim {
            if (h[i * dim + j] - h[j * dim + i]).abs() > 1e-9 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix asymmetric at ({i},{j}) beyond 1e-9"
                )));
            }
        }
    }
    let mut a = h.to_vec();
    // symmetrize exactly so rotations act on one consistent matrix
    for i in 0..dim {
        for j in (i + 1)..dim {
            let m = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            a[i * dim + j] = m;
            a[j * dim + i] = m;
        }
    }
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    s += a[i * dim + j] * a[i * dim + j];
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..100 {
        if off(&a) <= 1e-14 * scale {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[q * dim + q] - a[p * dim + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| a[i * dim + i].total_cmp(&a[j * dim + j]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * dim + i]).collect();
    let mut vectors = vec![0.0; dim * dim];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..dim {
            vectors[row * dim + col] = v[row * dim + src];
        }
    }
    Ok((values, vectors))
}

/// Ascending eigenvalues of a small symmetric matrix.
pub fn sym_eigenvalues(h: &[f64], dim: usize) -> Result<Vec<f64>> {
    sym_eigen(h, dim).map(|(values, _)| values)
}

/// `epsilon * max_i max(lambda_i^B / lambda_i^A, lambda_i^A / lambda_i^B)`
/// with eigenvalues paired in ascending order. Both Hessians must be
/// positive definite.
pub fn inconsistency_score(a: &QuadEnv, b: &QuadEnv, epsilon: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "environment dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let la = sym_eigenvalues(a.hessian(), a.dim())?;
    let lb = sym_eigenvalues(b.hessian(), b.dim())?;
    if la.iter().chain(lb.iter()).any(|&l| l <= 0.0) {
        return Err(Error::Numerical(
            "hessian is not positive definite".into(),
        ));
    }
    let mut worst = 1.0f64;
    for (&va, &vb) in la.iter().zip(lb.iter()) {
        worst = worst.max(vb / va).max(va / vb);
    }
    Ok(epsilon * worst)
}

/// Runs gradient descent from `start` twice, combining the two
/// environments' gradients with (a) the arithmetic mean and (b) the
/// weighted geometric mean, and scores each terminal point by the
/// inconsistency of the locally active basins.
///
/// Errors if either trajectory diverges (`||theta|| > 1e6`).
pub fn compare_minimizer_consistency(
    env_a: &BasinEnv,
    env_b: &BasinEnv,
    start: &[f64],
    steps: usize,
    eta: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    if env_a.dim() != env_b.dim() || start.len() != env_a.dim() {
        return Err(Error::ShapeMismatch(
            "environments and start point must share a dimension".into(),
        ));
    }
    let descend = |geometric: bool| -> Result<Vec<f64>> {
        let mut theta = start.to_vec();
        for _ in 0..steps {
            let gs = GradientSet::new(vec![env_a.grad(&theta), env_b.grad(&theta)])?;
            let combined = if geometric {
                weighted_geo_mean(&gs)
            } else {
                arith_mean(&gs)
            };
            for (t, g) in theta.iter_mut().zip(combined.iter()) {
                *t -= eta * g;
            }
            let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm > 1e6 {
                return Err(Error::Numerical("gradient descent diverged".into()));
            }
        }
        Ok(theta)
    };
    let theta_arith = descend(false)?;
    let theta_geo = descend(true)?;
    let score_arith =
        inconsistency_score(env_a.active_basin(&theta_arith), env_b.active_basin(&theta_arith), epsilon)?;
    let score_geo =
        inconsistency_score(env_a.active_basin(&theta_geo), env_b.active_basin(&theta_geo), epsilon)?;
    Ok((score_arith, score_geo))
}

/// The mismatched-curvature toy: both environments share a wide basin at
/// the same minimum, but with different per-coordinate curvatures, and
/// environment A hides an additional sharp basin along the arithmetic
/// trajectory. Arithmetic aggregation follows the stronger pull and is
/// captured by the sharp basin; the geometric mean damps the mismatched
/// coordinate and settles in the shared flat one. Returns the two
/// environments and a seed-jittered start point.
pub fn mismatched_curvature_toy(seed: u64) -> (BasinEnv, BasinEnv, Vec<f64>) {
    let flat_a = QuadEnv::diagonal(&[0.8, 0.2], vec![3.0, 0.0], 0.0).unwrap();
    let flat_b = QuadEnv::diagonal(&[0.05, 0.2], vec![3.0, 0.0], 0.0).unwrap();
    let sharp_a = QuadEnv::diagonal(&[50.0, 50.0], vec![2.3, 2.0], -0.3).unwrap();
    let env_a = BasinEnv::new(vec![flat_a, sharp_a]).unwrap();
    let env_b = BasinEnv::from(flat_b);

    use rand::Rng;
    let mut rng = crate::rng::stream(seed, crate::rng::TAG_DATASET, 0xA11, 0);
    let start = vec![rng.gen_range(-0.1..0.1), 4.0 + rng.gen_range(-0.1..0.1)];
    (env_a, env_b, start)
}
