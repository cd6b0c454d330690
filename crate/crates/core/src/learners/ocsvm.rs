use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Gram, KernelSpec};

pub const DEFAULT_NU: f64 = 0.1;
pub const KKT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100_000;

/// ν-one-class SVM: `g(x) = Σ α_i k(x_i, x) - rho`, positive inside the
/// estimated support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassSvmModel {
    pub support_points: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
    pub kernel: KernelSpec,
    /// Training-set size, which fixes the box bound `1 / (nu * l)`.
    pub training_size: usize,
    pub iterations: usize,
}

impl OneClassSvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if let Some(p) = self.support_points.first() {
            if p.len() != x.len() {
                return Err(Error::Argument(format!(
                    "input has dimension {}, model expects {}",
                    x.len(),
                    p.len()
                )));
            }
        }
        let s: f64 = self
            .support_points
            .iter()
            .zip(&self.alphas)
            .map(|(p, a)| a * self.kernel.eval(p, x))
            .sum();
        Ok(s - self.rho)
    }

    pub fn decision_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.decision(x)).collect()
    }
}

/// Solution of the dual before support vectors are extracted.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub upper_bound: f64,
}

/// `½ αᵀ K α` evaluated directly.
pub fn dual_objective(gram: &Gram, alphas: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, ai) in alphas.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        let row = gram.row(i);
        total += ai * alphas.iter().zip(row).map(|(a, k)| a * k).sum::<f64>();
    }
    0.5 * total
}

/// Minimizes `½ αᵀ K α` over `0 ≤ α ≤ 1/(ν l)`, `Σ α = 1` by updating the
/// maximal violating pair until the violation drops below `tol`.
pub fn solve_dual(gram: &Gram, nu: f64, tol: f64, max_iterations: usize) -> Result<DualSolution> {
    let l = gram.size();
    let c = 1.0 / (nu * l as f64);
    // Fill the first floor(nu * l) coordinates to the bound and put the
    // remainder on the next one.
    let mut alphas = vec![0.0; l];
    let full = ((nu * l as f64).floor() as usize).min(l);
    alphas[..full].iter_mut().for_each(|a| *a = c);
    if full < l {
        alphas[full] = (1.0 - full as f64 * c).max(0.0);
    }
    let mut grad: Vec<f64> = (0..l)
        .map(|i| gram.row(i).iter().zip(&alphas).map(|(k, a)| k * a).sum())
        .collect();

    let mut iterations = 0;
    loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..l {
            if alphas[t] < c && grad[t] < gmin {
                gmin = grad[t];
                i = t;
            }
            if alphas[t] > 0.0 && grad[t] > gmax {
                gmax = grad[t];
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin <= tol {
            break;
        }
        if iterations >= max_iterations {
            return Err(Error::Solver {
                iterations,
                residual: gmax - gmin,
            });
        }
        iterations += 1;
        let eta = (gram.get(i, i) + gram.get(j, j) - 2.0 * gram.get(i, j)).max(1e-12);
        let room_i = c - alphas[i];
        let room_j = alphas[j];
        let step = (gmax - gmin) / eta;
        let delta = step.min(room_i).min(room_j);
        if delta == room_i {
            alphas[i] = c;
        } else {
            alphas[i] += delta;
        }
        if delta == room_j {
            alphas[j] = 0.0;
        } else {
            alphas[j] -= delta;
        }
        let (ri, rj) = (gram.row(i), gram.row(j));
        for t in 0..l {
            grad[t] += delta * (ri[t] - rj[t]);
        }
    }

    let eps = 1e-12 * c;
    let free: Vec<f64> = (0..l)
        .filter(|&t| alphas[t] > eps && alphas[t] < c - eps)
        .map(|t| grad[t])
        .collect();
    let rho = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        let at_bound = (0..l).filter(|&t| alphas[t] >= c - eps).map(|t| grad[t]);
        let at_zero = (0..l).filter(|&t| alphas[t] <= eps).map(|t| grad[t]);
        let lo = at_bound.fold(f64::NEG_INFINITY, f64::max);
        let hi = at_zero.fold(f64::INFINITY, f64::min);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };
    Ok(DualSolution {
        objective: dual_objective(gram, &alphas),
        alphas,
        rho,
        iterations,
        upper_bound: c,
    })
}

pub fn train_ocsvm(xs: &[Vec<f64>], nu: f64, kernel: KernelSpec) -> Result<OneClassSvmModel> {
    if xs.len() < 2 {
        return Err(Error::Argument(
            "one-class training needs at least two points".into(),
        ));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Argument(format!("nu = {nu} outside (0, 1]")));
    }
    let gram = Gram::new(xs, &kernel)?;
    let sol = solve_dual(&gram, nu, KKT_TOLERANCE, MAX_ITERATIONS)?;
    let (support_points, alphas) = xs
        .iter()
        .zip(&sol.alphas)
        .filter(|(_, a)| **a > 0.0)
        .map(|(x, a)| (x.clone(), *a))
        .unzip();
    Ok(OneClassSvmModel {
        support_points,
        alphas,
        rho: sol.rho,
        nu,
        kernel,
        training_size: xs.len(),
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    /// Minimizes the ℓ = 3 objective on a fine grid over α1, solving the
    /// remaining one-dimensional quadratic in α2 exactly.
    fn grid_oracle(k: &[[f64; 3]; 3], c: f64) -> f64 {
        let f = |a: [f64; 3]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += a[i] * a[j] * k[i][j];
                }
            }
            0.5 * s
        };
        let steps = 20_000;
        let mut best = f64::INFINITY;
        for s in 0..=steps {
            let a1 = c * s as f64 / steps as f64;
            let rest = 1.0 - a1;
            // a2 in [max(0, rest - c), min(c, rest)], a3 = rest - a2.
            let lo = (rest - c).max(0.0);
            let hi = c.min(rest);
            if lo > hi + 1e-15 {
                continue;
            }
            // d/da2 of f with a3 = rest - a2.
            let qa = k[1][1] + k[2][2] - 2.0 * k[1][2];
            let qb = a1 * (k[0][1] - k[0][2]) + rest * (k[1][2] - k[2][2]);
            let a2 = if qa > 0.0 {
                (-qb / qa).clamp(lo, hi)
            } else {
                lo
            };
            for cand in [a2, lo, hi] {
                best = best.min(f([a1, cand, rest - cand]));
            }
        }
        best
    }

    #[test]
    fn three_point_objective_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let pts = gaussian_points(3, 2, 100 + trial);
            let kernel = KernelSpec::gaussian(rng.random_range(0.5..2.0)).unwrap();
            let nu = rng.random_range(0.34..1.0);
            let gram = Gram::new(&pts, &kernel).unwrap();
            let sol = solve_dual(&gram, nu, KKT_TOLERANCE, MAX_ITERATIONS).unwrap();
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = gram.get(i, j);
                }
            }
            let oracle = grid_oracle(&k, sol.upper_bound);
            assert!(
                (sol.objective - oracle).abs() <= 1e-5,
                "{} vs {oracle}",
                sol.objective
            );
            assert!(sol.objective <= oracle + 1e-9);
        }
    }

    #[test]
    fn dual_constraints_hold() {
        for seed in 0..10 {
            let pts = gaussian_points(150, 4, seed);
            let gram = Gram::new(&pts, &KernelSpec::gaussian(2.0).unwrap()).unwrap();
            let sol = solve_dual(
                &gram,
                0.1 + 0.05 * seed as f64,
                KKT_TOLERANCE,
                MAX_ITERATIONS,
            )
            .unwrap();
            let sum: f64 = sol.alphas.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-8);
            assert!(sol
                .alphas
                .iter()
                .all(|&a| a >= 0.0 && a <= sol.upper_bound + 1e-8));
        }
    }

    #[test]
    fn identical_points_are_inside() {
        let pts = vec![vec![1.0, -2.0]; 5];
        let m = train_ocsvm(&pts, 0.5, KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert!(m.decision(&pts[0]).unwrap() >= -1e-12);
    }

    #[test]
    fn nu_bounds_the_outlier_fraction() {
        for (seed, nu) in [(1, 0.1), (2, 0.2), (3, 0.05)] {
            let pts = gaussian_points(300, 3, seed);
            let gamma = crate::kernel::median_heuristic(&pts).unwrap();
            let m = train_ocsvm(&pts, nu, KernelSpec::gaussian(gamma).unwrap()).unwrap();
            let out = m
                .decision_batch(&pts)
                .unwrap()
                .iter()
                .filter(|g| **g < 0.0)
                .count();
            assert!(out as f64 / 300.0 <= nu + 0.05, "nu {nu}: {out}");
        }
    }

    #[test]
    fn decisions_ignore_training_order() {
        let pts = gaussian_points(120, 3, 9);
        let kernel = KernelSpec::gaussian(1.5).unwrap();
        let a = train_ocsvm(&pts, 0.1, kernel).unwrap();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.rotate_left(17);
        let b = train_ocsvm(&shuffled, 0.1, kernel).unwrap();
        for x in gaussian_points(40, 3, 10) {
            let (ga, gb) = (a.decision(&x).unwrap(), b.decision(&x).unwrap());
            assert!((ga - gb).abs() <= 1e-4, "{ga} vs {gb}");
        }
    }

    #[test]
    fn argument_errors() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(train_ocsvm(&[vec![0.0]], 0.5, k).is_err());
        assert!(train_ocsvm(&[vec![0.0], vec![1.0]], 0.0, k).is_err());
        let pts = gaussian_points(50, 2, 1);
        let gram = Gram::new(&pts, &k).unwrap();
        assert!(matches!(
            solve_dual(&gram, 0.3, 1e-12, 1),
            Err(Error::Solver { .. })
        ));
    }
}
