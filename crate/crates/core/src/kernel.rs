//! Gaussian kernel machinery and the unbiased MMD² estimator.
//!
//! The RKHS is only ever touched through kernel evaluations. Block sums of
//! Gram matrices use pairwise summation; rows may be filled in parallel but
//! every reduction runs in a fixed order, so results do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel `k(x, y) = exp(-||x - y||² / gamma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Argument(format!(
                "bandwidth gamma = {gamma} must be positive and finite"
            )));
        }
        Ok(KernelSpec { gamma })
    }

    /// Unchecked evaluation; callers guarantee equal dimensions.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        (-squared_distance(x, y) / (self.gamma * self.gamma)).exp()
    }
}

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_set_dims(sets: &[&[Vec<f64>]]) -> Result<usize> {
    let d = sets
        .iter()
        .flat_map(|s| s.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    for set in sets {
        if let Some(bad) = set.iter().find(|v| v.len() != d) {
            return Err(Error::Argument(format!(
                "dimension mismatch: {} vs {d}",
                bad.len()
            )));
        }
    }
    Ok(d)
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    check_dims(x, y)?;
    Ok(KernelSpec::gaussian(gamma)?.eval(x, y))
}

/// Pairwise (cascade) summation: error grows with log n rather than n.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Median of the Euclidean distances over all distinct pairs.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Argument(
            "median heuristic needs at least two points".into(),
        ));
    }
    check_set_dims(&[points])?;
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(squared_distance(&points[i], &points[j]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

/// Dense symmetric Gram matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new(points: &[Vec<f64>], kernel: &KernelSpec) -> Result<Self> {
        check_set_dims(&[points])?;
        let n = points.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            kernel.eval(&points[i], &points[j])
                        }
                    })
                    .collect()
            })
            .collect();
        let mut data = rows.concat();
        // Enforce exact symmetry.
        for i in 0..n {
            for j in 0..i {
                data[i * n + j] = data[j * n + i];
            }
        }
        Ok(Gram { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    pub value: f64,
    pub m: usize,
    pub n: usize,
    pub kernel: KernelSpec,
}

/// Unbiased MMD² with `1/(m(m-1))` and `1/(n(n-1))` within-sample weights.
/// The value can be negative.
pub fn mmd2_unbiased(x: &[Vec<f64>], xp: &[Vec<f64>], kernel: &KernelSpec) -> Result<MmdEstimate> {
    let (m, n) = (x.len(), xp.len());
    if m < 2 || n < 2 {
        return Err(Error::Argument(format!(
            "MMD needs at least two points per sample (got m = {m}, n = {n})"
        )));
    }
    check_set_dims(&[x, xp])?;

    let within = |s: &[Vec<f64>]| -> f64 {
        let rows: Vec<f64> = (0..s.len())
            .into_par_iter()
            .map(|i| {
                let row: Vec<f64> = (0..s.len())
                    .filter(|&j| j != i)
                    .map(|j| kernel.eval(&s[i], &s[j]))
                    .collect();
                pairwise_sum(&row)
            })
            .collect();
        pairwise_sum(&rows)
    };
    let cross_rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = xp.iter().map(|y| kernel.eval(&x[i], y)).collect();
            pairwise_sum(&row)
        })
        .collect();

    let (mf, nf) = (m as f64, n as f64);
    let value = within(x) / (mf * (mf - 1.0)) - 2.0 * pairwise_sum(&cross_rows) / (mf * nf)
        + within(xp) / (nf * (nf - 1.0));
    Ok(MmdEstimate {
        value,
        m,
        n,
        kernel: *kernel,
    })
}

/// MMD² over a pooled Gram matrix for an arbitrary split of its indices.
///
/// Used by the permutation test so that the kernel is evaluated once. With
/// `row_sums[i] = sum_j K[i][j]` and `total = sum_ij K[i][j]`, only the
/// `first`-block needs an explicit double sum.
pub(crate) struct PooledMmd<'a> {
    gram: &'a Gram,
    row_sums: Vec<f64>,
    total: f64,
}

impl<'a> PooledMmd<'a> {
    pub(crate) fn new(gram: &'a Gram) -> Self {
        let row_sums: Vec<f64> = (0..gram.size())
            .map(|i| pairwise_sum(gram.row(i)))
            .collect();
        let total = pairwise_sum(&row_sums);
        PooledMmd {
            gram,
            row_sums,
            total,
        }
    }

    /// `first` holds the indices assigned to the first sample; the rest form
    /// the second.
    pub(crate) fn mmd2(&self, first: &[usize]) -> f64 {
        let big_n = self.gram.size();
        let m = first.len();
        let n = big_n - m;
        let mut within_first = 0.0;
        let mut first_rows = 0.0;
        for &i in first {
            let row = self.gram.row(i);
            within_first += first.iter().map(|&j| row[j]).sum::<f64>();
            first_rows += self.row_sums[i];
        }
        let cross = first_rows - within_first;
        let within_second = self.total - within_first - 2.0 * cross;
        let (mf, nf) = (m as f64, n as f64);
        (within_first - mf) / (mf * (mf - 1.0)) - 2.0 * cross / (mf * nf)
            + (within_second - nf) / (nf * (nf - 1.0))
    }
}

/// `h_ij = k(x_i, x_j) + k(x'_i, x'_j) - k(x_i, x'_j) - k(x'_i, x_j)`.
pub fn h_statistic(
    xi: &[f64],
    xj: &[f64],
    xpi: &[f64],
    xpj: &[f64],
    kernel: &KernelSpec,
) -> Result<f64> {
    check_dims(xi, xj)?;
    check_dims(xi, xpi)?;
    check_dims(xi, xpj)?;
    Ok(kernel.eval(xi, xj) + kernel.eval(xpi, xpj) - kernel.eval(xi, xpj) - kernel.eval(xpi, xj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Plug-in `4 (E[h12 h13] - E[h12]²)`, clamped at zero.
    pub sigma2: f64,
    /// The same estimate before clamping.
    pub raw: f64,
    /// Plug-in `E[h12]`, which is itself an unbiased MMD² estimate.
    pub mean_h: f64,
}

impl VarianceEstimate {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Asymptotic variance of `sqrt(n) * MMD²_u` for paired samples of equal size.
///
/// Samples are paired by index. `E[h12]` is averaged over ordered pairs of
/// distinct indices and `E[h12 h13]` over ordered triples of distinct indices.
pub fn variance_sigma2(
    x: &[Vec<f64>],
    xp: &[Vec<f64>],
    kernel: &KernelSpec,
) -> Result<VarianceEstimate> {
    let n = x.len();
    if n != xp.len() {
        return Err(Error::Argument(format!(
            "variance estimator pairs samples by index; sizes {n} and {} differ",
            xp.len()
        )));
    }
    if n < 3 {
        return Err(Error::Argument(format!(
            "variance estimator needs at least three pairs (got {n})"
        )));
    }
    check_set_dims(&[x, xp])?;

    // For each i: S_i = sum_{j != i} h_ij and Q_i = sum_{j != i} h_ij², so that
    // sum over triples (i, j, l) distinct of h_ij h_il = S_i² - Q_i.
    let per_row: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    kernel.eval(&x[i], &x[j]) + kernel.eval(&xp[i], &xp[j])
                        - kernel.eval(&x[i], &xp[j])
                        - kernel.eval(&xp[i], &x[j])
                })
                .collect();
            let sq: Vec<f64> = h.iter().map(|v| v * v).collect();
            (pairwise_sum(&h), pairwise_sum(&sq))
        })
        .collect();
    let nf = n as f64;
    let pair_sum = pairwise_sum(&per_row.iter().map(|r| r.0).collect::<Vec<_>>());
    let triple_terms: Vec<f64> = per_row.iter().map(|(s, q)| s * s - q).collect();
    let mean_h = pair_sum / (nf * (nf - 1.0));
    let mean_hh = pairwise_sum(&triple_terms) / (nf * (nf - 1.0) * (nf - 2.0));
    let raw = 4.0 * (mean_hh - mean_h * mean_h);
    Ok(VarianceEstimate {
        sigma2: raw.max(0.0),
        raw,
        mean_h,
    })
}
