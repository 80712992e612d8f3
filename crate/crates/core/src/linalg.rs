//! Dense least-squares kernel shared by every estimator.
//!
//! Householder QR with column pivoting; no normal equations are formed.
//! Rank is judged against `max(n, k) * eps * max_column_norm`, and a rank
//! failure reports the offending column names instead of silently dropping
//! them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Output of a least-squares solve.
#[derive(Debug, Clone)]
pub struct Lstsq {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub resid: DVector<f64>,
    /// (X'X)^{-1} reconstructed from the R factor, in original column order.
    pub xtx_inv: DMatrix<f64>,
    pub rank: usize,
}

/// Solve min ||y - X b|| by pivoted Householder QR.
///
/// `names` must label the columns of `x`; they are only used in error
/// reporting.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Lstsq> {
    let n = x.nrows();
    let k = x.ncols();
    assert_eq!(names.len(), k, "one name per design column");
    assert_eq!(y.len(), n, "y length must match rows of X");
    if k == 0 {
        return Err(Error::InvalidSpec("empty design matrix".into()));
    }
    if n < k {
        return Err(Error::TooFewRows { n, k });
    }

    let mut a = x.clone();
    let mut qty = y.clone();
    let mut perm: Vec<usize> = (0..k).collect();

    let max_col_norm = (0..k)
        .map(|j| a.column(j).norm())
        .fold(0.0f64, f64::max);
    let tol = (n.max(k) as f64) * f64::EPSILON * max_col_norm;

    for step in 0..k {
        // Pivot on the largest remaining column norm (rows step..n).
        let mut best = step;
        let mut best_norm2 = trailing_norm2(&a, step, step);
        for j in (step + 1)..k {
            let nrm2 = trailing_norm2(&a, step, j);
            if nrm2 > best_norm2 {
                best_norm2 = nrm2;
                best = j;
            }
        }
        if best_norm2.sqrt() <= tol {
            let columns = perm[step..].iter().map(|&j| names[j].clone()).collect();
            return Err(Error::RankDeficient { columns });
        }
        if best != step {
            a.swap_columns(step, best);
            perm.swap(step, best);
        }

        // Householder reflection annihilating a[step+1.., step].
        let sigma = best_norm2.sqrt();
        let pivot = a[(step, step)];
        let alpha = if pivot > 0.0 { -sigma } else { sigma };
        let mut v = DVector::zeros(n - step);
        v[0] = pivot - alpha;
        for i in (step + 1)..n {
            v[i - step] = a[(i, step)];
        }
        let vtv = v.dot(&v);
        a[(step, step)] = alpha;
        for i in (step + 1)..n {
            a[(i, step)] = 0.0;
        }
        if vtv > 0.0 {
            for j in (step + 1)..k {
                let mut vtx = 0.0;
                for i in step..n {
                    vtx += v[i - step] * a[(i, j)];
                }
                let scale = 2.0 * vtx / vtv;
                for i in step..n {
                    a[(i, j)] -= scale * v[i - step];
                }
            }
            let mut vty = 0.0;
            for i in step..n {
                vty += v[i - step] * qty[i];
            }
            let scale = 2.0 * vty / vtv;
            for i in step..n {
                qty[i] -= scale * v[i - step];
            }
        }
    }

    // Back-substitute R z = (Q'y)[..k].
    let mut z = DVector::zeros(k);
    for i in (0..k).rev() {
        let mut acc = qty[i];
        for j in (i + 1)..k {
            acc -= a[(i, j)] * z[j];
        }
        z[i] = acc / a[(i, i)];
    }
    let mut coef = DVector::zeros(k);
    for j in 0..k {
        coef[perm[j]] = z[j];
    }

    // R^{-1} by back-substitution, then (X'X)^{-1} = P R^{-1} R^{-T} P'.
    let mut rinv = DMatrix::zeros(k, k);
    for col in 0..k {
        for i in (0..=col).rev() {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for j in (i + 1)..=col {
                acc -= a[(i, j)] * rinv[(j, col)];
            }
            rinv[(i, col)] = acc / a[(i, i)];
        }
    }
    let g = &rinv * rinv.transpose();
    let mut xtx_inv = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            xtx_inv[(perm[i], perm[j])] = g[(i, j)];
        }
    }

    let fitted = x * &coef;
    let resid = y - &fitted;
    Ok(Lstsq {
        coef,
        fitted,
        resid,
        xtx_inv,
        rank: k,
    })
}

fn trailing_norm2(a: &DMatrix<f64>, row_start: usize, col: usize) -> f64 {
    let mut acc = 0.0;
    for i in row_start..a.nrows() {
        let v = a[(i, col)];
        acc += v * v;
    }
    acc
}

/// Quadratic form b' V^{-1} b used by Wald-type tests.
pub fn wald_quadform(b: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::linalg::Cholesky::new(v.clone())
        .ok_or(Error::Singular("Wald covariance block"))?;
    let solved = chol.solve(b);
    Ok(b.dot(&solved))
}
