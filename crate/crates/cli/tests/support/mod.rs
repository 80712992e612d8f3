//! Test-side numeric oracles for the acceptance suite, independent of the
//! library's analytic code paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn cov(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k = x.len();
    let mut grad = DVector::zeros(k);
    for j in 0..k {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += h;
        lo[j] -= h;
        grad[j] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    grad
}

fn fd_hessian<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let k = x.len();
    let mut hess = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut pp = x.clone();
            let mut pm = x.clone();
            let mut mp = x.clone();
            let mut mm = x.clone();
            pp[i] += h;
            pp[j] += h;
            pm[i] += h;
            pm[j] -= h;
            mp[i] -= h;
            mp[j] += h;
            mm[i] -= h;
            mm[j] -= h;
            let v = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Generic numeric maximizer (finite-difference Newton with step halving).
pub fn fd_newton_maximize<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    start: DVector<f64>,
    iterations: usize,
) -> DVector<f64> {
    let mut x = start;
    let mut fx = f(&x);
    for _ in 0..iterations {
        let grad = fd_gradient(f, &x, 1e-5);
        if grad.amax() < 1e-10 {
            break;
        }
        let hess = fd_hessian(f, &x, 1e-4);
        let step = match hess.lu().solve(&grad) {
            Some(d) => -d,
            None => grad.clone() * 1e-3,
        };
        let mut scale = 1.0;
        loop {
            let cand = &x + &step * scale;
            let fc = f(&cand);
            if fc > fx - 1e-14 {
                x = cand;
                fx = fc;
                break;
            }
            scale *= 0.5;
            if scale < 1e-8 {
                break;
            }
        }
    }
    x
}
