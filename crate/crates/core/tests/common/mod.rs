//! Reference implementations used as test oracles. They share no code with
//! the library beyond its public data types.
#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcm_core::{Dataset, Observation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(r))
}

/// One-sided Jacobi SVD: returns (U, σ, V) with A = U diag(σ) Vᵀ, σ descending.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let alpha: f64 = w.column(i).norm_squared();
                let beta: f64 = w.column(j).norm_squared();
                let gamma: f64 = w.column(i).dot(&w.column(j));
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (x, y) = (w[(k, i)], w[(k, j)]);
                    w[(k, i)] = c * x - s * y;
                    w[(k, j)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[(k, i)], v[(k, j)]);
                    v[(k, i)] = c * x - s * y;
                    v[(k, j)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (col, &j) in order.iter().enumerate() {
        let sj = norms[j];
        s.push(sj);
        if sj > 0.0 {
            u.set_column(col, &(w.column(j) / sj));
        }
        vs.set_column(col, &v.column(j));
    }
    (u, s, vs)
}

/// Singular value thresholding through the Jacobi SVD.
pub fn svt_oracle(z: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let (u, s, v) = jacobi_svd(z);
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for (j, sj) in s.iter().enumerate() {
        let shrunk = (sj - tau).max(0.0);
        if shrunk > 0.0 {
            out += u.column(j) * v.column(j).transpose() * shrunk;
        }
    }
    out
}

pub fn nuclear_oracle(m: &DMatrix<f64>) -> f64 {
    jacobi_svd(m).1.iter().sum()
}

/// Lebesgue Fourier system: 1, √2cos(2πkt), √2sin(2πkt), …
pub fn fourier(l: usize, t: f64) -> Vec<f64> {
    (0..l)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                let k = ((j + 1) / 2) as f64;
                if j % 2 == 1 {
                    SQRT_2 * (2.0 * PI * k * t).cos()
                } else {
                    SQRT_2 * (2.0 * PI * k * t).sin()
                }
            }
        })
        .collect()
}

/// Dense n×(pl) design, row i = vec(w_i φ(t_i)ᵀ) row-major.
pub fn dense_design(data: &Dataset, l: usize) -> DMatrix<f64> {
    let p = data.p();
    let mut x = DMatrix::zeros(data.n(), p * l);
    for (i, o) in data.observations().iter().enumerate() {
        let phi = fourier(l, o.t);
        for k in 0..p {
            for j in 0..l {
                x[(i, k * l + j)] = o.w[k] * phi[j];
            }
        }
    }
    x
}

pub fn unvec(v: &DVector<f64>, p: usize, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, l, |i, j| v[i * l + j])
}

/// Unpenalized least squares by the normal equations.
pub fn least_squares(data: &Dataset, l: usize) -> DMatrix<f64> {
    let x = dense_design(data, l);
    let y = DVector::from_iterator(data.n(), data.responses());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let a = xtx.cholesky().expect("design has full column rank").solve(&xty);
    unvec(&a, data.p(), l)
}

/// (1/n)Σ(y − ⟨X,A⟩)² + λ‖A‖_* through the dense design.
pub fn objective_oracle(data: &Dataset, a: &DMatrix<f64>, lambda: f64) -> f64 {
    let (p, l) = a.shape();
    let x = dense_design(data, l);
    let v = DVector::from_fn(p * l, |k, _| a[(k / l, k % l)]);
    let y = DVector::from_iterator(data.n(), data.responses());
    (y - x * v).norm_squared() / data.n() as f64 + lambda * nuclear_oracle(a)
}

/// Largest eigenvalue of (2/n)XᵀX.
pub fn lipschitz_oracle(data: &Dataset, l: usize) -> f64 {
    let x = dense_design(data, l);
    let g = x.transpose() * &x * (2.0 / data.n() as f64);
    g.symmetric_eigenvalues().max()
}

/// Random data with canonical covariates, uniform t and Gaussian responses
/// around a random matrix.
pub fn random_dataset(r: &mut ChaCha8Rng, p: usize, l: usize, n: usize, sigma: f64) -> (Dataset, DMatrix<f64>) {
    let a = random_matrix(r, p, l);
    let obs = (0..n)
        .map(|_| {
            let t: f64 = r.random();
            let k = r.random_range(0..p);
            let mut w = vec![0.0; p];
            w[k] = 1.0;
            let phi = fourier(l, t);
            let mean: f64 = (0..l).map(|j| a[(k, j)] * phi[j]).sum();
            Observation::new(w, t, mean + sigma * gaussian(r)).unwrap()
        })
        .collect();
    (Dataset::new(obs).unwrap(), a)
}

/// Random data with dense covariates on the unit ball.
pub fn random_dense_dataset(r: &mut ChaCha8Rng, p: usize, l: usize, n: usize) -> Dataset {
    let obs = (0..n)
        .map(|_| {
            let t: f64 = r.random();
            let mut w: Vec<f64> = (0..p).map(|_| gaussian(r)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let shrink: f64 = r.random::<f64>() * 0.999;
            w.iter_mut().for_each(|v| *v *= shrink / norm);
            let y = gaussian(r) + fourier(l, t)[l.min(2) - 1];
            Observation::new(w, t, y).unwrap()
        })
        .collect();
    Dataset::new(obs).unwrap()
}
