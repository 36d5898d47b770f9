//! Spectral gap of the negated generator.
//!
//! Small spaces use a dense symmetric eigendecomposition. Larger ones run
//! Lanczos with full reorthogonalization on the orthogonal complement of the
//! constant vector (the kernel of `-Q`), so the smallest Ritz value converges
//! to the gap directly.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::generator::Generator;
use crate::error::{Result, ZrpError};

/// Configuration counts up to this size use the dense solver.
pub const DENSE_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMethod {
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    pub max_krylov: usize,
    pub max_restarts: usize,
    pub tolerance: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { max_krylov: 300, max_restarts: 30, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub gap: f64,
    pub relaxation_time: f64,
    pub method: GapMethod,
    /// `||(-Q) phi - gap phi||` for the returned unit eigenvector.
    pub residual: f64,
    pub dimension: usize,
    /// Eigenvector for the gap, indexed like the configurations.
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
}

pub fn exact_gap(generator: &Generator) -> Result<SpectralReport> {
    exact_gap_with(generator, SolverChoice::Auto, LanczosOptions::default())
}

pub fn exact_gap_with(generator: &Generator, choice: SolverChoice, opts: LanczosOptions) -> Result<SpectralReport> {
    let dim = generator.dimension();
    if dim < 2 {
        return Err(ZrpError::InvalidArgument("a single-state chain has no spectral gap".into()));
    }
    let use_dense = match choice {
        SolverChoice::Auto => dim <= DENSE_THRESHOLD,
        SolverChoice::Dense => true,
        SolverChoice::Iterative => false,
    };
    let (gap, vector, method) = if use_dense {
        let (g, v) = dense_gap(generator)?;
        (g, v, GapMethod::Dense)
    } else {
        let (g, v) = lanczos_gap(generator, opts)?;
        (g, v, GapMethod::Iterative)
    };
    let residual = residual_norm(generator, gap, &vector);
    Ok(SpectralReport { gap, relaxation_time: 1.0 / gap, method, residual, dimension: dim, eigenvector: vector })
}

/// Full spectrum of `-Q`, ascending.
pub fn spectrum(generator: &Generator) -> Vec<f64> {
    let m = -generator.to_dense();
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

fn dense_gap(generator: &Generator) -> Result<(f64, Vec<f64>)> {
    let m: DMatrix<f64> = -generator.to_dense();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let idx = order[1];
    let gap = eig.eigenvalues[idx];
    if gap <= 1e-12 {
        return Err(ZrpError::InvalidArgument("generator is reducible (repeated zero eigenvalue)".into()));
    }
    Ok((gap, eig.eigenvectors.column(idx).iter().copied().collect()))
}

fn residual_norm(generator: &Generator, lambda: f64, v: &[f64]) -> f64 {
    let mut av = vec![0.0; v.len()];
    generator.apply_negated(v, &mut av);
    av.iter().zip(v).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn lanczos_gap(generator: &Generator, opts: LanczosOptions) -> Result<(f64, Vec<f64>)> {
    let dim = generator.dimension();
    let krylov = opts.max_krylov.min(dim - 1).max(1);
    // Deterministic start vector with no special symmetry.
    let mut start: Vec<f64> = (0..dim).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5).collect();
    let mut best = (f64::INFINITY, f64::INFINITY, Vec::new());
    let mut iterations = 0;

    for _ in 0..=opts.max_restarts {
        remove_mean(&mut start);
        let s = norm(&start);
        if s == 0.0 {
            return Err(ZrpError::NonConvergence { iterations, residual: f64::NAN });
        }
        start.iter_mut().for_each(|x| *x /= s);

        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        for k in 0..krylov {
            iterations += 1;
            generator.apply_negated(&basis[k], &mut w);
            let alpha = dot(&basis[k], &w);
            alphas.push(alpha);
            // Two passes of full reorthogonalization, including the constant vector.
            for _ in 0..2 {
                remove_mean(&mut w);
                for b in &basis {
                    let c = dot(b, &w);
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let beta = norm(&w);
            let done = k + 1 == krylov || beta < 1e-14;
            if done || (k + 1) % 10 == 0 {
                let (theta, coeffs) = smallest_ritz(&alphas, &betas);
                let estimate = beta * coeffs.last().copied().unwrap_or(0.0).abs();
                if estimate < best.1 || done {
                    let mut phi = vec![0.0; dim];
                    for (c, b) in coeffs.iter().zip(&basis) {
                        phi.iter_mut().zip(b).for_each(|(p, x)| *p += c * x);
                    }
                    let n = norm(&phi);
                    phi.iter_mut().for_each(|p| *p /= n);
                    let res = residual_norm(generator, theta, &phi);
                    if res < best.1 {
                        best = (theta, res, phi);
                    }
                    if res <= opts.tolerance * theta.abs().max(1.0) {
                        return Ok((best.0, best.2));
                    }
                }
                if done {
                    break;
                }
            }
            betas.push(beta);
            basis.push(w.iter().map(|x| x / beta).collect());
        }
        start = best.2.clone();
    }
    Err(ZrpError::NonConvergence { iterations, residual: best.1 })
}

/// Smallest eigenpair of the symmetric tridiagonal matrix with the given
/// diagonal and off-diagonal.
fn smallest_ritz(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = (0..k).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).iter().copied().collect())
}
