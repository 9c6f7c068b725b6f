//! Symmetric positive-definite linear solvers for the grid systems.
//!
//! Every implicit solve in this crate leads to a system `M x = b` with
//! `M = diag(alpha) - scale * A`, where `A` is a two-point flux diffusion
//! operator on a uniform rectangular grid. With row-major cell ordering `M`
//! is banded with half-bandwidth `nx` (1 for one-dimensional meshes), so a
//! banded Cholesky factorization is the default. For meshes where the band
//! storage would be excessive a Jacobi-preconditioned conjugate-gradient
//! fallback is used instead.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (nonpositive pivot at row {row})")]
    NotPositiveDefinite { row: usize },
    #[error("conjugate gradient did not reach relative tolerance {tol:e} in {iters} iterations (residual {residual:e})")]
    CgStalled { tol: f64, iters: usize, residual: f64 },
    #[error("non-finite value produced during linear solve")]
    NonFinite,
}

/// Symmetric banded matrix stored by columns: `data[j * (bw + 1) + k]`
/// holds entry `(j + k, j)` for `k = 0..=bw`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row >= col && row - col <= self.bw);
        self.data[col * (self.bw + 1) + (row - col)] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row >= col && row - col <= self.bw);
        self.data[col * (self.bw + 1) + (row - col)] += value;
    }

    /// In-place Cholesky factorization `M = L L^T` keeping the band layout.
    pub fn cholesky(mut self) -> Result<BandCholesky, LinalgError> {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        for j in 0..n {
            let m = bw.min(n - 1 - j);
            let pivot = self.data[j * stride];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: j });
            }
            let d = pivot.sqrt();
            self.data[j * stride] = d;
            let inv = 1.0 / d;
            for k in 1..=m {
                self.data[j * stride + k] *= inv;
            }
            // Rank-one update of the trailing columns touched by column j.
            for k in 1..=m {
                let ljk = self.data[j * stride + k];
                if ljk == 0.0 {
                    continue;
                }
                let (head, tail) = self.data.split_at_mut((j + k) * stride);
                let src = &head[j * stride + k..j * stride + m + 1];
                let dst = &mut tail[..m + 1 - k];
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d -= ljk * *s;
                }
            }
        }
        Ok(BandCholesky { n, bw, data: self.data })
    }
}

/// Cached banded Cholesky factor, reused across solves.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let stride = self.bw + 1;
        // Forward: L y = b, column-oriented.
        for j in 0..self.n {
            let m = self.bw.min(self.n - 1 - j);
            let col = &self.data[j * stride..j * stride + m + 1];
            let xj = x[j] / col[0];
            x[j] = xj;
            for k in 1..=m {
                x[j + k] -= col[k] * xj;
            }
        }
        // Backward: L^T x = y.
        for j in (0..self.n).rev() {
            let m = self.bw.min(self.n - 1 - j);
            let col = &self.data[j * stride..j * stride + m + 1];
            let mut acc = x[j];
            for k in 1..=m {
                acc -= col[k] * x[j + k];
            }
            x[j] = acc / col[0];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Jacobi-preconditioned conjugate gradient for matrix-free SPD systems.
///
/// `apply` computes `out = M u`. Iterates until the preconditioned residual
/// norm drops below `rel_tol` times its initial value.
pub fn conjugate_gradient<F>(
    apply: F,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<usize, LinalgError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
    };
    precond(&r, &mut z);
    p.copy_from_slice(&z);
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = rel_tol * b_norm.max(f64::MIN_POSITIVE);

    for iter in 0..max_iters {
        let r_norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= target {
            return Ok(iter);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { row: iter });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if !rz.is_finite() {
            return Err(LinalgError::NonFinite);
        }
    }
    let residual: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual <= target {
        Ok(max_iters)
    } else {
        Err(LinalgError::CgStalled { tol: rel_tol, iters: max_iters, residual })
    }
}
