//! Sparse direct solves with reusable factorizations.
//!
//! Every factorization keeps the original matrix so solves can run one or
//! two rounds of iterative refinement and report a residual. Numerically
//! singular matrices are rejected at factorization time via an inverse-power
//! probe of the smallest singular value; for shifted operators this is the
//! signal that the shift sits on the discrete spectrum.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::SparseColMat;
use faer::{Conj, Par};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Relative residual contract for well-conditioned solves.
pub const SOLVE_RTOL: f64 = 1e-10;
/// Residuals above this bound (after refinement) surface as errors.
const SOLVE_GUARD: f64 = 1e-7;
/// Pivot estimates below `SINGULAR_RTOL * ||A||_inf` reject the matrix.
const SINGULAR_RTOL: f64 = 1e-14;
const MAX_REFINEMENTS: usize = 2;

/// Sets the number of threads used inside factorizations and solves.
/// `1` (the default) keeps results bitwise reproducible run to run.
pub fn set_num_threads(threads: usize) {
    let par = if threads <= 1 {
        Par::Seq
    } else {
        Par::rayon(threads)
    };
    faer::set_global_parallelism(par);
}

enum Backend {
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Llt(faer::sparse::linalg::solvers::Llt<usize, f64>),
}

/// Opaque handle over a sparse direct factorization.
pub struct Factorization {
    matrix: Arc<CsrMatrix>,
    backend: Backend,
    norm_inf: f64,
    /// Lower bound estimate of the smallest singular value found during the
    /// singularity probe.
    pub pivot_estimate: f64,
}

fn to_faer(a: &CsrMatrix) -> Result<SparseColMat<usize, f64>> {
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push(faer::sparse::Triplet::new(i, j, v));
        }
    }
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &triplets)
        .map_err(|_| Error::Config("sparse matrix construction failed".into()))
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Factorization {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    fn raw_solve(&self, rhs: &mut [f64], transpose: bool) {
        let n = rhs.len();
        let mat = faer::MatMut::from_column_major_slice_mut(rhs, n, 1);
        match (&self.backend, transpose) {
            (Backend::Lu(lu), false) => lu.solve_in_place_with_conj(Conj::No, mat),
            (Backend::Lu(lu), true) => lu.solve_transpose_in_place_with_conj(Conj::No, mat),
            // Cholesky factors are symmetric; transpose solves coincide.
            (Backend::Llt(llt), _) => llt.solve_in_place_with_conj(Conj::No, mat),
        }
    }

    fn solve_refined(&self, b: &[f64], transpose: bool) -> Result<(Vec<f64>, f64)> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: b.len(),
            });
        }
        let norm_b = norm2(b);
        if norm_b == 0.0 {
            return Ok((vec![0.0; b.len()], 0.0));
        }
        let a = if transpose {
            None
        } else {
            Some(self.matrix.as_ref())
        };
        let at;
        let a_ref = match a {
            Some(m) => m,
            None => {
                at = self.matrix.transpose();
                &at
            }
        };

        let mut x = b.to_vec();
        self.raw_solve(&mut x, transpose);
        let mut residual = f64::INFINITY;
        for _ in 0..=MAX_REFINEMENTS {
            let mut r = b.to_vec();
            a_ref.mul_vec_acc(-1.0, &x, &mut r);
            let rn = norm2(&r) / norm_b;
            if !rn.is_finite() {
                return Err(Error::SingularMatrix {
                    pivot: self.pivot_estimate,
                });
            }
            if rn >= residual * 0.5 {
                // No further progress.
                residual = residual.min(rn);
                break;
            }
            residual = rn;
            if residual <= SOLVE_RTOL {
                break;
            }
            self.raw_solve(&mut r, transpose);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        if residual > SOLVE_GUARD {
            return Err(Error::ResidualTooLarge {
                residual,
                bound: SOLVE_GUARD,
            });
        }
        Ok((x, residual))
    }

    /// Solves `A x = b`, returning the solution and its relative residual.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_refined(b, false)?.0)
    }

    /// Solves `A x = b` and reports the relative residual alongside.
    pub fn solve_with_residual(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.solve_refined(b, false)
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_refined(b, true)?.0)
    }

    /// Solves one system per right-hand side, reusing the factorization.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rhs.iter().map(|b| self.solve(b)).collect()
    }
}

/// Deterministic unit pseudo-random vector for the singularity probe.
fn probe_vector(n: usize) -> Vec<f64> {
    let mut state = 0x9E3779B97F4A7C15u64 ^ (n as u64);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let nrm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nrm);
    v
}

fn finish(a: Arc<CsrMatrix>, backend: Backend) -> Result<Factorization> {
    let norm_inf = a.norm_inf();
    let mut fact = Factorization {
        matrix: a,
        backend,
        norm_inf,
        pivot_estimate: f64::INFINITY,
    };
    // Two inverse-power steps estimate 1/sigma_min along a generic direction.
    let n = fact.n();
    let mut x = probe_vector(n);
    fact.raw_solve(&mut x, false);
    let g1 = norm2(&x);
    if !g1.is_finite() {
        return Err(Error::SingularMatrix { pivot: 0.0 });
    }
    if g1 > 0.0 {
        x.iter_mut().for_each(|v| *v /= g1);
        fact.raw_solve(&mut x, true);
        let g2 = norm2(&x);
        if !g2.is_finite() {
            return Err(Error::SingularMatrix { pivot: 0.0 });
        }
        fact.pivot_estimate = 1.0 / g1.max(g2);
    } else {
        fact.pivot_estimate = f64::INFINITY;
    }
    if fact.pivot_estimate < SINGULAR_RTOL * fact.norm_inf {
        return Err(Error::SingularMatrix {
            pivot: fact.pivot_estimate,
        });
    }
    Ok(fact)
}

/// Sparse LU with fill-reducing ordering; rejects numerically singular input.
pub fn factorize(a: &CsrMatrix) -> Result<Factorization> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let fa = to_faer(a)?;
    let lu = fa
        .sp_lu()
        .map_err(|_| Error::SingularMatrix { pivot: 0.0 })?;
    finish(Arc::new(a.clone()), Backend::Lu(lu))
}

/// Sparse Cholesky for symmetric positive definite matrices; falls back to
/// LU when the numeric factorization fails.
pub fn factorize_spd(a: &CsrMatrix) -> Result<Factorization> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let fa = to_faer(a)?;
    match fa.sp_cholesky(faer::Side::Lower) {
        Ok(llt) => finish(Arc::new(a.clone()), Backend::Llt(llt)),
        Err(_) => factorize(a),
    }
}

/// Dense LU with partial pivoting. Serves the small systems of the solver
/// (the 2x2 Woodbury capacitance, Hessenberg inverse iteration) and doubles
/// as a reference path for small problems.
pub mod dense {
    use crate::error::{Error, Result};

    pub struct DenseLu {
        n: usize,
        lu: Vec<f64>,
        perm: Vec<usize>,
    }

    /// Factorizes a dense row-major `n x n` matrix.
    pub fn factorize(a: &[f64], n: usize) -> Result<DenseLu> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let cand = lu[i * n + k].abs();
                if cand > best {
                    best = cand;
                    p = i;
                }
            }
            if best <= 1e-300 || best < 1e-16 * scale {
                return Err(Error::SingularMatrix { pivot: best });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(DenseLu { n, lu, perm })
    }

    impl DenseLu {
        pub fn solve(&self, b: &[f64]) -> Vec<f64> {
            let n = self.n;
            let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
            for i in 1..n {
                let mut acc = x[i];
                for j in 0..i {
                    acc -= self.lu[i * n + j] * x[j];
                }
                x[i] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[i];
                for j in i + 1..n {
                    acc -= self.lu[i * n + j] * x[j];
                }
                x[i] = acc / self.lu[i * n + i];
            }
            x
        }
    }
}
