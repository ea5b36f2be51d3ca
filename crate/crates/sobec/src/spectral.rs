//! Spectral diagnostics at a converged state: the smallest eigenvalues of
//! the tangent-projected energy Hessian and the eigenvalue of the Jacobian
//! pencil nearest to a shift, which together give the predicted local
//! convergence rate `|lambda - sigma| / |mu0 - sigma|` of the fixed-shift
//! J-iteration.
//!
//! Both computations are shift-invert Krylov iterations over the already
//! factorized sparse operators; dense eigensolvers touch only the small
//! projected matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::j_method::WoodburyOp;
use crate::linsolve::{self, dense};
use crate::state::{Eigenpair, Problem, SpinorField};

/// Residual bound below which a state counts as converged enough for
/// spectral diagnostics.
const CONVERGED_RESIDUAL: f64 = 1e-5;

/// Summary serialized into run reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda: f64,
    /// Smallest eigenvalues of the Hessian restricted to the tangent space
    /// of the mass constraint, ascending. The first one reproduces `lambda`
    /// (the phase direction stays in the tangent space).
    pub hessian_smallest: Vec<f64>,
    /// Shift used for the gap computation.
    pub sigma: f64,
    /// Jacobian eigenvalue nearest to `sigma` after removing the
    /// two-dimensional `lambda` eigenspace.
    pub mu0: f64,
    /// `|mu0 - sigma|`; meaningful even when the nearest eigenvalue comes
    /// as a complex pair.
    pub mu0_gap: f64,
    pub mu0_is_complex: bool,
    /// `|lambda - sigma| / |mu0 - sigma|`.
    pub predicted_rate: f64,
}

/// Gap diagnostics of the shifted Jacobian.
#[derive(Clone, Debug)]
pub struct JGap {
    pub mu0: f64,
    pub gap: f64,
    pub predicted_rate: f64,
    pub is_complex: bool,
    /// Mass inner products of the dominant Ritz vector with `u` and `i u`
    /// (deflation quality; absent for complex pairs).
    pub ritz_inner: Option<(f64, f64)>,
}

fn seeded_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed ^ 0xD1B54A32D192ED03;
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect()
}

fn check_converged(problem: &Problem, pair: &Eigenpair) -> Result<SpinorField> {
    let u = problem.normalize(&pair.u)?;
    let residual = problem.residual_norm(&u, pair.lambda)?;
    if residual > CONVERGED_RESIDUAL {
        return Err(Error::NotConverged { residual });
    }
    Ok(u)
}

struct LanczosRun {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    /// Norm of the last residual vector (zero on happy breakdown).
    final_beta: f64,
    /// Krylov space exhausted the tangent space; Ritz values are exact.
    exhausted: bool,
}

/// M-inner Lanczos with full reorthogonalization on a shift-inverted
/// operator restricted to the M-orthogonal complement of `u`.
fn lanczos<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    problem: &Problem,
    u: &SpinorField,
    apply: F,
    m: usize,
) -> Result<LanczosRun> {
    let dim = problem.dim();
    let m_inner = |a: &[f64], b: &[f64]| problem.mass_inner_raw(a, b);
    let project_u = |v: &mut Vec<f64>| {
        let c = problem.mass_inner_raw(&u.coeffs, v);
        for (vi, ui) in v.iter_mut().zip(&u.coeffs) {
            *vi -= c * ui;
        }
    };

    let mut v0 = seeded_vector(dim, dim as u64);
    project_u(&mut v0);
    let n0 = m_inner(&v0, &v0).sqrt();
    v0.iter_mut().for_each(|x| *x /= n0);

    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut final_beta = 0.0;
    let mut exhausted = false;
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        project_u(&mut w);
        let alpha = m_inner(&w, &basis[j]);
        alphas.push(alpha);
        for _ in 0..2 {
            for q in &basis {
                let c = m_inner(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let beta = m_inner(&w, &w).sqrt();
        if !beta.is_finite() {
            return Err(Error::EigenStagnation { residual: beta });
        }
        final_beta = beta;
        if beta < 1e-13 {
            exhausted = true;
            break;
        }
        if j + 1 == m {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    Ok(LanczosRun {
        alphas,
        betas,
        final_beta,
        exhausted,
    })
}

/// The `k` smallest eigenvalues of the generalized problem
/// `H v = mu M_pad v` restricted to the `M`-orthogonal complement of
/// `span{u}`, by shift-invert Lanczos with a shift slightly below `lambda`.
pub fn projected_hessian_eigs(problem: &Problem, pair: &Eigenpair, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let u = check_converged(problem, pair)?;
    let lambda = pair.lambda;
    let h = problem.hessian(&u)?;
    let delta = 1e-6 * lambda.abs().max(1.0);
    let shift = lambda - delta;
    let shifted = h.add_scaled(-shift, problem.m_pad())?;
    let fact = linsolve::factorize(&shifted)?;

    // Deflation correction: one extra solve turns the unconstrained
    // shift-invert into the exactly tangent-projected one.
    let y_u = fact.solve(&problem.apply_m_pad(&u.coeffs))?;
    let denom = problem.mass_inner_raw(&u.coeffs, &y_u);
    if denom.abs() < 1e-300 {
        return Err(Error::EigenStagnation {
            residual: f64::INFINITY,
        });
    }

    let apply = |w: &[f64]| -> Result<Vec<f64>> {
        let mut y = fact.solve(&problem.apply_m_pad(w))?;
        let theta = problem.mass_inner_raw(&u.coeffs, &y) / denom;
        for (yi, gi) in y.iter_mut().zip(&y_u) {
            *yi -= theta * gi;
        }
        Ok(y)
    };

    let dim = problem.dim();
    let m = (dim - 2).min(80.max(15 * k));
    let run = lanczos(problem, &u, apply, m)?;
    let mm = run.alphas.len();
    if mm < k {
        return Err(Error::EigenStagnation {
            residual: f64::INFINITY,
        });
    }
    let tri = DMatrix::from_fn(mm, mm, |i, j| {
        if i == j {
            run.alphas[i]
        } else if i + 1 == j {
            run.betas[i]
        } else if j + 1 == i {
            run.betas[j]
        } else {
            0.0
        }
    });
    let eig = tri.symmetric_eigen();
    let mut order: Vec<usize> = (0..mm).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    // Shift-invert spectrum of a converged minimizer is positive; the
    // largest values map to the smallest Hessian eigenvalues.
    let mut out = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let theta = eig.eigenvalues[idx];
        if theta <= 0.0 {
            return Err(Error::EigenStagnation { residual: theta });
        }
        if !run.exhausted {
            let bound = (run.final_beta * eig.eigenvectors[(mm - 1, idx)]).abs();
            if bound > 1e-8 * theta {
                return Err(Error::EigenStagnation {
                    residual: bound / theta,
                });
            }
        }
        out.push(shift + 1.0 / theta);
    }
    Ok(out)
}

/// The Jacobian-pencil eigenvalue nearest to `sigma` after deflating the
/// two-dimensional `lambda` eigenspace `span{u, iu}`, via shift-invert
/// Arnoldi on the Woodbury-factorized operator.
pub fn j_gap(problem: &Problem, pair: &Eigenpair, sigma: f64) -> Result<JGap> {
    let u = check_converged(problem, pair)?;
    let lambda = pair.lambda;
    let op = WoodburyOp::new(problem, &u, sigma)?;
    let iu = u.times_i();
    let m_inner = |a: &[f64], b: &[f64]| problem.mass_inner_raw(a, b);
    let deflate = |v: &mut Vec<f64>| {
        let cu = m_inner(&u.coeffs, v);
        let ci = m_inner(&iu.coeffs, v);
        for ((vi, ui), ii) in v.iter_mut().zip(&u.coeffs).zip(&iu.coeffs) {
            *vi -= cu * ui + ci * ii;
        }
    };
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let (mut y, _, _) = op.solve(&problem.apply_m_pad(v))?;
        deflate(&mut y);
        Ok(y)
    };

    let dim = problem.dim();
    let m = (dim - 3).min(80);
    let mut q0 = seeded_vector(dim, (dim as u64).wrapping_mul(3));
    deflate(&mut q0);
    let n0 = m_inner(&q0, &q0).sqrt();
    q0.iter_mut().for_each(|x| *x /= n0);
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut hess = vec![vec![0.0f64; m]; m + 1];
    let mut steps = 0usize;
    let mut exhausted = false;
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        // Modified Gram-Schmidt with one reorthogonalization pass; the
        // corrections accumulate into the Hessenberg entries.
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = m_inner(&w, q);
                hess[i][j] += c;
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let beta = m_inner(&w, &w).sqrt();
        steps = j + 1;
        if !beta.is_finite() {
            return Err(Error::EigenStagnation { residual: beta });
        }
        hess[j + 1][j] = beta;
        if beta < 1e-13 {
            exhausted = true;
            break;
        }
        if j + 1 == m {
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }

    let hm = DMatrix::from_fn(steps, steps, |i, j| hess[i][j]);
    let eigs = hm.clone().complex_eigenvalues();
    let mut dom = 0usize;
    for i in 1..steps {
        if eigs[i].norm() > eigs[dom].norm() {
            dom = i;
        }
    }
    let theta = eigs[dom];
    let theta_abs = theta.norm();
    if theta_abs <= 0.0 {
        return Err(Error::EigenStagnation {
            residual: theta_abs,
        });
    }
    let gap = 1.0 / theta_abs;
    let is_complex = theta.im.abs() > 1e-8 * theta_abs;
    let mu0 = sigma + theta.re / (theta_abs * theta_abs);
    let predicted_rate = (lambda - sigma).abs() / gap;

    let mut ritz_inner = None;
    if !is_complex {
        // Ritz vector via inverse iteration on the small Hessenberg block.
        let theta_re = theta.re;
        let mut hm_shift = vec![0.0f64; steps * steps];
        for i in 0..steps {
            for j in 0..steps {
                hm_shift[i * steps + j] = hm[(i, j)];
            }
            hm_shift[i * steps + i] -= theta_re * (1.0 + 1e-12) + 1e-14 * theta_abs;
        }
        let lu = dense::factorize(&hm_shift, steps).map_err(|_| Error::EigenStagnation {
            residual: theta_abs,
        })?;
        let mut x = vec![1.0; steps];
        for _ in 0..3 {
            x = lu.solve(&x);
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= nx);
        }
        let mut ritz = vec![0.0; dim];
        for (xj, q) in x.iter().zip(&basis) {
            for (ri, qi) in ritz.iter_mut().zip(q) {
                *ri += xj * qi;
            }
        }
        let nr = m_inner(&ritz, &ritz).sqrt();
        ritz.iter_mut().for_each(|v| *v /= nr);
        let ty = apply(&ritz)?;
        let diff: Vec<f64> = ty
            .iter()
            .zip(&ritz)
            .map(|(a, b)| a - theta_re * b)
            .collect();
        let rss = m_inner(&diff, &diff).sqrt();
        if !exhausted && rss > 1e-7 * theta_abs {
            return Err(Error::EigenStagnation {
                residual: rss / theta_abs,
            });
        }
        ritz_inner = Some((m_inner(&u.coeffs, &ritz), m_inner(&iu.coeffs, &ritz)));
    }

    Ok(JGap {
        mu0,
        gap,
        predicted_rate,
        is_complex,
        ritz_inner,
    })
}

/// Bundles the Hessian spectrum and the gap diagnostics for run reports.
pub fn spectral_report(
    problem: &Problem,
    pair: &Eigenpair,
    k: usize,
    sigma: f64,
) -> Result<SpectralReport> {
    let hessian_smallest = projected_hessian_eigs(problem, pair, k)?;
    let gap = j_gap(problem, pair, sigma)?;
    Ok(SpectralReport {
        lambda: pair.lambda,
        hessian_smallest,
        sigma,
        mu0: gap.mu0,
        mu0_gap: gap.gap,
        mu0_is_complex: gap.is_complex,
        predicted_rate: gap.predicted_rate,
    })
}
