//! Shifted J-inverse iteration with rank-two Woodbury solves.
//!
//! The shifted Jacobian splits as `C + U V` with sparse
//! `C = H(u) - sigma M_pad` and a rank-two normalization term. One step
//! factorizes `C` once and applies the Woodbury identity
//! `(C + UV)^{-1} b = z1 - Z (I + V Z)^{-1} V z1` with `z1 = C^{-1} b` and
//! `Z = C^{-1} U` (three sparse solves per iteration). Shifts may be fixed
//! or recomputed from the Rayleigh quotient and frozen after a few steps so
//! the factorization never gets arbitrarily close to singular.

use std::time::Instant;

use crate::a_method::{RunResult, StoppingRule};
use crate::error::{Error, Result};
use crate::linsolve::{self, dense, Factorization};
use crate::mesh::ElementOrder;
use crate::state::{Eigenpair, IterationRecord, MethodTag, Problem, SpinorField};

/// Spectral-shift policy of the J iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftMode {
    Fixed(f64),
    /// Recompute `sigma_n` from the Rayleigh quotient of the iterate.
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftPolicy {
    pub mode: ShiftMode,
    /// Number of leading iterations with a live adaptive shift; afterwards
    /// the last value is reused. Irrelevant for fixed shifts.
    pub freeze_after: usize,
}

impl ShiftPolicy {
    pub fn fixed(sigma: f64) -> Self {
        ShiftPolicy {
            mode: ShiftMode::Fixed(sigma),
            freeze_after: 0,
        }
    }

    pub fn adaptive(freeze_after: usize) -> Self {
        ShiftPolicy {
            mode: ShiftMode::Adaptive,
            freeze_after,
        }
    }
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        ShiftPolicy::adaptive(2)
    }
}

/// Intermediate quantities of the three-solve Woodbury scheme, kept for
/// diagnostics. The solution is `z1 - Z z2`.
#[derive(Clone, Debug)]
pub struct WoodburySolve {
    pub z1: Vec<f64>,
    pub z2: [f64; 2],
    /// Relative residual of `(C + UV) y = b` after refinement.
    pub relative_residual: f64,
}

/// Reusable application of `(C + U V)^{-1}` built on one factorization of
/// `C`; also drives the spectral shift-invert iterations.
pub struct WoodburyOp {
    pub(crate) fact: Factorization,
    u_cols: [Vec<f64>; 2],
    v_row: Vec<f64>,
    z_cols: [Vec<f64>; 2],
    cap: dense::DenseLu,
    norm_c: f64,
}

impl WoodburyOp {
    pub fn new(problem: &Problem, u: &SpinorField, sigma: f64) -> Result<Self> {
        let parts = problem.j_parts(u, sigma)?;
        let norm_c = parts.c.norm_inf();
        let fact = match linsolve::factorize(&parts.c) {
            Ok(f) => f,
            Err(Error::SingularMatrix { pivot }) => {
                return Err(Error::ShiftOnSpectrum { sigma, pivot })
            }
            Err(e) => return Err(e),
        };
        let z0 = fact.solve(&parts.factors.u_cols[0])?;
        let z1 = fact.solve(&parts.factors.u_cols[1])?;
        // Capacitance `I + V Z`; both rows of V coincide.
        let v_row = parts.factors.v_rows[0].clone();
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let a0 = dot(&v_row, &z0);
        let a1 = dot(&v_row, &z1);
        let cap_mat = [1.0 + a0, a1, a0, 1.0 + a1];
        let cap = dense::factorize(&cap_mat, 2).map_err(|_| Error::ShiftOnSpectrum {
            sigma,
            pivot: (1.0 + a0 + a1).abs(),
        })?;
        Ok(WoodburyOp {
            fact,
            u_cols: parts.factors.u_cols.clone(),
            v_row,
            z_cols: [z0, z1],
            cap,
            norm_c,
        })
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// `(C + UV) x`.
    fn apply_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.fact.matrix().mul_vec(x);
        let s = Self::dot(&self.v_row, x);
        for (col, z2k) in self.u_cols.iter().zip([s, s]) {
            for (yi, ci) in y.iter_mut().zip(col) {
                *yi += z2k * ci;
            }
        }
        y
    }

    fn raw_woodbury(&self, b: &[f64]) -> Result<(Vec<f64>, [f64; 2])> {
        let z1 = self.fact.solve(b)?;
        let s = Self::dot(&self.v_row, &z1);
        let z2v = self.cap.solve(&[s, s]);
        let mut y = z1;
        for (col, &z2k) in self.z_cols.iter().zip(&[z2v[0], z2v[1]]) {
            for (yi, ci) in y.iter_mut().zip(col) {
                *yi -= z2k * ci;
            }
        }
        Ok((y, [z2v[0], z2v[1]]))
    }

    /// Solves `(C + UV) y = b` with one refinement pass; returns the
    /// solution and the achieved relative residual.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, [f64; 2], f64)> {
        let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_b == 0.0 {
            return Ok((vec![0.0; b.len()], [0.0; 2], 0.0));
        }
        let (mut y, z2) = self.raw_woodbury(b)?;
        let mut residual = f64::INFINITY;
        for _ in 0..2 {
            let fy = self.apply_forward(&y);
            let r: Vec<f64> = b.iter().zip(&fy).map(|(bi, fi)| bi - fi).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
            if !rn.is_finite() {
                return Err(Error::SingularMatrix {
                    pivot: self.fact.pivot_estimate,
                });
            }
            if rn >= residual * 0.5 {
                residual = residual.min(rn);
                break;
            }
            residual = rn;
            if residual <= 1e-13 {
                break;
            }
            let (dy, _) = self.raw_woodbury(&r)?;
            for (yi, di) in y.iter_mut().zip(&dy) {
                *yi += di;
            }
        }
        // The residual cannot be certified below the floor of evaluating
        // (C+UV) y in double precision; widen the bound accordingly for
        // near-singular shifts.
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let floor = 32.0 * f64::EPSILON * self.norm_c * ny / norm_b;
        debug_assert!(
            residual <= 1e-9_f64.max(floor),
            "woodbury residual {residual:.3e} above bound {:.3e}",
            1e-9_f64.max(floor)
        );
        Ok((y, z2, residual))
    }
}

/// One shifted J-step: Woodbury solve, sign alignment with the previous
/// iterate, renormalization.
pub fn j_step(
    problem: &Problem,
    u: &SpinorField,
    sigma: f64,
) -> Result<(SpinorField, WoodburySolve)> {
    let op = WoodburyOp::new(problem, u, sigma)?;
    j_step_with(problem, &op, u)
}

pub(crate) fn j_step_with(
    problem: &Problem,
    op: &WoodburyOp,
    u: &SpinorField,
) -> Result<(SpinorField, WoodburySolve)> {
    let b = problem.apply_m_pad(&u.coeffs);
    let (y, z2, relative_residual) = op.solve(&b)?;
    let mut y = SpinorField::from_coeffs(problem.space(), y)?;
    // Realize sgn(lambda - sigma) a posteriori: flip if the new direction
    // opposes the old one. Densities are unaffected either way.
    if problem.mass_inner(&y, u) < 0.0 {
        y = y.scaled(-1.0);
    }
    let next = problem.normalize(&y)?;
    Ok((
        next,
        WoodburySolve {
            z1: Vec::new(),
            z2,
            relative_residual,
        },
    ))
}

/// Phase-locked J-step: the update of the auxiliary iteration whose global
/// phase is pinned to a reference state. The raw (unnormalized) solve fixes
/// the complex correlation with the reference; its unit complex factor
/// multiplies the normalized step.
pub fn j_step_phase_locked(
    problem: &Problem,
    u_ref: &SpinorField,
    u: &SpinorField,
    sigma: f64,
) -> Result<SpinorField> {
    let op = WoodburyOp::new(problem, u, sigma)?;
    let b = problem.apply_m_pad(&u.coeffs);
    let (y, _, _) = op.solve(&b)?;
    let y = SpinorField::from_coeffs(problem.space(), y)?;
    // Complex correlation of the reference with the raw solve:
    // re = (u_ref, y)_M, im = -(i u_ref, y)_M.
    let re = problem.mass_inner(u_ref, &y);
    let im = -problem.mass_inner(&u_ref.times_i(), &y);
    let normalized = problem.normalize(&y)?;
    if re == 0.0 && im == 0.0 {
        return Ok(normalized);
    }
    Ok(normalized.phase_rotated(im.atan2(re)))
}

fn j_tag(problem: &Problem) -> MethodTag {
    match problem.space().order {
        ElementOrder::P1 => MethodTag::J1,
        ElementOrder::P2 => MethodTag::J2,
    }
}

/// Runs the shifted J-method. Adaptive shifts follow the Rayleigh quotient
/// for `freeze_after` iterations and stay frozen afterwards. A shift that
/// lands on the spectrum is retried once with a relative `1e-8`
/// perturbation; an energy increase beyond `1e-6` for three consecutive
/// steps aborts with diagnostics.
pub fn run_j_method(
    problem: &Problem,
    u0: &SpinorField,
    policy: &ShiftPolicy,
    stop: &StoppingRule,
) -> Result<JRunResult> {
    run_j_method_tagged(problem, u0, policy, stop, 0)
}

/// J-run result: the shared run data plus the last shift in effect.
pub struct JRunResult {
    pub run: RunResult,
    pub final_sigma: f64,
    /// Value at which an adaptive shift was frozen, if it was.
    pub frozen_sigma: Option<f64>,
}

pub(crate) fn run_j_method_tagged(
    problem: &Problem,
    u0: &SpinorField,
    policy: &ShiftPolicy,
    stop: &StoppingRule,
    iter_offset: usize,
) -> Result<JRunResult> {
    let tag = j_tag(problem);
    let mut u = problem.normalize(u0)?;
    let mut energy = problem.energy(&u)?;
    let mut history = Vec::new();
    let mut hit_cap = true;
    let mut sigma = match policy.mode {
        ShiftMode::Fixed(s) => s,
        ShiftMode::Adaptive => problem.rayleigh_lambda(&u)?,
    };
    let mut frozen: Option<f64> = None;
    let mut energy_increases = 0usize;

    for step in 0..stop.max_iters {
        if let ShiftMode::Adaptive = policy.mode {
            if step < policy.freeze_after {
                sigma = problem.rayleigh_lambda(&u)?;
            } else if frozen.is_none() {
                frozen = Some(sigma);
            }
        }
        let t0 = Instant::now();
        let stepped = match j_step(problem, &u, sigma) {
            Ok(res) => res,
            Err(Error::ShiftOnSpectrum { .. }) => {
                let nudged = sigma * (1.0 + 1e-8);
                j_step(problem, &u, nudged)?
            }
            Err(e) => return Err(e),
        };
        let (next, _solve) = stepped;
        let next_energy = problem.energy(&next)?;
        if next_energy > energy + 1e-6 {
            energy_increases += 1;
            if energy_increases >= 3 {
                return Err(Error::Diverged {
                    energy_increase: next_energy - energy,
                });
            }
        } else {
            energy_increases = 0;
        }
        let lambda = problem.rayleigh_lambda(&next)?;
        let residual = problem.residual_norm(&next, lambda)?;
        history.push(IterationRecord {
            iter: iter_offset + step + 1,
            method: tag,
            energy: next_energy,
            lambda,
            residual,
            sigma: Some(sigma),
            tau: None,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        let mut done = stop.reached(energy, next_energy);
        if let Some(rtol) = stop.residual_tol {
            if residual < rtol {
                done = true;
            }
        }
        u = next;
        energy = next_energy;
        if done {
            hit_cap = false;
            break;
        }
    }

    let lambda = problem.rayleigh_lambda(&u)?;
    Ok(JRunResult {
        run: RunResult {
            eigenpair: Eigenpair { u, lambda },
            history,
            hit_iteration_cap: hit_cap,
        },
        final_sigma: sigma,
        frozen_sigma: frozen,
    })
}

