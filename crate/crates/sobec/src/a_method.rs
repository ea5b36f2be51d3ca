//! Damped A-inverse iteration: globally convergent energy descent on the
//! unit-mass manifold.
//!
//! One step solves `A(u) z = M_pad u`, forms the tangent descent direction
//! `d = -u + gamma z` with `gamma = 1 / (z, u)_{L2}`, picks a step size
//! `tau in (0, 2)` and renormalizes `u + tau d`. With `tau = 1` this is the
//! plain inverse iteration. The step size is chosen by a golden-section
//! search on the energy along the retracted path, which is available in
//! closed form: both the quadratic form and the quartic terms of the energy
//! are polynomials in `tau`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linsolve;
use crate::quad::rule_degree8;
use crate::state::{Eigenpair, IterationRecord, MethodTag, Problem, SpinorField};
use crate::{assembly, mesh::ElementOrder};

/// Step-size selection strategy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauStrategy {
    /// Constant step size in `(0, 2)`.
    Fixed(f64),
    /// Golden-section search over the admissible interval.
    LineSearch,
}

/// Configuration of a damped step.
#[derive(Clone, Copy, Debug)]
pub struct AStepConfig {
    pub tau_strategy: TauStrategy,
    /// Admissible interval, a closed subinterval of `(0, 2)`.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Energy-evaluation budget of the line search.
    pub line_search_evals: usize,
}

impl Default for AStepConfig {
    fn default() -> Self {
        AStepConfig {
            tau_strategy: TauStrategy::LineSearch,
            tau_min: 0.01,
            tau_max: 1.99,
            line_search_evals: 20,
        }
    }
}

impl AStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max && self.tau_max < 2.0) {
            return Err(Error::Config(format!(
                "tau bounds must satisfy 0 < min <= max < 2, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if let TauStrategy::Fixed(tau) = self.tau_strategy {
            if !(tau > 0.0 && tau < 2.0) {
                return Err(Error::Config(format!("fixed tau must lie in (0,2), got {tau}")));
            }
        }
        Ok(())
    }
}

/// Stopping rule shared by the iteration drivers.
#[derive(Clone, Copy, Debug)]
pub struct StoppingRule {
    /// Stop when the energy decrease between successive iterates falls
    /// below this threshold.
    pub energy_diff_tol: f64,
    /// Stop when `|E - reference|` falls below `reference_tol`.
    pub reference_energy: Option<f64>,
    pub reference_tol: f64,
    /// Optional eigenvalue-residual stop (used by the J driver).
    pub residual_tol: Option<f64>,
    pub max_iters: usize,
}

impl StoppingRule {
    pub fn energy_diff(tol: f64, max_iters: usize) -> Self {
        StoppingRule {
            energy_diff_tol: tol,
            reference_energy: None,
            reference_tol: 1e-12,
            residual_tol: None,
            max_iters,
        }
    }

    pub(crate) fn reached(&self, prev_energy: f64, energy: f64) -> bool {
        if (prev_energy - energy).abs() < self.energy_diff_tol {
            return true;
        }
        if let Some(eref) = self.reference_energy {
            if (energy - eref).abs() < self.reference_tol {
                return true;
            }
        }
        false
    }
}

/// Result of a run: final state, history, and whether the iteration cap hit.
pub struct RunResult {
    pub eigenpair: Eigenpair,
    pub history: Vec<IterationRecord>,
    pub hit_iteration_cap: bool,
}

/// Plain (undamped) A-inverse iteration step.
pub fn a_step_plain(problem: &Problem, u: &SpinorField) -> Result<SpinorField> {
    let a = problem.a_matrix(u)?;
    let fact = linsolve::factorize_spd(&a)?;
    let z = fact.solve(&problem.apply_m_pad(&u.coeffs))?;
    let z = SpinorField::from_coeffs(problem.space(), z)?;
    let mut next = problem.normalize(&z)?;
    // Keep the sign aligned with the previous iterate.
    if problem.mass_inner(&next, u) < 0.0 {
        next = next.scaled(-1.0);
    }
    Ok(next)
}

/// Energy along the retracted line `tau -> (u + tau d) / ||u + tau d||`,
/// reduced to closed form. Requires unit mass of `u` and tangency of `d`.
struct LineEnergy {
    /// Quadratic-form coefficients `q0 + 2 q1 tau + q2 tau^2`.
    q: [f64; 3],
    /// Quartic coefficients `c[k] tau^k`.
    c: [f64; 5],
    /// `d^T M_pad d`; the retraction norm is `1 + tau^2 md`.
    md: f64,
}

impl LineEnergy {
    fn build(problem: &Problem, u: &SpinorField, d: &SpinorField) -> Result<LineEnergy> {
        let a_lin = problem.a_linear();
        let q0 = a_lin.bilinear(&u.coeffs, &u.coeffs);
        let q1 = a_lin.bilinear(&u.coeffs, &d.coeffs);
        let q2 = a_lin.bilinear(&d.coeffs, &d.coeffs);
        let md = problem.mass_inner(d, d);

        let p = problem.params();
        let (b11, b22, b12) = (p.beta11, p.beta22, p.beta12);
        let rule = rule_degree8();
        let ub = u.blocks();
        let db = d.blocks();
        let fields = [ub[0], ub[1], ub[2], ub[3], db[0], db[1], db[2], db[3]];
        let mut c = [0.0f64; 5];
        assembly::sweep_quadrature(problem.space(), &rule, &fields, |_t, w, f| {
            // Per-component density along the line is quadratic in tau.
            let a1 = f[0] * f[0] + f[1] * f[1];
            let b1 = 2.0 * (f[0] * f[4] + f[1] * f[5]);
            let g1 = f[4] * f[4] + f[5] * f[5];
            let a2 = f[2] * f[2] + f[3] * f[3];
            let b2 = 2.0 * (f[2] * f[6] + f[3] * f[7]);
            let g2 = f[6] * f[6] + f[7] * f[7];
            // Quartic weights: b11/4 d1^2 + b22/4 d2^2 + b12/2 d1 d2.
            let w11 = 0.25 * b11 * w;
            let w22 = 0.25 * b22 * w;
            let w12 = 0.5 * b12 * w;
            c[0] += w11 * a1 * a1 + w22 * a2 * a2 + w12 * a1 * a2;
            c[1] += w11 * 2.0 * a1 * b1 + w22 * 2.0 * a2 * b2 + w12 * (a1 * b2 + b1 * a2);
            c[2] += w11 * (b1 * b1 + 2.0 * a1 * g1)
                + w22 * (b2 * b2 + 2.0 * a2 * g2)
                + w12 * (a1 * g2 + b1 * b2 + g1 * a2);
            c[3] += w11 * 2.0 * b1 * g1 + w22 * 2.0 * b2 * g2 + w12 * (b1 * g2 + g1 * b2);
            c[4] += w11 * g1 * g1 + w22 * g2 * g2 + w12 * g1 * g2;
        })?;
        Ok(LineEnergy { q: [q0, q1, q2], c, md })
    }

    fn eval(&self, tau: f64) -> f64 {
        let m = 1.0 + tau * tau * self.md;
        let quad = self.q[0] + 2.0 * self.q[1] * tau + self.q[2] * tau * tau;
        let quart =
            self.c[0] + tau * (self.c[1] + tau * (self.c[2] + tau * (self.c[3] + tau * self.c[4])));
        0.5 * quad / m + quart / (m * m)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of `f` on `[lo, hi]` with a fixed evaluation
/// budget; returns the best evaluated point.
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, budget: usize) -> (f64, f64) {
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let mut evals = 2;
    while evals < budget {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
            if f1 < best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
            if f2 < best.1 {
                best = (x2, f2);
            }
        }
        evals += 1;
    }
    best
}

/// One damped step. Returns the new iterate, the chosen step size and the
/// tangency factor `gamma`.
pub fn a_step_damped(
    problem: &Problem,
    u: &SpinorField,
    cfg: &AStepConfig,
) -> Result<(SpinorField, f64, f64)> {
    cfg.validate()?;
    let a = problem.a_matrix(u)?;
    let fact = linsolve::factorize_spd(&a)?;
    let z = fact.solve(&problem.apply_m_pad(&u.coeffs))?;
    let z = SpinorField::from_coeffs(problem.space(), z)?;
    let zu = problem.mass_inner(&z, u);
    if zu <= 0.0 {
        return Err(Error::NonPositiveGamma { value: zu });
    }
    let gamma = 1.0 / zu;
    let d = z.scaled(gamma).axpy(-1.0, u);
    // d is tangent by construction of gamma.
    debug_assert!(problem.mass_inner(&d, u).abs() <= 1e-9);

    let tau = match cfg.tau_strategy {
        TauStrategy::Fixed(tau) => tau,
        TauStrategy::LineSearch => {
            let line = LineEnergy::build(problem, u, &d)?;
            let (tau, _) = golden_section(
                |t| line.eval(t),
                cfg.tau_min,
                cfg.tau_max,
                cfg.line_search_evals,
            );
            tau
        }
    };
    let next = problem.normalize(&u.axpy(tau, &d))?;
    Ok((next, tau, gamma))
}

/// Runs the damped A-method until the energy decrease falls below the
/// stopping threshold or the iteration cap is reached. The energy history
/// is monotonically non-increasing.
pub fn run_a_method(
    problem: &Problem,
    u0: &SpinorField,
    cfg: &AStepConfig,
    stop: &StoppingRule,
) -> Result<RunResult> {
    run_a_method_tagged(problem, u0, cfg, stop, method_tag(problem), 0)
}

pub(crate) fn method_tag(problem: &Problem) -> MethodTag {
    match problem.space().order {
        ElementOrder::P1 => MethodTag::A1,
        ElementOrder::P2 => MethodTag::A2,
    }
}

pub(crate) fn run_a_method_tagged(
    problem: &Problem,
    u0: &SpinorField,
    cfg: &AStepConfig,
    stop: &StoppingRule,
    tag: MethodTag,
    iter_offset: usize,
) -> Result<RunResult> {
    cfg.validate()?;
    let mut u = problem.normalize(u0)?;
    let mut energy = problem.energy(&u)?;
    let mut history = Vec::new();
    let mut hit_cap = true;

    for step in 0..stop.max_iters {
        let t0 = Instant::now();
        let (next, tau, _gamma) = a_step_damped(problem, &u, cfg)?;
        let next_energy = problem.energy(&next)?;
        debug_assert!(
            next_energy <= energy + 1e-12 * energy.abs().max(1.0),
            "energy increased: {energy} -> {next_energy}"
        );
        let lambda = problem.rayleigh_lambda(&next)?;
        let residual = problem.residual_norm(&next, lambda)?;
        history.push(IterationRecord {
            iter: iter_offset + step + 1,
            method: tag,
            energy: next_energy,
            lambda,
            residual,
            sigma: None,
            tau: Some(tau),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        let done = stop.reached(energy, next_energy);
        u = next;
        energy = next_energy;
        if done {
            hit_cap = false;
            break;
        }
    }

    let lambda = problem.rayleigh_lambda(&u)?;
    Ok(RunResult {
        eigenpair: Eigenpair { u, lambda },
        history,
        hit_iteration_cap: hit_cap,
    })
}
