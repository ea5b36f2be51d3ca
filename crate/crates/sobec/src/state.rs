//! The discrete spinor state and its scalar functionals: mass, energy,
//! Rayleigh eigenvalue, residual, quotient distance modulo global phase,
//! and particle densities.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    self, assemble_constants, ConstantOperators, JParts, PhysicsParams, WeightedOperators,
};
use crate::error::{Error, Result};
use crate::linsolve::{self, Factorization};
use crate::mesh::{FeSpace, SpaceKey};
use crate::quad::rule_degree8;
use crate::sparse::{block_compose, CsrMatrix};

/// Discrete two-component state: a real vector of length `4N` in block order
/// `[u1R, u1I, u2R, u2I]` over interior DOFs. Iterations keep the mass
/// `u^T M_pad u` at one.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinorField {
    key: SpaceKey,
    n: usize,
    pub coeffs: Vec<f64>,
}

impl SpinorField {
    pub fn from_coeffs(space: &FeSpace, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 4 * space.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: 4 * space.n_dofs,
                got: coeffs.len(),
            });
        }
        Ok(SpinorField {
            key: space.key(),
            n: space.n_dofs,
            coeffs,
        })
    }

    pub fn zeros(space: &FeSpace) -> Self {
        SpinorField {
            key: space.key(),
            n: space.n_dofs,
            coeffs: vec![0.0; 4 * space.n_dofs],
        }
    }

    pub fn key(&self) -> SpaceKey {
        self.key
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.n..(k + 1) * self.n]
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        let (a, rest) = self.coeffs.split_at(self.n);
        let (b, rest) = rest.split_at(self.n);
        let (c, d) = rest.split_at(self.n);
        [a, b, c, d]
    }

    /// Multiplication by the imaginary unit: `(u1, u2) -> (i u1, i u2)`.
    pub fn times_i(&self) -> Self {
        let n = self.n;
        let mut out = vec![0.0; 4 * n];
        for k in [0, 2] {
            for j in 0..n {
                out[k * n + j] = -self.coeffs[(k + 1) * n + j];
                out[(k + 1) * n + j] = self.coeffs[k * n + j];
            }
        }
        SpinorField {
            key: self.key,
            n,
            coeffs: out,
        }
    }

    /// Global phase rotation `u -> exp(i omega) u`.
    pub fn phase_rotated(&self, omega: f64) -> Self {
        let (s, c) = omega.sin_cos();
        let n = self.n;
        let mut out = vec![0.0; 4 * n];
        for k in [0, 2] {
            for j in 0..n {
                let re = self.coeffs[k * n + j];
                let im = self.coeffs[(k + 1) * n + j];
                out[k * n + j] = c * re - s * im;
                out[(k + 1) * n + j] = s * re + c * im;
            }
        }
        SpinorField {
            key: self.key,
            n,
            coeffs: out,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x *= alpha);
        out
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &SpinorField) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
        out
    }
}

/// Eigenvalue estimate attached to a state; at unit mass the Rayleigh
/// functional `u^T A(u) u`.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub u: SpinorField,
    pub lambda: f64,
}

/// Method tag in iteration histories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodTag {
    A1,
    A2,
    J1,
    J2,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodTag::A1 => "A1",
            MethodTag::A2 => "A2",
            MethodTag::J1 => "J1",
            MethodTag::J2 => "J2",
        };
        f.write_str(s)
    }
}

/// One solver step in a run history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub method: MethodTag,
    pub energy: f64,
    pub lambda: f64,
    pub residual: f64,
    /// Spectral shift (J-method only).
    pub sigma: Option<f64>,
    /// Damping step size (A-method only).
    pub tau: Option<f64>,
    pub wall_ms: f64,
}

/// Discretized problem: space, physics, constant operators and the reusable
/// mass factorization. All functional evaluations go through this context.
pub struct Problem {
    space: FeSpace,
    params: PhysicsParams,
    ops: ConstantOperators,
    m_pad: CsrMatrix,
    /// State-independent part of `A` (kinetic + potential + spin coupling).
    a_lin: CsrMatrix,
    /// `S + M` over interior DOFs; the per-component H1 inner product.
    h1: CsrMatrix,
    mass_solver: Factorization,
}

impl Problem {
    pub fn new(space: FeSpace, params: PhysicsParams) -> Result<Self> {
        params.validate()?;
        let ops = assemble_constants(&space, &params)?;
        let m_pad = assembly::mass_padded(&ops.m);
        let a_lin = assemble_a_linear(&ops, &params);
        let h1 = ops.s.add_scaled(1.0, &ops.m)?;
        let mass_solver = linsolve::factorize_spd(&ops.m)?;
        Ok(Problem {
            space,
            params,
            ops,
            m_pad,
            a_lin,
            h1,
            mass_solver,
        })
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn ops(&self) -> &ConstantOperators {
        &self.ops
    }

    pub fn m_pad(&self) -> &CsrMatrix {
        &self.m_pad
    }

    pub fn a_linear(&self) -> &CsrMatrix {
        &self.a_lin
    }

    pub fn n(&self) -> usize {
        self.space.n_dofs
    }

    pub fn dim(&self) -> usize {
        4 * self.space.n_dofs
    }

    pub fn check_space(&self, u: &SpinorField) -> Result<()> {
        if u.key() != self.space.key() {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    /// `x^T M_pad y` over raw coefficient vectors.
    pub fn mass_inner_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for k in 0..4 {
            acc += self
                .ops
                .m
                .bilinear(&x[k * n..(k + 1) * n], &y[k * n..(k + 1) * n]);
        }
        acc
    }

    pub fn mass_inner(&self, x: &SpinorField, y: &SpinorField) -> f64 {
        self.mass_inner_raw(&x.coeffs, &y.coeffs)
    }

    /// Squared L2 mass of the state.
    pub fn mass_sq(&self, u: &SpinorField) -> f64 {
        self.mass_inner_raw(&u.coeffs, &u.coeffs)
    }

    pub fn apply_m_pad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; 4 * n];
        for k in 0..4 {
            self.ops
                .m
                .mul_vec_acc(1.0, &x[k * n..(k + 1) * n], &mut y[k * n..(k + 1) * n]);
        }
        y
    }

    /// Solves `M_pad z = r` blockwise with the cached mass factorization.
    pub fn apply_m_pad_inv(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let mut z = vec![0.0; 4 * n];
        for k in 0..4 {
            let zk = self.mass_solver.solve(&r[k * n..(k + 1) * n])?;
            z[k * n..(k + 1) * n].copy_from_slice(&zk);
        }
        Ok(z)
    }

    /// Rescales to unit mass.
    pub fn normalize(&self, u: &SpinorField) -> Result<SpinorField> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        if mass <= 0.0 {
            return Err(Error::ZeroField);
        }
        Ok(u.scaled(1.0 / mass.sqrt()))
    }

    /// Nodal interpolation of the reference initial guess
    /// `u1 = (1/2)(x-1)^2(y-1)^2 exp(-i(x^2+y^2)/2)`,
    /// `u2 =     (x-1)^2(y-1)^2 exp(-i(x^2+y^2)/2)`, normalized to unit mass.
    pub fn initial_state(&self) -> Result<SpinorField> {
        let n = self.n();
        let mut coeffs = vec![0.0; 4 * n];
        for (dof, &node) in self.space.dof_nodes.iter().enumerate() {
            let [x, y] = self.space.nodes[node];
            let amp = (x - 1.0) * (x - 1.0) * (y - 1.0) * (y - 1.0);
            let arg = 0.5 * (x * x + y * y);
            let (s, c) = arg.sin_cos();
            coeffs[dof] = 0.5 * amp * c;
            coeffs[n + dof] = -0.5 * amp * s;
            coeffs[2 * n + dof] = amp * c;
            coeffs[3 * n + dof] = -amp * s;
        }
        self.normalize(&SpinorField::from_coeffs(&self.space, coeffs)?)
    }

    /// Quartic density integrals `(int |u1|^4, int |u2|^4, int |u1|^2 |u2|^2)`.
    pub fn quartic_integrals(&self, u: &SpinorField) -> Result<(f64, f64, f64)> {
        self.check_space(u)?;
        let rule = rule_degree8();
        let (mut i11, mut i22, mut i12) = (0.0, 0.0, 0.0);
        assembly::sweep_quadrature(&self.space, &rule, &u.blocks(), |_t, w, f| {
            let d1 = f[0] * f[0] + f[1] * f[1];
            let d2 = f[2] * f[2] + f[3] * f[3];
            i11 += w * d1 * d1;
            i22 += w * d2 * d2;
            i12 += w * d1 * d2;
        })?;
        Ok((i11, i22, i12))
    }

    /// Total energy of the state (no unit-mass requirement).
    pub fn energy(&self, u: &SpinorField) -> Result<f64> {
        self.check_space(u)?;
        let quad = 0.5 * self.a_lin.bilinear(&u.coeffs, &u.coeffs);
        let (i11, i22, i12) = self.quartic_integrals(u)?;
        let p = &self.params;
        Ok(quad + 0.25 * p.beta11 * i11 + 0.25 * p.beta22 * i22 + 0.5 * p.beta12 * i12)
    }

    /// Rayleigh functional `u^T A(u) u` for unit-mass states.
    pub fn rayleigh_lambda(&self, u: &SpinorField) -> Result<f64> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized { mass });
        }
        let quad = self.a_lin.bilinear(&u.coeffs, &u.coeffs);
        let (i11, i22, i12) = self.quartic_integrals(u)?;
        let p = &self.params;
        Ok(quad + (p.beta11 * i11 + p.beta22 * i22 + 2.0 * p.beta12 * i12) / mass)
    }

    /// `A(u) u` without assembling the state-dependent matrix.
    pub fn apply_a_to_self(&self, u: &SpinorField) -> Result<Vec<f64>> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        if mass <= 0.0 {
            return Err(Error::ZeroField);
        }
        let mut y = self.a_lin.mul_vec(&u.coeffs);
        let nl = nonlinear_action(&self.space, &self.params, u, mass)?;
        for (yi, ni) in y.iter_mut().zip(&nl) {
            *yi += ni;
        }
        Ok(y)
    }

    /// Mass-preconditioned eigenvalue residual
    /// `|| M_pad^{-1} (A(u) u - lambda M_pad u) ||_2`.
    pub fn residual_norm(&self, u: &SpinorField, lambda: f64) -> Result<f64> {
        let mut r = self.apply_a_to_self(u)?;
        let mu = self.apply_m_pad(&u.coeffs);
        for (ri, mi) in r.iter_mut().zip(&mu) {
            *ri -= lambda * mi;
        }
        let z = self.apply_m_pad_inv(&r)?;
        Ok(z.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Per-component H1 inner product of two raw vectors (full `S + M`
    /// gradient-plus-value form).
    pub fn h1_inner_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for k in 0..4 {
            acc += self
                .h1
                .bilinear(&x[k * n..(k + 1) * n], &y[k * n..(k + 1) * n]);
        }
        acc
    }

    /// Distance modulo global phase, `min_omega ||exp(i omega) u - v||_{H1}`.
    /// The optimal phase maximizes the complex H1 correlation
    /// `a + i b = <u, v>_{H1}`, so it is available in closed form; the
    /// distance is then evaluated on the explicit difference vector, which
    /// stays accurate down to machine precision on a common orbit.
    pub fn quotient_distance(&self, u: &SpinorField, v: &SpinorField) -> Result<f64> {
        self.check_space(u)?;
        self.check_space(v)?;
        let a = self.h1_inner_raw(&u.coeffs, &v.coeffs);
        let b = self.h1_inner_raw(&u.times_i().coeffs, &v.coeffs);
        let omega = if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a)
        };
        let diff = u.phase_rotated(omega).axpy(-1.0, v);
        Ok(self.h1_inner_raw(&diff.coeffs, &diff.coeffs).max(0.0).sqrt())
    }

    /// Nodal densities `(|u1|^2, |u2|^2)` over all mesh nodes (boundary
    /// values are zero).
    pub fn density(&self, u: &SpinorField) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_space(u)?;
        let b = u.blocks();
        let r1 = self.space.scatter_to_nodes(b[0])?;
        let i1 = self.space.scatter_to_nodes(b[1])?;
        let r2 = self.space.scatter_to_nodes(b[2])?;
        let i2 = self.space.scatter_to_nodes(b[3])?;
        let d1 = r1.iter().zip(&i1).map(|(a, b)| a * a + b * b).collect();
        let d2 = r2.iter().zip(&i2).map(|(a, b)| a * a + b * b).collect();
        Ok((d1, d2))
    }

    /// `L2` distance between the densities of two states.
    pub fn density_distance(&self, u: &SpinorField, v: &SpinorField) -> Result<f64> {
        self.check_space(u)?;
        self.check_space(v)?;
        let rule = rule_degree8();
        let ub = u.blocks();
        let vb = v.blocks();
        let fields = [ub[0], ub[1], ub[2], ub[3], vb[0], vb[1], vb[2], vb[3]];
        let mut acc = 0.0;
        assembly::sweep_quadrature(&self.space, &rule, &fields, |_t, w, f| {
            let du1 = f[0] * f[0] + f[1] * f[1] - (f[4] * f[4] + f[5] * f[5]);
            let du2 = f[2] * f[2] + f[3] * f[3] - (f[6] * f[6] + f[7] * f[7]);
            acc += w * (du1 * du1 + du2 * du2);
        })?;
        Ok(acc.sqrt())
    }

    /// Weighted mass matrices of the state.
    pub fn weighted(&self, u: &SpinorField) -> Result<WeightedOperators> {
        self.check_space(u)?;
        assembly::assemble_weighted(&self.space, u.blocks())
    }

    /// Assembled `A(u)` matrix.
    pub fn a_matrix(&self, u: &SpinorField) -> Result<CsrMatrix> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        let w = self.weighted(u)?;
        assembly::assemble_a_matrix(&self.ops, &self.params, &w, mass)
    }

    /// Assembled energy Hessian `H(u)` (symmetric).
    pub fn hessian(&self, u: &SpinorField) -> Result<CsrMatrix> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        if mass <= 0.0 {
            return Err(Error::ZeroField);
        }
        let w = self.weighted(u)?;
        assembly::assemble_hessian(&self.ops, &self.params, &w, mass)
    }

    /// Woodbury parts `C + U V` of the shifted Jacobian.
    pub fn j_parts(&self, u: &SpinorField, sigma: f64) -> Result<JParts> {
        self.check_space(u)?;
        let mass = self.mass_sq(u);
        let w = self.weighted(u)?;
        assembly::assemble_j_parts(
            &self.ops,
            &self.params,
            &w,
            u.blocks(),
            mass,
            &self.m_pad,
            sigma,
        )
    }
}

/// State-independent `4N x 4N` part of `A`.
fn assemble_a_linear(ops: &ConstantOperators, params: &PhysicsParams) -> CsrMatrix {
    let n = ops.m.nrows();
    let kin1 = ops.s.scaled(0.5).add_scaled(1.0, &ops.p1).expect("shape");
    let kin2 = ops.s.scaled(0.5).add_scaled(1.0, &ops.p2).expect("shape");
    let d1 = kin1.add_scaled(0.5 * params.delta, &ops.m).expect("shape");
    let d2 = kin2.add_scaled(-0.5 * params.delta, &ops.m).expect("shape");
    let k0 = params.k0;
    let om = 0.5 * params.omega;
    block_compose(
        4,
        n,
        &[
            (0, 0, 1.0, &d1),
            (0, 1, -k0, &ops.l),
            (1, 0, k0, &ops.l),
            (1, 1, 1.0, &d1),
            (2, 2, 1.0, &d2),
            (2, 3, k0, &ops.l),
            (3, 2, -k0, &ops.l),
            (3, 3, 1.0, &d2),
            (0, 2, om, &ops.m),
            (1, 3, om, &ops.m),
            (2, 0, om, &ops.m),
            (3, 1, om, &ops.m),
        ],
    )
}

/// Load vector of the nonlinear part of `A(u)` applied to `u` itself,
/// assembled directly by quadrature.
fn nonlinear_action(
    space: &FeSpace,
    params: &PhysicsParams,
    u: &SpinorField,
    mass_sq: f64,
) -> Result<Vec<f64>> {
    use crate::mesh::shape_functions;
    let n = space.n_dofs;
    let nloc = space.order.nodes_per_triangle();
    let rule = rule_degree8();
    let nodal: Vec<Vec<f64>> = u
        .blocks()
        .iter()
        .map(|c| space.scatter_to_nodes(c))
        .collect::<Result<_>>()?;
    let table: Vec<(f64, Vec<f64>)> = rule
        .iter()
        .map(|q| (q.w, shape_functions(space.order, q.l1, q.l2).0))
        .collect();
    let inv = 1.0 / mass_sq;
    let (b11, b12, b22) = (params.beta11, params.beta12, params.beta22);

    let mut out = vec![0.0; 4 * n];
    let area = space.triangle_area();
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        for (w0, phi) in &table {
            let w = w0 * area;
            let mut f = [0.0f64; 4];
            for (k, nf) in nodal.iter().enumerate() {
                let mut acc = 0.0;
                for l in 0..nloc {
                    acc += phi[l] * nf[tri[l]];
                }
                f[k] = acc;
            }
            let d1 = f[0] * f[0] + f[1] * f[1];
            let d2 = f[2] * f[2] + f[3] * f[3];
            let w1 = inv * (b11 * d1 + b12 * d2);
            let w2 = inv * (b12 * d1 + b22 * d2);
            for (l, &node) in tri.iter().enumerate() {
                let Some(dof) = space.interior_map[node] else { continue };
                let base = w * phi[l];
                out[dof] += base * w1 * f[0];
                out[n + dof] += base * w1 * f[1];
                out[2 * n + dof] += base * w2 * f[2];
                out[3 * n + dof] += base * w2 * f[3];
            }
        }
    }
    Ok(out)
}
