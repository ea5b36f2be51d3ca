//! Finite-element assembly of all constant and state-dependent operators.
//!
//! The discrete state is a real vector of length `4N` in the block order
//! `[u1R, u1I, u2R, u2I]` over interior DOFs. All operators are assembled as
//! sparse blocks over this layout:
//!
//! - constant blocks `S` (stiffness), `M` (mass), `P1`, `P2` (potential) and
//!   `L` (first derivative in x), each `N x N`;
//! - density-weighted mass matrices for the nonlinear terms;
//! - the `4N x 4N` linearized operator `A(u)`, the energy Hessian
//!   `H(u) = A(u) + I1(u)`, and the shifted Jacobian in Woodbury form
//!   `C + U V` with `C = H - sigma M_pad` and a rank-two `U V` carrying the
//!   normalization derivative.
//!
//! The nonlinear weights are divided by `||u||_{L^2}^2`, which makes `A`
//! invariant under real scaling of `u`; the iterations keep that norm at one.

use crate::error::{Error, Result};
use crate::mesh::{shape_functions, ElementOrder, FeSpace};
use crate::quad::{rule_degree4, rule_degree8, QuadPoint};
use crate::sparse::{block_compose, CooBuilder, CsrMatrix};

use serde::{Deserialize, Serialize};

/// Optional trapping potential added on top of the Dirichlet box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtraPotential {
    /// `V(x,y) = (gamma_x^2 x^2 + gamma_y^2 y^2) / 2` applied to both
    /// components.
    Harmonic { gamma_x: f64, gamma_y: f64 },
}

impl ExtraPotential {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            ExtraPotential::Harmonic { gamma_x, gamma_y } => {
                0.5 * (gamma_x * gamma_x * x * x + gamma_y * gamma_y * y * y)
            }
        }
    }
}

/// Physical parameters of the two-component condensate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Detuning.
    pub delta: f64,
    /// Rabi frequency.
    pub omega: f64,
    /// Raman wave number (spin-orbit strength).
    pub k0: f64,
    pub beta11: f64,
    pub beta12: f64,
    pub beta22: f64,
    /// Shift both potentials by `(|delta| + |omega| + 2 k0^2) / 2` so the
    /// linearized operator stays coercive.
    pub potential_shift_enabled: bool,
    #[serde(default)]
    pub extra_potential: Option<ExtraPotential>,
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta11 < 0.0 || self.beta12 < 0.0 || self.beta22 < 0.0 {
            return Err(Error::Config(format!(
                "interaction strengths must be nonnegative (got {}, {}, {})",
                self.beta11, self.beta12, self.beta22
            )));
        }
        Ok(())
    }

    /// Constant part of the effective potential.
    pub fn potential_shift(&self) -> f64 {
        if self.potential_shift_enabled {
            0.5 * (self.delta.abs() + self.omega.abs() + 2.0 * self.k0 * self.k0)
        } else {
            0.0
        }
    }

    /// Effective potentials of the two components at a point.
    pub fn potential(&self, x: f64, y: f64) -> (f64, f64) {
        let mut v = self.potential_shift();
        if let Some(extra) = &self.extra_potential {
            v += extra.eval(x, y);
        }
        (v, v)
    }

    fn has_extra_potential(&self) -> bool {
        self.extra_potential.is_some()
    }
}

/// State-independent operators over interior DOFs.
#[derive(Clone, Debug)]
pub struct ConstantOperators {
    /// Stiffness `(grad phi_i, grad phi_j)`.
    pub s: CsrMatrix,
    /// Mass `(phi_i, phi_j)`.
    pub m: CsrMatrix,
    /// Potential matrices per component.
    pub p1: CsrMatrix,
    pub p2: CsrMatrix,
    /// First-derivative matrix `(phi_i, d_x phi_j)`; exactly antisymmetric on
    /// interior DOFs.
    pub l: CsrMatrix,
}

/// Density-weighted mass matrices of the current state. `m_abs*` carry the
/// full densities `|u_k|^2`; the rest are the real/imaginary cross weights
/// of the Hessian part `I1`.
#[derive(Clone, Debug)]
pub struct WeightedOperators {
    pub m_abs_u1: CsrMatrix,
    pub m_abs_u2: CsrMatrix,
    pub m_u1r_u1r: CsrMatrix,
    pub m_u1i_u1i: CsrMatrix,
    pub m_u1r_u1i: CsrMatrix,
    pub m_u2r_u2r: CsrMatrix,
    pub m_u2i_u2i: CsrMatrix,
    pub m_u2r_u2i: CsrMatrix,
    pub m_u1r_u2r: CsrMatrix,
    pub m_u1r_u2i: CsrMatrix,
    pub m_u1i_u2r: CsrMatrix,
    pub m_u1i_u2i: CsrMatrix,
}

/// Rank-two factorization of the normalization-derivative term `I2`:
/// the discrete term equals `U * V`.
#[derive(Clone, Debug)]
pub struct RankTwoFactors {
    /// Columns of the `4N x 2` left factor.
    pub u_cols: [Vec<f64>; 2],
    /// Rows of the `2 x 4N` right factor (both equal `(M_pad u)^T`).
    pub v_rows: [Vec<f64>; 2],
}

impl RankTwoFactors {
    /// `y += (U V) x`.
    pub fn apply_acc(&self, x: &[f64], y: &mut [f64]) {
        for (col, row) in self.u_cols.iter().zip(&self.v_rows) {
            let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            for (yi, ci) in y.iter_mut().zip(col) {
                *yi += s * ci;
            }
        }
    }
}

/// Shifted Jacobian in Woodbury form: the operator is `c + U V`.
#[derive(Clone, Debug)]
pub struct JParts {
    pub c: CsrMatrix,
    pub factors: RankTwoFactors,
}

impl JParts {
    /// `(C + U V) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.c.mul_vec(x);
        self.factors.apply_acc(x, &mut y);
        y
    }
}

// Geometry of one triangle: physical gradients are `inv(J)^T grad_ref`.
struct TriGeometry {
    inv_jt: [[f64; 2]; 2],
    area: f64,
}

fn tri_geometry(space: &FeSpace, tri: &[usize]) -> TriGeometry {
    let a = space.nodes[tri[0]];
    let b = space.nodes[tri[1]];
    let c = space.nodes[tri[2]];
    let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    // inv(J)^T = adj(J)^T / det
    let inv_jt = [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ];
    TriGeometry {
        inv_jt,
        area: 0.5 * det.abs(),
    }
}

fn physical_point(space: &FeSpace, tri: &[usize], q: &QuadPoint) -> [f64; 2] {
    let a = space.nodes[tri[0]];
    let b = space.nodes[tri[1]];
    let c = space.nodes[tri[2]];
    let l0 = 1.0 - q.l1 - q.l2;
    [
        l0 * a[0] + q.l1 * b[0] + q.l2 * c[0],
        l0 * a[1] + q.l1 * b[1] + q.l2 * c[1],
    ]
}

/// Basis values and physical gradients at the quadrature points of the
/// reference triangle (gradients still need the per-triangle `inv_jt`).
struct BasisTable {
    rule: Vec<QuadPoint>,
    phi: Vec<Vec<f64>>,
    grad_ref: Vec<Vec<[f64; 2]>>,
}

fn basis_table(order: ElementOrder, rule: Vec<QuadPoint>) -> BasisTable {
    let mut phi = Vec::with_capacity(rule.len());
    let mut grad_ref = Vec::with_capacity(rule.len());
    for q in &rule {
        let (p, g) = shape_functions(order, q.l1, q.l2);
        phi.push(p);
        grad_ref.push(g);
    }
    BasisTable { rule, phi, grad_ref }
}

/// Index map used during assembly: interior DOFs only, or all nodes.
#[derive(Clone, Copy)]
enum DofMap<'a> {
    Interior(&'a [Option<usize>]),
    AllNodes,
}

impl DofMap<'_> {
    fn map(&self, node: usize) -> Option<usize> {
        match self {
            DofMap::Interior(m) => m[node],
            DofMap::AllNodes => Some(node),
        }
    }
}

fn assemble_constants_impl(
    space: &FeSpace,
    params: &PhysicsParams,
    dofs: DofMap<'_>,
    dim: usize,
) -> ConstantOperators {
    let nloc = space.order.nodes_per_triangle();
    let table = basis_table(space.order, rule_degree4());
    // Potential integrands reach degree 2*order + deg(V); use the fine rule
    // whenever a non-constant potential is present.
    let pot_table = if params.has_extra_potential() {
        Some(basis_table(space.order, rule_degree8()))
    } else {
        None
    };
    let shift = params.potential_shift();

    let cap = space.n_triangles() * nloc * nloc;
    let mut bs = CooBuilder::with_capacity(dim, dim, cap);
    let mut bm = CooBuilder::with_capacity(dim, dim, cap);
    let mut bl = CooBuilder::with_capacity(dim, dim, cap);
    let mut bp = CooBuilder::with_capacity(dim, dim, cap);

    let mut grad = vec![[0.0f64; 2]; nloc];
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        let geo = tri_geometry(space, tri);
        let mut es = vec![0.0; nloc * nloc];
        let mut em = vec![0.0; nloc * nloc];
        let mut el = vec![0.0; nloc * nloc];
        let mut ep = vec![0.0; nloc * nloc];
        for (qi, q) in table.rule.iter().enumerate() {
            let w = q.w * geo.area;
            let phi = &table.phi[qi];
            for (l, gr) in table.grad_ref[qi].iter().enumerate() {
                grad[l] = [
                    geo.inv_jt[0][0] * gr[0] + geo.inv_jt[0][1] * gr[1],
                    geo.inv_jt[1][0] * gr[0] + geo.inv_jt[1][1] * gr[1],
                ];
            }
            for i in 0..nloc {
                for j in 0..nloc {
                    es[i * nloc + j] += w * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
                    em[i * nloc + j] += w * phi[i] * phi[j];
                    el[i * nloc + j] += w * phi[i] * grad[j][0];
                }
            }
        }
        match &pot_table {
            None => {
                for k in 0..nloc * nloc {
                    ep[k] = shift * em[k];
                }
            }
            Some(tbl) => {
                for (qi, q) in tbl.rule.iter().enumerate() {
                    let w = q.w * geo.area;
                    let p = physical_point(space, tri, q);
                    let (v1, _) = params.potential(p[0], p[1]);
                    let phi = &tbl.phi[qi];
                    for i in 0..nloc {
                        for j in 0..nloc {
                            ep[i * nloc + j] += w * v1 * phi[i] * phi[j];
                        }
                    }
                }
            }
        }
        for i in 0..nloc {
            let Some(gi) = dofs.map(tri[i]) else { continue };
            for j in 0..nloc {
                let Some(gj) = dofs.map(tri[j]) else { continue };
                bs.push(gi, gj, es[i * nloc + j]);
                bm.push(gi, gj, em[i * nloc + j]);
                bl.push(gi, gj, el[i * nloc + j]);
                bp.push(gi, gj, ep[i * nloc + j]);
            }
        }
    }

    let p1 = bp.build();
    // Both components share the same effective potential here; assembling
    // once keeps the matrices bitwise identical.
    let p2 = p1.clone();
    ConstantOperators {
        s: bs.build(),
        m: bm.build(),
        p1,
        p2,
        l: bl.build(),
    }
}

/// Constant operators over interior DOFs.
pub fn assemble_constants(space: &FeSpace, params: &PhysicsParams) -> Result<ConstantOperators> {
    params.validate()?;
    Ok(assemble_constants_impl(
        space,
        params,
        DofMap::Interior(&space.interior_map),
        space.n_dofs,
    ))
}

/// Constant operators over all nodes (boundary included); used by
/// diagnostics that need the unconstrained matrices.
pub fn assemble_constants_full(space: &FeSpace, params: &PhysicsParams) -> Result<ConstantOperators> {
    params.validate()?;
    Ok(assemble_constants_impl(
        space,
        params,
        DofMap::AllNodes,
        space.nodes.len(),
    ))
}

/// Evaluates interior coefficient vectors at every quadrature point of every
/// triangle, invoking `f(triangle, weight*area, values)` once per point.
pub(crate) fn sweep_quadrature<F: FnMut(usize, f64, &[f64])>(
    space: &FeSpace,
    rule: &[QuadPoint],
    fields: &[&[f64]],
    mut f: F,
) -> Result<()> {
    let nloc = space.order.nodes_per_triangle();
    let table = basis_table(space.order, rule.to_vec());
    let nodal: Vec<Vec<f64>> = fields
        .iter()
        .map(|c| space.scatter_to_nodes(c))
        .collect::<Result<_>>()?;
    let mut vals = vec![0.0f64; fields.len()];
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        let geo = tri_geometry(space, tri);
        for (qi, q) in table.rule.iter().enumerate() {
            let phi = &table.phi[qi];
            for (fi, nf) in nodal.iter().enumerate() {
                let mut acc = 0.0;
                for l in 0..nloc {
                    acc += phi[l] * nf[tri[l]];
                }
                vals[fi] = acc;
            }
            f(t, q.w * geo.area, &vals);
        }
    }
    Ok(())
}

/// All density-weighted mass matrices of the state, evaluated by expanding
/// the FE fields at the quadrature points of the degree-8 rule.
pub fn assemble_weighted(space: &FeSpace, u_blocks: [&[f64]; 4]) -> Result<WeightedOperators> {
    for b in u_blocks {
        if b.len() != space.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: space.n_dofs,
                got: b.len(),
            });
        }
    }
    let n = space.n_dofs;
    let nloc = space.order.nodes_per_triangle();
    let table = basis_table(space.order, rule_degree8());
    let nodal: Vec<Vec<f64>> = u_blocks
        .iter()
        .map(|c| space.scatter_to_nodes(c))
        .collect::<Result<_>>()?;

    // Weight order: u1r^2, u1i^2, u1r*u1i, u2r^2, u2i^2, u2r*u2i,
    //               u1r*u2r, u1r*u2i, u1i*u2r, u1i*u2i.
    const NW: usize = 10;
    let cap = space.n_triangles() * nloc * nloc;
    let mut builders: Vec<CooBuilder> = (0..NW)
        .map(|_| CooBuilder::with_capacity(n, n, cap))
        .collect();

    let mut local = vec![0.0f64; NW * nloc * nloc];
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        let geo = tri_geometry(space, tri);
        local.iter_mut().for_each(|x| *x = 0.0);
        for (qi, q) in table.rule.iter().enumerate() {
            let w = q.w * geo.area;
            let phi = &table.phi[qi];
            let mut f = [0.0f64; 4];
            for (fi, nf) in nodal.iter().enumerate() {
                let mut acc = 0.0;
                for l in 0..nloc {
                    acc += phi[l] * nf[tri[l]];
                }
                f[fi] = acc;
            }
            let weights = [
                f[0] * f[0],
                f[1] * f[1],
                f[0] * f[1],
                f[2] * f[2],
                f[3] * f[3],
                f[2] * f[3],
                f[0] * f[2],
                f[0] * f[3],
                f[1] * f[2],
                f[1] * f[3],
            ];
            for i in 0..nloc {
                for j in 0..nloc {
                    let pij = w * phi[i] * phi[j];
                    let base = i * nloc + j;
                    for (k, wk) in weights.iter().enumerate() {
                        local[k * nloc * nloc + base] += wk * pij;
                    }
                }
            }
        }
        for i in 0..nloc {
            let Some(gi) = space.interior_map[tri[i]] else { continue };
            for j in 0..nloc {
                let Some(gj) = space.interior_map[tri[j]] else { continue };
                let base = i * nloc + j;
                for (k, b) in builders.iter_mut().enumerate() {
                    b.push(gi, gj, local[k * nloc * nloc + base]);
                }
            }
        }
    }

    let mut mats: Vec<CsrMatrix> = builders.into_iter().map(|b| b.build()).collect();
    // Drain in reverse to move out without cloning.
    let m_u1i_u2i = mats.pop().unwrap();
    let m_u1i_u2r = mats.pop().unwrap();
    let m_u1r_u2i = mats.pop().unwrap();
    let m_u1r_u2r = mats.pop().unwrap();
    let m_u2r_u2i = mats.pop().unwrap();
    let m_u2i_u2i = mats.pop().unwrap();
    let m_u2r_u2r = mats.pop().unwrap();
    let m_u1r_u1i = mats.pop().unwrap();
    let m_u1i_u1i = mats.pop().unwrap();
    let m_u1r_u1r = mats.pop().unwrap();

    let m_abs_u1 = m_u1r_u1r.add_scaled(1.0, &m_u1i_u1i)?;
    let m_abs_u2 = m_u2r_u2r.add_scaled(1.0, &m_u2i_u2i)?;
    Ok(WeightedOperators {
        m_abs_u1,
        m_abs_u2,
        m_u1r_u1r,
        m_u1i_u1i,
        m_u1r_u1i,
        m_u2r_u2r,
        m_u2i_u2i,
        m_u2r_u2i,
        m_u1r_u2r,
        m_u1r_u2i,
        m_u1i_u2r,
        m_u1i_u2i,
    })
}

/// Block-diagonal `4N x 4N` mass operator.
pub fn mass_padded(m: &CsrMatrix) -> CsrMatrix {
    let n = m.nrows();
    block_compose(
        4,
        n,
        &[(0, 0, 1.0, m), (1, 1, 1.0, m), (2, 2, 1.0, m), (3, 3, 1.0, m)],
    )
}

/// The `4N x 4N` linearized operator `A(u)`. `mass_sq` is `u^T M_pad u`.
pub fn assemble_a_matrix(
    ops: &ConstantOperators,
    params: &PhysicsParams,
    w: &WeightedOperators,
    mass_sq: f64,
) -> Result<CsrMatrix> {
    if mass_sq <= 0.0 {
        return Err(Error::ZeroField);
    }
    let n = ops.m.nrows();
    let inv = 1.0 / mass_sq;
    // Diagonal N x N blocks of the two components.
    let kin1 = ops.s.scaled(0.5).add_scaled(1.0, &ops.p1)?;
    let kin2 = ops.s.scaled(0.5).add_scaled(1.0, &ops.p2)?;
    let d1 = kin1
        .add_scaled(0.5 * params.delta, &ops.m)?
        .add_scaled(params.beta11 * inv, &w.m_abs_u1)?
        .add_scaled(params.beta12 * inv, &w.m_abs_u2)?;
    let d2 = kin2
        .add_scaled(-0.5 * params.delta, &ops.m)?
        .add_scaled(params.beta12 * inv, &w.m_abs_u1)?
        .add_scaled(params.beta22 * inv, &w.m_abs_u2)?;

    let k0 = params.k0;
    let om = 0.5 * params.omega;
    Ok(block_compose(
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
    ))
}

/// Symmetric Hessian part `I1` (the derivative of the densities inside the
/// nonlinear terms), as a `4N x 4N` matrix.
fn assemble_i1_matrix(
    params: &PhysicsParams,
    w: &WeightedOperators,
    mass_sq: f64,
) -> CsrMatrix {
    let n = w.m_abs_u1.nrows();
    let b11 = 2.0 * params.beta11 / mass_sq;
    let b22 = 2.0 * params.beta22 / mass_sq;
    let b12 = 2.0 * params.beta12 / mass_sq;
    block_compose(
        4,
        n,
        &[
            (0, 0, b11, &w.m_u1r_u1r),
            (0, 1, b11, &w.m_u1r_u1i),
            (1, 0, b11, &w.m_u1r_u1i),
            (1, 1, b11, &w.m_u1i_u1i),
            (2, 2, b22, &w.m_u2r_u2r),
            (2, 3, b22, &w.m_u2r_u2i),
            (3, 2, b22, &w.m_u2r_u2i),
            (3, 3, b22, &w.m_u2i_u2i),
            (0, 2, b12, &w.m_u1r_u2r),
            (0, 3, b12, &w.m_u1r_u2i),
            (1, 2, b12, &w.m_u1i_u2r),
            (1, 3, b12, &w.m_u1i_u2i),
            (2, 0, b12, &w.m_u1r_u2r),
            (2, 1, b12, &w.m_u1i_u2r),
            (3, 0, b12, &w.m_u1r_u2i),
            (3, 1, b12, &w.m_u1i_u2i),
        ],
    )
}

/// Energy Hessian `H(u) = A(u) + I1(u)`; symmetric.
pub fn assemble_hessian(
    ops: &ConstantOperators,
    params: &PhysicsParams,
    w: &WeightedOperators,
    mass_sq: f64,
) -> Result<CsrMatrix> {
    let a = assemble_a_matrix(ops, params, w, mass_sq)?;
    a.add_scaled(1.0, &assemble_i1_matrix(params, w, mass_sq))
}

/// Shifted Jacobian `J(u) - sigma I` in Woodbury form. `C = H - sigma M_pad`
/// is sparse; the rank-two `U V` carries the derivative of the `1/||u||^2`
/// normalization. Applying `C + U V` to `u` itself reproduces `A(u) u`.
pub fn assemble_j_parts(
    ops: &ConstantOperators,
    params: &PhysicsParams,
    w: &WeightedOperators,
    u_blocks: [&[f64]; 4],
    mass_sq: f64,
    m_pad: &CsrMatrix,
    sigma: f64,
) -> Result<JParts> {
    if mass_sq <= 0.0 {
        return Err(Error::ZeroField);
    }
    let h = assemble_hessian(ops, params, w, mass_sq)?;
    let c = if sigma == 0.0 {
        h
    } else {
        h.add_scaled(-sigma, m_pad)?
    };

    let n = ops.m.nrows();
    let scale = -2.0 / (mass_sq * mass_sq);
    let mut col1 = vec![0.0; 4 * n];
    let mut col2 = vec![0.0; 4 * n];
    // Component 1: (beta11 M_|u1|^2 + beta12 M_|u2|^2) applied to (u1R, u1I).
    for (part, block) in [(0usize, u_blocks[0]), (1, u_blocks[1])] {
        let dst = &mut col1[part * n..(part + 1) * n];
        w.m_abs_u1.mul_vec_acc(scale * params.beta11, block, dst);
        w.m_abs_u2.mul_vec_acc(scale * params.beta12, block, dst);
    }
    // Component 2: (beta22 M_|u2|^2 + beta12 M_|u1|^2) applied to (u2R, u2I).
    for (part, block) in [(2usize, u_blocks[2]), (3, u_blocks[3])] {
        let dst = &mut col2[part * n..(part + 1) * n];
        w.m_abs_u2.mul_vec_acc(scale * params.beta22, block, dst);
        w.m_abs_u1.mul_vec_acc(scale * params.beta12, block, dst);
    }
    // Both rows of V are (M_pad u)^T.
    let mut mu = vec![0.0; 4 * n];
    for (k, block) in u_blocks.iter().enumerate() {
        ops.m.mul_vec_acc(1.0, block, &mut mu[k * n..(k + 1) * n]);
    }
    Ok(JParts {
        c,
        factors: RankTwoFactors {
            u_cols: [col1, col2],
            v_rows: [mu.clone(), mu],
        },
    })
}
