//! Independent reference implementations used to validate the solver:
//! a collapsed-square Gauss rule on triangles, monomial shape functions,
//! dense brute-force assembly of every operator, dense linear solves and
//! dense generalized eigensolvers. Nothing here shares code with the
//! assembly or linear-algebra paths under test.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sobec::assembly::PhysicsParams;
use sobec::mesh::{ElementOrder, FeSpace};
use sobec::state::{Problem, SpinorField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gauss-Legendre nodes/weights on [0,1] by Newton iteration.
fn gauss_legendre_01(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        // Initial guess on [-1,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_m(x) and derivative by recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=m {
            let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = pk;
        }
        let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Quadrature on the reference triangle {x>=0, y>=0, x+y<=1} through the
/// Duffy map of a tensor Gauss rule; exact for total degree <= 2m-2 and
/// then some. `m = 10` covers everything used in these tests. Weights sum
/// to the reference area 1/2.
pub fn duffy_rule(m: usize) -> Vec<(f64, f64, f64)> {
    let gl = gauss_legendre_01(m);
    let mut pts = Vec::with_capacity(m * m);
    for &(xi, wx) in &gl {
        for &(eta, wy) in &gl {
            let x = xi;
            let y = eta * (1.0 - xi);
            pts.push((wx * wy * (1.0 - xi), x, y));
        }
    }
    pts
}

/// Monomial-form shape functions on the reference triangle, in the node
/// order (v0, v1, v2[, m01, m12, m20]). Returns values and (d/dx, d/dy).
pub fn ref_shape(order: ElementOrder, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    match order {
        ElementOrder::P1 => (
            vec![1.0 - x - y, x, y],
            vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
        ),
        ElementOrder::P2 => {
            let vals = vec![
                1.0 - 3.0 * x - 3.0 * y + 2.0 * x * x + 4.0 * x * y + 2.0 * y * y,
                2.0 * x * x - x,
                2.0 * y * y - y,
                4.0 * x - 4.0 * x * x - 4.0 * x * y,
                4.0 * x * y,
                4.0 * y - 4.0 * x * y - 4.0 * y * y,
            ];
            let grads = vec![
                [-3.0 + 4.0 * x + 4.0 * y, -3.0 + 4.0 * x + 4.0 * y],
                [4.0 * x - 1.0, 0.0],
                [0.0, 4.0 * y - 1.0],
                [4.0 - 8.0 * x - 4.0 * y, -4.0 * x],
                [4.0 * y, 4.0 * x],
                [-4.0 * y, 4.0 - 4.0 * x - 8.0 * y],
            ];
            (vals, grads)
        }
    }
}

/// Dense constant operators over interior DOFs: (S, M, L, P) with the
/// effective potential of `params`.
pub struct DenseOps {
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub fn dense_constant_ops(space: &FeSpace, params: &PhysicsParams) -> DenseOps {
    let n = space.n_dofs;
    let rule = duffy_rule(10);
    let nloc = space.order.nodes_per_triangle();
    let mut s = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    let mut p = DMatrix::zeros(n, n);
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        let a = space.nodes[tri[0]];
        let b = space.nodes[tri[1]];
        let c = space.nodes[tri[2]];
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        for &(w0, x, y) in &rule {
            let w = w0 * det.abs();
            let (phi, gref) = ref_shape(space.order, x, y);
            let px = a[0] + jac[0][0] * x + jac[0][1] * y;
            let py = a[1] + jac[1][0] * x + jac[1][1] * y;
            let (v1, _) = params.potential(px, py);
            let grads: Vec<[f64; 2]> = gref
                .iter()
                .map(|g| {
                    [
                        inv_t[0][0] * g[0] + inv_t[0][1] * g[1],
                        inv_t[1][0] * g[0] + inv_t[1][1] * g[1],
                    ]
                })
                .collect();
            for i in 0..nloc {
                let Some(gi) = space.interior_map[tri[i]] else { continue };
                for j in 0..nloc {
                    let Some(gj) = space.interior_map[tri[j]] else { continue };
                    s[(gi, gj)] += w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                    m[(gi, gj)] += w * phi[i] * phi[j];
                    l[(gi, gj)] += w * phi[i] * grads[j][0];
                    p[(gi, gj)] += w * v1 * phi[i] * phi[j];
                }
            }
        }
    }
    DenseOps { s, m, l, p }
}

/// Dense weighted mass matrix with an arbitrary product weight
/// `fa * fb` of two interior coefficient fields.
pub fn dense_weighted(space: &FeSpace, fa: &[f64], fb: &[f64]) -> DMatrix<f64> {
    let n = space.n_dofs;
    let rule = duffy_rule(10);
    let nloc = space.order.nodes_per_triangle();
    let na = space.scatter_to_nodes(fa).unwrap();
    let nb = space.scatter_to_nodes(fb).unwrap();
    let mut out = DMatrix::zeros(n, n);
    for t in 0..space.n_triangles() {
        let tri = space.triangle(t);
        let a = space.nodes[tri[0]];
        let b = space.nodes[tri[1]];
        let c = space.nodes[tri[2]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        for &(w0, x, y) in &rule {
            let w = w0 * det.abs();
            let (phi, _) = ref_shape(space.order, x, y);
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..nloc {
                va += phi[i] * na[tri[i]];
                vb += phi[i] * nb[tri[i]];
            }
            for i in 0..nloc {
                let Some(gi) = space.interior_map[tri[i]] else { continue };
                for j in 0..nloc {
                    let Some(gj) = space.interior_map[tri[j]] else { continue };
                    out[(gi, gj)] += w * va * vb * phi[i] * phi[j];
                }
            }
        }
    }
    out
}

fn block_insert(big: &mut DMatrix<f64>, bi: usize, bj: usize, n: usize, coeff: f64, m: &DMatrix<f64>) {
    for i in 0..n {
        for j in 0..n {
            big[(bi * n + i, bj * n + j)] += coeff * m[(i, j)];
        }
    }
}

/// Dense block-diagonal mass operator.
pub fn dense_m_pad(space: &FeSpace, params: &PhysicsParams) -> DMatrix<f64> {
    let ops = dense_constant_ops(space, params);
    let n = space.n_dofs;
    let mut out = DMatrix::zeros(4 * n, 4 * n);
    for k in 0..4 {
        block_insert(&mut out, k, k, n, 1.0, &ops.m);
    }
    out
}

/// Dense `A(u)` from first principles.
pub fn dense_a_matrix(space: &FeSpace, params: &PhysicsParams, u: &SpinorField) -> DMatrix<f64> {
    let n = space.n_dofs;
    let ops = dense_constant_ops(space, params);
    let ub = u.blocks();
    let mass = {
        let m_pad = dense_m_pad(space, params);
        let v = DVector::from_column_slice(&u.coeffs);
        (v.transpose() * &m_pad * &v)[(0, 0)]
    };
    let abs1 = dense_weighted(space, ub[0], ub[0]) + dense_weighted(space, ub[1], ub[1]);
    let abs2 = dense_weighted(space, ub[2], ub[2]) + dense_weighted(space, ub[3], ub[3]);
    let d1 = 0.5 * &ops.s
        + &ops.p
        + 0.5 * params.delta * &ops.m
        + (params.beta11 / mass) * &abs1
        + (params.beta12 / mass) * &abs2;
    let d2 = 0.5 * &ops.s + &ops.p - 0.5 * params.delta * &ops.m
        + (params.beta12 / mass) * &abs1
        + (params.beta22 / mass) * &abs2;
    let mut out = DMatrix::zeros(4 * n, 4 * n);
    block_insert(&mut out, 0, 0, n, 1.0, &d1);
    block_insert(&mut out, 1, 1, n, 1.0, &d1);
    block_insert(&mut out, 2, 2, n, 1.0, &d2);
    block_insert(&mut out, 3, 3, n, 1.0, &d2);
    block_insert(&mut out, 0, 1, n, -params.k0, &ops.l);
    block_insert(&mut out, 1, 0, n, params.k0, &ops.l);
    block_insert(&mut out, 2, 3, n, params.k0, &ops.l);
    block_insert(&mut out, 3, 2, n, -params.k0, &ops.l);
    block_insert(&mut out, 0, 2, n, 0.5 * params.omega, &ops.m);
    block_insert(&mut out, 2, 0, n, 0.5 * params.omega, &ops.m);
    block_insert(&mut out, 1, 3, n, 0.5 * params.omega, &ops.m);
    block_insert(&mut out, 3, 1, n, 0.5 * params.omega, &ops.m);
    out
}

/// Dense energy Hessian `A(u) + I1(u)`.
pub fn dense_hessian(space: &FeSpace, params: &PhysicsParams, u: &SpinorField) -> DMatrix<f64> {
    let n = space.n_dofs;
    let ub = u.blocks();
    let mass = {
        let m_pad = dense_m_pad(space, params);
        let v = DVector::from_column_slice(&u.coeffs);
        (v.transpose() * &m_pad * &v)[(0, 0)]
    };
    let mut out = dense_a_matrix(space, params, u);
    let b11 = 2.0 * params.beta11 / mass;
    let b22 = 2.0 * params.beta22 / mass;
    let b12 = 2.0 * params.beta12 / mass;
    let w = |a: &[f64], b: &[f64]| dense_weighted(space, a, b);
    block_insert(&mut out, 0, 0, n, b11, &w(ub[0], ub[0]));
    block_insert(&mut out, 0, 1, n, b11, &w(ub[0], ub[1]));
    block_insert(&mut out, 1, 0, n, b11, &w(ub[0], ub[1]));
    block_insert(&mut out, 1, 1, n, b11, &w(ub[1], ub[1]));
    block_insert(&mut out, 2, 2, n, b22, &w(ub[2], ub[2]));
    block_insert(&mut out, 2, 3, n, b22, &w(ub[2], ub[3]));
    block_insert(&mut out, 3, 2, n, b22, &w(ub[2], ub[3]));
    block_insert(&mut out, 3, 3, n, b22, &w(ub[3], ub[3]));
    block_insert(&mut out, 0, 2, n, b12, &w(ub[0], ub[2]));
    block_insert(&mut out, 0, 3, n, b12, &w(ub[0], ub[3]));
    block_insert(&mut out, 1, 2, n, b12, &w(ub[1], ub[2]));
    block_insert(&mut out, 1, 3, n, b12, &w(ub[1], ub[3]));
    block_insert(&mut out, 2, 0, n, b12, &w(ub[0], ub[2]));
    block_insert(&mut out, 2, 1, n, b12, &w(ub[1], ub[2]));
    block_insert(&mut out, 3, 0, n, b12, &w(ub[0], ub[3]));
    block_insert(&mut out, 3, 1, n, b12, &w(ub[1], ub[3]));
    out
}

/// Dense Jacobian `J(u) = H(u) + I2(u)` with the rank-two normalization
/// derivative written out in full.
pub fn dense_j_matrix(space: &FeSpace, params: &PhysicsParams, u: &SpinorField) -> DMatrix<f64> {
    let n = space.n_dofs;
    let ub = u.blocks();
    let m_pad = dense_m_pad(space, params);
    let uvec = DVector::from_column_slice(&u.coeffs);
    let mu = &m_pad * &uvec;
    let mass = (uvec.transpose() * &mu)[(0, 0)];
    let abs1 = dense_weighted(space, ub[0], ub[0]) + dense_weighted(space, ub[1], ub[1]);
    let abs2 = dense_weighted(space, ub[2], ub[2]) + dense_weighted(space, ub[3], ub[3]);
    // g = (beta-weighted density operators applied to u), both components.
    let mut g = DVector::zeros(4 * n);
    let g1 = params.beta11 * &abs1 + params.beta12 * &abs2;
    let g2 = params.beta12 * &abs1 + params.beta22 * &abs2;
    let u1r = DVector::from_column_slice(ub[0]);
    let u1i = DVector::from_column_slice(ub[1]);
    let u2r = DVector::from_column_slice(ub[2]);
    let u2i = DVector::from_column_slice(ub[3]);
    g.rows_mut(0, n).copy_from(&(&g1 * &u1r));
    g.rows_mut(n, n).copy_from(&(&g1 * &u1i));
    g.rows_mut(2 * n, n).copy_from(&(&g2 * &u2r));
    g.rows_mut(3 * n, n).copy_from(&(&g2 * &u2i));

    let mut out = dense_hessian(space, params, u);
    let scale = -2.0 / (mass * mass);
    for i in 0..4 * n {
        for j in 0..4 * n {
            out[(i, j)] += scale * g[i] * mu[j];
        }
    }
    out
}

/// Plain Gaussian elimination with partial pivoting (reference solver).
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if m[(i, k)].abs() > m[(piv, k)].abs() {
                piv = i;
            }
        }
        if piv != k {
            m.swap_rows(k, piv);
            x.swap_rows(k, piv);
        }
        let d = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / d;
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
    }
    x
}

/// Generalized symmetric eigenvalues of `(A, M)` (ascending), `M` SPD.
pub fn dense_sym_geig(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let chol = m.clone().cholesky().expect("mass matrix SPD");
    let l_inv = chol.l().try_inverse().expect("invertible Cholesky factor");
    let b = &l_inv * a * l_inv.transpose();
    let sym = 0.5 * (&b + b.transpose());
    let mut eig: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Generalized (possibly complex) eigenvalues of `(A, M)` via `M^{-1} A`.
pub fn dense_nonsym_geig(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let m_inv = m.clone().try_inverse().expect("mass matrix invertible");
    let c = &m_inv * a;
    c.complex_eigenvalues().iter().copied().collect()
}

/// Generalized symmetric eigenpairs of `(A, M)` (ascending), vectors
/// M-orthonormal in the original coordinates.
pub fn dense_sym_geig_pairs(a: &DMatrix<f64>, m: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let chol = m.clone().cholesky().expect("mass matrix SPD");
    let l = chol.l();
    let l_inv = l.clone().try_inverse().expect("invertible Cholesky factor");
    let b = &l_inv * a * l_inv.transpose();
    let sym = 0.5 * (&b + b.transpose());
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let lt_inv = l.transpose().try_inverse().expect("invertible factor");
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &i in &order {
        values.push(eig.eigenvalues[i]);
        vectors.push(&lt_inv * eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Random unit-mass state with a fixed seed.
pub fn random_state(problem: &Problem, seed: u64) -> SpinorField {
    let mut r = rng(seed);
    let coeffs: Vec<f64> = (0..problem.dim()).map(|_| r.random::<f64>() - 0.5).collect();
    let u = SpinorField::from_coeffs(problem.space(), coeffs).unwrap();
    problem.normalize(&u).unwrap()
}

/// Random tangent vector at `u` (M-orthogonal to `u`), unit M-norm.
pub fn random_tangent(problem: &Problem, u: &SpinorField, seed: u64) -> SpinorField {
    let mut r = rng(seed);
    let coeffs: Vec<f64> = (0..problem.dim()).map(|_| r.random::<f64>() - 0.5).collect();
    let v = SpinorField::from_coeffs(problem.space(), coeffs).unwrap();
    let c = problem.mass_inner(&v, u) / problem.mass_inner(u, u);
    let v = v.axpy(-c, u);
    problem.normalize(&v).unwrap()
}

/// Reference ground state by dense plain inverse iteration (independent of
/// the sparse solve path). Returns the state and its Rayleigh eigenvalue.
pub fn dense_ground_state(
    problem: &Problem,
    u0: &SpinorField,
    iters: usize,
) -> (SpinorField, f64) {
    let space = problem.space();
    let params = problem.params();
    let m_pad = dense_m_pad(space, params);
    let mut u = problem.normalize(u0).unwrap();
    for _ in 0..iters {
        let a = dense_a_matrix(space, params, &u);
        let rhs = &m_pad * DVector::from_column_slice(&u.coeffs);
        let z = dense_solve(&a, &rhs);
        let z = SpinorField::from_coeffs(space, z.iter().copied().collect()).unwrap();
        let mut next = problem.normalize(&z).unwrap();
        if problem.mass_inner(&next, &u) < 0.0 {
            next = next.scaled(-1.0);
        }
        u = next;
    }
    let lambda = problem.rayleigh_lambda(&u).unwrap();
    (u, lambda)
}

pub fn default_params(k0: f64) -> PhysicsParams {
    PhysicsParams {
        delta: 0.0,
        omega: 50.0,
        k0,
        beta11: 10.0,
        beta12: 9.0,
        beta22: 9.0,
        potential_shift_enabled: true,
        extra_potential: None,
    }
}

pub fn decoupled_params() -> PhysicsParams {
    PhysicsParams {
        delta: 0.0,
        omega: 0.0,
        k0: 0.0,
        beta11: 0.0,
        beta12: 0.0,
        beta22: 0.0,
        potential_shift_enabled: false,
        extra_potential: None,
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

pub fn csr_to_dense(m: &sobec::sparse::CsrMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            out[(i, j)] = v;
        }
    }
    out
}
