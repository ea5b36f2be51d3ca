//! Uniform triangular meshes on axis-aligned rectangles and the associated
//! P1/P2 Lagrange finite-element spaces with homogeneous Dirichlet boundary
//! conditions.
//!
//! Every axis-aligned cell is split along the diagonal from its lower-left to
//! its upper-right corner. Nodes are numbered row-major by `(y, x)`; interior
//! degrees of freedom follow node order. Both conventions are fixed so that
//! matrix sparsity patterns and results are reproducible across runs.

use crate::error::{Error, Result};

/// Axis-aligned rectangular domain subdivided into `n_sub` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectDomain {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub n_sub: usize,
}

impl RectDomain {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, n_sub: usize) -> Result<Self> {
        if !(xmax > xmin && ymax > ymin) {
            return Err(Error::Config(format!(
                "degenerate rectangle [{xmin},{xmax}]x[{ymin},{ymax}]"
            )));
        }
        if n_sub < 2 {
            return Err(Error::Config(format!("n_sub must be >= 2, got {n_sub}")));
        }
        Ok(RectDomain {
            xmin,
            xmax,
            ymin,
            ymax,
            n_sub,
        })
    }

    /// The unit square of the reference experiments, `[-1,1]^2`.
    pub fn square(n_sub: usize) -> Result<Self> {
        RectDomain::new(-1.0, 1.0, -1.0, 1.0, n_sub)
    }
}

/// Lagrange element order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementOrder {
    P1,
    P2,
}

impl ElementOrder {
    pub fn from_int(order: u8) -> Result<Self> {
        match order {
            1 => Ok(ElementOrder::P1),
            2 => Ok(ElementOrder::P2),
            other => Err(Error::Config(format!(
                "element order must be 1 or 2, got {other}"
            ))),
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            ElementOrder::P1 => 1,
            ElementOrder::P2 => 2,
        }
    }

    pub fn nodes_per_triangle(self) -> usize {
        match self {
            ElementOrder::P1 => 3,
            ElementOrder::P2 => 6,
        }
    }
}

/// Compact identity of a space, used to detect mismatched fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceKey {
    pub domain: RectDomain,
    pub order: ElementOrder,
}

/// Triangular Lagrange finite-element space.
///
/// `nodes` are all Lagrange nodes (including boundary); `interior_map[i]` is
/// the DOF index of node `i` or `None` on the boundary. Coefficient vectors
/// hold interior values only; boundary values are identically zero.
#[derive(Clone, Debug)]
pub struct FeSpace {
    pub domain: RectDomain,
    pub order: ElementOrder,
    pub nodes: Vec<[f64; 2]>,
    /// Flat node-index list, `nodes_per_triangle` entries per triangle.
    /// Ordering per triangle: vertices `v0, v1, v2` counter-clockwise, then
    /// (P2 only) edge midpoints `m01, m12, m20`.
    tri_nodes: Vec<usize>,
    /// Node index -> interior DOF index.
    pub interior_map: Vec<Option<usize>>,
    /// DOF index -> node index.
    pub dof_nodes: Vec<usize>,
    /// Interior DOF count.
    pub n_dofs: usize,
}

impl FeSpace {
    pub fn key(&self) -> SpaceKey {
        SpaceKey {
            domain: self.domain,
            order: self.order,
        }
    }

    pub fn n_triangles(&self) -> usize {
        self.tri_nodes.len() / self.order.nodes_per_triangle()
    }

    pub fn triangle(&self, t: usize) -> &[usize] {
        let k = self.order.nodes_per_triangle();
        &self.tri_nodes[t * k..(t + 1) * k]
    }

    /// Signed double area is constant on a uniform mesh; all triangles share
    /// the same area `hx*hy/2`.
    pub fn triangle_area(&self) -> f64 {
        let n = self.domain.n_sub as f64;
        let hx = (self.domain.xmax - self.domain.xmin) / n;
        let hy = (self.domain.ymax - self.domain.ymin) / n;
        0.5 * hx * hy
    }

    /// Expands an interior coefficient vector to nodal values on all nodes
    /// (zeros on the boundary).
    pub fn scatter_to_nodes(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs,
                got: coeffs.len(),
            });
        }
        let mut nodal = vec![0.0; self.nodes.len()];
        for (dof, &node) in self.dof_nodes.iter().enumerate() {
            nodal[node] = coeffs[dof];
        }
        Ok(nodal)
    }
}

/// Builds the uniform space. DOF counts are `(n+1)^2 - 4n` for P1 and
/// `(2n+1)^2 - 8n` for P2 (all interior fine-grid nodes).
pub fn build_space(domain: RectDomain, order: ElementOrder) -> Result<FeSpace> {
    // Re-validate: RectDomain may have been constructed literally.
    let domain = RectDomain::new(domain.xmin, domain.xmax, domain.ymin, domain.ymax, domain.n_sub)?;
    let n = domain.n_sub;
    let m = match order {
        ElementOrder::P1 => n + 1,
        ElementOrder::P2 => 2 * n + 1,
    };
    let hx = (domain.xmax - domain.xmin) / n as f64;
    let hy = (domain.ymax - domain.ymin) / n as f64;
    let (sx, sy) = match order {
        ElementOrder::P1 => (hx, hy),
        ElementOrder::P2 => (0.5 * hx, 0.5 * hy),
    };

    let mut nodes = Vec::with_capacity(m * m);
    for iy in 0..m {
        for ix in 0..m {
            // Endpoints are reproduced exactly; interior nodes by scaling.
            let x = if ix + 1 == m {
                domain.xmax
            } else {
                domain.xmin + sx * ix as f64
            };
            let y = if iy + 1 == m {
                domain.ymax
            } else {
                domain.ymin + sy * iy as f64
            };
            nodes.push([x, y]);
        }
    }

    let node_at = |ix: usize, iy: usize| iy * m + ix;
    let mut tri_nodes = Vec::with_capacity(2 * n * n * order.nodes_per_triangle());
    for cy in 0..n {
        for cx in 0..n {
            // Cell corners on the fine grid.
            let step = match order {
                ElementOrder::P1 => 1,
                ElementOrder::P2 => 2,
            };
            let (x0, y0) = (cx * step, cy * step);
            let a = node_at(x0, y0);
            let b = node_at(x0 + step, y0);
            let c = node_at(x0 + step, y0 + step);
            let d = node_at(x0, y0 + step);
            match order {
                ElementOrder::P1 => {
                    // Diagonal a-c (lower-left to upper-right).
                    tri_nodes.extend_from_slice(&[a, b, c]);
                    tri_nodes.extend_from_slice(&[a, c, d]);
                }
                ElementOrder::P2 => {
                    let m_ab = node_at(x0 + 1, y0);
                    let m_bc = node_at(x0 + 2, y0 + 1);
                    let m_ca = node_at(x0 + 1, y0 + 1);
                    let m_cd = node_at(x0 + 1, y0 + 2);
                    let m_da = node_at(x0, y0 + 1);
                    tri_nodes.extend_from_slice(&[a, b, c, m_ab, m_bc, m_ca]);
                    tri_nodes.extend_from_slice(&[a, c, d, m_ca, m_cd, m_da]);
                }
            }
        }
    }

    let mut interior_map = vec![None; m * m];
    let mut dof_nodes = Vec::with_capacity((m - 2) * (m - 2));
    let mut next = 0usize;
    for iy in 0..m {
        for ix in 0..m {
            if ix > 0 && ix + 1 < m && iy > 0 && iy + 1 < m {
                interior_map[node_at(ix, iy)] = Some(next);
                dof_nodes.push(node_at(ix, iy));
                next += 1;
            }
        }
    }

    Ok(FeSpace {
        domain,
        order,
        nodes,
        tri_nodes,
        interior_map,
        dof_nodes,
        n_dofs: next,
    })
}

/// Shape functions and reference-coordinate gradients at a barycentric point.
/// Node order matches `FeSpace::triangle`. Gradients are with respect to
/// `(l1, l2)`; the physical gradient follows from the affine map.
pub fn shape_functions(order: ElementOrder, l1: f64, l2: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let l0 = 1.0 - l1 - l2;
    match order {
        ElementOrder::P1 => (
            vec![l0, l1, l2],
            vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
        ),
        ElementOrder::P2 => {
            let phi = vec![
                l0 * (2.0 * l0 - 1.0),
                l1 * (2.0 * l1 - 1.0),
                l2 * (2.0 * l2 - 1.0),
                4.0 * l0 * l1,
                4.0 * l1 * l2,
                4.0 * l2 * l0,
            ];
            // d/dl1 and d/dl2 with l0 = 1 - l1 - l2.
            let grad = vec![
                [1.0 - 4.0 * l0, 1.0 - 4.0 * l0],
                [4.0 * l1 - 1.0, 0.0],
                [0.0, 4.0 * l2 - 1.0],
                [4.0 * (l0 - l1), -4.0 * l1],
                [4.0 * l2, 4.0 * l1],
                [-4.0 * l2, 4.0 * (l0 - l2)],
            ];
            (phi, grad)
        }
    }
}

/// Nodal interpolation of a P1 field into the P2 space on the same grid:
/// vertex values are copied, edge midpoints average the edge endpoints.
pub fn interpolate_p1_to_p2(space1: &FeSpace, space2: &FeSpace, coeffs: &[f64]) -> Result<Vec<f64>> {
    if space1.order != ElementOrder::P1 || space2.order != ElementOrder::P2 {
        return Err(Error::Config(
            "interpolate_p1_to_p2 requires a P1 source and P2 target".into(),
        ));
    }
    if space1.domain != space2.domain {
        return Err(Error::SpaceMismatch);
    }
    if coeffs.len() != space1.n_dofs {
        return Err(Error::DimensionMismatch {
            expected: space1.n_dofs,
            got: coeffs.len(),
        });
    }
    let n = space1.domain.n_sub;
    let m1 = n + 1;
    let nodal1 = space1.scatter_to_nodes(coeffs)?;
    let p1_at = |ix: usize, iy: usize| nodal1[iy * m1 + ix];

    let mut out = vec![0.0; space2.n_dofs];
    for (dof, &node) in space2.dof_nodes.iter().enumerate() {
        let m2 = 2 * n + 1;
        let ix = node % m2;
        let iy = node / m2;
        let val = match (ix % 2, iy % 2) {
            (0, 0) => p1_at(ix / 2, iy / 2),
            (1, 0) => 0.5 * (p1_at(ix / 2, iy / 2) + p1_at(ix / 2 + 1, iy / 2)),
            (0, 1) => 0.5 * (p1_at(ix / 2, iy / 2) + p1_at(ix / 2, iy / 2 + 1)),
            // Cell center: midpoint of the lower-left/upper-right diagonal.
            _ => 0.5 * (p1_at(ix / 2, iy / 2) + p1_at(ix / 2 + 1, iy / 2 + 1)),
        };
        out[dof] = val;
    }
    Ok(out)
}

/// Exact finite-element evaluation of an interior coefficient vector at
/// arbitrary points of the closed domain.
pub fn eval_at_points(space: &FeSpace, coeffs: &[f64], points: &[[f64; 2]]) -> Result<Vec<f64>> {
    if coeffs.len() != space.n_dofs {
        return Err(Error::DimensionMismatch {
            expected: space.n_dofs,
            got: coeffs.len(),
        });
    }
    let nodal = space.scatter_to_nodes(coeffs)?;
    let d = space.domain;
    let n = d.n_sub as f64;
    let hx = (d.xmax - d.xmin) / n;
    let hy = (d.ymax - d.ymin) / n;
    let eps = 1e-12 * (d.xmax - d.xmin).max(d.ymax - d.ymin);

    let mut out = Vec::with_capacity(points.len());
    for &[x, y] in points {
        if x < d.xmin - eps || x > d.xmax + eps || y < d.ymin - eps || y > d.ymax + eps {
            return Err(Error::PointOutsideDomain { x, y });
        }
        let cx = (((x - d.xmin) / hx).floor() as isize).clamp(0, d.n_sub as isize - 1) as usize;
        let cy = (((y - d.ymin) / hy).floor() as isize).clamp(0, d.n_sub as isize - 1) as usize;
        // Local cell coordinates in [0,1]^2.
        let s = (x - (d.xmin + cx as f64 * hx)) / hx;
        let t = (y - (d.ymin + cy as f64 * hy)) / hy;
        // Lower triangle (a,b,c) holds t <= s, upper (a,c,d) holds t >= s.
        let cell = 2 * (cy * d.n_sub + cx);
        let (tri, l1, l2) = if t <= s {
            (cell, s - t, t)
        } else {
            (cell + 1, s, t - s)
        };
        let (phi, _) = shape_functions(space.order, l1, l2);
        let mut val = 0.0;
        for (local, &node) in space.triangle(tri).iter().enumerate() {
            val += phi[local] * nodal[node];
        }
        out.push(val);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_count_formulas_hold_for_all_small_meshes() {
        for n in 2..=32 {
            let d = RectDomain::square(n).unwrap();
            let s1 = build_space(d, ElementOrder::P1).unwrap();
            assert_eq!(s1.n_dofs, (n + 1) * (n + 1) - 4 * n, "P1 n={n}");
            let s2 = build_space(d, ElementOrder::P2).unwrap();
            assert_eq!(s2.n_dofs, (2 * n + 1) * (2 * n + 1) - 8 * n, "P2 n={n}");
        }
    }

    #[test]
    fn paper_mesh_dof_counts() {
        let d = RectDomain::square(256).unwrap();
        let s2 = build_space(d, ElementOrder::P2).unwrap();
        assert_eq!(s2.n_dofs, 513 * 513 - 2048);
        assert_eq!(s2.n_dofs, 261121);
        let tiny = build_space(RectDomain::square(2).unwrap(), ElementOrder::P1).unwrap();
        assert_eq!(tiny.n_dofs, 1);
        let small = build_space(RectDomain::square(4).unwrap(), ElementOrder::P2).unwrap();
        assert_eq!(small.n_dofs, 81 - 32);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RectDomain::new(1.0, -1.0, 0.0, 1.0, 4).is_err());
        assert!(RectDomain::new(0.0, 1.0, 0.0, 1.0, 1).is_err());
        assert!(ElementOrder::from_int(3).is_err());
    }

    #[test]
    fn boundary_nodes_are_excluded_from_interior_map() {
        let s = build_space(RectDomain::square(4).unwrap(), ElementOrder::P2).unwrap();
        let m = 2 * 4 + 1;
        for (node, dof) in s.interior_map.iter().enumerate() {
            let (ix, iy) = (node % m, node / m);
            let boundary = ix == 0 || iy == 0 || ix == m - 1 || iy == m - 1;
            assert_eq!(dof.is_none(), boundary);
        }
        assert_eq!(s.dof_nodes.len(), s.n_dofs);
    }

    #[test]
    fn partition_of_unity_at_random_points() {
        // Deterministic pseudo-random points via a simple LCG.
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for order in [ElementOrder::P1, ElementOrder::P2] {
            for _ in 0..200 {
                let l1 = next();
                let l2 = next() * (1.0 - l1);
                let (phi, _) = shape_functions(order, l1, l2);
                let sum: f64 = phi.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-13, "{order:?}: {sum}");
            }
        }
    }

    #[test]
    fn eval_reproduces_linear_field() {
        let s = build_space(RectDomain::square(4).unwrap(), ElementOrder::P1).unwrap();
        // Nodal interpolant of f(x,y) = x on interior nodes.
        let coeffs: Vec<f64> = s.dof_nodes.iter().map(|&n| s.nodes[n][0]).collect();
        let val = eval_at_points(&s, &coeffs, &[[0.5, 0.0]]).unwrap();
        assert!((val[0] - 0.5).abs() < 1e-14);
        let zeros = vec![0.0; s.n_dofs];
        let v = eval_at_points(&s, &zeros, &[[0.3, -0.7]]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(eval_at_points(&s, &zeros, &[[1.5, 0.0]]).is_err());
    }

    #[test]
    fn interpolation_reproduces_constants_and_linears() {
        let d = RectDomain::square(4).unwrap();
        let s1 = build_space(d, ElementOrder::P1).unwrap();
        let s2 = build_space(d, ElementOrder::P2).unwrap();

        let ones = vec![1.0; s1.n_dofs];
        let up = interpolate_p1_to_p2(&s1, &s2, &ones).unwrap();
        // Interior P2 nodes of interior cells carry the constant; nodes whose
        // P1 stencil touches the (zero) boundary average it in. Check the
        // nodes with full interior stencils.
        let m2 = 2 * 4 + 1;
        for (dof, &node) in s2.dof_nodes.iter().enumerate() {
            let (ix, iy) = (node % m2, node / m2);
            if ix >= 2 && ix <= m2 - 3 && iy >= 2 && iy <= m2 - 3 {
                assert!((up[dof] - 1.0).abs() < 1e-15, "node ({ix},{iy})");
            }
        }

        let linear: Vec<f64> = s1.dof_nodes.iter().map(|&n| s1.nodes[n][0]).collect();
        let up = interpolate_p1_to_p2(&s1, &s2, &linear).unwrap();
        for (dof, &node) in s2.dof_nodes.iter().enumerate() {
            let (ix, iy) = (node % m2, node / m2);
            if ix >= 2 && ix <= m2 - 3 && iy >= 2 && iy <= m2 - 3 {
                assert!((up[dof] - s2.nodes[node][0]).abs() < 1e-14);
            }
        }

        let other = build_space(RectDomain::square(8).unwrap(), ElementOrder::P2).unwrap();
        assert!(interpolate_p1_to_p2(&s1, &other, &ones).is_err());
    }
}
