//! Symmetric quadrature rules on the reference triangle.
//!
//! Two fixed rules are used throughout:
//! - a 6-point rule exact for polynomials of total degree 4 (constant
//!   matrices: mass, stiffness, potential, first-derivative),
//! - a 16-point rule exact for total degree 8 (density-weighted matrices and
//!   quartic energy terms, whose integrands reach degree 8 for quadratic
//!   elements).
//!
//! Points are stored as barycentric pairs `(l1, l2)` with `l0 = 1 - l1 - l2`;
//! weights sum to one and are multiplied by the physical triangle area.

/// One quadrature point: weight and two barycentric coordinates.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub w: f64,
    pub l1: f64,
    pub l2: f64,
}

fn sym3(points: &mut Vec<QuadPoint>, w: f64, a: f64) {
    let b = 1.0 - 2.0 * a;
    points.push(QuadPoint { w, l1: a, l2: a });
    points.push(QuadPoint { w, l1: a, l2: b });
    points.push(QuadPoint { w, l1: b, l2: a });
}

fn sym6(points: &mut Vec<QuadPoint>, w: f64, a: f64, b: f64) {
    let c = 1.0 - a - b;
    for (l1, l2) in [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)] {
        points.push(QuadPoint { w, l1, l2 });
    }
}

/// 6-point rule, exact through degree 4.
pub fn rule_degree4() -> Vec<QuadPoint> {
    let mut p = Vec::with_capacity(6);
    sym3(&mut p, 0.223381589678011, 0.445948490915965);
    sym3(&mut p, 0.109951743655322, 0.091576213509771);
    p
}

/// 16-point rule, exact through degree 8.
pub fn rule_degree8() -> Vec<QuadPoint> {
    let mut p = Vec::with_capacity(16);
    p.push(QuadPoint {
        w: 0.144_315_607_677_787_1,
        l1: 1.0 / 3.0,
        l2: 1.0 / 3.0,
    });
    sym3(&mut p, 0.095_091_634_267_284_6, 0.459_292_588_292_723_1);
    sym3(&mut p, 0.103_217_370_534_718_3, 0.170_569_307_751_760_2);
    sym3(&mut p, 0.032_458_497_623_198_0, 0.050_547_228_317_031_0);
    sym6(
        &mut p,
        0.027_230_314_174_435_0,
        0.263_112_829_634_638_1,
        0.728_492_392_955_404_3,
    );
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product::<f64>().max(1.0)
    }

    /// Exact integral of `l0^a l1^b l2^c` over the reference triangle.
    fn exact_monomial(a: u32, b: u32, c: u32) -> f64 {
        factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    }

    fn check_rule(rule: &[QuadPoint], degree: u32) {
        for a in 0..=degree {
            for b in 0..=(degree - a) {
                for c in 0..=(degree - a - b) {
                    let exact = exact_monomial(a, b, c);
                    let approx: f64 = rule
                        .iter()
                        .map(|q| {
                            let l0 = 1.0 - q.l1 - q.l2;
                            0.5 * q.w
                                * l0.powi(a as i32)
                                * q.l1.powi(b as i32)
                                * q.l2.powi(c as i32)
                        })
                        .sum();
                    assert!(
                        (approx - exact).abs() <= 1e-14 * exact.abs().max(1.0),
                        "monomial ({a},{b},{c}): got {approx}, want {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree4_rule_is_exact() {
        let rule = rule_degree4();
        assert_eq!(rule.len(), 6);
        check_rule(&rule, 4);
    }

    #[test]
    fn degree8_rule_is_exact() {
        let rule = rule_degree8();
        assert_eq!(rule.len(), 16);
        check_rule(&rule, 8);
    }

    #[test]
    fn weights_sum_to_one() {
        for rule in [rule_degree4(), rule_degree8()] {
            let s: f64 = rule.iter().map(|q| q.w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
