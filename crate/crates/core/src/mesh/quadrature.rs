//! Degree-2 exact quadrature on reference simplices.
//!
//! Points are given in barycentric coordinates; weights sum to one so the
//! integral over a physical simplex is `measure * Σ w_q f(x_q)`.

/// One quadrature point: barycentric coordinates (length D+1) and weight.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub bary: Vec<f64>,
    pub weight: f64,
}

/// Degree-2 rule for a simplex of topological dimension `dim` (1, 2 or 3).
pub fn degree2_rule(dim: usize) -> Vec<QuadPoint> {
    match dim {
        1 => {
            let a = 0.5 - 0.5 / 3f64.sqrt();
            vec![QuadPoint { bary: vec![1.0 - a, a], weight: 0.5 }, QuadPoint { bary: vec![a, 1.0 - a], weight: 0.5 }]
        }
        2 => {
            let (a, b) = (1.0 / 6.0, 2.0 / 3.0);
            vec![
                QuadPoint { bary: vec![b, a, a], weight: 1.0 / 3.0 },
                QuadPoint { bary: vec![a, b, a], weight: 1.0 / 3.0 },
                QuadPoint { bary: vec![a, a, b], weight: 1.0 / 3.0 },
            ]
        }
        3 => {
            let a = 0.585_410_196_624_968_5;
            let b = 0.138_196_601_125_010_5;
            (0..4)
                .map(|i| {
                    let mut bary = vec![b; 4];
                    bary[i] = a;
                    QuadPoint { bary, weight: 0.25 }
                })
                .collect()
        }
        _ => panic!("no quadrature rule for simplex dimension {dim}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(dim: usize, exps: &[u32]) -> f64 {
        // ∫_ref λ^α = α! d! / (|α| + d)!  (normalized by the reference measure 1/d!)
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let num: f64 = exps.iter().map(|&e| fact(e)).product::<f64>() * fact(dim as u32);
        let total: u32 = exps.iter().sum();
        num / fact(total + dim as u32)
    }

    #[test]
    fn exact_for_quadratic_monomials() {
        for dim in 1..=3 {
            let rule = degree2_rule(dim);
            let wsum: f64 = rule.iter().map(|q| q.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-15);
            for i in 0..=dim {
                for j in i..=dim {
                    let mut exps = vec![0u32; dim + 1];
                    exps[i] += 1;
                    exps[j] += 1;
                    let quad: f64 = rule.iter().map(|q| q.weight * q.bary[i] * q.bary[j]).sum();
                    let exact = monomial_integral(dim, &exps);
                    assert!((quad - exact).abs() < 1e-14, "dim {dim} ({i},{j})");
                }
            }
        }
    }
}
