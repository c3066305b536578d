//! Gauss–Legendre quadrature on [-1, 1].
//!
//! Nodes are Legendre roots found by Newton iteration from the Chebyshev
//! initial guess; the rule is symmetrized exactly so that mirrored meshes
//! integrate to bit-identical values.

use super::basis::legendre_pair;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// n-point rule, exact for polynomials of degree `2n - 1`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature rule needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n {
            // Chebyshev-like initial guess, descending in x as i grows.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_pair(n, x);
                dp = d;
                let dx = -p / d;
                x += dx;
                if dx.abs() <= 1e-15 {
                    let (_, d) = legendre_pair(n, x);
                    dp = d;
                    break;
                }
            }
            // store ascending
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // Exact symmetrization.
        for i in 0..n / 2 {
            let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -a;
            nodes[n - 1 - i] = a;
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_rules_match_closed_forms() {
        let g1 = GaussLegendre::new(1);
        assert_eq!(g1.nodes, vec![0.0]);
        assert!((g1.weights[0] - 2.0).abs() < 1e-15);

        let g2 = GaussLegendre::new(2);
        let r = 1.0 / 3.0f64.sqrt();
        assert!((g2.nodes[0] + r).abs() < 1e-15);
        assert!((g2.nodes[1] - r).abs() < 1e-15);
        assert!((g2.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polynomial_exactness_to_machine_precision() {
        // An n-point rule integrates monomials up to degree 2n-1 exactly:
        // integral of x^k over [-1,1] is 0 (odd k) or 2/(k+1) (even k).
        for n in 1..=16 {
            let g = GaussLegendre::new(n);
            for k in 0..=(2 * n - 1) {
                let got: f64 = g
                    .nodes
                    .iter()
                    .zip(&g.weights)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!(
                    (got - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                    "n={n} k={k}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 3, 7, 20, 33] {
            let g = GaussLegendre::new(n);
            let s: f64 = g.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        for n in [2, 5, 8, 13] {
            let g = GaussLegendre::new(n);
            for i in 0..n / 2 {
                assert_eq!(g.nodes[i].to_bits(), (-g.nodes[n - 1 - i]).to_bits());
                assert_eq!(g.weights[i].to_bits(), g.weights[n - 1 - i].to_bits());
            }
            if n % 2 == 1 {
                assert_eq!(g.nodes[n / 2].to_bits(), 0.0f64.to_bits());
            }
            for i in 1..n {
                assert!(g.nodes[i] > g.nodes[i - 1]);
            }
        }
    }

    #[test]
    fn integrate_maps_interval() {
        let g = GaussLegendre::new(6);
        let got = g.integrate(0.0, 2.0, |x| x * x * x);
        assert!((got - 4.0).abs() < 1e-13);
    }
}
