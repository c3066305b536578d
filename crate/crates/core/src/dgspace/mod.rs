//! Broken polynomial spaces: Legendre basis, Gauss quadrature, DG fields,
//! quadrature layouts, and broken norms.

pub mod basis;
pub mod field;
pub mod layout;
pub mod norms;
pub mod quadrature;

pub use field::DgField;
pub use layout::{QuadLayout, RuleSpec};
pub use norms::{
    broken_error, broken_error_nu, broken_norm, broken_norm_nu, face_average, face_jump, l2_error,
};
pub use quadrature::GaussLegendre;

#[cfg(test)]
mod inequality_tests {
    //! Numerical spot checks of the two inverse-type inequalities the error
    //! analysis leans on; the fitted constants are measured, not assumed.

    use super::*;
    use crate::mesh::{DegreeSpec, DomainSpec, Mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_field(mesh: &Arc<Mesh>, rng: &mut ChaCha8Rng) -> DgField {
        let mut f = DgField::zeros(mesh);
        for c in f.coeffs_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        f
    }

    /// Per-element quantities: ||v||_K^2, |v|_{1,K}^2 and the squared trace
    /// on the element boundary.
    fn element_quantities(f: &DgField, e: usize) -> (f64, f64, f64) {
        let mesh = f.mesh();
        let p = mesh.degree(e);
        let g = GaussLegendre::new(2 * p + 4);
        let elem = mesh.element(e).unwrap();
        let h = elem.extent(0);
        let (mut l2, mut h1) = (0.0, 0.0);
        for (x, w) in g.nodes.iter().zip(&g.weights) {
            let (v, gr) = f.evaluate(e, [*x, 0.0]).unwrap();
            l2 += w * 0.5 * h * v * v;
            h1 += w * 0.5 * h * gr[0] * gr[0];
        }
        let (vl, _) = f.evaluate(e, [-1.0, 0.0]).unwrap();
        let (vr, _) = f.evaluate(e, [1.0, 0.0]).unwrap();
        (l2, h1, vl * vl + vr * vr)
    }

    #[test]
    fn trace_inequality_constant_stays_modest() {
        // ||v||_boundary^2 <= C (h^-1 ||v||_K^2 + h |v|_{1,K}^2) with a single
        // fitted C over 200 random fields of degree <= 4.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut c_fit: f64 = 0.0;
        for p in 1..=4 {
            let mesh = Arc::new(
                Mesh::build(&DomainSpec::interval(0.0, 1.0, 5), &DegreeSpec::Uniform(p)).unwrap(),
            );
            for _ in 0..50 {
                let f = random_field(&mesh, &mut rng);
                for e in 0..mesh.n_elements() {
                    let h = mesh.element_size(e);
                    let (l2, h1, tr) = element_quantities(&f, e);
                    let rhs = l2 / h + h * h1;
                    if rhs > 1e-14 {
                        c_fit = c_fit.max(tr / rhs);
                    }
                }
            }
        }
        assert!(c_fit <= 10.0, "fitted trace constant {c_fit}");
        assert!(c_fit > 0.5, "suspiciously small constant {c_fit}");
    }

    #[test]
    fn inverse_inequality_constant_is_refinement_stable() {
        // |v|_{1,K} <= C_I p^2 h^-1 ||v||_K. The fitted constant is scale
        // invariant, so refining the mesh while reusing the same master-cell
        // coefficients must reproduce it almost exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 3;
        let coeff_sets: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..p + 1).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut fit = |cells: usize| -> f64 {
            let mesh = Arc::new(
                Mesh::build(&DomainSpec::interval(0.0, 1.0, cells), &DegreeSpec::Uniform(p))
                    .unwrap(),
            );
            let mut c: f64 = 0.0;
            for set in &coeff_sets {
                let mut f = DgField::zeros(&mesh);
                for e in 0..mesh.n_elements() {
                    let off = mesh.dof_offset(e);
                    f.coeffs_mut()[off..off + p + 1].copy_from_slice(set);
                }
                for e in 0..mesh.n_elements() {
                    let h = mesh.element_size(e);
                    let (l2, h1, _) = element_quantities(&f, e);
                    if l2 > 1e-14 {
                        let pf = (p * p) as f64;
                        c = c.max(h1.sqrt() / (pf / h * l2.sqrt()));
                    }
                }
            }
            c
        };
        let c1 = fit(4);
        let c2 = fit(8);
        assert!((c1 - c2).abs() <= 1e-12 * c1, "C_I {c1} vs {c2}");
        assert!(c1 < 2.0, "C_I should be order one for p=3, got {c1}");
    }
}
