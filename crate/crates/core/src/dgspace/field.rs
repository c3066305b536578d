//! Piecewise-polynomial DG fields: coefficient storage, evaluation,
//! interpolation, integrals.

use std::sync::Arc;

use super::basis::{legendre_all, legendre_norm_sq, tensor_split};
use super::quadrature::GaussLegendre;
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// A field in the broken polynomial space: modal Legendre coefficients per
/// element, stored contiguously in element order.
#[derive(Debug, Clone)]
pub struct DgField {
    mesh: Arc<Mesh>,
    coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        DgField {
            mesh: mesh.clone(),
            coeffs: vec![0.0; mesh.n_dofs()],
        }
    }

    pub fn from_coeffs(mesh: &Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.n_dofs() {
            return Err(Error::MeshMismatch(format!(
                "{} coefficients for a space of dimension {}",
                coeffs.len(),
                mesh.n_dofs()
            )));
        }
        Ok(DgField {
            mesh: mesh.clone(),
            coeffs,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Local coefficient slice of one element.
    pub fn elem_coeffs(&self, elem: usize) -> &[f64] {
        let off = self.mesh.dof_offset(elem);
        &self.coeffs[off..off + self.mesh.local_dofs(elem)]
    }

    /// Elementwise L2 projection of `f`, with the quadrature rule chosen per
    /// element as `points_per_axis(degree)`.
    ///
    /// The Legendre basis is orthogonal, so the projection reduces to scaled
    /// moments; the local mass diagonal is analytic.
    pub fn interpolate_with_rule(
        mesh: &Arc<Mesh>,
        f: &dyn Fn([f64; 2]) -> f64,
        points_per_axis: &dyn Fn(usize) -> usize,
    ) -> Self {
        let dim = mesh.dim;
        let mut coeffs = vec![0.0; mesh.n_dofs()];
        let mut vals_x = Vec::new();
        let mut vals_y = Vec::new();
        let mut scratch = Vec::new();
        for e in 0..mesh.n_elements() {
            let p = mesh.degree(e);
            let rule = GaussLegendre::new(points_per_axis(p).max(p + 1));
            let elem = mesh.element(e).expect("element in range");
            let n_loc = mesh.local_dofs(e);
            let off = mesh.dof_offset(e);
            let moments = &mut coeffs[off..off + n_loc];
            let ny = if dim == 2 { rule.len() } else { 1 };
            for qy in 0..ny {
                for qx in 0..rule.len() {
                    let local = [rule.nodes[qx], if dim == 2 { rule.nodes[qy] } else { 0.0 }];
                    let x = elem.to_physical(local, dim);
                    let w = rule.weights[qx] * if dim == 2 { rule.weights[qy] } else { 1.0 };
                    let fv = f(x) * w;
                    legendre_all(p, local[0], &mut vals_x, &mut scratch);
                    if dim == 2 {
                        let mut d = Vec::new();
                        legendre_all(p, local[1], &mut vals_y, &mut d);
                    }
                    for l in 0..n_loc {
                        let [i, j] = tensor_split(l, p, dim);
                        let phi = vals_x[i] * if dim == 2 { vals_y[j] } else { 1.0 };
                        moments[l] += fv * phi;
                    }
                }
            }
            // Divide by the analytic master-cell mass diagonal. The physical
            // jacobian cancels between moment and mass.
            for l in 0..n_loc {
                let [i, j] = tensor_split(l, p, dim);
                let mut m = legendre_norm_sq(i);
                if dim == 2 {
                    m *= legendre_norm_sq(j);
                }
                moments[l] /= m;
            }
        }
        DgField {
            mesh: mesh.clone(),
            coeffs,
        }
    }

    /// Elementwise L2 projection with the default `p + 2` point rule.
    pub fn interpolate(mesh: &Arc<Mesh>, f: &dyn Fn([f64; 2]) -> f64) -> Self {
        Self::interpolate_with_rule(mesh, f, &|p| p + 2)
    }

    /// Value and physical gradient at a master-cell point of an element.
    pub fn evaluate(&self, elem: usize, local: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let e = self.mesh.element(elem)?;
        let dim = self.mesh.dim;
        let p = self.mesh.degree(elem);
        let c = self.elem_coeffs(elem);
        let mut vx = Vec::new();
        let mut dx = Vec::new();
        let mut vy = Vec::new();
        let mut dy = Vec::new();
        legendre_all(p, local[0], &mut vx, &mut dx);
        if dim == 2 {
            legendre_all(p, local[1], &mut vy, &mut dy);
        }
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        for (l, &cl) in c.iter().enumerate() {
            let [i, j] = tensor_split(l, p, dim);
            if dim == 1 {
                value += cl * vx[i];
                grad[0] += cl * dx[i];
            } else {
                value += cl * vx[i] * vy[j];
                grad[0] += cl * dx[i] * vy[j];
                grad[1] += cl * vx[i] * dy[j];
            }
        }
        for a in 0..dim {
            grad[a] *= 2.0 / e.extent(a);
        }
        Ok((value, grad))
    }

    /// Evaluate at a physical point, locating the containing element.
    pub fn evaluate_global(&self, x: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let elem = self.mesh.locate(x).ok_or_else(|| {
            Error::MeshMismatch(format!("point ({}, {}) outside the domain", x[0], x[1]))
        })?;
        let local = self.mesh.element(elem)?.to_local(x, self.mesh.dim);
        self.evaluate(elem, local)
    }

    /// Integral of the field over the domain (exact: the basis integrates
    /// analytically, only the constant mode contributes).
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.mesh.n_elements() {
            acc += self.elem_coeffs(e)[0] * self.mesh.element_measure(e);
        }
        acc
    }

    /// L2 norm via per-element Gauss quadrature exact for the square.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.mesh.n_elements() {
            let p = self.mesh.degree(e);
            let c = self.elem_coeffs(e);
            // Orthogonality makes this analytic as well.
            let jac = self.mesh.element_measure(e) / 2f64.powi(self.mesh.dim as i32);
            for (l, &cl) in c.iter().enumerate() {
                let [i, j] = tensor_split(l, p, self.mesh.dim);
                let mut m = legendre_norm_sq(i);
                if self.mesh.dim == 2 {
                    m *= legendre_norm_sq(j);
                }
                acc += cl * cl * m * jac;
            }
        }
        acc.sqrt()
    }

    /// In-place `self += alpha * other`. Panics on mesh mismatch.
    pub fn axpy(&mut self, alpha: f64, other: &DgField) {
        assert_eq!(
            self.coeffs.len(),
            other.coeffs.len(),
            "axpy between different spaces"
        );
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= alpha;
        }
    }

    /// `(1 - omega) * self + omega * other`, the damped Picard update.
    pub fn relaxed_toward(&self, omega: f64, other: &DgField) -> DgField {
        let mut out = self.clone();
        out.scale(1.0 - omega);
        out.axpy(omega, other);
        out
    }
}
