//! Broken norms and error norms for DG fields.
//!
//! The mesh-dependent energy norm is
//! `|||v|||^2 = sum_K |v|_{H1(K)}^2 + sum_e a_k p_k^2 / |e_k|^beta * ||[v]||_e^2`
//! over all faces including the boundary (where the jump is the one-sided
//! trace). The `nu` variant adds the flux semi-norm
//! `sum_e |e_k|^beta / p_k^2 * ||{dv/dnu}||_e^2`.

use super::field::DgField;
use super::quadrature::GaussLegendre;

/// Directed jump across a face: lower-side trace minus upper-side trace,
/// with missing sides (domain boundary) contributing 0 — equivalent to the
/// one-sided `v * N` convention up to the sign of `N`, which squares away.
pub fn face_jump(lo: Option<f64>, hi: Option<f64>) -> f64 {
    lo.unwrap_or(0.0) - hi.unwrap_or(0.0)
}

/// Face average; one-sided on boundary faces.
pub fn face_average(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => 0.0,
    }
}

/// L2 error against a closed-form function, integrated with `2p + 4` points
/// per axis so the non-polynomial integrand dominates the error, not the
/// quadrature.
pub fn l2_error(field: &DgField, exact: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let mesh = field.mesh().clone();
    let dim = mesh.dim;
    let mut acc = 0.0;
    for e in 0..mesh.n_elements() {
        let p = mesh.degree(e);
        let g = GaussLegendre::new(2 * p + 4);
        let elem = mesh.element(e).expect("element in range");
        let jac = mesh.element_measure(e) / 2f64.powi(dim as i32);
        let ny = if dim == 2 { g.len() } else { 1 };
        for qy in 0..ny {
            for qx in 0..g.len() {
                let local = [g.nodes[qx], if dim == 2 { g.nodes[qy] } else { 0.0 }];
                let w = g.weights[qx] * if dim == 2 { g.weights[qy] } else { 1.0 } * jac;
                let x = elem.to_physical(local, dim);
                let (v, _) = field.evaluate(e, local).expect("evaluation in range");
                let d = v - exact(x);
                acc += w * d * d;
            }
        }
    }
    acc.sqrt()
}

struct NormParts {
    grad_sq: f64,
    jump_sq: f64,
    flux_sq: f64,
}

/// Shared driver for the broken norms. `exact`/`exact_grad` of `None`
/// measure the field itself; otherwise the difference to the closed form.
fn broken_parts(
    field: &DgField,
    exact: Option<&dyn Fn([f64; 2]) -> f64>,
    exact_grad: Option<&dyn Fn([f64; 2]) -> [f64; 2]>,
    a_k: f64,
    beta: f64,
) -> NormParts {
    let mesh = field.mesh().clone();
    let dim = mesh.dim;

    let mut grad_sq = 0.0;
    for e in 0..mesh.n_elements() {
        let p = mesh.degree(e);
        let g = GaussLegendre::new(2 * p + 4);
        let elem = mesh.element(e).expect("element in range");
        let jac = mesh.element_measure(e) / 2f64.powi(dim as i32);
        let ny = if dim == 2 { g.len() } else { 1 };
        for qy in 0..ny {
            for qx in 0..g.len() {
                let local = [g.nodes[qx], if dim == 2 { g.nodes[qy] } else { 0.0 }];
                let w = g.weights[qx] * if dim == 2 { g.weights[qy] } else { 1.0 } * jac;
                let x = elem.to_physical(local, dim);
                let (_, mut gr) = field.evaluate(e, local).expect("evaluation in range");
                if let Some(gex) = exact_grad {
                    let ge = gex(x);
                    gr[0] -= ge[0];
                    gr[1] -= ge[1];
                }
                for a in 0..dim {
                    grad_sq += w * gr[a] * gr[a];
                }
            }
        }
    }

    let mut jump_sq = 0.0;
    let mut flux_sq = 0.0;
    for face in mesh.faces() {
        let pk = mesh.face_degree(face).max(1);
        let sigma = a_k * (pk * pk) as f64 / face.stab_measure.powf(beta);
        let nu_w = face.stab_measure.powf(beta) / (pk * pk) as f64;
        let n_t = if dim == 2 { 2 * pk + 4 } else { 1 };
        let g = GaussLegendre::new(n_t);
        let tangent_axis = 1 - face.axis;
        for q in 0..if dim == 2 { n_t } else { 1 } {
            let (x, w) = if dim == 1 {
                ([face.position, 0.0], 1.0)
            } else {
                let half = 0.5 * (face.tspan[1] - face.tspan[0]);
                let mid = 0.5 * (face.tspan[0] + face.tspan[1]);
                let mut x = [0.0; 2];
                x[face.axis] = face.position;
                x[tangent_axis] = mid + half * g.nodes[q];
                (x, g.weights[q] * half)
            };
            let side = |elem: Option<usize>| -> Option<(f64, f64)> {
                elem.map(|e| {
                    let el = mesh.element(e).expect("element in range");
                    let local = el.to_local(x, dim);
                    let (mut v, mut gr) = field.evaluate(e, local).expect("evaluation in range");
                    if let Some(ex) = exact {
                        v -= ex(x);
                    }
                    if let Some(gex) = exact_grad {
                        let ge = gex(x);
                        gr[0] -= ge[0];
                        gr[1] -= ge[1];
                    }
                    (v, gr[face.axis])
                })
            };
            let lo = side(face.lo_elem);
            let hi = side(face.hi_elem);
            let jump = face_jump(lo.map(|s| s.0), hi.map(|s| s.0));
            let flux = face_average(lo.map(|s| s.1), hi.map(|s| s.1));
            jump_sq += w * sigma * jump * jump;
            flux_sq += w * nu_w * flux * flux;
        }
    }

    NormParts {
        grad_sq,
        jump_sq,
        flux_sq,
    }
}

/// Energy norm `|||v|||`.
pub fn broken_norm(field: &DgField, a_k: f64, beta: f64) -> f64 {
    let p = broken_parts(field, None, None, a_k, beta);
    (p.grad_sq + p.jump_sq).sqrt()
}

/// Energy norm with the flux semi-norm, `|||v|||_nu`.
pub fn broken_norm_nu(field: &DgField, a_k: f64, beta: f64) -> f64 {
    let p = broken_parts(field, None, None, a_k, beta);
    (p.grad_sq + p.jump_sq + p.flux_sq).sqrt()
}

/// `|||u_h - u|||` against a closed-form exact solution.
pub fn broken_error(
    field: &DgField,
    exact: &dyn Fn([f64; 2]) -> f64,
    exact_grad: &dyn Fn([f64; 2]) -> [f64; 2],
    a_k: f64,
    beta: f64,
) -> f64 {
    let p = broken_parts(field, Some(exact), Some(exact_grad), a_k, beta);
    (p.grad_sq + p.jump_sq).sqrt()
}

/// `|||u_h - u|||_nu` against a closed-form exact solution.
pub fn broken_error_nu(
    field: &DgField,
    exact: &dyn Fn([f64; 2]) -> f64,
    exact_grad: &dyn Fn([f64; 2]) -> [f64; 2],
    a_k: f64,
    beta: f64,
) -> f64 {
    let p = broken_parts(field, Some(exact), Some(exact_grad), a_k, beta);
    (p.grad_sq + p.jump_sq + p.flux_sq).sqrt()
}
