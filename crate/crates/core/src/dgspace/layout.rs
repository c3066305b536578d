//! Precomputed quadrature layout: every volume and face quadrature point of a
//! mesh, with master-cell basis tabulations shared between elements.
//!
//! The layout is the single source of truth for point ordering. The
//! deformation kernel, coefficient freezing, and assembly all address
//! quadrature points through the same layout, so their arrays line up by
//! construction.

use std::collections::HashMap;
use std::sync::Arc;

use super::basis::{legendre_all, tensor_split};
use super::field::DgField;
use super::quadrature::GaussLegendre;
use crate::mesh::Mesh;

/// Points-per-axis rule: `n = factor * p + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleSpec {
    pub factor: usize,
    pub offset: usize,
}

impl RuleSpec {
    /// Default rule for linear terms: `p + 2` points per axis.
    pub fn standard() -> Self {
        RuleSpec { factor: 1, offset: 2 }
    }

    /// Rule for terms with constitutive nonlinearities: `2p + 2` points.
    pub fn physics() -> Self {
        RuleSpec { factor: 2, offset: 2 }
    }

    pub fn points(&self, p: usize) -> usize {
        (self.factor * p + self.offset).max(1)
    }
}

/// Basis values and master-cell gradients at the volume points of one
/// element type `(p, n)`.
#[derive(Debug)]
pub struct BasisTab {
    pub n_loc: usize,
    pub n_pts: usize,
    /// `vals[q * n_loc + l]`
    pub vals: Vec<f64>,
    /// Master-cell derivative along each axis, same indexing.
    pub grads: [Vec<f64>; 2],
}

/// Basis values and normal master-derivatives on one side of a face.
#[derive(Debug)]
pub struct TraceTab {
    pub n_loc: usize,
    pub n_pts: usize,
    pub vals: Vec<f64>,
    pub dnorm: Vec<f64>,
}

/// Trace tabulations for the elements adjacent to a face.
#[derive(Debug, Clone)]
pub struct FaceSides {
    pub lo: Option<Arc<TraceTab>>,
    pub hi: Option<Arc<TraceTab>>,
}

#[derive(Debug)]
pub struct QuadLayout {
    pub mesh: Arc<Mesh>,
    pub rule: RuleSpec,
    /// Per-element offsets into the volume point arrays (length n_elem + 1).
    pub vol_offsets: Vec<usize>,
    pub vol_points: Vec<[f64; 2]>,
    /// Physical quadrature weights (master weight times jacobian).
    pub vol_weights: Vec<f64>,
    pub vol_locals: Vec<[f64; 2]>,
    vol_tabs: Vec<Arc<BasisTab>>,
    /// Per-face offsets into the face point arrays (length n_face + 1).
    pub face_offsets: Vec<usize>,
    pub face_points: Vec<[f64; 2]>,
    /// Face integration weights (1.0 for 1D point faces).
    pub face_weights: Vec<f64>,
    face_tabs: Vec<FaceSides>,
}

fn build_basis_tab(p: usize, n: usize, dim: usize, rule: &GaussLegendre) -> BasisTab {
    let n_loc = (p + 1).pow(dim as u32);
    let n_pts = if dim == 2 { n * n } else { n };
    let mut vals = vec![0.0; n_pts * n_loc];
    let mut gx = vec![0.0; n_pts * n_loc];
    let mut gy = vec![0.0; if dim == 2 { n_pts * n_loc } else { 0 }];
    let mut v1 = Vec::new();
    let mut d1 = Vec::new();
    let mut v2 = Vec::new();
    let mut d2 = Vec::new();
    for q in 0..n_pts {
        let (qx, qy) = (q % n, q / n);
        legendre_all(p, rule.nodes[qx], &mut v1, &mut d1);
        if dim == 2 {
            legendre_all(p, rule.nodes[qy], &mut v2, &mut d2);
        }
        for l in 0..n_loc {
            let [i, j] = tensor_split(l, p, dim);
            let idx = q * n_loc + l;
            if dim == 1 {
                vals[idx] = v1[i];
                gx[idx] = d1[i];
            } else {
                vals[idx] = v1[i] * v2[j];
                gx[idx] = d1[i] * v2[j];
                gy[idx] = v1[i] * d2[j];
            }
        }
    }
    BasisTab {
        n_loc,
        n_pts,
        vals,
        grads: [gx, gy],
    }
}

/// Tabulate traces of an element of degree `p` on a face with normal `axis`,
/// seen from the given side (`side = +1`: element below the face, trace at
/// local coordinate +1 along `axis`).
fn build_trace_tab(
    p: usize,
    axis: usize,
    side: i8,
    n_tangent: usize,
    dim: usize,
    rule: &GaussLegendre,
) -> TraceTab {
    let n_loc = (p + 1).pow(dim as u32);
    let n_pts = if dim == 2 { n_tangent } else { 1 };
    let xi_n = side as f64; // +1 or -1 on the normal axis
    let mut vals = vec![0.0; n_pts * n_loc];
    let mut dnorm = vec![0.0; n_pts * n_loc];
    let mut vn = Vec::new();
    let mut dn = Vec::new();
    let mut vt = Vec::new();
    let mut dt = Vec::new();
    legendre_all(p, xi_n, &mut vn, &mut dn);
    for q in 0..n_pts {
        if dim == 2 {
            legendre_all(p, rule.nodes[q], &mut vt, &mut dt);
        }
        for l in 0..n_loc {
            let [i, j] = tensor_split(l, p, dim);
            // (i, j) are the (x, y) polynomial degrees; pick which runs
            // along the normal axis.
            let (kn, kt) = if axis == 0 { (i, j) } else { (j, i) };
            let idx = q * n_loc + l;
            if dim == 1 {
                vals[idx] = vn[kn];
                dnorm[idx] = dn[kn];
            } else {
                vals[idx] = vn[kn] * vt[kt];
                dnorm[idx] = dn[kn] * vt[kt];
            }
        }
    }
    TraceTab {
        n_loc,
        n_pts,
        vals,
        dnorm,
    }
}

impl QuadLayout {
    pub fn build(mesh: &Arc<Mesh>, rule: RuleSpec) -> Self {
        let dim = mesh.dim;
        let mut tab_cache: HashMap<(usize, usize), Arc<BasisTab>> = HashMap::new();
        let mut rule_cache: HashMap<usize, Arc<GaussLegendre>> = HashMap::new();
        let get_rule = move |n: usize,
                                 cache: &mut HashMap<usize, Arc<GaussLegendre>>|
              -> Arc<GaussLegendre> {
            cache
                .entry(n)
                .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
                .clone()
        };

        let mut vol_offsets = Vec::with_capacity(mesh.n_elements() + 1);
        let mut vol_points = Vec::new();
        let mut vol_weights = Vec::new();
        let mut vol_locals = Vec::new();
        let mut vol_tabs = Vec::with_capacity(mesh.n_elements());

        for e in 0..mesh.n_elements() {
            vol_offsets.push(vol_points.len());
            let p = mesh.degree(e);
            let n = rule.points(p);
            let g = get_rule(n, &mut rule_cache);
            let tab = tab_cache
                .entry((p, n))
                .or_insert_with(|| Arc::new(build_basis_tab(p, n, dim, &g)))
                .clone();
            let elem = mesh.element(e).expect("element in range");
            let jac = mesh.element_measure(e) / 2f64.powi(dim as i32);
            let ny = if dim == 2 { n } else { 1 };
            for qy in 0..ny {
                for qx in 0..n {
                    let local = [g.nodes[qx], if dim == 2 { g.nodes[qy] } else { 0.0 }];
                    let w = g.weights[qx] * if dim == 2 { g.weights[qy] } else { 1.0 };
                    vol_locals.push(local);
                    vol_points.push(elem.to_physical(local, dim));
                    vol_weights.push(w * jac);
                }
            }
            vol_tabs.push(tab);
        }
        vol_offsets.push(vol_points.len());

        let mut trace_cache: HashMap<(usize, usize, i8, usize), Arc<TraceTab>> = HashMap::new();
        let mut face_offsets = Vec::with_capacity(mesh.n_faces() + 1);
        let mut face_points = Vec::new();
        let mut face_weights = Vec::new();
        let mut face_tabs = Vec::with_capacity(mesh.n_faces());

        for face in mesh.faces() {
            face_offsets.push(face_points.len());
            let pk = mesh.face_degree(face);
            let n_t = if dim == 2 { rule.points(pk) } else { 1 };
            let g = get_rule(n_t.max(1), &mut rule_cache);
            let tangent_axis = 1 - face.axis;
            if dim == 1 {
                face_points.push([face.position, 0.0]);
                face_weights.push(1.0);
            } else {
                let half = 0.5 * (face.tspan[1] - face.tspan[0]);
                let mid = 0.5 * (face.tspan[0] + face.tspan[1]);
                for q in 0..n_t {
                    let mut x = [0.0; 2];
                    x[face.axis] = face.position;
                    x[tangent_axis] = mid + half * g.nodes[q];
                    face_points.push(x);
                    face_weights.push(g.weights[q] * half);
                }
            }
            let mut mk_side = |elem: Option<usize>, side: i8| -> Option<Arc<TraceTab>> {
                elem.map(|e| {
                    let p = mesh.degree(e);
                    trace_cache
                        .entry((p, face.axis, side, n_t))
                        .or_insert_with(|| {
                            Arc::new(build_trace_tab(p, face.axis, side, n_t, dim, &g))
                        })
                        .clone()
                })
            };
            let lo = mk_side(face.lo_elem, 1);
            let hi = mk_side(face.hi_elem, -1);
            face_tabs.push(FaceSides { lo, hi });
        }
        face_offsets.push(face_points.len());

        QuadLayout {
            mesh: mesh.clone(),
            rule,
            vol_offsets,
            vol_points,
            vol_weights,
            vol_locals,
            vol_tabs,
            face_offsets,
            face_points,
            face_weights,
            face_tabs,
        }
    }

    pub fn n_vol_points(&self) -> usize {
        self.vol_points.len()
    }

    pub fn n_face_points(&self) -> usize {
        self.face_points.len()
    }

    pub fn vol_tab(&self, elem: usize) -> &BasisTab {
        &self.vol_tabs[elem]
    }

    pub fn face_sides(&self, face: usize) -> &FaceSides {
        &self.face_tabs[face]
    }

    pub fn elem_point_range(&self, elem: usize) -> std::ops::Range<usize> {
        self.vol_offsets[elem]..self.vol_offsets[elem + 1]
    }

    pub fn face_point_range(&self, face: usize) -> std::ops::Range<usize> {
        self.face_offsets[face]..self.face_offsets[face + 1]
    }

    /// Field values at all volume points.
    pub fn field_vol_values(&self, field: &DgField) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vol_points()];
        for e in 0..self.mesh.n_elements() {
            let tab = self.vol_tab(e);
            let c = field.elem_coeffs(e);
            for (qi, q) in self.elem_point_range(e).enumerate() {
                let row = &tab.vals[qi * tab.n_loc..(qi + 1) * tab.n_loc];
                out[q] = row.iter().zip(c).map(|(phi, cl)| phi * cl).sum();
            }
        }
        out
    }

    /// One-sided field traces at all face points. Missing sides (domain
    /// boundary) evaluate to 0, the exterior Dirichlet convention.
    pub fn field_face_values(&self, field: &DgField) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_face_points();
        let mut lo_vals = vec![0.0; n];
        let mut hi_vals = vec![0.0; n];
        for (fi, face) in self.mesh.faces().iter().enumerate() {
            let sides = &self.face_tabs[fi];
            for (side_tab, side_elem, out) in [
                (&sides.lo, face.lo_elem, &mut lo_vals),
                (&sides.hi, face.hi_elem, &mut hi_vals),
            ] {
                if let (Some(tab), Some(e)) = (side_tab, side_elem) {
                    let c = field.elem_coeffs(e);
                    for (qi, q) in self.face_point_range(fi).enumerate() {
                        let row = &tab.vals[qi * tab.n_loc..(qi + 1) * tab.n_loc];
                        out[q] = row.iter().zip(c).map(|(phi, cl)| phi * cl).sum();
                    }
                }
            }
        }
        (lo_vals, hi_vals)
    }

    /// Minimum of a field over every volume and face quadrature point.
    pub fn field_min(&self, field: &DgField) -> f64 {
        let mut m = f64::INFINITY;
        for v in self.field_vol_values(field) {
            m = m.min(v);
        }
        let (lo, hi) = self.field_face_values(field);
        for (fi, face) in self.mesh.faces().iter().enumerate() {
            for q in self.face_point_range(fi) {
                if face.lo_elem.is_some() {
                    m = m.min(lo[q]);
                }
                if face.hi_elem.is_some() {
                    m = m.min(hi[q]);
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{DegreeSpec, DomainSpec};

    #[test]
    fn volume_weights_sum_to_domain_measure() {
        for (spec, measure) in [
            (DomainSpec::interval(-4.0, 2.0, 16), 6.0),
            (DomainSpec::rectangle([0.0, 1.0], [0.0, 2.0], [4, 3]), 2.0),
        ] {
            let mesh = Arc::new(Mesh::build(&spec, &DegreeSpec::Uniform(2)).unwrap());
            let layout = QuadLayout::build(&mesh, RuleSpec::standard());
            let s: f64 = layout.vol_weights.iter().sum();
            assert!((s - measure).abs() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn tabulated_values_match_direct_evaluation() {
        let mesh = Arc::new(
            Mesh::build(
                &DomainSpec::rectangle([0.0, 1.0], [0.0, 1.0], [2, 2]),
                &DegreeSpec::Uniform(2),
            )
            .unwrap(),
        );
        let layout = QuadLayout::build(&mesh, RuleSpec::physics());
        let f = DgField::interpolate(&mesh, &|x| x[0] * x[1] + x[1] * x[1]);
        let vals = layout.field_vol_values(&f);
        for e in 0..mesh.n_elements() {
            for (qi, q) in layout.elem_point_range(e).enumerate() {
                let _ = qi;
                let (v, _) = f.evaluate_global(layout.vol_points[q]).unwrap();
                assert!((vals[q] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn face_traces_match_one_sided_limits() {
        let mesh =
            Arc::new(Mesh::build(&DomainSpec::interval(0.0, 1.0, 4), &DegreeSpec::Uniform(1)).unwrap());
        let layout = QuadLayout::build(&mesh, RuleSpec::standard());
        // A field discontinuous across faces: value = element index.
        let mut f = DgField::zeros(&mesh);
        for e in 0..4 {
            f.coeffs_mut()[mesh.dof_offset(e)] = e as f64;
        }
        let (lo, hi) = layout.field_face_values(&f);
        for (fi, face) in mesh.faces().iter().enumerate() {
            let q = layout.face_point_range(fi).next().unwrap();
            match (face.lo_elem, face.hi_elem) {
                (Some(a), Some(b)) => {
                    assert_eq!(lo[q], a as f64);
                    assert_eq!(hi[q], b as f64);
                }
                (Some(a), None) => assert_eq!(lo[q], a as f64),
                (None, Some(b)) => {
                    assert_eq!(hi[q], b as f64);
                    assert_eq!(lo[q], 0.0); // exterior convention
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn field_min_sees_interior_dips() {
        let mesh =
            Arc::new(Mesh::build(&DomainSpec::interval(0.0, 1.0, 8), &DegreeSpec::Uniform(2)).unwrap());
        let layout = QuadLayout::build(&mesh, RuleSpec::physics());
        let f = DgField::interpolate(&mesh, &|x| (x[0] - 0.5) * (x[0] - 0.5) - 0.01);
        let m = layout.field_min(&f);
        assert!(m < -0.009 && m > -0.011, "min = {m}");
    }
}
