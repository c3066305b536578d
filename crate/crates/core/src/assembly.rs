//! Assembly of the stabilized DG form for the penalized lubrication problem.
//!
//! The discrete operator collects, per solve, the following pieces:
//! volume diffusion with the state-dependent coefficient, interior-penalty
//! face terms (consistency flux, optional symmetrizing flux scaled by
//! `theta`, and jump stabilization `a_k p_k^2 / |e_k|^beta`), the exterior
//! penalty enforcing `u >= 0`, and the transport ("wedge") terms carrying
//! `rho(u) h` along the entrainment direction. Boundary conditions are the
//! homogeneous Dirichlet ones, imposed weakly by treating the missing side of
//! a boundary face as an exterior trace of zero.
//!
//! Two linearizations are provided. [`assemble_picard`] freezes every
//! state-dependent coefficient at the current iterate, which yields a sparse
//! system; the transport terms and the penalty source go to the right-hand
//! side. [`assemble_newton`] adds the derivative blocks of the frozen
//! coefficients, including the dense coupling of the film thickness to all
//! pressure unknowns through the deformation kernel, so the result is a dense
//! Jacobian. With the derivative blocks switched off the Newton matrix equals
//! the Picard matrix.

use nalgebra as na;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dgspace::layout::TraceTab;
use crate::dgspace::{DgField, QuadLayout};
use crate::penalty::{xi, xi_derivative, PenaltyConfig, PenaltyMode};
use crate::physics::{DeformationKernel, EpsStarDeriv, FilmField, Lubricant};
use crate::{Error, Result};

/// Parameters of the face terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormParams {
    /// Stabilization amplitude.
    pub a_k: f64,
    /// Exponent of the face measure in the stabilization weight.
    pub beta: f64,
    /// Weight of the symmetrizing flux: `1` symmetric, `0` incomplete,
    /// `-1` non-symmetric.
    pub theta: f64,
}

impl Default for FormParams {
    fn default() -> Self {
        FormParams {
            a_k: 10.0,
            beta: 1.0,
            theta: 0.0,
        }
    }
}

/// Diffusion coefficient models the assembly can freeze.
#[derive(Debug, Clone)]
pub enum DiffusionModel {
    /// State-independent coefficient (plain stabilized Poisson problem).
    Constant(f64),
    /// `1 + u^2`, the nonlinear manufactured case.
    UnitPlusSquare,
    /// The full lubrication coefficient `rho h^3 / (eta lambda)`.
    Lubricated(Lubricant),
}

impl DiffusionModel {
    /// Value and partial derivatives at state `u`, film `h`.
    pub fn eval(&self, u: f64, h: f64) -> Result<EpsStarDeriv> {
        match self {
            DiffusionModel::Constant(c) => Ok(EpsStarDeriv {
                value: *c,
                d_du: 0.0,
                d_dh: 0.0,
                clamped: false,
            }),
            DiffusionModel::UnitPlusSquare => Ok(EpsStarDeriv {
                value: 1.0 + u * u,
                d_du: 2.0 * u,
                d_dh: 0.0,
                clamped: false,
            }),
            DiffusionModel::Lubricated(lub) => lub.epsilon_star_with_derivatives(u, h),
        }
    }

    pub fn lubricant(&self) -> Option<&Lubricant> {
        match self {
            DiffusionModel::Lubricated(lub) => Some(lub),
            _ => None,
        }
    }
}

/// Every state-dependent quantity the assembly needs, sampled on the
/// quadrature layout. Face arrays come in `[lower side, upper side]` pairs;
/// entries of a missing (boundary) side are zero and never read.
#[derive(Debug)]
pub struct FrozenCoeffs {
    pub eps_vol: Vec<f64>,
    pub deps_du_vol: Vec<f64>,
    pub deps_dh_vol: Vec<f64>,
    pub eps_face: [Vec<f64>; 2],
    pub deps_du_face: [Vec<f64>; 2],
    pub deps_dh_face: [Vec<f64>; 2],
    /// Penalty integrand `xi(u)` and slope `xi'(u)` at volume points.
    pub xi_vol: Vec<f64>,
    pub dxi_vol: Vec<f64>,
    pub state_vol: Vec<f64>,
    pub state_face: [Vec<f64>; 2],
    /// Physical state gradient at volume points (Newton chain terms).
    pub grad_state_vol: Vec<[f64; 2]>,
    /// One-sided physical normal derivative of the state at face points.
    pub dnorm_state_face: [Vec<f64>; 2],
    /// Transport terms present: the `wedge_*` and `rho_*` arrays are filled.
    pub wedge: bool,
    /// `rho(u) h` at volume points.
    pub wedge_vol: Vec<f64>,
    pub rho_vol: Vec<f64>,
    pub drho_vol: Vec<f64>,
    /// One-sided `rho(u) h` at face points; `h` itself is single-valued.
    pub wedge_face: [Vec<f64>; 2],
    pub rho_face: [Vec<f64>; 2],
    pub drho_face: [Vec<f64>; 2],
    pub h_vol: Vec<f64>,
    pub h_face: Vec<f64>,
    /// Whether the coefficient clamp fired anywhere.
    pub clamp_active: bool,
}

fn locate_collapse(err: Error, x: [f64; 2]) -> Error {
    match err {
        Error::FilmCollapse { min_h, .. } => Error::FilmCollapse {
            min_h,
            x: x[0],
            y: x[1],
        },
        other => other,
    }
}

impl FrozenCoeffs {
    /// Sample the coefficient model, penalty integrand, and (optionally) the
    /// transport coefficient at every quadrature point of `layout`.
    pub fn freeze(
        layout: &QuadLayout,
        model: &DiffusionModel,
        state: &DgField,
        film: Option<&FilmField>,
        wedge: bool,
    ) -> Result<Self> {
        let mesh = &layout.mesh;
        if state.mesh().fingerprint() != mesh.fingerprint() {
            return Err(Error::MeshMismatch(
                "state field was built on a different mesh than the layout".into(),
            ));
        }
        let n_vol = layout.n_vol_points();
        let n_face = layout.n_face_points();
        if let Some(f) = film {
            if f.vol.len() != n_vol || f.face.len() != n_face {
                return Err(Error::MeshMismatch(format!(
                    "film sampled at {}+{} points, layout has {}+{}",
                    f.vol.len(),
                    f.face.len(),
                    n_vol,
                    n_face
                )));
            }
        }
        if wedge && film.is_none() {
            return Err(Error::InvalidConfig(
                "transport terms need a film field".into(),
            ));
        }
        let lub = model.lubricant();
        if wedge && lub.is_none() {
            return Err(Error::InvalidConfig(
                "transport terms need a lubricated coefficient model".into(),
            ));
        }

        let state_vol = layout.field_vol_values(state);
        let (state_lo, state_hi) = layout.field_face_values(state);
        let h_vol: Vec<f64> = match film {
            Some(f) => f.vol.clone(),
            None => vec![1.0; n_vol],
        };
        let h_face: Vec<f64> = match film {
            Some(f) => f.face.clone(),
            None => vec![1.0; n_face],
        };

        let mut clamp_active = false;
        let mut eps_vol = vec![0.0; n_vol];
        let mut deps_du_vol = vec![0.0; n_vol];
        let mut deps_dh_vol = vec![0.0; n_vol];
        for q in 0..n_vol {
            let d = model
                .eval(state_vol[q], h_vol[q])
                .map_err(|e| locate_collapse(e, layout.vol_points[q]))?;
            eps_vol[q] = d.value;
            deps_du_vol[q] = d.d_du;
            deps_dh_vol[q] = d.d_dh;
            clamp_active |= d.clamped;
        }

        let mut eps_face = [vec![0.0; n_face], vec![0.0; n_face]];
        let mut deps_du_face = [vec![0.0; n_face], vec![0.0; n_face]];
        let mut deps_dh_face = [vec![0.0; n_face], vec![0.0; n_face]];
        for (fi, face) in mesh.faces().iter().enumerate() {
            for q in layout.face_point_range(fi) {
                for (side, present, vals) in [
                    (0usize, face.lo_elem.is_some(), &state_lo),
                    (1usize, face.hi_elem.is_some(), &state_hi),
                ] {
                    if !present {
                        continue;
                    }
                    let d = model
                        .eval(vals[q], h_face[q])
                        .map_err(|e| locate_collapse(e, layout.face_points[q]))?;
                    eps_face[side][q] = d.value;
                    deps_du_face[side][q] = d.d_du;
                    deps_dh_face[side][q] = d.d_dh;
                    clamp_active |= d.clamped;
                }
            }
        }

        let xi_vol: Vec<f64> = state_vol.iter().map(|&u| xi(u)).collect();
        let dxi_vol: Vec<f64> = state_vol.iter().map(|&u| xi_derivative(u)).collect();

        // Physical state gradient at volume points.
        let dim = mesh.dim;
        let mut grad_state_vol = vec![[0.0; 2]; n_vol];
        for e in 0..mesh.n_elements() {
            let tab = layout.vol_tab(e);
            let c = state.elem_coeffs(e);
            let elem = mesh.element(e)?;
            for (qi, q) in layout.elem_point_range(e).enumerate() {
                for a in 0..dim {
                    let scale = 2.0 / elem.extent(a);
                    let row = &tab.grads[a][qi * tab.n_loc..(qi + 1) * tab.n_loc];
                    grad_state_vol[q][a] =
                        scale * row.iter().zip(c).map(|(g, cl)| g * cl).sum::<f64>();
                }
            }
        }

        // One-sided physical normal derivatives at face points.
        let mut dnorm_state_face = [vec![0.0; n_face], vec![0.0; n_face]];
        for (fi, face) in mesh.faces().iter().enumerate() {
            let sides = layout.face_sides(fi);
            for (side, elem, tab) in [
                (0usize, face.lo_elem, sides.lo.as_deref()),
                (1usize, face.hi_elem, sides.hi.as_deref()),
            ] {
                let (Some(e), Some(tab)) = (elem, tab) else {
                    continue;
                };
                let c = state.elem_coeffs(e);
                let scale = 2.0 / mesh.element(e)?.extent(face.axis);
                for (qi, q) in layout.face_point_range(fi).enumerate() {
                    let row = &tab.dnorm[qi * tab.n_loc..(qi + 1) * tab.n_loc];
                    dnorm_state_face[side][q] =
                        scale * row.iter().zip(c).map(|(g, cl)| g * cl).sum::<f64>();
                }
            }
        }

        // Transport coefficient rho(u) h.
        let mut wedge_vol = Vec::new();
        let mut rho_vol = Vec::new();
        let mut drho_vol = Vec::new();
        let mut wedge_face = [Vec::new(), Vec::new()];
        let mut rho_face = [Vec::new(), Vec::new()];
        let mut drho_face = [Vec::new(), Vec::new()];
        if wedge {
            let lub = lub.expect("checked above");
            rho_vol = vec![0.0; n_vol];
            drho_vol = vec![0.0; n_vol];
            wedge_vol = vec![0.0; n_vol];
            for q in 0..n_vol {
                let (r, dr) = lub.density_with_derivative(state_vol[q])?;
                rho_vol[q] = r;
                drho_vol[q] = dr;
                wedge_vol[q] = r * h_vol[q];
            }
            for side in 0..2 {
                rho_face[side] = vec![0.0; n_face];
                drho_face[side] = vec![0.0; n_face];
                wedge_face[side] = vec![0.0; n_face];
            }
            for (fi, face) in mesh.faces().iter().enumerate() {
                for q in layout.face_point_range(fi) {
                    for (side, present, vals) in [
                        (0usize, face.lo_elem.is_some(), &state_lo),
                        (1usize, face.hi_elem.is_some(), &state_hi),
                    ] {
                        if !present {
                            continue;
                        }
                        let (r, dr) = lub.density_with_derivative(vals[q])?;
                        rho_face[side][q] = r;
                        drho_face[side][q] = dr;
                        wedge_face[side][q] = r * h_face[q];
                    }
                }
            }
        }

        Ok(FrozenCoeffs {
            eps_vol,
            deps_du_vol,
            deps_dh_vol,
            eps_face,
            deps_du_face,
            deps_dh_face,
            xi_vol,
            dxi_vol,
            state_vol,
            state_face: [state_lo, state_hi],
            grad_state_vol,
            dnorm_state_face,
            wedge,
            wedge_vol,
            rho_vol,
            drho_vol,
            wedge_face,
            rho_face,
            drho_face,
            h_vol,
            h_face,
            clamp_active,
        })
    }
}

/// Compressed sparse rows, built from (row, col, value) triplets with
/// duplicate entries summed.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SystemMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // Stable sort so that duplicates are summed in insertion order and
        // repeated assembly of the same problem is bit-identical.
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n && c < n);
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] = col_idx.len();
                last = Some((r, c));
            }
        }
        // Rows without entries inherit the previous row's end.
        for r in 1..=n {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        SystemMatrix {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// Largest entry magnitude of each row, the natural per-row scale for a
    /// row-wise backward-error test.
    pub fn row_max_abs(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut m = 0.0f64;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m = m.max(self.vals[k].abs());
            }
            y[r] = m;
        }
        y
    }

    /// `b - A x`.
    pub fn residual_vec(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let ax = self.matvec(x);
        b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
    }

    pub fn to_dense(&self) -> na::DMatrix<f64> {
        let mut m = na::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.vals[k];
            }
        }
        m
    }

    /// Max row sum of absolute values (the infinity norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum()
            })
            .fold(0.0, f64::max)
    }

    /// Largest |row - col| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                bw = bw.max(r.abs_diff(c));
            }
        }
        bw
    }
}

/// Side-local context for face assembly.
struct SideCtx<'a> {
    side: usize,
    off: usize,
    sign: f64,
    dscale: f64,
    tab: &'a TraceTab,
}

fn face_sides_ctx<'a>(
    layout: &'a QuadLayout,
    fi: usize,
) -> (Vec<SideCtx<'a>>, f64) {
    let mesh = &layout.mesh;
    let face = &mesh.faces()[fi];
    let sides = layout.face_sides(fi);
    let mut out = Vec::with_capacity(2);
    for (side, elem, tab, sign) in [
        (0usize, face.lo_elem, sides.lo.as_deref(), 1.0),
        (1usize, face.hi_elem, sides.hi.as_deref(), -1.0),
    ] {
        if let (Some(e), Some(tab)) = (elem, tab) {
            let dscale = 2.0 / mesh.element(e).expect("face element").extent(face.axis);
            out.push(SideCtx {
                side,
                off: mesh.dof_offset(e),
                sign,
                dscale,
                tab,
            });
        }
    }
    let avgw = if out.len() == 2 { 0.5 } else { 1.0 };
    (out, avgw)
}

fn penalty_factor(penalty: &PenaltyConfig) -> Result<f64> {
    if !penalty.enabled {
        return Ok(0.0);
    }
    if !(penalty.eps_p > 0.0 && penalty.eps_p.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "penalty parameter must be positive and finite, got {:e}",
            penalty.eps_p
        )));
    }
    Ok(1.0 / penalty.eps_p)
}

/// Assemble the lagged-coefficient linear system `A u = b`.
///
/// `f_vol` is an optional volume source sampled at the layout's volume
/// points. The residual of the nonlinear problem at the freezing state is
/// `A u* - b` where `u*` is that state, independent of the penalty mode.
pub fn assemble_picard(
    layout: &QuadLayout,
    params: &FormParams,
    coeffs: &FrozenCoeffs,
    penalty: &PenaltyConfig,
    f_vol: Option<&[f64]>,
) -> Result<(SystemMatrix, Vec<f64>)> {
    let mesh = &layout.mesh;
    let dim = mesh.dim;
    let n = mesh.n_dofs();
    let inv_eps = penalty_factor(penalty)?;
    if let Some(f) = f_vol {
        if f.len() != layout.n_vol_points() {
            return Err(Error::InvalidConfig(format!(
                "forcing sampled at {} points, layout has {}",
                f.len(),
                layout.n_vol_points()
            )));
        }
    }

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = vec![0.0; n];

    // Volume terms.
    for e in 0..mesh.n_elements() {
        let tab = layout.vol_tab(e);
        let n_loc = tab.n_loc;
        let off = mesh.dof_offset(e);
        let elem = mesh.element(e)?;
        let dscale = [2.0 / elem.extent(0), if dim == 2 { 2.0 / elem.extent(1) } else { 0.0 }];
        let mut block = vec![0.0; n_loc * n_loc];
        for (qi, q) in layout.elem_point_range(e).enumerate() {
            let w = layout.vol_weights[q];
            let vals = &tab.vals[qi * n_loc..(qi + 1) * n_loc];
            let weps = w * coeffs.eps_vol[q];
            for a in 0..dim {
                let g = &tab.grads[a][qi * n_loc..(qi + 1) * n_loc];
                let s = weps * dscale[a] * dscale[a];
                for i in 0..n_loc {
                    let gi = g[i] * s;
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..n_loc {
                        block[i * n_loc + j] += gi * g[j];
                    }
                }
            }
            if inv_eps > 0.0 && penalty.mode == PenaltyMode::SemiImplicit {
                let s = inv_eps * w * coeffs.dxi_vol[q];
                if s != 0.0 {
                    for i in 0..n_loc {
                        for j in 0..n_loc {
                            block[i * n_loc + j] += s * vals[i] * vals[j];
                        }
                    }
                }
            }
            // Right-hand side pieces at this point.
            let mut src = 0.0;
            if let Some(f) = f_vol {
                src += f[q];
            }
            if inv_eps > 0.0 {
                src += match penalty.mode {
                    // xi'(u) u - xi(u): the part of the penalty source not
                    // captured by the lagged slope matrix.
                    PenaltyMode::SemiImplicit => {
                        inv_eps * (coeffs.dxi_vol[q] * coeffs.state_vol[q] - coeffs.xi_vol[q])
                    }
                    PenaltyMode::Explicit => -inv_eps * coeffs.xi_vol[q],
                };
            }
            if src != 0.0 {
                for i in 0..n_loc {
                    b[off + i] += w * src * vals[i];
                }
            }
            if coeffs.wedge {
                let gx = &tab.grads[0][qi * n_loc..(qi + 1) * n_loc];
                let s = w * coeffs.wedge_vol[q] * dscale[0];
                for i in 0..n_loc {
                    b[off + i] += s * gx[i];
                }
            }
        }
        for i in 0..n_loc {
            for j in 0..n_loc {
                let v = block[i * n_loc + j];
                if v != 0.0 {
                    triplets.push((off + i, off + j, v));
                }
            }
        }
    }

    // Face terms.
    for (fi, face) in mesh.faces().iter().enumerate() {
        let (sides, avgw) = face_sides_ctx(layout, fi);
        let pk = mesh.face_degree(face).max(1);
        let sigma = params.a_k * (pk * pk) as f64 / face.stab_measure.powf(params.beta);
        for (qi, q) in layout.face_point_range(fi).enumerate() {
            let w = layout.face_weights[q];
            for st in &sides {
                let tvals = &st.tab.vals[qi * st.tab.n_loc..(qi + 1) * st.tab.n_loc];
                let tdn = &st.tab.dnorm[qi * st.tab.n_loc..(qi + 1) * st.tab.n_loc];
                for sr in &sides {
                    let rvals = &sr.tab.vals[qi * sr.tab.n_loc..(qi + 1) * sr.tab.n_loc];
                    let rdn = &sr.tab.dnorm[qi * sr.tab.n_loc..(qi + 1) * sr.tab.n_loc];
                    let flux_r = avgw * coeffs.eps_face[sr.side][q] * sr.dscale;
                    let flux_t = avgw * coeffs.eps_face[st.side][q] * st.dscale;
                    for i in 0..st.tab.n_loc {
                        let jump_i = st.sign * tvals[i];
                        for j in 0..sr.tab.n_loc {
                            let jump_j = sr.sign * rvals[j];
                            let mut v = w * sigma * jump_i * jump_j;
                            v -= w * jump_i * flux_r * rdn[j];
                            if params.theta != 0.0 {
                                v -= params.theta * w * jump_j * flux_t * tdn[i];
                            }
                            if v != 0.0 {
                                triplets.push((st.off + i, sr.off + j, v));
                            }
                        }
                    }
                }
                // Transport face source: only faces normal to the transport
                // axis carry it.
                if coeffs.wedge && face.axis == 0 {
                    let avg = avgw * (coeffs.wedge_face[0][q] + coeffs.wedge_face[1][q]);
                    if avg != 0.0 {
                        for i in 0..st.tab.n_loc {
                            b[st.off + i] -= w * st.sign * tvals[i] * avg;
                        }
                    }
                }
            }
        }
    }

    Ok((SystemMatrix::from_triplets(n, triplets), b))
}

/// Gram matrix of the mesh-dependent energy norm: broken gradients plus
/// `a_k p_k^2 / |e_k|^beta` jump terms on all faces.
pub fn assemble_norm_matrix(layout: &QuadLayout, a_k: f64, beta: f64) -> SystemMatrix {
    let mesh = &layout.mesh;
    let dim = mesh.dim;
    let n = mesh.n_dofs();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();

    for e in 0..mesh.n_elements() {
        let tab = layout.vol_tab(e);
        let n_loc = tab.n_loc;
        let off = mesh.dof_offset(e);
        let elem = mesh.element(e).expect("element in range");
        let mut block = vec![0.0; n_loc * n_loc];
        for (qi, q) in layout.elem_point_range(e).enumerate() {
            let w = layout.vol_weights[q];
            for a in 0..dim {
                let scale = 2.0 / elem.extent(a);
                let g = &tab.grads[a][qi * n_loc..(qi + 1) * n_loc];
                let s = w * scale * scale;
                for i in 0..n_loc {
                    for j in 0..n_loc {
                        block[i * n_loc + j] += s * g[i] * g[j];
                    }
                }
            }
        }
        for i in 0..n_loc {
            for j in 0..n_loc {
                let v = block[i * n_loc + j];
                if v != 0.0 {
                    triplets.push((off + i, off + j, v));
                }
            }
        }
    }

    for (fi, face) in mesh.faces().iter().enumerate() {
        let (sides, _) = face_sides_ctx(layout, fi);
        let pk = mesh.face_degree(face).max(1);
        let sigma = a_k * (pk * pk) as f64 / face.stab_measure.powf(beta);
        for (qi, q) in layout.face_point_range(fi).enumerate() {
            let w = layout.face_weights[q];
            for st in &sides {
                let tvals = &st.tab.vals[qi * st.tab.n_loc..(qi + 1) * st.tab.n_loc];
                for sr in &sides {
                    let rvals = &sr.tab.vals[qi * sr.tab.n_loc..(qi + 1) * sr.tab.n_loc];
                    for i in 0..st.tab.n_loc {
                        for j in 0..sr.tab.n_loc {
                            let v = w * sigma * st.sign * tvals[i] * sr.sign * rvals[j];
                            if v != 0.0 {
                                triplets.push((st.off + i, sr.off + j, v));
                            }
                        }
                    }
                }
            }
        }
    }

    SystemMatrix::from_triplets(n, triplets)
}

/// Nonlinear residual `A(u*) u* - b(u*)` of a frozen assembly.
pub fn residual(a: &SystemMatrix, rhs: &[f64], u: &[f64]) -> Vec<f64> {
    let au = a.matvec(u);
    au.iter().zip(rhs).map(|(ai, bi)| ai - bi).collect()
}

/// Assemble the Newton matrix: the lagged matrix plus the derivative blocks
/// of every frozen coefficient. The film derivative couples each row to all
/// unknowns through the deformation kernel, so the result is dense.
///
/// The penalty contribution is always the slope matrix `(1/eps_p) xi'(u)`
/// regardless of the configured lagging mode, because that is the derivative
/// of the penalty source. With `with_state_derivatives = false` the result is
/// exactly the lagged matrix.
pub fn assemble_newton(
    layout: &QuadLayout,
    params: &FormParams,
    coeffs: &FrozenCoeffs,
    penalty: &PenaltyConfig,
    kernel: Option<&DeformationKernel>,
    with_state_derivatives: bool,
) -> Result<na::DMatrix<f64>> {
    let mesh = &layout.mesh;
    let dim = mesh.dim;
    let n = mesh.n_dofs();
    let forced = PenaltyConfig {
        mode: PenaltyMode::SemiImplicit,
        ..penalty.clone()
    };
    let (a, _) = assemble_picard(layout, params, coeffs, &forced, None)?;
    let mut jac = a.to_dense();
    if !with_state_derivatives {
        return Ok(jac);
    }

    let needs_kernel = coeffs.wedge
        || coeffs.deps_dh_vol.iter().any(|&d| d != 0.0)
        || coeffs.deps_dh_face.iter().any(|s| s.iter().any(|&d| d != 0.0));
    let kernel = match (needs_kernel, kernel) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "film-coupled derivative blocks need the deformation kernel".into(),
            ))
        }
        (_, k) => k,
    };
    if let Some(k) = kernel {
        if k.n_cols() != n
            || k.n_vol() != layout.n_vol_points()
            || k.n_rows() != layout.n_vol_points() + layout.n_face_points()
        {
            return Err(Error::MeshMismatch(
                "deformation kernel does not match the quadrature layout".into(),
            ));
        }
    }
    let kernel_vol_row = |q: usize| kernel.map(|k| k.row(k.vol_row(q)));
    let kernel_face_row = |q: usize| kernel.map(|k| k.row(k.face_row(q)));

    // Volume chains.
    for e in 0..mesh.n_elements() {
        let tab = layout.vol_tab(e);
        let n_loc = tab.n_loc;
        let off = mesh.dof_offset(e);
        let elem = mesh.element(e)?;
        let dscale = [2.0 / elem.extent(0), if dim == 2 { 2.0 / elem.extent(1) } else { 0.0 }];
        for (qi, q) in layout.elem_point_range(e).enumerate() {
            let w = layout.vol_weights[q];
            let vals = &tab.vals[qi * n_loc..(qi + 1) * n_loc];
            let gphi = coeffs.grad_state_vol[q];
            for i in 0..n_loc {
                // diffusion: w (grad u* . grad phi_i) [eps_u du + eps_h D du]
                let mut ci = 0.0;
                for a in 0..dim {
                    ci += gphi[a] * tab.grads[a][qi * n_loc + i] * dscale[a];
                }
                ci *= w;
                // transport: -w (d phi_i / dx) [rho' du h + rho D du]
                let c2 = if coeffs.wedge {
                    -w * tab.grads[0][qi * n_loc + i] * dscale[0]
                } else {
                    0.0
                };
                let local = ci * coeffs.deps_du_vol[q]
                    + if coeffs.wedge {
                        c2 * coeffs.drho_vol[q] * coeffs.h_vol[q]
                    } else {
                        0.0
                    };
                if local != 0.0 {
                    for j in 0..n_loc {
                        jac[(off + i, off + j)] += local * vals[j];
                    }
                }
                let dense = ci * coeffs.deps_dh_vol[q]
                    + if coeffs.wedge { c2 * coeffs.rho_vol[q] } else { 0.0 };
                if dense != 0.0 {
                    let row = kernel_vol_row(q).expect("kernel checked above");
                    for (c, &kv) in row.iter().enumerate() {
                        jac[(off + i, c)] += dense * kv;
                    }
                }
            }
        }
    }

    // Face chains.
    for (fi, face) in mesh.faces().iter().enumerate() {
        let (sides, avgw) = face_sides_ctx(layout, fi);
        for (qi, q) in layout.face_point_range(fi).enumerate() {
            let w = layout.face_weights[q];
            let jump_state = coeffs.state_face[0][q] - coeffs.state_face[1][q];
            for st in &sides {
                let tvals = &st.tab.vals[qi * st.tab.n_loc..(qi + 1) * st.tab.n_loc];
                let tdn = &st.tab.dnorm[qi * st.tab.n_loc..(qi + 1) * st.tab.n_loc];
                for i in 0..st.tab.n_loc {
                    let row_i = st.off + i;
                    let jump_i = st.sign * tvals[i];

                    // consistency chain:
                    // -[phi_i] {(eps_u du + eps_h D du) dnorm u*}
                    for sc in &sides {
                        let fc = avgw * coeffs.dnorm_state_face[sc.side][q];
                        if fc == 0.0 {
                            continue;
                        }
                        let cvals = &sc.tab.vals[qi * sc.tab.n_loc..(qi + 1) * sc.tab.n_loc];
                        let local = -w * jump_i * fc * coeffs.deps_du_face[sc.side][q];
                        if local != 0.0 {
                            for j in 0..sc.tab.n_loc {
                                jac[(row_i, sc.off + j)] += local * cvals[j];
                            }
                        }
                        let dense = -w * jump_i * fc * coeffs.deps_dh_face[sc.side][q];
                        if dense != 0.0 {
                            let row = kernel_face_row(q).expect("kernel checked above");
                            for (c, &kv) in row.iter().enumerate() {
                                jac[(row_i, c)] += dense * kv;
                            }
                        }
                    }

                    // symmetrizing-flux chain:
                    // -theta [u*] {(eps_u du + eps_h D du) dnorm phi_i}
                    if params.theta != 0.0 && jump_state != 0.0 {
                        let gi = avgw * tdn[i] * st.dscale;
                        let local =
                            -params.theta * w * jump_state * gi * coeffs.deps_du_face[st.side][q];
                        if local != 0.0 {
                            for j in 0..st.tab.n_loc {
                                jac[(row_i, st.off + j)] += local * tvals[j];
                            }
                        }
                        let dense =
                            -params.theta * w * jump_state * gi * coeffs.deps_dh_face[st.side][q];
                        if dense != 0.0 {
                            let row = kernel_face_row(q).expect("kernel checked above");
                            for (c, &kv) in row.iter().enumerate() {
                                jac[(row_i, c)] += dense * kv;
                            }
                        }
                    }

                    // transport chain: +[phi_i] {rho' du h + rho D du} on
                    // faces normal to the transport axis.
                    if coeffs.wedge && face.axis == 0 {
                        for sc in &sides {
                            let cvals = &sc.tab.vals[qi * sc.tab.n_loc..(qi + 1) * sc.tab.n_loc];
                            let local =
                                w * jump_i * avgw * coeffs.drho_face[sc.side][q] * coeffs.h_face[q];
                            if local != 0.0 {
                                for j in 0..sc.tab.n_loc {
                                    jac[(row_i, sc.off + j)] += local * cvals[j];
                                }
                            }
                        }
                        let rho_avg = avgw * (coeffs.rho_face[0][q] + coeffs.rho_face[1][q]);
                        let dense = w * jump_i * rho_avg;
                        if dense != 0.0 {
                            let row = kernel_face_row(q).expect("kernel checked above");
                            for (c, &kv) in row.iter().enumerate() {
                                jac[(row_i, c)] += dense * kv;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(jac)
}

fn banded_attempt(a: &SystemMatrix, b: &[f64], bw: usize) -> Option<Vec<f64>> {
    let n = a.n;
    let width = 2 * bw + 1;
    // Band storage: entry (i, j) lives at band[j * width + (i + bw - j)].
    let mut band = vec![0.0; width.checked_mul(n)?];
    for r in 0..n {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            let c = a.col_idx[k];
            band[c * width + (r + bw - c)] += a.vals[k];
        }
    }
    // LU without pivoting; fill stays inside the band.
    for k in 0..n {
        let piv = band[k * width + bw];
        if !piv.is_finite() || piv.abs() < 1e-280 {
            return None;
        }
        let imax = (k + bw).min(n - 1);
        for i in k + 1..=imax {
            let l = band[k * width + (i + bw - k)] / piv;
            band[k * width + (i + bw - k)] = l;
            if l != 0.0 {
                for j in k + 1..=imax {
                    band[j * width + (i + bw - j)] -= l * band[j * width + (k + bw - j)];
                }
            }
        }
    }
    let solve_once = |rhs: &[f64]| -> Vec<f64> {
        let mut x = rhs.to_vec();
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + bw).min(n - 1) {
                    x[i] -= band[k * width + (i + bw - k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + bw).min(n - 1) {
                s -= band[j * width + (k + bw - j)] * x[j];
            }
            x[k] = s / band[k * width + bw];
        }
        x
    };
    let mut x = solve_once(b);
    // One step of iterative refinement in the unfactored matrix.
    let r = a.residual_vec(b, &x);
    let dx = solve_once(&r);
    for (xi, di) in x.iter_mut().zip(&dx) {
        *xi += di;
    }
    let r2 = a.residual_vec(b, &x);
    let bn = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let xn = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rn = r2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Normwise backward error: refined LU should sit near machine precision.
    let scale = (a.norm_inf() * xn + bn).max(1e-300);
    if x.iter().all(|v| v.is_finite()) && rn <= 1e-10 * scale {
        Some(x)
    } else {
        None
    }
}

/// Solve a sparse system: banded elimination with one refinement step, with a
/// pivoted dense factorization as fallback when the band solve is refused or
/// its verified residual is poor.
pub fn solve_sparse(a: &SystemMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::InvalidConfig(format!(
            "rhs length {} does not match system size {}",
            b.len(),
            a.n
        )));
    }
    if a.n == 0 {
        return Ok(Vec::new());
    }
    let bw = a.bandwidth();
    let band_cells = (2 * bw + 1).checked_mul(a.n);
    if band_cells.is_some_and(|c| c <= 64_000_000) {
        if let Some(x) = banded_attempt(a, b, bw) {
            return Ok(x);
        }
        log::warn!(
            "banded factorization rejected (n = {}, bandwidth = {}), retrying dense",
            a.n,
            bw
        );
    }
    if a.n > 6000 {
        return Err(Error::LinearSolve(format!(
            "banded elimination failed and the {0}x{0} system is too large for the dense fallback",
            a.n
        )));
    }
    solve_dense(&a.to_dense(), b)
}

/// Dense solve with partially pivoted LU, falling back to full pivoting.
///
/// Rows are equilibrated to unit max-norm first. Lubricated assemblies mix
/// rows twelve orders of magnitude apart (the mobility clamp spans 1e-12 to
/// 1e12), and an unscaled factorization meets a norm-wise backward-error
/// test while the small rows carry pure noise. Row scaling makes the
/// acceptance test row-wise and keeps every equation meaningful.
pub fn solve_dense(m: &na::DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.nrows();
    let mut ms = m.clone();
    let mut rhs = na::DVector::from_column_slice(b);
    for i in 0..n {
        let s = m.row(i).amax();
        if s > 0.0 && s.is_finite() {
            let inv = 1.0 / s;
            ms.row_mut(i).scale_mut(inv);
            rhs[i] *= inv;
        }
    }
    let norm_inf = ms
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let check = |x: &na::DVector<f64>| -> bool {
        let r = &ms * x - &rhs;
        let scale = (norm_inf * x.amax() + rhs.amax()).max(1e-300);
        x.iter().all(|v| v.is_finite()) && r.amax() <= 1e-9 * scale
    };
    if let Some(x) = ms.clone().lu().solve(&rhs) {
        if check(&x) {
            return Ok(x.as_slice().to_vec());
        }
    }
    if let Some(x) = ms.clone().full_piv_lu().solve(&rhs) {
        if check(&x) {
            return Ok(x.as_slice().to_vec());
        }
    }
    Err(Error::LinearSolve(
        "dense LU produced no acceptable solution (matrix singular to working precision)".into(),
    ))
}

/// Smallest generalized eigenvalue of the symmetrized form against the energy
/// norm, plus the smallest Rayleigh quotient over random probe vectors.
#[derive(Debug, Clone, Copy)]
pub struct CoercivityReport {
    pub lambda_min: f64,
    pub probe_min: f64,
}

/// Measure coercivity of the constant-coefficient form: the smallest
/// eigenvalue of `(A + A^T)/2 x = lambda N x` with `N` the energy-norm Gram
/// matrix built with the same stabilization parameters.
pub fn coercivity_probe(
    layout: &QuadLayout,
    params: &FormParams,
    n_probes: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    let zero = DgField::zeros(&layout.mesh);
    let coeffs = FrozenCoeffs::freeze(layout, &DiffusionModel::Constant(1.0), &zero, None, false)?;
    let (a, _) = assemble_picard(layout, params, &coeffs, &PenaltyConfig::disabled(), None)?;
    let ad = a.to_dense();
    let s = 0.5 * (&ad + ad.transpose());
    let nmat = assemble_norm_matrix(layout, params.a_k, params.beta).to_dense();

    let chol = na::Cholesky::new(nmat.clone()).ok_or_else(|| {
        Error::LinearSolve("energy-norm Gram matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&s)
        .ok_or_else(|| Error::LinearSolve("triangular solve failed".into()))?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::LinearSolve("triangular solve failed".into()))?;
    let m = 0.5 * (&m + m.transpose());
    let eigen = na::SymmetricEigen::new(m);
    let lambda_min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = layout.mesh.n_dofs();
    let mut probe_min = f64::INFINITY;
    for _ in 0..n_probes.max(1) {
        let v = na::DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
        let num = (v.transpose() * &s * &v)[(0, 0)];
        let den = (v.transpose() * &nmat * &v)[(0, 0)];
        if den > 0.0 {
            probe_min = probe_min.min(num / den);
        }
    }
    Ok(CoercivityReport {
        lambda_min,
        probe_min,
    })
}
