//! Nonlocal film thickness: a dense precomputed operator mapping pressure
//! coefficients to elastic deformation values at every volume and face
//! quadrature point of a layout.
//!
//! 1D gap:  h(x) = h00 + x^2/2 - (1/pi) * Int log|x - x'| u(x') dx'
//! 2D gap:  H(x) = H00 + x^2/2 + y^2/2 + (2/pi^2) * Int u(x') / |x - x'| dA'
//!
//! The integrals run over the computational domain with u = 0 outside. The
//! deformation signs follow the two conventions above by default; `sign = -1`
//! flips them.
//!
//! The 1D log kernel is integrated analytically against each Legendre mode
//! near the singularity and by Gauss quadrature far away. The 2D `1/r` kernel
//! uses a four-triangle polar (Duffy) split when the target touches the
//! source element, recursive subdivision when it is near, and graded Gauss
//! tensor rules when it is far.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dgspace::basis::{legendre_all, legendre_monomial_coeffs, tensor_split};
use crate::dgspace::quadrature::GaussLegendre;
use crate::dgspace::{DgField, QuadLayout};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::util::fnv1a64;

/// Raw kernel function between two points: `log|x - x'|` in 1D, `1/|x - x'|`
/// in 2D.
pub fn kernel_value(dim: usize, a: [f64; 2], b: [f64; 2]) -> f64 {
    if dim == 1 {
        (a[0] - b[0]).abs().ln()
    } else {
        1.0 / ((a[0] - b[0]).hypot(a[1] - b[1]))
    }
}

/// Film (or deformation) values sampled at layout points: volume points
/// first, then face points, both in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmField {
    pub vol: Vec<f64>,
    pub face: Vec<f64>,
}

impl FilmField {
    pub fn min(&self) -> f64 {
        let mut m = f64::INFINITY;
        for &v in self.vol.iter().chain(self.face.iter()) {
            m = m.min(v);
        }
        m
    }
}

/// Dense deformation operator for a fixed mesh/degree/quadrature layout.
#[derive(Debug, Clone)]
pub struct DeformationKernel {
    dim: usize,
    n_vol: usize,
    n_rows: usize,
    n_cols: usize,
    /// Row-major; deformation values = data * coefficients.
    data: Vec<f64>,
    /// Geometric gap x^2/2 (+ y^2/2 in 2D) at each row's target point.
    wedge: Vec<f64>,
    targets: Vec<[f64; 2]>,
    mesh_fingerprint: u64,
    sign: f64,
}

struct RowCtx {
    mesh: Arc<Mesh>,
    prefactor: f64,
    /// Antiderivative monomial coefficients of P_k vanishing at +-1,
    /// `atilde[k-1]` for k >= 1, lowest power first.
    atilde: Vec<Vec<f64>>,
    far_rule: GaussLegendre,
}

fn xlnabs(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.abs().ln()
    }
}

/// `Int_{-1}^{1} log|xi - c| dxi`, valid for any c.
fn j0(c: f64) -> f64 {
    xlnabs(1.0 - c) + xlnabs(1.0 + c) - 2.0
}

/// `Int_{-1}^{1} log|xi - c| P_k(xi) dxi` for k >= 1 via the antiderivative
/// of P_k that vanishes at both endpoints. Accurate for |c| <~ 1.5; the far
/// field uses quadrature instead (the synthetic division grows like c^k).
fn jk_analytic(atilde: &[f64], c: f64) -> f64 {
    let m = atilde.len();
    debug_assert!(m >= 3);
    let mut ac = atilde[m - 1];
    for i in (0..m - 1).rev() {
        ac = ac * c + atilde[i];
    }
    // synthetic division: (a(x) - a(c)) / (x - c)
    let mut q = vec![0.0; m - 1];
    q[m - 2] = atilde[m - 1];
    for i in (1..m - 1).rev() {
        q[i - 1] = atilde[i] + c * q[i];
    }
    let mut poly_int = 0.0;
    for (i, &qi) in q.iter().enumerate().step_by(2) {
        poly_int += 2.0 * qi / (i as f64 + 1.0);
    }
    // the endpoint antiderivative values vanish, leaving the principal-value
    // log term; a(+-1) = 0 exactly, so the 0 * inf guard is exact too
    let log_term = if ac == 0.0 {
        0.0
    } else {
        ac * ((1.0 - c).abs().ln() - (1.0 + c).abs().ln())
    };
    -(poly_int + log_term)
}

fn fill_row_1d(row: &mut [f64], x_t: f64, ctx: &RowCtx) {
    let mesh = &ctx.mesh;
    let mut vals = Vec::new();
    let mut derivs = Vec::new();
    for e in 0..mesh.n_elements() {
        let elem = &mesh.elements()[e];
        let (a, b) = (elem.lo[0], elem.hi[0]);
        let h = b - a;
        let c = (2.0 * x_t - a - b) / h;
        let p = mesh.degree(e);
        let off = mesh.dof_offset(e);
        let scale = ctx.prefactor * 0.5 * h;
        let log_half_h = (0.5 * h).ln();
        if c.abs() <= 1.5 {
            row[off] = scale * (2.0 * log_half_h + j0(c));
            for k in 1..=p {
                row[off + k] = scale * jk_analytic(&ctx.atilde[k - 1], c);
            }
        } else {
            // smooth integrand: plain Gauss
            let rule = &ctx.far_rule;
            let mut acc = vec![0.0; p + 1];
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let lg = (x - c).abs().ln();
                legendre_all(p, x, &mut vals, &mut derivs);
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += w * lg * vals[k];
                }
            }
            row[off] = scale * (2.0 * log_half_h + acc[0]);
            for k in 1..=p {
                row[off + k] = scale * acc[k];
            }
        }
    }
}

/// Distance from a point to a closed axis-aligned box.
fn box_distance(t: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let dx = (lo[0] - t[0]).max(0.0).max(t[0] - hi[0]);
    let dy = (lo[1] - t[1]).max(0.0).max(t[1] - hi[1]);
    dx.hypot(dy)
}

struct Elem2d<'a> {
    lo: [f64; 2],
    hi: [f64; 2],
    p: usize,
    vx: &'a mut Vec<f64>,
    vy: &'a mut Vec<f64>,
    scratch: &'a mut Vec<f64>,
}

impl Elem2d<'_> {
    /// Accumulate `w * phi_l(x) / r` for all local modes into `out`.
    fn accumulate(&mut self, out: &mut [f64], t: [f64; 2], x: [f64; 2], w_over_r: f64) {
        let xi = (2.0 * x[0] - self.lo[0] - self.hi[0]) / (self.hi[0] - self.lo[0]);
        let eta = (2.0 * x[1] - self.lo[1] - self.hi[1]) / (self.hi[1] - self.lo[1]);
        let _ = t;
        legendre_all(self.p, xi, self.vx, self.scratch);
        legendre_all(self.p, eta, self.vy, self.scratch);
        for (l, o) in out.iter_mut().enumerate() {
            let [i, j] = tensor_split(l, self.p, 2);
            *o += w_over_r * self.vx[i] * self.vy[j];
        }
    }
}

/// Tensor Gauss integration of `phi_l / r` over a sub-box of an element.
fn gauss_box_2d(
    out: &mut [f64],
    t: [f64; 2],
    sub_lo: [f64; 2],
    sub_hi: [f64; 2],
    rule: &GaussLegendre,
    el: &mut Elem2d,
) {
    let hx = 0.5 * (sub_hi[0] - sub_lo[0]);
    let hy = 0.5 * (sub_hi[1] - sub_lo[1]);
    let mx = 0.5 * (sub_hi[0] + sub_lo[0]);
    let my = 0.5 * (sub_hi[1] + sub_lo[1]);
    let jac = hx * hy;
    for (&gy, &wy) in rule.nodes.iter().zip(&rule.weights) {
        let y = my + hy * gy;
        for (&gx, &wx) in rule.nodes.iter().zip(&rule.weights) {
            let x = mx + hx * gx;
            let r = (x - t[0]).hypot(y - t[1]);
            el.accumulate(out, t, [x, y], wx * wy * jac / r);
        }
    }
}

/// Recursive 2x2 subdivision toward a nearby (but exterior) target.
#[allow(clippy::too_many_arguments)]
fn subdivide_2d(
    out: &mut [f64],
    t: [f64; 2],
    sub_lo: [f64; 2],
    sub_hi: [f64; 2],
    rule: &GaussLegendre,
    el: &mut Elem2d,
    depth: usize,
) {
    let diam = (sub_hi[0] - sub_lo[0]).hypot(sub_hi[1] - sub_lo[1]);
    let dist = box_distance(t, sub_lo, sub_hi);
    if dist >= diam || depth >= 12 {
        gauss_box_2d(out, t, sub_lo, sub_hi, rule, el);
        return;
    }
    let mx = 0.5 * (sub_lo[0] + sub_hi[0]);
    let my = 0.5 * (sub_lo[1] + sub_hi[1]);
    for (lo, hi) in [
        ([sub_lo[0], sub_lo[1]], [mx, my]),
        ([mx, sub_lo[1]], [sub_hi[0], my]),
        ([sub_lo[0], my], [mx, sub_hi[1]]),
        ([mx, my], [sub_hi[0], sub_hi[1]]),
    ] {
        subdivide_2d(out, t, lo, hi, rule, el, depth + 1);
    }
}

/// Integrate one chord panel `v` in `[a, b]` of a Duffy triangle.
#[allow(clippy::too_many_arguments)]
fn duffy_panel(
    out: &mut [f64],
    t: [f64; 2],
    u: [f64; 2],
    w: [f64; 2],
    cross: f64,
    a: f64,
    b: f64,
    rule_s: &GaussLegendre,
    rule_v: &GaussLegendre,
    el: &mut Elem2d,
) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (&gv, &wv) in rule_v.nodes.iter().zip(&rule_v.weights) {
        let v = mid + half * gv;
        let dir = [(1.0 - v) * u[0] + v * w[0], (1.0 - v) * u[1] + v * w[1]];
        let g = dir[0].hypot(dir[1]);
        for (&gs, &ws) in rule_s.nodes.iter().zip(&rule_s.weights) {
            let s = 0.5 * (gs + 1.0);
            let x = [t[0] + s * dir[0], t[1] + s * dir[1]];
            // ds jacobian 1/2, dv jacobian `half`, area jacobian s|cross|,
            // kernel 1/(s g): the s factors cancel
            let wgt = 0.5 * ws * half * wv * cross.abs() / g;
            el.accumulate(out, t, x, wgt);
        }
    }
}

/// Four-triangle polar split with apex at the (interior or boundary) target.
/// Each triangle (t, c1, c2) is mapped by x = t + s((1-v) u + v w) with
/// u = c1 - t, w = c2 - t; the jacobian s|u x w| cancels the 1/r singularity.
/// Along the chord the integrand behaves like ((v - v*)^2 + delta^2)^{-1/2},
/// so panels are graded toward v* until their width is comparable to their
/// distance from the near-singularity.
fn duffy_2d(
    out: &mut [f64],
    t: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    rule_s: &GaussLegendre,
    rule_v: &GaussLegendre,
    el: &mut Elem2d,
) {
    let corners = [
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
        [lo[0], hi[1]],
    ];
    let scale2 = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    for i in 0..4 {
        let c1 = corners[i];
        let c2 = corners[(i + 1) % 4];
        let u = [c1[0] - t[0], c1[1] - t[1]];
        let w = [c2[0] - t[0], c2[1] - t[1]];
        let cross = u[0] * w[1] - u[1] * w[0];
        if cross.abs() <= 1e-14 * scale2 {
            continue; // degenerate triangle: target on this edge
        }
        let dw = [w[0] - u[0], w[1] - u[1]];
        let dw2 = dw[0] * dw[0] + dw[1] * dw[1];
        let v_star = -(u[0] * dw[0] + u[1] * dw[1]) / dw2;
        let delta = cross.abs() / dw2;
        // graded bisection toward v_star
        let mut stack = vec![(0.0f64, 1.0f64, 0u32)];
        while let Some((a, b, depth)) = stack.pop() {
            let dist = if v_star < a {
                a - v_star
            } else if v_star > b {
                v_star - b
            } else {
                0.0
            };
            if b - a <= 2.0 * (dist + delta) || depth >= 40 {
                duffy_panel(out, t, u, w, cross, a, b, rule_s, rule_v, el);
            } else {
                let m = 0.5 * (a + b);
                stack.push((a, m, depth + 1));
                stack.push((m, b, depth + 1));
            }
        }
    }
}

fn fill_row_2d(row: &mut [f64], t: [f64; 2], ctx: &RowCtx) {
    let mesh = &ctx.mesh;
    let mut vx = Vec::new();
    let mut vy = Vec::new();
    let mut scratch = Vec::new();
    let rule_near = GaussLegendre::new(10);
    let rule_s = GaussLegendre::new(8);
    let rule_v = GaussLegendre::new(16);
    let rule_mid = GaussLegendre::new(12);
    let rule_far = GaussLegendre::new(8);
    for e in 0..mesh.n_elements() {
        let elem = &mesh.elements()[e];
        let (lo, hi) = (elem.lo, elem.hi);
        let p = mesh.degree(e);
        let off = mesh.dof_offset(e);
        let n_loc = mesh.local_dofs(e);
        let out = &mut row[off..off + n_loc];
        let mut el = Elem2d {
            lo,
            hi,
            p,
            vx: &mut vx,
            vy: &mut vy,
            scratch: &mut scratch,
        };
        let diam = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        let dist = box_distance(t, lo, hi);
        if dist == 0.0 {
            duffy_2d(out, t, lo, hi, &rule_s, &rule_v, &mut el);
        } else if dist < diam {
            subdivide_2d(out, t, lo, hi, &rule_near, &mut el, 0);
        } else if dist < 3.0 * diam {
            gauss_box_2d(out, t, lo, hi, &rule_mid, &mut el);
        } else {
            gauss_box_2d(out, t, lo, hi, &rule_far, &mut el);
        }
        for o in out.iter_mut() {
            *o *= ctx.prefactor;
        }
    }
}

impl DeformationKernel {
    /// Build with the deformation sign conventions as printed in the film
    /// equations.
    pub fn build(layout: &QuadLayout) -> Result<Self> {
        Self::build_with_sign(layout, 1.0)
    }

    /// `sign = -1` flips the deformation term relative to the convention.
    pub fn build_with_sign(layout: &QuadLayout, sign: f64) -> Result<Self> {
        if !(sign == 1.0 || sign == -1.0) {
            return Err(Error::InvalidConfig(format!(
                "deformation sign must be +1 or -1, got {sign}"
            )));
        }
        let mesh = &layout.mesh;
        let dim = mesh.dim;
        let n_vol = layout.n_vol_points();
        let n_rows = n_vol + layout.n_face_points();
        let n_cols = mesh.n_dofs();
        if n_rows.saturating_mul(n_cols) > 200_000_000 {
            return Err(Error::InvalidConfig(format!(
                "deformation operator would hold {n_rows} x {n_cols} dense entries; \
                 use a smaller mesh for film-coupled runs"
            )));
        }
        let prefactor = if dim == 1 {
            -sign / PI
        } else {
            sign * 2.0 / (PI * PI)
        };
        let mut targets = Vec::with_capacity(n_rows);
        targets.extend_from_slice(&layout.vol_points);
        targets.extend_from_slice(&layout.face_points);
        let wedge: Vec<f64> = targets
            .iter()
            .map(|t| {
                0.5 * t[0] * t[0]
                    + if dim == 2 { 0.5 * t[1] * t[1] } else { 0.0 }
            })
            .collect();

        let max_p = mesh.degrees().iter().copied().max().unwrap_or(0);
        let mut atilde = Vec::new();
        for k in 1..=max_p.max(1) {
            let above = legendre_monomial_coeffs(k + 1);
            let below = legendre_monomial_coeffs(k - 1);
            let mut c = vec![0.0; k + 2];
            for (i, &a) in above.iter().enumerate() {
                c[i] += a / (2.0 * k as f64 + 1.0);
            }
            for (i, &b) in below.iter().enumerate() {
                c[i] -= b / (2.0 * k as f64 + 1.0);
            }
            atilde.push(c);
        }
        let ctx = RowCtx {
            mesh: mesh.clone(),
            prefactor,
            atilde,
            far_rule: GaussLegendre::new(32),
        };

        let mut data = vec![0.0; n_rows * n_cols];
        data.par_chunks_mut(n_cols)
            .zip(targets.par_iter())
            .for_each(|(row, t)| {
                if dim == 1 {
                    fill_row_1d(row, t[0], &ctx);
                } else {
                    fill_row_2d(row, *t, &ctx);
                }
            });

        Ok(DeformationKernel {
            dim,
            n_vol,
            n_rows,
            n_cols,
            data,
            wedge,
            targets,
            mesh_fingerprint: mesh.fingerprint(),
            sign,
        })
    }

    /// One row of the operator for an arbitrary target point; used for
    /// sampled output and oracle checks.
    pub fn deformation_row(mesh: &Arc<Mesh>, target: [f64; 2], sign: f64) -> Vec<f64> {
        let prefactor = if mesh.dim == 1 {
            -sign / PI
        } else {
            sign * 2.0 / (PI * PI)
        };
        let max_p = mesh.degrees().iter().copied().max().unwrap_or(0);
        let mut atilde = Vec::new();
        for k in 1..=max_p.max(1) {
            let above = legendre_monomial_coeffs(k + 1);
            let below = legendre_monomial_coeffs(k - 1);
            let mut c = vec![0.0; k + 2];
            for (i, &a) in above.iter().enumerate() {
                c[i] += a / (2.0 * k as f64 + 1.0);
            }
            for (i, &b) in below.iter().enumerate() {
                c[i] -= b / (2.0 * k as f64 + 1.0);
            }
            atilde.push(c);
        }
        let ctx = RowCtx {
            mesh: mesh.clone(),
            prefactor,
            atilde,
            far_rule: GaussLegendre::new(32),
        };
        let mut row = vec![0.0; mesh.n_dofs()];
        if mesh.dim == 1 {
            fill_row_1d(&mut row, target[0], &ctx);
        } else {
            fill_row_2d(&mut row, target, &ctx);
        }
        row
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vol(&self) -> usize {
        self.n_vol
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    /// Row index of the q-th volume point.
    pub fn vol_row(&self, q: usize) -> usize {
        q
    }

    /// Row index of the q-th face point.
    pub fn face_row(&self, q: usize) -> usize {
        self.n_vol + q
    }

    pub fn target(&self, r: usize) -> [f64; 2] {
        self.targets[r]
    }

    pub fn wedge(&self, r: usize) -> f64 {
        self.wedge[r]
    }

    /// FNV-1a digest of the raw operator bits; identical rebuilds must agree
    /// exactly.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    fn check_field(&self, pressure: &DgField) -> Result<()> {
        if pressure.mesh().fingerprint() != self.mesh_fingerprint
            || pressure.coeffs().len() != self.n_cols
        {
            return Err(Error::MeshMismatch(
                "pressure field does not live on the kernel's mesh/space".to_string(),
            ));
        }
        Ok(())
    }

    /// Deformation values (integral term only) at all layout points.
    pub fn deformation(&self, pressure: &DgField) -> Result<FilmField> {
        self.check_field(pressure)?;
        let c = pressure.coeffs();
        let mut all = vec![0.0; self.n_rows];
        all.par_iter_mut().enumerate().for_each(|(r, out)| {
            let row = &self.data[r * self.n_cols..(r + 1) * self.n_cols];
            *out = row.iter().zip(c).map(|(a, b)| a * b).sum();
        });
        let face = all.split_off(self.n_vol);
        Ok(FilmField { vol: all, face })
    }

    /// Film thickness `h00 + geometry + deformation` at all layout points.
    pub fn film(&self, h00: f64, pressure: &DgField) -> Result<FilmField> {
        let mut f = self.deformation(pressure)?;
        for (r, v) in f.vol.iter_mut().enumerate() {
            *v += h00 + self.wedge[r];
        }
        for (q, v) in f.face.iter_mut().enumerate() {
            *v += h00 + self.wedge[self.n_vol + q];
        }
        Ok(f)
    }

    /// Minimum film value and the target position where it occurs.
    pub fn film_min(&self, film: &FilmField) -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, [f64::NAN; 2]);
        for (r, &v) in film.vol.iter().chain(film.face.iter()).enumerate() {
            if v < best.0 {
                best = (v, self.targets[r]);
            }
        }
        best
    }
}
