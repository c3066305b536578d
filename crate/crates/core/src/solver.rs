//! Nonlinear drivers.
//!
//! Three nested loops close a contact problem:
//!
//! * innermost, damped fixed-point sweeps: freeze the coefficients at the
//!   current iterate, assemble and solve the lagged linear system, and relax
//!   the state toward the linear solution, `u <- (1 - omega) u + omega S(u)`,
//!   with an optional Newton finish once the residual is below a switch-over
//!   threshold;
//! * in the middle, a load loop on the rigid offset `h00` closing
//!   `integral(u) = target`: plain relaxation steps `h00 <- h00 - gain * g`
//!   until a sign change of `g = integral(u) - target` is seen, then a
//!   bracket-guarded secant;
//! * outermost, penalty continuation over the configured `eps_p` stages,
//!   warm-starting each stage from the previous one.
//!
//! Every sweep emits one log line of the fixed shape
//! `iter=<n> stage=<s> res=<e> force=<e> minu=<e>` so runs can be scraped.
//! Given the same configuration and initial state the whole driver is
//! deterministic: reports are reproducible bit for bit.

use std::sync::Arc;

use log::{info, warn};
use nalgebra as na;

use crate::assembly::{
    assemble_newton, assemble_picard, residual, solve_dense, solve_sparse, DiffusionModel,
    FormParams, FrozenCoeffs,
};
use crate::dgspace::{DgField, QuadLayout};
use crate::mesh::Mesh;
use crate::params::ContactKind;
use crate::penalty::PenaltyConfig;
use crate::physics::{DeformationKernel, FilmField};
use crate::{Error, Result};

/// Settings for the load-balance loop on the rigid offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceConfig {
    /// Target value of `integral(u)`.
    pub target: f64,
    /// Accept once `|integral(u) - target| <= tol`.
    pub tol: f64,
    /// Maximum number of offset corrections per penalty stage.
    pub max_iters: usize,
    /// Relaxation gain for `h00 <- h00 - gain * g` before a bracket exists.
    pub gain: f64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            target: std::f64::consts::FRAC_PI_2,
            tol: 1e-5,
            max_iters: 40,
            gain: 0.5,
        }
    }
}

impl ForceConfig {
    pub fn for_kind(kind: ContactKind) -> Self {
        ForceConfig {
            target: kind.default_force_target(),
            ..ForceConfig::default()
        }
    }
}

/// Knobs for the nested nonlinear drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub params: FormParams,
    pub penalty: PenaltyConfig,
    /// Damping factor `omega` in `(0, 1]` for the fixed-point update.
    pub relaxation: f64,
    /// Sweep budget per stage.
    pub max_sweeps: usize,
    /// Stop once `|A(u) u - b(u)|_inf / (1 + |b|_inf) <= tol_residual`.
    pub tol_residual: f64,
    /// Stop once the damped update moves the state by less than this
    /// (relative max-norm); the residual is then recomputed and reported.
    pub tol_increment: f64,
    /// Switch to Newton steps once the residual falls below
    /// `newton_threshold` (only when enabled).
    pub newton_polish: bool,
    pub newton_threshold: f64,
    pub max_newton: usize,
    /// Load constraint; `None` keeps `h00` fixed.
    pub force: Option<ForceConfig>,
    /// Initial rigid offset (ignored without a deformation kernel).
    pub h00: f64,
    /// Declare divergence after this many consecutive sweeps with a residual
    /// above ten times the best one seen.
    pub divergence_window: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            params: FormParams::default(),
            penalty: PenaltyConfig::disabled(),
            relaxation: 1.0,
            max_sweeps: 400,
            tol_residual: 1e-9,
            tol_increment: 1e-12,
            newton_polish: false,
            newton_threshold: 1e-3,
            max_newton: 12,
            force: None,
            h00: 0.0,
            divergence_window: 8,
        }
    }
}

impl SolveConfig {
    /// Defaults tuned for the lubricated contact runs: heavier damping, a
    /// roomier sweep budget, and the skew-symmetric flux form. The clamped
    /// Reynolds coefficient spans many orders of magnitude across the contact
    /// edge, and theta = -1 is the only flux choice whose coercivity does not
    /// depend on the coefficient contrast.
    pub fn contact() -> Self {
        SolveConfig {
            params: FormParams {
                theta: -1.0,
                ..FormParams::default()
            },
            relaxation: 0.3,
            max_sweeps: 4000,
            tol_residual: 1e-8,
            newton_polish: true,
            max_newton: 400,
            ..SolveConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        for (name, v) in [
            ("tol_residual", self.tol_residual),
            ("tol_increment", self.tol_increment),
            ("newton_threshold", self.newton_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidConfig("max_sweeps must be positive".into()));
        }
        if let Some(fc) = &self.force {
            if !(fc.tol.is_finite() && fc.tol > 0.0) || !(fc.gain.is_finite() && fc.gain > 0.0) {
                return Err(Error::InvalidConfig(
                    "force tolerance and gain must be positive and finite".into(),
                ));
            }
            if fc.max_iters == 0 {
                return Err(Error::InvalidConfig(
                    "force max_iters must be positive".into(),
                ));
            }
        }
        self.penalty.validate()
    }
}

/// Everything that defines the discrete problem on a fixed layout.
pub struct Problem<'a> {
    pub layout: &'a QuadLayout,
    pub model: DiffusionModel,
    /// Deformation operator; required for film-coupled runs.
    pub kernel: Option<&'a DeformationKernel>,
    /// Include the transport (wedge) terms.
    pub wedge: bool,
    /// Manufactured volume source sampled at the layout volume points.
    pub forcing: Option<Vec<f64>>,
    /// Initial iterate; zero when absent.
    pub initial: Option<DgField>,
}

impl<'a> Problem<'a> {
    pub fn check(&self) -> Result<()> {
        if self.wedge && self.kernel.is_none() {
            return Err(Error::InvalidConfig(
                "transport terms need a deformation kernel".into(),
            ));
        }
        if let Some(f) = &self.forcing {
            if f.len() != self.layout.n_vol_points() {
                return Err(Error::MeshMismatch(format!(
                    "forcing sampled at {} points, layout has {}",
                    f.len(),
                    self.layout.n_vol_points()
                )));
            }
        }
        if let Some(init) = &self.initial {
            if init.mesh().fingerprint() != self.layout.mesh.fingerprint() {
                return Err(Error::MeshMismatch(
                    "initial state lives on a different mesh".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Result of one inner (fixed `h00`, fixed `eps_p`) solve.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub state: DgField,
    pub film: Option<FilmField>,
    /// Number of linear solves performed.
    pub sweeps: usize,
    /// Scaled residual norm of the returned state.
    pub residual: f64,
    /// Last damped-update size (relative max norm).
    pub increment: f64,
    /// Whether the diffusivity clamp was hit while freezing coefficients.
    pub clamp_active: bool,
}

/// Result of the load loop at one penalty stage.
#[derive(Debug, Clone)]
pub struct ForceOutcome {
    pub inner: InnerSolve,
    pub h00: f64,
    /// Offset corrections performed after the initial evaluation.
    pub iterations: usize,
    /// `integral(u) - target` of the returned state.
    pub residual: f64,
}

/// Final report of the staged driver. All diagnostics refer to the returned
/// state and are recomputed at exit.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub pressure: DgField,
    pub film: Option<FilmField>,
    pub h00: f64,
    /// Sweep count per penalty stage.
    pub stage_sweeps: Vec<usize>,
    pub total_sweeps: usize,
    pub force_iterations: usize,
    pub residual: f64,
    pub increment: f64,
    /// `integral(u) - target`, zero when no load constraint was active.
    pub force_residual: f64,
    pub load: f64,
    pub min_pressure: f64,
    /// `integral(|min(u, 0)|)`.
    pub negative_mass: f64,
    /// `(1/eps_p) * integral(min(u, 0)^2)`.
    pub penalty_energy: f64,
    /// `integral(max(u, 0) * (1/eps_p) |min(u, 0)|)`; vanishes identically in
    /// exact arithmetic because the factors have disjoint support.
    pub complementarity: f64,
    pub clamp_active: bool,
    /// Final penalty parameter (0 when the penalty is disabled).
    pub eps_p_final: f64,
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Row-wise backward-error residual:
/// `max_i |r_i| / (max_j |A_ij| (1 + |u|_inf) + |b_i| + 1)`.
///
/// The clamped Reynolds coefficient mixes equation scales twelve orders of
/// magnitude apart inside one assembly. A single norm-wise scale makes the
/// large rows unreachable in doubles and hides violations of the small rows
/// entirely, so each equation is tested against its own row scale. The state
/// norm stays global: equations whose solution values sit twelve orders
/// below the pressure scale are satisfied by anything that small.
fn scaled_residual(a: &crate::assembly::SystemMatrix, b: &[f64], u: &[f64], r: &[f64]) -> f64 {
    let rowmax = a.row_max_abs();
    let unorm = 1.0 + linf(u);
    let mut worst = 0.0f64;
    for i in 0..r.len() {
        let denom = rowmax[i] * unorm + b[i].abs() + 1.0;
        worst = worst.max(r[i].abs() / denom);
    }
    worst
}

/// Error value for a film that touches zero, located at the worst point.
fn collapse_error(kernel: &DeformationKernel, film: &FilmField) -> Error {
    let (min_h, at) = kernel.film_min(film);
    Error::FilmCollapse {
        min_h,
        x: at[0],
        y: at[1],
    }
}

/// Largest fraction of the update `u -> next` that keeps every film sample
/// above a pointwise floor: `kappa` times its current (strictly positive)
/// value, but never allowed to sink quickly below the absolute scale `fmin`,
/// which is chosen well above dot-product roundoff. The film is affine in
/// the state, so the scaling is exact up to that roundoff.
fn boundary_fraction(f_cur: &FilmField, f_next: &FilmField, kappa: f64, fmin: f64) -> f64 {
    let mut t = 1.0f64;
    for (c, n) in f_cur
        .vol
        .iter()
        .zip(&f_next.vol)
        .chain(f_cur.face.iter().zip(&f_next.face))
    {
        if n < c {
            let floor = (kappa * c).max(fmin);
            if *n < floor {
                t = t.min(((c - floor) / (c - n)).max(0.0));
            }
        }
    }
    t
}

/// Damped fixed-point iteration at fixed offset and penalty parameter.
///
/// Starts from `init`, performs sweeps until the scaled residual drops below
/// `cfg.tol_residual` (or the update stalls below `cfg.tol_increment`), and
/// returns the converged state. A warm start from an already converged state
/// performs no sweep. `force_res` is only echoed into the log lines.
pub fn solve_inner(
    prob: &Problem,
    cfg: &SolveConfig,
    pen: &PenaltyConfig,
    h00: f64,
    init: DgField,
    stage: &str,
    force_res: f64,
) -> Result<InnerSolve> {
    let layout = prob.layout;
    let mut u = init;
    let mut film = match prob.kernel {
        Some(k) => {
            let f = k.film(h00, &u)?;
            if !(f.min() > 0.0) {
                return Err(collapse_error(k, &f));
            }
            Some(f)
        }
        None => None,
    };
    // Kept for the pinned hand-off: by the time the sweeps pin, they have
    // pressed the film onto its bound, and the Newton stage is far better
    // off restarting from the original state with its healthy clearance.
    let entry = prob.kernel.map(|_| (u.clone(), film.clone().unwrap()));

    let mut sweeps = 0usize;
    let mut increment = f64::INFINITY;
    let mut clamp_active = false;
    let mut best = f64::INFINITY;
    let mut grow = 0usize;
    let mut pinned = 0usize;
    let forcing = prob.forcing.as_deref();

    let (state, residual_norm, film) = loop {
        let coeffs = FrozenCoeffs::freeze(layout, &prob.model, &u, film.as_ref(), prob.wedge)?;
        clamp_active |= coeffs.clamp_active;
        let (a, b) = assemble_picard(layout, &cfg.params, &coeffs, pen, forcing)?;
        let r = residual(&a, &b, u.coeffs());
        let res = scaled_residual(&a, &b, u.coeffs(), &r);
        info!(
            "iter={} stage={} res={:e} force={:e} minu={:e}",
            sweeps,
            stage,
            res,
            force_res,
            layout.field_min(&u)
        );
        if res <= cfg.tol_residual {
            break (u, res, film);
        }
        // Threshold-based hand-off to Newton. Film-coupled runs skip it: for
        // them the fixed-point map is healthy until it pins against the film
        // bound, and the pinned hand-off below fires at exactly that moment.
        if cfg.newton_polish && res <= cfg.newton_threshold && prob.kernel.is_none() {
            let (nu, nres, nfilm, nsweeps, nclamp) =
                newton_finish(prob, cfg, pen, h00, u, film, res, stage, force_res)?;
            sweeps += nsweeps;
            clamp_active |= nclamp;
            break (nu, nres, nfilm);
        }
        if sweeps >= cfg.max_sweeps {
            return Err(Error::IterationLimit {
                stage: "fixed-point sweeps",
                limit: cfg.max_sweeps,
                residual: res,
            });
        }
        if res.is_finite() && res <= 10.0 * best {
            grow = 0;
        } else {
            grow += 1;
            if grow >= cfg.divergence_window {
                return Err(Error::Divergence {
                    stage: "fixed-point sweeps",
                    from: best,
                    to: res,
                });
            }
        }
        best = best.min(res);

        let x = solve_sparse(&a, &b)?;
        let delta = x
            .iter()
            .zip(u.coeffs())
            .fold(0.0f64, |m, (xi, ui)| m.max((xi - ui).abs()));
        let target = DgField::from_coeffs(u.mesh(), x)?;
        let mut omega_eff = cfg.relaxation;
        let mut next = u.relaxed_toward(omega_eff, &target);
        if let Some(k) = prob.kernel {
            // Keep the film strictly positive: the film is affine in the
            // state, so shorten the step to the fraction that lets the film
            // at most halve pointwise per sweep and never drop below an
            // absolute floor.
            let f_cur = film.as_ref().expect("film exists whenever a kernel does");
            let fmin = 1e-11 * (1.0 + h00.abs());
            let mut f_next = k.film(h00, &next)?;
            let frac = boundary_fraction(f_cur, &f_next, 0.5, fmin);
            if frac < 1.0 {
                omega_eff *= frac;
                next = u.relaxed_toward(omega_eff, &target);
                f_next = k.film(h00, &next)?;
                // Roundoff can still push a sample over the edge; halving
                // converges back to the feasible current state.
                let mut halvings = 0;
                while !(f_next.min() > 0.0) {
                    if halvings >= 40 {
                        return Err(collapse_error(k, &f_next));
                    }
                    halvings += 1;
                    omega_eff *= 0.5;
                    next = u.relaxed_toward(omega_eff, &target);
                    f_next = k.film(h00, &next)?;
                }
            }
            film = Some(f_next);
        }
        // A collapsing step fraction means the target of the lagged linear
        // problem keeps pressing the film onto its positivity boundary. The
        // lagged coefficients carry no film feedback, so no amount of
        // fixed-point sweeping recovers from this; hand over to the Newton
        // iteration, whose film-coupled derivative blocks do.
        if omega_eff < 0.1 * cfg.relaxation {
            pinned += 1;
        } else {
            pinned = 0;
        }
        if pinned >= 3 {
            if cfg.newton_polish {
                let (nu0, nfilm0) = entry.clone().expect("pinning needs a kernel");
                let (nu, nres, nfilm, nsweeps, nclamp) = newton_finish(
                    prob,
                    cfg,
                    pen,
                    h00,
                    nu0,
                    Some(nfilm0),
                    res,
                    stage,
                    force_res,
                )?;
                sweeps += nsweeps;
                clamp_active |= nclamp;
                break (nu, nres, nfilm);
            }
            return Err(Error::IterationLimit {
                stage: "fixed-point sweeps",
                limit: sweeps,
                residual: res,
            });
        }
        increment = omega_eff * delta / (1.0 + linf(u.coeffs()));
        if stage == "dbg" && (sweeps <= 10 || sweeps % 100 == 0) {
            let ((fmv, fmx), (tfv, tfx)) = prob
                .kernel
                .map(|k| {
                    let f = film.as_ref().unwrap();
                    let (v, x) = k.film_min(f);
                    let tf = k.film(h00, &target).unwrap();
                    let (tv, tx) = k.film_min(&tf);
                    ((v, x[0]), (tv, tx[0]))
                })
                .unwrap_or(((f64::NAN, f64::NAN), (f64::NAN, f64::NAN)));
            eprintln!(
                "    [dbg] sweep {} res={:.4e} omega_eff={:.3e} delta={:.3e} load={:.4} tload={:.4} film=({:.3e} @ {:+.3}) tfilm=({:.3e} @ {:+.3})",
                sweeps, res, omega_eff, delta,
                u.integral(), target.integral(),
                fmv, fmx, tfv, tfx,
            );
        }
        u = next;
        sweeps += 1;

        if increment <= cfg.tol_increment && omega_eff == cfg.relaxation {
            // Stalled update: recompute the residual of the final state once
            // and report it as-is.
            let coeffs = FrozenCoeffs::freeze(layout, &prob.model, &u, film.as_ref(), prob.wedge)?;
            clamp_active |= coeffs.clamp_active;
            let (a, b) = assemble_picard(layout, &cfg.params, &coeffs, pen, forcing)?;
            let r = residual(&a, &b, u.coeffs());
            let res = scaled_residual(&a, &b, u.coeffs(), &r);
            break (u, res, film);
        }
    };

    Ok(InnerSolve {
        state,
        film,
        sweeps,
        residual: residual_norm,
        increment,
        clamp_active,
    })
}

/// Gradient of the film log-barrier `-sum_q w_q ln(film_q)` over every
/// quadrature point — volume *and* face — as a vector over the state
/// unknowns. Face points must participate: the film can pinch at a cell
/// interface just as easily as inside a cell, and a barrier that cannot see
/// such a point cannot repel the iteration from it. The film is affine in
/// the state through the deformation kernel, so the chain rule is one kernel
/// row per point.
fn barrier_force(
    kernel: &DeformationKernel,
    layout: &QuadLayout,
    film: &FilmField,
    n: usize,
) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for q in 0..layout.n_vol_points() {
        let c = layout.vol_weights[q] / film.vol[q];
        let row = kernel.row(kernel.vol_row(q));
        for (gi, ki) in g.iter_mut().zip(row) {
            *gi += c * ki;
        }
    }
    for q in 0..layout.n_face_points() {
        let c = layout.face_weights[q] / film.face[q];
        let row = kernel.row(kernel.face_row(q));
        for (gi, ki) in g.iter_mut().zip(row) {
            *gi += c * ki;
        }
    }
    g
}

/// Add `mu * K^T diag(w / film^2) K` to the Newton matrix: the (positive
/// semidefinite) Hessian of the film log-barrier, over the same volume and
/// face point set as `barrier_force`.
fn add_barrier_hessian(
    jac: &mut nalgebra::DMatrix<f64>,
    kernel: &DeformationKernel,
    layout: &QuadLayout,
    film: &FilmField,
    mu: f64,
) {
    let n = jac.nrows();
    let mut point = |c: f64, row: &[f64]| {
        for i in 0..n {
            let ci = c * row[i];
            if ci != 0.0 {
                for j in 0..n {
                    jac[(i, j)] += ci * row[j];
                }
            }
        }
    };
    for q in 0..layout.n_vol_points() {
        let c = mu * layout.vol_weights[q] / (film.vol[q] * film.vol[q]);
        point(c, kernel.row(kernel.vol_row(q)));
    }
    for q in 0..layout.n_face_points() {
        let c = mu * layout.face_weights[q] / (film.face[q] * film.face[q]);
        point(c, kernel.row(kernel.face_row(q)));
    }
}

/// Row-wise residual of the barrier-augmented system; the barrier force
/// magnitude joins each row scale so a rung counts as solved relative to the
/// forces actually present in it.
fn comp_res(
    a: &crate::assembly::SystemMatrix,
    b: &[f64],
    u: &[f64],
    f: &[f64],
    extra: Option<&[f64]>,
) -> f64 {
    let rowmax = a.row_max_abs();
    let unorm = 1.0 + linf(u);
    let mut worst = 0.0f64;
    for i in 0..f.len() {
        let mut denom = rowmax[i] * unorm + b[i].abs() + 1.0;
        if let Some(e) = extra {
            denom += e[i];
        }
        worst = worst.max(f[i].abs() / denom);
    }
    worst
}

/// Newton finish, entered from the sweep loop once the residual is below the
/// switch-over threshold or the sweeps have pinned against the film bound.
///
/// The plain damped-Newton attempt runs first; it is quadratically convergent
/// from the warm starts the load loop produces, which is the path every
/// production solve takes. If it fails on a film-coupled problem, a second
/// attempt restarts from the same entry state and runs down a ladder of
/// log-barrier weights on the film, which can rescue starts that are close
/// enough for the barrier to steer but too far for plain steps. The exit test
/// is always the residual of the unmodified system.
#[allow(clippy::too_many_arguments)]
fn newton_finish(
    prob: &Problem,
    cfg: &SolveConfig,
    pen: &PenaltyConfig,
    h00: f64,
    u: DgField,
    film: Option<FilmField>,
    res_in: f64,
    stage: &str,
    force_res: f64,
) -> Result<(DgField, f64, Option<FilmField>, usize, bool)> {
    let plain = newton_attempt(
        prob,
        cfg,
        pen,
        h00,
        u.clone(),
        film.clone(),
        res_in,
        stage,
        force_res,
        &[0.0],
    );
    match (plain, prob.kernel) {
        (Ok(out), _) => Ok(out),
        (Err(e), None) => Err(e),
        (Err(_), Some(_)) => {
            // The assembled rows span unit scale up to the clamp ceiling, so
            // the opening barrier must start far above one to outweigh the
            // stiffest rows from the first step; the ladder then follows the
            // interior path down.
            let rungs: &[f64] = &[1e10, 1e8, 1e6, 1e4, 1e2, 1.0, 1e-2, 1e-4, 1e-6, 1e-8, 0.0];
            newton_attempt(prob, cfg, pen, h00, u, film, res_in, stage, force_res, rungs)
        }
    }
}

/// One Newton run over the given barrier rungs (see [`newton_finish`]).
#[allow(clippy::too_many_arguments)]
fn newton_attempt(
    prob: &Problem,
    cfg: &SolveConfig,
    pen: &PenaltyConfig,
    h00: f64,
    mut u: DgField,
    mut film: Option<FilmField>,
    res_in: f64,
    stage: &str,
    force_res: f64,
    rungs: &[f64],
) -> Result<(DgField, f64, Option<FilmField>, usize, bool)> {
    let layout = prob.layout;
    let forcing = prob.forcing.as_deref();
    let n = layout.mesh.n_dofs();
    let mut clamp = false;
    let mut steps = 0usize;
    let mut res = res_in;
    // Levenberg-Marquardt shift, adapted across the whole run: quartered on
    // every accepted step, tenfold on every rejected trial.
    let mut lam = 1e-8;

    for &mu in rungs {
        // Intermediate rungs only re-center the iterate on the interior
        // path: each runs until its own residual has dropped well below
        // where the rung started (or progress stalls), then hands down.
        // Solving a rung to the final tolerance wastes steps on a system
        // that is about to change anyway.
        let mut rung_entry = f64::INFINITY;
        let mut stall = 0usize;
        loop {
            let coeffs = FrozenCoeffs::freeze(layout, &prob.model, &u, film.as_ref(), prob.wedge)?;
            clamp |= coeffs.clamp_active;
            let (a, b) = assemble_picard(layout, &cfg.params, &coeffs, pen, forcing)?;
            let r = residual(&a, &b, u.coeffs());
            res = scaled_residual(&a, &b, u.coeffs(), &r);
            if res <= cfg.tol_residual {
                return Ok((u, res, film, steps, clamp));
            }
            let (f_mu, extra) = match (mu > 0.0, prob.kernel) {
                (true, Some(k)) => {
                    let g = barrier_force(k, layout, film.as_ref().unwrap(), n);
                    let f: Vec<f64> = r.iter().zip(&g).map(|(ri, gi)| ri - mu * gi).collect();
                    let e: Vec<f64> = g.iter().map(|gi| mu * gi.abs()).collect();
                    (f, Some(e))
                }
                _ => (r, None),
            };
            let res_mu = comp_res(&a, &b, u.coeffs(), &f_mu, extra.as_deref());
            if rung_entry.is_infinite() {
                rung_entry = res_mu;
            }
            if mu > 0.0 && res_mu <= (0.1 * rung_entry).min(1e-2).max(cfg.tol_residual) {
                break;
            }
            if steps >= cfg.max_newton {
                return Err(Error::IterationLimit {
                    stage: "newton steps",
                    limit: cfg.max_newton,
                    residual: res,
                });
            }
            // Row scales and the least-squares merit are frozen at the
            // current point so every trial is measured against the same
            // yardstick; the max-form residual is too kinked to search on.
            // The scales deliberately exclude the barrier force: measured
            // against physical rows only, the barrier keeps its infinite
            // wall, so a trial that pinches the film is priced accordingly
            // instead of saturating at a finite violation.
            let rowmax = a.row_max_abs();
            let unorm = 1.0 + linf(u.coeffs());
            let denom: Vec<f64> = (0..n)
                .map(|i| rowmax[i] * unorm + b[i].abs() + 1.0)
                .collect();
            let merit = |f: &[f64]| -> f64 {
                f.iter()
                    .zip(&denom)
                    .map(|(fi, di)| (fi / di) * (fi / di))
                    .sum::<f64>()
            };
            let m0 = merit(&f_mu);

            let mut jac = assemble_newton(layout, &cfg.params, &coeffs, pen, prob.kernel, true)?;
            if mu > 0.0 {
                if let Some(k) = prob.kernel {
                    add_barrier_hessian(&mut jac, k, layout, film.as_ref().unwrap(), mu);
                }
            }
            // Weighted Gauss-Newton normal equations. Where the mobility
            // clamp saturates, the Jacobian is nearly singular along
            // contact-interior pressure modes, and the raw Newton direction
            // blows up along exactly those modes once the barrier weakens;
            // the Levenberg-Marquardt shift bounds the step and rotates it
            // toward weighted steepest descent whenever the linearization
            // proves untrustworthy.
            for i in 0..n {
                jac.row_mut(i).scale_mut(1.0 / denom[i]);
            }
            let fw =
                na::DVector::from_iterator(n, f_mu.iter().zip(&denom).map(|(fi, di)| fi / di));
            let neg_grad = -jac.tr_mul(&fw);
            let nmat = jac.tr_mul(&jac);

            let mut accepted = false;
            let mut last_tm = f64::INFINITY;
            let (mut last_t, mut last_du) = (0.0f64, 0.0f64);
            for _ in 0..16 {
                let mut shifted = nmat.clone();
                for i in 0..n {
                    let d = nmat[(i, i)];
                    shifted[(i, i)] = d + lam * d.max(1e-300);
                }
                let du_vec = match shifted.cholesky().map(|ch| ch.solve(&neg_grad)) {
                    Some(x) if x.iter().all(|v| v.is_finite()) => x,
                    _ => {
                        lam *= 10.0;
                        continue;
                    }
                };
                let du = DgField::from_coeffs(u.mesh(), du_vec.as_slice().to_vec())?;
                last_du = linf(du.coeffs());

                // The film is affine in the state, so the largest feasible
                // step along the direction is exact: one step may at most
                // halve the film, and never take it below an absolute floor
                // far above cancellation noise yet orders below any physical
                // film, no matter how hard the linearized model pushes
                // toward closure.
                let mut t = 1.0;
                let mut trial_film = None;
                if let Some(k) = prob.kernel {
                    let f_cur = film.as_ref().unwrap();
                    let mut full = u.clone();
                    full.axpy(1.0, &du);
                    let f_full = k.film(h00, &full)?;
                    // The floor is absolute so a persistently closing
                    // direction cannot walk the film down geometrically; the
                    // second term only keeps the cap meaningful for entry
                    // states that already sit below the floor.
                    let fmin = (1e-9 * (1.0 + h00.abs())).min(0.9 * f_cur.min());
                    t = (0.95 * boundary_fraction(f_cur, &f_full, 0.5, fmin)).min(1.0);
                }
                last_t = t;
                if t * last_du <= 1e-14 * unorm {
                    // Jammed against the film boundary; a steeper shift bends
                    // the direction away from it.
                    lam *= 10.0;
                    continue;
                }
                let mut trial = u.clone();
                trial.axpy(t, &du);
                if let Some(k) = prob.kernel {
                    let f = k.film(h00, &trial)?;
                    if !(f.min() > 0.0) {
                        lam *= 10.0;
                        continue;
                    }
                    trial_film = Some(f);
                }
                let tc = FrozenCoeffs::freeze(
                    layout,
                    &prob.model,
                    &trial,
                    trial_film.as_ref(),
                    prob.wedge,
                )?;
                let (ta, tb) = assemble_picard(layout, &cfg.params, &tc, pen, forcing)?;
                let tr = residual(&ta, &tb, trial.coeffs());
                let tf: Vec<f64> = match (mu > 0.0, prob.kernel) {
                    (true, Some(k)) => {
                        let g = barrier_force(k, layout, trial_film.as_ref().unwrap(), n);
                        tr.iter().zip(&g).map(|(ri, gi)| ri - mu * gi).collect()
                    }
                    _ => tr,
                };
                let tm = merit(&tf);
                last_tm = tm;
                if tm <= m0 * (1.0 - 1e-4 * t) {
                    clamp |= tc.clamp_active;
                    u = trial;
                    film = trial_film;
                    accepted = true;
                    lam = (0.25 * lam).max(1e-10);
                    break;
                }
                lam *= 10.0;
                if lam > 1e12 {
                    break;
                }
            }
            steps += 1;
            info!(
                "iter={} stage={}.n res={:e} force={:e} minu={:e}",
                steps,
                stage,
                res,
                force_res,
                layout.field_min(&u)
            );
            if stage == "dbg" {
                eprintln!(
                    "    [newt] step {steps} mu={mu:.1e} res={res:.4e} res_mu={res_mu:.4e} |du|={last_du:.3e} t={last_t:.3e} lam={lam:.1e} m0={m0:.4e} tm={last_tm:.4e} ok={accepted}"
                );
            }
            if !accepted {
                if mu == 0.0 {
                    return Err(Error::Divergence {
                        stage: "newton steps",
                        from: res,
                        to: res,
                    });
                }
                // This rung is stuck; a weaker barrier may still make
                // progress toward the unmodified system.
                break;
            }
            // Steps that barely lower the merit only polish an already
            // re-centered rung; demote instead of treadmilling.
            if mu > 0.0 {
                if last_tm > m0 * (1.0 - 1e-3) {
                    stall += 1;
                    if stall >= 3 {
                        break;
                    }
                } else {
                    stall = 0;
                }
            }
        }
    }
    Err(Error::IterationLimit {
        stage: "newton steps",
        limit: cfg.max_newton,
        residual: res,
    })
}

/// Natural film scale of the model: the thickness at which the Reynolds
/// coefficient `rho h^3 / (eta lambda)` is of unit size, so diffusion and
/// transport balance and the coefficient derivatives are alive. Initial
/// states should pinch near this scale; far above it the coefficient sits on
/// its upper clamp and far below on its lower one, and in both plateaus the
/// assembled equations lose their film sensitivity.
fn film_scale(model: &DiffusionModel) -> f64 {
    match model {
        DiffusionModel::Lubricated(lub) => lub.lambda.cbrt(),
        _ => 1.0,
    }
}

/// Initial state for loaded contacts: the pressure whose deformation turns
/// the dry gap into the same gap clipped from below at `h_band`, giving a
/// flattened contact with films at the physical scale inside the loaded zone
/// and the undeformed geometry outside. Any state whose films sit far above
/// the band leaves the Reynolds coefficient pinned on its upper clamp, where
/// the assembled equations are blind to the film and drive the pressure
/// toward zero; this start places the contact inside the live band from the
/// first iterate. The deformation operator is smoothing, so the inversion is
/// Tikhonov-regularized weighted least squares over the quadrature points.
fn flattened_start(
    kernel: &DeformationKernel,
    layout: &QuadLayout,
    h00: f64,
    h_band: f64,
) -> Result<DgField> {
    let n = layout.mesh.n_dofs();
    let zero = DgField::zeros(&layout.mesh);
    let base = kernel.film(h00, &zero)?;
    let mut nmat = na::DMatrix::zeros(n, n);
    let mut rhs = na::DVector::zeros(n);
    let mut accumulate = |w: f64, row: &[f64], d: f64| {
        for i in 0..n {
            let wi = w * row[i];
            if wi == 0.0 {
                continue;
            }
            rhs[i] += wi * d;
            for j in 0..n {
                nmat[(i, j)] += wi * row[j];
            }
        }
    };
    // Only deficient points constrain the fit. The gap outside the loaded
    // zone is already open, and the far-field deformation of a compact
    // pressure is genuinely nonzero there; pinning it would poison the
    // inversion with the far-field tail of the kernel.
    for q in 0..layout.n_vol_points() {
        let d = h_band - base.vol[q];
        if d > 0.0 {
            accumulate(layout.vol_weights[q], kernel.row(kernel.vol_row(q)), d);
        }
    }
    for q in 0..layout.n_face_points() {
        let d = h_band - base.face[q];
        if d > 0.0 {
            accumulate(layout.face_weights[q], kernel.row(kernel.face_row(q)), d);
        }
    }
    let ridge = 1e-8 * nmat.trace() / n as f64;
    for i in 0..n {
        nmat[(i, i)] += ridge;
    }
    let sol = nmat
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::LinearSolve("deformation inversion not positive definite".into()))?;
    DgField::from_coeffs(&layout.mesh, sol.as_slice().to_vec())
}

/// Scale `init` by the smallest factor `s >= 1` whose deformation holds the
/// film at `h00` above the given positive margin everywhere. The film is
/// affine in the state (`h00 + geometry + K u`), so the factor is exact.
/// Returns `None` when no upward scaling can open the film (some pinched
/// sample has a nonpositive deformation response).
fn scaled_feasible_state(
    kernel: &DeformationKernel,
    h00: f64,
    init: &DgField,
    margin: f64,
) -> Result<Option<DgField>> {
    let zero = DgField::zeros(init.mesh());
    let base = kernel.film(h00, &zero)?;
    let lift = kernel.deformation(init)?;
    let mut s_needed = 1.0f64;
    let mut s_cap = f64::INFINITY;
    for (b, l) in base
        .vol
        .iter()
        .zip(&lift.vol)
        .chain(base.face.iter().zip(&lift.face))
    {
        if b + l < margin {
            if *l > 0.0 {
                s_needed = s_needed.max((margin - b) / l);
            } else {
                return Ok(None);
            }
        }
        if *l < 0.0 {
            s_cap = s_cap.min((b - margin) / -l);
        }
    }
    if s_needed > s_cap {
        return Ok(None);
    }
    let mut out = init.clone();
    out.scale(s_needed);
    Ok(Some(out))
}

/// Close the load constraint `integral(u) = target` by adjusting `h00`.
///
/// Relaxation steps `h00 <- h00 - gain * g` run until two evaluations bracket
/// the root; after that a secant step is taken, clamped into the bracket
/// (falling back to bisection when it lands outside). The load must decrease
/// with growing `h00`; persistent violations abort with a diagnostic.
pub fn solve_with_force_balance(
    prob: &Problem,
    cfg: &SolveConfig,
    pen: &PenaltyConfig,
    fc: &ForceConfig,
    h00_init: f64,
    init: DgField,
    stage: &str,
) -> Result<ForceOutcome> {
    if prob.kernel.is_none() {
        return Err(Error::InvalidConfig(
            "the load constraint needs a deformation kernel".into(),
        ));
    }

    let mut inner = solve_inner(prob, cfg, pen, h00_init, init, &format!("{stage}.f0"), 0.0)?;
    let mut g = inner.state.integral() - fc.target;
    if g.abs() <= fc.tol {
        return Ok(ForceOutcome {
            inner,
            h00: h00_init,
            iterations: 0,
            residual: g,
        });
    }

    // Brackets: `pos` has g > 0 (offset too small), `neg` has g < 0.
    let mut pos: Option<(f64, f64)> = None;
    let mut neg: Option<(f64, f64)> = None;
    let mut store = |h: f64, g: f64, pos: &mut Option<(f64, f64)>, neg: &mut Option<(f64, f64)>| {
        let slot = if g > 0.0 { pos } else { neg };
        // Keep the evaluation closest to the root on each side.
        if slot.map_or(true, |(_, sg): (f64, f64)| g.abs() < sg.abs()) {
            *slot = Some((h, g));
        }
    };
    store(h00_init, g, &mut pos, &mut neg);

    // The load decreases as h00 grows (thicker film carries less pressure),
    // so the relaxation step moves h00 *with* the sign of g.
    let mut h_prev = h00_init;
    let mut g_prev = g;
    let mut h_cur = h00_init + (fc.gain * g).clamp(-1.0, 1.0);
    let mut violations = 0usize;

    for it in 1..=fc.max_iters {
        let label = format!("{stage}.f{it}");
        // A deep offset probe usually pinches the film of the warm state.
        // Fall back to the initial profile scaled up until its deformation
        // holds the film open at the probe; only when even that fails is the
        // offset retreated toward the previous (feasible) one.
        let kernel = prob.kernel.expect("checked above");
        let shape = prob.initial.clone().unwrap_or_else(|| inner.state.clone());
        let mut retries = 0;
        let mut fallback = false;
        inner = loop {
            let warm = if fallback {
                scaled_feasible_state(kernel, h_cur, &shape, 10.0 * film_scale(&prob.model))?
            } else {
                Some(inner.state.clone())
            };
            let attempt = match warm {
                Some(w) => solve_inner(prob, cfg, pen, h_cur, w, &label, g),
                None => Err(Error::FilmCollapse {
                    min_h: 0.0,
                    x: f64::NAN,
                    y: f64::NAN,
                }),
            };
            match attempt {
                Ok(out) => break out,
                Err(Error::FilmCollapse { .. }) => {
                    if !fallback {
                        fallback = true;
                    } else if retries < 20 {
                        retries += 1;
                        fallback = false;
                        h_cur = 0.5 * (h_cur + h_prev);
                        if retries <= 2 {
                            warn!("film collapse at h00 probe, retreating to {h_cur:e}");
                        }
                    } else {
                        return Err(Error::ForceBalance(format!(
                            "all states collapse the film near h00 = {h_cur:e}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        g = inner.state.integral() - fc.target;

        let noise = 1e-6 + 1e-3 * g_prev.abs();
        if (h_cur - h_prev) * (g - g_prev) > noise * (h_cur - h_prev).abs() {
            violations += 1;
            warn!(
                "load increased with h00 ({:e} -> {:e} as h00 {:e} -> {:e})",
                g_prev, g, h_prev, h_cur
            );
            if violations > 3 {
                return Err(Error::ForceBalance(format!(
                    "load is not decreasing in h00 near h00 = {h_cur:e} \
                     (violated at {violations} probes); last residual {g:e}"
                )));
            }
        }
        store(h_cur, g, &mut pos, &mut neg);

        if g.abs() <= fc.tol {
            return Ok(ForceOutcome {
                inner,
                h00: h_cur,
                iterations: it,
                residual: g,
            });
        }

        let denom = g - g_prev;
        let mut h_next = if denom.abs() > 1e-300 && h_cur != h_prev {
            h_cur - g * (h_cur - h_prev) / denom
        } else {
            h_cur + (fc.gain * g).clamp(-1.0, 1.0)
        };
        if let (Some((hp, _)), Some((hn, _))) = (pos, neg) {
            let (lo, hi) = (hp.min(hn), hp.max(hn));
            if !h_next.is_finite() || h_next <= lo || h_next >= hi {
                h_next = 0.5 * (lo + hi);
            }
        } else {
            if !h_next.is_finite() {
                h_next = h_cur + (fc.gain * g).clamp(-1.0, 1.0);
            }
            // No bracket yet: cap the step so a flat secant cannot fling the
            // offset far outside the trust region of the model.
            let cap = (8.0 * fc.gain * g.abs()).max(0.25);
            h_next = h_next.clamp(h_cur - cap, h_cur + cap);
        }
        h_prev = h_cur;
        g_prev = g;
        h_cur = h_next;
    }

    Err(Error::ForceBalance(format!(
        "no convergence in {} offset corrections; last residual {g:e}",
        fc.max_iters
    )))
}

/// Hertzian initial guess: the nonnegative part of the dry-contact pressure
/// profile, scaled so its integral matches `target`.
pub fn hertzian_guess(mesh: &Arc<Mesh>, kind: ContactKind, target: f64) -> DgField {
    let base = match kind {
        ContactKind::Line => std::f64::consts::FRAC_PI_2,
        // integral of sqrt(1 - r^2) over the unit disc
        ContactKind::Point => 2.0 * std::f64::consts::PI / 3.0,
    };
    let scale = target / base;
    DgField::interpolate(mesh, &move |x: [f64; 2]| {
        let r2 = match kind {
            ContactKind::Line => x[0] * x[0],
            ContactKind::Point => x[0] * x[0] + x[1] * x[1],
        };
        scale * (1.0 - r2).max(0.0).sqrt()
    })
}

/// Staged driver: penalty continuation outermost, the load loop in the
/// middle, damped sweeps innermost. Diagnostics are recomputed at exit from
/// the returned state.
pub fn solve(prob: &Problem, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    prob.check()?;
    let layout = prob.layout;

    let stages: Vec<Option<f64>> = if cfg.penalty.enabled {
        cfg.penalty.stages().into_iter().map(Some).collect()
    } else {
        vec![None]
    };

    let mut u = match &prob.initial {
        Some(f) => f.clone(),
        None => DgField::zeros(&layout.mesh),
    };
    let mut h00 = cfg.h00;
    let mut stage_sweeps = Vec::with_capacity(stages.len());
    let mut force_iterations = 0usize;
    let mut last = None;

    for (si, eps) in stages.iter().enumerate() {
        let pen = match eps {
            Some(e) => PenaltyConfig {
                enabled: true,
                eps_p: *e,
                mode: cfg.penalty.mode,
                schedule: Vec::new(),
            },
            None => PenaltyConfig::disabled(),
        };
        let label = format!("p{si}");
        let (inner, fres) = match (&cfg.force, prob.kernel) {
            (Some(fc), Some(_)) => {
                let out = solve_with_force_balance(prob, cfg, &pen, fc, h00, u, &label)?;
                h00 = out.h00;
                force_iterations += out.iterations;
                (out.inner, out.residual)
            }
            _ => (
                solve_inner(prob, cfg, &pen, h00, u, &label, 0.0)?,
                0.0,
            ),
        };
        stage_sweeps.push(inner.sweeps);
        u = inner.state.clone();
        last = Some((inner, fres, pen));
    }

    let (inner, force_residual, pen_final) = last.expect("at least one stage");

    // Recompute every reported diagnostic from the final state.
    let film = inner.film;
    let coeffs = FrozenCoeffs::freeze(layout, &prob.model, &u, film.as_ref(), prob.wedge)?;
    let (a, b) = assemble_picard(layout, &cfg.params, &coeffs, &pen_final, prob.forcing.as_deref())?;
    let r = residual(&a, &b, u.coeffs());
    let res = scaled_residual(&a, &b, u.coeffs(), &r);

    let inv_eps = if pen_final.enabled {
        1.0 / pen_final.eps_p
    } else {
        0.0
    };
    let vals = layout.field_vol_values(&u);
    let mut negative_mass = 0.0;
    let mut penalty_energy = 0.0;
    let mut complementarity = 0.0;
    for (q, &v) in vals.iter().enumerate() {
        let w = layout.vol_weights[q];
        let nm = (-v).max(0.0);
        negative_mass += w * nm;
        penalty_energy += inv_eps * w * nm * nm;
        complementarity += inv_eps * w * v.max(0.0) * nm;
    }

    Ok(SolveReport {
        min_pressure: layout.field_min(&u),
        load: u.integral(),
        pressure: u,
        film,
        h00,
        total_sweeps: stage_sweeps.iter().sum(),
        stage_sweeps,
        force_iterations,
        residual: res,
        increment: inner.increment,
        force_residual,
        negative_mass,
        penalty_energy,
        complementarity,
        clamp_active: coeffs.clamp_active,
        eps_p_final: if pen_final.enabled { pen_final.eps_p } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgspace::{norms, RuleSpec};
    use crate::mesh::{DegreeSpec, DomainSpec};
    use crate::params::PhysicalInputs;
    use crate::physics::Lubricant;

    fn layout_1d(n: usize, p: usize, lo: f64, hi: f64) -> QuadLayout {
        let mesh =
            Arc::new(Mesh::build(&DomainSpec::interval(lo, hi, n), &DegreeSpec::Uniform(p)).unwrap());
        QuadLayout::build(&mesh, RuleSpec::physics())
    }

    fn sample_forcing(layout: &QuadLayout, f: impl Fn(f64) -> f64) -> Vec<f64> {
        layout.vol_points.iter().map(|x| f(x[0])).collect()
    }

    fn poisson_problem<'a>(layout: &'a QuadLayout) -> Problem<'a> {
        let forcing = sample_forcing(layout, |x| {
            std::f64::consts::PI * std::f64::consts::PI * (std::f64::consts::PI * x).sin()
        });
        Problem {
            layout,
            model: DiffusionModel::Constant(1.0),
            kernel: None,
            wedge: false,
            forcing: Some(forcing),
            initial: None,
        }
    }

    #[test]
    fn linear_problem_converges_in_one_sweep() {
        let layout = layout_1d(16, 2, 0.0, 1.0);
        let prob = poisson_problem(&layout);
        let cfg = SolveConfig {
            params: FormParams {
                theta: 1.0,
                ..FormParams::default()
            },
            ..SolveConfig::default()
        };
        let out = solve_inner(
            &prob,
            &cfg,
            &PenaltyConfig::disabled(),
            0.0,
            DgField::zeros(&layout.mesh),
            "t",
            0.0,
        )
        .unwrap();
        assert_eq!(out.sweeps, 1);
        assert!(out.residual <= cfg.tol_residual);
        let err = norms::l2_error(&out.state, &|x| (std::f64::consts::PI * x[0]).sin());
        assert!(err < 2e-4, "l2 error {err}");
    }

    #[test]
    fn warm_start_from_converged_state_takes_no_sweep() {
        let layout = layout_1d(8, 1, 0.0, 1.0);
        let prob = poisson_problem(&layout);
        let cfg = SolveConfig {
            params: FormParams {
                theta: 1.0,
                ..FormParams::default()
            },
            ..SolveConfig::default()
        };
        let pen = PenaltyConfig::disabled();
        let first = solve_inner(&prob, &cfg, &pen, 0.0, DgField::zeros(&layout.mesh), "t", 0.0)
            .unwrap();
        let again = solve_inner(&prob, &cfg, &pen, 0.0, first.state.clone(), "t", 0.0).unwrap();
        assert_eq!(again.sweeps, 0);
        assert_eq!(again.state.coeffs(), first.state.coeffs());
    }

    #[test]
    fn iteration_limit_is_reported() {
        let layout = layout_1d(8, 1, 0.0, 1.0);
        let prob = poisson_problem(&layout);
        let cfg = SolveConfig {
            relaxation: 0.01,
            max_sweeps: 2,
            ..SolveConfig::default()
        };
        let err = solve_inner(
            &prob,
            &cfg,
            &PenaltyConfig::disabled(),
            0.0,
            DgField::zeros(&layout.mesh),
            "t",
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IterationLimit { .. }), "{err}");
    }

    #[test]
    fn penalized_obstacle_matches_closed_form_and_bounds_negativity() {
        // -u'' = -1 on (0, 1): the constrained solution is identically zero
        // and the penalized one is -eps (1 - cosh((x - 1/2)/sqrt(eps)) /
        // cosh(1/(2 sqrt(eps)))).
        let eps = 1e-4;
        let layout = layout_1d(64, 2, 0.0, 1.0);
        let prob = Problem {
            layout: &layout,
            model: DiffusionModel::Constant(1.0),
            kernel: None,
            wedge: false,
            forcing: Some(sample_forcing(&layout, |_| -1.0)),
            initial: None,
        };
        let cfg = SolveConfig {
            params: FormParams {
                theta: 1.0,
                ..FormParams::default()
            },
            penalty: PenaltyConfig::fixed(eps),
            ..SolveConfig::default()
        };
        let report = solve(&prob, &cfg).unwrap();
        let exact = move |x: [f64; 2]| {
            let s = eps.sqrt();
            -eps * (1.0 - ((x[0] - 0.5) / s).cosh() / (0.5 / s).cosh())
        };
        let err = norms::l2_error(&report.pressure, &exact);
        assert!(err < 1e-6, "l2 distance to closed form {err}");
        assert!(report.min_pressure < 0.0);
        assert!(report.min_pressure >= -10.0 * eps, "{}", report.min_pressure);
        assert!(report.negative_mass > 0.0);
        assert!(report.penalty_energy > 0.0);
        assert!(report.complementarity.abs() < 1e-12);
        assert_eq!(report.eps_p_final, eps);
    }

    #[test]
    fn newton_finish_reaches_tight_tolerance_on_nonlinear_problem() {
        // eps(u) = 1 + u^2 with manufactured u = sin(pi x): compare sweep
        // counts with and without the Newton finish.
        let layout = layout_1d(16, 2, 0.0, 1.0);
        let pi = std::f64::consts::PI;
        let forcing = sample_forcing(&layout, |x| {
            let s = (pi * x).sin();
            let c = (pi * x).cos();
            pi * pi * s * (1.0 + s * s) - 2.0 * pi * pi * s * c * c
        });
        let mk = || Problem {
            layout: &layout,
            model: DiffusionModel::UnitPlusSquare,
            kernel: None,
            wedge: false,
            forcing: Some(forcing.clone()),
            initial: None,
        };
        let base = SolveConfig {
            params: FormParams {
                theta: 1.0,
                ..FormParams::default()
            },
            tol_residual: 1e-12,
            ..SolveConfig::default()
        };
        let plain = solve(&mk(), &base).unwrap();
        let newton_cfg = SolveConfig {
            newton_polish: true,
            newton_threshold: 1e-2,
            ..base
        };
        let polished = solve(&mk(), &newton_cfg).unwrap();
        assert!(polished.residual <= 1e-12);
        assert!(
            polished.total_sweeps < plain.total_sweeps,
            "newton {} vs plain {}",
            polished.total_sweeps,
            plain.total_sweeps
        );
        let err = norms::l2_error(&polished.pressure, &|x| (pi * x[0]).sin());
        assert!(err < 1e-4, "l2 error {err}");
    }

    fn lubricated_model() -> DiffusionModel {
        let inputs = PhysicalInputs::paper_defaults();
        let derived = crate::params::derive(&inputs, ContactKind::Line).unwrap();
        DiffusionModel::Lubricated(Lubricant::from_params(&inputs, &derived))
    }

    #[test]
    fn force_balance_closes_the_load_on_a_coarse_line_contact() {
        let layout = layout_1d(48, 1, -4.0, 2.0);
        let kernel = DeformationKernel::build(&layout).unwrap();
        let model = lubricated_model();
        let target = ContactKind::Line.default_force_target();
        let prob = Problem {
            layout: &layout,
            model,
            kernel: Some(&kernel),
            wedge: true,
            forcing: None,
            initial: Some(hertzian_guess(&layout.mesh, ContactKind::Line, target)),
        };
        let cfg = SolveConfig {
            penalty: PenaltyConfig::fixed(1e-3),
            force: Some(ForceConfig {
                tol: 1e-4,
                ..ForceConfig::for_kind(ContactKind::Line)
            }),
            h00: PhysicalInputs::paper_defaults().h00_init,
            tol_residual: 1e-7,
            ..SolveConfig::contact()
        };
        let report = solve(&prob, &cfg).unwrap();
        assert!(
            report.force_residual.abs() <= 1e-4,
            "force residual {:e}",
            report.force_residual
        );
        assert!((report.load - target).abs() <= 1e-4);
        assert!(report.min_pressure > -0.05, "{}", report.min_pressure);
        assert!(report.film.as_ref().unwrap().min() > 0.0);
        assert!(report.residual <= 1e-7);
    }

    #[test]
    fn reports_are_deterministic() {
        let layout = layout_1d(32, 1, 0.0, 1.0);
        let mk = || Problem {
            layout: &layout,
            model: DiffusionModel::Constant(1.0),
            kernel: None,
            wedge: false,
            forcing: Some(sample_forcing(&layout, |_| -1.0)),
            initial: None,
        };
        let cfg = SolveConfig {
            penalty: PenaltyConfig {
                schedule: vec![1e-2, 1e-3, 1e-4],
                ..PenaltyConfig::fixed(1e-4)
            },
            ..SolveConfig::default()
        };
        let a = solve(&mk(), &cfg).unwrap();
        let b = solve(&mk(), &cfg).unwrap();
        assert_eq!(a.pressure.coeffs(), b.pressure.coeffs());
        assert_eq!(a.stage_sweeps, b.stage_sweeps);
        assert!(a.residual.to_bits() == b.residual.to_bits());
        assert!(a.negative_mass.to_bits() == b.negative_mass.to_bits());
        assert_eq!(a.stage_sweeps.len(), 3);
    }

    #[test]
    fn debug_ladder_probe() {
        let layout = layout_1d(48, 1, -4.0, 2.0);
        let kernel = DeformationKernel::build(&layout).unwrap();
        let model = lubricated_model();
        let target = ContactKind::Line.default_force_target();
        let hz = hertzian_guess(&layout.mesh, ContactKind::Line, target);
        let d = kernel.deformation(&hz).unwrap();
        let dmin = d.vol.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = d.vol.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("hertz deformation range [{dmin:.4}, {dmax:.4}], integral {}", hz.integral());
        let prob = Problem {
            layout: &layout,
            model,
            kernel: Some(&kernel),
            wedge: true,
            forcing: None,
            initial: Some(hz.clone()),
        };
        let cfg = SolveConfig {
            penalty: PenaltyConfig::fixed(1e-3),
            h00: 1.5042e-6,
            tol_residual: 1e-7,
            max_sweeps: 600,
            ..SolveConfig::contact()
        };
        let h = -0.392f64;
        {
            // Divided-difference check of the Newton matrix in the
            // clamp-saturated contact regime.
            let mesh12 = Arc::new(
                Mesh::build(&DomainSpec::interval(-4.0, 2.0, 12), &DegreeSpec::Uniform(1))
                    .unwrap(),
            );
            let lay12 = QuadLayout::build(&mesh12, RuleSpec::physics());
            let k12 = DeformationKernel::build(&lay12).unwrap();
            let hz12 = hertzian_guess(&mesh12, ContactKind::Line, std::f64::consts::FRAC_PI_2);
            let w12 = scaled_feasible_state(&k12, h, &hz12, 1e-6).unwrap().unwrap();
            let pen12 = PenaltyConfig::fixed(1e-3);
            let model12 = lubricated_model();
            let residual_at = |c: &[f64]| -> Vec<f64> {
                let u = DgField::from_coeffs(&mesh12, c.to_vec()).unwrap();
                let film = k12.film(h, &u).unwrap();
                let coeffs =
                    FrozenCoeffs::freeze(&lay12, &model12, &u, Some(&film), true).unwrap();
                let (a, b) = assemble_picard(&lay12, &cfg.params, &coeffs, &pen12, None).unwrap();
                residual(&a, &b, c)
            };
            let film = k12.film(h, &w12).unwrap();
            let coeffs =
                FrozenCoeffs::freeze(&lay12, &model12, &w12, Some(&film), true).unwrap();
            let jac =
                assemble_newton(&lay12, &cfg.params, &coeffs, &pen12, Some(&k12), true).unwrap();
            let n = mesh12.n_dofs();
            let delta = 1e-7;
            let mut worst = (0usize, 0.0f64, 0.0f64);
            for j in 0..n {
                let mut cp = w12.coeffs().to_vec();
                cp[j] += delta;
                let rp = residual_at(&cp);
                cp[j] -= 2.0 * delta;
                let rm = residual_at(&cp);
                let mut col_scale = 0.0f64;
                let mut defect = 0.0f64;
                for i in 0..n {
                    let fd = (rp[i] - rm[i]) / (2.0 * delta);
                    col_scale = col_scale.max(jac[(i, j)].abs());
                    defect = defect.max((fd - jac[(i, j)]).abs());
                }
                if defect / (1.0 + col_scale) > worst.1 / (1.0 + worst.2) {
                    worst = (j, defect, col_scale);
                }
            }
            println!(
                "newton-fd contact regime: worst col {} defect {:.3e} scale {:.3e} rel {:.3e}",
                worst.0,
                worst.1,
                worst.2,
                worst.1 / (1.0 + worst.2)
            );
        }
        let _ = h;
        // Cold scaled-Hertz starts: the pinch margin decides which clamp
        // regime the first iterates see, so sweep it around the natural film
        // scale of the model.
        let fs = film_scale(&prob.model);
        println!("film scale = {fs:.4e}");
        for &c in &[3.0_f64, 10.0, 30.0] {
            for &h in &[-1e-3_f64, -1e-1, -0.392, -0.6] {
                let start = flattened_start(&kernel, &layout, h, c * fs).unwrap();
                let f0 = kernel.film(h, &start).unwrap();
                println!(
                    "c={c} h00={h:+.4e} start: load={:.4} filmmin={:+.3e} minu={:+.3e}",
                    start.integral(),
                    f0.min(),
                    layout.field_min(&start)
                );
                if !(f0.min() > 0.0) {
                    continue;
                }
                match solve_inner(&prob, &cfg, &PenaltyConfig::fixed(1e-3), h, start, "dbg", 0.0) {
                    Ok(o) => println!(
                        "c={c} h00={h:+.4e} ok sweeps={} res={:e} load={:.6} minu={:+.3e} filmmin={:+.3e}",
                        o.sweeps,
                        o.residual,
                        o.state.integral(),
                        layout.field_min(&o.state),
                        o.film.as_ref().unwrap().min()
                    ),
                    Err(e) => println!("c={c} h00={h:+.4e} ERR {e}"),
                }
            }
        }
    }

    #[test]
    fn hertzian_guess_scales_to_the_target() {
        let mesh = Arc::new(
            Mesh::build(&DomainSpec::interval(-4.0, 2.0, 192), &DegreeSpec::Uniform(2)).unwrap(),
        );
        let g = hertzian_guess(&mesh, ContactKind::Line, std::f64::consts::FRAC_PI_2);
        let integral = g.integral();
        assert!(
            (integral - std::f64::consts::FRAC_PI_2).abs() < 2e-3,
            "integral {integral}"
        );
    }
}
