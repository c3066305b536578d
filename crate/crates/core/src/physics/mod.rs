//! Lubricant constitutive laws, the Reynolds coefficient, the nonlocal film
//! thickness, and the force-balance functional.

pub mod kernel;

pub use kernel::{DeformationKernel, FilmField};

use crate::dgspace::DgField;
use crate::error::{Error, Result};
use crate::params::{ContactKind, DerivedParams, PhysicalInputs};

/// Density-law constants (pressure offset in Pa and asymptotic ratio).
pub const DENSITY_OFFSET: f64 = 0.59e9;
pub const DENSITY_SLOPE: f64 = 1.34;

/// Optional clamp keeping the Reynolds coefficient inside a fixed positive
/// band while iterates are still far from the solution. Converged solutions
/// are expected to leave the clamp inactive; the solver reports a flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampConfig {
    pub enabled: bool,
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampConfig {
    fn default() -> Self {
        ClampConfig {
            enabled: true,
            lo: 1e-12,
            hi: 1e12,
        }
    }
}

/// Pressure-dependent lubricant laws and the coefficient `eps* = rho h^3 / (eta lambda)`.
///
/// Pressures are dimensionless (`u`); the dimensional pressure is `u * p_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lubricant {
    pub alpha: f64,
    pub p0: f64,
    pub z: f64,
    pub p_h: f64,
    pub lambda: f64,
    pub clamp: ClampConfig,
    /// Evaluate the laws at `max(u, 0)`. The exponential viscosity law has a
    /// fractional power that is undefined for meaningfully negative pressure
    /// and the density law has a pole there; penalized iterates may dip a few
    /// `eps_p` below zero, so the laws see only the physical part by default.
    pub nonneg_state: bool,
}

/// Reynolds coefficient value with a flag recording whether the clamp fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsStar {
    pub value: f64,
    pub clamped: bool,
}

/// Coefficient value plus partial derivatives for the linearized form.
/// Derivatives are zero wherever the clamp is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsStarDeriv {
    pub value: f64,
    pub d_du: f64,
    pub d_dh: f64,
    pub clamped: bool,
}

impl Lubricant {
    pub fn from_params(inputs: &PhysicalInputs, derived: &DerivedParams) -> Self {
        Lubricant {
            alpha: inputs.alpha,
            p0: inputs.p0,
            z: derived.z,
            p_h: derived.p_h,
            lambda: derived.lambda,
            clamp: ClampConfig::default(),
            nonneg_state: true,
        }
    }

    /// A lubricant with `eta = rho = 1` for every pressure and `lambda = 1`,
    /// so `eps* = h^3` exactly. Used by manufactured cases and tests.
    pub fn constant_unit() -> Self {
        Lubricant {
            alpha: 0.0,
            p0: 1.0,
            z: 1.0,
            p_h: 0.0,
            lambda: 1.0,
            clamp: ClampConfig {
                enabled: false,
                ..ClampConfig::default()
            },
            nonneg_state: false,
        }
    }

    fn state(&self, u: f64) -> f64 {
        if self.nonneg_state {
            u.max(0.0)
        } else {
            u
        }
    }

    fn state_slope(&self, u: f64) -> f64 {
        if self.nonneg_state && u <= 0.0 {
            0.0
        } else {
            1.0
        }
    }

    /// Exponential pressure-viscosity law `eta(u) = exp{(alpha p0 / z)(-1 + (1 + u p_h/p0)^z)}`.
    pub fn viscosity(&self, u: f64) -> Result<f64> {
        Ok(self.viscosity_with_derivative(u)?.0)
    }

    /// Viscosity and its derivative with respect to `u`.
    pub fn viscosity_with_derivative(&self, u: f64) -> Result<(f64, f64)> {
        let ue = self.state(u);
        let base = 1.0 + ue * self.p_h / self.p0;
        if base <= 0.0 {
            return Err(Error::Evaluation {
                law: "viscosity",
                u,
                detail: format!("fractional power base 1 + u p_h/p0 = {base} is not positive"),
            });
        }
        let val = ((self.alpha * self.p0 / self.z) * (-1.0 + base.powf(self.z))).exp();
        if !val.is_finite() {
            return Err(Error::Evaluation {
                law: "viscosity",
                u,
                detail: format!("overflowed to {val}"),
            });
        }
        let dv = val * self.alpha * self.p_h * base.powf(self.z - 1.0) * self.state_slope(u);
        Ok((val, dv))
    }

    /// Rational pressure-density law `rho(u) = (c + 1.34 u p_h) / (c + u p_h)`.
    pub fn density(&self, u: f64) -> Result<f64> {
        Ok(self.density_with_derivative(u)?.0)
    }

    /// Density and its derivative with respect to `u`.
    pub fn density_with_derivative(&self, u: f64) -> Result<(f64, f64)> {
        let ue = self.state(u);
        let den = DENSITY_OFFSET + ue * self.p_h;
        if den == 0.0 {
            return Err(Error::Evaluation {
                law: "density",
                u,
                detail: "denominator 0.59e9 + u p_h vanished".to_string(),
            });
        }
        let val = (DENSITY_OFFSET + DENSITY_SLOPE * ue * self.p_h) / den;
        let dv = (DENSITY_SLOPE - 1.0) * DENSITY_OFFSET * self.p_h / (den * den)
            * self.state_slope(u);
        Ok((val, dv))
    }

    /// Reynolds coefficient `eps* = rho(u) h^3 / (eta(u) lambda)`, clamped to
    /// the configured band when enabled.
    pub fn epsilon_star(&self, u: f64, h: f64) -> Result<EpsStar> {
        let d = self.epsilon_star_with_derivatives(u, h)?;
        Ok(EpsStar {
            value: d.value,
            clamped: d.clamped,
        })
    }

    /// Coefficient with partial derivatives `d/du` and `d/dh` for Newton.
    pub fn epsilon_star_with_derivatives(&self, u: f64, h: f64) -> Result<EpsStarDeriv> {
        if h <= 0.0 {
            return Err(Error::FilmCollapse {
                min_h: h,
                x: f64::NAN,
                y: f64::NAN,
            });
        }
        let (eta, deta) = self.viscosity_with_derivative(u)?;
        let (rho, drho) = self.density_with_derivative(u)?;
        let h3 = h * h * h;
        let raw = rho * h3 / (eta * self.lambda);
        if !raw.is_finite() {
            return Err(Error::Evaluation {
                law: "epsilon_star",
                u,
                detail: format!("rho h^3 / (eta lambda) produced {raw} at h = {h}"),
            });
        }
        if self.clamp.enabled && raw < self.clamp.lo {
            return Ok(EpsStarDeriv {
                value: self.clamp.lo,
                d_du: 0.0,
                d_dh: 0.0,
                clamped: true,
            });
        }
        if self.clamp.enabled && raw > self.clamp.hi {
            return Ok(EpsStarDeriv {
                value: self.clamp.hi,
                d_du: 0.0,
                d_dh: 0.0,
                clamped: true,
            });
        }
        let d_du = (drho - rho * deta / eta) * h3 / (eta * self.lambda);
        let d_dh = 3.0 * rho * h * h / (eta * self.lambda);
        Ok(EpsStarDeriv {
            value: raw,
            d_du,
            d_dh,
            clamped: false,
        })
    }
}

/// Load-balance defect `integral(u) - target`.
pub fn force_balance_residual(pressure: &DgField, target: f64) -> f64 {
    pressure.integral() - target
}

/// Default load target for a contact kind.
pub fn default_force_target(kind: ContactKind) -> f64 {
    kind.default_force_target()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{DegreeSpec, DomainSpec, Mesh};
    use std::sync::Arc;

    fn paper_lubricant() -> Lubricant {
        let inputs = PhysicalInputs::paper_defaults();
        let derived = crate::params::derive(&inputs, ContactKind::Line).unwrap();
        Lubricant::from_params(&inputs, &derived)
    }

    #[test]
    fn laws_are_exactly_one_at_zero_pressure() {
        let lub = paper_lubricant();
        assert_eq!(lub.viscosity(0.0).unwrap(), 1.0);
        assert_eq!(lub.density(0.0).unwrap(), 1.0);
    }

    #[test]
    fn law_values_match_high_precision_oracle() {
        let lub = paper_lubricant();
        // references computed with 40-digit arithmetic on the same formulas
        let eta_half = 1.0000101081810575035;
        let eta_one = 1.0000141303599423238;
        let rho_half = 1.3399917098735127837;
        let rho_one = 1.3399958548862218073;
        assert!((lub.viscosity(0.5).unwrap() - eta_half).abs() < 1e-14);
        assert!((lub.viscosity(1.0).unwrap() - eta_one).abs() < 1e-14);
        assert!((lub.density(0.5).unwrap() - rho_half).abs() < 1e-14);
        assert!((lub.density(1.0).unwrap() - rho_one).abs() < 1e-14);
        let (_, deta) = lub.viscosity_with_derivative(0.5).unwrap();
        let (_, drho) = lub.density_with_derivative(0.5).unwrap();
        assert!((deta - 9.7700491769348292167e-6).abs() < 1e-19);
        assert!((drho - 1.6579848702684506364e-5).abs() < 1e-18);
    }

    #[test]
    fn density_is_bounded_and_monotone_on_nonnegative_pressure() {
        let lub = paper_lubricant();
        let mut prev = 0.0f64;
        for i in 0..=1000 {
            let u = 10.0 * i as f64 / 1000.0;
            let r = lub.density(u).unwrap();
            assert!((1.0..=1.34).contains(&r), "rho({u}) = {r} out of range");
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn viscosity_is_monotone_and_at_least_one_on_nonnegative_pressure() {
        let lub = paper_lubricant();
        let mut prev = 0.0f64;
        for i in 0..=1000 {
            let u = 2.0 * i as f64 / 1000.0;
            let e = lub.viscosity(u).unwrap();
            assert!(e >= 1.0);
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn law_derivatives_match_finite_differences() {
        // both laws are within ~1e-5 of a constant, so the difference quotient
        // carries ~1e-16/(2 du * deriv) of cancellation noise; du = 1e-5 and a
        // 1e-5 relative band keep truncation and cancellation both subdominant
        let lub = paper_lubricant();
        for &u in &[0.1, 0.5, 1.0, 2.0] {
            let du = 1e-5;
            let (_, deta) = lub.viscosity_with_derivative(u).unwrap();
            let fd_eta =
                (lub.viscosity(u + du).unwrap() - lub.viscosity(u - du).unwrap()) / (2.0 * du);
            assert!(
                (deta - fd_eta).abs() <= 1e-5 * deta.abs().max(1e-12),
                "u = {u}: {deta} vs {fd_eta}"
            );
            let (_, drho) = lub.density_with_derivative(u).unwrap();
            let fd_rho =
                (lub.density(u + du).unwrap() - lub.density(u - du).unwrap()) / (2.0 * du);
            assert!((drho - fd_rho).abs() <= 1e-5 * drho.abs().max(1e-12));
        }
    }

    #[test]
    fn negative_pressure_is_truncated_by_default() {
        let lub = paper_lubricant();
        // the raw laws are undefined well below zero; the truncated state maps
        // any negative pressure to the zero-pressure values
        assert_eq!(lub.viscosity(-1e-3).unwrap(), 1.0);
        assert_eq!(lub.density(-1e-3).unwrap(), 1.0);
        let (_, deta) = lub.viscosity_with_derivative(-1e-3).unwrap();
        assert_eq!(deta, 0.0);

        let mut raw = lub.clone();
        raw.nonneg_state = false;
        assert!(raw.viscosity(-1e-3).is_err());
    }

    #[test]
    fn density_special_value_at_matching_scale() {
        // u = 1 with p_h equal to the density offset gives (1 + 1.34)/2
        let lub = Lubricant {
            alpha: 1.59e-8,
            p0: 1.98e-8,
            z: 0.5,
            p_h: DENSITY_OFFSET,
            lambda: 1.0,
            clamp: ClampConfig::default(),
            nonneg_state: true,
        };
        assert!((lub.density(1.0).unwrap() - 1.17).abs() < 1e-15);
    }

    #[test]
    fn epsilon_star_simple_values_and_cubic_scaling() {
        let unit = Lubricant::constant_unit();
        assert_eq!(unit.epsilon_star(0.3, 1.0).unwrap().value, 1.0);
        let e1 = unit.epsilon_star(0.0, 1.5).unwrap().value;
        let e2 = unit.epsilon_star(0.0, 3.0).unwrap().value;
        assert!((e2 / e1 - 8.0).abs() < 1e-14);

        // u = 0, h = 2, lambda = 4 -> 8/4 = 2
        let mut quarter = Lubricant::constant_unit();
        quarter.lambda = 4.0;
        assert_eq!(quarter.epsilon_star(0.0, 2.0).unwrap().value, 2.0);
    }

    #[test]
    fn epsilon_star_clamps_and_reports() {
        let lub = paper_lubricant();
        // paper-scale lambda is ~1e-20, so a moderate film easily exceeds the cap
        let e = lub.epsilon_star(0.0, 1.0).unwrap();
        assert!(e.clamped);
        assert_eq!(e.value, lub.clamp.hi);
        let d = lub.epsilon_star_with_derivatives(0.0, 1.0).unwrap();
        assert_eq!(d.d_du, 0.0);
        assert_eq!(d.d_dh, 0.0);

        let mut unit = Lubricant::constant_unit();
        unit.clamp = ClampConfig::default();
        let tiny = unit.epsilon_star(0.0, 1e-5).unwrap();
        assert!(tiny.clamped);
        assert_eq!(tiny.value, unit.clamp.lo);

        let mid = unit.epsilon_star(0.0, 1.0).unwrap();
        assert!(!mid.clamped);
    }

    #[test]
    fn epsilon_star_rejects_collapsed_film() {
        let unit = Lubricant::constant_unit();
        assert!(matches!(
            unit.epsilon_star(0.0, 0.0),
            Err(Error::FilmCollapse { .. })
        ));
        assert!(matches!(
            unit.epsilon_star(0.0, -1.0),
            Err(Error::FilmCollapse { .. })
        ));
    }

    #[test]
    fn epsilon_star_derivatives_match_finite_differences() {
        let mut lub = paper_lubricant();
        // a benign lambda keeps the coefficient inside the clamp band
        lub.lambda = 1.0;
        for &(u, h) in &[(0.2, 0.8), (0.7, 1.3), (1.5, 0.4)] {
            let d = lub.epsilon_star_with_derivatives(u, h).unwrap();
            assert!(!d.clamped);
            // the u-derivative is ~1e-5 of the value, so the difference
            // quotient is noisy at the 1e-4 relative level
            let du = 1e-5;
            let fu = (lub.epsilon_star(u + du, h).unwrap().value
                - lub.epsilon_star(u - du, h).unwrap().value)
                / (2.0 * du);
            let fh = (lub.epsilon_star(u, h + du).unwrap().value
                - lub.epsilon_star(u, h - du).unwrap().value)
                / (2.0 * du);
            assert!(
                (d.d_du - fu).abs() <= 1e-4 * fu.abs().max(1e-9),
                "d_du {} vs {}",
                d.d_du,
                fu
            );
            assert!((d.d_dh - fh).abs() <= 1e-6 * fh.abs().max(1e-9));
        }
    }

    #[test]
    fn force_balance_residual_values() {
        let mesh = Arc::new(
            Mesh::build(&DomainSpec::interval(0.0, 1.0, 8), &DegreeSpec::Uniform(1)).unwrap(),
        );
        let zero = DgField::zeros(&mesh);
        let target = ContactKind::Line.default_force_target();
        assert_eq!(
            force_balance_residual(&zero, target),
            -std::f64::consts::FRAC_PI_2
        );

        // u = c on a unit-measure domain -> residual c - pi/2
        let c = DgField::interpolate(&mesh, &|_x| 3.0);
        assert!((force_balance_residual(&c, target) - (3.0 - target)).abs() < 1e-12);
    }

    #[test]
    fn semicircle_interpolant_integral_refines_to_half_pi() {
        // interpolant of sqrt(1-x^2) extended by zero, domain containing [-1,1]
        let f = |x: [f64; 2]| {
            let s = 1.0 - x[0] * x[0];
            if s > 0.0 {
                s.sqrt()
            } else {
                0.0
            }
        };
        let mut prev_err = f64::INFINITY;
        for cells in [32, 64, 128] {
            let mesh = Arc::new(
                Mesh::build(&DomainSpec::interval(-2.0, 2.0, cells), &DegreeSpec::Uniform(2))
                    .unwrap(),
            );
            let u = DgField::interpolate_with_rule(&mesh, &f, &|_p| 16);
            let err = force_balance_residual(&u, std::f64::consts::FRAC_PI_2).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-5, "final defect {prev_err}");
    }
}
