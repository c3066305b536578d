//! Physical inputs and the derived dimensionless groups.
//!
//! All downstream code consumes only the derived groups (`DerivedParams`),
//! so the raw SI-ish inputs appear exactly once, here. The derivation
//! formulas are deliberately kept verbatim from the model write-up this
//! solver implements, including the reduced-pressure constant `p0` and the
//! half-width formula for `b`; overrides exist for the places where a
//! different convention is plausible (`z_override`, `log10_z`).

use crate::error::{Error, Result};

/// Which contact geometry a parameter set describes.
///
/// Line contact reduces to a 1D Reynolds equation with load target `pi/2`;
/// point contact is the 2D problem with load target `3*pi/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactKind {
    Line,
    Point,
}

impl ContactKind {
    /// Default dimensionless load target for the force-balance constraint.
    pub fn default_force_target(self) -> f64 {
        match self {
            ContactKind::Line => std::f64::consts::FRAC_PI_2,
            ContactKind::Point => 1.5 * std::f64::consts::PI,
        }
    }
}

/// Raw physical inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalInputs {
    /// Ambient viscosity (Pa s).
    pub eta0: f64,
    /// Reduced radius of curvature in the rolling direction (m).
    pub rx: f64,
    /// Material parameter; elastic modulus is recovered as `g0 / alpha`.
    pub g0: f64,
    /// Dimensionless speed parameter.
    pub u_speed: f64,
    /// Dimensionless load parameter.
    pub w_load: f64,
    /// Pressure-viscosity coefficient (1/Pa).
    pub alpha: f64,
    /// Reduced pressure constant in the viscosity law (Pa).
    pub p0: f64,
    /// Initial central film offset used to seed the force-balance loop.
    pub h00_init: f64,
    /// Explicit viscosity exponent; when set, the `z` formula is skipped.
    pub z_override: Option<f64>,
    /// Evaluate the `z` formula with log10 instead of the natural log.
    pub log10_z: bool,
}

impl PhysicalInputs {
    /// The reference parameter set used throughout the write-up's examples.
    pub fn paper_defaults() -> Self {
        PhysicalInputs {
            eta0: 0.04,
            rx: 0.02,
            g0: 3500.0,
            u_speed: 7.3e-11,
            w_load: 1.3e-4,
            alpha: 1.59e-8,
            p0: 1.98e-8,
            h00_init: 0.0000015042,
            z_override: None,
            log10_z: false,
        }
    }
}

/// Derived dimensionless groups consumed by the physics module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Effective elastic modulus `E = g0 / alpha`.
    pub e_modulus: f64,
    /// Contact half-width.
    pub b: f64,
    /// Maximum Hertzian pressure `p_H = E b / (4 rx)`.
    pub p_h: f64,
    /// Viscosity exponent of the pressure-viscosity law.
    pub z: f64,
    /// Speed group `lambda = 12 E rx^3 U / (b^3 p_H)`.
    pub lambda: f64,
    pub kind: ContactKind,
}

fn check_finite(value: f64, formula: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ParamDomain {
            formula,
            detail: format!("evaluated to {value}"),
        })
    }
}

fn check_positive(value: f64, formula: &'static str) -> Result<f64> {
    let value = check_finite(value, formula)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::ParamDomain {
            formula,
            detail: format!("expected a positive value, got {value:e}"),
        })
    }
}

/// Derive the dimensionless groups from raw inputs.
///
/// Every intermediate is checked finite (and positive where the model
/// requires it); violations name the formula that failed so configuration
/// mistakes surface with context.
pub fn derive(inputs: &PhysicalInputs, kind: ContactKind) -> Result<DerivedParams> {
    for (v, name) in [
        (inputs.eta0, "eta0 > 0"),
        (inputs.rx, "rx > 0"),
        (inputs.g0, "g0 > 0"),
        (inputs.u_speed, "u_speed > 0"),
        (inputs.w_load, "w_load > 0"),
        (inputs.alpha, "alpha > 0"),
        (inputs.p0, "p0 > 0"),
    ] {
        check_positive(v, name)?;
    }
    if !inputs.h00_init.is_finite() {
        return Err(Error::ParamDomain {
            formula: "h00_init finite",
            detail: format!("got {}", inputs.h00_init),
        });
    }

    let e_modulus = check_positive(inputs.g0 / inputs.alpha, "E = g0 / alpha")?;
    let b = check_positive(
        4.0 * inputs.rx / (inputs.w_load / (2.0 * std::f64::consts::PI)).sqrt(),
        "b = 4 rx / sqrt(w / (2 pi))",
    )?;
    let p_h = check_positive(e_modulus * b / (4.0 * inputs.rx), "p_H = E b / (4 rx)")?;

    let z = match inputs.z_override {
        Some(z) => check_positive(z, "z_override > 0")?,
        None => {
            let log_eta0 = if inputs.log10_z {
                inputs.eta0.log10()
            } else {
                inputs.eta0.ln()
            };
            check_positive(
                inputs.alpha / (5.1e-9 * (log_eta0 + 9.67)),
                "z = alpha / (5.1e-9 (log eta0 + 9.67))",
            )?
        }
    };

    let lambda = check_positive(
        12.0 * e_modulus * inputs.rx.powi(3) * inputs.u_speed / (b.powi(3) * p_h),
        "lambda = 12 E rx^3 U / (b^3 p_H)",
    )?;

    Ok(DerivedParams {
        e_modulus,
        b,
        p_h,
        z,
        lambda,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults_are_exact() {
        let p = PhysicalInputs::paper_defaults();
        assert_eq!(p.eta0, 0.04);
        assert_eq!(p.rx, 0.02);
        assert_eq!(p.g0, 3500.0);
        assert_eq!(p.u_speed, 7.3e-11);
        assert_eq!(p.w_load, 1.3e-4);
        assert_eq!(p.alpha, 1.59e-8);
        assert_eq!(p.p0, 1.98e-8);
        assert_eq!(p.h00_init, 0.0000015042);
        assert_eq!(p.z_override, None);
        assert!(!p.log10_z);
    }

    /// Independent evaluation of each derivation formula, written out in
    /// full rather than shared with the implementation.
    #[test]
    fn derive_matches_direct_arithmetic() {
        let p = PhysicalInputs::paper_defaults();
        let d = derive(&p, ContactKind::Line).unwrap();

        let e_expect = 3500.0 / 1.59e-8;
        let b_expect = 4.0 * 0.02 / (1.3e-4 / (2.0 * std::f64::consts::PI)).sqrt();
        let ph_expect = e_expect * b_expect / (4.0 * 0.02);
        let z_expect = 1.59e-8 / (5.1e-9 * ((0.04f64).ln() + 9.67));
        let lam_expect =
            12.0 * e_expect * 0.02f64.powi(3) * 7.3e-11 / (b_expect.powi(3) * ph_expect);

        assert_eq!(d.e_modulus, e_expect);
        assert_eq!(d.b, b_expect);
        assert_eq!(d.p_h, ph_expect);
        assert_eq!(d.z, z_expect);
        assert!((d.lambda - lam_expect).abs() <= 1e-15 * lam_expect.abs());

        // Frozen magnitudes: a change in any formula shows up here first.
        assert!((d.e_modulus - 2.20125786163522e11).abs() < 1.0);
        assert!((d.b - 17.58766743749489).abs() < 1e-10);
        assert!((d.z - 0.4832719033438594).abs() < 1e-12);
        assert!((d.lambda - 5.8593723871665076e-21).abs() < 1e-32);
    }

    #[test]
    fn z_log10_switch_changes_only_z() {
        let mut p = PhysicalInputs::paper_defaults();
        p.log10_z = true;
        let d10 = derive(&p, ContactKind::Line).unwrap();
        let z10_expect = 1.59e-8 / (5.1e-9 * ((0.04f64).log10() + 9.67));
        assert_eq!(d10.z, z10_expect);
        let d = derive(&PhysicalInputs::paper_defaults(), ContactKind::Line).unwrap();
        assert_eq!(d10.e_modulus, d.e_modulus);
        assert_eq!(d10.b, d.b);
        assert_eq!(d10.lambda, d.lambda);
        assert_ne!(d10.z, d.z);
    }

    #[test]
    fn z_override_skips_formula() {
        let mut p = PhysicalInputs::paper_defaults();
        p.z_override = Some(0.68);
        let d = derive(&p, ContactKind::Point).unwrap();
        assert_eq!(d.z, 0.68);
        assert_eq!(d.kind, ContactKind::Point);
    }

    #[test]
    fn doubling_g0_doubles_e_exactly() {
        let mut p = PhysicalInputs::paper_defaults();
        let d1 = derive(&p, ContactKind::Line).unwrap();
        p.g0 *= 2.0;
        let d2 = derive(&p, ContactKind::Line).unwrap();
        assert_eq!(d2.e_modulus.to_bits(), (2.0 * d1.e_modulus).to_bits());
    }

    #[test]
    fn derive_is_deterministic() {
        let p = PhysicalInputs::paper_defaults();
        let a = derive(&p, ContactKind::Line).unwrap();
        let b = derive(&p, ContactKind::Line).unwrap();
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
        assert_eq!(a.z.to_bits(), b.z.to_bits());
    }

    #[test]
    fn z_denominator_zero_names_formula() {
        let mut p = PhysicalInputs::paper_defaults();
        // log(eta0) + 9.67 == 0 makes the z denominator vanish.
        p.eta0 = (-9.67f64).exp();
        let err = derive(&p, ContactKind::Line).unwrap_err();
        match err {
            Error::ParamDomain { formula, .. } => assert!(formula.contains("z =")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        for field in 0..7 {
            let mut p = PhysicalInputs::paper_defaults();
            match field {
                0 => p.eta0 = 0.0,
                1 => p.rx = -1.0,
                2 => p.g0 = 0.0,
                3 => p.u_speed = -7.3e-11,
                4 => p.w_load = 0.0,
                5 => p.alpha = 0.0,
                _ => p.p0 = -1.0,
            }
            assert!(derive(&p, ContactKind::Line).is_err(), "field {field}");
        }
    }

    #[test]
    fn force_targets() {
        assert_eq!(
            ContactKind::Line.default_force_target(),
            std::f64::consts::FRAC_PI_2
        );
        assert_eq!(
            ContactKind::Point.default_force_target(),
            1.5 * std::f64::consts::PI
        );
    }
}
