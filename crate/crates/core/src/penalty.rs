//! Exterior penalty regularization of the pressure constraint `u >= 0`.
//!
//! The constrained problem is replaced by adding `(1/eps_p) * xi(u)` to the
//! operator, with `xi(u) = min(u, 0) = (u - |u|) / 2`. As `eps_p -> 0` the
//! penalized solutions approach the constrained one from below; the residual
//! negative part scales like `eps_p`.

use crate::error::{Error, Result};

/// `xi(u) = min(u, 0)`, written as `(u - |u|)/2`.
#[inline]
pub fn xi(u: f64) -> f64 {
    0.5 * (u - u.abs())
}

/// Derivative of `xi` with the subgradient value 1/2 at the kink, so the
/// semi-implicit penalty matrix depends continuously on the state.
#[inline]
pub fn xi_derivative(u: f64) -> f64 {
    if u > 0.0 {
        0.0
    } else if u < 0.0 {
        1.0
    } else {
        0.5
    }
}

/// How the penalty term enters the frozen-coefficient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Linearize about the frozen state: `(1/eps) xi'(phi) u` goes in the
    /// matrix, `(1/eps)(xi(phi) - xi'(phi) phi)` moves to the right side.
    /// Contracts much faster and is the default.
    SemiImplicit,
    /// Evaluate `(1/eps) xi(phi)` wholly on the right side, exactly as the
    /// fixed-point map is written.
    Explicit,
}

/// Penalty configuration, including the optional continuation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub enabled: bool,
    /// Final (or only) penalty parameter.
    pub eps_p: f64,
    pub mode: PenaltyMode,
    /// Strictly decreasing continuation stages ending at `eps_p`. Empty
    /// means a single stage at `eps_p`.
    pub schedule: Vec<f64>,
}

impl PenaltyConfig {
    pub fn disabled() -> Self {
        PenaltyConfig {
            enabled: false,
            eps_p: f64::INFINITY,
            mode: PenaltyMode::SemiImplicit,
            schedule: Vec::new(),
        }
    }

    pub fn fixed(eps_p: f64) -> Self {
        PenaltyConfig {
            enabled: true,
            eps_p,
            mode: PenaltyMode::SemiImplicit,
            schedule: Vec::new(),
        }
    }

    /// The sequence of penalty parameters to run, last one `eps_p`.
    pub fn stages(&self) -> Vec<f64> {
        if !self.enabled {
            return Vec::new();
        }
        if self.schedule.is_empty() {
            vec![self.eps_p]
        } else {
            self.schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.eps_p.is_finite() && self.eps_p > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "penalty parameter must be positive and finite, got {}",
                self.eps_p
            )));
        }
        if !self.schedule.is_empty() {
            for w in self.schedule.windows(2) {
                if !(w[1] < w[0]) {
                    return Err(Error::InvalidConfig(format!(
                        "penalty schedule must decrease strictly: {} then {}",
                        w[0], w[1]
                    )));
                }
            }
            for &s in &self.schedule {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "penalty schedule entries must be positive, got {s}"
                    )));
                }
            }
            let last = *self.schedule.last().unwrap();
            if last != self.eps_p {
                return Err(Error::InvalidConfig(format!(
                    "penalty schedule must end at eps_p = {}, ends at {last}",
                    self.eps_p
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xi_pointwise_values() {
        assert_eq!(xi(2.5), 0.0);
        assert_eq!(xi(-2.5), -2.5);
        assert_eq!(xi(0.0), 0.0);
        assert_eq!(xi_derivative(1e-300), 0.0);
        assert_eq!(xi_derivative(-1e-300), 1.0);
        assert_eq!(xi_derivative(0.0), 0.5);
    }

    proptest! {
        #[test]
        fn xi_is_monotone_and_bounded(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // monotone non-decreasing
            prop_assert!(xi(lo) <= xi(hi));
            // xi(u) <= 0 and |xi(u)| <= |u|
            prop_assert!(xi(a) <= 0.0);
            prop_assert!(xi(a).abs() <= a.abs());
            // Lipschitz with constant 1
            prop_assert!((xi(a) - xi(b)).abs() <= (a - b).abs() * (1.0 + 1e-15));
        }

        #[test]
        fn xi_matches_min(u in -1e12f64..1e12) {
            prop_assert_eq!(xi(u), u.min(0.0));
        }
    }

    #[test]
    fn schedule_validation() {
        let ok = PenaltyConfig {
            enabled: true,
            eps_p: 1e-6,
            mode: PenaltyMode::SemiImplicit,
            schedule: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.stages().len(), 5);

        let not_decreasing = PenaltyConfig {
            schedule: vec![1e-3, 1e-3],
            ..ok.clone()
        };
        assert!(not_decreasing.validate().is_err());

        let wrong_tail = PenaltyConfig {
            schedule: vec![1e-2, 1e-5],
            ..ok.clone()
        };
        assert!(wrong_tail.validate().is_err());

        let bad_eps = PenaltyConfig {
            eps_p: 0.0,
            schedule: vec![],
            ..ok
        };
        assert!(bad_eps.validate().is_err());
    }

    #[test]
    fn disabled_config_has_no_stages() {
        let c = PenaltyConfig::disabled();
        assert!(c.validate().is_ok());
        assert!(c.stages().is_empty());
    }
}
