//! Robust losses, their IRLS weights and the Geman-McClure annealing rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual floor used when no scene scale is known.
pub const DEFAULT_RESIDUAL_FLOOR: f64 = 1e-12;

/// Residual floor as a fraction of the scene diameter.
pub const RELATIVE_RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    /// `ρ(x) = √|x|`
    LHalf,
    /// `ρ(x) = |x|`
    L1,
    /// `ρ(x) = μx²/(μ + x²)` with scale `mu` in squared length units.
    GemanMcClure { mu: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::GemanMcClure { mu } if !(mu > 0.0 && mu.is_finite()) => Err(
                Error::InvalidInput(format!("Geman-McClure scale must be positive, got {mu}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short name used by the CLI and reports.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::LHalf => "l12",
            LossKind::L1 => "l1",
            LossKind::GemanMcClure { .. } => "gm",
        }
    }

    pub fn with_mu(self, mu: f64) -> LossKind {
        match self {
            LossKind::GemanMcClure { .. } => LossKind::GemanMcClure { mu },
            other => other,
        }
    }
}

/// Residual floor for a scene of the given diameter.
pub fn residual_floor(diameter: Option<f64>) -> f64 {
    match diameter {
        Some(d) if d > 0.0 && d.is_finite() => RELATIVE_RESIDUAL_FLOOR * d,
        _ => DEFAULT_RESIDUAL_FLOOR,
    }
}

pub fn loss_value(kind: LossKind, e: f64) -> f64 {
    let e = e.abs();
    match kind {
        LossKind::LHalf => e.sqrt(),
        LossKind::L1 => e,
        LossKind::GemanMcClure { mu } => mu * e * e / (mu + e * e),
    }
}

/// IRLS weight `ρ′(e)/e`, evaluated at `max(e, floor)`.
pub fn weight(kind: LossKind, e: f64, floor: f64) -> f64 {
    let e = e.max(floor);
    match kind {
        LossKind::LHalf => 0.5 / (e * e.sqrt()),
        LossKind::L1 => 1.0 / e,
        LossKind::GemanMcClure { mu } => {
            let d = mu + e * e;
            2.0 * mu * mu / (d * d)
        }
    }
}

/// Stepwise reduction of the Geman-McClure scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub mu0: f64,
    pub divisor: f64,
    pub period: usize,
    pub mu_floor: f64,
}

impl AnnealSchedule {
    /// `mu0 = D²`, halved every 4 outer iterations down to `(1e-4·D)²`.
    pub fn for_diameter(diameter: f64) -> Self {
        AnnealSchedule {
            mu0: diameter * diameter,
            divisor: 2.0,
            period: 4,
            mu_floor: (1e-4 * diameter).powi(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) || !(self.divisor > 1.0) || self.period == 0 || !(self.mu_floor > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "invalid anneal schedule {self:?}: need mu0 > 0, divisor > 1, period ≥ 1, mu_floor > 0"
            )));
        }
        Ok(())
    }
}

/// Scale to use at outer iteration `outer_iter` given the current `mu`.
pub fn anneal(schedule: &AnnealSchedule, mu: f64, outer_iter: usize) -> f64 {
    let next = if outer_iter > 0 && outer_iter.is_multiple_of(schedule.period) {
        mu / schedule.divisor
    } else {
        mu
    };
    next.max(schedule.mu_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const GM1: LossKind = LossKind::GemanMcClure { mu: 1.0 };

    #[test]
    fn loss_values() {
        assert_eq!(loss_value(LossKind::L1, 4.0), 4.0);
        assert_eq!(loss_value(LossKind::LHalf, 4.0), 2.0);
        assert_eq!(loss_value(GM1, 1.0), 0.5);
        for kind in [LossKind::L1, LossKind::LHalf, GM1] {
            assert_eq!(loss_value(kind, 0.0), 0.0);
        }
    }

    #[test]
    fn weights() {
        assert_relative_eq!(weight(GM1, 1.0, 1e-12), 0.5);
        assert_relative_eq!(weight(LossKind::L1, 4.0, 1e-12), 0.25);
        assert_relative_eq!(weight(LossKind::LHalf, 4.0, 1e-12), 0.0625);
        assert_eq!(
            weight(LossKind::LHalf, 0.0, 1e-9),
            weight(LossKind::LHalf, 1e-9, 1e-9)
        );
    }

    #[test]
    fn weight_matches_finite_difference() {
        let h = 1e-6;
        for kind in [LossKind::L1, LossKind::LHalf, GM1, LossKind::GemanMcClure { mu: 0.3 }] {
            let mut e = 0.01;
            while e <= 10.0 {
                let we = weight(kind, e, 1e-12) * e;
                let fd = (loss_value(kind, e + h) - loss_value(kind, e - h)) / (2.0 * h);
                assert!((we - fd).abs() <= 1e-5 * we.max(1.0), "{kind:?} e={e}");
                e *= 1.07;
            }
        }
    }

    #[test]
    fn weights_positive_and_monotone() {
        for kind in [LossKind::L1, LossKind::LHalf, GM1] {
            let mut prev = f64::INFINITY;
            for k in 1..1000 {
                let e = k as f64 * 0.01;
                let w = weight(kind, e, 1e-12);
                assert!(w > 0.0 && w.is_finite());
                match kind {
                    LossKind::GemanMcClure { .. } => assert!(w <= prev),
                    _ => assert!(w < prev),
                }
                prev = w;
            }
        }
    }

    #[test]
    fn anneal_rule() {
        let s = AnnealSchedule {
            mu0: 8.0,
            divisor: 2.0,
            period: 4,
            mu_floor: 0.5,
        };
        assert_eq!(anneal(&s, 8.0, 4), 4.0);
        assert_eq!(anneal(&s, 8.0, 3), 8.0);
        assert_eq!(anneal(&s, 8.0, 0), 8.0);
        assert_eq!(anneal(&s, 0.5, 8), 0.5);
        assert_eq!(anneal(&s, 0.6, 8), 0.5);
    }

    #[test]
    fn floor_scales_with_diameter() {
        assert_eq!(residual_floor(None), DEFAULT_RESIDUAL_FLOOR);
        assert_eq!(residual_floor(Some(0.0)), DEFAULT_RESIDUAL_FLOOR);
        assert_relative_eq!(residual_floor(Some(3.0)), 3e-12);
    }

    #[test]
    fn gm_scale_validation() {
        assert!(LossKind::GemanMcClure { mu: 0.0 }.validate().is_err());
        assert!(LossKind::GemanMcClure { mu: 2.0 }.validate().is_ok());
    }
}
