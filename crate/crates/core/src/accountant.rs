//! Renyi differential privacy accounting for Gaussian mechanisms.
//!
//! A Gaussian mechanism with l2 sensitivity `delta_sens` and noise scale `tau`
//! is `(alpha, c * alpha)`-RDP for every order `alpha > 1`, with rate
//! `c = delta_sens^2 / (2 tau^2)`. Such curves compose by adding rates, and a
//! curve converts to `(c alpha + ln(1/delta) / (alpha - 1), delta)`-DP for any
//! `alpha`; the minimizing order is `1 + sqrt(ln(1/delta) / c)`.

use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear RDP curve `alpha -> rate * alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RdpCurve {
    rate: f64,
}

impl RdpCurve {
    pub fn zero() -> Self {
        Self { rate: 0.0 }
    }

    pub fn from_rate(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParam(format!("RDP rate must be finite and >= 0, got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// RDP epsilon at order `alpha`.
    pub fn eval(&self, alpha: f64) -> f64 {
        self.rate * alpha
    }
}

impl Add for RdpCurve {
    type Output = RdpCurve;

    fn add(self, rhs: Self) -> Self {
        Self {
            rate: self.rate + rhs.rate,
        }
    }
}

impl Sum for RdpCurve {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), Add::add)
    }
}

/// An `(epsilon, delta)`-DP statement obtained from an RDP curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    /// Optimizing order; infinite when the curve is identically zero.
    pub alpha_opt: f64,
    /// Number of composed training iterations (0 when not known).
    pub t: usize,
    /// True when the curve had zero rate, so nothing was spent.
    pub degenerate: bool,
}

impl PrivacySpend {
    pub fn zero(delta: f64, t: usize) -> Self {
        Self {
            epsilon: 0.0,
            delta,
            alpha_opt: f64::INFINITY,
            t,
            degenerate: true,
        }
    }
}

/// RDP curve of a Gaussian mechanism with sensitivity `delta_sens` and noise scale `tau`.
pub fn rdp_gaussian(delta_sens: f64, tau: f64) -> Result<RdpCurve> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParam(format!(
            "Gaussian noise scale must be finite and > 0, got {tau}"
        )));
    }
    if !(delta_sens >= 0.0) || !delta_sens.is_finite() {
        return Err(Error::InvalidParam(format!(
            "sensitivity must be finite and >= 0, got {delta_sens}"
        )));
    }
    RdpCurve::from_rate(delta_sens * delta_sens / (2.0 * tau * tau))
}

pub fn compose(curves: &[RdpCurve]) -> RdpCurve {
    curves.iter().copied().sum()
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// DP epsilon implied by `curve` at order `alpha` for failure probability `delta`.
pub fn epsilon_at(curve: &RdpCurve, alpha: f64, delta: f64) -> f64 {
    curve.eval(alpha) + (1.0 / delta).ln() / (alpha - 1.0)
}

/// Converts an RDP curve to `(epsilon, delta)`-DP at the optimal order.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<PrivacySpend> {
    check_delta(delta)?;
    let c = curve.rate();
    if c == 0.0 {
        return Ok(PrivacySpend::zero(delta, 0));
    }
    let alpha_opt = 1.0 + ((1.0 / delta).ln() / c).sqrt();
    Ok(PrivacySpend {
        epsilon: epsilon_at(curve, alpha_opt, delta),
        delta,
        alpha_opt,
        t: 0,
        degenerate: false,
    })
}

/// Overall spend of `t` iterations, each releasing one Gaussian-perturbed
/// `A` statistic and one Gaussian-perturbed `B` statistic.
pub fn overall_epsilon(
    t: usize,
    delta_a: f64,
    tau_a: f64,
    delta_b: f64,
    tau_b: f64,
    delta: f64,
) -> Result<PrivacySpend> {
    let per_iter = [rdp_gaussian(delta_a, tau_a)?, rdp_gaussian(delta_b, tau_b)?];
    let curves: Vec<RdpCurve> = per_iter.iter().copied().cycle().take(2 * t).collect();
    let mut spend = to_dp(&compose(&curves), delta)?;
    spend.t = t;
    Ok(spend)
}

/// Spend of an arbitrary per-iteration schedule of `(delta_a, tau_a, delta_b, tau_b)`.
pub fn schedule_epsilon(
    schedule: &[(f64, f64, f64, f64)],
    delta: f64,
) -> Result<PrivacySpend> {
    let mut curve = RdpCurve::zero();
    for &(da, ta, db, tb) in schedule {
        curve = curve + rdp_gaussian(da, ta)? + rdp_gaussian(db, tb)?;
    }
    let mut spend = to_dp(&curve, delta)?;
    spend.t = schedule.len();
    Ok(spend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::gaussian_sigma;
    use proptest::prelude::*;

    #[test]
    fn gaussian_curve_examples() {
        let c = rdp_gaussian(1.0, 1.0).unwrap();
        assert_eq!(c.eval(2.0), 1.0);
        assert!((c.eval(1.0 + 1e-12) - 0.5).abs() < 1e-11);
        let z = rdp_gaussian(0.0, 0.3).unwrap();
        assert_eq!(z.eval(7.0), 0.0);
        assert!(rdp_gaussian(1.0, 0.0).is_err());
    }

    #[test]
    fn composition_examples() {
        assert_eq!(compose(&[]), RdpCurve::zero());
        let half = RdpCurve::from_rate(0.5).unwrap();
        assert_eq!(compose(&[half, half]).rate(), 1.0);
        let sigma = 1.7;
        let k = 12;
        let curves = vec![rdp_gaussian(1.0, sigma).unwrap(); k];
        let composed = compose(&curves).rate();
        assert!((composed - k as f64 / (2.0 * sigma * sigma)).abs() < 1e-12);
    }

    #[test]
    fn alpha_two_case() {
        let delta: f64 = 1e-3;
        let c = (1.0 / delta).ln();
        let spend = to_dp(&RdpCurve::from_rate(c).unwrap(), delta).unwrap();
        assert!((spend.alpha_opt - 2.0).abs() < 1e-12);
        assert!((spend.epsilon - 3.0 * c).abs() < 1e-12);
    }

    #[test]
    fn worked_example_and_grid_oracle() {
        let delta = 1e-5;
        let tau_a = gaussian_sigma(0.02, 0.5, delta).unwrap();
        let tau_b = gaussian_sigma(0.04, 0.5, delta).unwrap();
        assert!((tau_a - 0.193793).abs() < 1e-6);
        assert!((tau_b - 0.387586).abs() < 5e-6);
        assert_eq!(tau_b, 2.0 * tau_a);
        let spend = overall_epsilon(100, 0.02, tau_a, 0.04, tau_b, delta).unwrap();
        assert!((spend.alpha_opt - 4.2878).abs() < 1e-3, "{}", spend.alpha_opt);
        assert!((spend.epsilon - 8.069).abs() < 1e-3, "{}", spend.epsilon);
        assert_eq!(spend.t, 100);

        // Grid over (1, 200] with step 1e-4.
        let curve = RdpCurve::from_rate(100.0 * (0.02f64.powi(2) / tau_a.powi(2) + 0.04f64.powi(2) / tau_b.powi(2)) / 2.0)
            .unwrap();
        let mut best = f64::INFINITY;
        for i in 1..=1_990_000 {
            let alpha = 1.0 + i as f64 * 1e-4;
            let eps = curve.rate() * alpha + (1.0 / delta).ln() / (alpha - 1.0);
            best = best.min(eps);
        }
        assert!((best - spend.epsilon).abs() < 1e-9);
        assert!(spend.epsilon < 100.0 * 2.0 * 0.5);
    }

    #[test]
    fn zero_sensitivity_is_degenerate() {
        let s = overall_epsilon(1, 0.0, 1.0, 0.0, 1.0, 1e-5).unwrap();
        assert_eq!(s.epsilon, 0.0);
        assert!(s.degenerate);
        assert!(s.alpha_opt.is_infinite());
        assert!(to_dp(&RdpCurve::zero(), 1.0).is_err());
        assert!(to_dp(&RdpCurve::zero(), 0.0).is_err());
    }

    #[test]
    fn rdp_conversion_stays_within_envelope_of_calibration() {
        for &delta in &[1e-3, 1e-5, 1e-8] {
            for i in 1..100 {
                let eps = 0.1 + 0.9 * i as f64 / 100.0;
                let tau = gaussian_sigma(1.0, eps, delta).unwrap();
                let spend = to_dp(&rdp_gaussian(1.0, tau).unwrap(), delta).unwrap();
                assert!(spend.epsilon <= 1.5 * eps, "eps={eps} delta={delta}");
            }
        }
    }

    proptest! {
        #[test]
        fn composition_is_associative_and_commutative(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
            let (a, b, c) = (RdpCurve::from_rate(a).unwrap(), RdpCurve::from_rate(b).unwrap(), RdpCurve::from_rate(c).unwrap());
            prop_assert!(((a + b) + c).rate() - (a + (b + c)).rate() <= 1e-12);
            prop_assert!((compose(&[a, b, c]).rate() - compose(&[c, a, b]).rate()).abs() <= 1e-12);
        }

        #[test]
        fn closed_form_is_global_minimum(rate in 1e-4f64..50.0, log_delta in -12.0f64..-1.0) {
            let delta = 10f64.powf(log_delta);
            let curve = RdpCurve::from_rate(rate).unwrap();
            let spend = to_dp(&curve, delta).unwrap();
            for i in 1..2000 {
                let alpha = 1.0 + 10f64.powf(-4.0 + 8.0 * i as f64 / 2000.0);
                prop_assert!(spend.epsilon <= epsilon_at(&curve, alpha, delta) + 1e-12);
            }
        }

        #[test]
        fn monotone_in_iterations_and_noise(t in 1usize..200, tau_a in 0.05f64..2.0, tau_b in 0.05f64..2.0, bump in 1.0f64..3.0) {
            let base = overall_epsilon(t, 0.02, tau_a, 0.04, tau_b, 1e-5).unwrap().epsilon;
            prop_assert!(overall_epsilon(t + 1, 0.02, tau_a, 0.04, tau_b, 1e-5).unwrap().epsilon >= base);
            prop_assert!(overall_epsilon(t, 0.02, tau_a * bump, 0.04, tau_b, 1e-5).unwrap().epsilon <= base + 1e-12);
            prop_assert!(overall_epsilon(t, 0.02, tau_a, 0.04, tau_b * bump, 1e-5).unwrap().epsilon <= base + 1e-12);
        }
    }
}
