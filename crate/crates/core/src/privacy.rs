//! Differentially-private dictionary learning.
//!
//! The training loop is split between two roles. The [`Curator`] owns the raw
//! data `V` together with `H` and `R`, refines `(H, R)` exactly, and releases
//! only the Gaussian-perturbed statistics `A + N(0, tau_a^2)` and
//! `B + N(0, tau_b^2)`. The [`Analyst`] owns `W` and updates it from those
//! noisy statistics alone. With unit-norm columns of `V`, `H` and `R` the
//! statistics have l2 sensitivity `2/N` (for `A`) and `4/N` (for `B`, or `2/N`
//! when `R` is not modeled).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accountant::{rdp_gaussian, to_dp, PrivacySpend, RdpCurve};
use crate::error::{Error, Result};
use crate::init::{init_outliers, nndsvd};
use crate::matrix::{BOUNDARY_SLACK, Coefficients, DataMatrix, Dictionary, Hyperparams, Outliers};
use crate::metrics::objective_value;
use crate::solver::{
    check_clean, checked_loss, grad_w_raw, refine_coefficients, statistics, update_w,
    Constraints, IterationRecord, Statistics, Trajectory,
};

/// Per-iteration privacy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSchedule {
    Constant(f64),
    PerIteration(Vec<f64>),
}

impl EpsilonSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Self::Constant(e) => *e,
            Self::PerIteration(v) => v[t - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon_t: EpsilonSchedule,
    pub delta: f64,
    pub model_outliers: bool,
    pub seed: u64,
}

impl PrivacyParams {
    pub fn new(epsilon_t: f64, delta: f64, seed: u64) -> Self {
        Self {
            epsilon_t: EpsilonSchedule::Constant(epsilon_t),
            delta,
            model_outliers: true,
            seed,
        }
    }

    pub fn validate(&self, iters: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        let check = |e: f64| {
            if e > 0.0 && e.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("epsilon_t must be > 0, got {e}")))
            }
        };
        match &self.epsilon_t {
            EpsilonSchedule::Constant(e) => check(*e),
            EpsilonSchedule::PerIteration(v) => {
                if v.len() < iters {
                    return Err(Error::InvalidParam(format!(
                        "epsilon schedule has {} entries for {iters} iterations",
                        v.len()
                    )));
                }
                v.iter().try_for_each(|e| check(*e))
            }
        }
    }
}

/// Statistics after Gaussian perturbation. Neither matrix is symmetric, PSD
/// or non-negative in general.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyStatistics {
    pub a_bar: Array2<f64>,
    pub b_bar: Array2<f64>,
    pub tau_a: f64,
    pub tau_b: f64,
}

/// Gaussian noise scales for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub tau_a: f64,
    pub tau_b: f64,
}

/// Sensitivity of `A = H H^T / N` for unit-ball columns of `H`.
pub fn sensitivity_a(n: usize) -> f64 {
    2.0 / n as f64
}

/// Sensitivity of `B = (V - R) H^T / N` for unit-ball columns of `V`, `R`, `H`.
pub fn sensitivity_b(n: usize, model_outliers: bool) -> f64 {
    if model_outliers {
        4.0 / n as f64
    } else {
        2.0 / n as f64
    }
}

/// Gaussian-mechanism noise scale `(sens / epsilon) * sqrt(2 ln(1.25 / delta))`.
pub fn gaussian_sigma(delta_sens: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(delta_sens > 0.0) || !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "gaussian_sigma needs sensitivity > 0, epsilon > 0, delta in (0,1); got ({delta_sens}, {epsilon}, {delta})"
        )));
    }
    if epsilon >= 1.0 {
        log::warn!("epsilon = {epsilon} is outside (0, 1), where the Gaussian mechanism calibration is stated");
    }
    Ok(delta_sens / epsilon * (2.0 * (1.25 / delta).ln()).sqrt())
}

/// Which released matrix a noise stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Released {
    A = 0,
    B = 1,
}

/// Independent, reproducible noise stream for one `(iteration, matrix)` pair.
pub fn noise_rng(seed: u64, iter: usize, which: Released) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2 * iter as u64 + which as u64);
    rng
}

fn add_noise<R: Rng>(m: &Array2<f64>, tau: f64, rng: &mut R) -> Array2<f64> {
    if tau == 0.0 {
        return m.clone();
    }
    let mut out = m.clone();
    // Row-major fill order fixes the mapping from stream position to entry.
    for x in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += tau * z;
    }
    out
}

/// Adds i.i.d. `N(0, tau_a^2)` to every entry of `A` and `N(0, tau_b^2)` to every entry of `B`.
pub fn perturb_statistics<R: Rng>(
    stats: &Statistics,
    tau_a: f64,
    tau_b: f64,
    rng: &mut R,
) -> Result<NoisyStatistics> {
    perturb_with(stats, NoiseScales { tau_a, tau_b }, rng, None)
}

fn perturb_with<R: Rng>(
    stats: &Statistics,
    scales: NoiseScales,
    rng_a: &mut R,
    rng_b: Option<&mut R>,
) -> Result<NoisyStatistics> {
    if !(scales.tau_a >= 0.0 && scales.tau_b >= 0.0) {
        return Err(Error::InvalidParam(format!("noise scales must be >= 0, got {scales:?}")));
    }
    let a_bar = add_noise(&stats.a, scales.tau_a, rng_a);
    let b_bar = match rng_b {
        Some(r) => add_noise(&stats.b, scales.tau_b, r),
        None => add_noise(&stats.b, scales.tau_b, rng_a),
    };
    Ok(NoisyStatistics {
        a_bar,
        b_bar,
        tau_a: scales.tau_a,
        tau_b: scales.tau_b,
    })
}

/// Calibrated noise scales for every iteration of a run.
pub fn noise_schedule(n: usize, iters: usize, pp: &PrivacyParams) -> Result<Vec<NoiseScales>> {
    pp.validate(iters)?;
    let (da, db) = (sensitivity_a(n), sensitivity_b(n, pp.model_outliers));
    (1..=iters)
        .map(|t| {
            let eps = pp.epsilon_t.at(t);
            Ok(NoiseScales {
                tau_a: gaussian_sigma(da, eps, pp.delta)?,
                tau_b: gaussian_sigma(db, eps, pp.delta)?,
            })
        })
        .collect()
}

/// Data-holding role: owns `V`, `H`, `R` and releases only noisy statistics.
#[derive(Debug)]
pub struct Curator {
    v: DataMatrix,
    h: Coefficients,
    r: Outliers,
    hp: Hyperparams,
    constraints: Constraints,
    seed: u64,
}

impl Curator {
    /// Checks the inputs, runs NNDSVD, and returns the curator plus the initial dictionary.
    pub fn new(
        v: DataMatrix,
        hp: &Hyperparams,
        model_outliers: bool,
        seed: u64,
    ) -> Result<(Self, Dictionary)> {
        hp.validate()?;
        check_unit_columns(&v)?;
        let (w0, h0) = nndsvd(&v, hp.k)?;
        let r = init_outliers(v.d(), v.n(), hp.m);
        let curator = Self {
            v,
            h: h0,
            r,
            hp: hp.clone(),
            constraints: Constraints {
                model_outliers,
                bounded_columns: true,
            },
            seed,
        };
        Ok((curator, w0))
    }

    /// Refines `(H_t, R_t)` against `w` and returns the perturbed statistics.
    pub fn step(&mut self, w: &Dictionary, t: usize, scales: NoiseScales) -> Result<NoisyStatistics> {
        refine_coefficients(&self.v, w, &mut self.h, &mut self.r, &self.hp, self.constraints)?;
        let stats = statistics(&self.v, &self.h, &self.r)?;
        let mut rng_a = noise_rng(self.seed, t, Released::A);
        let mut rng_b = noise_rng(self.seed, t, Released::B);
        let noisy = perturb_with(&stats, scales, &mut rng_a, Some(&mut rng_b))?;
        if noisy.a_bar.iter().chain(noisy.b_bar.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("noisy statistics at iteration {t}")));
        }
        Ok(noisy)
    }

    pub fn n(&self) -> usize {
        self.v.n()
    }

    pub(crate) fn loss(&self, w: &Dictionary, t: usize) -> Result<f64> {
        checked_loss(&self.v, w, &self.h, &self.r, self.hp.lambda, t)
    }

    pub(crate) fn objective(&self, clean: &DataMatrix, w: &Dictionary) -> Result<f64> {
        objective_value(clean, w, &self.h)
    }
}

/// Dictionary-holding role. Sees only released noisy statistics.
#[derive(Debug, Clone)]
pub struct Analyst {
    w: Dictionary,
    eta_w: f64,
}

impl Analyst {
    pub fn new(w0: Dictionary, eta_w: f64) -> Self {
        Self { w: w0, eta_w }
    }

    /// `W <- P_C(W - eta_w (W A_bar - B_bar))`.
    pub fn update(&mut self, noisy: &NoisyStatistics) -> Result<&Dictionary> {
        let grad = grad_w_raw(&self.w, &noisy.a_bar, &noisy.b_bar)?;
        self.w = update_w(&self.w, &grad, self.eta_w);
        Ok(&self.w)
    }

    pub fn w(&self) -> &Dictionary {
        &self.w
    }

    pub fn into_w(self) -> Dictionary {
        self.w
    }
}

pub(crate) fn check_unit_columns(v: &DataMatrix) -> Result<()> {
    for (j, col) in v.values().columns().into_iter().enumerate() {
        let norm = crate::matrix::l2(col);
        if norm > 1.0 + BOUNDARY_SLACK {
            return Err(Error::InvalidData(format!(
                "column {} of V has l2 norm {norm} > 1; private training needs columns \
                 normalized with unit-l2-clip (see data::normalize_columns)",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Output of a private run.
#[derive(Debug, Clone)]
pub struct PrivateFit {
    pub w: Dictionary,
    pub trajectory: Trajectory,
    pub spend: PrivacySpend,
    pub noise: Vec<NoiseScales>,
}

/// Private robust NMF with noise calibrated from `pp`.
///
/// Always runs exactly `hp.outer_iters` iterations; the stopping tolerance is
/// ignored because the reported spend assumes a fixed iteration count.
pub fn fit_dp(
    v: &DataMatrix,
    hp: &Hyperparams,
    pp: &PrivacyParams,
    clean: Option<&DataMatrix>,
) -> Result<PrivateFit> {
    let noise = noise_schedule(v.n(), hp.outer_iters, pp)?;
    let (w, mut trajectory) = fit_dp_with_noise(v, hp, pp, &noise, clean)?;

    let (da, db) = (sensitivity_a(v.n()), sensitivity_b(v.n(), pp.model_outliers));
    let mut curve = RdpCurve::zero();
    for (rec, s) in trajectory.records_mut().iter_mut().zip(&noise) {
        curve = curve + rdp_gaussian(da, s.tau_a)? + rdp_gaussian(db, s.tau_b)?;
        rec.eps_overall = Some(to_dp(&curve, pp.delta)?.epsilon);
    }
    let mut spend = to_dp(&curve, pp.delta)?;
    spend.t = hp.outer_iters;
    Ok(PrivateFit {
        w,
        trajectory,
        spend,
        noise,
    })
}

/// Private training loop with caller-supplied noise scales, one entry per iteration.
///
/// With all scales zero this performs exactly the arithmetic of
/// [`crate::solver::fit_with`] under bounded-column constraints.
pub fn fit_dp_with_noise(
    v: &DataMatrix,
    hp: &Hyperparams,
    pp: &PrivacyParams,
    noise: &[NoiseScales],
    clean: Option<&DataMatrix>,
) -> Result<(Dictionary, Trajectory)> {
    if noise.len() < hp.outer_iters {
        return Err(Error::InvalidParam(format!(
            "{} noise scales supplied for {} iterations",
            noise.len(),
            hp.outer_iters
        )));
    }
    check_clean(v, clean)?;
    let (mut curator, w0) = Curator::new(v.clone(), hp, pp.model_outliers, pp.seed)?;
    let mut analyst = Analyst::new(w0, hp.eta_w);
    let mut trajectory = Trajectory::default();

    for t in 1..=hp.outer_iters {
        let released = curator.step(analyst.w(), t, noise[t - 1])?;
        let w = analyst.update(&released)?;
        let loss = curator.loss(w, t)?;
        let objective = clean.map(|c| curator.objective(c, w)).transpose()?;
        trajectory.push(IterationRecord {
            iter: t,
            loss,
            objective,
            eps_overall: None,
        });
    }
    Ok((analyst.into_w(), trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize_columns, synth_lowrank, Normalization};
    use crate::solver::fit_with;
    use ndarray::array;

    fn unit_synth(d: usize, n: usize, k: usize, seed: u64) -> DataMatrix {
        normalize_columns(&synth_lowrank(d, n, k, seed).unwrap().0, Normalization::UnitL2Clip)
    }

    #[test]
    fn sensitivities() {
        assert_eq!(sensitivity_a(100), 0.02);
        assert_eq!(sensitivity_a(2), 1.0);
        assert_eq!(sensitivity_a(1), 2.0);
        assert_eq!(sensitivity_b(100, true), 0.04);
        assert_eq!(sensitivity_b(100, false), 0.02);
        assert_eq!(sensitivity_b(4, true), 1.0);
    }

    #[test]
    fn sigma_calibration() {
        let tau = gaussian_sigma(0.02, 0.5, 1e-5).unwrap();
        assert!((tau - 0.193793).abs() < 1e-6);
        assert_eq!(gaussian_sigma(0.04, 0.5, 1e-5).unwrap(), 2.0 * tau);
        assert_eq!(gaussian_sigma(0.02, 1.0, 1e-5).unwrap(), tau / 2.0);
        assert!(gaussian_sigma(0.0, 0.5, 1e-5).is_err());
        assert!(gaussian_sigma(0.1, -0.5, 1e-5).is_err());
        assert!(gaussian_sigma(0.1, 0.5, 1.0).is_err());
        assert!(gaussian_sigma(0.1, 1.5, 1e-5).is_ok());
    }

    fn stats() -> Statistics {
        Statistics {
            a: array![[1.0, 0.2], [0.2, 0.5]],
            b: array![[0.3, 0.1], [0.0, 0.7], [0.4, 0.4]],
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = noise_rng(1, 1, Released::A);
        let out = perturb_statistics(&stats(), 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(out.a_bar, stats().a);
        assert_eq!(out.b_bar, stats().b);
    }

    #[test]
    fn noise_is_reproducible() {
        let run = |seed| {
            let mut rng = noise_rng(seed, 3, Released::B);
            perturb_statistics(&stats(), 0.1, 0.2, &mut rng).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn streams_are_independent_of_order() {
        let mut a1 = noise_rng(5, 2, Released::A);
        let first: f64 = a1.sample(StandardNormal);
        let mut b = noise_rng(5, 2, Released::B);
        let _: f64 = b.sample(StandardNormal);
        let mut a2 = noise_rng(5, 2, Released::A);
        let again: f64 = a2.sample(StandardNormal);
        assert_eq!(first, again);
        let other: f64 = noise_rng(5, 3, Released::A).sample(StandardNormal);
        assert_ne!(first, other);
    }

    #[test]
    fn refuses_unnormalized_data() {
        let v = DataMatrix::new(array![[3.0, 0.1], [4.0, 0.1]]).unwrap();
        let hp = Hyperparams::private(1);
        let err = fit_dp(&v, &hp, &PrivacyParams::new(0.5, 1e-5, 0), None).unwrap_err();
        assert!(matches!(err, Error::InvalidData(ref m) if m.contains("unit-l2-clip")));
    }

    #[test]
    fn zero_iterations() {
        let v = unit_synth(6, 10, 2, 3);
        let hp = Hyperparams {
            outer_iters: 0,
            ..Hyperparams::private(2)
        };
        let out = fit_dp(&v, &hp, &PrivacyParams::new(0.5, 1e-5, 1), None).unwrap();
        assert_eq!(out.w, nndsvd(&v, 2).unwrap().0);
        assert_eq!(out.spend.epsilon, 0.0);
        assert!(out.trajectory.is_empty());
    }

    #[test]
    fn huge_epsilon_approaches_non_private() {
        let v = unit_synth(10, 30, 2, 4);
        let hp = Hyperparams {
            outer_iters: 30,
            eta_h: 5.0,
            eta_w: 1.0,
            tol: 0.0,
            ..Hyperparams::new(2)
        };
        let private = fit_dp(&v, &hp, &PrivacyParams::new(1e12, 1e-5, 9), None).unwrap();
        let plain = fit_with(
            &v,
            &hp,
            Constraints {
                model_outliers: true,
                bounded_columns: true,
            },
            None,
        )
        .unwrap();
        let diff = crate::matrix::frobenius_sq(&(private.w.values() - plain.w.values())).sqrt();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn tau_b_doubles_with_outliers() {
        let mut pp = PrivacyParams::new(0.5, 1e-5, 0);
        let on = noise_schedule(100, 3, &pp).unwrap();
        pp.model_outliers = false;
        let off = noise_schedule(100, 3, &pp).unwrap();
        for (a, b) in on.iter().zip(&off) {
            assert_eq!(a.tau_b / b.tau_b, 2.0);
            assert_eq!(a.tau_a, b.tau_a);
        }
    }

    #[test]
    fn private_dictionary_stays_feasible_under_heavy_noise() {
        let v = unit_synth(8, 20, 2, 5);
        let hp = Hyperparams {
            outer_iters: 20,
            eta_w: 10.0,
            ..Hyperparams::private(2)
        };
        let out = fit_dp(&v, &hp, &PrivacyParams::new(0.01, 1e-5, 3), None).unwrap();
        assert!(Dictionary::new(out.w.values().clone()).is_ok());
        let eps: Vec<f64> = out.trajectory.records().iter().map(|r| r.eps_overall.unwrap()).collect();
        assert!(eps.windows(2).all(|p| p[1] >= p[0]));
        assert_eq!(*eps.last().unwrap(), out.spend.epsilon);
    }

    #[test]
    fn per_iteration_schedule() {
        let pp = PrivacyParams {
            epsilon_t: EpsilonSchedule::PerIteration(vec![0.5, 0.25]),
            ..PrivacyParams::new(1.0, 1e-5, 0)
        };
        let s = noise_schedule(10, 2, &pp).unwrap();
        assert_eq!(s[1].tau_a, 2.0 * s[0].tau_a);
        assert!(noise_schedule(10, 3, &pp).is_err());
    }
}
