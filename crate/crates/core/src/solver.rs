//! Non-private robust NMF by two-block coordinate descent.
//!
//! Each outer iteration refines `(H, R)` with `W` fixed (a projected gradient
//! step on `H` followed by the closed-form soft-threshold update of `R`), then
//! takes one projected gradient step on `W` driven only by the statistics
//! `A = HH^T / N` and `B = (V - R) H^T / N`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::init::{init_outliers, nndsvd};
use crate::matrix::{
    check_factor_shapes, check_outlier_shape, clip_columns_to_unit_ball, loss, project_nonneg,
    project_unit_ball_columns, soft_threshold, Coefficients, DataMatrix, Dictionary,
    Hyperparams, Outliers,
};
use crate::metrics::objective_value;

/// Sufficient statistics of the dictionary gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistics {
    /// `K x K`, symmetric positive semidefinite.
    pub a: Array2<f64>,
    /// `D x K`.
    pub b: Array2<f64>,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub objective: Option<f64>,
    pub eps_overall: Option<f64>,
}

/// Ordered iteration records, indices strictly increasing from 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    records: Vec<IterationRecord>,
}

impl Trajectory {
    pub fn push(&mut self, rec: IterationRecord) {
        let expected = self.records.last().map_or(1, |r| r.iter + 1);
        assert_eq!(rec.iter, expected, "trajectory indices must be consecutive");
        self.records.push(rec);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub(crate) fn records_mut(&mut self) -> &mut [IterationRecord] {
        &mut self.records
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Which optional constraints the solver enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    /// When false, `R` is frozen at zero.
    pub model_outliers: bool,
    /// Privacy mode: columns of `H` and `R` are kept inside the unit l2 ball.
    pub bounded_columns: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            model_outliers: true,
            bounded_columns: false,
        }
    }
}

/// Result of a non-private fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub w: Dictionary,
    pub h: Coefficients,
    pub r: Outliers,
    pub trajectory: Trajectory,
}

/// `(1/N) (W^T W H - W^T (V - R))`.
pub fn grad_h(
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
    r: &Outliers,
) -> Result<Array2<f64>> {
    check_factor_shapes("grad_h", v, w, h)?;
    check_outlier_shape("grad_h", v, r)?;
    let wt = w.values().t();
    let gram = wt.dot(w.values());
    let target = v.values() - r.values();
    let g = gram.dot(h.values()) - wt.dot(&target);
    Ok(g / v.n() as f64)
}

/// `P+(H - eta_h * grad)`, with columns clipped to the unit ball when `bounded`.
pub fn update_h(h: &Coefficients, grad: &Array2<f64>, eta_h: f64, bounded: bool) -> Coefficients {
    let mut next = project_nonneg(&(h.values() - &(grad * eta_h)));
    if bounded {
        clip_columns_to_unit_ball(&mut next);
    }
    Coefficients::from_projected(next)
}

/// `S_{lambda,M}(V - W H)`, with columns clipped to the unit ball when `bounded`.
pub fn update_r(
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
    lambda: f64,
    m: f64,
    bounded: bool,
) -> Result<Outliers> {
    check_factor_shapes("update_r", v, w, h)?;
    let mut next = soft_threshold(&(v.values() - &w.values().dot(h.values())), lambda, m);
    if bounded {
        clip_columns_to_unit_ball(&mut next);
    }
    Ok(Outliers::from_projected(next, m))
}

/// `A = H H^T / N`, `B = (V - R) H^T / N`.
pub fn statistics(v: &DataMatrix, h: &Coefficients, r: &Outliers) -> Result<Statistics> {
    if h.n() != v.n() {
        return Err(shape_err(
            "statistics",
            format!("H has {} columns, V has {}", h.n(), v.n()),
        ));
    }
    check_outlier_shape("statistics", v, r)?;
    let n = v.n() as f64;
    let ht = h.values().t();
    let a = h.values().dot(&ht) / n;
    let b = (v.values() - r.values()).dot(&ht) / n;
    Ok(Statistics { a, b })
}

/// `W A - B`.
pub fn grad_w(w: &Dictionary, stats: &Statistics) -> Result<Array2<f64>> {
    grad_w_raw(w, &stats.a, &stats.b)
}

pub(crate) fn grad_w_raw(w: &Dictionary, a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let k = w.k();
    if a.dim() != (k, k) || b.dim() != (w.d(), k) {
        return Err(shape_err(
            "grad_w",
            format!(
                "W is {}x{k}, A is {:?}, B is {:?}",
                w.d(),
                a.dim(),
                b.dim()
            ),
        ));
    }
    Ok(w.values().dot(a) - b)
}

/// `P_C(W - eta_w * grad)`.
pub fn update_w(w: &Dictionary, grad: &Array2<f64>, eta_w: f64) -> Dictionary {
    Dictionary::from_projected(project_unit_ball_columns(&(w.values() - &(grad * eta_w))))
}

/// One `(H, R)` refinement with `W` held fixed; `R` follows the fresh `H`.
pub(crate) fn refine_coefficients(
    v: &DataMatrix,
    w: &Dictionary,
    h: &mut Coefficients,
    r: &mut Outliers,
    hp: &Hyperparams,
    constraints: Constraints,
) -> Result<()> {
    for _ in 0..hp.inner_iters {
        let g = grad_h(v, w, h, r)?;
        *h = update_h(h, &g, hp.eta_h, constraints.bounded_columns);
        if constraints.model_outliers {
            *r = update_r(v, w, h, hp.lambda, hp.m, constraints.bounded_columns)?;
        }
    }
    Ok(())
}

pub(crate) fn check_clean(v: &DataMatrix, clean: Option<&DataMatrix>) -> Result<()> {
    if let Some(c) = clean {
        if c.values().dim() != v.values().dim() {
            return Err(shape_err(
                "fit",
                format!(
                    "clean matrix is {:?}, data is {:?}",
                    c.values().dim(),
                    v.values().dim()
                ),
            ));
        }
    }
    Ok(())
}

pub(crate) fn checked_loss(
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
    r: &Outliers,
    lambda: f64,
    iter: usize,
) -> Result<f64> {
    let l = loss(v, w, h, r, lambda)?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss became {l} at iteration {iter}; try smaller step sizes"
        )));
    }
    Ok(l)
}

/// Robust NMF with outlier modeling and default constraints.
pub fn fit(v: &DataMatrix, hp: &Hyperparams, clean: Option<&DataMatrix>) -> Result<Fit> {
    fit_with(v, hp, Constraints::default(), clean)
}

/// Robust NMF with explicit constraint choices.
///
/// Runs at most `hp.outer_iters` outer iterations and exits early once the
/// relative loss change drops below `hp.tol`.
pub fn fit_with(
    v: &DataMatrix,
    hp: &Hyperparams,
    constraints: Constraints,
    clean: Option<&DataMatrix>,
) -> Result<Fit> {
    hp.validate()?;
    check_clean(v, clean)?;
    let (mut w, mut h) = nndsvd(v, hp.k)?;
    let mut r = init_outliers(v.d(), v.n(), hp.m);
    let mut trajectory = Trajectory::default();
    let mut prev = checked_loss(v, &w, &h, &r, hp.lambda, 0)?;

    for t in 1..=hp.outer_iters {
        refine_coefficients(v, &w, &mut h, &mut r, hp, constraints)?;
        let stats = statistics(v, &h, &r)?;
        w = update_w(&w, &grad_w(&w, &stats)?, hp.eta_w);

        let l = checked_loss(v, &w, &h, &r, hp.lambda, t)?;
        let objective = clean.map(|c| objective_value(c, &w, &h)).transpose()?;
        trajectory.push(IterationRecord {
            iter: t,
            loss: l,
            objective,
            eps_overall: None,
        });
        let rel = (l - prev).abs() / prev.max(1e-12);
        prev = l;
        if rel < hp.tol {
            log::debug!("converged at iteration {t}: relative change {rel:e}");
            break;
        }
    }

    Ok(Fit {
        w,
        h,
        r,
        trajectory,
    })
}
