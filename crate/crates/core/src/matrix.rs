//! Matrix types shared by every stage of the factorization, together with the
//! constraint projections and the element-wise soft-threshold operator.
//!
//! Samples are columns throughout: a data matrix is `D x N`, the dictionary is
//! `D x K`, coefficients are `K x N` and outliers are `D x N`.

use ndarray::{Array2, ArrayView1, Axis, Zip};

use crate::error::{shape_err, Error, Result};

/// Slack allowed when checking that a projected column landed inside the unit ball.
pub const BOUNDARY_SLACK: f64 = 1e-12;

/// Non-negative `D x N` data matrix, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Array2<f64>);

/// Non-negative `D x K` dictionary whose columns lie in the unit l2 ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary(Array2<f64>);

/// Non-negative `K x N` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(Array2<f64>);

/// `D x N` outlier matrix with every entry bounded by `m` in absolute value.
#[derive(Debug, Clone, PartialEq)]
pub struct Outliers {
    values: Array2<f64>,
    m: f64,
}

fn check_finite(op: &str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{op}: matrix contains NaN or infinity")))
    }
}

fn check_nonneg(op: &str, a: &Array2<f64>) -> Result<()> {
    if let Some(((i, j), x)) = a.indexed_iter().find(|(_, x)| **x < 0.0) {
        return Err(Error::InvalidData(format!(
            "{op}: negative entry {x} at row {}, column {}",
            i + 1,
            j + 1
        )));
    }
    Ok(())
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidData("data matrix must be at least 1x1".into()));
        }
        check_finite("data matrix", &values)?;
        check_nonneg("data matrix", &values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Ambient dimension `D`.
    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    /// Sample count `N`.
    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    /// Largest column l2 norm.
    pub fn max_column_norm(&self) -> f64 {
        self.0
            .axis_iter(Axis(1))
            .map(|c| l2(c))
            .fold(0.0, f64::max)
    }
}

impl Dictionary {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite("dictionary", &values)?;
        check_nonneg("dictionary", &values)?;
        for (j, col) in values.axis_iter(Axis(1)).enumerate() {
            let norm = l2(col);
            if norm > 1.0 + BOUNDARY_SLACK {
                return Err(Error::InvalidData(format!(
                    "dictionary column {} has norm {norm} > 1",
                    j + 1
                )));
            }
        }
        Ok(Self(values))
    }

    pub(crate) fn from_projected(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Latent dimension `K`.
    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }
}

impl Coefficients {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite("coefficients", &values)?;
        check_nonneg("coefficients", &values)?;
        Ok(Self(values))
    }

    pub(crate) fn from_projected(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn k(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }
}

impl Outliers {
    pub fn new(values: Array2<f64>, m: f64) -> Result<Self> {
        if !(m >= 0.0) {
            return Err(Error::InvalidParam(format!("outlier bound M must be >= 0, got {m}")));
        }
        check_finite("outliers", &values)?;
        if let Some(x) = values.iter().find(|x| x.abs() > m) {
            return Err(Error::InvalidData(format!("outlier entry {x} exceeds bound {m}")));
        }
        Ok(Self { values, m })
    }

    pub fn zeros(d: usize, n: usize, m: f64) -> Self {
        Self {
            values: Array2::zeros((d, n)),
            m,
        }
    }

    pub(crate) fn from_projected(values: Array2<f64>, m: f64) -> Self {
        Self { values, m }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

/// Solver hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    /// Latent dimension `K`.
    pub k: usize,
    /// l1 weight on the outlier matrix.
    pub lambda: f64,
    /// Box bound on outlier entries.
    pub m: f64,
    pub eta_h: f64,
    pub eta_w: f64,
    /// Outer iteration count `T`.
    pub outer_iters: usize,
    /// (H, R) alternations per outer iteration.
    pub inner_iters: usize,
    /// Relative loss-decrease threshold for early exit (non-private fits only).
    pub tol: f64,
}

impl Hyperparams {
    pub const DEFAULT_LAMBDA: f64 = 0.1;
    pub const DEFAULT_M: f64 = 1.0;
    pub const DEFAULT_ETA_H: f64 = 0.05;
    pub const DEFAULT_TOL: f64 = 1e-6;
    /// Ratio between the H and W step sizes used by default in private mode.
    pub const PRIVATE_ETA_RATIO: f64 = 1e4;

    /// Non-private defaults: `eta_w == eta_h`.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            lambda: Self::DEFAULT_LAMBDA,
            m: Self::DEFAULT_M,
            eta_h: Self::DEFAULT_ETA_H,
            eta_w: Self::DEFAULT_ETA_H,
            outer_iters: 200,
            inner_iters: 1,
            tol: Self::DEFAULT_TOL,
        }
    }

    /// Private defaults: `eta_w = eta_h / 10^4`.
    pub fn private(k: usize) -> Self {
        Self {
            eta_w: Self::DEFAULT_ETA_H / Self::PRIVATE_ETA_RATIO,
            ..Self::new(k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.eta_h > 0.0 && self.eta_h.is_finite()) {
            return bad(format!("eta_h must be > 0, got {}", self.eta_h));
        }
        if !(self.eta_w > 0.0 && self.eta_w.is_finite()) {
            return bad(format!("eta_w must be > 0, got {}", self.eta_w));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return bad(format!("m must be >= 0, got {}", self.m));
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be >= 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        Ok(())
    }
}

pub(crate) fn l2(col: ArrayView1<'_, f64>) -> f64 {
    col.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn frobenius_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Entrywise positive part.
pub fn project_nonneg(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Projects every column onto the non-negative part of the unit l2 ball:
/// `c -> P+(c) / max(1, |P+(c)|)`.
pub fn project_unit_ball_columns(w: &Array2<f64>) -> Array2<f64> {
    let mut out = project_nonneg(w);
    clip_columns_to_unit_ball(&mut out);
    out
}

/// Rescales, in place, each column whose l2 norm exceeds one back onto the unit sphere.
///
/// Columns within [`BOUNDARY_SLACK`] of the sphere are left alone so the
/// operation is exactly idempotent despite rounding in the division.
pub fn clip_columns_to_unit_ball(x: &mut Array2<f64>) {
    for mut col in x.axis_iter_mut(Axis(1)) {
        let norm = l2(col.view());
        if norm > 1.0 + BOUNDARY_SLACK {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// Scalar soft-threshold with box clipping: the minimizer of
/// `0.5 (x - r)^2 + lambda |r|` over `r` in `[-m, m]`.
#[inline]
pub fn soft_threshold_scalar(x: f64, lambda: f64, m: f64) -> f64 {
    let a = x.abs();
    if a < lambda {
        0.0
    } else if a <= lambda + m {
        x - x.signum() * lambda
    } else {
        x.signum() * m
    }
}

/// Element-wise [`soft_threshold_scalar`].
pub fn soft_threshold(x: &Array2<f64>, lambda: f64, m: f64) -> Array2<f64> {
    x.mapv(|v| soft_threshold_scalar(v, lambda, m))
}

/// Residual `V - W H - R`.
pub(crate) fn residual(
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
    r: &Outliers,
) -> Array2<f64> {
    let mut res = v.values() - &w.values().dot(h.values());
    res -= r.values();
    res
}

pub(crate) fn check_factor_shapes(
    op: &'static str,
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
) -> Result<()> {
    let (d, n) = v.values().dim();
    if w.d() != d || h.n() != n || w.k() != h.k() {
        return Err(shape_err(
            op,
            format!(
                "V is {d}x{n}, W is {}x{}, H is {}x{}",
                w.d(),
                w.k(),
                h.k(),
                h.n()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn check_outlier_shape(op: &'static str, v: &DataMatrix, r: &Outliers) -> Result<()> {
    if r.values().dim() != v.values().dim() {
        return Err(shape_err(
            op,
            format!("R is {:?}, V is {:?}", r.values().dim(), v.values().dim()),
        ));
    }
    Ok(())
}

/// Robust NMF loss `(1/N) (0.5 |V - WH - R|_F^2 + lambda |R|_1)`.
pub fn loss(
    v: &DataMatrix,
    w: &Dictionary,
    h: &Coefficients,
    r: &Outliers,
    lambda: f64,
) -> Result<f64> {
    check_factor_shapes("loss", v, w, h)?;
    check_outlier_shape("loss", v, r)?;
    let fit = 0.5 * frobenius_sq(&residual(v, w, h, r));
    let l1: f64 = r.values().iter().map(|x| x.abs()).sum();
    Ok((fit + lambda * l1) / v.n() as f64)
}

/// Maximum absolute entrywise difference between two equally-shaped matrices.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut m = 0.0_f64;
    Zip::from(a).and(b).for_each(|x, y| m = m.max((x - y).abs()));
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn nonneg_projection() {
        let x = array![[-1.0, 2.0], [0.0, -3.0]];
        assert_eq!(project_nonneg(&x), array![[0.0, 2.0], [0.0, 0.0]]);
        let z = Array2::<f64>::zeros((2, 3));
        assert_eq!(project_nonneg(&z), z);
        let p = array![[0.5, 1.0], [2.0, 0.0]];
        assert_eq!(project_nonneg(&p), p);
    }

    #[test]
    fn unit_ball_projection() {
        let x = array![[3.0, 0.3, 0.0], [4.0, -0.4, 0.0]];
        let p = project_unit_ball_columns(&x);
        assert!((p[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((p[[1, 0]] - 0.8).abs() < 1e-15);
        assert_eq!(p[[0, 1]], 0.3);
        assert_eq!(p[[1, 1]], 0.0);
        assert_eq!(p.column(2).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold_scalar(0.5, 1.0, 2.0), 0.0);
        assert_eq!(soft_threshold_scalar(2.0, 1.0, 2.0), 1.0);
        assert_eq!(soft_threshold_scalar(-4.0, 1.0, 2.0), -2.0);
    }

    #[test]
    fn soft_threshold_is_continuous_at_junctions() {
        let (lambda, m) = (0.7, 1.3);
        for edge in [lambda, lambda + m, -lambda, -(lambda + m)] {
            let lo = soft_threshold_scalar(edge - 1e-12, lambda, m);
            let at = soft_threshold_scalar(edge, lambda, m);
            let hi = soft_threshold_scalar(edge + 1e-12, lambda, m);
            assert!((lo - at).abs() < 1e-11 && (hi - at).abs() < 1e-11, "edge {edge}");
        }
    }

    fn grid_argmin(x: f64, lambda: f64, m: f64) -> f64 {
        let steps = (2.0 * m / 1e-4).round() as i64;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let r = -m + i as f64 * 1e-4;
            let f = 0.5 * (x - r).powi(2) + lambda * r.abs();
            if f < best.0 {
                best = (f, r);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_matches_grid_search() {
        for &(x, lambda, m) in &[(0.3, 0.1, 1.0), (-2.5, 0.5, 1.0), (1.05, 0.05, 1.0), (-0.04, 0.1, 0.5)] {
            let r = soft_threshold_scalar(x, lambda, m);
            assert!((r - grid_argmin(x, lambda, m)).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn loss_examples() {
        let v = DataMatrix::new(array![[1.5]]).unwrap();
        let w = Dictionary::new(array![[1.0]]).unwrap();
        let h = Coefficients::new(array![[1.0]]).unwrap();
        let r = Outliers::new(array![[0.5]], 1.0).unwrap();
        assert!((loss(&v, &w, &h, &r, 1.0).unwrap() - 0.5).abs() < 1e-15);

        let v = DataMatrix::new(array![[1.0, 0.5]]).unwrap();
        let h = Coefficients::new(array![[1.0, 0.5]]).unwrap();
        let r = Outliers::zeros(1, 2, 1.0);
        assert_eq!(loss(&v, &w, &h, &r, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_scalar_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (d, n, k, lambda) = (4, 3, 2, 0.3);
        let mut gen = |r: usize, c: usize, lo: f64| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(lo..1.0))
        };
        let v = gen(d, n, 0.0);
        let w = gen(d, k, 0.0) * 0.4;
        let h = gen(k, n, 0.0);
        let r = gen(d, n, -1.0);
        let mut fit = 0.0;
        let mut l1 = 0.0;
        for i in 0..d {
            for j in 0..n {
                let mut wh = 0.0;
                for p in 0..k {
                    wh += w[[i, p]] * h[[p, j]];
                }
                fit += (v[[i, j]] - wh - r[[i, j]]).powi(2);
                l1 += r[[i, j]].abs();
            }
        }
        let oracle = (0.5 * fit + lambda * l1) / n as f64;
        let got = loss(
            &DataMatrix::new(v).unwrap(),
            &Dictionary::new(w).unwrap(),
            &Coefficients::new(h).unwrap(),
            &Outliers::new(r, 1.0).unwrap(),
            lambda,
        )
        .unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let v = DataMatrix::new(Array2::ones((2, 2))).unwrap();
        let w = Dictionary::new(Array2::zeros((3, 1))).unwrap();
        let h = Coefficients::new(Array2::zeros((1, 2))).unwrap();
        let r = Outliers::zeros(2, 2, 1.0);
        assert!(matches!(loss(&v, &w, &h, &r, 0.1), Err(Error::Shape { .. })));
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(DataMatrix::new(array![[1.0, -0.1]]).is_err());
        assert!(DataMatrix::new(Array2::zeros((0, 2))).is_err());
        assert!(Dictionary::new(array![[3.0], [4.0]]).is_err());
        assert!(Coefficients::new(array![[f64::NAN]]).is_err());
        assert!(Outliers::new(array![[1.5]], 1.0).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Array2<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn projections_are_idempotent(x in matrix_strategy()) {
            let p = project_nonneg(&x);
            prop_assert_eq!(project_nonneg(&p), p);
            let q = project_unit_ball_columns(&x);
            prop_assert_eq!(project_unit_ball_columns(&q), q.clone());
            for col in q.axis_iter(Axis(1)) {
                prop_assert!(l2(col) <= 1.0 + BOUNDARY_SLACK);
                prop_assert!(col.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn soft_threshold_stays_in_box(x in -10.0f64..10.0, lambda in 0.0f64..3.0, m in 0.0f64..3.0) {
            let r = soft_threshold_scalar(x, lambda, m);
            prop_assert!(r.abs() <= m);
        }
    }
}
