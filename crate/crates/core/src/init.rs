//! Deterministic NNDSVD initialization of the dictionary and coefficients.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::matrix::{l2, Coefficients, DataMatrix, Dictionary, Outliers};

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn pos(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

fn neg(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| (-v).max(0.0))
}

/// Builds `(W0, H0)` from the rank-`k` truncated SVD of `v`.
///
/// The leading singular pair contributes `sqrt(s1)|u1|` and `sqrt(s1)|v1|`.
/// Every later pair contributes the positive or negative section of its
/// vectors, whichever has the larger product of norms (ties go to the positive
/// section). Columns of `W0` with norm above one are then scaled back onto the
/// unit sphere and the scale is moved into the matching row of `H0`, leaving
/// the product `W0 H0` unchanged.
pub fn nndsvd(v: &DataMatrix, k: usize) -> Result<(Dictionary, Coefficients)> {
    let (d, n) = v.values().dim();
    if k == 0 || k > d.min(n) {
        return Err(Error::InvalidParam(format!(
            "latent dimension k={k} must lie in [1, min(D, N)] = [1, {}]",
            d.min(n)
        )));
    }

    let svd = to_nalgebra(v.values())
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Svd("iteration did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Svd("missing left vectors".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Svd("missing right vectors".into()))?;
    let sigma = svd.singular_values;
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Svd("non-finite singular values".into()));
    }

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut w = Array2::<f64>::zeros((d, k));
    let mut h = Array2::<f64>::zeros((k, n));

    for (j, &idx) in order.iter().take(k).enumerate() {
        let s = sigma[idx];
        let x = Array1::from_iter(u.column(idx).iter().copied());
        let y = Array1::from_iter(vt.row(idx).iter().copied());

        let (wc, hr) = if j == 0 {
            let scale = s.sqrt();
            (x.mapv(|e| scale * e.abs()), y.mapv(|e| scale * e.abs()))
        } else {
            let (xp, xn, yp, yn) = (pos(&x), neg(&x), pos(&y), neg(&y));
            let (nxp, nyp) = (l2(xp.view()), l2(yp.view()));
            let (nxn, nyn) = (l2(xn.view()), l2(yn.view()));
            let (mp, mn) = (nxp * nyp, nxn * nyn);
            let (a, b, na, nb, m) = if mp >= mn {
                (xp, yp, nxp, nyp, mp)
            } else {
                (xn, yn, nxn, nyn, mn)
            };
            if m == 0.0 {
                (Array1::zeros(d), Array1::zeros(n))
            } else {
                let scale = (s * m).sqrt();
                (a.mapv(|e| scale * e / na), b.mapv(|e| scale * e / nb))
            }
        };
        w.column_mut(j).assign(&wc);
        h.row_mut(j).assign(&hr);
    }

    // Move any excess column norm of W into H so W lands in the unit ball.
    for (mut wc, mut hr) in w.axis_iter_mut(Axis(1)).zip(h.axis_iter_mut(Axis(0))) {
        let norm = l2(wc.view());
        if norm > 1.0 {
            wc.mapv_inplace(|e| e / norm);
            hr.mapv_inplace(|e| e * norm);
        }
    }

    Ok((Dictionary::from_projected(w), Coefficients::from_projected(h)))
}

/// All-zero outlier matrix.
pub fn init_outliers(d: usize, n: usize, m: f64) -> Outliers {
    Outliers::zeros(d, n, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn rel_err(v: &Array2<f64>, w: &Dictionary, h: &Coefficients) -> f64 {
        let diff = v - &w.values().dot(h.values());
        crate::matrix::frobenius_sq(&diff).sqrt() / crate::matrix::frobenius_sq(v).sqrt()
    }

    #[test]
    fn all_ones_rank_one() {
        let v = DataMatrix::new(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let (w, h) = nndsvd(&v, 1).unwrap();
        let s = 0.5f64.sqrt();
        assert!((w.values()[[0, 0]] - s).abs() < 1e-12);
        assert!((w.values()[[1, 0]] - s).abs() < 1e-12);
        assert!(rel_err(v.values(), &w, &h) < 1e-10);
    }

    #[test]
    fn diagonal_full_rank() {
        let v = DataMatrix::new(Array2::from_diag(&array![3.0, 1.0, 0.5, 2.0])).unwrap();
        let (w, h) = nndsvd(&v, 4).unwrap();
        assert!(rel_err(v.values(), &w, &h) < 1e-10);
    }

    #[test]
    fn exact_rank_one_reconstructs() {
        let a = array![0.2, 1.0, 0.0, 3.0];
        let b = array![1.0, 0.5, 2.0];
        let v = a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)));
        let v = DataMatrix::new(v).unwrap();
        let (w, h) = nndsvd(&v, 1).unwrap();
        assert!(rel_err(v.values(), &w, &h) < 1e-10);
        // H row is a non-negative multiple of |v1|, i.e. proportional to b.
        let ratio = h.values()[[0, 0]] / b[0];
        for j in 0..3 {
            assert!((h.values()[[0, j]] - ratio * b[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn outputs_are_feasible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let v = Array2::from_shape_fn((8, 12), |_| rng.random_range(0.0..5.0));
            let v = DataMatrix::new(v).unwrap();
            let (w, h) = nndsvd(&v, 4).unwrap();
            assert!(w.values().iter().all(|x| *x >= 0.0));
            assert!(h.values().iter().all(|x| *x >= 0.0));
            assert!(Dictionary::new(w.values().clone()).is_ok());
        }
    }

    // Product W0 H0 from scikit-learn's `nndsvd` initializer on the same input.
    #[test]
    fn matches_reference_product() {
        let v = DataMatrix::new(array![
            [0.9, 0.1, 0.4, 0.0],
            [0.2, 0.8, 0.5, 0.3],
            [0.6, 0.3, 0.0, 0.7]
        ])
        .unwrap();
        let expected = array![
            [0.550828301959951, 0.392747733536510, 0.290591411716094, 0.330379843214964],
            [0.565643797015672, 0.762387665470478, 0.362643589536165, 0.468303082759062],
            [0.574789933994500, 0.409832688394348, 0.303232455132283, 0.344751726806604]
        ];
        let (w, h) = nndsvd(&v, 2).unwrap();
        let product = w.values().dot(h.values());
        assert!(crate::matrix::max_abs_diff(&product, &expected) < 1e-12);
    }

    // Plain NNDSVD is not monotone in k on general inputs, so only the
    // leading-term identity and the trivial bound are asserted here.
    #[test]
    fn reconstruction_error_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let v = Array2::from_shape_fn((6, 9), |_| rng.random_range(0.0..1.0));
            let total = crate::matrix::frobenius_sq(&v);

            // Power iteration on V^T V for the leading singular value.
            let vtv = v.t().dot(&v);
            let mut x = Array1::from_elem(9, 1.0);
            for _ in 0..500 {
                let y = vtv.dot(&x);
                x = &y / l2(y.view());
            }
            let sigma1_sq = x.dot(&vtv.dot(&x));

            let v = DataMatrix::new(v).unwrap();
            for k in 1..=6 {
                let (w, h) = nndsvd(&v, k).unwrap();
                let err_sq = crate::matrix::frobenius_sq(&(v.values() - &w.values().dot(h.values())));
                if k == 1 {
                    assert!((err_sq - (total - sigma1_sq)).abs() < 1e-9 * total);
                }
                assert!(err_sq <= total + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let v = DataMatrix::new(Array2::ones((2, 3))).unwrap();
        assert!(nndsvd(&v, 0).is_err());
        assert!(nndsvd(&v, 3).is_err());
    }

    #[test]
    fn zero_outliers() {
        let r = init_outliers(2, 3, 1.0);
        assert_eq!(r.values(), &Array2::<f64>::zeros((2, 3)));
        assert_eq!(init_outliers(1, 1, 0.0).values(), &array![[0.0]]);
    }
}
