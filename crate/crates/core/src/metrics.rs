//! Evaluation metrics.

use ndarray::Array2;

use crate::data::Vocabulary;
use crate::error::{shape_err, Error, Result};
use crate::matrix::{frobenius_sq, Coefficients, DataMatrix, Dictionary};

/// `(1/(2N)) |V_clean - W H|_F^2`.
pub fn objective_value(clean: &DataMatrix, w: &Dictionary, h: &Coefficients) -> Result<f64> {
    let (d, n) = clean.values().dim();
    if w.d() != d || h.n() != n || w.k() != h.k() {
        return Err(shape_err(
            "objective_value",
            format!(
                "clean is {d}x{n}, W is {}x{}, H is {}x{}",
                w.d(),
                w.k(),
                h.k(),
                h.n()
            ),
        ));
    }
    let diff = clean.values() - &w.values().dot(h.values());
    Ok(frobenius_sq(&diff) / (2.0 * n as f64))
}

/// Root-mean-square error over the entries where `mask` is true.
pub fn masked_rmse(v: &Array2<f64>, v_hat: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    if v.dim() != v_hat.dim() || v.dim() != mask.dim() {
        return Err(shape_err(
            "masked_rmse",
            format!(
                "v is {:?}, v_hat is {:?}, mask is {:?}",
                v.dim(),
                v_hat.dim(),
                mask.dim()
            ),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    ndarray::Zip::from(v)
        .and(v_hat)
        .and(mask)
        .for_each(|a, b, &keep| {
            if keep {
                sum += (a - b) * (a - b);
                count += 1;
            }
        });
    if count == 0 {
        return Err(Error::InvalidData("mask selects no entries".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// The `k` highest-weighted terms of every dictionary column, in descending
/// weight order. Equal weights are ordered by vocabulary index.
pub fn top_k_terms(w: &Dictionary, vocab: &Vocabulary, k: usize) -> Result<Vec<Vec<String>>> {
    if vocab.len() != w.d() {
        return Err(shape_err(
            "top_k_terms",
            format!("vocabulary has {} terms, dictionary has {} rows", vocab.len(), w.d()),
        ));
    }
    if k == 0 || k > w.d() {
        return Err(Error::InvalidParam(format!(
            "k={k} must lie in [1, {}]",
            w.d()
        )));
    }
    let topics = w
        .values()
        .columns()
        .into_iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            idx.into_iter()
                .take(k)
                .map(|i| vocab.terms()[i].clone())
                .collect()
        })
        .collect();
    Ok(topics)
}
