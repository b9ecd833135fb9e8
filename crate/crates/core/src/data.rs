//! Matrix ingestion and export, column normalization, synthetic data,
//! outlier contamination and TF-IDF weighting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    clip_columns_to_unit_ball, l2, project_unit_ball_columns, Coefficients, DataMatrix,
    Dictionary,
};

/// Ordered term list, one term per data-matrix row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary(Vec<String>);

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate vocabulary term {t:?} on line {}",
                    i + 1
                )));
            }
        }
        Ok(Self(terms))
    }

    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Raw term frequencies, terms as rows and documents as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusCounts {
    counts: Array2<u64>,
    doc_freq: Vec<usize>,
}

impl CorpusCounts {
    pub fn new(counts: Array2<u64>) -> Result<Self> {
        if counts.ncols() == 0 || counts.nrows() == 0 {
            return Err(Error::InvalidData("corpus needs at least one term and one document".into()));
        }
        let doc_freq = counts
            .axis_iter(Axis(0))
            .map(|row| row.iter().filter(|&&c| c > 0).count())
            .collect();
        Ok(Self { counts, doc_freq })
    }

    /// Interprets a data matrix of whole numbers as counts.
    pub fn from_matrix(v: &DataMatrix) -> Result<Self> {
        let mut counts = Array2::zeros(v.values().dim());
        for ((i, j), &x) in v.values().indexed_iter() {
            if x.fract() != 0.0 {
                return Err(Error::InvalidData(format!(
                    "count at row {}, column {} is not a whole number: {x}",
                    i + 1,
                    j + 1
                )));
            }
            counts[[i, j]] = x as u64;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    /// Number of documents containing each term.
    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn n_docs(&self) -> usize {
        self.counts.ncols()
    }
}

/// Per-column normalization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide every nonzero column by its largest entry.
    UnitMax,
    /// Rescale columns with l2 norm above one onto the unit sphere.
    UnitL2Clip,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit-max" => Ok(Self::UnitMax),
            "unit-l2-clip" => Ok(Self::UnitL2Clip),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidParam(format!(
                "unknown normalization {other:?}; expected unit-max, unit-l2-clip or none"
            ))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UnitMax => "unit-max",
            Self::UnitL2Clip => "unit-l2-clip",
            Self::None => "none",
        })
    }
}

pub fn normalize_columns(v: &DataMatrix, mode: Normalization) -> DataMatrix {
    let mut out = v.values().clone();
    match mode {
        Normalization::UnitMax => {
            for mut col in out.axis_iter_mut(Axis(1)) {
                let max = col.iter().copied().fold(0.0, f64::max);
                if max > 0.0 {
                    col.mapv_inplace(|x| x / max);
                }
            }
        }
        Normalization::UnitL2Clip => {
            for mut col in out.axis_iter_mut(Axis(1)) {
                let norm = l2(col.view());
                if norm > 1.0 {
                    col.mapv_inplace(|x| x / norm);
                }
            }
        }
        Normalization::None => {}
    }
    DataMatrix::new(out).expect("normalization preserves non-negativity")
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(e, path))
}

fn parse_err(source: &Path, line: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.display().to_string(),
        line,
        column,
        msg: msg.into(),
    }
}

/// Parses comma-separated rows into a real matrix. Rows are features.
pub fn parse_dense_csv(text: &str, source: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, tok) in line.split(',').enumerate() {
            let x: f64 = tok.trim().parse().map_err(|_| {
                parse_err(source, ln + 1, col + 1, format!("not a number: {:?}", tok.trim()))
            })?;
            data.push(x);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(
                    source,
                    ln + 1,
                    count.min(w) + 1,
                    format!("ragged row: expected {w} columns, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_err(source, 1, 1, "empty matrix"))?;
    Ok(Array2::from_shape_vec((rows, width), data).expect("shape checked while parsing"))
}

fn check_nonneg_located(a: &Array2<f64>, source: &Path) -> Result<()> {
    for ((i, j), &x) in a.indexed_iter() {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(parse_err(source, i + 1, j + 1, format!("entry must be finite and >= 0, got {x}")));
        }
    }
    Ok(())
}

pub fn load_dense_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let a = parse_dense_csv(&read_text(path)?, path)?;
    check_nonneg_located(&a, path)?;
    DataMatrix::new(a)
}

/// Loads a real (possibly signed) matrix, e.g. an outlier matrix written by `save_dense_csv`.
pub fn load_real_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    parse_dense_csv(&read_text(path)?, path)
}

pub fn format_dense_csv(a: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in a.rows() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display for f64 is the shortest string that parses back to the same value.
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_dense_csv(path: impl AsRef<Path>, a: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dense_csv(a)).map_err(|e| with_path(e, path))?;
    Ok(())
}

/// Parses coordinate-format sparse text (`rows cols nnz` header, then 1-based
/// `i j v` triples; `%` lines are comments) into a dense matrix.
pub fn parse_coordinate(text: &str, source: &Path) -> Result<DataMatrix> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());

    let (hl, header) = lines.next().ok_or_else(|| parse_err(source, 1, 1, "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .enumerate()
        .map(|(c, tok)| {
            tok.parse()
                .map_err(|_| parse_err(source, hl + 1, c + 1, format!("bad header field {tok:?}")))
        })
        .collect::<Result<_>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(parse_err(source, hl + 1, 1, "header must be `rows cols nnz`"));
    };
    if rows == 0 || cols == 0 {
        return Err(parse_err(source, hl + 1, 1, "matrix dimensions must be positive"));
    }

    let mut a = Array2::<f64>::zeros((rows, cols));
    let mut seen = HashSet::new();
    let mut entries = 0;
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(source, ln + 1, 1, "expected `i j v`"));
        }
        let idx = |c: usize, bound: usize| -> Result<usize> {
            let i: usize = toks[c]
                .parse()
                .map_err(|_| parse_err(source, ln + 1, c + 1, format!("bad index {:?}", toks[c])))?;
            if i == 0 || i > bound {
                return Err(parse_err(source, ln + 1, c + 1, format!("index {i} outside 1..={bound}")));
            }
            Ok(i - 1)
        };
        let (i, j) = (idx(0, rows)?, idx(1, cols)?);
        let x: f64 = toks[2]
            .parse()
            .map_err(|_| parse_err(source, ln + 1, 3, format!("bad value {:?}", toks[2])))?;
        if !(x >= 0.0) || !x.is_finite() {
            return Err(parse_err(source, ln + 1, 3, format!("entry must be finite and >= 0, got {x}")));
        }
        if !seen.insert((i, j)) {
            return Err(parse_err(source, ln + 1, 1, format!("duplicate entry ({}, {})", i + 1, j + 1)));
        }
        a[[i, j]] = x;
        entries += 1;
    }
    if entries != nnz {
        return Err(parse_err(
            source,
            hl + 1,
            3,
            format!("header declares {nnz} entries, body has {entries}"),
        ));
    }
    DataMatrix::new(a)
}

pub fn load_coordinate(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    parse_coordinate(&read_text(path)?, path)
}

/// Loads `.csv` files as dense text and anything else as coordinate format.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_dense_csv(path),
        _ => load_coordinate(path),
    }
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let text = read_text(path.as_ref())?;
    Vocabulary::new(
        text.lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect(),
    )
}

/// Mask as CSV of 0/1 entries.
pub fn format_mask(mask: &Array2<bool>) -> String {
    format_dense_csv(&mask.mapv(|b| if b { 1.0 } else { 0.0 }))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let path = path.as_ref();
    let a = parse_dense_csv(&read_text(path)?, path)?;
    for ((i, j), &x) in a.indexed_iter() {
        if x != 0.0 && x != 1.0 {
            return Err(parse_err(path, i + 1, j + 1, format!("mask entries must be 0 or 1, got {x}")));
        }
    }
    Ok(a.mapv(|x| x == 1.0))
}

/// Corrupts `floor(col_frac N)` random columns: in each, `floor(entry_frac D)`
/// random entries receive additive `U[-1, 1]` noise and are clamped at zero.
/// Returns the corrupted copy and the mask of touched entries.
pub fn contaminate(
    v: &DataMatrix,
    col_frac: f64,
    entry_frac: f64,
    seed: u64,
) -> Result<(DataMatrix, Array2<bool>)> {
    for (name, f) in [("col_frac", col_frac), ("entry_frac", entry_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParam(format!("{name} must lie in [0, 1], got {f}")));
        }
    }
    let (d, n) = v.values().dim();
    let n_cols = (col_frac * n as f64).floor() as usize;
    let n_entries = (entry_frac * d as f64).floor() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = v.values().clone();
    let mut mask = Array2::from_elem((d, n), false);
    for j in sample(&mut rng, n, n_cols) {
        for i in sample(&mut rng, d, n_entries) {
            let noise: f64 = rng.random_range(-1.0..=1.0);
            out[[i, j]] = (out[[i, j]] + noise).max(0.0);
            mask[[i, j]] = true;
        }
    }
    Ok((DataMatrix::new(out)?, mask))
}

/// `f_{w,d} * ln(N / df_w)`.
pub fn tfidf(counts: &CorpusCounts) -> DataMatrix {
    let n = counts.n_docs() as f64;
    let mut out = counts.counts().mapv(|c| c as f64);
    for (mut row, &df) in out.axis_iter_mut(Axis(0)).zip(counts.doc_freq()) {
        if df == 0 {
            row.fill(0.0);
        } else {
            let idf = (n / df as f64).ln();
            row.mapv_inplace(|f| f * idf);
        }
    }
    DataMatrix::new(out).expect("tf-idf weights are non-negative")
}

/// Random non-negative rank-`k` ground truth `V = W* H*`, with unit-ball
/// columns in both `W*` and `H*`.
pub fn synth_lowrank(
    d: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<(DataMatrix, Dictionary, Coefficients)> {
    if k == 0 || k > d.min(n) {
        return Err(Error::InvalidParam(format!(
            "k={k} must lie in [1, min(d, n)] = [1, {}]",
            d.min(n)
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = project_unit_ball_columns(&Array2::from_shape_fn((d, k), |_| rng.random::<f64>()));
    let mut h = Array2::from_shape_fn((k, n), |_| rng.random::<f64>());
    clip_columns_to_unit_ball(&mut h);
    let v = DataMatrix::new(w.dot(&h))?;
    Ok((v, Dictionary::new(w)?, Coefficients::new(h)?))
}
