//! Sparse binary-classification datasets: LibSVM text I/O, random per-feature
//! scaling, and a planted-model synthetic generator.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: malformed label {token:?}")]
    MalformedLabel { line: usize, token: String },
    #[error("line {line}: malformed feature {token:?}")]
    MalformedFeature { line: usize, token: String },
    #[error("line {line}: feature indices are 1-based, found 0")]
    ZeroIndex { line: usize },
    #[error("line {line}: index {index} does not increase")]
    NonIncreasingIndex { line: usize, index: usize },
    #[error("line {line}: comments are not supported")]
    Comment { line: usize },
    #[error("line {line}: index {index} exceeds declared dimension {n}")]
    IndexOutOfRange { line: usize, index: usize, n: usize },
}

/// CSR feature matrix with ±1 labels.
///
/// `values` holds the effective features `scale ∘ a_i`; the unscaled values are
/// kept alongside so the dataset can be rescaled or written back to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    raw: Vec<f64>,
    labels: Vec<i8>,
    scale: Vec<f64>,
    amplitude: f64,
    planted: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from per-row sorted `(column, value)` lists.
    pub fn from_rows(n_features: usize, rows: Vec<Vec<(usize, f64)>>, labels: Vec<i8>) -> Dataset {
        assert_eq!(rows.len(), labels.len(), "one label per row");
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut raw = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (j, v) in r {
                assert!(j < n_features, "column {j} out of range");
                col_idx.push(j);
                raw.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        assert!(labels.iter().all(|&b| b == 1 || b == -1), "labels must be ±1");
        Dataset {
            n_features,
            row_ptr,
            col_idx,
            values: raw.clone(),
            raw,
            labels,
            scale: vec![1.0; n_features],
            amplitude: 0.0,
            planted: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i] as f64
    }

    /// Effective (scaled) row `i` as parallel column / value slices.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Unscaled row `i`.
    pub fn raw_row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.raw[a..b])
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Ground-truth weights when the dataset came from [`generate_synthetic`].
    pub fn planted(&self) -> Option<&[f64]> {
        self.planted.as_deref()
    }

    pub fn structure(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.col_idx)
    }

    /// Copy restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut raw = Vec::new();
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            col_idx.extend_from_slice(&self.col_idx[a..b]);
            values.extend_from_slice(&self.values[a..b]);
            raw.extend_from_slice(&self.raw[a..b]);
            labels.push(self.labels[i]);
            row_ptr.push(col_idx.len());
        }
        Dataset { n_features: self.n_features, row_ptr, col_idx, values, raw, labels, scale: self.scale.clone(), amplitude: self.amplitude, planted: self.planted.clone() }
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i8, ParseError> {
    let err = || ParseError::MalformedLabel { line, token: tok.to_string() };
    let v: f64 = tok.parse().map_err(|_| err())?;
    if v == 1.0 {
        Ok(1)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1)
    } else {
        Err(err())
    }
}

/// Parses LibSVM text. Indices on disk are 1-based; `n_hint` fixes the
/// feature dimension (otherwise the largest index seen is used).
pub fn parse_libsvm<R: BufRead>(reader: R, n_hint: Option<usize>) -> Result<Dataset, ParseError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.contains('#') {
            return Err(ParseError::Comment { line: lineno });
        }
        let mut toks = line.split_ascii_whitespace();
        let Some(label_tok) = toks.next() else { continue };
        labels.push(parse_label(label_tok, lineno)?);
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in toks {
            let bad = || ParseError::MalformedFeature { line: lineno, token: tok.to_string() };
            let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let val: f64 = val.parse().map_err(|_| bad())?;
            if !val.is_finite() {
                return Err(bad());
            }
            if idx == 0 {
                return Err(ParseError::ZeroIndex { line: lineno });
            }
            if idx <= last {
                return Err(ParseError::NonIncreasingIndex { line: lineno, index: idx });
            }
            if let Some(n) = n_hint {
                if idx > n {
                    return Err(ParseError::IndexOutOfRange { line: lineno, index: idx, n });
                }
            }
            last = idx;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    Ok(Dataset::from_rows(n_hint.unwrap_or(max_index), rows, labels))
}

/// Writes the unscaled features back out in LibSVM format.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    for i in 0..ds.n_rows() {
        write!(w, "{}", if ds.labels[i] > 0 { "+1" } else { "-1" })?;
        let (cols, vals) = ds.raw_row(i);
        for (j, v) in cols.iter().zip(vals) {
            write!(w, " {}:{}", j + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Draws `scale_j = amplitude · u_j`, `u_j ~ U[-1, 1]` i.i.d., and materializes
/// the scaled features. Sparsity structure is untouched.
pub fn apply_feature_scaling(ds: &Dataset, amplitude: f64, rng: &mut SeededRng) -> Dataset {
    assert!(amplitude >= 0.0, "scaling amplitude must be nonnegative");
    if amplitude == 0.0 {
        log::warn!("feature scaling amplitude A = 0 makes the objective constant (ln 2)");
    }
    let scale: Vec<f64> = (0..ds.n_features).map(|_| amplitude * rng.random_range(-1.0..=1.0)).collect();
    let values = ds.col_idx.iter().zip(&ds.raw).map(|(&j, &v)| scale[j] * v).collect();
    Dataset { values, scale, amplitude, ..ds.clone() }
}

/// Binary features at density 0.1 with labels drawn from a planted logistic
/// model `P(b = +1) = sigmoid(a_iᵀ w*)`, `w*_j ~ N(0, 4)`.
pub fn generate_synthetic(m: usize, n: usize, rng: &mut SeededRng) -> Dataset {
    assert!(m >= 1 && n >= 1, "synthetic dataset needs m, n >= 1");
    const DENSITY: f64 = 0.1;
    let w: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); 2.0 * z }).collect();
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<(usize, f64)> = (0..n).filter(|_| rng.random::<f64>() < DENSITY).map(|j| (j, 1.0)).collect();
        let margin: f64 = row.iter().map(|&(j, v)| w[j] * v).sum();
        let prob = 1.0 / (1.0 + (-margin).exp());
        labels.push(if rng.random::<f64>() < prob { 1 } else { -1 });
        rows.push(row);
    }
    let mut ds = Dataset::from_rows(n, rows, labels);
    ds.planted = Some(w);
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_single_line() {
        let ds = parse_libsvm(Cursor::new("-1 5:1 12:0.5\n"), None).unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.n_features(), 12);
        assert_eq!(ds.labels(), &[-1]);
        assert_eq!(ds.row(0), (&[4usize, 11][..], &[1.0, 0.5][..]));
        assert_eq!(ds.amplitude(), 0.0);
        assert!(ds.scale().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse_libsvm(Cursor::new("x 1:1\n"), None), Err(ParseError::MalformedLabel { line: 1, .. })));
        assert!(matches!(parse_libsvm(Cursor::new("+1 1:1\n+1 3:1 2:1\n"), None), Err(ParseError::NonIncreasingIndex { line: 2, index: 2 })));
        assert!(matches!(parse_libsvm(Cursor::new("+1 1:1\n-1 2\n"), None), Err(ParseError::MalformedFeature { line: 2, .. })));
        assert!(matches!(parse_libsvm(Cursor::new("+1 0:1\n"), None), Err(ParseError::ZeroIndex { line: 1 })));
        assert!(matches!(parse_libsvm(Cursor::new("+1 1:1 # c\n"), None), Err(ParseError::Comment { line: 1 })));
        assert!(matches!(parse_libsvm(Cursor::new(""), None), Err(ParseError::Empty)));
        assert!(matches!(parse_libsvm(Cursor::new("2 1:1\n"), None), Err(ParseError::MalformedLabel { line: 1, .. })));
        assert!(matches!(parse_libsvm(Cursor::new("1 7:1\n"), Some(5)), Err(ParseError::IndexOutOfRange { line: 1, index: 7, n: 5 })));
    }

    #[test]
    fn crlf_zero_labels_and_hint() {
        let ds = parse_libsvm(Cursor::new("0 1:2\r\n+1 2:1\r\n"), Some(10)).unwrap();
        assert_eq!(ds.labels(), &[-1, 1]);
        assert_eq!(ds.n_features(), 10);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let mut rng = SeededRng::new(9);
        let ds = generate_synthetic(40, 7, &mut rng);
        let mut buf = Vec::new();
        write_libsvm(&ds, &mut buf).unwrap();
        let back = parse_libsvm(Cursor::new(buf), Some(7)).unwrap();
        assert_eq!(back.structure(), ds.structure());
        assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.n_rows() {
            assert_eq!(back.raw_row(i), ds.raw_row(i));
        }
    }

    #[test]
    fn scaling_zero_amplitude() {
        let ds = generate_synthetic(10, 5, &mut SeededRng::new(1));
        let scaled = apply_feature_scaling(&ds, 0.0, &mut SeededRng::new(2));
        assert!(scaled.scale().iter().all(|&s| s == 0.0));
        assert_eq!(scaled.structure(), ds.structure());
    }

    #[test]
    fn scaling_is_deterministic_and_proportional() {
        let ds = generate_synthetic(10, 30, &mut SeededRng::new(1));
        let a = apply_feature_scaling(&ds, 1.0, &mut SeededRng::new(5));
        let b = apply_feature_scaling(&ds, 1.0, &mut SeededRng::new(5));
        assert_eq!(a.scale(), b.scale());
        let big = apply_feature_scaling(&ds, 50.0, &mut SeededRng::new(5));
        let small = apply_feature_scaling(&ds, 0.1, &mut SeededRng::new(5));
        for (x, y) in big.scale().iter().zip(small.scale()) {
            assert!((x - 500.0 * y).abs() <= 1e-12 * x.abs().max(1.0));
            assert!(x.abs() <= 50.0);
        }
        for i in 0..ds.n_rows() {
            let (c, v) = big.row(i);
            let (c0, v0) = ds.raw_row(i);
            assert_eq!(c, c0);
            for ((&j, x), y) in c.iter().zip(v).zip(v0) {
                assert_eq!(*x, big.scale()[j] * y);
            }
        }
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let ds = generate_synthetic(1, 1, &mut SeededRng::new(3));
        assert_eq!((ds.n_rows(), ds.n_features()), (1, 1));
        let a = generate_synthetic(50, 20, &mut SeededRng::new(4));
        let b = generate_synthetic(50, 20, &mut SeededRng::new(4));
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_libsvm(&a, &mut ba).unwrap();
        write_libsvm(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let density = a.nnz() as f64 / (50.0 * 20.0);
        assert!((0.05..0.15).contains(&density), "density {density}");
        assert_eq!(a.planted().unwrap().len(), 20);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset_strategy() -> impl Strategy<Value = Dataset> {
            (1usize..12).prop_flat_map(|n| {
                proptest::collection::vec(
                    (proptest::collection::btree_map(0..n, -1e6f64..1e6, 0..n), any::<bool>()),
                    1..15,
                )
                .prop_map(move |rows| {
                    let labels = rows.iter().map(|(_, b)| if *b { 1 } else { -1 }).collect();
                    let rows = rows.into_iter().map(|(r, _)| r.into_iter().collect()).collect();
                    Dataset::from_rows(n, rows, labels)
                })
            })
        }

        proptest! {
            #[test]
            fn serialize_parse_round_trip(ds in dataset_strategy()) {
                let mut buf = Vec::new();
                write_libsvm(&ds, &mut buf).unwrap();
                let back = parse_libsvm(Cursor::new(buf), Some(ds.n_features())).unwrap();
                prop_assert_eq!(back, ds);
            }
        }
    }
}
