use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fmt::exact;
use crate::linalg::DenseMatrix;
use crate::rng::seeded;

/// Labelled inputs: one row of `inputs` per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseMatrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::mismatch(
                format!("{} labels", inputs.rows()),
                labels.len(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} is not below n_classes = {n_classes}"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copy with every label replaced by a uniform draw from `0..n_classes`.
    pub fn randomize_labels(&self, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let labels = (0..self.len())
            .map(|_| rng.random_range(0..self.n_classes))
            .collect();
        Dataset {
            inputs: self.inputs.clone(),
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Shuffles, then holds out `round(frac * n)` rows (at least one row
    /// stays on each side when possible). The held-out part is `None` when
    /// it would be empty.
    pub fn split(&self, holdout_frac: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        if !(0.0..1.0).contains(&holdout_frac) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must be in [0, 1), got {holdout_frac}"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seeded(seed));
        let mut n_test = (holdout_frac * n as f64).round() as usize;
        if holdout_frac > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let (test_idx, train_idx) = idx.split_at(n_test);
        let test = if test_idx.is_empty() {
            None
        } else {
            Some(self.subset(test_idx)?)
        };
        Ok((self.subset(train_idx)?, test))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "a dataset needs at least one row".into(),
            ));
        }
        let data: Vec<f64> = indices
            .iter()
            .flat_map(|&i| self.input(i).iter().copied())
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(
            DenseMatrix::new(indices.len(), self.dim(), data)?,
            labels,
            self.n_classes,
        )
    }

    /// `f1,...,fd,label` per line, no header.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            for x in self.input(i) {
                s.push_str(&exact(*x));
                s.push(',');
            }
            s.push_str(&self.labels[i].to_string());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// `n` points in `n_classes` Gaussian clusters of standard deviation
/// `spread` around centres drawn uniformly from `[-1, 1]^d`. Labels cycle
/// through the classes so every class gets `n / n_classes` points (up to
/// rounding).
pub fn make_blobs(n: usize, d: usize, n_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || n_classes == 0 {
        return Err(Error::InvalidArgument(
            "make_blobs needs n, d, n_classes >= 1".into(),
        ));
    }
    if !(spread >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spread must be nonnegative, got {spread}"
        )));
    }
    let mut rng = seeded(seed);
    let centres: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % n_classes;
        for c in &centres[y] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(c + spread * z);
        }
        labels.push(y);
    }
    Dataset::new(DenseMatrix::new(n, d, data)?, labels, n_classes)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Parses `f1,...,fd,label` rows. `n_classes` is one more than the largest label.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedCsv { line, message };
        if rec.len() < 2 {
            return Err(bad(format!(
                "expected at least one feature and a label, got {} fields",
                rec.len()
            )));
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(bad(format!("expected {w} fields, got {}", rec.len())));
            }
            _ => {}
        }
        let n = rec.len();
        for (j, field) in rec.iter().take(n - 1).enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("field {} is not a number: {field:?}", j + 1)))?;
            if !x.is_finite() {
                return Err(bad(format!("field {} is not finite", j + 1)));
            }
            data.push(x);
        }
        let label_field = rec.get(n - 1).unwrap_or_default().trim();
        let y: usize = label_field.parse().map_err(|_| {
            bad(format!(
                "label is not a nonnegative integer: {label_field:?}"
            ))
        })?;
        labels.push(y);
    }
    let Some(width) = width else {
        return Err(Error::MalformedCsv {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        DenseMatrix::new(labels.len(), width - 1, data)?,
        labels,
        n_classes,
    )
}
