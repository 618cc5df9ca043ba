//! The `srnmat` text format and model snapshots built from it.
//!
//! ```text
//! srnmat 1
//! <rows> <cols>
//! <cols space-separated reals>   (rows lines)
//! ```
//!
//! Values are written with 17 significant digits so a write/read cycle is
//! exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fmt::exact;
use crate::linalg::DenseMatrix;
use crate::nn::{Activation, Layer, MlpModel};

const HEADER: &str = "srnmat 1";

pub fn to_string(w: &DenseMatrix) -> String {
    let mut s = format!("{HEADER}\n{} {}\n", w.rows(), w.cols());
    for i in 0..w.rows() {
        let row: Vec<String> = w.row(i).iter().map(|&x| exact(x)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated tokens with their 1-based starting column.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize + 1, t))
}

pub fn parse(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == HEADER => {}
        Some((n, _)) => return Err(perr(n, 1, format!("expected header `{HEADER}`"))),
        None => return Err(perr(1, 1, "empty file")),
    }
    let (n, dims) = lines
        .next()
        .ok_or_else(|| perr(2, 1, "missing dimension line"))?;
    let dims: Vec<(usize, &str)> = tokens(dims).collect();
    if dims.len() != 2 {
        return Err(perr(
            n,
            1,
            format!("expected `<rows> <cols>`, got {} fields", dims.len()),
        ));
    }
    let dim = |(col, t): (usize, &str)| -> Result<usize> {
        match t.parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(perr(
                n,
                col,
                format!("expected a positive integer, got {t:?}"),
            )),
        }
    };
    let rows = dim(dims[0])?;
    let cols = dim(dims[1])?;

    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (n, line) = lines
            .next()
            .ok_or_else(|| perr(3 + r, 1, format!("expected {rows} data rows, found {r}")))?;
        let mut count = 0;
        for (col, t) in tokens(line) {
            count += 1;
            if count > cols {
                return Err(perr(n, col, format!("expected {cols} values")));
            }
            let x: f64 = t
                .parse()
                .map_err(|_| perr(n, col, format!("not a number: {t:?}")))?;
            if !x.is_finite() {
                return Err(perr(n, col, "value is not finite"));
            }
            data.push(x);
        }
        if count < cols {
            return Err(perr(
                n,
                line.len() + 1,
                format!("expected {cols} values, got {count}"),
            ));
        }
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(perr(n, 1, "trailing data after the last row"));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn read(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write(path: impl AsRef<Path>, w: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_string(w)).map_err(|e| Error::io(path, e))
}

/// Writes `layer<i>_W.srnmat`, `layer<i>_b.srnmat` (a `1 x n` matrix) and a
/// `meta` file listing the activations on one line. The directory is created
/// if needed.
pub fn save_model(dir: impl AsRef<Path>, model: &MlpModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut acts = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        write(dir.join(format!("layer{i}_W.srnmat")), &layer.weight)?;
        let b = DenseMatrix::new(1, layer.bias.len(), layer.bias.clone())?;
        write(dir.join(format!("layer{i}_b.srnmat")), &b)?;
        acts.push(layer.activation.name());
    }
    let meta = dir.join("meta");
    fs::write(&meta, acts.join(" ") + "\n").map_err(|e| Error::io(&meta, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<MlpModel> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta");
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let first = meta.lines().next().unwrap_or("");
    let mut layers = Vec::new();
    for (i, (col, name)) in tokens(first).enumerate() {
        let act = Activation::parse(name)
            .ok_or_else(|| perr(1, col, format!("unknown activation {name:?}")))?;
        let w = read(dir.join(format!("layer{i}_W.srnmat")))?;
        let b = read(dir.join(format!("layer{i}_b.srnmat")))?;
        if b.rows() != 1 {
            return Err(Error::mismatch(
                "a 1 x n bias matrix",
                format!("{} x {}", b.rows(), b.cols()),
            ));
        }
        layers.push(Layer::new(w, b.into_vec(), act)?);
    }
    if layers.is_empty() {
        return Err(perr(1, 1, "meta lists no layers"));
    }
    MlpModel::new(layers)
}
