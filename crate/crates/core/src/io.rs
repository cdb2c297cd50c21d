//! Dataset readers and writers.
//!
//! LIBSVM text: one sample per line, `label index:value ...`, indices 1-based
//! and strictly ascending. School-style tables: delimited numeric rows with the
//! response in the last column.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::MultiTaskProblem;

/// Task sizes of the School layout: 138 tasks of 110 samples and one of 182.
pub fn school_sizes() -> Vec<usize> {
    let mut sizes = vec![110; 138];
    sizes.push(182);
    sizes
}

/// Sparse rows as read from a LIBSVM file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LibsvmData {
    pub labels: Vec<f64>,
    /// `(0-based feature index, value)` pairs per sample.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Largest feature index seen (1-based), i.e. the inferred dimension.
    pub max_index: usize,
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<LibsvmData> {
    let mut data = LibsvmData::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line");
        let Ok(label) = label_tok.parse::<f64>() else {
            return parse_err(lineno, format!("bad label `{label_tok}`"));
        };
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let Some((i, v)) = tok.split_once(':') else {
                return parse_err(lineno, format!("expected index:value, got `{tok}`"));
            };
            let index: usize = match i.parse() {
                Ok(k) if k >= 1 => k,
                _ => return parse_err(lineno, format!("bad feature index `{i}`")),
            };
            if index <= last {
                return parse_err(lineno, format!("feature indices not ascending at `{tok}`"));
            }
            let Ok(value) = v.parse::<f64>() else {
                return parse_err(lineno, format!("bad feature value `{v}`"));
            };
            last = index;
            row.push((index - 1, value));
        }
        data.max_index = data.max_index.max(last);
        data.labels.push(label);
        data.rows.push(row);
    }
    Ok(data)
}

/// Contiguous split of `m` samples into `n` tasks; the remainder goes to the last task.
pub fn split_sizes(m: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || m < n {
        return Err(Error::InvalidInput(format!("cannot split {m} samples into {n} tasks")));
    }
    let base = m / n;
    let mut sizes = vec![base; n];
    sizes[n - 1] += m - base * n;
    Ok(sizes)
}

fn scale_to_unit(v: &mut [f64]) {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
}

/// Builds dense task blocks from stacked rows.
fn split_into_problem(rows: Vec<Vec<f64>>, y: Vec<f64>, d: usize, sizes: &[usize]) -> Result<MultiTaskProblem> {
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let mut block = Array2::zeros((s, d));
        for (r, row) in rows[start..start + s].iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                block[[r, c]] = v;
            }
        }
        blocks.push(block);
        start += s;
    }
    MultiTaskProblem::new(blocks, y)
}

/// Dense problem from parsed LIBSVM rows.
///
/// `features` overrides the inferred dimension; with `normalize`, every row of
/// the design and the response vector are scaled to unit norm.
pub fn libsvm_to_problem(data: &LibsvmData, tasks: usize, normalize: bool, features: Option<usize>) -> Result<MultiTaskProblem> {
    let d = features.unwrap_or(data.max_index);
    if d < data.max_index {
        return Err(Error::InvalidInput(format!("feature index {} exceeds the requested dimension {d}", data.max_index)));
    }
    if d == 0 {
        return Err(Error::InvalidInput("no features".into()));
    }
    let sizes = split_sizes(data.rows.len(), tasks)?;
    let mut rows: Vec<Vec<f64>> = data
        .rows
        .iter()
        .map(|sparse| {
            let mut dense = vec![0.0; d];
            for &(k, v) in sparse {
                dense[k] = v;
            }
            dense
        })
        .collect();
    let mut y = data.labels.clone();
    if normalize {
        rows.iter_mut().for_each(|r| scale_to_unit(r));
        scale_to_unit(&mut y);
    }
    split_into_problem(rows, y, d, &sizes)
}

pub fn load_libsvm(path: impl AsRef<Path>, tasks: usize, normalize: bool, features: Option<usize>) -> Result<MultiTaskProblem> {
    let data = parse_libsvm(BufReader::new(File::open(path)?))?;
    libsvm_to_problem(&data, tasks, normalize, features)
}

/// Writes the stacked samples of `problem`; zero entries are omitted.
pub fn write_libsvm<W: Write>(problem: &MultiTaskProblem, mut out: W) -> Result<()> {
    let y = problem.y();
    let mut row = 0;
    for block in problem.blocks() {
        for r in block.rows() {
            write!(out, "{}", y[row])?;
            for (c, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    write!(out, " {}:{}", c + 1, v)?;
                }
            }
            writeln!(out)?;
            row += 1;
        }
    }
    Ok(())
}

/// Numeric rows of a delimited table (commas, tabs or spaces). A first line
/// that does not parse is taken as a header.
pub fn parse_table<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(fields.len());
                continue;
            }
            Err(e) => return parse_err(lineno, format!("non-numeric field: {e}")),
        };
        match width {
            Some(w) if w != values.len() => {
                return parse_err(lineno, format!("expected {w} fields, found {}", values.len()));
            }
            _ => width = Some(values.len()),
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Centers every column and scales it to unit (population) variance.
/// Constant columns are left at zero.
pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(width) = rows.first().map(Vec::len) else { return };
    let count = rows.len() as f64;
    for c in 0..width {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / count;
        rows.iter_mut().for_each(|r| r[c] -= mean);
        let var = rows.iter().map(|r| r[c] * r[c]).sum::<f64>() / count;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            rows.iter_mut().for_each(|r| r[c] = 0.0);
        } else {
            rows.iter_mut().for_each(|r| r[c] /= sd);
        }
    }
}

/// Problem from a standardized table split into consecutive tasks of `sizes`.
pub fn table_to_problem(mut rows: Vec<Vec<f64>>, sizes: &[usize]) -> Result<MultiTaskProblem> {
    let total: usize = sizes.iter().sum();
    if total != rows.len() {
        return Err(Error::InvalidInput(format!("task sizes sum to {total} but the table has {} rows", rows.len())));
    }
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 {
        return Err(Error::InvalidInput("table needs at least one feature and a response column".into()));
    }
    standardize_columns(&mut rows);
    let y: Vec<f64> = rows.iter().map(|r| r[width - 1]).collect();
    rows.iter_mut().for_each(|r| {
        r.pop();
    });
    split_into_problem(rows, y, width - 1, sizes)
}

pub fn load_school_layout(path: impl AsRef<Path>, sizes: &[usize]) -> Result<MultiTaskProblem> {
    let rows = parse_table(BufReader::new(File::open(path)?))?;
    table_to_problem(rows, sizes)
}
