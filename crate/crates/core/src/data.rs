//! Paired covariate/response samples and their CSV form.
//!
//! The CSV layout is a header `x1,...,xd,y1,...,yk` followed by one row per
//! sample. Values are written with 17 significant digits so that a write/read
//! cycle reproduces every double bit-exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{shape_err, Error, Result};

/// Formats a double with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad number {field:?}: {e}")))
}

/// `D = {(X_i, Y_i)}` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    covariate_dim: usize,
    response_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl RegressionDataset {
    pub fn new(covariate_dim: usize, response_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if covariate_dim == 0 || response_dim == 0 {
            return Err(shape_err("covariate and response dimensions must be positive"));
        }
        if !x.len().is_multiple_of(covariate_dim) || !y.len().is_multiple_of(response_dim) {
            return Err(shape_err("buffer length is not a multiple of the row width"));
        }
        if x.len() / covariate_dim != y.len() / response_dim {
            return Err(shape_err(format!(
                "{} covariate rows but {} response rows",
                x.len() / covariate_dim,
                y.len() / response_dim
            )));
        }
        Ok(Self {
            covariate_dim,
            response_dim,
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.covariate_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn response_dim(&self) -> usize {
        self.response_dim
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.covariate_dim..(i + 1) * self.covariate_dim]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.response_dim..(i + 1) * self.response_dim]
    }

    pub fn header(&self) -> String {
        let mut cols: Vec<String> = (1..=self.covariate_dim).map(|j| format!("x{j}")).collect();
        cols.extend((1..=self.response_dim).map(|j| format!("y{j}")));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for (j, v) in self.x_row(i).iter().chain(self.y_row(i)).enumerate() {
                if j > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", fmt_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the CSV layout; the header determines `d_X` and `d_Y`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let (dx, dy) = parse_header(&header)?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dx + dy {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    dx + dy
                )));
            }
            for f in &fields[..dx] {
                x.push(parse_f64(f)?);
            }
            for f in &fields[dx..] {
                y.push(parse_f64(f)?);
            }
        }
        Self::new(dx, dy, x, y)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let mut dx = 0;
    let mut dy = 0;
    for col in header.trim().split(',') {
        let col = col.trim();
        if let Some(rest) = col.strip_prefix('x') {
            if dy > 0 || rest.parse::<usize>().ok() != Some(dx + 1) {
                return Err(Error::Parse(format!("unexpected column {col:?}")));
            }
            dx += 1;
        } else if let Some(rest) = col.strip_prefix('y') {
            if rest.parse::<usize>().ok() != Some(dy + 1) {
                return Err(Error::Parse(format!("unexpected column {col:?}")));
            }
            dy += 1;
        } else {
            return Err(Error::Parse(format!("unexpected column {col:?}")));
        }
    }
    if dx == 0 || dy == 0 {
        return Err(Error::Parse("header needs at least one x and one y column".into()));
    }
    Ok((dx, dy))
}

/// Reads a header-led covariate matrix (`x1,...,xd`), e.g. evaluation points.
pub fn read_covariates_csv<R: BufRead>(input: R) -> Result<(usize, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty covariate file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let dx = cols.iter().take_while(|c| c.trim().starts_with('x')).count();
    if dx == 0 {
        return Err(Error::Parse("covariate header must start with x1".into()));
    }
    let mut x = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < dx {
            return Err(Error::Parse(format!("row has {} fields, expected {dx}", fields.len())));
        }
        for f in &fields[..dx] {
            x.push(parse_f64(f)?);
        }
    }
    Ok((dx, x))
}
