//! Datasets, generative model descriptions and dataset CSV I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Covariates (`n x d`, row-major) and responses (`n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Matrix,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(covariates: Matrix, responses: Vec<f64>) -> Result<Self> {
        if covariates.rows() != responses.len() {
            return Err(Error::DimensionMismatch {
                what: "responses length vs covariate rows",
                expected: covariates.rows(),
                got: responses.len(),
            });
        }
        if !covariates.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        if !responses.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("responses"));
        }
        Ok(Self {
            covariates,
            responses,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, responses)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn y(&self, i: usize) -> f64 {
        self.responses[i]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x(i));
            ys.push(self.responses[i]);
        }
        Dataset {
            covariates: Matrix::from_row_major(indices.len(), d, data)
                .expect("row-major length matches by construction"),
            responses: ys,
        }
    }

    /// Same covariates, new responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.covariates.clone(), responses)
    }

    /// `(1/n) X^T X`.
    pub fn second_moment(&self) -> Matrix {
        let (gram, _) = self.normal_equations();
        gram.scaled(1.0 / self.len().max(1) as f64)
    }

    /// `(X^T X, X^T y)`, accumulated row by row.
    pub fn normal_equations(&self) -> (Matrix, Vec<f64>) {
        let d = self.dim();
        let mut gram = Matrix::zeros(d, d);
        let mut xty = vec![0.0; d];
        for i in 0..self.len() {
            let x = self.x(i);
            let y = self.responses[i];
            for a in 0..d {
                xty[a] += x[a] * y;
                for b in 0..=a {
                    gram[(a, b)] += x[a] * x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        (gram, xty)
    }

    /// Writes `x0,...,x{d-1},y` with shortest round-trip decimal floats and LF newlines.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(csv_err)?;
        let mut record: Vec<String> = Vec::with_capacity(d + 1);
        for i in 0..self.len() {
            record.clear();
            record.extend(self.x(i).iter().map(|v| format!("{v:?}")));
            record.push(format!("{:?}", self.responses[i]));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let header = r.headers().map_err(csv_err)?.clone();
        let width = header.len();
        if width < 2 || &header[width - 1] != "y" {
            return Err(parse_err("header must be x0,...,x{d-1},y".into()));
        }
        for (j, name) in header.iter().take(width - 1).enumerate() {
            if name != format!("x{j}") {
                return Err(parse_err(format!("column {j} is `{name}`, expected `x{j}`")));
            }
        }
        let d = width - 1;
        let mut data = Vec::new();
        let mut ys = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(format!("row {}: column {j}: {e}", line + 1)))?;
                if j < d {
                    data.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        Dataset::new(Matrix::from_row_major(ys.len(), d, data)?, ys)
    }
}

/// Sub-Weibull tail parameters `(K, a)`; `a = 1/2` is the sub-Gaussian case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubWeibullParams {
    k: f64,
    a: f64,
}

impl SubWeibullParams {
    pub fn new(k: f64, a: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid("K", format!("must be positive, got {k}")));
        }
        if !(a >= 0.5 && a.is_finite()) {
            return Err(invalid("a", format!("must be at least 0.5, got {a}")));
        }
        Ok(Self { k, a })
    }

    /// Skips validation; threshold formulas accept any `a >= 0`, which tests use
    /// to switch the logarithmic factor off.
    pub fn unchecked(k: f64, a: f64) -> Self {
        Self { k, a }
    }

    pub fn sub_gaussian() -> Self {
        Self { k: 1.0, a: 0.5 }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn a(&self) -> f64 {
        self.a
    }
}

/// Label-noise family of the generative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// `N(0, sigma^2)`.
    Gaussian,
    /// `U[-sigma, sigma]`.
    Uniform,
    /// Symmetrized Pareto with tail index `k + 1`, rescaled to variance `sigma^2`.
    HeavyTailed { k: u32, kappa2: f64 },
}

/// Ground truth for synthetic data: `y = <x, w*> + z`, `x ~ N(0, covariance)`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub w_star: Vec<f64>,
    pub sigma: f64,
    pub covariance: Matrix,
    pub noise_family: NoiseFamily,
    pub project_covariates_to_sphere: bool,
}

impl ModelSpec {
    pub fn new(
        w_star: Vec<f64>,
        sigma: f64,
        covariance: Matrix,
        noise_family: NoiseFamily,
        project_covariates_to_sphere: bool,
    ) -> Result<Self> {
        let spec = Self {
            w_star,
            sigma,
            covariance,
            noise_family,
            project_covariates_to_sphere,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_star.len();
        if self.covariance.rows() != d || self.covariance.cols() != d {
            return Err(Error::DimensionMismatch {
                what: "covariance vs w*",
                expected: d,
                got: self.covariance.rows(),
            });
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be finite and nonnegative, got {}", self.sigma)));
        }
        if !self.covariance.is_symmetric(1e-12) {
            return Err(invalid("covariance", "must be symmetric"));
        }
        Cholesky::new(&self.covariance)?;
        if let NoiseFamily::HeavyTailed { k, kappa2 } = self.noise_family {
            if k < 4 {
                return Err(invalid("moment_k", format!("heavy-tailed noise needs k >= 4, got {k}")));
            }
            if !(kappa2 > 0.0) {
                return Err(invalid("kappa2", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }
}

/// `diag(kappa, 1, ..., 1)`: condition number `kappa` with the large direction first.
pub fn condition_covariance(d: usize, kappa: f64) -> Matrix {
    let mut diag = vec![1.0; d];
    if let Some(first) = diag.first_mut() {
        *first = kappa;
    }
    Matrix::from_diag(&diag)
}
