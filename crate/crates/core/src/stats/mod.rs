//! Correlation, collinearity screening and count regression.

mod count;
mod inference;
mod ols;
mod spearman;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

pub use count::{
    negbin_fit, negbin_fit_from, negbin_gradient_hessian, negbin_loglik, poisson_fit, poisson_gradient_hessian,
    poisson_loglik, FitOptions,
};
pub use inference::{lr_test_alpha, poisson_gof, GofResult, LrAlphaResult};
pub use ols::{ols_fit, vif, OlsFit, VifRow};
pub use spearman::{average_ranks, spearman, spearman_matrix, SpearmanMatrix};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Residual norm, relative to the column norm, below which a column counts
/// as a linear combination of the others.
const COLLINEAR_TOL: f64 = 1e-9;

/// Name of the intercept column, placed last as in Stata output.
pub const INTERCEPT: &str = "_cons";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need more observations than parameters (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("column `{0}` has a different length from the response")]
    LengthMismatch(String),
    #[error("design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("response value {0} at row {1} is not a non-negative integer count")]
    NonCountResponse(f64, usize),
    #[error("no finite maximum likelihood estimate: {0}")]
    Boundary(String),
    #[error("{model} fit did not converge after {iterations} iterations (gradient max-abs {grad_max:e})")]
    NonConvergence {
        model: &'static str,
        iterations: usize,
        grad_max: f64,
        trace: Vec<IterationTrace>,
    },
    #[error("fits were estimated on different designs")]
    DesignMismatch,
    #[error("expected a {expected} fit")]
    WrongModel { expected: &'static str },
    #[error("fitted mean is zero at row {0}")]
    ZeroMean(usize),
}

/// Response vector plus named covariate columns (intercept last when present).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    has_intercept: bool,
    dropped_rows: usize,
}

impl DesignMatrix {
    /// Assembles a design from optional values, dropping any row where the
    /// response or a covariate is missing or non-finite.
    pub fn from_columns(
        y: &[Option<f64>],
        columns: &[(String, Vec<Option<f64>>)],
        intercept: bool,
    ) -> Result<Self, StatsError> {
        for (name, col) in columns {
            if col.len() != y.len() {
                return Err(StatsError::LengthMismatch(name.clone()));
            }
        }
        let finite = |v: &Option<f64>| v.filter(|v| v.is_finite());
        let keep: Vec<usize> = (0..y.len())
            .filter(|&i| finite(&y[i]).is_some() && columns.iter().all(|(_, c)| finite(&c[i]).is_some()))
            .collect();

        let p = columns.len() + usize::from(intercept);
        let mut x = DMatrix::zeros(keep.len(), p);
        for (r, &i) in keep.iter().enumerate() {
            for (j, (_, col)) in columns.iter().enumerate() {
                x[(r, j)] = col[i].unwrap();
            }
            if intercept {
                x[(r, p - 1)] = 1.0;
            }
        }
        let mut names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
        if intercept {
            names.push(INTERCEPT.to_string());
        }
        Ok(DesignMatrix {
            names,
            x,
            y: DVector::from_iterator(keep.len(), keep.iter().map(|&i| y[i].unwrap())),
            has_intercept: intercept,
            dropped_rows: y.len() - keep.len(),
        })
    }

    /// Complete data: every value present.
    pub fn from_dense(y: &[f64], columns: &[(&str, &[f64])], intercept: bool) -> Result<Self, StatsError> {
        let cols: Vec<(String, Vec<Option<f64>>)> = columns
            .iter()
            .map(|(n, c)| (n.to_string(), c.iter().map(|&v| Some(v)).collect()))
            .collect();
        let y: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
        Self::from_columns(&y, &cols, intercept)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Same rows, response replaced.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self, StatsError> {
        if y.len() != self.n() {
            return Err(StatsError::LengthMismatch("response".into()));
        }
        Ok(DesignMatrix { y, ..self.clone() })
    }

    /// Drops covariates that are linear combinations of columns kept before
    /// them, scanning the intercept first and then the covariates in order.
    /// Returns the reduced design and the names of the omitted columns.
    pub fn drop_collinear(&self) -> (DesignMatrix, Vec<String>) {
        let p = self.p();
        let mut order: Vec<usize> = (0..p).collect();
        if self.has_intercept {
            order.rotate_right(1);
        }
        let mut kept: Vec<usize> = Vec::new();
        let mut omitted = Vec::new();
        for &j in &order {
            let col = self.x.column(j);
            let norm = col.norm();
            let independent = if norm == 0.0 {
                false
            } else if kept.is_empty() {
                true
            } else {
                let basis = self.x.select_columns(&kept);
                let coef = basis.clone().svd(true, true).solve(&col.into_owned(), 1e-12).ok();
                coef.is_some_and(|c| (col - basis * c).norm() > COLLINEAR_TOL * norm)
            };
            if independent {
                kept.push(j);
            } else {
                omitted.push(self.names[j].clone());
            }
        }
        kept.sort_unstable();
        let reduced = DesignMatrix {
            names: kept.iter().map(|&j| self.names[j].clone()).collect(),
            x: self.x.select_columns(&kept),
            ..self.clone()
        };
        (reduced, omitted)
    }

    pub(crate) fn check_dims(&self) -> Result<(), StatsError> {
        if self.n() <= self.p() {
            return Err(StatsError::TooFewObservations {
                n: self.n(),
                p: self.p(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_counts(&self) -> Result<(), StatsError> {
        match self.y.iter().enumerate().find(|(_, &v)| v < 0.0 || v.fract() != 0.0) {
            Some((i, &v)) => Err(StatsError::NonCountResponse(v, i)),
            None => Ok(()),
        }
    }

    /// Content hash of response and covariates, used to check that two fits
    /// came from the same data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update((self.n() as u64).to_le_bytes());
        for v in self.y.iter().chain(self.x.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CountModel {
    Poisson,
    Negbin,
}

impl CountModel {
    pub fn label(self) -> &'static str {
        match self {
            CountModel::Poisson => "poisson",
            CountModel::Negbin => "negbin",
        }
    }
}

/// One estimate with Wald inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub coef: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl CoefRow {
    pub fn wald(name: impl Into<String>, coef: f64, std_error: f64) -> Self {
        let z = coef / std_error;
        CoefRow {
            name: name.into(),
            coef,
            std_error,
            z,
            p_value: normal_two_sided_p(z),
            ci_low: coef - Z_95 * std_error,
            ci_high: coef + Z_95 * std_error,
        }
    }
}

/// Dispersion estimate of the NB2 model, on both scales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub ln_alpha: f64,
    pub ln_alpha_se: f64,
    pub ln_alpha_ci: (f64, f64),
    pub alpha: f64,
    /// Delta-method standard error, `alpha · se(ln alpha)`.
    pub alpha_se: f64,
    /// Exponentiated ln-alpha interval.
    pub alpha_ci: (f64, f64),
    /// The estimate ran to the alpha = 0 boundary.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub grad_max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: CountModel,
    pub rows: Vec<CoefRow>,
    pub log_likelihood: f64,
    pub alpha: Option<AlphaEstimate>,
    pub n_obs: usize,
    pub iterations: usize,
    pub grad_max: f64,
    pub trace: Vec<IterationTrace>,
    pub design_fingerprint: String,
}

impl FitResult {
    pub fn coefficients(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.coef).collect()
    }

    pub fn coef(&self, name: &str) -> Option<&CoefRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").sf(x)
}
