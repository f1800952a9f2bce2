use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{DesignMatrix, StatsError};

/// Relative pivot size below which a column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Centred when the design has an intercept, uncentred otherwise.
    pub r_squared: f64,
}

fn r_squared(y: &DVector<f64>, fitted: &DVector<f64>, centred: bool) -> f64 {
    let ssr: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let centre = if centred { y.mean() } else { 0.0 };
    let sst: f64 = y.iter().map(|v| (v - centre).powi(2)).sum();
    if sst == 0.0 {
        return 0.0;
    }
    (1.0 - ssr / sst).clamp(0.0, 1.0)
}

/// Least squares by Householder QR. Columns whose pivot collapses relative
/// to the largest pivot are reported as collinear.
pub fn ols_fit(design: &DesignMatrix) -> Result<OlsFit, StatsError> {
    design.check_dims()?;
    let x = design.x();
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let collinear: Vec<String> = (0..r.ncols())
        .filter(|&j| r[(j, j)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE))
        .map(|j| design.names()[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(StatsError::RankDeficient(collinear));
    }
    let qty = qr.q().transpose() * design.y();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient(design.names().to_vec()))?;
    let fitted = x * &beta;
    Ok(OlsFit {
        names: design.names().to_vec(),
        coefficients: beta.iter().copied().collect(),
        r_squared: r_squared(design.y(), &fitted, design.has_intercept()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifRow {
    pub name: String,
    pub r_squared: f64,
    /// `f64::INFINITY` under perfect collinearity.
    pub vif: f64,
    pub tolerance: f64,
}

/// Variance inflation factor of every non-intercept column: `1 / (1 - R²)`
/// from regressing the column on all other columns plus an intercept.
pub fn vif(design: &DesignMatrix) -> Result<Vec<VifRow>, StatsError> {
    design.check_dims()?;
    let x = design.x();
    let n = design.n();
    let covariates: Vec<usize> = (0..design.p())
        .filter(|&j| !(design.has_intercept() && j + 1 == design.p()))
        .collect();

    covariates
        .iter()
        .map(|&j| {
            let target = x.column(j).into_owned();
            let others: Vec<usize> = covariates.iter().copied().filter(|&k| k != j).collect();
            let mut aux = DMatrix::zeros(n, others.len() + 1);
            for (c, &k) in others.iter().enumerate() {
                aux.set_column(c, &x.column(k));
            }
            aux.set_column(others.len(), &DVector::repeat(n, 1.0));

            // SVD tolerates dependence among the other columns.
            let svd = aux.clone().svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            let beta = svd
                .solve(&target, eps)
                .map_err(|_| StatsError::RankDeficient(vec![design.names()[j].clone()]))?;
            let fitted = &aux * beta;

            let mean = target.mean();
            let sst: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
            let r2 = if sst == 0.0 {
                // Constant column: indistinguishable from the intercept.
                1.0
            } else {
                let ssr: f64 = target.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                (1.0 - ssr / sst).clamp(0.0, 1.0)
            };
            let vif = if 1.0 - r2 <= 1e-12 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - r2)
            };
            Ok(VifRow {
                name: design.names()[j].clone(),
                r_squared: r2,
                vif,
                tolerance: 1.0 / vif,
            })
        })
        .collect()
}
