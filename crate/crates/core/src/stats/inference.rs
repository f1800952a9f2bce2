use nalgebra::DVector;
use serde::Serialize;

use super::{chi2_sf, CountModel, DesignMatrix, FitResult, StatsError};

/// Poisson goodness of fit. `p_value` is the Pearson statistic's upper tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofResult {
    pub pearson_chi2: f64,
    pub deviance: f64,
    pub df: usize,
    pub p_value: f64,
    pub deviance_p_value: f64,
}

pub fn poisson_gof(fit: &FitResult, design: &DesignMatrix) -> Result<GofResult, StatsError> {
    if fit.model != CountModel::Poisson {
        return Err(StatsError::WrongModel { expected: "poisson" });
    }
    if fit.design_fingerprint != design.fingerprint() {
        return Err(StatsError::DesignMismatch);
    }
    let mu = (design.x() * DVector::from_vec(fit.coefficients())).map(f64::exp);
    let (mut pearson, mut deviance) = (0.0, 0.0);
    for (i, (&y, &m)) in design.y().iter().zip(mu.iter()).enumerate() {
        if m == 0.0 {
            return Err(StatsError::ZeroMean(i));
        }
        pearson += (y - m).powi(2) / m;
        let ylogy = if y == 0.0 { 0.0 } else { y * (y / m).ln() };
        deviance += 2.0 * (ylogy - (y - m));
    }
    // Rounding can leave a perfect fit a hair below zero.
    let deviance = deviance.max(0.0);
    let df = design.n() - design.p();
    Ok(GofResult {
        pearson_chi2: pearson,
        deviance,
        df,
        p_value: chi2_sf(pearson, df as f64),
        deviance_p_value: chi2_sf(deviance, df as f64),
    })
}

/// Likelihood-ratio test of α = 0 against the boundary mixture
/// ½·χ²₀ + ½·χ²₁ ("chibar2(01)").
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrAlphaResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn lr_test_alpha(poisson: &FitResult, negbin: &FitResult) -> Result<LrAlphaResult, StatsError> {
    if poisson.model != CountModel::Poisson {
        return Err(StatsError::WrongModel { expected: "poisson" });
    }
    if negbin.model != CountModel::Negbin {
        return Err(StatsError::WrongModel { expected: "negbin" });
    }
    if poisson.design_fingerprint != negbin.design_fingerprint {
        return Err(StatsError::DesignMismatch);
    }
    let statistic = (2.0 * (negbin.log_likelihood - poisson.log_likelihood)).max(0.0);
    Ok(LrAlphaResult {
        statistic,
        p_value: 0.5 * chi2_sf(statistic, 1.0),
    })
}
