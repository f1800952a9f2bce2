use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::MetricsConfig;
use crate::records::{CaseSchema, ExclusionRules};
use crate::stats::FitOptions;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SURGNET_OUT_DIR";

/// Covariates available for correlation and regression, in case-row order.
pub const FEATURES: [&str; 9] = [
    "age",
    "teamSize",
    "typSurgery",
    "avgBtwn",
    "avgClos",
    "avgEigen",
    "avgClust",
    "avgDeg",
    "dMale",
];

/// Reduced model covariates.
pub const DEFAULT_REGRESSORS: [&str; 7] = [
    "age",
    "teamSize",
    "typSurgery",
    "avgBtwn",
    "avgClos",
    "avgEigen",
    "dMale",
];

/// Team-level network measures entering the correlation matrix.
pub const DEFAULT_CORRELATES: [&str; 5] = ["avgBtwn", "avgClos", "avgEigen", "avgClust", "avgDeg"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CodesetSource {
    Embedded,
    File(PathBuf),
}

impl TryFrom<String> for CodesetSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.trim() {
            "" => Err("codeset must be `embedded` or a file path".into()),
            "embedded" => Ok(CodesetSource::Embedded),
            path => Ok(CodesetSource::File(path.into())),
        }
    }
}

impl From<CodesetSource> for String {
    fn from(c: CodesetSource) -> String {
        c.to_string()
    }
}

impl fmt::Display for CodesetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodesetSource::Embedded => f.write_str("embedded"),
            CodesetSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Covariates of the count models, also screened by VIF.
    pub columns: Vec<String>,
    /// Columns of the rank-correlation matrix.
    pub correlation_columns: Vec<String>,
    /// Expand `typSurgery` into indicators, lowest observed code as reference.
    pub one_hot_surgery: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            columns: DEFAULT_REGRESSORS.iter().map(|s| s.to_string()).collect(),
            correlation_columns: DEFAULT_CORRELATES.iter().map(|s| s.to_string()).collect(),
            one_hot_surgery: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    /// Not part of the recorded configuration: moving outputs must not change
    /// the config hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub window_days: u32,
    pub seed: u64,
    pub codeset: CodesetSource,
    /// Count each distinct complication code once per case.
    pub distinct_codes: bool,
    pub schema: CaseSchema,
    pub exclusions: ExclusionRules,
    pub metrics: MetricsConfig,
    pub fit: FitOptions,
    pub regression: RegressionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("cases.csv"),
            output_dir: PathBuf::from("out"),
            window_days: 365,
            seed: 42,
            codeset: CodesetSource::Embedded,
            distinct_codes: false,
            schema: CaseSchema::default(),
            exclusions: ExclusionRules::default(),
            metrics: MetricsConfig::default(),
            fit: FitOptions::default(),
            regression: RegressionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }

    /// Reads a TOML file. Relative input and codeset paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if let CodesetSource::File(p) = &cfg.codeset {
            if p.is_relative() {
                cfg.codeset = CodesetSource::File(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |x: f64| x > 0.0;
        if self.window_days == 0 {
            return Err("window_days must be at least 1".into());
        }
        if self.input.as_os_str().is_empty() {
            return Err("input path is empty".into());
        }
        if !positive(self.metrics.eigen_tol) || self.metrics.eigen_max_iter == 0 {
            return Err("metrics.eigen_tol and metrics.eigen_max_iter must be positive".into());
        }
        if self.fit.max_iter == 0 || !positive(self.fit.grad_tol) || !positive(self.fit.rel_ll_tol) {
            return Err("fit.max_iter, fit.grad_tol and fit.rel_ll_tol must be positive".into());
        }
        let check = |list: &[String], what: &str| -> Result<(), String> {
            for c in list {
                if !FEATURES.contains(&c.as_str()) {
                    return Err(format!(
                        "unknown {what} column `{c}`; expected one of {}",
                        FEATURES.join(", ")
                    ));
                }
            }
            let mut seen = std::collections::BTreeSet::new();
            if let Some(dup) = list.iter().find(|c| !seen.insert(c.as_str())) {
                return Err(format!("{what} column `{dup}` listed twice"));
            }
            Ok(())
        };
        check(&self.regression.columns, "regression")?;
        check(&self.regression.correlation_columns, "correlation")?;
        if self.regression.correlation_columns.len() == 1 {
            return Err("correlation needs at least two columns".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of every recorded setting.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.regression.columns.len(), 7);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn nested_overrides_and_codeset() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
            input = "data/cases.tsv"
            window_days = 180
            codeset = "codes.tsv"
            [schema]
            delimiter = "\t"
            [metrics]
            eigen_tol = 1e-8
            [regression]
            columns = ["age", "teamSize"]
            one_hot_surgery = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.window_days, 180);
        assert_eq!(cfg.schema.delimiter, '\t');
        assert_eq!(cfg.schema.providers, "providers");
        assert_eq!(cfg.metrics.eigen_tol, 1e-8);
        assert_eq!(cfg.metrics.eigen_max_iter, 10_000);
        assert_eq!(cfg.codeset, CodesetSource::File("codes.tsv".into()));
        assert!(cfg.regression.one_hot_surgery);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        let mut cfg = PipelineConfig::default();
        cfg.regression.columns.push("height".into());
        assert!(cfg.validate().unwrap_err().contains("height"));
        let cfg = PipelineConfig {
            window_days: 0,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig { seed: 7, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
