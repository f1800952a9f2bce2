//! Seeded synthetic case files with known complication-model coefficients.
//!
//! Cases get a team drawn without replacement from providers with Zipf-like
//! popularity, then the network stages run on them exactly as the pipeline
//! would, and the complication count of each case is drawn from an NB2
//! distribution whose mean uses those team measures. The count is encoded as
//! that many codeset diagnosis codes mixed with unrelated codes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::{compute_segment_metrics, join_cases, project_segments, CaseRow, FailureKind, PipelineError, Stage};
use crate::metrics::MetricsConfig;
use crate::outcomes::ComplicationCodeset;
use crate::records::{self, CaseRecord, Gender, MAX_DX_CODES};

/// Diagnosis codes outside the complication classes, used as filler.
const NOISE_CODES: [&str; 10] = [
    "250.00", "401.9", "272.4", "V45.81", "E878.8", "428.0", "427.31", "585.9", "414.01", "530.81",
];

/// NB2 mean model `ln μ = xβ` over the reduced-model covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplicationModel {
    pub intercept: f64,
    pub age: f64,
    pub team_size: f64,
    pub typ_surgery: f64,
    pub avg_btwn: f64,
    pub avg_clos: f64,
    pub avg_eigen: f64,
    pub d_male: f64,
    /// NB2 dispersion; 0 gives Poisson counts.
    pub alpha: f64,
}

impl Default for ComplicationModel {
    fn default() -> Self {
        ComplicationModel {
            intercept: -1.55,
            age: 0.007,
            team_size: 0.15,
            typ_surgery: 0.017,
            avg_btwn: -20.0,
            avg_clos: 1.0,
            avg_eigen: -0.5,
            d_male: 0.1,
            alpha: 1.5,
        }
    }
}

impl ComplicationModel {
    /// Coefficients keyed by design column name.
    pub fn coefficients(&self) -> BTreeMap<String, f64> {
        [
            ("age", self.age),
            ("teamSize", self.team_size),
            ("typSurgery", self.typ_surgery),
            ("avgBtwn", self.avg_btwn),
            ("avgClos", self.avg_clos),
            ("avgEigen", self.avg_eigen),
            ("dMale", self.d_male),
            (crate::stats::INTERCEPT, self.intercept),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn mean(&self, row: &CaseRow) -> f64 {
        let eta = self.intercept
            + self.age * row.age as f64
            + self.team_size * row.team_size as f64
            + self.typ_surgery * row.typ_surgery as f64
            + self.avg_btwn * row.avg_btwn
            + self.avg_clos * row.avg_clos
            + self.avg_eigen * row.avg_eigen
            + self.d_male * row.d_male as f64;
        eta.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_cases: usize,
    pub n_providers: usize,
    /// Window used to compute the team measures that drive the counts.
    pub window_days: u32,
    /// Start days are uniform on `[0, span_days)`.
    pub span_days: u32,
    /// Team size is `1 + Poisson(mean_team_size - 1)`, capped at `n_providers`.
    pub mean_team_size: f64,
    /// Provider `k` (1-based) is drawn with weight `k^-popularity_exponent`.
    pub popularity_exponent: f64,
    /// Length of stay beyond the first day, Poisson with this mean.
    pub mean_extra_stay: f64,
    /// Upper bound of unrelated codes added per case.
    pub max_noise_codes: usize,
    pub model: ComplicationModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_cases: 1000,
            n_providers: 400,
            window_days: 365,
            span_days: 1250,
            mean_team_size: 8.0,
            popularity_exponent: 0.8,
            mean_extra_stay: 3.0,
            max_noise_codes: 4,
            model: ComplicationModel::default(),
        }
    }
}

/// Sidecar describing how a synthetic file was generated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub coefficients: BTreeMap<String, f64>,
    pub alpha: f64,
    pub segments: usize,
    pub mean_team_size: f64,
    pub mean_complications: f64,
    /// Counts above the diagnosis-code capacity, truncated to it.
    pub capped_cases: usize,
}

fn invalid(message: impl Into<String>) -> PipelineError {
    PipelineError::new(Stage::Config, FailureKind::Config, message)
}

fn validate(cfg: &SynthConfig) -> Result<(), PipelineError> {
    if cfg.n_cases == 0 || cfg.n_providers == 0 {
        return Err(invalid("n_cases and n_providers must be at least 1"));
    }
    if cfg.window_days == 0 || cfg.span_days == 0 {
        return Err(invalid("window_days and span_days must be at least 1"));
    }
    if cfg.mean_team_size.is_nan()
        || cfg.mean_team_size < 1.0
        || cfg.mean_extra_stay.is_nan()
        || cfg.mean_extra_stay < 0.0
        || !cfg.popularity_exponent.is_finite()
    {
        return Err(invalid(
            "mean_team_size must be >= 1, mean_extra_stay >= 0, popularity_exponent finite",
        ));
    }
    if cfg.model.alpha.is_nan() || cfg.model.alpha < 0.0 {
        return Err(invalid("model.alpha must be non-negative"));
    }
    Ok(())
}

fn poisson_draw<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means.
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}

fn nb2_draw<R: Rng>(rng: &mut R, mu: f64, alpha: f64) -> u64 {
    if alpha == 0.0 {
        return poisson_draw(rng, mu);
    }
    let rate = Gamma::new(1.0 / alpha, alpha * mu).map_or(0.0, |g| g.sample(rng));
    poisson_draw(rng, rate)
}

fn generate_cases(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<CaseRecord> {
    let width = cfg.n_providers.to_string().len();
    let providers: Vec<(String, f64)> = (1..=cfg.n_providers)
        .map(|k| (format!("P{k:0width$}"), (k as f64).powf(-cfg.popularity_exponent)))
        .collect();
    let case_width = cfg.n_cases.to_string().len();

    (1..=cfg.n_cases)
        .map(|i| {
            let size = (1 + poisson_draw(rng, cfg.mean_team_size - 1.0) as usize).min(cfg.n_providers);
            let team = providers
                .choose_multiple_weighted(&mut *rng, size, |p| p.1)
                .expect("positive finite weights")
                .map(|p| p.0.clone())
                .collect();
            let day = rng.random_range(0..cfg.span_days);
            let stay = 1 + poisson_draw(rng, cfg.mean_extra_stay) as u32;
            let gender = match rng.random_range(0..100) {
                0..48 => Gender::Male,
                48..98 => Gender::Female,
                _ => Gender::Other,
            };
            CaseRecord {
                case_id: format!("C{i:0case_width$}"),
                day_offset: Some(day),
                end_day_offset: Some(day + stay),
                providers: team,
                age: rng.random_range(21..=90),
                gender,
                surgery_type: rng.random_range(1..=30),
                dx_codes: Vec::new(),
            }
        })
        .collect()
}

/// Generates the cases in memory, with complication codes filled in.
pub fn synth_cases(cfg: &SynthConfig) -> Result<(Vec<CaseRecord>, SynthTruth), PipelineError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = generate_cases(cfg, &mut rng);

    let segments =
        records::segment_cases(&cases, cfg.window_days).map_err(|e| PipelineError::records(Stage::Segment, e))?;
    let n_segments = segments.len();
    let mut networks = project_segments(segments);
    compute_segment_metrics(&mut networks, &MetricsConfig::default())
        .map_err(|e| PipelineError::metrics(Stage::Metrics, e))?;
    let codeset = ComplicationCodeset::embedded();
    let rows: BTreeMap<String, CaseRow> = join_cases(&networks, &codeset, false)
        .map_err(|e| PipelineError::metrics(Stage::Join, e))?
        .into_iter()
        .map(|r| (r.case_id.clone(), r))
        .collect();
    drop(networks);

    let mut capped = 0;
    let mut total = 0u64;
    for case in &mut cases {
        let mu = cfg.model.mean(&rows[&case.case_id]);
        let mut c = nb2_draw(&mut rng, mu, cfg.model.alpha) as usize;
        if c > MAX_DX_CODES {
            capped += 1;
            c = MAX_DX_CODES;
        }
        total += c as u64;
        let mut dx: Vec<String> = (0..c)
            .map(|_| {
                let prefix = &codeset.entries()[rng.random_range(0..codeset.len())].prefix;
                if rng.random_bool(0.5) {
                    format!("{prefix}{}", rng.random_range(0..10))
                } else {
                    prefix.clone()
                }
            })
            .collect();
        let noise = rng.random_range(0..=cfg.max_noise_codes).min(MAX_DX_CODES - c);
        dx.extend((0..noise).map(|_| NOISE_CODES[rng.random_range(0..NOISE_CODES.len())].to_string()));
        dx.shuffle(&mut rng);
        case.dx_codes = dx;
    }

    let n = cases.len() as f64;
    let truth = SynthTruth {
        config: cfg.clone(),
        coefficients: cfg.model.coefficients(),
        alpha: cfg.model.alpha,
        segments: n_segments,
        mean_team_size: cases.iter().map(|c| c.providers.len()).sum::<usize>() as f64 / n,
        mean_complications: total as f64 / n,
        capped_cases: capped,
    };
    Ok((cases, truth))
}

/// Writes cases in the default joined-provider CSV layout.
pub fn write_cases<W: Write>(cases: &[CaseRecord], w: W) -> Result<(), csv::Error> {
    let dx_cols = cases.iter().map(|c| c.dx_codes.len()).max().unwrap_or(0).max(1);
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let mut header: Vec<String> = [
        "case_id",
        "day_offset",
        "end_day_offset",
        "age",
        "gender",
        "surgery_type",
        "providers",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=dx_cols).map(|i| format!("dx_{i}")));
    out.write_record(&header)?;
    let opt = |d: Option<u32>| d.map(|v| v.to_string()).unwrap_or_default();
    for c in cases {
        let mut rec = vec![
            c.case_id.clone(),
            opt(c.day_offset),
            opt(c.end_day_offset),
            c.age.to_string(),
            c.gender.as_str().to_string(),
            c.surgery_type.to_string(),
            c.providers.iter().cloned().collect::<Vec<_>>().join(";"),
        ];
        rec.extend((0..dx_cols).map(|i| c.dx_codes.get(i).cloned().unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Generates a case file and, optionally, the JSON truth sidecar.
pub fn synth_generate(
    cfg: &SynthConfig,
    cases_path: &Path,
    truth_path: Option<&Path>,
) -> Result<SynthTruth, PipelineError> {
    let (cases, truth) = synth_cases(cfg)?;
    let io_err = |path: &Path, e: std::io::Error| {
        PipelineError::new(
            Stage::Write,
            FailureKind::Io,
            format!("writing {}: {e}", path.display()),
        )
    };
    let mut buf = Vec::new();
    write_cases(&cases, &mut buf).map_err(|e| io_err(cases_path, e.into()))?;
    if let Some(dir) = cases_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(cases_path, buf).map_err(|e| io_err(cases_path, e))?;
    if let Some(p) = truth_path {
        std::fs::write(p, super::report::to_json(&truth)).map_err(|e| io_err(p, e))?;
    }
    Ok(truth)
}
