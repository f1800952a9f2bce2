//! End-to-end orchestration: ingest, exclusion, segmentation, co-worker
//! networks and their measures, complication counts, the joined case table
//! ("surgical network data"), rank correlation, VIF screening and the
//! Poisson / NB2 regressions.
//!
//! Every artifact is rendered in memory first and written only once the
//! requested stage has completed, so a failed run never leaves a mixture of
//! fresh and stale tables behind: known artifact files are removed and a
//! manifest with `"status": "failed"` is written instead.

mod config;
mod report;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{self, MetricsError, NodeMetrics, NORMALIZATION_NOTES};
use crate::netbuild::{self, CoworkerGraph, GraphSummary};
use crate::outcomes::{count_complications, ComplicationCodeset};
use crate::records::{self, ExclusionReport, ParseOutput, RecordsError, Segment, Severity};
use crate::stats::{self, DesignMatrix, FitResult, GofResult, LrAlphaResult, SpearmanMatrix, StatsError, VifRow};

pub use config::{
    CodesetSource, PipelineConfig, RegressionConfig, DEFAULT_CORRELATES, DEFAULT_REGRESSORS, FEATURES, OUT_DIR_ENV,
};
pub use report::{fmt_g, Table, SIG_DIGITS};
pub use synth::{synth_cases, synth_generate, write_cases, ComplicationModel, SynthConfig, SynthTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Exclude,
    Segment,
    Network,
    Metrics,
    Outcomes,
    Join,
    Correlate,
    Vif,
    Poisson,
    Negbin,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Exclude => "exclude",
            Stage::Segment => "segment",
            Stage::Network => "network",
            Stage::Metrics => "metrics",
            Stage::Outcomes => "outcomes",
            Stage::Join => "join",
            Stage::Correlate => "correlate",
            Stage::Vif => "vif",
            Stage::Poisson => "poisson",
            Stage::Negbin => "negbin",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Config,
    Data,
    NonConvergence,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Io => 1,
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::NonConvergence => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
    #[source]
    source: Option<Box<dyn std::error::Error + Send + Sync>>,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            kind,
            message: message.into(),
            source: None,
        }
    }

    fn with_source<E: std::error::Error + Send + Sync + 'static>(stage: Stage, kind: FailureKind, e: E) -> Self {
        PipelineError {
            stage,
            kind,
            message: e.to_string(),
            source: Some(Box::new(e)),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Stage::Config, FailureKind::Config, message)
    }

    pub fn records(stage: Stage, e: RecordsError) -> Self {
        let kind = match &e {
            RecordsError::Config(_) => FailureKind::Config,
            RecordsError::Io(io) if io.kind() == io::ErrorKind::NotFound => FailureKind::Config,
            _ => FailureKind::Data,
        };
        Self::with_source(stage, kind, e)
    }

    pub fn metrics(stage: Stage, e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::EigenvectorNonConvergence { .. } => FailureKind::NonConvergence,
            _ => FailureKind::Data,
        };
        Self::with_source(stage, kind, e)
    }

    pub fn stats(stage: Stage, e: StatsError) -> Self {
        let kind = match e {
            StatsError::NonConvergence { .. } | StatsError::Boundary(_) => FailureKind::NonConvergence,
            _ => FailureKind::Data,
        };
        Self::with_source(stage, kind, e)
    }

    fn io(stage: Stage, what: &str, e: io::Error) -> Self {
        PipelineError {
            stage,
            kind: FailureKind::Io,
            message: format!("{what}: {e}"),
            source: Some(Box::new(e)),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// One segment's co-worker network and, once computed, its node measures.
#[derive(Debug, Clone)]
pub struct SegmentNetwork {
    pub segment: Segment,
    pub graph: CoworkerGraph,
    pub summary: GraphSummary,
    pub metrics: BTreeMap<String, NodeMetrics>,
}

/// Projects every segment to its one-mode co-worker graph.
pub fn project_segments(segments: Vec<Segment>) -> Vec<SegmentNetwork> {
    segments
        .into_iter()
        .map(|segment| {
            let graph = netbuild::project_one_mode(&netbuild::build_bipartite(&segment));
            let summary = netbuild::summarize(&graph, &segment);
            SegmentNetwork {
                segment,
                graph,
                summary,
                metrics: BTreeMap::new(),
            }
        })
        .collect()
}

pub fn compute_segment_metrics(
    networks: &mut [SegmentNetwork],
    cfg: &metrics::MetricsConfig,
) -> Result<(), MetricsError> {
    for net in networks {
        net.metrics = metrics::compute_all(&net.graph, cfg)?;
    }
    Ok(())
}

/// One row of the joined case table: outcome, reduced-model covariates and
/// the extra team measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub segment: usize,
    pub case_id: String,
    #[serde(rename = "C")]
    pub complications: u32,
    pub age: u32,
    #[serde(rename = "teamSize")]
    pub team_size: u32,
    #[serde(rename = "typSurgery")]
    pub typ_surgery: i64,
    #[serde(rename = "avgBtwn")]
    pub avg_btwn: f64,
    #[serde(rename = "avgClos")]
    pub avg_clos: f64,
    #[serde(rename = "avgEigen")]
    pub avg_eigen: f64,
    #[serde(rename = "avgClust")]
    pub avg_clust: f64,
    #[serde(rename = "avgDeg")]
    pub avg_deg: f64,
    #[serde(rename = "dMale")]
    pub d_male: u8,
    /// Every provider on the team is isolated in the segment network.
    pub singleton: bool,
}

impl CaseRow {
    pub fn feature(&self, name: &str) -> Option<f64> {
        Some(match name {
            "age" => self.age as f64,
            "teamSize" => self.team_size as f64,
            "typSurgery" => self.typ_surgery as f64,
            "avgBtwn" => self.avg_btwn,
            "avgClos" => self.avg_clos,
            "avgEigen" => self.avg_eigen,
            "avgClust" => self.avg_clust,
            "avgDeg" => self.avg_deg,
            "dMale" => self.d_male as f64,
            _ => return None,
        })
    }
}

/// Joins every case with its team averages (from its own segment's network)
/// and complication count. Rows follow segment order, then case order
/// within the segment.
pub fn join_cases(
    networks: &[SegmentNetwork],
    codeset: &ComplicationCodeset,
    distinct_codes: bool,
) -> Result<Vec<CaseRow>, MetricsError> {
    let mut rows = Vec::new();
    for net in networks {
        for case in &net.segment.cases {
            let team = metrics::team_aggregate(case, &net.metrics)?;
            let singleton = case
                .providers
                .iter()
                .all(|p| net.graph.node_index(p).is_some_and(|v| net.graph.degree(v) == 0));
            rows.push(CaseRow {
                segment: net.segment.index,
                case_id: case.case_id.clone(),
                complications: count_complications(case, codeset, distinct_codes) as u32,
                age: case.age,
                team_size: team.team_size as u32,
                typ_surgery: case.surgery_type,
                avg_btwn: team.avg_btwn,
                avg_clos: team.avg_clos,
                avg_eigen: team.avg_eigen,
                avg_clust: team.avg_clust,
                avg_deg: team.avg_deg,
                d_male: u8::from(case.gender.is_male()),
                singleton,
            });
        }
    }
    Ok(rows)
}

/// Per-segment network description, one row per segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub segment: usize,
    pub start_day: u32,
    pub end_day_exclusive: u32,
    pub span_days: u32,
    pub nodes: usize,
    pub edges: usize,
    pub cases: usize,
    pub avg_team_size: f64,
    pub avg_degree: f64,
    pub density: f64,
    /// Node means of the normalized measures.
    pub avg_betweenness: f64,
    pub avg_closeness: f64,
    pub avg_eigenvector: f64,
    pub avg_clustering: f64,
    pub avg_complications: f64,
    pub singleton_cases: usize,
}

pub fn summarize_segments(networks: &[SegmentNetwork], rows: &[CaseRow]) -> Vec<SegmentSummary> {
    networks
        .iter()
        .map(|net| {
            let node_mean = |f: fn(&NodeMetrics) -> f64| {
                if net.metrics.is_empty() {
                    0.0
                } else {
                    net.metrics.values().map(f).sum::<f64>() / net.metrics.len() as f64
                }
            };
            let seg_rows: Vec<&CaseRow> = rows.iter().filter(|r| r.segment == net.segment.index).collect();
            let avg_complications = if seg_rows.is_empty() {
                0.0
            } else {
                seg_rows.iter().map(|r| r.complications as f64).sum::<f64>() / seg_rows.len() as f64
            };
            SegmentSummary {
                segment: net.segment.index,
                start_day: net.segment.start_day,
                end_day_exclusive: net.segment.end_day_exclusive,
                span_days: net.segment.span_days(),
                nodes: net.summary.node_count,
                edges: net.summary.edge_count,
                cases: net.summary.case_count,
                avg_team_size: net.summary.avg_team_size,
                avg_degree: net.summary.avg_degree,
                density: net.summary.density,
                avg_betweenness: node_mean(|m| m.betweenness),
                avg_closeness: node_mean(|m| m.closeness),
                avg_eigenvector: node_mean(|m| m.eigenvector),
                avg_clustering: node_mean(|m| m.clustering),
                avg_complications,
                singleton_cases: seg_rows.iter().filter(|r| r.singleton).count(),
            }
        })
        .collect()
}

pub fn correlate(rows: &[CaseRow], columns: &[String]) -> Result<SpearmanMatrix, StatsError> {
    let cols: Vec<(String, Vec<f64>)> = columns
        .iter()
        .map(|c| {
            (
                c.clone(),
                rows.iter().map(|r| r.feature(c).unwrap_or(f64::NAN)).collect(),
            )
        })
        .collect();
    stats::spearman_matrix(&cols)
}

/// Count-model design: `C` on the configured covariates plus an intercept.
pub fn design_matrix(rows: &[CaseRow], reg: &RegressionConfig) -> Result<DesignMatrix, StatsError> {
    let y: Vec<Option<f64>> = rows.iter().map(|r| Some(r.complications as f64)).collect();
    let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for name in &reg.columns {
        if name == "typSurgery" && reg.one_hot_surgery {
            let codes: BTreeSet<i64> = rows.iter().map(|r| r.typ_surgery).collect();
            for &code in codes.iter().skip(1) {
                columns.push((
                    format!("typSurgery_{code}"),
                    rows.iter()
                        .map(|r| Some(f64::from(u8::from(r.typ_surgery == code))))
                        .collect(),
                ));
            }
        } else {
            columns.push((name.clone(), rows.iter().map(|r| r.feature(name)).collect()));
        }
    }
    DesignMatrix::from_columns(&y, &columns, true)
}

/// VIF screen, Poisson fit with goodness of fit, NB2 fit and the LR test of
/// alpha = 0. Covariates that are linear combinations of earlier ones are
/// omitted from the count models and listed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regression {
    pub n_obs: usize,
    pub dropped_rows: usize,
    pub omitted: Vec<String>,
    pub vif: Vec<VifRow>,
    pub poisson: FitResult,
    pub gof: GofResult,
    pub negbin: FitResult,
    pub lr_test: LrAlphaResult,
}

/// Partial regression results, filled stage by stage.
#[derive(Debug, Clone, Default)]
struct RegressionParts {
    design: Option<DesignMatrix>,
    reduced: Option<DesignMatrix>,
    omitted: Vec<String>,
    vif: Option<Vec<VifRow>>,
    poisson: Option<(FitResult, GofResult)>,
    negbin: Option<(FitResult, LrAlphaResult)>,
}

pub fn regress(rows: &[CaseRow], cfg: &PipelineConfig) -> Result<Regression, PipelineError> {
    let mut parts = RegressionParts::default();
    run_regression(rows, cfg, &mut parts, Stage::Negbin)?;
    let design = parts.design.expect("design built");
    let (poisson, gof) = parts.poisson.expect("poisson fitted");
    let (negbin, lr_test) = parts.negbin.expect("negbin fitted");
    Ok(Regression {
        n_obs: design.n(),
        dropped_rows: design.dropped_rows(),
        omitted: parts.omitted,
        vif: parts.vif.expect("vif computed"),
        poisson,
        gof,
        negbin,
        lr_test,
    })
}

fn run_regression(
    rows: &[CaseRow],
    cfg: &PipelineConfig,
    parts: &mut RegressionParts,
    target: Stage,
) -> Result<(), PipelineError> {
    let design = design_matrix(rows, &cfg.regression).map_err(|e| PipelineError::stats(Stage::Vif, e))?;
    let vif = stats::vif(&design).map_err(|e| PipelineError::stats(Stage::Vif, e))?;
    let (reduced, omitted) = design.drop_collinear();
    parts.design = Some(design);
    parts.vif = Some(vif);
    parts.omitted = omitted;
    if target < Stage::Poisson {
        return Ok(());
    }
    let pois = stats::poisson_fit(&reduced, &cfg.fit).map_err(|e| PipelineError::stats(Stage::Poisson, e))?;
    let gof = stats::poisson_gof(&pois, &reduced).map_err(|e| PipelineError::stats(Stage::Poisson, e))?;
    parts.poisson = Some((pois.clone(), gof));
    if target < Stage::Negbin {
        parts.reduced = Some(reduced);
        return Ok(());
    }
    let nb = stats::negbin_fit_from(&reduced, &pois.coefficients(), &cfg.fit)
        .map_err(|e| PipelineError::stats(Stage::Negbin, e))?;
    let lr = stats::lr_test_alpha(&pois, &nb).map_err(|e| PipelineError::stats(Stage::Negbin, e))?;
    parts.negbin = Some((nb, lr));
    parts.reduced = Some(reduced);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCount {
    pub stage: Stage,
    pub cases_in: usize,
    pub cases_out: usize,
    /// Itemizes `cases_in - cases_out`.
    pub removed: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub stage: Stage,
    pub kind: FailureKind,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRecord {
    pub response: &'static str,
    pub columns: Vec<String>,
    pub omitted_columns: Vec<String>,
    pub rows: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub status: RunStatus,
    pub target_stage: Stage,
    pub error: Option<FailureRecord>,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// `cases` for a case file, `network_data` for a joined-table JSON.
    pub input_kind: &'static str,
    pub input_sha256: Option<String>,
    pub stages: Vec<StageCount>,
    pub parse_warnings: usize,
    pub exclusions: Option<ExclusionReport>,
    pub segments: Option<usize>,
    pub singleton_cases: Option<usize>,
    pub codeset_entries: Option<usize>,
    pub design: Option<DesignRecord>,
    pub conventions: BTreeMap<String, String>,
    /// Artifact name → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(cfg: &PipelineConfig, target: Stage, input_kind: &'static str) -> Self {
        Manifest {
            tool: "surgnet",
            version: env!("CARGO_PKG_VERSION"),
            status: RunStatus::Failed,
            target_stage: target,
            error: None,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            input_kind,
            input_sha256: None,
            stages: Vec::new(),
            parse_warnings: 0,
            exclusions: None,
            segments: None,
            singleton_cases: None,
            codeset_entries: None,
            design: None,
            conventions: conventions(cfg),
            outputs: BTreeMap::new(),
        }
    }
}

fn conventions(cfg: &PipelineConfig) -> BTreeMap<String, String> {
    let mut c: BTreeMap<String, String> = NORMALIZATION_NOTES
        .iter()
        .map(|(k, v)| (format!("metric.{k}"), v.to_string()))
        .collect();
    c.insert(
        "segmentation".into(),
        format!(
            "half-open day windows [start, start + {}) from the earliest start day; the last window ends at the latest start day + 1",
            cfg.window_days
        ),
    );
    c.insert(
        "team_average".into(),
        "unweighted mean over the case's distinct providers of node measures from the case's own segment network"
            .into(),
    );
    c.insert(
        "singleton_cases".into(),
        "cases whose providers are all isolated in their segment network are kept with zero betweenness, closeness, eigenvector and clustering".into(),
    );
    c.insert(
        "complications".into(),
        format!(
            "ICD9 codes trimmed, upper-cased, decimal point inserted after the third digit; counted when they extend a codeset prefix; {}",
            if cfg.distinct_codes {
                "each distinct code counted once per case"
            } else {
                "every listed code counted"
            }
        ),
    );
    c.insert(
        "spearman".into(),
        "average ranks for ties; Pearson correlation of ranks; two-sided t approximation with n - 2 df; undefined for constant columns".into(),
    );
    c.insert(
        "vif".into(),
        "1 / (1 - R^2) regressing each covariate on the others plus an intercept; infinite when 1 - R^2 <= 1e-12; tolerance = 1 / VIF".into(),
    );
    c.insert(
        "count_models".into(),
        "log link; Newton-Raphson with step halving; standard errors from the inverse observed information; Wald z with two-sided normal p; 95% CI = coef +/- 1.959964 se".into(),
    );
    c.insert(
        "collinear_columns".into(),
        "covariates that are linear combinations of the intercept and earlier columns are omitted from the count models".into(),
    );
    c.insert(
        "negbin".into(),
        "NB2 variance mu + alpha mu^2, fitted in (beta, ln alpha) from the Poisson estimate and a moment estimate of alpha".into(),
    );
    c.insert(
        "poisson_gof".into(),
        "Pearson chi-square and deviance on n - p df; p_value is the Pearson upper tail".into(),
    );
    c.insert(
        "lr_test".into(),
        "2 (ll_negbin - ll_poisson) floored at 0; p = 0.5 P(chi2_1 >= statistic)".into(),
    );
    c.insert(
        "number_format".into(),
        format!("text tables: {SIG_DIGITS} significant digits; JSON: full precision"),
    );
    c
}

/// Everything a run produced: rendered artifacts plus typed results.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub artifacts: BTreeMap<String, Vec<u8>>,
    pub parse_diagnostics: usize,
    pub exclusions: Option<ExclusionReport>,
    pub segments: Vec<SegmentSummary>,
    pub rows: Vec<CaseRow>,
    pub correlation: Option<SpearmanMatrix>,
    pub vif: Option<Vec<VifRow>>,
    pub poisson: Option<(FitResult, GofResult)>,
    pub negbin: Option<(FitResult, LrAlphaResult)>,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    target: Stage,
    out: RunOutput,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PipelineConfig, target: Stage, input_kind: &'static str) -> Self {
        Runner {
            cfg,
            target,
            out: RunOutput {
                manifest: Manifest::new(cfg, target, input_kind),
                artifacts: BTreeMap::new(),
                parse_diagnostics: 0,
                exclusions: None,
                segments: Vec::new(),
                rows: Vec::new(),
                correlation: None,
                vif: None,
                poisson: None,
                negbin: None,
            },
        }
    }

    fn emit(&mut self, name: &str, bytes: Vec<u8>) {
        self.out.artifacts.insert(name.to_string(), bytes);
    }

    fn count(&mut self, stage: Stage, cases_in: usize, cases_out: usize, removed: &[(&str, usize)]) {
        self.out.manifest.stages.push(StageCount {
            stage,
            cases_in,
            cases_out,
            removed: removed
                .iter()
                .filter(|(_, n)| *n > 0)
                .map(|(k, n)| (k.to_string(), *n))
                .collect(),
        });
    }

    fn done(&self, stage: Stage) -> bool {
        self.target <= stage
    }

    fn run_from_cases(&mut self) -> Result<(), PipelineError> {
        let cfg = self.cfg;
        cfg.validate().map_err(PipelineError::config)?;
        let codeset = load_codeset(&cfg.codeset)?;
        self.out.manifest.codeset_entries = Some(codeset.len());

        // Ingest.
        let bytes = fs::read(&cfg.input).map_err(|e| {
            let kind = if e.kind() == io::ErrorKind::NotFound {
                FailureKind::Config
            } else {
                FailureKind::Data
            };
            PipelineError::new(Stage::Ingest, kind, format!("cannot read {}: {e}", cfg.input.display()))
        })?;
        self.out.manifest.input_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
        let parsed = records::parse_cases(bytes.as_slice(), &cfg.schema)
            .map_err(|e| PipelineError::records(Stage::Ingest, e))?;
        self.emit_diagnostics(&parsed);
        let skipped = parsed.skipped_rows();
        let n_cases = parsed.cases.len();
        self.count(Stage::Ingest, n_cases + skipped, n_cases, &[("parse_errors", skipped)]);

        // Exclude.
        let (cases, report) = records::apply_exclusions(parsed.cases, &cfg.exclusions);
        let removed: Vec<(&str, usize)> = report
            .rows()
            .into_iter()
            .filter(|(k, _)| !matches!(*k, "input" | "retained" | "provider_ids_dropped"))
            .collect();
        self.count(Stage::Exclude, report.input, report.retained, &removed);
        let mut t = Table::new(["rule", "count"]);
        for (k, n) in report.rows() {
            t.push(vec![k.to_string(), n.to_string()]);
        }
        self.emit("exclusions.tsv", t.to_tsv());
        self.emit("exclusions.json", report::to_json(&report));
        self.out.manifest.exclusions = Some(report.clone());
        self.out.exclusions = Some(report);
        if cases.is_empty() {
            return Err(PipelineError::new(
                Stage::Exclude,
                FailureKind::Data,
                "no cases after exclusion",
            ));
        }
        if self.done(Stage::Exclude) {
            return Ok(());
        }

        // Segment.
        let segments =
            records::segment_cases(&cases, cfg.window_days).map_err(|e| PipelineError::records(Stage::Segment, e))?;
        drop(cases);
        let retained = segments.iter().map(|s| s.cases.len()).sum();
        self.count(Stage::Segment, retained, retained, &[]);
        self.out.manifest.segments = Some(segments.len());
        let mut t = Table::new(["segment", "start_day", "end_day_exclusive", "span_days", "cases"]);
        for s in &segments {
            t.push(vec![
                s.index.to_string(),
                s.start_day.to_string(),
                s.end_day_exclusive.to_string(),
                s.span_days().to_string(),
                s.cases.len().to_string(),
            ]);
        }
        self.emit("segment_bounds.tsv", t.to_tsv());

        // Network.
        let mut networks = project_segments(segments);
        for net in &networks {
            let mut buf = Vec::new();
            net.graph.write_edge_list(&mut buf).expect("writing to memory");
            self.emit(&format!("edges_segment{}.tsv", net.segment.index), buf);
        }
        let mut t = Table::new([
            "segment",
            "nodes",
            "edges",
            "cases",
            "avg_team_size",
            "avg_degree",
            "density",
        ]);
        for net in &networks {
            let s = &net.summary;
            t.push(vec![
                net.segment.index.to_string(),
                s.node_count.to_string(),
                s.edge_count.to_string(),
                s.case_count.to_string(),
                report::num(s.avg_team_size),
                report::num(s.avg_degree),
                report::num(s.density),
            ]);
        }
        self.emit("networks.tsv", t.to_tsv());
        if self.done(Stage::Network) {
            return Ok(());
        }

        // Metrics.
        compute_segment_metrics(&mut networks, &cfg.metrics).map_err(|e| PipelineError::metrics(Stage::Metrics, e))?;
        self.emit_node_metrics(&networks);
        if self.done(Stage::Metrics) {
            return Ok(());
        }

        // Outcomes and join.
        let rows =
            join_cases(&networks, &codeset, cfg.distinct_codes).map_err(|e| PipelineError::metrics(Stage::Join, e))?;
        self.count(Stage::Join, retained, rows.len(), &[]);
        let summaries = summarize_segments(&networks, &rows);
        drop(networks);
        self.emit_segments(&summaries);
        self.out.segments = summaries;
        self.accept_rows(rows);
        self.analyze()
    }

    fn run_from_rows(&mut self, rows: Vec<CaseRow>, sha: String) -> Result<(), PipelineError> {
        self.cfg.validate().map_err(PipelineError::config)?;
        self.out.manifest.input_sha256 = Some(sha);
        self.count(Stage::Join, rows.len(), rows.len(), &[]);
        self.accept_rows(rows);
        self.analyze()
    }

    fn accept_rows(&mut self, rows: Vec<CaseRow>) {
        self.out.manifest.singleton_cases = Some(rows.iter().filter(|r| r.singleton).count());
        self.emit_case_rows(&rows);
        self.out.rows = rows;
    }

    fn analyze(&mut self) -> Result<(), PipelineError> {
        if self.done(Stage::Join) {
            return Ok(());
        }
        let cfg = self.cfg;
        let corr = correlate(&self.out.rows, &cfg.regression.correlation_columns)
            .map_err(|e| PipelineError::stats(Stage::Correlate, e))?;
        self.emit_correlation(&corr);
        self.out.correlation = Some(corr);
        if self.done(Stage::Correlate) {
            return Ok(());
        }

        let mut parts = RegressionParts::default();
        let result = run_regression(&self.out.rows, cfg, &mut parts, self.target);
        if let Some(design) = &parts.design {
            let used = parts.reduced.as_ref().unwrap_or(design);
            self.count(
                Stage::Vif,
                self.out.rows.len(),
                design.n(),
                &[("missing_covariates", design.dropped_rows())],
            );
            self.out.manifest.design = Some(DesignRecord {
                response: "C",
                columns: used.names().to_vec(),
                omitted_columns: parts.omitted.clone(),
                rows: design.n(),
                dropped_rows: design.dropped_rows(),
            });
        }
        result?;
        let vif = parts.vif.take().expect("vif computed");
        self.emit_vif(&vif);
        self.out.vif = Some(vif);
        if let Some((pois, gof)) = parts.poisson.take() {
            self.emit_poisson(&pois, &gof, &parts.omitted);
            self.out.poisson = Some((pois, gof));
        }
        if let Some((nb, lr)) = parts.negbin.take() {
            self.emit_negbin(&nb, &lr, &parts.omitted);
            self.out.negbin = Some((nb, lr));
        }
        if let (Some(p), Some(n)) = (&self.out.poisson, &self.out.negbin) {
            let text = regression_text(&p.0, &p.1, &n.0, &n.1, &parts.omitted);
            self.emit("regression.txt", text.into_bytes());
        }
        Ok(())
    }

    fn emit_diagnostics(&mut self, parsed: &ParseOutput) {
        self.out.parse_diagnostics = parsed.diagnostics.len();
        self.out.manifest.parse_warnings = parsed
            .diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Warning)
            .count();
        let mut t = Table::new(["line", "case_id", "severity", "message"]);
        for d in &parsed.diagnostics {
            t.push(vec![
                d.line.to_string(),
                d.case_id.clone().unwrap_or_default(),
                match d.severity {
                    Severity::Warning => "warning".into(),
                    Severity::Error => "error".into(),
                },
                d.message.clone(),
            ]);
        }
        self.emit("parse_diagnostics.tsv", t.to_tsv());
    }

    fn emit_node_metrics(&mut self, networks: &[SegmentNetwork]) {
        let mut t = Table::new([
            "segment",
            "provider_id",
            "degree_raw",
            "degree",
            "betweenness",
            "closeness",
            "eigenvector",
            "clustering",
        ]);
        let mut json: Vec<serde_json::Value> = Vec::new();
        for net in networks {
            for m in net.metrics.values() {
                t.push(vec![
                    net.segment.index.to_string(),
                    m.provider_id.clone(),
                    m.degree_raw.to_string(),
                    report::num(m.degree),
                    report::num(m.betweenness),
                    report::num(m.closeness),
                    report::num(m.eigenvector),
                    report::num(m.clustering),
                ]);
            }
            json.push(serde_json::json!({
                "segment": net.segment.index,
                "nodes": net.metrics.values().collect::<Vec<_>>(),
            }));
        }
        self.emit("node_metrics.tsv", t.to_tsv());
        self.emit("node_metrics.json", report::to_json(&json));
    }

    fn emit_segments(&mut self, summaries: &[SegmentSummary]) {
        let mut t = Table::new([
            "segment",
            "start_day",
            "end_day_exclusive",
            "span_days",
            "nodes",
            "edges",
            "cases",
            "avg_team_size",
            "avg_degree",
            "density",
            "avg_betweenness",
            "avg_closeness",
            "avg_eigenvector",
            "avg_clustering",
            "avg_complications",
            "singleton_cases",
        ]);
        for s in summaries {
            t.push(vec![
                s.segment.to_string(),
                s.start_day.to_string(),
                s.end_day_exclusive.to_string(),
                s.span_days.to_string(),
                s.nodes.to_string(),
                s.edges.to_string(),
                s.cases.to_string(),
                report::num(s.avg_team_size),
                report::num(s.avg_degree),
                report::num(s.density),
                report::num(s.avg_betweenness),
                report::num(s.avg_closeness),
                report::num(s.avg_eigenvector),
                report::num(s.avg_clustering),
                report::num(s.avg_complications),
                s.singleton_cases.to_string(),
            ]);
        }
        self.emit("segments.tsv", t.to_tsv());
        self.emit("segments.json", report::to_json(summaries));
    }

    fn emit_case_rows(&mut self, rows: &[CaseRow]) {
        let mut header = vec!["segment", "case_id", "C"];
        header.extend(FEATURES);
        header.push("singleton");
        let mut t = Table::new(header);
        for r in rows {
            let mut cells = vec![r.segment.to_string(), r.case_id.clone(), r.complications.to_string()];
            cells.extend([
                r.age.to_string(),
                r.team_size.to_string(),
                r.typ_surgery.to_string(),
                report::num(r.avg_btwn),
                report::num(r.avg_clos),
                report::num(r.avg_eigen),
                report::num(r.avg_clust),
                report::num(r.avg_deg),
                r.d_male.to_string(),
                u8::from(r.singleton).to_string(),
            ]);
            t.push(cells);
        }
        self.emit("surgical_network_data.tsv", t.to_tsv());
        self.emit("surgical_network_data.json", report::to_json(rows));
    }

    fn emit_correlation(&mut self, m: &SpearmanMatrix) {
        // Lower triangle; `*` marks p < 0.01.
        let mut header = vec!["variable".to_string()];
        header.extend(m.names.iter().cloned());
        let mut t = Table::new(header);
        for i in 0..m.names.len() {
            let mut row = vec![m.names[i].clone()];
            for j in 0..m.names.len() {
                row.push(if j > i {
                    String::new()
                } else {
                    match (m.rho[i][j], m.p_value[i][j]) {
                        (Some(r), Some(p)) if i != j && p < 0.01 => format!("{}*", report::num(r)),
                        (r, _) => report::opt_num(r),
                    }
                });
            }
            t.push(row);
        }
        self.emit("correlation.tsv", t.to_tsv());

        let mut long = Table::new(["variable_1", "variable_2", "rho", "p_value", "n"]);
        for i in 0..m.names.len() {
            for j in 0..i {
                long.push(vec![
                    m.names[i].clone(),
                    m.names[j].clone(),
                    report::opt_num(m.rho[i][j]),
                    report::opt_num(m.p_value[i][j]),
                    m.n.to_string(),
                ]);
            }
        }
        self.emit("correlation_pairs.tsv", long.to_tsv());
        self.emit("correlation.json", report::to_json(m));
    }

    fn emit_vif(&mut self, rows: &[VifRow]) {
        let mut t = Table::new(["variable", "vif", "tolerance", "r_squared"]);
        for r in rows {
            t.push(vec![
                r.name.clone(),
                report::num(r.vif),
                report::num(r.tolerance),
                report::num(r.r_squared),
            ]);
        }
        self.emit("vif.tsv", t.to_tsv());
        self.emit("vif.json", report::to_json(rows));
    }

    fn emit_poisson(&mut self, fit: &FitResult, gof: &GofResult, omitted: &[String]) {
        self.emit("poisson.tsv", coef_table(fit).to_tsv());
        let mut t = Table::new(["statistic", "value", "df", "p_value"]);
        t.push(vec![
            "pearson_chi2".into(),
            report::num(gof.pearson_chi2),
            gof.df.to_string(),
            report::num(gof.p_value),
        ]);
        t.push(vec![
            "deviance".into(),
            report::num(gof.deviance),
            gof.df.to_string(),
            report::num(gof.deviance_p_value),
        ]);
        self.emit("poisson_gof.tsv", t.to_tsv());
        self.emit(
            "poisson.json",
            report::to_json(&serde_json::json!({ "fit": fit, "gof": gof, "omitted": omitted })),
        );
    }

    fn emit_negbin(&mut self, fit: &FitResult, lr: &LrAlphaResult, omitted: &[String]) {
        let mut t = coef_table(fit);
        if let Some(a) = &fit.alpha {
            t.push(vec![
                "ln(alpha)".into(),
                report::num(a.ln_alpha),
                report::num(a.ln_alpha_se),
                String::new(),
                String::new(),
                report::num(a.ln_alpha_ci.0),
                report::num(a.ln_alpha_ci.1),
            ]);
            t.push(vec![
                "alpha".into(),
                report::num(a.alpha),
                report::num(a.alpha_se),
                String::new(),
                String::new(),
                report::num(a.alpha_ci.0),
                report::num(a.alpha_ci.1),
            ]);
        }
        self.emit("negbin.tsv", t.to_tsv());
        let mut lt = Table::new(["test", "statistic", "p_value"]);
        lt.push(vec![
            "chibar2(01)".into(),
            report::num(lr.statistic),
            report::num(lr.p_value),
        ]);
        self.emit("lr_test.tsv", lt.to_tsv());
        self.emit(
            "negbin.json",
            report::to_json(&serde_json::json!({ "fit": fit, "lr_test": lr, "omitted": omitted })),
        );
    }

    fn finish(&mut self) {
        self.out.manifest.status = RunStatus::Complete;
        self.out.manifest.outputs = self
            .out
            .artifacts
            .iter()
            .map(|(k, v)| (k.clone(), hex::encode(Sha256::digest(v))))
            .collect();
    }

    fn fail(&mut self, e: &PipelineError) {
        self.out.manifest.status = RunStatus::Failed;
        self.out.manifest.error = Some(FailureRecord {
            stage: e.stage,
            kind: e.kind,
            exit_code: e.exit_code(),
            message: e.message.clone(),
        });
        self.out.artifacts.clear();
    }
}

fn coef_table(fit: &FitResult) -> Table {
    let mut t = Table::new([
        "variable",
        "coefficient",
        "std_error",
        "z",
        "p_value",
        "ci_low",
        "ci_high",
    ]);
    for r in &fit.rows {
        t.push(vec![
            r.name.clone(),
            report::num(r.coef),
            report::num(r.std_error),
            report::num(r.z),
            report::num(r.p_value),
            report::num(r.ci_low),
            report::num(r.ci_high),
        ]);
    }
    t
}

/// Fixed-width text rendering of both count models.
fn regression_text(
    pois: &FitResult,
    gof: &GofResult,
    nb: &FitResult,
    lr: &LrAlphaResult,
    omitted: &[String],
) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let header = |s: &mut String| {
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>10} {:>12} {:>12} {:>12}",
            "C", "Coefficient", "Std. Error", "z", "P>|z|", "[95% Conf.", "Interval]"
        );
    };
    let row = |s: &mut String, name: &str, c: f64, se: f64, z: Option<f64>, p: Option<f64>, lo: f64, hi: f64| {
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>10} {:>12} {:>12} {:>12}",
            name,
            report::num(c),
            report::num(se),
            z.map_or(String::new(), report::num),
            p.map_or(String::new(), report::num),
            report::num(lo),
            report::num(hi)
        );
    };

    let _ = writeln!(s, "Poisson regression    Number of obs = {}", pois.n_obs);
    let _ = writeln!(s, "Log likelihood = {}", report::num(pois.log_likelihood));
    header(&mut s);
    for r in &pois.rows {
        row(
            &mut s,
            &r.name,
            r.coef,
            r.std_error,
            Some(r.z),
            Some(r.p_value),
            r.ci_low,
            r.ci_high,
        );
    }
    let _ = writeln!(
        s,
        "Goodness of fit: Pearson chi2({}) = {}, Prob > chi2 = {}; deviance = {}, Prob > chi2 = {}",
        gof.df,
        report::num(gof.pearson_chi2),
        report::num(gof.p_value),
        report::num(gof.deviance),
        report::num(gof.deviance_p_value)
    );
    let _ = writeln!(s);

    let _ = writeln!(s, "Negative binomial regression (NB2)    Number of obs = {}", nb.n_obs);
    let _ = writeln!(s, "Log likelihood = {}", report::num(nb.log_likelihood));
    header(&mut s);
    for r in &nb.rows {
        row(
            &mut s,
            &r.name,
            r.coef,
            r.std_error,
            Some(r.z),
            Some(r.p_value),
            r.ci_low,
            r.ci_high,
        );
    }
    if let Some(a) = &nb.alpha {
        row(
            &mut s,
            "ln(alpha)",
            a.ln_alpha,
            a.ln_alpha_se,
            None,
            None,
            a.ln_alpha_ci.0,
            a.ln_alpha_ci.1,
        );
        row(
            &mut s,
            "alpha",
            a.alpha,
            a.alpha_se,
            None,
            None,
            a.alpha_ci.0,
            a.alpha_ci.1,
        );
        if a.at_boundary {
            let _ = writeln!(s, "alpha is at the boundary of the parameter space (alpha = 0)");
        }
    }
    let _ = writeln!(
        s,
        "Likelihood-ratio test of alpha=0: chibar2(01) = {}, Prob >= chibar2 = {}",
        report::num(lr.statistic),
        report::num(lr.p_value)
    );
    if !omitted.is_empty() {
        let _ = writeln!(s, "Omitted (collinear): {}", omitted.join(", "));
    }
    s
}

pub fn load_codeset(source: &CodesetSource) -> Result<ComplicationCodeset, PipelineError> {
    match source {
        CodesetSource::Embedded => Ok(ComplicationCodeset::embedded()),
        CodesetSource::File(path) => {
            let file = fs::File::open(path)
                .map_err(|e| PipelineError::config(format!("cannot open codeset {}: {e}", path.display())))?;
            ComplicationCodeset::read(BufReader::new(file))
                .map_err(|e| PipelineError::config(format!("codeset {}: {e}", path.display())))
        }
    }
}

/// Reads a joined case table previously written as `surgical_network_data.json`.
pub fn load_network_data(path: &Path) -> Result<(Vec<CaseRow>, String), PipelineError> {
    let bytes = fs::read(path).map_err(|e| {
        PipelineError::new(
            Stage::Join,
            FailureKind::Config,
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    let rows = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::new(Stage::Join, FailureKind::Data, format!("{}: {e}", path.display())))?;
    Ok((rows, hex::encode(Sha256::digest(&bytes))))
}

/// Runs every stage up to and including `target` without touching the disk.
/// On failure the partial manifest is returned alongside the error.
pub fn run_in_memory(cfg: &PipelineConfig, target: Stage) -> Result<RunOutput, (PipelineError, Box<Manifest>)> {
    let mut runner = Runner::new(cfg, target, "cases");
    finish(&mut runner, |r| r.run_from_cases())
}

/// As [`run_in_memory`], starting from an already joined case table.
pub fn analyze_in_memory(
    cfg: &PipelineConfig,
    rows: Vec<CaseRow>,
    input_sha256: String,
    target: Stage,
) -> Result<RunOutput, (PipelineError, Box<Manifest>)> {
    let mut runner = Runner::new(cfg, target, "network_data");
    finish(&mut runner, |r| r.run_from_rows(rows, input_sha256))
}

fn finish(
    runner: &mut Runner<'_>,
    body: impl FnOnce(&mut Runner<'_>) -> Result<(), PipelineError>,
) -> Result<RunOutput, (PipelineError, Box<Manifest>)> {
    match body(runner) {
        Ok(()) => {
            runner.finish();
            Ok(runner.out.clone())
        }
        Err(e) => {
            runner.fail(&e);
            Err((e, Box::new(runner.out.manifest.clone())))
        }
    }
}

/// Runs up to `target` and writes the artifacts and manifest to the
/// configured output directory.
pub fn execute(cfg: &PipelineConfig, target: Stage) -> Result<RunOutput, PipelineError> {
    persist(&cfg.output_dir, run_in_memory(cfg, target))
}

/// As [`execute`], starting from a joined case table on disk.
pub fn execute_from_data(cfg: &PipelineConfig, data: &Path, target: Stage) -> Result<RunOutput, PipelineError> {
    let result = match load_network_data(data) {
        Ok((rows, sha)) => analyze_in_memory(cfg, rows, sha, target),
        Err(e) => {
            let mut m = Manifest::new(cfg, target, "network_data");
            m.error = Some(FailureRecord {
                stage: e.stage,
                kind: e.kind,
                exit_code: e.exit_code(),
                message: e.message.clone(),
            });
            Err((e, Box::new(m)))
        }
    };
    persist(&cfg.output_dir, result)
}

/// The full flow through the NB2 fit and LR test.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    execute(cfg, Stage::Negbin)
}

fn persist(dir: &Path, result: Result<RunOutput, (PipelineError, Box<Manifest>)>) -> Result<RunOutput, PipelineError> {
    match result {
        Ok(out) => {
            write_artifacts(dir, &out.artifacts, &out.manifest)?;
            Ok(out)
        }
        Err((e, manifest)) => {
            // Best effort: the stage error is what the caller needs to see.
            let _ = write_artifacts(dir, &BTreeMap::new(), &manifest);
            Err(e)
        }
    }
}

fn is_artifact_name(name: &str) -> bool {
    const FIXED: [&str; 24] = [
        "parse_diagnostics.tsv",
        "exclusions.tsv",
        "exclusions.json",
        "segment_bounds.tsv",
        "networks.tsv",
        "node_metrics.tsv",
        "node_metrics.json",
        "segments.tsv",
        "segments.json",
        "surgical_network_data.tsv",
        "surgical_network_data.json",
        "correlation.tsv",
        "correlation_pairs.tsv",
        "correlation.json",
        "vif.tsv",
        "vif.json",
        "poisson.tsv",
        "poisson_gof.tsv",
        "poisson.json",
        "negbin.tsv",
        "lr_test.tsv",
        "negbin.json",
        "regression.txt",
        "manifest.json",
    ];
    if let Some(inner) = name.strip_prefix('.').and_then(|n| n.strip_suffix(".tmp")) {
        return is_artifact_name(inner);
    }
    FIXED.contains(&name)
        || name
            .strip_prefix("edges_segment")
            .and_then(|s| s.strip_suffix(".tsv"))
            .is_some_and(|n| n.chars().all(|c| c.is_ascii_digit()))
}

/// Removes stale artifacts of earlier runs, then writes each file through a
/// temporary name. The manifest goes last.
fn write_artifacts(
    dir: &Path,
    artifacts: &BTreeMap<String, Vec<u8>>,
    manifest: &Manifest,
) -> Result<(), PipelineError> {
    let io_err = |what: &str, e: io::Error| PipelineError::io(Stage::Write, what, e);
    fs::create_dir_all(dir).map_err(|e| io_err(&format!("creating {}", dir.display()), e))?;
    for entry in fs::read_dir(dir).map_err(|e| io_err(&format!("listing {}", dir.display()), e))? {
        let entry = entry.map_err(|e| io_err("listing output directory", e))?;
        let name = entry.file_name();
        if name.to_str().is_some_and(is_artifact_name) && entry.path().is_file() {
            fs::remove_file(entry.path()).map_err(|e| io_err(&format!("removing {}", entry.path().display()), e))?;
        }
    }
    let write = |name: &str, bytes: &[u8]| -> Result<(), PipelineError> {
        let tmp = dir.join(format!(".{name}.tmp"));
        let dst = dir.join(name);
        fs::write(&tmp, bytes).map_err(|e| io_err(&format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, &dst).map_err(|e| io_err(&format!("renaming to {}", dst.display()), e))
    };
    for (name, bytes) in artifacts {
        write(name, bytes)?;
    }
    write("manifest.json", &report::to_json(manifest))
}
