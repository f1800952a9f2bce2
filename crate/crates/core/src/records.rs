//! Case ingestion: parsing delimited case files, exclusion filtering and
//! slicing retained cases into sequential fixed-width day windows.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of diagnosis codes carried per case.
pub const MAX_DX_CODES: usize = 50;

/// Ages at or above this value are recorded as this value.
pub const AGE_CAP: u32 = 90;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("i/o error reading case source: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case source: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Config(String),
    #[error("no cases to segment")]
    EmptyInput,
    #[error("window must span at least one day")]
    InvalidWindow,
    #[error("case {0} has no day offset; run exclusions before segmenting")]
    MissingDayOffset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn parse(raw: &str) -> Gender {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" | "man" => Gender::Male,
            "f" | "female" | "woman" => Gender::Female,
            _ => Gender::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
            Gender::Other => "U",
        }
    }

    pub fn is_male(self) -> bool {
        self == Gender::Male
    }
}

/// One surgical case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    /// Days since the de-identification origin. `None` when the source left it blank.
    pub day_offset: Option<u32>,
    pub end_day_offset: Option<u32>,
    pub providers: BTreeSet<String>,
    pub age: u32,
    pub gender: Gender,
    pub surgery_type: i64,
    pub dx_codes: Vec<String>,
}

/// A half-open window of days `[start_day, end_day_exclusive)` and the cases
/// whose start day falls inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub index: usize,
    pub start_day: u32,
    pub end_day_exclusive: u32,
    pub cases: Vec<CaseRecord>,
}

impl Segment {
    pub fn span_days(&self) -> u32 {
        self.end_day_exclusive - self.start_day
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderLayout {
    /// One row per case, providers joined by a separator in a single column.
    Joined,
    /// One row per (case, provider); rows sharing a case id are merged.
    Long,
}

/// Maps logical case fields onto header names in the source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseSchema {
    pub case_id: String,
    pub day_offset: String,
    pub end_day_offset: String,
    pub age: String,
    pub gender: String,
    pub surgery_type: String,
    pub providers: String,
    /// Diagnosis columns are `{dx_prefix}1` .. `{dx_prefix}50`.
    pub dx_prefix: String,
    pub delimiter: char,
    pub provider_separator: char,
    pub layout: ProviderLayout,
}

impl Default for CaseSchema {
    fn default() -> Self {
        CaseSchema {
            case_id: "case_id".into(),
            day_offset: "day_offset".into(),
            end_day_offset: "end_day_offset".into(),
            age: "age".into(),
            gender: "gender".into(),
            surgery_type: "surgery_type".into(),
            providers: "providers".into(),
            dx_prefix: "dx_".into(),
            delimiter: ',',
            provider_separator: ';',
            layout: ProviderLayout::Joined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A problem found while parsing. `Error` diagnostics mean the row was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostic {
    /// 1-based line in the source, header is line 1.
    pub line: u64,
    pub case_id: Option<String>,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub cases: Vec<CaseRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseOutput {
    pub fn skipped_rows(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .count()
    }
}

struct ColumnIndex {
    case_id: usize,
    day_offset: usize,
    end_day_offset: usize,
    age: usize,
    gender: usize,
    surgery_type: usize,
    providers: usize,
    dx: Vec<usize>,
}

impl ColumnIndex {
    fn resolve(
        headers: &csv::StringRecord,
        schema: &CaseSchema,
        diagnostics: &mut Vec<ParseDiagnostic>,
    ) -> Result<Self, RecordsError> {
        let lookup = |name: &str| -> Result<usize, RecordsError> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| RecordsError::Config(format!("column `{name}` not found in header")))
        };

        let mut dx: Vec<(usize, usize)> = Vec::new();
        for (col, header) in headers.iter().enumerate() {
            let Some(suffix) = header.trim().strip_prefix(schema.dx_prefix.as_str()) else {
                continue;
            };
            let Ok(n) = suffix.parse::<usize>() else {
                continue;
            };
            if (1..=MAX_DX_CODES).contains(&n) {
                dx.push((n, col));
            } else {
                diagnostics.push(ParseDiagnostic {
                    line: 1,
                    case_id: None,
                    severity: Severity::Warning,
                    message: format!("ignoring diagnosis column `{}` beyond {MAX_DX_CODES}", header.trim()),
                });
            }
        }
        dx.sort_unstable();

        Ok(ColumnIndex {
            case_id: lookup(&schema.case_id)?,
            day_offset: lookup(&schema.day_offset)?,
            end_day_offset: lookup(&schema.end_day_offset)?,
            age: lookup(&schema.age)?,
            gender: lookup(&schema.gender)?,
            surgery_type: lookup(&schema.surgery_type)?,
            providers: lookup(&schema.providers)?,
            dx: dx.into_iter().map(|(_, col)| col).collect(),
        })
    }
}

fn optional_day(raw: &str, field: &str) -> Result<Option<u32>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<u32>()
        .map(Some)
        .map_err(|_| format!("{field} `{raw}` is not a non-negative integer"))
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnIndex, schema: &CaseSchema) -> Result<CaseRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("").trim();

    let case_id = field(cols.case_id);
    if case_id.is_empty() {
        return Err("empty case id".into());
    }
    let day_offset = optional_day(field(cols.day_offset), "day_offset")?;
    let end_day_offset = optional_day(field(cols.end_day_offset), "end_day_offset")?;

    let age_raw = field(cols.age);
    let age = age_raw
        .parse::<u32>()
        .map_err(|_| format!("age `{age_raw}` is not a non-negative integer"))?
        .min(AGE_CAP);

    let st_raw = field(cols.surgery_type);
    let surgery_type = st_raw
        .parse::<i64>()
        .map_err(|_| format!("surgery_type `{st_raw}` is not an integer"))?;

    let providers = field(cols.providers)
        .split(schema.provider_separator)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(String::from)
        .collect();

    let dx_codes = cols
        .dx
        .iter()
        .map(|&i| field(i))
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();

    Ok(CaseRecord {
        case_id: case_id.to_string(),
        day_offset,
        end_day_offset,
        providers,
        age,
        gender: Gender::parse(field(cols.gender)),
        surgery_type,
        dx_codes,
    })
}

/// Parses a delimited case file with a header row.
///
/// Rows that fail to parse are reported as `Error` diagnostics and skipped.
/// Rows that parse but have no provider ids are kept (exclusion filtering
/// removes them) and flagged with a `Warning`.
pub fn parse_cases<R: Read>(source: R, schema: &CaseSchema) -> Result<ParseOutput, RecordsError> {
    if !schema.delimiter.is_ascii() {
        return Err(RecordsError::Config(
            "delimiter must be a single ASCII character".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let mut out = ParseOutput::default();
    let headers = reader.headers()?.clone();
    let cols = ColumnIndex::resolve(&headers, schema, &mut out.diagnostics)?;

    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                line += 1;
                out.diagnostics.push(ParseDiagnostic {
                    line,
                    case_id: None,
                    severity: Severity::Error,
                    message: e.to_string(),
                });
                continue;
            }
        }
        line = record.position().map_or(line + 1, |p| p.line());

        let case = match parse_row(&record, &cols, schema) {
            Ok(case) => case,
            Err(message) => {
                let id = record.get(cols.case_id).map(|s| s.trim().to_string());
                out.diagnostics.push(ParseDiagnostic {
                    line,
                    case_id: id.filter(|s| !s.is_empty()),
                    severity: Severity::Error,
                    message,
                });
                continue;
            }
        };

        if schema.layout == ProviderLayout::Long {
            if let Some(&idx) = by_id.get(&case.case_id) {
                let existing = &mut out.cases[idx];
                if existing.day_offset != case.day_offset
                    || existing.end_day_offset != case.end_day_offset
                    || existing.age != case.age
                    || existing.gender != case.gender
                    || existing.surgery_type != case.surgery_type
                {
                    out.diagnostics.push(ParseDiagnostic {
                        line,
                        case_id: Some(case.case_id.clone()),
                        severity: Severity::Warning,
                        message: "case fields differ from the first row for this case; keeping the first".into(),
                    });
                }
                existing.providers.extend(case.providers);
                for code in case.dx_codes {
                    if existing.dx_codes.len() < MAX_DX_CODES && !existing.dx_codes.contains(&code) {
                        existing.dx_codes.push(code);
                    }
                }
                continue;
            }
            by_id.insert(case.case_id.clone(), out.cases.len());
        } else if by_id.insert(case.case_id.clone(), out.cases.len()).is_some() {
            out.diagnostics.push(ParseDiagnostic {
                line,
                case_id: Some(case.case_id.clone()),
                severity: Severity::Error,
                message: "duplicate case id".into(),
            });
            continue;
        }
        out.cases.push(case);
    }

    for case in &out.cases {
        if case.providers.is_empty() {
            out.diagnostics.push(ParseDiagnostic {
                line: 0,
                case_id: Some(case.case_id.clone()),
                severity: Severity::Warning,
                message: "case has no provider ids; it will be removed by exclusion filtering".into(),
            });
        }
    }
    Ok(out)
}

/// Exclusion configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExclusionRules {
    pub min_age: u32,
    /// Provider ids treated as placeholders and dropped (case-insensitive).
    pub placeholder_ids: Vec<String>,
}

impl Default for ExclusionRules {
    fn default() -> Self {
        ExclusionRules {
            min_age: 21,
            placeholder_ids: ["NA", "N/A", "NULL", "NONE", "UNKNOWN", "-", "?", "0"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl ExclusionRules {
    fn is_placeholder(&self, id: &str) -> bool {
        let id = id.trim();
        id.is_empty() || self.placeholder_ids.iter().any(|p| p.eq_ignore_ascii_case(id))
    }
}

/// Which rule removed how many cases. A case is charged to the first rule it fails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub age: usize,
    pub missing_dates: usize,
    pub date_order: usize,
    pub same_day: usize,
    pub no_valid_providers: usize,
    pub retained: usize,
    /// Invalid provider ids stripped from retained and removed cases alike.
    pub provider_ids_dropped: usize,
}

impl ExclusionReport {
    pub fn excluded(&self) -> usize {
        self.input - self.retained
    }

    /// Key → count rows in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("input", self.input),
            ("age", self.age),
            ("missing_dates", self.missing_dates),
            ("date_order", self.date_order),
            ("same_day", self.same_day),
            ("no_valid_providers", self.no_valid_providers),
            ("retained", self.retained),
            ("provider_ids_dropped", self.provider_ids_dropped),
        ]
    }
}

pub fn apply_exclusions(cases: Vec<CaseRecord>, rules: &ExclusionRules) -> (Vec<CaseRecord>, ExclusionReport) {
    let mut report = ExclusionReport {
        input: cases.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(cases.len());

    for mut case in cases {
        let before = case.providers.len();
        case.providers.retain(|p| !rules.is_placeholder(p));
        report.provider_ids_dropped += before - case.providers.len();

        if case.age < rules.min_age {
            report.age += 1;
            continue;
        }
        let (Some(start), Some(end)) = (case.day_offset, case.end_day_offset) else {
            report.missing_dates += 1;
            continue;
        };
        if end < start {
            report.date_order += 1;
            continue;
        }
        if end == start {
            report.same_day += 1;
            continue;
        }
        if case.providers.is_empty() {
            report.no_valid_providers += 1;
            continue;
        }
        kept.push(case);
    }
    report.retained = kept.len();
    (kept, report)
}

/// Slices cases into consecutive half-open windows of `window_days` days,
/// anchored at the earliest start day. The last window stops one day after
/// the latest start day, so it may be shorter.
pub fn segment_cases(cases: &[CaseRecord], window_days: u32) -> Result<Vec<Segment>, RecordsError> {
    if window_days == 0 {
        return Err(RecordsError::InvalidWindow);
    }
    let days = cases
        .iter()
        .map(|c| {
            c.day_offset
                .ok_or_else(|| RecordsError::MissingDayOffset(c.case_id.clone()))
        })
        .collect::<Result<Vec<u32>, _>>()?;
    let (Some(&min_day), Some(&max_day)) = (days.iter().min(), days.iter().max()) else {
        return Err(RecordsError::EmptyInput);
    };

    let n_segments = ((max_day - min_day) / window_days + 1) as usize;
    let mut buckets: BTreeMap<usize, Vec<CaseRecord>> = BTreeMap::new();
    for (case, &day) in cases.iter().zip(&days) {
        let k = ((day - min_day) / window_days) as usize;
        buckets.entry(k).or_default().push(case.clone());
    }

    let segments = (0..n_segments)
        .map(|k| {
            let start = min_day + k as u32 * window_days;
            let end = if k + 1 == n_segments {
                max_day + 1
            } else {
                start + window_days
            };
            let mut cases = buckets.remove(&k).unwrap_or_default();
            cases.sort_by(|a, b| (a.day_offset, &a.case_id).cmp(&(b.day_offset, &b.case_id)));
            Segment {
                index: k + 1,
                start_day: start,
                end_day_exclusive: end,
                cases,
            }
        })
        .collect();
    Ok(segments)
}
