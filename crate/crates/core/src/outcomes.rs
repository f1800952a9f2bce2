//! Surgical complication detection from ICD9-CM diagnosis codes.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::records::CaseRecord;

/// The embedded 996–999 complication subcategories.
const EMBEDDED: [(&str, &str); 39] = [
    ("996.0", "Mechanical complication of cardiac device, implant, and graft"),
    (
        "996.1",
        "Mechanical complication of other vascular device, implant, and graft",
    ),
    (
        "996.2",
        "Mechanical complication of nervous system device, implant, and graft",
    ),
    (
        "996.3",
        "Mechanical complication of genitourinary device, implant, and graft",
    ),
    (
        "996.4",
        "Mechanical complication of internal orthopedic device, implant, and graft",
    ),
    (
        "996.5",
        "Mechanical complication of other specified prosthetic device, implant, and graft",
    ),
    (
        "996.6",
        "Infection and inflammatory reaction due to internal prosthetic device, implant, and graft",
    ),
    (
        "996.7",
        "Other complications of internal (biological) (synthetic) prosthetic device, implant, and graft",
    ),
    ("996.8", "Complications of transplanted organ"),
    ("996.9", "Complications of reattached extremity or body part"),
    ("997.0", "Nervous system complications"),
    ("997.1", "Cardiac complications"),
    ("997.2", "Peripheral vascular complications"),
    ("997.3", "Respiratory complications"),
    ("997.4", "Digestive system complications"),
    ("997.5", "Urinary complications"),
    ("997.6", "Amputation stump complication"),
    ("997.7", "Vascular complications of other vessels"),
    (
        "997.9",
        "Complications affecting other specified body systems, not elsewhere classified",
    ),
    ("998.0", "Postoperative shock"),
    ("998.1", "Hemorrhage or hematoma or seroma complicating a procedure"),
    ("998.2", "Accidental puncture or laceration during a procedure"),
    ("998.3", "Disruption of wound"),
    ("998.4", "Foreign body accidentally left during a procedure"),
    ("998.5", "Postoperative infection"),
    ("998.6", "Persistent postoperative fistula"),
    (
        "998.7",
        "Acute reaction to foreign substance accidentally left during a procedure",
    ),
    (
        "998.8",
        "Other specified complications of procedures, not elsewhere classified",
    ),
    (
        "998.9",
        "Unspecified complication of procedure, not elsewhere classified",
    ),
    ("999.0", "Generalized vaccinia"),
    ("999.1", "Air embolism"),
    ("999.2", "Other vascular complications"),
    ("999.3", "Other infection"),
    ("999.4", "Anaphylactic shock due to serum"),
    ("999.5", "Other serum reaction"),
    ("999.6", "ABO incompatibility reaction"),
    ("999.7", "Rh incompatibility reaction"),
    ("999.8", "Other infusion and transfusion reaction"),
    (
        "999.9",
        "Other and unspecified complications of medical care, not elsewhere classified",
    ),
];

const CLASSES: [&str; 4] = ["996", "997", "998", "999"];

#[derive(Debug, Error)]
pub enum OutcomesError {
    #[error("empty diagnosis code")]
    EmptyCode,
    #[error("codeset line {line}: {message}")]
    Codeset { line: usize, message: String },
    #[error("i/o error reading codeset: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodesetEntry {
    pub prefix: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplicationCodeset {
    entries: Vec<CodesetEntry>,
}

impl ComplicationCodeset {
    pub fn embedded() -> Self {
        ComplicationCodeset {
            entries: EMBEDDED
                .iter()
                .map(|&(p, d)| CodesetEntry {
                    prefix: p.to_string(),
                    definition: d.to_string(),
                })
                .collect(),
        }
    }

    /// Validates and wraps entries. Prefixes are normalized first.
    pub fn new(entries: Vec<CodesetEntry>) -> Result<Self, OutcomesError> {
        Self::validate(entries.into_iter().enumerate().map(|(i, e)| (i + 1, e)))
    }

    fn validate(entries: impl IntoIterator<Item = (usize, CodesetEntry)>) -> Result<Self, OutcomesError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (line, e) in entries {
            let prefix = normalize_icd9(&e.prefix).map_err(|_| OutcomesError::Codeset {
                line,
                message: "empty prefix".into(),
            })?;
            if !CLASSES.iter().any(|c| prefix.starts_with(c)) {
                return Err(OutcomesError::Codeset {
                    line,
                    message: format!("prefix `{prefix}` is outside 996-999"),
                });
            }
            if !seen.insert(prefix.clone()) {
                return Err(OutcomesError::Codeset {
                    line,
                    message: format!("duplicate prefix `{prefix}`"),
                });
            }
            out.push(CodesetEntry {
                prefix,
                definition: e.definition,
            });
        }
        Ok(ComplicationCodeset { entries: out })
    }

    /// Reads `prefix<TAB>definition` lines. Blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, OutcomesError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (prefix, definition) = line.split_once('\t').ok_or_else(|| OutcomesError::Codeset {
                line: i + 1,
                message: "expected `prefix<TAB>definition`".into(),
            })?;
            entries.push((
                i + 1,
                CodesetEntry {
                    prefix: prefix.trim().to_string(),
                    definition: definition.trim().to_string(),
                },
            ));
        }
        Self::validate(entries)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            writeln!(w, "{}\t{}", e.prefix, e.definition)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[CodesetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Trims, upper-cases and inserts the decimal point after the third digit of
/// numeric codes (`"99652"` → `"996.52"`). Codes starting with a letter (V/E
/// codes) are only trimmed.
pub fn normalize_icd9(raw: &str) -> Result<String, OutcomesError> {
    let code = raw.trim();
    if code.is_empty() {
        return Err(OutcomesError::EmptyCode);
    }
    if !code.starts_with(|c: char| c.is_ascii_digit()) {
        return Ok(code.to_string());
    }
    let mut code = code.to_ascii_uppercase();
    if code.ends_with('.') {
        code.pop();
    }
    if !code.contains('.') && code.len() > 3 && code.is_char_boundary(3) {
        code.insert(3, '.');
    }
    Ok(code)
}

/// Finds the codeset entry covering a normalized code: the code equals the
/// prefix or extends it with further characters. A bare three-digit class
/// (`"996"`) maps to the first entry of that class.
pub fn match_complication<'a>(code: &str, cs: &'a ComplicationCodeset) -> Option<&'a CodesetEntry> {
    if let Some(e) = cs.entries.iter().find(|e| code.starts_with(e.prefix.as_str())) {
        return Some(e);
    }
    if code.len() == 3 {
        return cs
            .entries
            .iter()
            .find(|e| e.prefix.starts_with(code) && e.prefix.as_bytes().get(3) == Some(&b'.'));
    }
    None
}

/// Number of diagnosis codes on the case that match the codeset. With
/// `distinct`, repeated codes count once.
pub fn count_complications(case: &CaseRecord, cs: &ComplicationCodeset, distinct: bool) -> usize {
    let matched = case
        .dx_codes
        .iter()
        .filter_map(|raw| normalize_icd9(raw).ok())
        .filter(|code| match_complication(code, cs).is_some());
    if distinct {
        matched.collect::<BTreeSet<_>>().len()
    } else {
        matched.count()
    }
}
