use std::collections::HashMap;

use chrono::{Datelike, NaiveDate};

use super::IngestError;
use crate::registry::{ModelId, Registry};

/// Monthly cumulative downloads from a vendor history file. Values are
/// taken as already outlier-filtered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoricalMonthly {
    pub model_id: ModelId,
    /// First-of-month label.
    pub month: NaiveDate,
    pub cumulative_downloads: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryIssue {
    pub line: usize,
    pub model_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct HistoryImport {
    pub rows: Vec<HistoricalMonthly>,
    pub errors: Vec<HistoryIssue>,
    /// Rows kept but flagged, e.g. models missing from the registry.
    pub warnings: Vec<HistoryIssue>,
}

/// Parses a `model_id,month,cumulative_downloads` CSV.
///
/// Months must be `YYYY-MM-01` and strictly increasing per model in file
/// order. Models absent from `registry` are kept with a warning.
pub fn import_history(text: &str, registry: Option<&Registry>) -> Result<HistoryImport, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| IngestError::Format(e.to_string()))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ci), Some(cm), Some(cv)) = (pos("model_id"), pos("month"), pos("cumulative_downloads"))
    else {
        return Err(IngestError::Format(
            "expected header model_id,month,cumulative_downloads".into(),
        ));
    };

    let mut out = HistoryImport::default();
    let mut last_month: HashMap<String, NaiveDate> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(HistoryIssue { line, model_id: String::new(), message: e.to_string() });
                continue;
            }
        };
        let raw_id = row.get(ci).unwrap_or("").to_string();
        let issue = |message: String| HistoryIssue { line, model_id: raw_id.clone(), message };
        let Ok(model_id) = ModelId::parse(&raw_id) else {
            out.errors.push(issue("invalid model id".into()));
            continue;
        };
        let month = match NaiveDate::parse_from_str(row.get(cm).unwrap_or(""), "%Y-%m-%d") {
            Ok(m) if m.day() == 1 => m,
            _ => {
                out.errors.push(issue(format!("month must be YYYY-MM-01, got {:?}", row.get(cm))));
                continue;
            }
        };
        let Ok(value) = row.get(cv).unwrap_or("").parse::<u64>() else {
            out.errors.push(issue(format!("bad cumulative_downloads {:?}", row.get(cv))));
            continue;
        };
        if let Some(&prev) = last_month.get(model_id.as_str()) {
            if month == prev {
                out.errors.push(issue(format!("duplicate month {month}")));
                continue;
            }
            if month < prev {
                out.errors.push(issue(format!("month {month} is not after {prev}")));
                continue;
            }
        }
        if registry.is_some_and(|r| !r.contains(model_id.as_str())) {
            out.warnings.push(issue("model not in registry".into()));
        }
        last_month.insert(model_id.to_string(), month);
        out.rows.push(HistoricalMonthly { model_id, month, cumulative_downloads: value });
    }
    Ok(out)
}
