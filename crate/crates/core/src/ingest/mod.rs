//! Snapshot acquisition and the append-only snapshot store.

mod fetch;
mod history;
mod store;

pub use fetch::{fetch_snapshots, DownloadField, FetchFailure, FetchFailureCause, FetchPolicy, FetchReport, FetchedModel, HubClient, RequestLogEntry};
pub use history::{import_history, HistoricalMonthly, HistoryImport, HistoryIssue};
pub use store::{AppendReport, SnapshotStore, Stream};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::ModelId;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("store integrity error in {file} at line {line} (byte {offset}): {message}")]
    Integrity {
        file: String,
        line: usize,
        offset: u64,
        message: String,
    },
    #[error("store at {0} is locked by another writer")]
    Locked(String),
    #[error("history file format error: {0}")]
    Format(String),
}

impl IngestError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.as_ref().display().to_string(), source }
    }
}

/// One dated cumulative-download observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotPoint {
    pub model_id: ModelId,
    pub observed_at: NaiveDate,
    pub cumulative_downloads: u64,
}

/// Reads `model_id,date,cumulative_downloads` rows, e.g. an export from
/// another scraper. Any malformed row fails the whole file.
pub fn read_snapshots_csv(text: &str) -> Result<Vec<SnapshotPoint>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| IngestError::Format(e.to_string()))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ci), Some(cd), Some(cv)) = (pos("model_id"), pos("date"), pos("cumulative_downloads"))
    else {
        return Err(IngestError::Format("expected header model_id,date,cumulative_downloads".into()));
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| IngestError::Format(format!("line {line}: {m}"));
        let row = row.map_err(|e| bad(e.to_string()))?;
        let get = |c: usize| row.get(c).unwrap_or("");
        out.push(SnapshotPoint {
            model_id: ModelId::parse(get(ci)).map_err(|e| bad(e.to_string()))?,
            observed_at: NaiveDate::parse_from_str(get(cd), "%Y-%m-%d")
                .map_err(|_| bad(format!("bad date {:?}", get(cd))))?,
            cumulative_downloads: get(cv)
                .parse()
                .map_err(|_| bad(format!("bad cumulative_downloads {:?}", get(cv))))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_csv() {
        let pts = read_snapshots_csv("model_id,date,cumulative_downloads\na/b,2025-01-02,7\n").unwrap();
        assert_eq!(pts[0].cumulative_downloads, 7);
        assert!(read_snapshots_csv("model_id,date,cumulative_downloads\na/b,2025-01-02,-7\n").is_err());
        assert!(read_snapshots_csv("x\n").is_err());
    }
}
