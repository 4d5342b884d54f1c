//! Hub metadata client with bounded parallelism, request spacing and retry.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde_json::Value;

use super::SnapshotPoint;
use crate::registry::ModelId;

#[derive(Debug, Clone, PartialEq)]
pub struct FetchPolicy {
    /// Upper bound on in-flight requests.
    pub max_parallel: usize,
    /// Retries after the first attempt for 429, 5xx and transport errors.
    pub retry_limit: u32,
    /// Minimum spacing between any two request starts.
    pub min_request_interval: Duration,
    /// First retry delay; doubles on each further retry.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            max_parallel: 8,
            retry_limit: 3,
            min_request_interval: Duration::from_millis(50),
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }
}

/// Which JSON field the download count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownloadField {
    DownloadsAllTime,
    Downloads,
}

impl DownloadField {
    pub fn as_str(self) -> &'static str {
        match self {
            DownloadField::DownloadsAllTime => "downloadsAllTime",
            DownloadField::Downloads => "downloads",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchFailureCause {
    NotFound,
    Http(u16),
    Transport(String),
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchFailure {
    pub model_id: ModelId,
    pub cause: FetchFailureCause,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedModel {
    pub model_id: ModelId,
    pub field: DownloadField,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestLogEntry {
    pub model_id: ModelId,
    pub attempt: u32,
    /// Start of the request relative to the start of the run.
    pub started: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct FetchReport {
    pub fetched: Vec<FetchedModel>,
    pub failures: Vec<FetchFailure>,
    /// Every request start, in order.
    pub request_log: Vec<RequestLogEntry>,
}

pub struct HubClient {
    base_url: String,
    agent: ureq::Agent,
}

impl HubClient {
    pub fn new(base_url: &str, timeout: Duration) -> HubClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(concat!("openadopt/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        HubClient { base_url: base_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn model_url(&self, id: &ModelId) -> String {
        format!("{}/api/models/{}", self.base_url, id)
    }

    fn get(&self, id: &ModelId) -> Result<(u16, String), String> {
        let mut resp = self.agent.get(&self.model_url(id)).call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, body))
    }
}

/// Extracts the all-time download count, falling back to `downloads`.
pub(crate) fn parse_downloads(body: &str) -> Result<(u64, DownloadField), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let (field, raw) = match (v.get("downloadsAllTime"), v.get("downloads")) {
        (Some(x), _) if !x.is_null() => (DownloadField::DownloadsAllTime, x),
        (_, Some(x)) => (DownloadField::Downloads, x),
        _ => return Err("response has no downloads field".into()),
    };
    if let Some(n) = raw.as_u64() {
        Ok((n, field))
    } else if let Some(n) = raw.as_i64() {
        Err(format!("negative {}: {n}", field.as_str()))
    } else {
        Err(format!("{} is not an integer: {raw}", field.as_str()))
    }
}

struct Spacer {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl Spacer {
    /// Blocks until the interval since the previous start has elapsed and
    /// returns this request's start instant.
    fn wait(&self) -> Instant {
        let mut next = self.next.lock().unwrap();
        if let Some(at) = *next {
            let now = Instant::now();
            if at > now {
                thread::sleep(at - now);
            }
        }
        let start = Instant::now();
        *next = Some(start + self.interval);
        start
    }
}

enum Outcome {
    Ok(u64, DownloadField, u32),
    Failed(FetchFailureCause, u32),
}

/// Fetches current cumulative downloads for each id and stamps the points
/// with `run_date`. Failures are reported, never fatal. Results are ordered
/// by model id.
pub fn fetch_snapshots(
    client: &HubClient,
    model_ids: &[ModelId],
    policy: &FetchPolicy,
    run_date: NaiveDate,
) -> (Vec<SnapshotPoint>, FetchReport) {
    let run_start = Instant::now();
    let spacer = Spacer { interval: policy.min_request_interval, next: Mutex::new(None) };
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<(ModelId, Outcome)>> = Mutex::new(Vec::new());
    let log: Mutex<Vec<RequestLogEntry>> = Mutex::new(Vec::new());
    let workers = policy.max_parallel.max(1).min(model_ids.len().max(1));

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(id) = model_ids.get(i) else { break };
                let outcome = fetch_one(client, id, policy, &spacer, |attempt, started| {
                    log.lock().unwrap().push(RequestLogEntry {
                        model_id: id.clone(),
                        attempt,
                        started: started - run_start,
                    });
                });
                results.lock().unwrap().push((id.clone(), outcome));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut request_log = log.into_inner().unwrap();
    request_log.sort_by_key(|e| e.started);

    let mut points = Vec::new();
    let mut report = FetchReport { request_log, ..FetchReport::default() };
    for (id, outcome) in results {
        match outcome {
            Outcome::Ok(n, field, attempts) => {
                points.push(SnapshotPoint {
                    model_id: id.clone(),
                    observed_at: run_date,
                    cumulative_downloads: n,
                });
                report.fetched.push(FetchedModel { model_id: id, field, attempts });
            }
            Outcome::Failed(cause, attempts) => {
                report.failures.push(FetchFailure { model_id: id, cause, attempts })
            }
        }
    }
    (points, report)
}

fn fetch_one(
    client: &HubClient,
    id: &ModelId,
    policy: &FetchPolicy,
    spacer: &Spacer,
    mut on_start: impl FnMut(u32, Instant),
) -> Outcome {
    let mut attempt = 0;
    loop {
        attempt += 1;
        on_start(attempt, spacer.wait());
        let retryable = match client.get(id) {
            Ok((200..=299, body)) => {
                return match parse_downloads(&body) {
                    Ok((n, field)) => Outcome::Ok(n, field, attempt),
                    Err(msg) => Outcome::Failed(FetchFailureCause::Parse(msg), attempt),
                };
            }
            Ok((404, _)) => return Outcome::Failed(FetchFailureCause::NotFound, attempt),
            Ok((status @ (429 | 500..=599), _)) => FetchFailureCause::Http(status),
            Ok((status, _)) => return Outcome::Failed(FetchFailureCause::Http(status), attempt),
            Err(e) => FetchFailureCause::Transport(e),
        };
        if attempt > policy.retry_limit {
            return Outcome::Failed(retryable, attempt);
        }
        let backoff = policy.initial_backoff.saturating_mul(1 << (attempt - 1).min(16));
        log::debug!("retrying {id} after {retryable:?} in {backoff:?}");
        thread::sleep(backoff);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefers_all_time_field() {
        assert_eq!(
            parse_downloads(r#"{"downloads": 5, "downloadsAllTime": 900}"#),
            Ok((900, DownloadField::DownloadsAllTime))
        );
        assert_eq!(parse_downloads(r#"{"downloads": 5}"#), Ok((5, DownloadField::Downloads)));
    }

    #[test]
    fn rejects_negative_and_missing() {
        assert!(parse_downloads(r#"{"downloads": -5}"#).unwrap_err().contains("negative"));
        assert!(parse_downloads(r#"{"likes": 3}"#).is_err());
        assert!(parse_downloads(r#"{"downloads": 1.5}"#).is_err());
        assert!(parse_downloads("<html>").is_err());
    }

    #[test]
    fn url_shape() {
        let c = HubClient::new("http://localhost:1234/", Duration::from_secs(1));
        assert_eq!(
            c.model_url(&ModelId::parse("Qwen/Qwen3-8B").unwrap()),
            "http://localhost:1234/api/models/Qwen/Qwen3-8B"
        );
    }
}
