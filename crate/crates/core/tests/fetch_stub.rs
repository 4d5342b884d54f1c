mod common;

use std::collections::HashMap;
use std::time::Duration;

use chrono::NaiveDate;
use common::{Behaviour, Stub};
use openadopt::ingest::{fetch_snapshots, FetchFailureCause, FetchPolicy, HubClient};
use openadopt::registry::ModelId;

fn ids(names: &[String]) -> Vec<ModelId> {
    names.iter().map(|n| ModelId::parse(&format!("org/{n}")).unwrap()).collect()
}

fn policy(max_parallel: usize, interval_ms: u64) -> FetchPolicy {
    FetchPolicy {
        max_parallel,
        retry_limit: 3,
        min_request_interval: Duration::from_millis(interval_ms),
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
    }
}

fn run_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 3, 25).unwrap()
}

#[test]
fn bounded_parallelism_and_spacing() {
    let names: Vec<String> = (0..24).map(|i| format!("m{i:02}")).collect();
    let behaviour = names.iter().enumerate().map(|(i, n)| (n.clone(), Behaviour::Ok(1000 + i as u64))).collect();
    let stub = Stub::start(behaviour, Duration::from_millis(40));
    let client = HubClient::new(&stub.url, Duration::from_secs(5));
    let p = policy(4, 5);
    let (points, report) = fetch_snapshots(&client, &ids(&names), &p, run_date());

    assert_eq!(points.len(), 24);
    assert!(report.failures.is_empty());
    assert_eq!(points[3].cumulative_downloads, 1003);
    assert!(points.iter().all(|p| p.observed_at == run_date()));
    let peak = stub.max_in_flight.load(std::sync::atomic::Ordering::SeqCst);
    assert!(peak <= 4, "peak in flight {peak}");
    assert!(peak >= 2, "requests never overlapped");
    assert_eq!(stub.arrivals.lock().unwrap().len(), report.request_log.len());
    for w in report.request_log.windows(2) {
        assert!(w[1].started - w[0].started >= p.min_request_interval, "{:?}", w);
    }
}

#[test]
fn retries_then_reports() {
    let mut behaviour = HashMap::new();
    behaviour.insert("flaky".to_string(), Behaviour::FailThenOk(503, 2, 77));
    behaviour.insert("throttled".to_string(), Behaviour::Status(429));
    behaviour.insert("gone".to_string(), Behaviour::Status(404));
    behaviour.insert("teapot".to_string(), Behaviour::Status(418));
    let stub = Stub::start(behaviour, Duration::ZERO);
    let client = HubClient::new(&stub.url, Duration::from_secs(5));
    let names: Vec<String> = ["flaky", "throttled", "gone", "teapot"].map(String::from).to_vec();
    let (points, report) = fetch_snapshots(&client, &ids(&names), &policy(2, 1), run_date());

    assert_eq!(points.len(), 1);
    assert_eq!(points[0].cumulative_downloads, 77);
    assert_eq!(report.fetched[0].attempts, 3);
    let cause = |n: &str| {
        report.failures.iter().find(|f| f.model_id.name() == n).map(|f| (f.cause.clone(), f.attempts)).unwrap()
    };
    assert_eq!(cause("throttled"), (FetchFailureCause::Http(429), 4));
    assert_eq!(cause("gone"), (FetchFailureCause::NotFound, 1));
    assert_eq!(cause("teapot"), (FetchFailureCause::Http(418), 1));
    assert_eq!(report.request_log.len(), 3 + 4 + 1 + 1);
}

#[test]
fn unreachable_host_is_a_transport_failure() {
    let client = HubClient::new("http://127.0.0.1:9", Duration::from_millis(500));
    let mut p = policy(1, 0);
    p.retry_limit = 1;
    let (points, report) = fetch_snapshots(&client, &ids(&["x".to_string()]), &p, run_date());
    assert!(points.is_empty());
    assert!(matches!(report.failures[0].cause, FetchFailureCause::Transport(_)));
    assert_eq!(report.failures[0].attempts, 2);
}
