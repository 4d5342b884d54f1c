//! Local stand-in for the hub metadata API.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use tiny_http::{Response, Server};

/// How the stub answers for a model name (the last path segment).
#[derive(Clone, Copy, Debug)]
pub enum Behaviour {
    Ok(u64),
    /// Fails with the status this many times, then answers `Ok`.
    FailThenOk(u16, usize, u64),
    Status(u16),
}

pub struct Stub {
    pub url: String,
    pub max_in_flight: Arc<AtomicUsize>,
    pub arrivals: Arc<Mutex<Vec<Instant>>>,
    server: Arc<Server>,
    workers: Vec<thread::JoinHandle<()>>,
}

impl Stub {
    pub fn start(behaviour: HashMap<String, Behaviour>, latency: Duration) -> Stub {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub"));
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let arrivals = Arc::new(Mutex::new(Vec::new()));
        let hits: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let behaviour = Arc::new(behaviour);
        let workers = (0..32)
            .map(|_| {
                let (server, in_flight, max_in_flight, arrivals, hits, behaviour) = (
                    server.clone(),
                    in_flight.clone(),
                    max_in_flight.clone(),
                    arrivals.clone(),
                    hits.clone(),
                    behaviour.clone(),
                );
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        arrivals.lock().unwrap().push(Instant::now());
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let name = req.url().rsplit('/').next().unwrap_or("").to_string();
                        let seen = {
                            let mut h = hits.lock().unwrap();
                            let n = h.entry(name.clone()).or_insert(0);
                            *n += 1;
                            *n
                        };
                        thread::sleep(latency);
                        let (status, body) = match behaviour.get(&name) {
                            Some(Behaviour::Ok(n)) => (200, format!("{{\"downloadsAllTime\": {n}}}")),
                            Some(Behaviour::FailThenOk(_, k, n)) if seen > *k => {
                                (200, format!("{{\"downloads\": {n}}}"))
                            }
                            Some(Behaviour::FailThenOk(s, _, _)) | Some(Behaviour::Status(s)) => {
                                (*s, "{}".to_string())
                            }
                            None => (404, "{}".to_string()),
                        };
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let _ = req.respond(Response::from_string(body).with_status_code(status));
                    }
                })
            })
            .collect();
        Stub { url, max_in_flight, arrivals, server, workers }
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
