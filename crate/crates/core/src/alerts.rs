//! Alert delivery: sinks, retry policy and a background dispatcher with a
//! bounded drop-oldest queue so slow sinks never hold up frame processing.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::validator::AlertEvent;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

/// Anything that can take delivery of an alert.
pub trait AlertSink: Send {
    fn name(&self) -> String;
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String>;
}

/// One JSON object per line, e.g.
/// `{"frame":41,"timestamp":1.64,"box":{"x":1.0,"y":2.0,"w":3.0,"h":4.0},"score":0.93}`.
pub fn alert_json(event: &AlertEvent) -> String {
    serde_json::to_string(event).expect("alert events serialize")
}

/// Appends JSON lines to a file.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    pub fn new(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileSink {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl AlertSink for FileSink {
    fn name(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String> {
        let mut line = alert_json(event);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| e.to_string())
    }
}

/// POSTs the alert JSON to a URL; any 2xx status counts as delivered.
#[derive(Debug)]
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, String> {
        let uri: ureq::http::Uri = url
            .parse()
            .map_err(|e| format!("invalid alert URL {url:?}: {e}"))?;
        if !matches!(uri.scheme_str(), Some("http" | "https")) || uri.host().is_none() {
            return Err(format!(
                "invalid alert URL {url:?}: expected http:// or https:// with a host"
            ));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Ok(WebhookSink {
            url: url.to_string(),
            agent,
        })
    }
}

impl AlertSink for WebhookSink {
    fn name(&self) -> String {
        format!("webhook:{}", self.url)
    }

    fn deliver(&mut self, event: &AlertEvent) -> Result<(), String> {
        let resp = self
            .agent
            .post(&self.url)
            .content_type("application/json")
            .send(alert_json(event))
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else {
            Err(format!("HTTP {}", status.as_u16()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeliveryConfig {
    /// Total attempts per sink, including the first.
    pub attempts: u32,
    /// Delay before the first retry; doubles for each further retry.
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub queue_capacity: usize,
}

impl Default for DeliveryConfig {
    fn default() -> Self {
        DeliveryConfig {
            attempts: 3,
            backoff_ms: 1000,
            timeout_ms: 5000,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl DeliveryConfig {
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << retry.min(32)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub frame: u64,
    pub sink: String,
    pub success: bool,
    pub attempts: u32,
    pub error: Option<String>,
}

/// Tries one sink up to `cfg.attempts` times with exponential backoff.
pub fn deliver_with_retry(
    sink: &mut dyn AlertSink,
    event: &AlertEvent,
    cfg: &DeliveryConfig,
) -> DeliveryRecord {
    let attempts = cfg.attempts.max(1);
    let mut last_err = None;
    for attempt in 1..=attempts {
        match sink.deliver(event) {
            Ok(()) => {
                return DeliveryRecord {
                    frame: event.frame,
                    sink: sink.name(),
                    success: true,
                    attempts: attempt,
                    error: None,
                };
            }
            Err(e) => {
                log::warn!(
                    "alert for frame {} to {} failed (attempt {attempt}/{attempts}): {e}",
                    event.frame,
                    sink.name()
                );
                last_err = Some(e);
                if attempt < attempts {
                    std::thread::sleep(cfg.backoff(attempt - 1));
                }
            }
        }
    }
    log::error!(
        "giving up on alert for frame {} to {}",
        event.frame,
        sink.name()
    );
    DeliveryRecord {
        frame: event.frame,
        sink: sink.name(),
        success: false,
        attempts,
        error: last_err,
    }
}

#[derive(Default)]
struct Queue {
    events: VecDeque<AlertEvent>,
    dropped: Vec<AlertEvent>,
    closed: bool,
}

/// Everything the dispatcher did, returned when it shuts down.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchSummary {
    pub deliveries: Vec<DeliveryRecord>,
    pub dropped: Vec<AlertEvent>,
}

/// Delivers alerts to every sink on a worker thread. When the queue is full
/// the oldest pending alert is discarded and recorded.
pub struct Dispatcher {
    shared: Arc<(Mutex<Queue>, Condvar)>,
    capacity: usize,
    worker: Option<JoinHandle<Vec<DeliveryRecord>>>,
}

impl Dispatcher {
    pub fn spawn(mut sinks: Vec<Box<dyn AlertSink>>, cfg: DeliveryConfig) -> Self {
        let shared = Arc::new((Mutex::new(Queue::default()), Condvar::new()));
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::spawn(move || {
            let (lock, cvar) = &*worker_shared;
            let mut records = Vec::new();
            loop {
                let event = {
                    let mut q = lock.lock().expect("alert queue poisoned");
                    while q.events.is_empty() && !q.closed {
                        q = cvar.wait(q).expect("alert queue poisoned");
                    }
                    match q.events.pop_front() {
                        Some(e) => e,
                        None => break,
                    }
                };
                for sink in sinks.iter_mut() {
                    records.push(deliver_with_retry(sink.as_mut(), &event, &cfg));
                }
            }
            records
        });
        Dispatcher {
            shared,
            capacity: cfg.queue_capacity.max(1),
            worker: Some(worker),
        }
    }

    pub fn submit(&self, event: AlertEvent) {
        let (lock, cvar) = &*self.shared;
        let mut q = lock.lock().expect("alert queue poisoned");
        if q.events.len() >= self.capacity {
            if let Some(old) = q.events.pop_front() {
                log::warn!("alert queue full, dropping alert for frame {}", old.frame);
                q.dropped.push(old);
            }
        }
        q.events.push_back(event);
        cvar.notify_one();
    }

    /// Waits for queued alerts to be delivered and stops the worker.
    pub fn finish(mut self) -> DispatchSummary {
        self.close();
        let deliveries = self
            .worker
            .take()
            .map(|w| w.join().expect("alert worker panicked"))
            .unwrap_or_default();
        let dropped =
            std::mem::take(&mut self.shared.0.lock().expect("alert queue poisoned").dropped);
        DispatchSummary {
            deliveries,
            dropped,
        }
    }

    fn close(&self) {
        let (lock, cvar) = &*self.shared;
        lock.lock().expect("alert queue poisoned").closed = true;
        cvar.notify_all();
    }
}

impl Drop for Dispatcher {
    fn drop(&mut self) {
        self.close();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
