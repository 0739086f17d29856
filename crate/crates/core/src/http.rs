//! Blocking JSON-over-HTTP plumbing shared by the embedding and language
//! model clients: bearer auth, bounded in-flight requests, retries with
//! exponential backoff.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const API_KEY_VAR: &str = "RCB_API_KEY";

pub fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_attempts() -> usize {
    3
}
fn default_backoff() -> u64 {
    200
}
fn default_timeout() -> u64 {
    60_000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: default_attempts(), initial_backoff_ms: default_backoff(), timeout_ms: default_timeout() }
    }
}

#[derive(Debug, Clone)]
pub struct HttpFailure {
    pub attempts: usize,
    pub status: Option<u16>,
    pub detail: String,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpEndpoint {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    max_concurrency: usize,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpEndpoint {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy, max_concurrency: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(retry.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry,
            max_concurrency: max_concurrency.max(1),
            agent,
            in_flight: Semaphore::new(max_concurrency),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POST `body` to `{base_url}/{route}` and decode the JSON reply.
    ///
    /// Transport failures, 429 and 5xx replies are retried; other statuses fail at once.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R, HttpFailure> {
        let url = format!("{}/{}", self.base_url, route);
        let attempts = self.retry.attempts.max(1);
        let mut backoff = Duration::from_millis(self.retry.initial_backoff_ms);
        let mut last = HttpFailure { attempts: 0, status: None, detail: String::new() };
        for attempt in 1..=attempts {
            let _permit = self.in_flight.acquire();
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<R>().map_err(|e| HttpFailure {
                            attempts: attempt,
                            status: Some(status),
                            detail: format!("POST {url}: malformed response body: {e}"),
                        });
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    last = HttpFailure {
                        attempts: attempt,
                        status: Some(status),
                        detail: format!("POST {url}: HTTP {status}: {}", text.trim()),
                    };
                    if status != 429 && status < 500 {
                        return Err(last);
                    }
                }
                Err(e) => {
                    last = HttpFailure { attempts: attempt, status: None, detail: format!("POST {url}: {e}") };
                }
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(last)
    }

    /// Apply `f` to every item with at most `max_concurrency` running at once.
    /// Results come back in input order; the first failing item's error wins.
    pub fn parallel<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..self.max_concurrency.min(items.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| {
                s.into_inner()
                    .unwrap_or_else(|e| e.into_inner())
                    .unwrap_or_else(|| Err(Error::ClientError("worker did not run".into())))
            })
            .collect()
    }
}
