//! Minimal JSON-over-HTTP client shared by the remote backends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpClient {
    name: String,
    url: String,
    headers: Vec<(String, String)>,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(name: impl Into<String>, url: impl Into<String>) -> Self {
        Self::with_timeout(name, url, Duration::from_secs(60))
    }

    pub fn with_timeout(name: impl Into<String>, url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            name: name.into(),
            url: url.into(),
            headers: Vec::new(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` as JSON and decodes the JSON reply.
    ///
    /// 401/403 map to [`Error::Authentication`], 429 to [`Error::RateLimited`], other
    /// failures and transport errors to [`Error::BackendUnavailable`], and undecodable
    /// replies to [`Error::BackendProtocol`].
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let mut req = self.agent.post(&self.url);
        for (k, v) in &self.headers {
            req = req.set(k, v);
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let backend = self.name.clone();
                return Err(match code {
                    401 | 403 => Error::Authentication { backend },
                    429 => Error::RateLimited { backend },
                    _ => Error::BackendUnavailable {
                        backend,
                        reason: format!(
                            "HTTP {code}: {}",
                            r.into_string().unwrap_or_default().chars().take(200).collect::<String>()
                        ),
                    },
                });
            }
            Err(e) => {
                return Err(Error::BackendUnavailable {
                    backend: self.name.clone(),
                    reason: e.to_string(),
                })
            }
        };
        let text = resp.into_string().map_err(|e| Error::BackendProtocol {
            backend: self.name.clone(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::BackendProtocol {
            backend: self.name.clone(),
            reason: e.to_string(),
        })
    }
}
