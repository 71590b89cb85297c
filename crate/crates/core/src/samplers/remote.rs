//! Client for a remote annealer speaking a small JSON-over-HTTP protocol.
//!
//! `POST {endpoint}/v1/sample` with
//! `{"qubo": {"n_vars", "linear", "quadratic", "offset"}, "num_reads", "seed"?}`
//! answers `200 {"samples", "energies", "occurrences"?}` or a non-200 status
//! with `{"error": "..."}`. Energies reported by the server are ignored in
//! favour of local recomputation.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SampleSet, Sampler, SamplerConfig, SamplerId, SamplerKind};
use crate::error::{Error, Result};
use crate::problem::{BinaryVector, EffectiveQubo};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const SAMPLE_PATH: &str = "/v1/sample";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("could not connect to {endpoint}: {message}")]
    Connection { endpoint: String, message: String },

    #[error("request to {endpoint} timed out after {timeout:?}")]
    Timeout { endpoint: String, timeout: Duration },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("server returned status {status}: {message}")]
    Server { status: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireQubo {
    pub n_vars: usize,
    pub linear: Vec<f64>,
    pub quadratic: Vec<(usize, usize, f64)>,
    pub offset: f64,
}

impl From<&EffectiveQubo> for WireQubo {
    fn from(q: &EffectiveQubo) -> Self {
        Self {
            n_vars: q.n_vars(),
            linear: q.linear().to_vec(),
            quadratic: q.quadratic().to_vec(),
            offset: q.offset(),
        }
    }
}

impl TryFrom<WireQubo> for EffectiveQubo {
    type Error = Error;

    fn try_from(w: WireQubo) -> Result<Self> {
        Error::check_len("wire qubo linear terms", w.n_vars, w.linear.len())?;
        EffectiveQubo::new(w.linear, w.quadratic, w.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub qubo: WireQubo,
    pub num_reads: usize,
    /// Optional seed so that simulator backends can be replayed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub samples: Vec<Vec<u8>>,
    pub energies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrences: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

impl SampleResponse {
    pub fn from_sample_set(s: &SampleSet) -> Self {
        Self {
            samples: s.samples().iter().map(|x| x.bits().to_vec()).collect(),
            energies: s.energies().to_vec(),
            occurrences: Some(s.weights().iter().map(|&w| w as u64).collect()),
        }
    }

    /// Validates the response against `q` and recomputes energies.
    pub fn into_sample_set(self, q: &EffectiveQubo) -> Result<SampleSet, RemoteError> {
        let n = self.samples.len();
        if self.energies.len() != n {
            return Err(RemoteError::Malformed(format!(
                "{} samples but {} energies",
                n,
                self.energies.len()
            )));
        }
        let weights = match self.occurrences {
            Some(occ) if occ.len() != n => {
                return Err(RemoteError::Malformed(format!(
                    "{} samples but {} occurrences",
                    n,
                    occ.len()
                )))
            }
            Some(occ) => {
                if occ.contains(&0) {
                    return Err(RemoteError::Malformed("occurrence count of zero".into()));
                }
                occ.into_iter().map(|o| o as f64).collect()
            }
            None => vec![1.0; n],
        };
        let samples = self
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, bits)| {
                if bits.len() != q.n_vars() {
                    return Err(RemoteError::Malformed(format!(
                        "sample {i} has {} bits, expected {}",
                        bits.len(),
                        q.n_vars()
                    )));
                }
                BinaryVector::new(bits)
                    .map_err(|e| RemoteError::Malformed(format!("sample {i}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        SampleSet::from_weighted(q, samples, weights)
            .map_err(|e| RemoteError::Malformed(e.to_string()))
    }
}

fn sample_url(endpoint: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), SAMPLE_PATH)
}

/// Samples `q` on a remote endpoint with the default 60 s timeout.
pub fn remote_sample(endpoint: &str, q: &EffectiveQubo, cfg: &SamplerConfig) -> Result<SampleSet> {
    remote_sample_with_timeout(endpoint, q, cfg, DEFAULT_TIMEOUT)
}

pub fn remote_sample_with_timeout(
    endpoint: &str,
    q: &EffectiveQubo,
    cfg: &SamplerConfig,
    timeout: Duration,
) -> Result<SampleSet> {
    if cfg.num_reads == 0 {
        return Err(Error::InvalidConfig("num_reads must be positive".into()));
    }
    let request = SampleRequest {
        qubo: q.into(),
        num_reads: cfg.num_reads,
        seed: Some(cfg.seed),
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let transport = |e: ureq::Error| match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout {
            endpoint: endpoint.to_string(),
            timeout,
        },
        other => RemoteError::Connection {
            endpoint: endpoint.to_string(),
            message: other.to_string(),
        },
    };
    let mut response = agent
        .post(&sample_url(endpoint))
        .send_json(&request)
        .map_err(transport)?;
    let status = response.status().as_u16();
    let body = response
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_string()
        .map_err(|e| match e {
            ureq::Error::Timeout(_) => transport(e),
            other => RemoteError::Malformed(format!("unreadable body: {other}")),
        })?;
    if status != 200 {
        let message = serde_json::from_str::<ErrorResponse>(&body)
            .map(|e| e.error)
            .unwrap_or(body);
        return Err(RemoteError::Server { status, message }.into());
    }
    let parsed: SampleResponse =
        serde_json::from_str(&body).map_err(|e| RemoteError::Malformed(e.to_string()))?;
    Ok(parsed.into_sample_set(q)?)
}

/// A remote endpoint behind the [`Sampler`] trait. Only `num_reads` and the
/// per-call seed are forwarded.
#[derive(Debug, Clone)]
pub struct RemoteSampler {
    pub endpoint: String,
    pub config: SamplerConfig,
    pub timeout: Duration,
}

impl RemoteSampler {
    pub fn new(endpoint: impl Into<String>, config: SamplerConfig) -> Self {
        Self {
            endpoint: endpoint.into(),
            config,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Sampler for RemoteSampler {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet> {
        remote_sample_with_timeout(&self.endpoint, q, &self.config.with_seed(seed), self.timeout)
    }

    fn id(&self) -> SamplerId {
        SamplerId {
            sampler: SamplerKind::Remote,
            trotter: None,
            beta: self.config.beta,
        }
    }
}
