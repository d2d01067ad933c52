//! HTTP backend speaking a minimal completion protocol.
//!
//! One POST per call. The request carries the system prompt, the packed
//! user prompt, a max_tokens cap, and temperature 0; the response body is
//! the model's completion, which must be exactly the JSON object the
//! prompt asked for. A malformed completion gets one retry before the
//! call fails with a protocol error; transport failures are reported as
//! unavailability so the caller can tell the two apart.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{CallUsage, CoverMergeDecision, MatchBackend, MatchResponse};
use crate::costmodel::{estimate_tokens, Pricing};
use crate::error::{Error, Result};
use crate::model::{Event, Subscription, TokenBudget};
use crate::prompt;

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub name: String,
    pub url: String,
    /// Environment variable holding the bearer token, if the endpoint
    /// needs one. Read once at construction.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub pricing: Pricing,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>) -> Self {
        let url = url.into();
        Self {
            name: url.clone(),
            url,
            api_key_env: None,
            timeout: Duration::from_secs(30),
            pricing: Pricing::default(),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    system: &'a str,
    user: &'a str,
    max_tokens: u64,
    temperature: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverMergeWire {
    #[serde(default)]
    covers: Vec<(usize, usize)>,
    #[serde(default)]
    merges: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchWire {
    #[serde(default)]
    matches: Vec<(usize, String)>,
}

pub struct HttpBackend {
    cfg: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidInput(format!("api key environment variable {var} not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        Ok(Self { cfg, api_key, client })
    }

    fn post(&self, request: &CompletionRequest) -> Result<String> {
        let mut builder = self.client.post(&self.cfg.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let response = builder
            .send()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::BackendUnavailable(format!(
                "{} returned {}",
                self.cfg.url,
                response.status()
            )));
        }
        response.text().map_err(|e| Error::BackendUnavailable(e.to_string()))
    }

    /// Sends the request and parses the completion, retrying exactly once
    /// when the completion does not parse. Transport errors are final.
    fn call<T: for<'de> Deserialize<'de>>(
        &self,
        request: &CompletionRequest,
    ) -> Result<(T, CallUsage)> {
        let started = Instant::now();
        let mut last_body = self.post(request)?;
        let parsed = match serde_json::from_str::<T>(&last_body) {
            Ok(v) => v,
            Err(_) => {
                last_body = self.post(request)?;
                serde_json::from_str::<T>(&last_body).map_err(|e| {
                    Error::BackendProtocol(format!("unparsable completion after retry: {e}"))
                })?
            }
        };
        let usage = CallUsage {
            prompt_tokens: estimate_tokens(request.system) + estimate_tokens(request.user),
            response_tokens: estimate_tokens(&last_body),
            latency_seconds: started.elapsed().as_secs_f64(),
        };
        Ok((parsed, usage))
    }
}

impl MatchBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn pricing(&self) -> Pricing {
        self.cfg.pricing
    }

    fn cover_merge_call(
        &self,
        subs: &[Subscription],
        _budget: &TokenBudget,
    ) -> Result<(CoverMergeDecision, CallUsage)> {
        let user = prompt::cover_merge_user(subs);
        let request = CompletionRequest {
            system: prompt::COVER_MERGE_SYSTEM,
            user: &user,
            max_tokens: prompt::COVER_MERGE_MAX_TOKENS,
            temperature: 0.0,
        };
        let (wire, usage): (CoverMergeWire, _) = self.call(&request)?;
        let decision = CoverMergeDecision { covers: wire.covers, merges: wire.merges };
        Ok((decision, usage))
    }

    fn match_call(
        &self,
        subs: &[Subscription],
        events: &[Event],
        kappa: usize,
        budget: &TokenBudget,
    ) -> Result<(MatchResponse, CallUsage)> {
        let user = prompt::match_user(subs, events, kappa);
        let request = CompletionRequest {
            system: prompt::MATCH_SYSTEM,
            user: &user,
            max_tokens: budget.t_resp,
            temperature: 0.0,
        };
        let (wire, usage): (MatchWire, _) = self.call(&request)?;
        Ok((MatchResponse { matches: wire.matches }, usage))
    }
}
