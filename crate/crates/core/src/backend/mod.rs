//! Matching backends: the trait plus simulated and HTTP implementations.

pub mod http;
pub mod sim;

pub use http::{HttpBackend, HttpBackendConfig};
pub use sim::{SimulatedBackend, SimulatedBackendConfig};

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::costmodel::Pricing;
use crate::error::{Error, Result};
use crate::model::{Event, Subscription, TokenBudget};

/// Token and latency accounting for one backend call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CallUsage {
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    pub latency_seconds: f64,
}

/// Compression proposals over a subscription prompt. Index pairs are
/// 1-based into the prompt's subscription list; (i, j) means i covers j
/// (covers) or i and j merge into one compound (merges).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverMergeDecision {
    pub covers: Vec<(usize, usize)>,
    pub merges: Vec<(usize, usize)>,
}

impl CoverMergeDecision {
    pub fn is_empty(&self) -> bool {
        self.covers.is_empty() && self.merges.is_empty()
    }

    /// Structural validation against the prompt size: indices in range,
    /// i != j, and no pair present in both lists.
    pub fn validate(&self, n_subs: usize) -> Result<()> {
        for &(i, j) in self.covers.iter().chain(&self.merges) {
            if i == 0 || j == 0 || i > n_subs || j > n_subs {
                return Err(Error::BackendProtocol(format!(
                    "pair ({i}, {j}) out of range for {n_subs} subscriptions"
                )));
            }
            if i == j {
                return Err(Error::BackendProtocol(format!("degenerate pair ({i}, {j})")));
            }
        }
        for pair in &self.covers {
            if self.merges.contains(pair) {
                return Err(Error::BackendProtocol(format!(
                    "pair {pair:?} appears in both covers and merges"
                )));
            }
        }
        Ok(())
    }
}

/// Matching output: (event index, subscription ID) pairs. Event indices
/// are 1-based into the prompt's event batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResponse {
    pub matches: Vec<(usize, String)>,
}

pub trait MatchBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Per-token pricing used for cost accounting of this backend.
    fn pricing(&self) -> Pricing;

    /// Proposes cover/merge pairs over the given subscription prompt.
    fn cover_merge_call(
        &self,
        subs: &[Subscription],
        budget: &TokenBudget,
    ) -> Result<(CoverMergeDecision, CallUsage)>;

    /// Matches a batch of events against the subscription prompt,
    /// returning at most `kappa` subscription IDs per event.
    fn match_call(
        &self,
        subs: &[Subscription],
        events: &[Event],
        kappa: usize,
        budget: &TokenBudget,
    ) -> Result<(MatchResponse, CallUsage)>;
}

/// Named backend instances available to a run.
pub type BackendPool = BTreeMap<String, Arc<dyn MatchBackend>>;

/// Parses a backend spec string into a backend instance.
///
/// Grammar:
///   sim:oracle[,key=value...]
///   sim:collapse[,key=value...]   (D defaults to 150)
///   http:URL
///
/// Simulated keys: `D`, `seed`, `flip_noise`, `hallucination_rate`,
/// `latency_base`, `latency_per_token`, `p_in`, `p_out`.
pub fn parse_backend_spec(spec: &str) -> Result<Arc<dyn MatchBackend>> {
    if let Some(rest) = spec.strip_prefix("sim:") {
        let mut parts = rest.split(',');
        let variant = parts.next().unwrap_or_default();
        let mut cfg = match variant {
            "oracle" => SimulatedBackendConfig::oracle(),
            "collapse" => SimulatedBackendConfig::collapse(150),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown simulated variant {other:?} (expected oracle or collapse)"
                )))
            }
        };
        for kv in parts {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("malformed backend parameter {kv:?}"))
            })?;
            let bad = |e: std::num::ParseFloatError| {
                Error::InvalidInput(format!("backend parameter {key}={value}: {e}"))
            };
            match key {
                "D" => {
                    cfg.discrimination_capacity = value.parse().map_err(|e| {
                        Error::InvalidInput(format!("backend parameter D={value}: {e}"))
                    })?
                }
                "seed" => {
                    cfg.seed = value.parse().map_err(|e| {
                        Error::InvalidInput(format!("backend parameter seed={value}: {e}"))
                    })?
                }
                "flip_noise" => cfg.flip_noise = value.parse().map_err(bad)?,
                "hallucination_rate" => cfg.hallucination_rate = value.parse().map_err(bad)?,
                "latency_base" => cfg.latency_base = value.parse().map_err(bad)?,
                "latency_per_token" => cfg.latency_per_token = value.parse().map_err(bad)?,
                "p_in" => cfg.pricing.prompt_per_token = value.parse().map_err(bad)?,
                "p_out" => cfg.pricing.response_per_token = value.parse().map_err(bad)?,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown backend parameter {other:?}"
                    )))
                }
            }
        }
        cfg.name = spec.to_string();
        Ok(Arc::new(SimulatedBackend::new(cfg)?))
    } else if let Some(url) = spec.strip_prefix("http:") {
        // Re-attach the scheme: "http:" was consumed from e.g.
        // "http://host/path" as well as from "http:https://host".
        let url = if url.starts_with("//") {
            format!("http:{url}")
        } else {
            url.to_string()
        };
        let mut cfg = HttpBackendConfig::new(url);
        cfg.name = spec.to_string();
        Ok(Arc::new(HttpBackend::new(cfg)?))
    } else {
        Err(Error::InvalidInput(format!(
            "backend spec {spec:?} must start with sim: or http:"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_grammar_roundtrip() {
        let b = parse_backend_spec("sim:oracle").unwrap();
        assert_eq!(b.name(), "sim:oracle");
        let b = parse_backend_spec("sim:collapse,D=150,seed=7").unwrap();
        assert_eq!(b.name(), "sim:collapse,D=150,seed=7");
        let b = parse_backend_spec("http://localhost:9999/match").unwrap();
        assert_eq!(b.name(), "http://localhost:9999/match");
        assert!(parse_backend_spec("grpc:foo").is_err());
        assert!(parse_backend_spec("sim:magic").is_err());
        assert!(parse_backend_spec("sim:oracle,D=abc").is_err());
        assert!(parse_backend_spec("sim:oracle,bogus=1").is_err());
    }

    #[test]
    fn decision_validation() {
        let d = CoverMergeDecision { covers: vec![(1, 2)], merges: vec![] };
        assert!(d.validate(2).is_ok());
        let d = CoverMergeDecision { covers: vec![(1, 3)], merges: vec![] };
        assert!(matches!(d.validate(2), Err(Error::BackendProtocol(_))));
        let d = CoverMergeDecision { covers: vec![(1, 1)], merges: vec![] };
        assert!(d.validate(2).is_err());
        let d = CoverMergeDecision { covers: vec![(1, 2)], merges: vec![(1, 2)] };
        assert!(d.validate(2).is_err());
        let d = CoverMergeDecision { covers: vec![(0, 2)], merges: vec![] };
        assert!(d.validate(2).is_err());
    }
}
