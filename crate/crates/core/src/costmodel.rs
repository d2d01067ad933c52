//! Analytic cost model for prompt packing.
//!
//! All token arithmetic is integer: a subscription line costs t_s, an
//! event line t_e, instructions t_inst, and the reserved response t_resp,
//! inside a window of W tokens. Floats appear only where a ratio does
//! (compression rho, latency, money).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenBudget;

/// Per-token prices in account currency (defaults are per-token USD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_token: f64,
    pub response_per_token: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self { prompt_per_token: 0.8e-6, response_per_token: 4.0e-6 }
    }
}

/// Largest event batch b such that
/// t_inst + n_subs * t_s + b * t_e + t_resp <= window.
/// Errors when not even one event fits.
pub fn batch_capacity(budget: &TokenBudget, n_subs: u64) -> Result<u64> {
    let fixed = budget.t_inst + n_subs * budget.t_s + budget.t_resp;
    let slack = budget.window.checked_sub(fixed).ok_or(Error::BatchInfeasible)?;
    let b = slack / budget.t_e;
    if b < 1 {
        return Err(Error::BatchInfeasible);
    }
    Ok(b)
}

/// Extra events per batch bought by compressing n subscriptions down to
/// rho * n: floor((1 - rho) * n * t_s / t_e).
pub fn batch_gain(budget: &TokenBudget, n_subs: u64, rho: f64) -> Result<u64> {
    check_rho(rho)?;
    let freed = (1.0 - rho) * (n_subs * budget.t_s) as f64;
    Ok((freed / budget.t_e as f64).floor() as u64)
}

/// Invocations needed to push m_c events through a cluster of n_subs
/// subscriptions: ceil(m_c / b_max).
pub fn invocations_for_cluster(budget: &TokenBudget, n_subs: u64, m_c: u64) -> Result<u64> {
    if m_c == 0 {
        return Ok(0);
    }
    let b_max = batch_capacity(budget, n_subs)?;
    Ok(m_c.div_ceil(b_max))
}

/// Total invocations across clusters given (n_subs, m_c) per cluster.
pub fn total_invocations(budget: &TokenBudget, clusters: &[(u64, u64)]) -> Result<u64> {
    let mut total = 0u64;
    for &(n_subs, m_c) in clusters {
        total += invocations_for_cluster(budget, n_subs, m_c)?;
    }
    Ok(total)
}

/// Rounds of parallel dispatch: ceil(invocations / parallel).
pub fn rounds(invocations: u64, parallel: u64) -> Result<u64> {
    if parallel == 0 {
        return Err(Error::InvalidInput("parallelism must be positive".into()));
    }
    Ok(invocations.div_ceil(parallel))
}

/// Estimated wall-clock latency: rounds * mean per-call latency.
pub fn latency_estimate(invocations: u64, parallel: u64, t_llm: f64) -> Result<f64> {
    if t_llm < 0.0 {
        return Err(Error::InvalidInput("t_llm must be non-negative".into()));
    }
    Ok(rounds(invocations, parallel)? as f64 * t_llm)
}

/// Window size at which splitting n subscriptions across k clusters,
/// each compressed to rho, stops paying for itself:
/// t_inst + t_resp + t_s * n * (1 - rho/k) / (1 - 1/k).
pub fn cross_cluster_window(
    budget: &TokenBudget,
    n_subs: u64,
    rho: f64,
    k: u64,
) -> Result<f64> {
    check_rho(rho)?;
    if k < 2 {
        return Err(Error::InvalidInput(
            "cross-cluster break-even needs at least 2 clusters".into(),
        ));
    }
    let kf = k as f64;
    let numerator = 1.0 - rho / kf;
    let denominator = 1.0 - 1.0 / kf;
    Ok((budget.t_inst + budget.t_resp) as f64
        + budget.t_s as f64 * n_subs as f64 * numerator / denominator)
}

/// Per-event monetary cost from total token traffic over m events.
pub fn token_cost(
    prompt_tokens: u64,
    response_tokens: u64,
    pricing: &Pricing,
    events: u64,
) -> Result<f64> {
    if events == 0 {
        return Err(Error::InvalidInput("cost per event needs at least one event".into()));
    }
    Ok((prompt_tokens as f64 * pricing.prompt_per_token
        + response_tokens as f64 * pricing.response_per_token)
        / events as f64)
}

/// Crude token count for text without a tokenizer: ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Largest subscription count that still leaves room for one event:
/// floor((window - t_inst - t_resp - t_e) / t_s).
pub fn truncation_onset(budget: &TokenBudget) -> u64 {
    let fixed = budget.t_inst + budget.t_resp + budget.t_e;
    budget.window.saturating_sub(fixed) / budget.t_s
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidInput(format!("rho must be in (0, 1], got {rho}")));
    }
    Ok(())
}

/// Hypothetical deployment for ahead-of-time prediction.
#[derive(Debug, Clone)]
pub struct CostScenario {
    pub budget: TokenBudget,
    pub clusters: u64,
    pub subs_per_cluster: u64,
    pub events: u64,
    /// Compression ratio to assume, if any.
    pub rho: Option<f64>,
    pub parallel: u64,
    /// Mean seconds per backend call.
    pub t_llm: f64,
    pub pricing: Pricing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostPrediction {
    /// Subscriptions per cluster after assumed compression.
    pub effective_subs: u64,
    pub b_max: u64,
    /// Batch growth Eq-style, present only when rho was given.
    pub delta_b: Option<u64>,
    pub invocations_per_cluster: u64,
    pub invocations: u64,
    pub rounds: u64,
    pub latency_seconds: f64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    pub cost_per_event: f64,
}

pub fn predict(s: &CostScenario) -> Result<CostPrediction> {
    if s.clusters == 0 || s.subs_per_cluster == 0 {
        return Err(Error::InvalidInput("need at least one cluster and subscription".into()));
    }
    if s.events == 0 || s.events % s.clusters != 0 {
        return Err(Error::InvalidInput(
            "events must be positive and divide evenly across clusters".into(),
        ));
    }
    let m_c = s.events / s.clusters;
    let effective_subs = match s.rho {
        Some(rho) => {
            check_rho(rho)?;
            // ceil with an epsilon so 0.6 * 25 stays 15 despite float fuzz
            ((rho * s.subs_per_cluster as f64) - 1e-9).ceil().max(1.0) as u64
        }
        None => s.subs_per_cluster,
    };
    let b_max = batch_capacity(&s.budget, effective_subs)?;
    let delta_b = match s.rho {
        Some(rho) => Some(batch_gain(&s.budget, s.subs_per_cluster, rho)?),
        None => None,
    };
    let invocations_per_cluster = m_c.div_ceil(b_max);
    let invocations = invocations_per_cluster * s.clusters;
    let rounds = rounds(invocations, s.parallel)?;
    let latency_seconds = rounds as f64 * s.t_llm;
    // Prompt side is exact under the line model; response side budgets
    // the full reservation per invocation, an upper bound.
    let per_cluster_prompt = invocations_per_cluster
        * (s.budget.t_inst + effective_subs * s.budget.t_s)
        + m_c * s.budget.t_e;
    let prompt_tokens = per_cluster_prompt * s.clusters;
    let response_tokens = invocations * s.budget.t_resp;
    let cost_per_event = token_cost(prompt_tokens, response_tokens, &s.pricing, s.events)?;
    Ok(CostPrediction {
        effective_subs,
        b_max,
        delta_b,
        invocations_per_cluster,
        invocations,
        rounds,
        latency_seconds,
        prompt_tokens,
        response_tokens,
        cost_per_event,
    })
}

/// One measured cell for model validation: predicted vs observed
/// invocation counts for a (config, k, cluster) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCell {
    pub config: String,
    pub k: u64,
    pub cluster: u64,
    pub m_c: u64,
    pub b_max: u64,
    pub i_pred: u64,
    pub i_meas: u64,
    /// Free-form grouping key for per-stratum medians.
    pub stratum: String,
}

impl ValidationCell {
    pub fn ratio(&self) -> Result<f64> {
        match (self.i_pred, self.i_meas) {
            (0, 0) => Ok(1.0),
            (0, _) => Err(Error::InvalidInput(
                "measured invocations without any predicted".into(),
            )),
            _ => Ok(self.i_meas as f64 / self.i_pred as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub cells: usize,
    pub median_ratio: f64,
    /// Fraction of cells with ratio in [0.5, 2].
    pub in_band_fraction: f64,
    /// Cells where the model under-predicted (measured > predicted).
    pub under_predictions: usize,
    /// (stratum, median ratio), sorted by stratum.
    pub strata: Vec<(String, f64)>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn validate_predictions(cells: &[ValidationCell]) -> Result<ValidationSummary> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("no validation cells".into()));
    }
    let mut ratios = Vec::with_capacity(cells.len());
    let mut in_band = 0usize;
    let mut under = 0usize;
    let mut by_stratum: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for cell in cells {
        let r = cell.ratio()?;
        if (0.5..=2.0).contains(&r) {
            in_band += 1;
        }
        if cell.i_meas > cell.i_pred {
            under += 1;
        }
        by_stratum.entry(cell.stratum.as_str()).or_default().push(r);
        ratios.push(r);
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let strata = by_stratum
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.total_cmp(b));
            (k.to_string(), median(&v))
        })
        .collect();
    Ok(ValidationSummary {
        cells: cells.len(),
        median_ratio: median(&ratios),
        in_band_fraction: in_band as f64 / cells.len() as f64,
        under_predictions: under,
        strata,
    })
}
