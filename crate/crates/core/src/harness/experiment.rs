//! Multi-seed experiment runner and its CSV artifacts.
//!
//! Result rows carry matching-phase telemetry only; compression traffic
//! is reported separately in the usage log so the two budgets stay
//! attributable. The result schema is fixed at 13 columns and files are
//! written deterministically: same inputs, same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::backend::BackendPool;
use crate::costmodel::{
    batch_capacity, invocations_for_cluster, token_cost, Pricing, ValidationCell,
};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_seeds, false_positive_rate, false_positive_rate_desc, macro_average,
    score_event_desc, score_event_id, EventScore,
};
use crate::model::{Event, SubscriptionSet, TokenBudget};
use crate::router::{run_pipeline, Assignment, PipelineConfig, Preset, RunUsage};

pub const RESULT_HEADER: [&str; 13] = [
    "preset",
    "seed",
    "variant",
    "precision",
    "recall",
    "f1",
    "fpr",
    "invocations",
    "rho",
    "latency_s",
    "prompt_tokens",
    "response_tokens",
    "cost_per_event",
];

pub const USAGE_HEADER: [&str; 9] = [
    "seed",
    "phase",
    "cluster",
    "backend",
    "n_subs_prompt",
    "m_c",
    "invocations",
    "prompt_tokens",
    "response_tokens",
];

pub const VALIDATION_HEADER: [&str; 9] =
    ["config", "k", "cluster", "m_c", "b_max", "i_pred", "i_meas", "ratio", "stratum"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub kappa: Option<usize>,
    pub budget: Option<TokenBudget>,
    pub parallel: Option<usize>,
    pub truncate_to_fit: bool,
}

impl RunConfig {
    pub fn new(preset: Preset, seeds: Vec<u64>) -> Self {
        Self {
            preset,
            seeds,
            k: None,
            tau: None,
            kappa: None,
            budget: None,
            parallel: None,
            truncate_to_fit: false,
        }
    }

    /// Preset defaults with this config's overrides applied.
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig::preset(self.preset, seed);
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        if let Some(kappa) = self.kappa {
            cfg.kappa = kappa;
        }
        if let Some(budget) = self.budget {
            cfg.budget = budget;
        }
        if let Some(parallel) = self.parallel {
            cfg.parallel = parallel;
        }
        cfg.truncate_to_fit = self.truncate_to_fit;
        cfg
    }
}

/// One line of the result table. `seed` is a number, "mean", or
/// "ci95_half"; `variant` is "id", "desc", or "error".
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub preset: String,
    pub seed: String,
    pub variant: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub invocations: f64,
    pub rho: f64,
    pub latency_s: f64,
    pub prompt_tokens: f64,
    pub response_tokens: f64,
    pub cost_per_event: f64,
}

impl ResultRow {
    fn numeric(&self) -> [f64; 10] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.fpr,
            self.invocations,
            self.rho,
            self.latency_s,
            self.prompt_tokens,
            self.response_tokens,
            self.cost_per_event,
        ]
    }

    fn from_numeric(preset: &str, seed: &str, variant: &str, v: [f64; 10]) -> Self {
        Self {
            preset: preset.to_string(),
            seed: seed.to_string(),
            variant: variant.to_string(),
            precision: v[0],
            recall: v[1],
            f1: v[2],
            fpr: v[3],
            invocations: v[4],
            rho: v[5],
            latency_s: v[6],
            prompt_tokens: v[7],
            response_tokens: v[8],
            cost_per_event: v[9],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageRow {
    pub seed: u64,
    pub phase: String,
    pub cluster: String,
    pub backend: String,
    pub n_subs_prompt: u64,
    pub m_c: u64,
    pub invocations: u64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// (seed, error message) for every seed that failed to run.
    pub failures: Vec<(u64, String)>,
    pub usage: Vec<UsageRow>,
    pub validation: Vec<ValidationCell>,
}

/// Predicted versus measured invocations, one cell per cluster that
/// actually saw events. `config` and `k` are caller-side labels.
pub fn collect_validation_cells(
    config: &str,
    k: u64,
    usage: &RunUsage,
    budget: &TokenBudget,
) -> Result<Vec<ValidationCell>> {
    let mut cells = Vec::new();
    for cu in &usage.per_cluster {
        if cu.n_subs_prompt == 0 || cu.m_c == 0 {
            continue;
        }
        let n = cu.n_subs_prompt as u64;
        cells.push(ValidationCell {
            config: config.to_string(),
            k,
            cluster: cu.cluster_id as u64,
            m_c: cu.m_c,
            b_max: batch_capacity(budget, n)?,
            i_pred: invocations_for_cluster(budget, n, cu.m_c)?,
            i_meas: cu.invocations,
            stratum: format!("k={k}"),
        });
    }
    Ok(cells)
}

struct SeedArtifacts {
    per_variant: Vec<(&'static str, [f64; 10])>,
    usage: Vec<UsageRow>,
    validation: Vec<ValidationCell>,
}

fn run_seed(
    subs: &SubscriptionSet,
    events: &[Event],
    run: &RunConfig,
    seed: u64,
    provider: &dyn EmbeddingProvider,
    assignment: &Assignment,
    pool: &BackendPool,
) -> Result<SeedArtifacts> {
    let cfg = run.pipeline_config(seed);
    let outcome = run_pipeline(subs, events, provider, &cfg, assignment, pool)?;

    let n_events = events.len() as u64;
    let universe = subs.len();
    let descriptions = subs.description_map();

    // Cost across clusters, each priced by its assigned backend.
    let backend_of: BTreeMap<usize, String> = outcome
        .clusters
        .iter()
        .map(|c| (c.id, c.backend_name.clone()))
        .collect();
    let mut cost = 0.0;
    let mut usage_rows = Vec::new();
    for cu in &outcome.matching.per_cluster {
        let backend_name = backend_of
            .get(&cu.cluster_id)
            .ok_or_else(|| {
                Error::InvalidInput(format!("usage for unknown cluster {}", cu.cluster_id))
            })?
            .clone();
        let pricing: Pricing = pool
            .get(&backend_name)
            .ok_or_else(|| Error::InvalidInput(format!("backend {backend_name} not in pool")))?
            .pricing();
        cost += token_cost(cu.prompt_tokens, cu.response_tokens, &pricing, n_events)?;
        usage_rows.push(UsageRow {
            seed,
            phase: "match".into(),
            cluster: cu.cluster_id.to_string(),
            backend: backend_name,
            n_subs_prompt: cu.n_subs_prompt as u64,
            m_c: cu.m_c,
            invocations: cu.invocations,
            prompt_tokens: cu.prompt_tokens,
            response_tokens: cu.response_tokens,
        });
    }
    if outcome.compression.invocations > 0 {
        usage_rows.push(UsageRow {
            seed,
            phase: "compression".into(),
            cluster: "all".into(),
            backend: "-".into(),
            n_subs_prompt: subs.len() as u64,
            m_c: 0,
            invocations: outcome.compression.invocations,
            prompt_tokens: outcome.compression.prompt_tokens,
            response_tokens: outcome.compression.response_tokens,
        });
    }

    let mut id_scores = Vec::with_capacity(events.len());
    let mut id_fprs = Vec::with_capacity(events.len());
    let mut desc_scores = Vec::with_capacity(events.len());
    let mut desc_fprs = Vec::with_capacity(events.len());
    // The desc variant is reported whenever it can diverge from ID
    // scoring: duplicate descriptions in the input, or compounds in the
    // prompt (near-duplicate descriptions merge without being verbatim
    // equal).
    let merged = outcome
        .clusters
        .iter()
        .any(|c| c.subscriptions.iter().any(|s| s.is_compound()));
    let score_desc = subs.has_duplicate_descriptions() || merged;
    for (event, decision) in events.iter().zip(&outcome.decisions) {
        let predicted: BTreeSet<String> = decision.matched.iter().cloned().collect();
        id_scores.push(score_event_id(&predicted, &event.ground_truth));
        id_fprs.push(false_positive_rate(&predicted, &event.ground_truth, universe)?);
        if score_desc {
            desc_scores.push(score_event_desc(&predicted, &event.ground_truth, &descriptions)?);
            desc_fprs.push(false_positive_rate_desc(
                &predicted,
                &event.ground_truth,
                &descriptions,
            )?);
        }
    }

    let shared = |avg: EventScore, fpr: f64| -> [f64; 10] {
        [
            avg.precision,
            avg.recall,
            avg.f1,
            fpr,
            outcome.matching.invocations as f64,
            outcome.rho,
            outcome.matching.latency_seconds,
            outcome.matching.prompt_tokens as f64,
            outcome.matching.response_tokens as f64,
            cost,
        ]
    };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;

    let mut per_variant = Vec::new();
    per_variant.push(("id", shared(macro_average(&id_scores)?, mean(&id_fprs))));
    if score_desc {
        per_variant.push(("desc", shared(macro_average(&desc_scores)?, mean(&desc_fprs))));
    }

    let cfg_k = cfg.k as u64;
    let validation = collect_validation_cells(
        &run.preset.to_string(),
        cfg_k,
        &outcome.matching,
        &cfg.budget,
    )?;

    Ok(SeedArtifacts { per_variant, usage: usage_rows, validation })
}

pub fn run_experiment(
    subs: &SubscriptionSet,
    events: &[Event],
    run: &RunConfig,
    provider: &dyn EmbeddingProvider,
    assignment: &Assignment,
    pool: &BackendPool,
) -> Result<ExperimentOutput> {
    if run.seeds.is_empty() {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    if events.is_empty() {
        return Err(Error::InvalidInput("need at least one event".into()));
    }
    let preset = run.preset.to_string();
    let mut out = ExperimentOutput::default();
    // variant -> per-seed numeric rows, in fixed id-then-desc order.
    let mut series: Vec<(&'static str, Vec<[f64; 10]>)> =
        vec![("id", Vec::new()), ("desc", Vec::new())];

    for &seed in &run.seeds {
        match run_seed(subs, events, run, seed, provider, assignment, pool) {
            Ok(artifacts) => {
                for (variant, numeric) in &artifacts.per_variant {
                    out.rows.push(ResultRow::from_numeric(
                        &preset,
                        &seed.to_string(),
                        variant,
                        *numeric,
                    ));
                    let slot = series
                        .iter_mut()
                        .find(|(name, _)| name == variant)
                        .expect("variant is one of id/desc");
                    slot.1.push(*numeric);
                }
                out.usage.extend(artifacts.usage);
                out.validation.extend(artifacts.validation);
            }
            Err(err) => {
                let message = err.to_string();
                out.rows.push(ResultRow::from_numeric(
                    &preset,
                    &seed.to_string(),
                    "error",
                    [0.0; 10],
                ));
                out.failures.push((seed, message));
            }
        }
    }

    // Aggregates over the seeds that succeeded, one mean and one CI row
    // per variant actually present.
    for (variant, rows) in &series {
        if rows.is_empty() {
            continue;
        }
        let mut means = [0.0f64; 10];
        let mut halves = [0.0f64; 10];
        for i in 0..10 {
            let values: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let agg = aggregate_seeds(&values)?;
            means[i] = agg.mean;
            halves[i] = agg.ci95_half;
        }
        out.rows.push(ResultRow::from_numeric(&preset, "mean", variant, means));
        out.rows.push(ResultRow::from_numeric(&preset, "ci95_half", variant, halves));
    }
    Ok(out)
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn render_results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER).map_err(csv_err)?;
    for r in rows {
        let numeric = r.numeric();
        let mut record = vec![r.preset.clone(), r.seed.clone(), r.variant.clone()];
        // Last column is cost_per_event; six decimals would flatten
        // realistic per-token prices to zero.
        record.extend(numeric[..9].iter().map(|&x| fmt(x)));
        record.push(format!("{:.9}", numeric[9]));
        w.write_record(&record).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path.as_ref(), render_results_csv(rows)?)?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| Error::InvalidInput(format!("open results csv: {e}")))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidInput(e.to_string()))?;
        if record.len() != RESULT_HEADER.len() {
            return Err(Error::InvalidInput(format!(
                "result row has {} fields, expected {}",
                record.len(),
                RESULT_HEADER.len()
            )));
        }
        let mut numeric = [0.0f64; 10];
        for (i, slot) in numeric.iter_mut().enumerate() {
            *slot = record[i + 3]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad float in results csv: {e}")))?;
        }
        rows.push(ResultRow::from_numeric(&record[0], &record[1], &record[2], numeric));
    }
    Ok(rows)
}

pub fn render_usage_csv(rows: &[UsageRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(USAGE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.phase.clone(),
            r.cluster.clone(),
            r.backend.clone(),
            r.n_subs_prompt.to_string(),
            r.m_c.to_string(),
            r.invocations.to_string(),
            r.prompt_tokens.to_string(),
            r.response_tokens.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn write_usage_csv(path: impl AsRef<Path>, rows: &[UsageRow]) -> Result<()> {
    std::fs::write(path.as_ref(), render_usage_csv(rows)?)?;
    Ok(())
}

pub fn render_validation_csv(cells: &[ValidationCell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VALIDATION_HEADER).map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.config.clone(),
            c.k.to_string(),
            c.cluster.to_string(),
            c.m_c.to_string(),
            c.b_max.to_string(),
            c.i_pred.to_string(),
            c.i_meas.to_string(),
            fmt(c.ratio()?),
            c.stratum.clone(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn write_validation_csv(path: impl AsRef<Path>, cells: &[ValidationCell]) -> Result<()> {
    std::fs::write(path.as_ref(), render_validation_csv(cells)?)?;
    Ok(())
}

/// Reads cells back; the stored ratio column is ignored and recomputed
/// on demand.
pub fn read_validation_csv(path: impl AsRef<Path>) -> Result<Vec<ValidationCell>> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| Error::InvalidInput(format!("open validation csv: {e}")))?;
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidInput(e.to_string()))?;
        if record.len() != VALIDATION_HEADER.len() {
            return Err(Error::InvalidInput(format!(
                "validation row has {} fields, expected {}",
                record.len(),
                VALIDATION_HEADER.len()
            )));
        }
        let int = |i: usize| -> Result<u64> {
            record[i]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad integer in validation csv: {e}")))
        };
        cells.push(ValidationCell {
            config: record[0].to_string(),
            k: int(1)?,
            cluster: int(2)?,
            m_c: int(3)?,
            b_max: int(4)?,
            i_pred: int(5)?,
            i_meas: int(6)?,
            stratum: record[8].to_string(),
        });
    }
    Ok(cells)
}
