//! Pipeline assembly and event routing.
//!
//! A pipeline is configured once over a subscription set (clustering,
//! per-cluster compression, optional reunification) and then matches
//! event streams against the resulting clusters. Event-side knobs are
//! the centroid prefilter, event clustering for batch locality, the
//! per-event match cap kappa, and window truncation.
//!
//! Determinism: all tie-breaks are by ascending cluster ID, per-event
//! match unions walk clusters in ascending ID order with first-seen
//! dedup, and batches preserve arrival order. Two schedules that differ
//! only in batch composition produce identical decisions.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use crate::backend::{BackendPool, MatchBackend};
use crate::clustering::{kmeans, KMeansConfig};
use crate::costmodel::{batch_capacity, truncation_onset};
use crate::covermerge::cover_and_merge;
use crate::embedding::{cosine, EmbeddingProvider, Vector};
use crate::error::{Error, Result};
use crate::model::{Event, MatchDecision, Subscription, SubscriptionSet, TokenBudget};

/// The ablation grid. A0 is the monolithic baseline; A3 is the full
/// pipeline; the rest toggle one stage each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    A0,
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
}

impl Preset {
    pub const ALL: [Preset; 7] =
        [Preset::A0, Preset::A1, Preset::A2, Preset::A3, Preset::A4, Preset::A5, Preset::A6];
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Preset::A0 => "A0",
            Preset::A1 => "A1",
            Preset::A2 => "A2",
            Preset::A3 => "A3",
            Preset::A4 => "A4",
            Preset::A5 => "A5",
            Preset::A6 => "A6",
        };
        f.write_str(s)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A0" => Ok(Preset::A0),
            "A1" => Ok(Preset::A1),
            "A2" => Ok(Preset::A2),
            "A3" => Ok(Preset::A3),
            "A4" => Ok(Preset::A4),
            "A5" => Ok(Preset::A5),
            "A6" => Ok(Preset::A6),
            other => Err(Error::InvalidInput(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub clustering_enabled: bool,
    /// Subscription cluster count; clamped to the subscription count.
    pub k: usize,
    pub compression_enabled: bool,
    /// Reunify compressed clusters into one prompt afterwards.
    pub reunite: bool,
    /// Event clustering for batch locality; batches never span partitions.
    pub event_clusters: Option<usize>,
    pub prefilter_enabled: bool,
    /// Centroid cosine threshold; -1 admits every cluster.
    pub tau: f64,
    /// Per-event match cap.
    pub kappa: usize,
    pub budget: TokenBudget,
    /// Concurrent backend calls for latency accounting.
    pub parallel: usize,
    /// Drop trailing subscriptions instead of failing when a cluster
    /// cannot fit a single event into the window.
    pub truncate_to_fit: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let base = Self {
            clustering_enabled: false,
            k: 1,
            compression_enabled: false,
            reunite: false,
            event_clusters: None,
            prefilter_enabled: false,
            tau: 0.3,
            kappa: 3,
            budget: TokenBudget::default(),
            parallel: 4,
            truncate_to_fit: false,
            seed,
        };
        match preset {
            Preset::A0 => base,
            Preset::A1 => Self {
                clustering_enabled: true,
                k: 19,
                prefilter_enabled: true,
                ..base
            },
            Preset::A2 => Self { compression_enabled: true, ..base },
            Preset::A3 => Self {
                clustering_enabled: true,
                k: 19,
                compression_enabled: true,
                prefilter_enabled: true,
                ..base
            },
            Preset::A4 => Self {
                clustering_enabled: true,
                k: 19,
                compression_enabled: true,
                reunite: true,
                ..base
            },
            Preset::A5 => Self {
                clustering_enabled: true,
                k: 19,
                compression_enabled: true,
                prefilter_enabled: true,
                event_clusters: Some(5),
                ..base
            },
            Preset::A6 => Self {
                clustering_enabled: true,
                k: 19,
                compression_enabled: true,
                ..base
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidInput("kappa must be positive".into()));
        }
        if self.parallel == 0 {
            return Err(Error::InvalidInput("parallel must be positive".into()));
        }
        if self.event_clusters == Some(0) {
            return Err(Error::InvalidInput("event_clusters must be positive".into()));
        }
        if !self.tau.is_finite() || self.tau > 1.0 {
            return Err(Error::InvalidInput(format!("tau must be finite and <= 1, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Which backend serves which cluster.
#[derive(Debug, Clone)]
pub enum Assignment {
    Uniform(String),
    PerCluster(BTreeMap<usize, String>),
}

impl Assignment {
    pub fn backend_for(&self, cluster: usize) -> Result<&str> {
        match self {
            Assignment::Uniform(name) => Ok(name),
            Assignment::PerCluster(map) => map
                .get(&cluster)
                .map(String::as_str)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("no backend assigned to cluster {cluster}"))
                }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub id: usize,
    pub subscriptions: SubscriptionSet,
    pub centroid: Vector,
    pub backend_name: String,
}

/// Aggregate telemetry for the compression phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompressionUsage {
    pub invocations: u64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizedPlan {
    pub clusters: Vec<ClusterState>,
    /// Overall compression ratio: surviving / original subscriptions.
    pub rho: f64,
    pub compression: CompressionUsage,
}

/// Per-cluster matching telemetry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterUsage {
    pub cluster_id: usize,
    /// Subscriptions actually in the prompt (after truncation).
    pub n_subs_prompt: usize,
    /// Events routed to this cluster.
    pub m_c: u64,
    pub invocations: u64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunUsage {
    pub invocations: u64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    /// Wall-clock estimate under `parallel` concurrent calls: calls are
    /// taken in dispatch order in rounds of `parallel`, each round
    /// costing its slowest member.
    pub latency_seconds: f64,
    pub truncated_subscriptions: u64,
    /// Response entries naming unknown subscriptions or out-of-range
    /// event indices, dropped before scoring.
    pub rejected_matches: u64,
    pub per_cluster: Vec<ClusterUsage>,
}

fn lookup<'a>(pool: &'a BackendPool, name: &str) -> Result<&'a Arc<dyn MatchBackend>> {
    pool.get(name)
        .ok_or_else(|| Error::InvalidInput(format!("backend {name} not in pool")))
}

fn rounds_latency(latencies: &[f64], parallel: usize) -> f64 {
    latencies
        .chunks(parallel.max(1))
        .map(|round| round.iter().cloned().fold(0.0f64, f64::max))
        .sum()
}

fn centroid_of(subs: &[Subscription], provider: &dyn EmbeddingProvider) -> Result<Vector> {
    if subs.is_empty() {
        return Ok(Vector(vec![0.0; provider.dimension()]));
    }
    let mut acc = vec![0.0; provider.dimension()];
    for s in subs {
        let v = provider.embed(&s.description)?;
        for (a, b) in acc.iter_mut().zip(&v.0) {
            *a += b;
        }
    }
    let n = subs.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Vector(acc))
}

/// Builds the serving plan: cluster, compress, optionally reunite.
pub fn optimize_subscriptions(
    subs: &SubscriptionSet,
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
    assignment: &Assignment,
    pool: &BackendPool,
) -> Result<OptimizedPlan> {
    cfg.validate()?;
    let n = subs.len();

    // Partition subscriptions into clusters of indices.
    let partitions: Vec<Vec<usize>> = if !cfg.clustering_enabled || n <= 1 {
        vec![(0..n).collect()]
    } else {
        let points = subs
            .iter()
            .map(|s| provider.embed(&s.description))
            .collect::<Result<Vec<_>>>()?;
        let k = cfg.k.min(n);
        let clustering = kmeans(&points, &KMeansConfig::new(k, cfg.seed))?;
        (0..clustering.k()).map(|c| clustering.members(c)).collect()
    };

    let mut clusters = Vec::with_capacity(partitions.len());
    let mut compression = CompressionUsage::default();
    let mut compression_latencies = Vec::new();
    let original_total = n;
    let mut surviving_total = 0usize;

    for (cluster_id, members) in partitions.iter().enumerate() {
        let backend_name = assignment.backend_for(cluster_id)?.to_string();
        let member_subs: Vec<Subscription> =
            members.iter().map(|&i| subs.as_slice()[i].clone()).collect();
        let set = SubscriptionSet::new(member_subs)?;

        let set = if cfg.compression_enabled {
            let backend = lookup(pool, &backend_name)?;
            let result = cover_and_merge(&set, backend.as_ref(), &cfg.budget)?;
            for call in &result.calls {
                compression.invocations += 1;
                compression.prompt_tokens += call.prompt_tokens;
                compression.response_tokens += call.response_tokens;
                compression_latencies.push(call.latency_seconds);
            }
            result.compressed
        } else {
            set
        };

        surviving_total += set.len();
        let centroid = centroid_of(set.as_slice(), provider)?;
        clusters.push(ClusterState { id: cluster_id, subscriptions: set, centroid, backend_name });
    }

    if cfg.reunite && clusters.len() > 1 {
        let backend_name = clusters[0].backend_name.clone();
        let mut all = Vec::new();
        for c in &clusters {
            all.extend(c.subscriptions.iter().cloned());
        }
        let set = SubscriptionSet::new(all)?;
        let centroid = centroid_of(set.as_slice(), provider)?;
        clusters = vec![ClusterState { id: 0, subscriptions: set, centroid, backend_name }];
    }

    compression.latency_seconds = rounds_latency(&compression_latencies, cfg.parallel);
    let rho = if original_total == 0 {
        1.0
    } else {
        surviving_total as f64 / original_total as f64
    };
    Ok(OptimizedPlan { clusters, rho, compression })
}

/// Routes events through the plan's clusters and unions the answers.
pub fn match_events(
    events: &[Event],
    clusters: &[ClusterState],
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
    pool: &BackendPool,
) -> Result<(Vec<MatchDecision>, RunUsage)> {
    cfg.validate()?;
    let mut usage = RunUsage::default();

    // Effective per-cluster prompt contents, after window truncation.
    let onset = truncation_onset(&cfg.budget) as usize;
    let mut effective: Vec<&[Subscription]> = Vec::with_capacity(clusters.len());
    for c in clusters {
        let all = c.subscriptions.as_slice();
        if all.len() > onset {
            if !cfg.truncate_to_fit {
                return Err(Error::SubscriptionsExceedWindow {
                    cluster: c.id,
                    message: format!(
                        "{} subscriptions exceed the window capacity of {onset}",
                        all.len()
                    ),
                });
            }
            usage.truncated_subscriptions += (all.len() - onset) as u64;
            effective.push(&all[..onset]);
        } else {
            effective.push(all);
        }
    }
    let prompt_ids: Vec<BTreeSet<&str>> = effective
        .iter()
        .map(|subs| subs.iter().map(|s| s.id.as_str()).collect())
        .collect();

    // Route events to cluster queues.
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    let mut partition: Vec<usize> = vec![0; events.len()];
    if !clusters.is_empty() {
        let event_vectors = events
            .iter()
            .map(|e| provider.embed(&e.text))
            .collect::<Result<Vec<_>>>()?;
        for (i, vector) in event_vectors.iter().enumerate() {
            if cfg.prefilter_enabled {
                let mut admitted = false;
                let mut best: Option<(usize, f64)> = None;
                for (pos, c) in clusters.iter().enumerate() {
                    let sim = cosine(vector, &c.centroid)?;
                    if sim >= cfg.tau {
                        queues[pos].push(i);
                        admitted = true;
                    }
                    let better = match best {
                        None => true,
                        Some((_, s)) => sim > s,
                    };
                    if better {
                        best = Some((pos, sim));
                    }
                }
                if !admitted {
                    // Nothing passed tau: fall back to the nearest
                    // centroid so the event is never silently dropped.
                    let (pos, _) = best.expect("clusters is non-empty");
                    queues[pos].push(i);
                }
            } else {
                for queue in queues.iter_mut() {
                    queue.push(i);
                }
            }
        }

        // Event partitions for batch locality: a global event clustering,
        // never crossed by a batch. The sort is stable, so arrival order
        // survives within a partition.
        if let Some(k_e) = cfg.event_clusters {
            if events.len() > 1 {
                let k = k_e.min(events.len());
                let clustering = kmeans(&event_vectors, &KMeansConfig::new(k, cfg.seed))?;
                partition = clustering.assignments;
                for queue in queues.iter_mut() {
                    queue.sort_by_key(|&i| partition[i]);
                }
            }
        }
    }

    // Dispatch batches cluster by cluster, batching within partitions.
    let mut per_event: Vec<BTreeMap<usize, Vec<String>>> =
        vec![BTreeMap::new(); events.len()];
    let mut latencies = Vec::new();
    for (pos, c) in clusters.iter().enumerate() {
        let subs = effective[pos];
        let queue = &queues[pos];
        let mut cluster_usage = ClusterUsage {
            cluster_id: c.id,
            n_subs_prompt: subs.len(),
            m_c: queue.len() as u64,
            invocations: 0,
            prompt_tokens: 0,
            response_tokens: 0,
        };
        if subs.is_empty() || queue.is_empty() {
            usage.per_cluster.push(cluster_usage);
            continue;
        }
        let b_max = batch_capacity(&cfg.budget, subs.len() as u64)? as usize;
        let backend = lookup(pool, &c.backend_name)?;

        let mut start = 0;
        while start < queue.len() {
            // A batch stops at b_max events or at a partition boundary,
            // whichever comes first; the queue is partition-sorted.
            let mut end = (start + b_max).min(queue.len());
            let head_partition = partition[queue[start]];
            for offset in (start + 1)..end {
                if partition[queue[offset]] != head_partition {
                    end = offset;
                    break;
                }
            }
            let batch_events: Vec<Event> =
                queue[start..end].iter().map(|&i| events[i].clone()).collect();

            debug_assert!(
                cfg.budget.t_inst
                    + subs.len() as u64 * cfg.budget.t_s
                    + batch_events.len() as u64 * cfg.budget.t_e
                    + cfg.budget.t_resp
                    <= cfg.budget.window,
                "batch violates the window constraint"
            );

            let (response, call) =
                backend.match_call(subs, &batch_events, cfg.kappa, &cfg.budget)?;
            cluster_usage.invocations += 1;
            cluster_usage.prompt_tokens += call.prompt_tokens;
            cluster_usage.response_tokens += call.response_tokens;
            latencies.push(call.latency_seconds);

            for (batch_idx, sub_id) in response.matches {
                if batch_idx == 0 || batch_idx > batch_events.len() {
                    usage.rejected_matches += 1;
                    continue;
                }
                if !prompt_ids[pos].contains(sub_id.as_str()) {
                    usage.rejected_matches += 1;
                    continue;
                }
                let global = queue[start + batch_idx - 1];
                per_event[global].entry(c.id).or_default().push(sub_id);
            }
            start = end;
        }

        usage.invocations += cluster_usage.invocations;
        usage.prompt_tokens += cluster_usage.prompt_tokens;
        usage.response_tokens += cluster_usage.response_tokens;
        usage.per_cluster.push(cluster_usage);
    }
    usage.latency_seconds = rounds_latency(&latencies, cfg.parallel);

    // Union per event across clusters in ascending cluster ID order,
    // first occurrence wins, capped at kappa. The canonical order makes
    // decisions independent of batch scheduling.
    let decisions = events
        .iter()
        .zip(per_event)
        .map(|(event, by_cluster)| {
            let mut seen = BTreeSet::new();
            let mut matched = Vec::new();
            for (_, ids) in by_cluster {
                for id in ids {
                    if matched.len() >= cfg.kappa {
                        break;
                    }
                    if seen.insert(id.clone()) {
                        matched.push(id);
                    }
                }
            }
            MatchDecision { event_id: event.id.clone(), matched }
        })
        .collect();

    Ok((decisions, usage))
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub decisions: Vec<MatchDecision>,
    pub rho: f64,
    pub compression: CompressionUsage,
    pub matching: RunUsage,
    pub clusters: Vec<ClusterState>,
}

/// Convenience wrapper: optimize, then match.
pub fn run_pipeline(
    subs: &SubscriptionSet,
    events: &[Event],
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
    assignment: &Assignment,
    pool: &BackendPool,
) -> Result<PipelineOutcome> {
    let plan = optimize_subscriptions(subs, provider, cfg, assignment, pool)?;
    let (decisions, matching) = match_events(events, &plan.clusters, provider, cfg, pool)?;
    Ok(PipelineOutcome {
        decisions,
        rho: plan.rho,
        compression: plan.compression,
        matching,
        clusters: plan.clusters,
    })
}
