//! Calibration and per-cluster backend assignment.
//!
//! Each (cluster, backend) pair is probed on a seeded calibration sample;
//! the recorded accuracy, cost, and latency are min-max normalized within
//! the cluster and scalarised by the QoE weights. Cost and latency are
//! inverted so higher is always better; a metric that is constant across
//! candidates contributes 0.5 to everyone.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::BackendPool;
use crate::costmodel::token_cost;
use crate::embedding::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::metrics::{macro_average, score_event_id};
use crate::model::Event;
use crate::router::{match_events, ClusterState, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoeWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl QoeWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || gamma < 0.0 {
            return Err(Error::InvalidInput("QoE weights must be non-negative".into()));
        }
        if ((alpha + beta + gamma) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "QoE weights must sum to 1, got {}",
                alpha + beta + gamma
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn accuracy_first() -> Self {
        Self { alpha: 0.70, beta: 0.15, gamma: 0.15 }
    }

    pub fn balanced() -> Self {
        Self { alpha: 0.34, beta: 0.33, gamma: 0.33 }
    }

    pub fn cost_first() -> Self {
        Self { alpha: 0.15, beta: 0.70, gamma: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub cluster_id: usize,
    pub backend_name: String,
    pub f1_hat: f64,
    pub mean_latency: f64,
    pub token_cost: f64,
    /// Kept for calibration/evaluation disjointness auditing.
    pub sample_event_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Strategy {
    /// Every cluster gets the named backend.
    Homogeneous(String),
    /// Clusters in ascending ID order cycle through the given backends.
    RoundRobin(Vec<String>),
    Qoe(QoeWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSplit {
    pub calibration: Vec<Event>,
    pub evaluation: Vec<Event>,
    pub disjoint: bool,
}

fn cluster_seed(seed: u64, cluster_id: usize) -> u64 {
    seed ^ (cluster_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seeded per-cluster calibration/evaluation split. fraction = 1.0 is the
/// intentional non-disjoint ceiling case: cal = eval = everything.
pub fn split_calibration(
    events_per_cluster: &BTreeMap<usize, Vec<Event>>,
    fraction: f64,
    seed: u64,
) -> Result<BTreeMap<usize, ClusterSplit>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let mut out = BTreeMap::new();
    for (&cluster, events) in events_per_cluster {
        let n = events.len();
        if n == 0 {
            out.insert(
                cluster,
                ClusterSplit { calibration: vec![], evaluation: vec![], disjoint: true },
            );
            continue;
        }
        if fraction >= 1.0 {
            out.insert(
                cluster,
                ClusterSplit {
                    calibration: events.clone(),
                    evaluation: events.clone(),
                    disjoint: false,
                },
            );
            continue;
        }
        let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(cluster_seed(seed, cluster));
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, take).into_vec();
        picked.sort_unstable();
        let chosen: BTreeSet<usize> = picked.iter().copied().collect();
        let calibration = picked.iter().map(|&i| events[i].clone()).collect();
        let evaluation = (0..n)
            .filter(|i| !chosen.contains(i))
            .map(|i| events[i].clone())
            .collect();
        out.insert(cluster, ClusterSplit { calibration, evaluation, disjoint: true });
    }
    Ok(out)
}

fn normalize(values: &[f64], invert: bool) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (max - min).abs() < 1e-15 {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|v| if invert { (max - v) / (max - min) } else { (v - min) / (max - min) })
        .collect()
}

/// Scores one cluster's candidate backends. Backends with f1_hat = 0 are
/// filtered out first; an empty survivor set is NoViableBackend.
pub fn qoe_score(
    records: &[CalibrationRecord],
    weights: &QoeWeights,
) -> Result<BTreeMap<String, f64>> {
    let candidates: Vec<&CalibrationRecord> =
        records.iter().filter(|r| r.f1_hat > 0.0).collect();
    if candidates.is_empty() {
        return Err(Error::NoViableBackend);
    }
    let f1: Vec<f64> = candidates.iter().map(|r| r.f1_hat).collect();
    let cost: Vec<f64> = candidates.iter().map(|r| r.token_cost).collect();
    let lat: Vec<f64> = candidates.iter().map(|r| r.mean_latency).collect();
    let f1_n = normalize(&f1, false);
    let cost_n = normalize(&cost, true);
    let lat_n = normalize(&lat, true);
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let score =
                weights.alpha * f1_n[i] + weights.beta * cost_n[i] + weights.gamma * lat_n[i];
            (r.backend_name.clone(), score)
        })
        .collect())
}

/// Maps every cluster to a backend under the chosen strategy.
/// Homogeneous and round-robin ignore the records entirely.
pub fn assign(
    strategy: &Strategy,
    clusters: &[usize],
    records: &[CalibrationRecord],
) -> Result<BTreeMap<usize, String>> {
    match strategy {
        Strategy::Homogeneous(name) => {
            Ok(clusters.iter().map(|&c| (c, name.clone())).collect())
        }
        Strategy::RoundRobin(order) => {
            if order.is_empty() {
                return Err(Error::InvalidInput("round-robin needs at least one backend".into()));
            }
            let mut sorted = clusters.to_vec();
            sorted.sort_unstable();
            Ok(sorted
                .iter()
                .enumerate()
                .map(|(i, &c)| (c, order[i % order.len()].clone()))
                .collect())
        }
        Strategy::Qoe(weights) => {
            let mut by_cluster: BTreeMap<usize, Vec<CalibrationRecord>> = BTreeMap::new();
            for r in records {
                by_cluster.entry(r.cluster_id).or_default().push(r.clone());
            }
            // The per-cluster filter of Alg-style assignment can disagree
            // with a global "f1 = 0 everywhere" rule; log when it does.
            let globally_alive: BTreeSet<&str> = records
                .iter()
                .filter(|r| r.f1_hat > 0.0)
                .map(|r| r.backend_name.as_str())
                .collect();
            let mut out = BTreeMap::new();
            for &cluster in clusters {
                let cluster_records = by_cluster
                    .get(&cluster)
                    .ok_or(Error::NoViableBackend)?;
                for r in cluster_records {
                    if r.f1_hat <= 0.0 && globally_alive.contains(r.backend_name.as_str()) {
                        log::debug!(
                            "backend {} filtered in cluster {} but viable elsewhere",
                            r.backend_name,
                            cluster
                        );
                    }
                }
                let scores = qoe_score(cluster_records, weights)?;
                // BTreeMap iterates name-ascending, so keeping strict
                // improvement breaks ties toward the smaller name.
                let mut best: Option<(&String, f64)> = None;
                for (name, score) in &scores {
                    let better = match best {
                        None => true,
                        Some((_, s)) => *score > s,
                    };
                    if better {
                        best = Some((name, *score));
                    }
                }
                let (name, _) = best.expect("qoe_score returns at least one candidate");
                out.insert(cluster, name.clone());
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub records: Vec<CalibrationRecord>,
    pub splits: BTreeMap<usize, ClusterSplit>,
}

/// Routes events to their nearest cluster centroid (ties toward the
/// lower ID), used to build per-cluster calibration pools.
pub fn events_by_nearest_cluster(
    events: &[Event],
    clusters: &[ClusterState],
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<usize, Vec<Event>>> {
    let mut out: BTreeMap<usize, Vec<Event>> =
        clusters.iter().map(|c| (c.id, Vec::new())).collect();
    if clusters.is_empty() {
        return Ok(out);
    }
    for event in events {
        let v = provider.embed(&event.text)?;
        let mut best: Option<(usize, f64)> = None;
        for c in clusters {
            let sim = cosine(&v, &c.centroid)?;
            let better = match best {
                None => true,
                Some((_, s)) => sim > s,
            };
            if better {
                best = Some((c.id, sim));
            }
        }
        out.get_mut(&best.expect("clusters non-empty").0)
            .expect("key inserted above")
            .push(event.clone());
    }
    Ok(out)
}

/// Probes every (cluster, backend) pair on that cluster's calibration
/// sample. Clusters are taken as given (uncompressed), truth is
/// restricted to each cluster's own subscriptions, and latency is
/// averaged per invocation.
pub fn run_calibration(
    clusters: &[ClusterState],
    events: &[Event],
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
    pool: &BackendPool,
    backends: &[String],
    fraction: f64,
) -> Result<CalibrationOutcome> {
    if backends.is_empty() {
        return Err(Error::InvalidInput("no candidate backends".into()));
    }
    let pools = events_by_nearest_cluster(events, clusters, provider)?;
    let splits = split_calibration(&pools, fraction, cfg.seed)?;

    // Calibration probes run one cluster at a time with routing disabled.
    let mut probe_cfg = cfg.clone();
    probe_cfg.prefilter_enabled = false;
    probe_cfg.event_clusters = None;
    probe_cfg.parallel = 1;

    let mut records = Vec::new();
    for cluster in clusters {
        let split = splits.get(&cluster.id).expect("split per cluster");
        let member_ids: BTreeSet<&str> =
            cluster.subscriptions.iter().map(|s| s.id.as_str()).collect();
        let sample_event_ids: Vec<String> =
            split.calibration.iter().map(|e| e.id.clone()).collect();
        for backend_name in backends {
            let backend = pool
                .get(backend_name)
                .ok_or_else(|| Error::InvalidInput(format!("backend {backend_name} not in pool")))?;
            let probe = ClusterState {
                id: cluster.id,
                subscriptions: cluster.subscriptions.clone(),
                centroid: cluster.centroid.clone(),
                backend_name: backend_name.clone(),
            };
            let mut probe_pool: BackendPool = BTreeMap::new();
            probe_pool.insert(backend_name.clone(), backend.clone());
            let (decisions, usage) = match_events(
                &split.calibration,
                std::slice::from_ref(&probe),
                provider,
                &probe_cfg,
                &probe_pool,
            )?;
            let f1_hat = if split.calibration.is_empty() {
                0.0
            } else {
                let scores: Vec<_> = split
                    .calibration
                    .iter()
                    .zip(&decisions)
                    .map(|(e, d)| {
                        let p: BTreeSet<String> = d.matched.iter().cloned().collect();
                        let g: BTreeSet<String> = e
                            .ground_truth
                            .iter()
                            .filter(|id| member_ids.contains(id.as_str()))
                            .cloned()
                            .collect();
                        score_event_id(&p, &g)
                    })
                    .collect();
                macro_average(&scores)?.f1
            };
            let mean_latency = if usage.invocations == 0 {
                0.0
            } else {
                // parallel = 1 makes latency_seconds the plain sum.
                usage.latency_seconds / usage.invocations as f64
            };
            let cost = if split.calibration.is_empty() {
                0.0
            } else {
                token_cost(
                    usage.prompt_tokens,
                    usage.response_tokens,
                    &backend.pricing(),
                    split.calibration.len() as u64,
                )?
            };
            records.push(CalibrationRecord {
                cluster_id: cluster.id,
                backend_name: backend_name.clone(),
                f1_hat,
                mean_latency,
                token_cost: cost,
                sample_event_ids: sample_event_ids.clone(),
            });
        }
    }
    Ok(CalibrationOutcome { records, splits })
}

/// CSV round-trip for calibration records. The sample list is summarized
/// as a count; re-imported records carry an empty sample list.
pub fn write_calibration_csv<W: std::io::Write>(
    records: &[CalibrationRecord],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster", "backend", "f1_hat", "mean_latency", "token_cost", "n_cal_events"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.cluster_id.to_string(),
            r.backend_name.clone(),
            format!("{:.6}", r.f1_hat),
            format!("{:.6}", r.mean_latency),
            format!("{:.9}", r.token_cost),
            r.sample_event_ids.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn read_calibration_csv<R: std::io::Read>(reader: R) -> Result<Vec<CalibrationRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |j: usize| -> Result<&str> {
            row.get(j).ok_or_else(|| Error::Parse {
                line: i + 2,
                message: format!("missing column {j}"),
            })
        };
        let parse_f = |j: usize| -> Result<f64> {
            field(j)?.parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: format!("bad float in column {j}"),
            })
        };
        out.push(CalibrationRecord {
            cluster_id: field(0)?.parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: "bad cluster id".into(),
            })?,
            backend_name: field(1)?.to_string(),
            f1_hat: parse_f(2)?,
            mean_latency: parse_f(3)?,
            token_cost: parse_f(4)?,
            sample_event_ids: Vec::new(),
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}
