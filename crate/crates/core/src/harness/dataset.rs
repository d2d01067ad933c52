//! Dataset I/O and synthetic generators.
//!
//! The on-disk format is JSONL with a "type" tag per line; loading
//! validates referential integrity (ground truth IDs must exist) before
//! anything runs. Generators cover the two synthetic families used
//! throughout: topic-pool datasets with a controllable description
//! multiplicity, and duplication-with-rename sweeps that grow a base set
//! under fresh IDs without touching ground truth.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_dataset, Event, Subscription, SubscriptionSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DatasetLine {
    Subscription {
        id: String,
        description: String,
        subscribers: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        merged_from: Vec<String>,
    },
    Event {
        id: String,
        text: String,
        #[serde(default)]
        ground_truth: Vec<String>,
    },
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(SubscriptionSet, Vec<Event>)> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut subs = Vec::new();
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        match parsed {
            DatasetLine::Subscription { id, description, subscribers, merged_from } => {
                let mut sub = Subscription::new(id, description, subscribers)
                    .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
                sub.merged_from = merged_from;
                subs.push(sub);
            }
            DatasetLine::Event { id, text, ground_truth } => {
                let event = Event::new(id, text, ground_truth)
                    .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
                events.push(event);
            }
        }
    }
    let report = validate_dataset(&subs, &events);
    if !report.is_ok() {
        let summary: Vec<String> =
            report.violations.iter().take(5).map(|v| v.to_string()).collect();
        return Err(Error::InvalidInput(format!(
            "dataset failed validation ({} violations): {}",
            report.violations.len(),
            summary.join("; ")
        )));
    }
    Ok((SubscriptionSet::new(subs)?, events))
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    subs: &SubscriptionSet,
    events: &[Event],
) -> Result<()> {
    let mut file = std::fs::File::create(path.as_ref())?;
    for s in subs.iter() {
        let line = DatasetLine::Subscription {
            id: s.id.clone(),
            description: s.description.clone(),
            subscribers: s.subscribers.iter().cloned().collect(),
            merged_from: s.merged_from.clone(),
        };
        serde_json::to_writer(&mut file, &line)
            .map_err(|e| Error::InvalidInput(format!("serialize: {e}")))?;
        file.write_all(b"\n")?;
    }
    for e in events {
        let line = DatasetLine::Event {
            id: e.id.clone(),
            text: e.text.clone(),
            ground_truth: e.ground_truth.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut file, &line)
            .map_err(|e| Error::InvalidInput(format!("serialize: {e}")))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Grows `base` to `target` subscriptions by cycling through it and
/// appending copies with "_dupN"-suffixed IDs. Descriptions and
/// subscriber sets are copied verbatim, so ground truth referencing base
/// IDs stays valid and the duplicates are reachable only through
/// description-aware scoring.
pub fn duplicate_with_rename(base: &SubscriptionSet, target: usize) -> Result<SubscriptionSet> {
    let n = base.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot duplicate an empty base set".into()));
    }
    if target < n {
        return Err(Error::InvalidInput(format!(
            "target {target} is smaller than the base set {n}"
        )));
    }
    let mut out: Vec<Subscription> = base.iter().cloned().collect();
    for i in n..target {
        let src = &base.as_slice()[i % n];
        let copy = Subscription::new(
            format!("{}_dup{}", src.id, i / n),
            src.description.clone(),
            src.subscribers.iter().cloned(),
        )?;
        out.push(copy);
    }
    SubscriptionSet::new(out)
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub target_sizes: Vec<usize>,
}

/// One duplicated set per target size, ascending.
pub fn duplication_sweep(
    base: &SubscriptionSet,
    spec: &SweepSpec,
) -> Result<Vec<(usize, SubscriptionSet)>> {
    let mut sizes = spec.target_sizes.clone();
    sizes.sort_unstable();
    sizes
        .into_iter()
        .map(|size| Ok((size, duplicate_with_rename(base, size)?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_subscriptions: usize,
    pub n_events: usize,
    /// None gives every subscription its own topic (injective d);
    /// Some(t) spreads subscriptions over t shared topics.
    pub distinct_descriptions: Option<usize>,
    pub seed: u64,
}

fn topic_words(topic: usize) -> [String; 3] {
    [
        format!("topic{topic}alpha"),
        format!("topic{topic}beta"),
        format!("topic{topic}gamma"),
    ]
}

/// Synthetic corpus with disjoint per-topic vocabularies. Event text is
/// the concatenation of its ground-truth subscriptions' topic words;
/// truth sizes are drawn 70/25/5% for 1/2/3.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(SubscriptionSet, Vec<Event>)> {
    if spec.n_subscriptions == 0 {
        return Err(Error::InvalidInput("need at least one subscription".into()));
    }
    if spec.distinct_descriptions == Some(0) {
        return Err(Error::InvalidInput("distinct_descriptions must be positive".into()));
    }
    let topics = spec.distinct_descriptions.unwrap_or(spec.n_subscriptions);
    let mut subs = Vec::with_capacity(spec.n_subscriptions);
    for i in 0..spec.n_subscriptions {
        let words = topic_words(i % topics);
        subs.push(Subscription::new(
            format!("s{i}"),
            words.join(" "),
            [format!("user-{i}")],
        )?);
    }
    let subs = SubscriptionSet::new(subs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut events = Vec::with_capacity(spec.n_events);
    for i in 0..spec.n_events {
        let draw: f64 = rng.gen();
        let size = if draw < 0.70 {
            1
        } else if draw < 0.95 {
            2
        } else {
            3
        };
        let size = size.min(spec.n_subscriptions);
        let picked = rand::seq::index::sample(&mut rng, spec.n_subscriptions, size);
        let mut truth: Vec<usize> = picked.into_vec();
        truth.sort_unstable();
        let text = truth
            .iter()
            .flat_map(|&j| topic_words(j % topics))
            .collect::<Vec<_>>()
            .join(" ");
        events.push(Event::new(
            format!("e{i}"),
            text,
            truth.iter().map(|&j| format!("s{j}")),
        )?);
    }
    Ok((subs, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn jsonl_round_trip() {
        let spec = SyntheticSpec {
            n_subscriptions: 6,
            n_events: 10,
            distinct_descriptions: Some(3),
            seed: 42,
        };
        let (subs, events) = synthetic_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &subs, &events).unwrap();
        let (subs2, events2) = load_dataset(&path).unwrap();
        assert_eq!(subs.len(), subs2.len());
        assert_eq!(events, events2);
        for (a, b) in subs.iter().zip(subs2.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"type\":\"subscription\",\"id\":\"a\",\"description\":\"x\",\"subscribers\":[\"u\"]}\nnot json\n",
        )
        .unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_ground_truth_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dangling.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"type\":\"subscription\",\"id\":\"a\",\"description\":\"x\",\"subscribers\":[\"u\"]}\n",
                "{\"type\":\"event\",\"id\":\"e\",\"text\":\"t\",\"ground_truth\":[\"ghost\"]}\n",
            ),
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn duplication_preserves_base_and_appends_renames() {
        let base = SubscriptionSet::new(vec![
            Subscription::new("a", "alpha topic", ["u1".to_string()]).unwrap(),
            Subscription::new("b", "beta topic", ["u2".to_string()]).unwrap(),
        ])
        .unwrap();
        let grown = duplicate_with_rename(&base, 5).unwrap();
        assert_eq!(grown.len(), 5);
        let ids: Vec<&str> = grown.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "a_dup1", "b_dup1", "a_dup2"]);
        assert_eq!(grown.get("a_dup2").unwrap().description, "alpha topic");
        assert_eq!(
            grown.get("b_dup1").unwrap().subscribers,
            base.get("b").unwrap().subscribers
        );
        assert!(duplicate_with_rename(&base, 1).is_err());
    }

    #[test]
    fn sweep_sizes_are_sorted_ascending() {
        let base = SubscriptionSet::new(vec![
            Subscription::new("a", "alpha", ["u".to_string()]).unwrap(),
        ])
        .unwrap();
        let sweep =
            duplication_sweep(&base, &SweepSpec { target_sizes: vec![5, 1, 3] }).unwrap();
        let sizes: Vec<usize> = sweep.iter().map(|(s, _)| *s).collect();
        assert_eq!(sizes, vec![1, 3, 5]);
        assert_eq!(sweep[2].1.len(), 5);
    }

    #[test]
    fn synthetic_injective_when_unconstrained() {
        let spec = SyntheticSpec {
            n_subscriptions: 10,
            n_events: 50,
            distinct_descriptions: None,
            seed: 7,
        };
        let (subs, events) = synthetic_dataset(&spec).unwrap();
        assert!(!subs.has_duplicate_descriptions());
        assert_eq!(events.len(), 50);
        // Ground truth sizes stay within 1..=3 and reference real subs.
        for e in &events {
            assert!((1..=3).contains(&e.ground_truth.len()));
            for id in &e.ground_truth {
                assert!(subs.get(id).is_some());
            }
        }
    }

    #[test]
    fn synthetic_topic_sharing_duplicates_descriptions() {
        let spec = SyntheticSpec {
            n_subscriptions: 10,
            n_events: 5,
            distinct_descriptions: Some(3),
            seed: 7,
        };
        let (subs, _) = synthetic_dataset(&spec).unwrap();
        assert!(subs.has_duplicate_descriptions());
        let distinct: BTreeSet<&str> =
            subs.iter().map(|s| s.description.as_str()).collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let spec = SyntheticSpec {
            n_subscriptions: 8,
            n_events: 20,
            distinct_descriptions: None,
            seed: 99,
        };
        let (_, e1) = synthetic_dataset(&spec).unwrap();
        let (_, e2) = synthetic_dataset(&spec).unwrap();
        assert_eq!(e1, e2);
        let different = SyntheticSpec { seed: 100, ..spec };
        let (_, e3) = synthetic_dataset(&different).unwrap();
        assert_ne!(e1, e3);
    }
}
