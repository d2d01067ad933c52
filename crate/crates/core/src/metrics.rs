//! Matching quality metrics.
//!
//! Every score exists in two variants. The ID variant treats compound
//! IDs as opaque strings, so a prediction of "a+b" against truth "a" is
//! wrong. The description variant splits compounds into members and maps
//! them through the description table first, so predictions that differ
//! only in which duplicate they name are equivalent. The gap between the
//! two is exactly the cost of compression-induced identity loss.

use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::split_compound_id;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EventScore {
    fn from_counts(hit: usize, predicted: usize, truth: usize) -> Self {
        if predicted == 0 && truth == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        if predicted == 0 || truth == 0 {
            return Self { precision: 0.0, recall: 0.0, f1: 0.0 };
        }
        let precision = hit as f64 / predicted as f64;
        let recall = hit as f64 / truth as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// Scores one event on raw subscription IDs.
pub fn score_event_id(predicted: &BTreeSet<String>, truth: &BTreeSet<String>) -> EventScore {
    let hit = predicted.intersection(truth).count();
    EventScore::from_counts(hit, predicted.len(), truth.len())
}

/// Splits compound IDs and maps every member through the description
/// table. Unknown members are an error, not a silent miss.
fn expand_to_descriptions(
    ids: &BTreeSet<String>,
    descriptions: &BTreeMap<String, String>,
) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for id in ids {
        for member in split_compound_id(id) {
            match descriptions.get(member) {
                Some(d) => {
                    out.insert(d.clone());
                }
                None => return Err(Error::MissingDescription(member.to_string())),
            }
        }
    }
    Ok(out)
}

/// Scores one event on descriptions, collapsing duplicates and compounds.
pub fn score_event_desc(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
    descriptions: &BTreeMap<String, String>,
) -> Result<EventScore> {
    let p = expand_to_descriptions(predicted, descriptions)?;
    let g = expand_to_descriptions(truth, descriptions)?;
    Ok(score_event_id(&p, &g))
}

/// Unweighted mean of per-event scores.
pub fn macro_average(scores: &[EventScore]) -> Result<EventScore> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("cannot average zero events".into()));
    }
    let n = scores.len() as f64;
    Ok(EventScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

fn fpr_from_sets(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
    universe: usize,
) -> Result<f64> {
    let false_positives = predicted.difference(truth).count();
    let negatives = universe
        .checked_sub(truth.len())
        .ok_or_else(|| Error::InvalidInput("truth larger than universe".into()))?;
    if negatives == 0 {
        if false_positives == 0 {
            return Ok(0.0);
        }
        return Err(Error::InvalidInput("false positives with no negatives".into()));
    }
    Ok(false_positives as f64 / negatives as f64)
}

/// False positive rate on IDs over a universe of n_subscriptions.
pub fn false_positive_rate(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
    n_subscriptions: usize,
) -> Result<f64> {
    fpr_from_sets(predicted, truth, n_subscriptions)
}

/// False positive rate on descriptions; the universe is the number of
/// distinct descriptions.
pub fn false_positive_rate_desc(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
    descriptions: &BTreeMap<String, String>,
) -> Result<f64> {
    let p = expand_to_descriptions(predicted, descriptions)?;
    let g = expand_to_descriptions(truth, descriptions)?;
    let universe: BTreeSet<&str> = descriptions.values().map(String::as_str).collect();
    fpr_from_sets(&p, &g, universe.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedAggregate {
    pub mean: f64,
    /// Half-width of the 95% confidence interval (Student's t).
    pub ci95_half: f64,
    /// True when only one seed was available and the interval is moot.
    pub single_seed: bool,
}

/// Mean and 95% CI half-width across per-seed values.
pub fn aggregate_seeds(values: &[f64]) -> Result<SeedAggregate> {
    match values.len() {
        0 => Err(Error::InvalidInput("no seed values to aggregate".into())),
        1 => Ok(SeedAggregate { mean: values[0], ci95_half: 0.0, single_seed: true }),
        n => {
            let nf = n as f64;
            let mean = values.iter().sum::<f64>() / nf;
            let var =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let t = StudentsT::new(0.0, 1.0, nf - 1.0)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .inverse_cdf(0.975);
            Ok(SeedAggregate {
                mean,
                ci95_half: t * (var.sqrt() / nf.sqrt()),
                single_seed: false,
            })
        }
    }
}
