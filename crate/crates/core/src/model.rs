//! Core data model: subscriptions, events, match decisions, token budgets.
//!
//! A subscription is a natural-language description of wanted content plus
//! the set of subscriber endpoints behind it. Merged (compound)
//! subscriptions carry their atomic member IDs in `merged_from`; the
//! compound ID is the members joined with `+`, which is why `+` is
//! reserved and rejected in atomic IDs at construction time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joins member IDs of a merged subscription. Forbidden in atomic IDs.
pub const COMPOUND_SEPARATOR: char = '+';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: String,
    pub description: String,
    pub subscribers: BTreeSet<String>,
    /// Atomic member IDs for merged subscriptions; empty when atomic.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_from: Vec<String>,
}

impl Subscription {
    /// Builds an atomic subscription, enforcing the ID and field rules.
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        subscribers: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let id = id.into();
        let description = description.into();
        let subscribers: BTreeSet<String> = subscribers.into_iter().collect();
        if id.is_empty() {
            return Err(Error::InvalidInput("subscription id is empty".into()));
        }
        if id.contains(COMPOUND_SEPARATOR) {
            return Err(Error::InvalidInput(format!(
                "atomic subscription id {id:?} contains reserved '+'"
            )));
        }
        if description.is_empty() {
            return Err(Error::InvalidInput(format!(
                "subscription {id:?} has an empty description"
            )));
        }
        if subscribers.is_empty() {
            return Err(Error::InvalidInput(format!(
                "subscription {id:?} has no subscribers"
            )));
        }
        Ok(Self { id, description, subscribers, merged_from: Vec::new() })
    }

    /// Merges two subscriptions into a compound one. The compound ID is
    /// the member IDs joined with `+` in order, the description is the
    /// two descriptions joined with `"; "`, and the subscribers are the
    /// union.
    pub fn merged(a: &Subscription, b: &Subscription) -> Subscription {
        let mut members: Vec<String> = a.members().map(str::to_owned).collect();
        members.extend(b.members().map(str::to_owned));
        let id = members.join("+");
        let description = format!("{}; {}", a.description, b.description);
        let subscribers: BTreeSet<String> =
            a.subscribers.union(&b.subscribers).cloned().collect();
        Subscription { id, description, subscribers, merged_from: members }
    }

    /// Atomic member IDs: `merged_from` for compounds, the ID itself
    /// otherwise.
    pub fn members(&self) -> impl Iterator<Item = &str> {
        if self.merged_from.is_empty() {
            MemberIter::Atomic(std::iter::once(self.id.as_str()))
        } else {
            MemberIter::Compound(self.merged_from.iter().map(String::as_str))
        }
    }

    pub fn is_compound(&self) -> bool {
        !self.merged_from.is_empty()
    }
}

enum MemberIter<'a> {
    Atomic(std::iter::Once<&'a str>),
    Compound(std::iter::Map<std::slice::Iter<'a, String>, fn(&'a String) -> &'a str>),
}

impl<'a> Iterator for MemberIter<'a> {
    type Item = &'a str;
    fn next(&mut self) -> Option<&'a str> {
        match self {
            MemberIter::Atomic(it) => it.next(),
            MemberIter::Compound(it) => it.next(),
        }
    }
}

/// Splits a (possibly compound) subscription ID into its atomic parts.
pub fn split_compound_id(id: &str) -> impl Iterator<Item = &str> {
    id.split(COMPOUND_SEPARATOR)
}

/// Ordered collection of subscriptions with unique IDs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SubscriptionSet {
    subscriptions: Vec<Subscription>,
}

impl SubscriptionSet {
    pub fn new(subscriptions: Vec<Subscription>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &subscriptions {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate subscription id {:?}",
                    s.id
                )));
            }
            if s.is_compound() {
                let expected = s.merged_from.join("+");
                if s.id != expected {
                    return Err(Error::InvalidInput(format!(
                        "compound id {:?} does not equal its members joined with '+'",
                        s.id
                    )));
                }
            }
        }
        Ok(Self { subscriptions })
    }

    pub fn len(&self) -> usize {
        self.subscriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subscriptions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Subscription> {
        self.subscriptions.iter()
    }

    pub fn as_slice(&self) -> &[Subscription] {
        &self.subscriptions
    }

    pub fn get(&self, id: &str) -> Option<&Subscription> {
        self.subscriptions.iter().find(|s| s.id == id)
    }

    /// The description map d: subscription ID -> description text.
    pub fn description_map(&self) -> BTreeMap<String, String> {
        self.subscriptions
            .iter()
            .map(|s| (s.id.clone(), s.description.clone()))
            .collect()
    }

    /// True when at least two subscriptions share a description, i.e. the
    /// description map is non-injective and ID-based and
    /// description-aware metrics may diverge.
    pub fn has_duplicate_descriptions(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.subscriptions.iter().any(|s| !seen.insert(s.description.as_str()))
    }

    /// Union of every subscriber across the set.
    pub fn all_subscribers(&self) -> BTreeSet<String> {
        self.subscriptions
            .iter()
            .flat_map(|s| s.subscribers.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub text: String,
    /// Subscription IDs this event should match; may be empty.
    #[serde(default)]
    pub ground_truth: BTreeSet<String>,
}

impl Event {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        ground_truth: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::InvalidInput("event id is empty".into()));
        }
        if text.is_empty() {
            return Err(Error::InvalidInput(format!("event {id:?} has empty text")));
        }
        Ok(Self { id, text, ground_truth: ground_truth.into_iter().collect() })
    }
}

/// Final routing output for one event: the matched subscription IDs in
/// first-seen order, deduplicated, truncated to the run's kappa.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub event_id: String,
    pub matched: Vec<String>,
}

/// Token accounting constants for one backend/window configuration.
/// All fields are token counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    /// Context window W.
    pub window: u64,
    /// Instruction prompt size t_inst.
    pub t_inst: u64,
    /// Tokens per subscription line t_s.
    pub t_s: u64,
    /// Tokens per event line t_e.
    pub t_e: u64,
    /// Reserved response budget t_resp.
    pub t_resp: u64,
}

impl TokenBudget {
    pub fn new(window: u64, t_inst: u64, t_s: u64, t_e: u64, t_resp: u64) -> Result<Self> {
        if window <= t_inst + t_resp {
            return Err(Error::InvalidInput(format!(
                "window {window} does not exceed t_inst + t_resp = {}",
                t_inst + t_resp
            )));
        }
        if t_s == 0 || t_e == 0 {
            return Err(Error::InvalidInput(
                "per-line token constants must be positive".into(),
            ));
        }
        Ok(Self { window, t_inst, t_s, t_e, t_resp })
    }
}

impl Default for TokenBudget {
    /// A wide window with the usual per-line constants.
    fn default() -> Self {
        Self { window: 128_000, t_inst: 200, t_s: 80, t_e: 50, t_resp: 500 }
    }
}

/// One dataset-level consistency violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateSubscriptionId(String),
    DuplicateEventId(String),
    EmptyDescription(String),
    EmptySubscribers(String),
    ReservedIdCharacter(String),
    DanglingGroundTruth { event_id: String, subscription_id: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateSubscriptionId(id) => {
                write!(f, "duplicate subscription id {id:?}")
            }
            Violation::DuplicateEventId(id) => write!(f, "duplicate event id {id:?}"),
            Violation::EmptyDescription(id) => {
                write!(f, "subscription {id:?} has an empty description")
            }
            Violation::EmptySubscribers(id) => {
                write!(f, "subscription {id:?} has no subscribers")
            }
            Violation::ReservedIdCharacter(id) => {
                write!(f, "atomic subscription id {id:?} contains reserved '+'")
            }
            Violation::DanglingGroundTruth { event_id, subscription_id } => write!(
                f,
                "event {event_id:?} references unknown subscription {subscription_id:?}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks referential integrity of a raw (pre-construction) dataset.
/// Collects every violation instead of stopping at the first.
pub fn validate_dataset(subscriptions: &[Subscription], events: &[Event]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = BTreeSet::new();
    for s in subscriptions {
        if !ids.insert(s.id.as_str()) {
            report.violations.push(Violation::DuplicateSubscriptionId(s.id.clone()));
        }
        if s.description.is_empty() {
            report.violations.push(Violation::EmptyDescription(s.id.clone()));
        }
        if s.subscribers.is_empty() {
            report.violations.push(Violation::EmptySubscribers(s.id.clone()));
        }
        if !s.is_compound() && s.id.contains(COMPOUND_SEPARATOR) {
            report.violations.push(Violation::ReservedIdCharacter(s.id.clone()));
        }
    }
    let mut event_ids = BTreeSet::new();
    for e in events {
        if !event_ids.insert(e.id.as_str()) {
            report.violations.push(Violation::DuplicateEventId(e.id.clone()));
        }
        for g in &e.ground_truth {
            if !ids.contains(g.as_str()) {
                report.violations.push(Violation::DanglingGroundTruth {
                    event_id: e.id.clone(),
                    subscription_id: g.clone(),
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: &str, desc: &str) -> Subscription {
        Subscription::new(id, desc, [format!("u-{id}")]).unwrap()
    }

    #[test]
    fn atomic_id_rejects_plus() {
        let err = Subscription::new("a+b", "d", ["u".to_string()]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn empty_fields_rejected() {
        assert!(Subscription::new("s", "", ["u".to_string()]).is_err());
        assert!(Subscription::new("s", "d", std::iter::empty()).is_err());
        assert!(Event::new("e", "", None).is_err());
    }

    #[test]
    fn merged_subscription_joins_ids_and_unions_subscribers() {
        let a = sub("a", "cats");
        let b = sub("b", "dogs");
        let m = Subscription::merged(&a, &b);
        assert_eq!(m.id, "a+b");
        assert_eq!(m.description, "cats; dogs");
        assert_eq!(m.merged_from, vec!["a", "b"]);
        assert_eq!(
            m.subscribers,
            ["u-a".to_string(), "u-b".to_string()].into_iter().collect()
        );

        let c = sub("c", "fish");
        let m2 = Subscription::merged(&m, &c);
        assert_eq!(m2.id, "a+b+c");
        assert_eq!(m2.merged_from, vec!["a", "b", "c"]);
        assert_eq!(m2.subscribers.len(), 3);
    }

    #[test]
    fn members_of_atomic_is_own_id() {
        let a = sub("a", "cats");
        assert_eq!(a.members().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn split_compound_roundtrips_members() {
        let a = sub("a", "cats");
        let b = sub("b", "dogs");
        let m = Subscription::merged(&a, &b);
        let split: Vec<&str> = split_compound_id(&m.id).collect();
        assert_eq!(split, m.merged_from);
    }

    #[test]
    fn set_rejects_duplicate_ids() {
        let err =
            SubscriptionSet::new(vec![sub("a", "x"), sub("a", "y")]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn duplicate_description_detection() {
        let set = SubscriptionSet::new(vec![sub("a", "same"), sub("b", "same")]).unwrap();
        assert!(set.has_duplicate_descriptions());
        let set = SubscriptionSet::new(vec![sub("a", "x"), sub("b", "y")]).unwrap();
        assert!(!set.has_duplicate_descriptions());
    }

    #[test]
    fn budget_requires_headroom() {
        assert!(TokenBudget::new(700, 200, 80, 50, 500).is_err());
        assert!(TokenBudget::new(4096, 200, 80, 50, 500).is_ok());
    }

    #[test]
    fn validate_reports_every_violation() {
        let subs = vec![sub("a", "x"), sub("a", "y")];
        let events = vec![
            Event::new("e1", "t", ["a".to_string()]).unwrap(),
            Event::new("e1", "t", ["ghost".to_string()]).unwrap(),
        ];
        let report = validate_dataset(&subs, &events);
        assert!(!report.is_ok());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateSubscriptionId(id) if id == "a")));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateEventId(id) if id == "e1")));
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::DanglingGroundTruth { subscription_id, .. } if subscription_id == "ghost"
        )));
    }

    #[test]
    fn well_formed_dataset_passes() {
        let subs = vec![sub("a", "x"), sub("b", "y")];
        let events = vec![Event::new("e1", "t", ["a".to_string()]).unwrap()];
        assert!(validate_dataset(&subs, &events).is_ok());
    }
}
