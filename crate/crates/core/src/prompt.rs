//! Prompt templates for the two backend call types.
//!
//! The templates are fixed text with three slots: the subscription list,
//! the event batch, and kappa. Wire backends send them verbatim; the
//! simulated backend only uses them for token estimation parity in tests.

use crate::model::{Event, Subscription};

pub const COVER_MERGE_SYSTEM: &str = "You are a content-router optimiser. Given a list of \
natural-language subscription descriptions, identify pairs (i, j) where subscription i covers \
j (i.e., every event matching j also matches i) and pairs (i, j) where two subscriptions \
overlap enough to be merged into a single combined description. Return JSON only.";

pub const MATCH_SYSTEM: &str = "You are a content router. For each event below, return up to K \
subscription IDs whose descriptions match the event's content. Return JSON only; no commentary.";

/// Response budget for cover/merge calls, in tokens.
pub const COVER_MERGE_MAX_TOKENS: u64 = 512;

/// One "[id] description" line per subscription.
pub fn subscription_lines(subs: &[Subscription]) -> String {
    subs.iter()
        .map(|s| format!("[{}] {}", s.id, s.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One "[idx] text" line per event, 1-based to match response indices.
pub fn event_lines(events: &[Event]) -> String {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{}] {}", i + 1, e.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn cover_merge_user(subs: &[Subscription]) -> String {
    format!(
        "Subscriptions:\n{}\n\nReturn JSON with keys \"covers\" and \"merges\", each a list \
of [i, j] index pairs. Use indices from the list above (1-based). Return {{}} if no pair \
qualifies.",
        subscription_lines(subs)
    )
}

pub fn match_user(subs: &[Subscription], events: &[Event], kappa: usize) -> String {
    format!(
        "Subscriptions ([id] description):\n{}\n\nEvents:\n{}\n\nReturn JSON of the form \
{{\"matches\": [[event_idx, sub_id], ...]}} where event_idx is 1-based and sub_id is the [id] \
from the subscription list. At most K={kappa} subscriptions per event; omit events with no \
matching subscription.",
        subscription_lines(subs),
        event_lines(events)
    )
}
