//! Iterated cover/merge compression of a subscription set.
//!
//! Each round asks the backend for cover pairs (i subsumes j: j is
//! dropped, its subscribers move to i) and merge pairs (i and j become
//! one compound subscription). Pairs touching an already-consumed
//! subscription within the round are skipped, covers before merges, both
//! in listed order. A round that changes nothing is a fixed point.
//!
//! Termination is structural: every applied round removes at least one
//! subscription, so a set of n subscriptions compresses in at most n - 1
//! rounds.

use crate::backend::{CallUsage, MatchBackend};
use crate::error::Result;
use crate::model::{Subscription, SubscriptionSet, TokenBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineageAction {
    Cover,
    Merge,
}

/// One absorption event: `absorbed` disappeared into `kept`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageEntry {
    pub round: u64,
    pub action: LineageAction,
    pub kept: String,
    pub absorbed: String,
}

#[derive(Debug, Clone)]
pub struct CompressionResult {
    pub compressed: SubscriptionSet,
    /// |S'| / |S|; 1.0 for empty or incompressible input.
    pub rho: f64,
    pub rounds: u64,
    pub lineage: Vec<LineageEntry>,
    pub calls: Vec<CallUsage>,
}

pub fn cover_and_merge(
    set: &SubscriptionSet,
    backend: &dyn MatchBackend,
    budget: &TokenBudget,
) -> Result<CompressionResult> {
    let original_len = set.len();
    let mut subs: Vec<Subscription> = set.iter().cloned().collect();
    let mut rounds = 0u64;
    let mut lineage = Vec::new();
    let mut calls = Vec::new();

    loop {
        rounds += 1;
        if subs.len() <= 1 {
            break;
        }
        let (decision, usage) = backend.cover_merge_call(&subs, budget)?;
        calls.push(usage);
        decision.validate(subs.len())?;
        if !apply_round(&mut subs, &decision.covers, &decision.merges, rounds, &mut lineage) {
            break;
        }
        if subs.len() == 1 {
            break;
        }
    }

    let rho = if original_len == 0 { 1.0 } else { subs.len() as f64 / original_len as f64 };
    Ok(CompressionResult {
        compressed: SubscriptionSet::new(subs)?,
        rho,
        rounds,
        lineage,
        calls,
    })
}

/// Applies one round's decision in place. Returns whether anything changed.
fn apply_round(
    subs: &mut Vec<Subscription>,
    covers: &[(usize, usize)],
    merges: &[(usize, usize)],
    round: u64,
    lineage: &mut Vec<LineageEntry>,
) -> bool {
    let n = subs.len();
    // consumed: may not take part in a later pair this round.
    // removed: dropped from the surviving set.
    let mut consumed = vec![false; n];
    let mut removed = vec![false; n];
    let mut replacement: Vec<Option<Subscription>> = vec![None; n];
    let mut changed = false;

    for &(ci, cj) in covers {
        let (i, j) = (ci - 1, cj - 1);
        if consumed[i] || consumed[j] {
            continue;
        }
        let absorbed_subscribers: Vec<_> = subs[j].subscribers.iter().cloned().collect();
        subs[i].subscribers.extend(absorbed_subscribers);
        consumed[j] = true;
        removed[j] = true;
        changed = true;
        lineage.push(LineageEntry {
            round,
            action: LineageAction::Cover,
            kept: subs[i].id.clone(),
            absorbed: subs[j].id.clone(),
        });
    }

    for &(mi, mj) in merges {
        let (i, j) = (mi - 1, mj - 1);
        if consumed[i] || consumed[j] {
            continue;
        }
        let compound = Subscription::merged(&subs[i], &subs[j]);
        lineage.push(LineageEntry {
            round,
            action: LineageAction::Merge,
            kept: compound.id.clone(),
            absorbed: subs[j].id.clone(),
        });
        replacement[i] = Some(compound);
        consumed[i] = true;
        consumed[j] = true;
        removed[j] = true;
        changed = true;
    }

    if changed {
        let mut next = Vec::with_capacity(n);
        for (idx, sub) in subs.drain(..).enumerate() {
            if removed[idx] {
                continue;
            }
            match replacement[idx].take() {
                Some(compound) => next.push(compound),
                None => next.push(sub),
            }
        }
        *subs = next;
    }
    changed
}
