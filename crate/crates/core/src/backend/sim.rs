//! Deterministic simulated backend.
//!
//! Models the observed failure modes of LLM matchers without any model
//! weights: a discrimination capacity D caps how many subscriptions a
//! prompt can usefully carry. Above capacity the matcher collapses to
//! empty predictions with probability 1 - D/|S'| and only "sees" the
//! first min(D, |S'|) subscriptions (vocabulary narrowing). Optional
//! flip and hallucination noise corrupt otherwise-correct answers.
//!
//! Every random draw comes from a PRNG keyed on (config seed, event ID,
//! hash of the prompt's subscription-ID list), so identical calls give
//! identical answers and batch composition does not leak between events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{CallUsage, CoverMergeDecision, MatchBackend, MatchResponse};
use crate::costmodel::Pricing;
use crate::embedding::{cosine, stable_hash, EmbeddingProvider, HashedTfEmbedder};
use crate::error::{Error, Result};
use crate::model::{split_compound_id, Event, Subscription, TokenBudget};

const KEY_SALT: u64 = 0x00c0_ffee_2bad_cafe;

#[derive(Debug, Clone)]
pub struct SimulatedBackendConfig {
    /// Reported via `MatchBackend::name` and used in result tables.
    pub name: String,
    pub seed: u64,
    /// D: how many subscriptions one prompt can usefully carry.
    pub discrimination_capacity: u64,
    /// Probability of replacing one correct ID with an in-vocabulary
    /// wrong one, per event.
    pub flip_noise: f64,
    /// Probability of appending a corrupted out-of-prompt ID, per event.
    /// The corruption is deterministic: a real in-prompt ID plus "#x".
    pub hallucination_rate: f64,
    pub latency_base: f64,
    pub latency_per_token: f64,
    /// Cosine threshold above which two distinct descriptions merge.
    pub merge_threshold: f64,
    pub pricing: Pricing,
}

impl SimulatedBackendConfig {
    /// Perfect matcher: unlimited capacity, no noise.
    pub fn oracle() -> Self {
        Self {
            name: "sim:oracle".into(),
            seed: 42,
            discrimination_capacity: u64::MAX,
            flip_noise: 0.0,
            hallucination_rate: 0.0,
            latency_base: 0.2,
            latency_per_token: 5e-4,
            merge_threshold: 0.95,
            pricing: Pricing::default(),
        }
    }

    /// Capacity-limited matcher exhibiting empty-prediction collapse and
    /// vocabulary narrowing once prompts exceed `d` subscriptions.
    pub fn collapse(d: u64) -> Self {
        Self {
            name: "sim:collapse".into(),
            discrimination_capacity: d,
            ..Self::oracle()
        }
    }
}

pub struct SimulatedBackend {
    cfg: SimulatedBackendConfig,
    embedder: HashedTfEmbedder,
}

impl SimulatedBackend {
    pub fn new(cfg: SimulatedBackendConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.flip_noise)
            || !(0.0..=1.0).contains(&cfg.hallucination_rate)
        {
            return Err(Error::InvalidInput("noise rates must be in [0, 1]".into()));
        }
        if cfg.discrimination_capacity == 0 {
            return Err(Error::InvalidInput(
                "discrimination capacity must be positive".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&cfg.merge_threshold) {
            return Err(Error::InvalidInput("merge threshold must be in [-1, 1]".into()));
        }
        Ok(Self { cfg, embedder: HashedTfEmbedder::default() })
    }

    pub fn config(&self) -> &SimulatedBackendConfig {
        &self.cfg
    }

    fn event_rng(&self, event_id: &str, subs: &[Subscription]) -> ChaCha8Rng {
        let h_event = stable_hash(event_id.as_bytes(), KEY_SALT);
        let mut id_bytes = Vec::new();
        for s in subs {
            id_bytes.extend_from_slice(s.id.as_bytes());
            id_bytes.push(0x1f);
        }
        let h_subs = stable_hash(&id_bytes, KEY_SALT);
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.cfg.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&h_event.to_le_bytes());
        seed[16..24].copy_from_slice(&h_subs.to_le_bytes());
        seed[24..32].copy_from_slice(&KEY_SALT.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    fn latency(&self, prompt_tokens: u64) -> f64 {
        self.cfg.latency_base + self.cfg.latency_per_token * prompt_tokens as f64
    }
}

impl MatchBackend for SimulatedBackend {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn pricing(&self) -> Pricing {
        self.cfg.pricing
    }

    fn cover_merge_call(
        &self,
        subs: &[Subscription],
        budget: &TokenBudget,
    ) -> Result<(CoverMergeDecision, CallUsage)> {
        let n = subs.len();
        let prompt_tokens = budget.t_inst + n as u64 * budget.t_s;
        let mut decision = CoverMergeDecision::default();

        // A prompt beyond the discrimination capacity yields no usable
        // proposals: the same collapse that empties match predictions.
        let within_capacity = (n as u64) <= self.cfg.discrimination_capacity;
        if n >= 2 && within_capacity {
            // Covers: identical descriptions, lowest index covers the rest.
            let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
            for (idx, s) in subs.iter().enumerate() {
                match groups.iter_mut().find(|(first, _)| {
                    subs[*first].description == s.description
                }) {
                    Some((_, rest)) => rest.push(idx),
                    None => groups.push((idx, Vec::new())),
                }
            }
            let mut covered = vec![false; n];
            for (first, rest) in &groups {
                for &j in rest {
                    decision.covers.push((first + 1, j + 1));
                    covered[j] = true;
                }
            }

            // Merges: near-duplicate distinct descriptions among the
            // subscriptions that were not just covered away.
            let candidates: Vec<usize> = (0..n).filter(|&i| !covered[i]).collect();
            let vectors: Vec<_> = candidates
                .iter()
                .map(|&i| self.embedder.embed(&subs[i].description))
                .collect::<Result<Vec<_>>>()?;
            for a in 0..candidates.len() {
                for b in (a + 1)..candidates.len() {
                    let (i, j) = (candidates[a], candidates[b]);
                    if subs[i].description == subs[j].description {
                        continue;
                    }
                    if cosine(&vectors[a], &vectors[b])? >= self.cfg.merge_threshold {
                        decision.merges.push((i + 1, j + 1));
                    }
                }
            }
        }

        let response_tokens =
            2 + 4 * (decision.covers.len() + decision.merges.len()) as u64;
        let usage = CallUsage {
            prompt_tokens,
            response_tokens,
            latency_seconds: self.latency(prompt_tokens),
        };
        Ok((decision, usage))
    }

    fn match_call(
        &self,
        subs: &[Subscription],
        events: &[Event],
        kappa: usize,
        budget: &TokenBudget,
    ) -> Result<(MatchResponse, CallUsage)> {
        let n = subs.len() as u64;
        let d = self.cfg.discrimination_capacity;
        // ceil(min(1, D/n) * n) == min(D, n) for integers; keep it exact.
        let vocab_len = d.min(n) as usize;
        let p_empty = if n == 0 { 0.0 } else { (1.0 - d as f64 / n as f64).max(0.0) };

        let mut response = MatchResponse::default();
        for (batch_idx, event) in events.iter().enumerate() {
            let mut rng = self.event_rng(&event.id, subs);
            if rng.gen::<f64>() < p_empty {
                continue;
            }
            let vocab = &subs[..vocab_len];
            let mut matched: Vec<String> = vocab
                .iter()
                .filter(|s| {
                    split_compound_id(&s.id).any(|m| event.ground_truth.contains(m))
                })
                .map(|s| s.id.clone())
                .collect();

            if rng.gen::<f64>() < self.cfg.flip_noise && !matched.is_empty() {
                let wrong: Vec<&str> = vocab
                    .iter()
                    .map(|s| s.id.as_str())
                    .filter(|id| !matched.iter().any(|m| m == id))
                    .collect();
                if !wrong.is_empty() {
                    let at = rng.gen_range(0..matched.len());
                    let pick = rng.gen_range(0..wrong.len());
                    matched[at] = wrong[pick].to_string();
                }
            }

            if rng.gen::<f64>() < self.cfg.hallucination_rate && !vocab.is_empty() {
                let pick = rng.gen_range(0..vocab.len());
                matched.push(format!("{}#x", vocab[pick].id));
            }

            matched.truncate(kappa);
            for id in matched {
                response.matches.push((batch_idx + 1, id));
            }
        }

        // Exact accounting per the window model: instructions, one line
        // per subscription, one line per event.
        let prompt_tokens =
            budget.t_inst + n * budget.t_s + events.len() as u64 * budget.t_e;
        let usage = CallUsage {
            prompt_tokens,
            response_tokens: 2 + 4 * response.matches.len() as u64,
            latency_seconds: self.latency(prompt_tokens),
        };
        Ok((response, usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: &str, desc: &str) -> Subscription {
        Subscription::new(id, desc, [format!("u-{id}")]).unwrap()
    }

    fn event(id: &str, truth: &[&str]) -> Event {
        Event::new(id, format!("text for {id}"), truth.iter().map(|s| s.to_string()))
            .unwrap()
    }

    fn oracle() -> SimulatedBackend {
        SimulatedBackend::new(SimulatedBackendConfig::oracle()).unwrap()
    }

    #[test]
    fn identical_descriptions_are_covered_by_lowest_index() {
        let subs = vec![sub("a", "same"), sub("b", "same"), sub("c", "same")];
        let (d, _) = oracle().cover_merge_call(&subs, &TokenBudget::default()).unwrap();
        assert_eq!(d.covers, vec![(1, 2), (1, 3)]);
        assert!(d.merges.is_empty());
    }

    #[test]
    fn unrelated_pair_yields_empty_decision() {
        let subs = vec![sub("a", "alpine skiing"), sub("b", "bond markets")];
        let (d, _) = oracle().cover_merge_call(&subs, &TokenBudget::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn single_subscription_yields_empty_decision() {
        let subs = vec![sub("a", "anything")];
        let (d, _) = oracle().cover_merge_call(&subs, &TokenBudget::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn near_duplicate_distinct_strings_merge() {
        // Same token multiset, different strings: cosine 1.0 but not a
        // cover, so it must surface as a merge.
        let subs = vec![sub("a", "Sports news"), sub("b", "sports news")];
        let (d, _) = oracle().cover_merge_call(&subs, &TokenBudget::default()).unwrap();
        assert!(d.covers.is_empty());
        assert_eq!(d.merges, vec![(1, 2)]);
    }

    #[test]
    fn capacity_gate_empties_cover_merge() {
        let cfg = SimulatedBackendConfig::collapse(3);
        let b = SimulatedBackend::new(cfg).unwrap();
        let subs: Vec<Subscription> =
            (0..5).map(|i| sub(&format!("s{i}"), "same text")).collect();
        let (d, _) = b.cover_merge_call(&subs, &TokenBudget::default()).unwrap();
        assert!(d.is_empty(), "above-capacity prompt must yield no proposals");
        // At or below capacity the pinned rule applies.
        let (d, _) = b.cover_merge_call(&subs[..3], &TokenBudget::default()).unwrap();
        assert_eq!(d.covers, vec![(1, 2), (1, 3)]);
    }

    #[test]
    fn oracle_matches_exactly_ground_truth() {
        let subs = vec![sub("s1", "d1"), sub("s2", "d2"), sub("s3", "d3")];
        let events = vec![event("e1", &["s2"]), event("e2", &["s1", "s3"]), event("e3", &[])];
        let (r, _) = oracle()
            .match_call(&subs, &events, 3, &TokenBudget::default())
            .unwrap();
        assert_eq!(
            r.matches,
            vec![
                (1, "s2".to_string()),
                (2, "s1".to_string()),
                (2, "s3".to_string()),
            ]
        );
    }

    #[test]
    fn kappa_truncates_matches() {
        let subs: Vec<Subscription> =
            (0..5).map(|i| sub(&format!("s{i}"), &format!("d{i}"))).collect();
        let truth: Vec<&str> = vec!["s0", "s1", "s2", "s3", "s4"];
        let events = vec![event("e1", &truth)];
        let (r, _) = oracle()
            .match_call(&subs, &events, 2, &TokenBudget::default())
            .unwrap();
        assert_eq!(r.matches.len(), 2);
    }

    #[test]
    fn compound_id_is_eligible_through_members() {
        let a = sub("a", "cats");
        let b = sub("b", "dogs");
        let compound = Subscription::merged(&a, &b);
        let subs = vec![compound, sub("c", "fish")];
        let events = vec![event("e1", &["a"])];
        let (r, _) = oracle()
            .match_call(&subs, &events, 3, &TokenBudget::default())
            .unwrap();
        assert_eq!(r.matches, vec![(1, "a+b".to_string())]);
    }

    #[test]
    fn empty_rate_at_twice_capacity_is_about_half() {
        let b = SimulatedBackend::new(SimulatedBackendConfig::collapse(10)).unwrap();
        let subs: Vec<Subscription> =
            (0..20).map(|i| sub(&format!("s{i}"), &format!("d{i}"))).collect();
        let budget = TokenBudget::default();
        let mut empties = 0usize;
        let total = 10_000usize;
        for i in 0..total {
            let events = vec![event(&format!("e{i}"), &["s0"])];
            let (r, _) = b.match_call(&subs, &events, 3, &budget).unwrap();
            if r.matches.is_empty() {
                empties += 1;
            }
        }
        let rate = empties as f64 / total as f64;
        assert!((rate - 0.5).abs() <= 0.02, "empty rate {rate} not within 0.5 +/- 0.02");
    }

    #[test]
    fn collapse_rate_is_monotone_in_prompt_size() {
        let b = SimulatedBackend::new(SimulatedBackendConfig::collapse(20)).unwrap();
        let budget = TokenBudget::default();
        let mut last_rate = -1.0f64;
        for n in [10usize, 20, 40, 80] {
            let subs: Vec<Subscription> =
                (0..n).map(|i| sub(&format!("s{i}"), &format!("d{i}"))).collect();
            let mut empties = 0usize;
            let total = 2_000usize;
            for i in 0..total {
                let events = vec![event(&format!("e{i}"), &["s0"])];
                let (r, _) = b.match_call(&subs, &events, 3, &budget).unwrap();
                if r.matches.is_empty() {
                    empties += 1;
                }
            }
            let rate = empties as f64 / total as f64;
            assert!(rate >= last_rate, "rate {rate} < previous {last_rate} at n={n}");
            last_rate = rate;
        }
    }

    #[test]
    fn vocabulary_narrowing_hides_tail_subscriptions() {
        // D=2 of 4 subs: only s0, s1 are visible; truth s3 cannot match.
        let mut cfg = SimulatedBackendConfig::collapse(2);
        cfg.seed = 7;
        let b = SimulatedBackend::new(cfg).unwrap();
        let subs: Vec<Subscription> =
            (0..4).map(|i| sub(&format!("s{i}"), &format!("d{i}"))).collect();
        let budget = TokenBudget::default();
        for i in 0..200 {
            let events = vec![event(&format!("e{i}"), &["s3"])];
            let (r, _) = b.match_call(&subs, &events, 3, &budget).unwrap();
            assert!(r.matches.is_empty(), "s3 is outside the vocabulary prefix");
        }
    }

    #[test]
    fn flip_noise_swaps_one_correct_id() {
        let mut cfg = SimulatedBackendConfig::oracle();
        cfg.flip_noise = 1.0;
        let b = SimulatedBackend::new(cfg).unwrap();
        let subs = vec![sub("s1", "d1"), sub("s2", "d2"), sub("s3", "d3")];
        let events = vec![event("e1", &["s1", "s2"])];
        let (r, _) = b.match_call(&subs, &events, 3, &TokenBudget::default()).unwrap();
        let ids: Vec<&str> = r.matches.iter().map(|(_, id)| id.as_str()).collect();
        assert_eq!(ids.len(), 2, "flip replaces, never removes");
        assert!(ids.contains(&"s3"), "the wrong id must come from the vocabulary");
        let correct = ids.iter().filter(|id| **id == "s1" || **id == "s2").count();
        assert_eq!(correct, 1, "exactly one correct id is replaced");
    }

    #[test]
    fn hallucination_appends_corrupted_id() {
        let mut cfg = SimulatedBackendConfig::oracle();
        cfg.hallucination_rate = 1.0;
        let b = SimulatedBackend::new(cfg).unwrap();
        let subs = vec![sub("s1", "d1"), sub("s2", "d2")];
        let events = vec![event("e1", &["s1"])];
        let (r, _) = b.match_call(&subs, &events, 5, &TokenBudget::default()).unwrap();
        let ids: Vec<&str> = r.matches.iter().map(|(_, id)| id.as_str()).collect();
        assert!(ids.contains(&"s1"));
        assert!(
            ids.iter().any(|id| id.ends_with("#x")),
            "expected a corrupted id in {ids:?}"
        );
    }

    #[test]
    fn usage_prompt_tokens_are_exact() {
        let subs = vec![sub("s1", "d1"), sub("s2", "d2"), sub("s3", "d3")];
        let events = vec![event("e1", &["s1"]), event("e2", &[])];
        let budget = TokenBudget::new(4096, 200, 80, 50, 500).unwrap();
        let (_, usage) = oracle().match_call(&subs, &events, 3, &budget).unwrap();
        assert_eq!(usage.prompt_tokens, 200 + 3 * 80 + 2 * 50);
        assert!(usage.latency_seconds > 0.0);
    }

    #[test]
    fn identical_calls_are_bitwise_identical() {
        let b = SimulatedBackend::new(SimulatedBackendConfig::collapse(2)).unwrap();
        let subs: Vec<Subscription> =
            (0..6).map(|i| sub(&format!("s{i}"), &format!("d{i}"))).collect();
        let events: Vec<Event> =
            (0..10).map(|i| event(&format!("e{i}"), &["s0"])).collect();
        let budget = TokenBudget::default();
        let (r1, u1) = b.match_call(&subs, &events, 3, &budget).unwrap();
        let (r2, u2) = b.match_call(&subs, &events, 3, &budget).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(u1, u2);
    }
}
