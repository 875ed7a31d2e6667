//! Decoding against a pluggable [`Scorer`].
//!
//! [`constrained_beam_search`] only ever produces complete trie entries,
//! [`sample_free`] samples without any constraint, and [`nll`] evaluates the
//! training objective of a scorer on an (input, target) pair.

mod beam;
mod scorer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use beam::{constrained_beam_search, masked_log_probs, Hypothesis};
pub use scorer::{
    train_count_scorer, CountScorer, NoiseScorer, Scorer, UniformScorer, CONTEXT_KEY_VERSION,
};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tokenizer::{TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_new_tokens: usize,
    /// Zero selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 5,
            max_new_tokens: 256,
            temperature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Generated tokens, `eos` excluded.
    pub tokens: TokenSequence,
    /// False when generation stopped at `max_new_tokens`.
    pub hit_eos: bool,
}

/// Unconstrained autoregressive sampling.
pub fn sample_free<F: Real, S: Scorer<F> + ?Sized>(
    scorer: &S,
    prompt: &[TokenId],
    eos: TokenId,
    config: &DecodeConfig,
) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = Vec::new();
    while tokens.len() < config.max_new_tokens {
        let logp = scorer.score(prompt, &tokens);
        let next = if config.temperature <= 0.0 {
            argmax(&logp)
        } else {
            draw(&logp, config.temperature, &mut rng)
        };
        if next == eos {
            return Sample {
                tokens,
                hit_eos: true,
            };
        }
        tokens.push(next);
    }
    Sample {
        tokens,
        hit_eos: false,
    }
}

fn argmax<F: Real>(logp: &[F]) -> TokenId {
    let mut best = 0;
    for (i, &v) in logp.iter().enumerate() {
        if v > logp[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

fn draw<F: Real>(logp: &[F], temperature: f64, rng: &mut ChaCha8Rng) -> TokenId {
    let scaled: Vec<f64> = logp.iter().map(|l| l.as_f64() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return argmax(logp);
    }
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let mut target = rng.gen::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return TokenId(i as u32);
        }
        target -= w;
    }
    // rounding left a sliver of mass: take the last token with weight
    TokenId(weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32)
}

/// Negative log-likelihood of a target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Nll<F> {
    /// Sum over target positions; `+inf` if any position has zero probability.
    pub value: F,
    /// Target positions whose token had zero probability.
    pub zero_probability: Vec<usize>,
}

impl<F: Real> Nll<F> {
    pub fn is_finite(&self) -> bool {
        self.zero_probability.is_empty()
    }
}

/// `Σ_i −log p(target[i] | input, target[..i])`.
pub fn nll<F: Real, S: Scorer<F> + ?Sized>(
    scorer: &S,
    input: &[TokenId],
    target: &[TokenId],
) -> Result<Nll<F>> {
    if target.is_empty() {
        return Err(Error::EmptySequence(0));
    }
    let mut value = F::zero();
    let mut zero_probability = Vec::new();
    for (i, &t) in target.iter().enumerate() {
        let lp = scorer
            .score(input, &target[..i])
            .get(t.index())
            .copied()
            .unwrap_or(F::neg_infinity());
        if lp == F::neg_infinity() {
            zero_probability.push(i);
        }
        value = value - lp;
    }
    Ok(Nll {
        value,
        zero_probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trie::DisjunctiveTrie;
    use std::collections::HashMap;

    fn t(ids: &[u32]) -> Vec<TokenId> {
        ids.iter().map(|&i| TokenId(i)).collect()
    }

    /// Scorer returning a fixed distribution per generated prefix.
    struct TableScorer {
        v: usize,
        rows: HashMap<Vec<TokenId>, Vec<f64>>,
    }

    impl Scorer<f64> for TableScorer {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn score(&self, _: &[TokenId], generated: &[TokenId]) -> Vec<f64> {
            self.rows
                .get(generated)
                .cloned()
                .unwrap_or_else(|| vec![-(self.v as f64).ln(); self.v])
        }
    }

    #[test]
    fn uniform_two_leaves() {
        let trie = DisjunctiveTrie::build([t(&[3]), t(&[4])], TokenId(0)).unwrap();
        let out = constrained_beam_search::<f64, _>(&UniformScorer { vocab_size: 8 }, &[], &trie, 2);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].tokens, t(&[3]));
        assert_eq!(out[1].tokens, t(&[4]));
        for h in &out {
            assert!((h.score - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_uneven_tree() {
        // t1 = 1, t2 = 2, t3 = 3, t4 = 4
        let trie = DisjunctiveTrie::build([t(&[1]), t(&[2, 3]), t(&[2, 4])], TokenId(0)).unwrap();
        let out = constrained_beam_search::<f64, _>(&UniformScorer { vocab_size: 10 }, &[], &trie, 2);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].tokens, t(&[1]));
        assert!((out[0].score - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(out[1].tokens, t(&[2, 3]));
        assert!((out[1].score - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wide_beam_returns_every_leaf() {
        let trie = DisjunctiveTrie::build([t(&[1]), t(&[2, 3])], TokenId(0)).unwrap();
        let out = constrained_beam_search::<f64, _>(&UniformScorer { vocab_size: 5 }, &[], &trie, 50);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn illegal_mass_does_not_matter() {
        // the scorer prefers token 9, which is not in the trie
        let mut rows = HashMap::new();
        let mut row = vec![f64::NEG_INFINITY; 10];
        row[9] = (0.9f64).ln();
        row[1] = (0.03f64).ln();
        row[2] = (0.07f64).ln();
        rows.insert(vec![], row);
        let scorer = TableScorer { v: 10, rows };
        let trie = DisjunctiveTrie::build([t(&[1]), t(&[2])], TokenId(0)).unwrap();
        let out = constrained_beam_search(&scorer, &[], &trie, 2);
        assert_eq!(out[0].tokens, t(&[2]));
        assert!((out[0].score - 0.7f64.ln()).abs() < 1e-12);
        assert!((out[1].score - 0.3f64.ln()).abs() < 1e-12);
        let dist = masked_log_probs(&scorer, &[], &[], &t(&[1, 2]));
        let total: f64 = dist.iter().map(|(_, lp)| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_feasible_set_is_uniform() {
        let mut rows = HashMap::new();
        let mut row = vec![f64::NEG_INFINITY; 4];
        row[3] = 0.0;
        rows.insert(vec![], row);
        let scorer = TableScorer { v: 4, rows };
        let dist = masked_log_probs(&scorer, &[], &[], &t(&[1, 2]));
        assert!(dist.iter().all(|(_, lp)| (lp - 0.5f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn greedy_sampling_follows_argmax() {
        let scorer = NoiseScorer {
            vocab_size: 12,
            seed: 4,
            spread: 3.0,
        };
        let cfg = DecodeConfig {
            max_new_tokens: 6,
            ..DecodeConfig::default()
        };
        let a = sample_free::<f64, _>(&scorer, &t(&[1, 2]), TokenId(0), &cfg);
        assert_eq!(a, sample_free::<f64, _>(&scorer, &t(&[1, 2]), TokenId(0), &cfg));
        // recompute the argmax chain step by step
        let mut expect = Vec::new();
        loop {
            let row: Vec<f64> = scorer.score(&t(&[1, 2]), &expect);
            let (best, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if best == 0 || expect.len() == 6 {
                break;
            }
            expect.push(TokenId(best as u32));
        }
        assert_eq!(a.tokens, expect);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let scorer = NoiseScorer {
            vocab_size: 30,
            seed: 9,
            spread: 1.0,
        };
        let cfg = DecodeConfig {
            temperature: 1.0,
            max_new_tokens: 20,
            seed: 77,
            ..DecodeConfig::default()
        };
        let a = sample_free::<f32, _>(&scorer, &[], TokenId(0), &cfg);
        let b = sample_free::<f32, _>(&scorer, &[], TokenId(0), &cfg);
        assert_eq!(a, b);
        assert!(!a.hit_eos || a.tokens.len() < 20);
    }

    #[test]
    fn sampling_stops_at_eos() {
        let mut rows = HashMap::new();
        let mut row = vec![f64::NEG_INFINITY; 4];
        row[2] = 0.0;
        rows.insert(vec![], row);
        let mut row = vec![f64::NEG_INFINITY; 4];
        row[0] = 0.0;
        rows.insert(t(&[2]), row);
        let scorer = TableScorer { v: 4, rows };
        let s = sample_free(&scorer, &[], TokenId(0), &DecodeConfig::default());
        assert_eq!(s, Sample { tokens: t(&[2]), hit_eos: true });
    }

    #[test]
    fn nll_closed_forms() {
        let v = 50;
        let out = nll::<f64, _>(&UniformScorer { vocab_size: v }, &t(&[1]), &t(&[3, 4, 5])).unwrap();
        assert!((out.value - 3.0 * (v as f64).ln()).abs() < 1e-12);

        let mut rows = HashMap::new();
        let mut row = vec![f64::NEG_INFINITY; 4];
        row[2] = 0.0;
        rows.insert(vec![], row);
        let certain = TableScorer { v: 4, rows };
        assert_eq!(nll(&certain, &[], &t(&[2])).unwrap().value, 0.0);
        let impossible = nll(&certain, &[], &t(&[1])).unwrap();
        assert_eq!(impossible.value, f64::INFINITY);
        assert_eq!(impossible.zero_probability, vec![0]);
        assert!(nll(&certain, &[], &[]).is_err());
    }

    #[test]
    fn count_scorer_modes() {
        let q = t(&[10, 11]);
        let single = CountScorer::<f64>::train(&[(q.clone(), t(&[300]))], 0.1, 400, 260, None).unwrap();
        let row = single.score(&q, &[]);
        assert_eq!(argmax(&row), TokenId(300));

        let pairs = vec![
            (q.clone(), t(&[301])),
            (q.clone(), t(&[301])),
            (t(&[11, 10]), t(&[302])),
        ];
        let s = CountScorer::<f64>::train(&pairs, 0.5, 400, 260, None).unwrap();
        let row = s.score(&q, &[]);
        assert!(row[301] > row[302]);
        let total: f64 = row.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // unseen context is uniform
        let unseen = s.score(&t(&[12]), &[]);
        assert!(unseen.iter().all(|&l| (l + 400f64.ln()).abs() < 1e-12));
        // atomic tokens in the prompt do not change the key
        assert_eq!(s.score(&t(&[10, 11, 305]), &[]), row);
    }

    #[test]
    fn count_scorer_rejects_bad_input() {
        assert!(matches!(
            CountScorer::<f64>::train(&[(t(&[1]), t(&[2]))], 0.0, 10, 5, None),
            Err(Error::InvalidSmoothing(_))
        ));
        assert!(matches!(
            CountScorer::<f64>::train(&[], 1.0, 10, 5, None),
            Err(Error::NoTrainingPairs)
        ));
    }

    #[test]
    fn count_scorer_is_order_independent_and_serializable() {
        let pairs = vec![
            (t(&[1, 2]), t(&[7, 8])),
            (t(&[3]), t(&[9])),
            (t(&[2, 1]), t(&[7, 9])),
        ];
        let mut rev = pairs.clone();
        rev.reverse();
        let a = CountScorer::<f64>::train(&pairs, 0.3, 12, 6, Some(TokenId(0))).unwrap();
        let b = CountScorer::<f64>::train(&rev, 0.3, 12, 6, Some(TokenId(0))).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_json(&mut buf).unwrap();
        let mut buf2 = Vec::new();
        b.write_json(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        let c = CountScorer::<f64>::read_json(buf.as_slice()).unwrap();
        assert_eq!(c, a);
    }
}
