use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tokenizer::{TokenId, TokenSequence, Vocabulary};

/// Next-token model: log-probabilities over the whole vocabulary.
///
/// The context is split into the conditioning `prompt` and the tokens
/// `generated` so far; a language model simply sees their concatenation.
/// Implementations must be deterministic and the returned distribution must
/// sum to one in probability space.
pub trait Scorer<F: Real>: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn score(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<F>;
}

impl<F: Real, S: Scorer<F> + ?Sized> Scorer<F> for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn score(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<F> {
        (**self).score(prompt, generated)
    }
}

impl<F: Real, S: Scorer<F> + ?Sized> Scorer<F> for Box<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn score(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<F> {
        (**self).score(prompt, generated)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl<F: Real> Scorer<F> for UniformScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, _: &[TokenId], _: &[TokenId]) -> Vec<F> {
        vec![-F::from_count(self.vocab_size).ln(); self.vocab_size]
    }
}

/// Deterministic pseudo-random scorer: the logits are a seeded function of
/// the full context. Useful for exercising decoders without a model.
#[derive(Debug, Clone, Copy)]
pub struct NoiseScorer {
    pub vocab_size: usize,
    pub seed: u64,
    /// Logits are drawn from `[-spread, spread)`.
    pub spread: f64,
}

impl<F: Real> Scorer<F> for NoiseScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<F> {
        let mut h = self.seed ^ 0xcbf29ce484222325;
        for t in prompt.iter().chain([TokenId(u32::MAX)].iter()).chain(generated) {
            h = (h ^ t.0 as u64).wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|_| rng.gen_range(-self.spread..self.spread))
            .collect();
        let lse = crate::scalar::log_sum_exp(logits.iter().copied());
        logits.into_iter().map(|l| F::lit(l - lse)).collect()
    }
}

/// Version tag of the count-table context key.
pub const CONTEXT_KEY_VERSION: &str = "base-bag+suffix-v1";

/// Smoothed conditional counts of the next token.
///
/// The context key is the sorted multiset of base-token ids in the prompt
/// followed by the generated suffix, so the model is insensitive to word
/// order in the input but exact about what it has produced so far.
/// `P(t | ctx) = (c(t, ctx) + α) / (N(ctx) + α·V)`; unseen contexts are
/// uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct CountScorer<F> {
    alpha: F,
    vocab_size: usize,
    base_size: usize,
    tables: HashMap<Vec<u32>, ContextCounts>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    counts: HashMap<TokenId, u64>,
}

const KEY_SEPARATOR: u32 = u32::MAX;

impl<F: Real> CountScorer<F> {
    /// Counts every target token (and, when `eos` is given, a closing `eos`)
    /// conditioned on the input's key and the target prefix.
    pub fn train(
        pairs: &[(TokenSequence, TokenSequence)],
        alpha: F,
        vocab_size: usize,
        base_size: usize,
        eos: Option<TokenId>,
    ) -> Result<Self> {
        if !(alpha > F::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidSmoothing(alpha.as_f64()));
        }
        if pairs.is_empty() {
            return Err(Error::NoTrainingPairs);
        }
        let mut scorer = CountScorer {
            alpha,
            vocab_size,
            base_size,
            tables: HashMap::new(),
        };
        for (input, target) in pairs {
            let mut key = scorer.prompt_key(input);
            for &t in target.iter().chain(eos.as_ref()) {
                let entry = scorer.tables.entry(key.clone()).or_default();
                entry.total += 1;
                *entry.counts.entry(t).or_insert(0) += 1;
                key.push(t.0);
            }
        }
        Ok(scorer)
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    /// Number of distinct contexts with at least one observation.
    pub fn context_count(&self) -> usize {
        self.tables.len()
    }

    fn prompt_key(&self, prompt: &[TokenId]) -> Vec<u32> {
        let mut key: Vec<u32> = prompt
            .iter()
            .filter(|t| t.index() < self.base_size)
            .map(|t| t.0)
            .collect();
        key.sort_unstable();
        key.push(KEY_SEPARATOR);
        key
    }

    fn key(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<u32> {
        let mut key = self.prompt_key(prompt);
        key.extend(generated.iter().map(|t| t.0));
        key
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        let mut tables: Vec<TableDump> = self
            .tables
            .iter()
            .map(|(key, c)| {
                let mut counts: Vec<(u32, u64)> = c.counts.iter().map(|(t, &n)| (t.0, n)).collect();
                counts.sort_unstable();
                TableDump {
                    key: key.clone(),
                    counts,
                }
            })
            .collect();
        tables.sort_by(|a, b| a.key.cmp(&b.key));
        let dump = ScorerDump {
            version: CONTEXT_KEY_VERSION.to_string(),
            alpha: self.alpha.as_f64(),
            vocab_size: self.vocab_size,
            base_size: self.base_size,
            tables,
        };
        serde_json::to_writer(w, &dump)?;
        Ok(())
    }

    pub fn read_json(r: impl Read) -> Result<Self> {
        let dump: ScorerDump = serde_json::from_reader(r)?;
        if dump.version != CONTEXT_KEY_VERSION {
            return Err(Error::parse(
                "scorer",
                "version",
                format!("expected {CONTEXT_KEY_VERSION}, found {}", dump.version),
            ));
        }
        if !(dump.alpha > 0.0) {
            return Err(Error::InvalidSmoothing(dump.alpha));
        }
        let tables = dump
            .tables
            .into_iter()
            .map(|t| {
                let counts: HashMap<TokenId, u64> =
                    t.counts.into_iter().map(|(id, n)| (TokenId(id), n)).collect();
                let total = counts.values().sum();
                (t.key, ContextCounts { total, counts })
            })
            .collect();
        Ok(CountScorer {
            alpha: F::lit(dump.alpha),
            vocab_size: dump.vocab_size,
            base_size: dump.base_size,
            tables,
        })
    }
}

impl<F: Real> Scorer<F> for CountScorer<F> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<F> {
        let v = F::from_count(self.vocab_size);
        match self.tables.get(&self.key(prompt, generated)) {
            None => vec![-v.ln(); self.vocab_size],
            Some(ctx) => {
                let denom = (F::lit(ctx.total as f64) + self.alpha * v).ln();
                let mut out = vec![self.alpha.ln() - denom; self.vocab_size];
                for (&t, &c) in &ctx.counts {
                    if let Some(slot) = out.get_mut(t.index()) {
                        *slot = (F::lit(c as f64) + self.alpha).ln() - denom;
                    }
                }
                out
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScorerDump {
    version: String,
    alpha: f64,
    vocab_size: usize,
    base_size: usize,
    tables: Vec<TableDump>,
}

#[derive(Serialize, Deserialize)]
struct TableDump {
    key: Vec<u32>,
    counts: Vec<(u32, u64)>,
}

/// Trains a [`CountScorer`] sized for `vocab`, closing every target with
/// the vocabulary's `eos`.
pub fn train_count_scorer<F: Real>(
    pairs: &[(TokenSequence, TokenSequence)],
    alpha: F,
    vocab: &Vocabulary,
) -> Result<CountScorer<F>> {
    CountScorer::train(pairs, alpha, vocab.len(), vocab.base_size(), Some(vocab.eos()))
}
