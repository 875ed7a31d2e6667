use std::cmp::Ordering;

use crate::decoder::scorer::Scorer;
use crate::scalar::{cmp_desc, log_sum_exp, Real};
use crate::tokenizer::{TokenId, TokenSequence};
use crate::trie::{DisjunctiveTrie, NodeId};

/// A completed search result: a trie entry (terminator stripped) and its
/// cumulative log-probability under the masked, renormalized scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<F> {
    pub tokens: TokenSequence,
    pub score: F,
}

#[derive(Debug, Clone)]
struct Beam<F> {
    tokens: TokenSequence,
    cum_logprob: F,
    cursor: NodeId,
}

/// Log-probabilities of the `feasible` tokens, renormalized to sum to one
/// over that set. When the scorer assigns zero mass to every feasible token
/// the distribution falls back to uniform over them.
pub fn masked_log_probs<F: Real, S: Scorer<F> + ?Sized>(
    scorer: &S,
    prompt: &[TokenId],
    generated: &[TokenId],
    feasible: &[TokenId],
) -> Vec<(TokenId, F)> {
    if feasible.is_empty() {
        return Vec::new();
    }
    let logp = scorer.score(prompt, generated);
    let pick = |t: TokenId| logp.get(t.index()).copied().unwrap_or(F::neg_infinity());
    let norm = log_sum_exp(feasible.iter().map(|&t| pick(t)));
    if norm == F::neg_infinity() || norm.is_nan() {
        let uniform = -F::from_count(feasible.len()).ln();
        return feasible.iter().map(|&t| (t, uniform)).collect();
    }
    feasible
        .iter()
        .map(|&t| (t, (pick(t) - norm).min(F::zero())))
        .collect()
}

fn rank<F: Real>(a: (F, &[TokenId]), b: (F, &[TokenId])) -> Ordering {
    cmp_desc(a.0, b.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search restricted to paths of `trie`.
///
/// Each round expands every live beam by its feasible children, keeps the
/// `k` best candidates overall, and retires candidates that end in the
/// terminator as finished hypotheses. Scores are plain sums of step
/// log-probabilities; ties go to the lexicographically smaller token
/// sequence. Returns at most `k` hypotheses, best first.
pub fn constrained_beam_search<F: Real, S: Scorer<F> + ?Sized>(
    scorer: &S,
    prompt: &[TokenId],
    trie: &DisjunctiveTrie,
    k: usize,
) -> Vec<Hypothesis<F>> {
    assert!(k >= 1, "beam width must be at least 1");
    let terminator = trie.terminator();
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        cum_logprob: F::zero(),
        cursor: DisjunctiveTrie::ROOT,
    }];
    let mut finished: Vec<Hypothesis<F>> = Vec::new();

    while !beams.is_empty() {
        let mut candidates: Vec<Beam<F>> = Vec::new();
        for beam in &beams {
            let feasible = trie.children(beam.cursor);
            for (id, lp) in masked_log_probs(scorer, prompt, &beam.tokens, &feasible) {
                let mut tokens = Vec::with_capacity(beam.tokens.len() + 1);
                tokens.extend_from_slice(&beam.tokens);
                tokens.push(id);
                candidates.push(Beam {
                    tokens,
                    cum_logprob: beam.cum_logprob + lp,
                    cursor: trie.child(beam.cursor, id).expect("feasible child"),
                });
            }
        }
        candidates.sort_by(|a, b| rank((a.cum_logprob, &a.tokens), (b.cum_logprob, &b.tokens)));
        candidates.truncate(k);

        beams = Vec::with_capacity(candidates.len());
        for mut cand in candidates {
            if cand.tokens.last() == Some(&terminator) {
                cand.tokens.pop();
                finished.push(Hypothesis {
                    tokens: cand.tokens,
                    score: cand.cum_logprob,
                });
            } else {
                beams.push(cand);
            }
        }
    }

    finished.sort_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens)));
    finished.truncate(k);
    finished
}
