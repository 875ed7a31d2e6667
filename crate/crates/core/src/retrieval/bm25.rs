use std::collections::{BTreeSet, HashMap};

use crate::registry::{doc_text, ToolId, ToolRegistry};
use crate::scalar::{cmp_desc, Real};

/// Lower-cased alphanumeric runs.
pub fn bm25_tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Okapi BM25 over each tool's [`doc_text`].
///
/// `idf(t) = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))`, and each query token
/// (repeats included) adds `idf · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))`.
#[derive(Debug, Clone)]
pub struct Bm25Index<F> {
    k1: F,
    b: F,
    doc_len: Vec<usize>,
    avgdl: F,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl<F: Real> Bm25Index<F> {
    pub fn new(registry: &ToolRegistry) -> Self {
        Self::with_params(registry, F::lit(1.2), F::lit(0.75))
    }

    pub fn with_params(registry: &ToolRegistry, k1: F, b: F) -> Self {
        Self::from_texts(registry.apis().iter().map(doc_text), k1, b)
    }

    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>, k1: F, b: F) -> Self {
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (doc, text) in texts.into_iter().enumerate() {
            let tokens = bm25_tokenize(text.as_ref());
            doc_len.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((doc as u32, n));
            }
        }
        let total: usize = doc_len.iter().sum();
        let avgdl = if doc_len.is_empty() {
            F::one()
        } else {
            F::from_count(total) / F::from_count(doc_len.len())
        };
        Bm25Index {
            k1,
            b,
            doc_len,
            avgdl,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn idf(&self, term: &str) -> F {
        let n = self.postings.get(term).map_or(0, Vec::len);
        let big_n = F::from_count(self.len());
        let n = F::from_count(n);
        let half = F::lit(0.5);
        (F::one() + (big_n - n + half) / (n + half)).ln()
    }

    /// Scores every document sharing a term with `query`, optionally
    /// restricted to `pool`, best first with ties broken by ordinal.
    pub fn search(&self, query: &str, k: usize, pool: Option<&BTreeSet<ToolId>>) -> Vec<(ToolId, F)> {
        let mut scores: HashMap<u32, F> = HashMap::new();
        for term in bm25_tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                if pool.is_some_and(|p| !p.contains(&ToolId(doc))) {
                    continue;
                }
                let tf = F::lit(tf as f64);
                let dl = F::from_count(self.doc_len[doc as usize]);
                let norm = self.k1 * (F::one() - self.b + self.b * dl / self.avgdl);
                let s = idf * tf * (self.k1 + F::one()) / (tf + norm);
                let slot = scores.entry(doc).or_insert(F::zero());
                *slot = *slot + s;
            }
        }
        let mut ranked: Vec<(ToolId, F)> = scores.into_iter().map(|(d, s)| (ToolId(d), s)).collect();
        ranked.sort_by(|a, b| cmp_desc(a.1, b.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

/// BM25 over the registry's documentation with default `k1 = 1.2`,
/// `b = 0.75`.
pub fn bm25_retrieve<F: Real>(index: &Bm25Index<F>, query: &str, k: usize) -> Vec<(ToolId, F)> {
    index.search(query, k, None)
}
