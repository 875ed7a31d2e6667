//! Tool retrieval and its evaluation.
//!
//! Generative retrieval decodes tool tokens for a query under the trie
//! constraint; BM25 is the lexical baseline. Both are scored with NDCG at a
//! set of cutoffs, per query domain, with the candidate pool either
//! restricted to the query's own domain or spanning all domains.

mod bm25;
mod ndcg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bm25::{bm25_retrieve, bm25_tokenize, Bm25Index};
pub use ndcg::ndcg_at;

use crate::datasets::{Domain, QueryAnnotation};
use crate::decoder::{constrained_beam_search, Scorer};
use crate::error::{Error, Result};
use crate::indexer::ToolIndex;
use crate::registry::ToolId;
use crate::scalar::Real;
use crate::tokenizer::Vocabulary;
use crate::trie::DisjunctiveTrie;

pub const DEFAULT_CUTOFFS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    InDomain,
    MultiDomain,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::InDomain => "in-domain",
            Setting::MultiDomain => "multi-domain",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "in-domain" | "in" => Ok(Setting::InDomain),
            "multi-domain" | "multi" => Ok(Setting::MultiDomain),
            _ => Err(Error::Config(format!("unknown setting {s:?}"))),
        }
    }
}

/// Decodes up to `k` tools for `query` under `trie`.
pub fn retrieve<F: Real, S: Scorer<F> + ?Sized>(
    scorer: &S,
    trie: &DisjunctiveTrie,
    index: &ToolIndex,
    vocab: &Vocabulary,
    query: &str,
    k: usize,
) -> Vec<(ToolId, F)> {
    let prompt = vocab.encode(query);
    constrained_beam_search(scorer, &prompt, trie, k)
        .into_iter()
        .filter_map(|h| index.decode_tool(&h.tokens).map(|t| (t, h.score)))
        .collect()
}

/// Trie over the sequences of `pool` (all indexed tools when `None`).
pub fn pool_trie(
    index: &ToolIndex,
    vocab: &Vocabulary,
    pool: Option<&BTreeSet<ToolId>>,
) -> Result<DisjunctiveTrie> {
    match pool {
        Some(pool) => DisjunctiveTrie::build(pool.iter().map(|&t| index.forward(t)), vocab.eos()),
        None => DisjunctiveTrie::build(index.sequences(), vocab.eos()),
    }
}

/// Candidate tools per query domain.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DomainPools {
    pub pools: BTreeMap<Domain, BTreeSet<ToolId>>,
}

impl DomainPools {
    /// Each domain's pool is the set of tools relevant to any of its queries.
    pub fn from_annotations(annotations: &[QueryAnnotation]) -> Self {
        let mut pools: BTreeMap<Domain, BTreeSet<ToolId>> = BTreeMap::new();
        for a in annotations {
            pools.entry(a.domain).or_default().extend(a.relevant.iter().copied());
        }
        DomainPools { pools }
    }

    pub fn union(&self) -> BTreeSet<ToolId> {
        self.pools.values().flatten().copied().collect()
    }

    pub fn pool(&self, setting: Setting, domain: Domain) -> BTreeSet<ToolId> {
        match setting {
            Setting::InDomain => self.pools.get(&domain).cloned().unwrap_or_default(),
            Setting::MultiDomain => self.union(),
        }
    }
}

/// A retrieval method under evaluation.
pub enum Retriever<'a, F: Real> {
    Generative {
        scorer: &'a dyn Scorer<F>,
        vocab: &'a Vocabulary,
        index: &'a ToolIndex,
    },
    Bm25(&'a Bm25Index<F>),
}

impl<F: Real> Retriever<'_, F> {
    pub fn name(&self) -> &'static str {
        match self {
            Retriever::Generative { .. } => "generative",
            Retriever::Bm25(_) => "bm25",
        }
    }
}

/// Ranked results for every annotated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub setting: Setting,
    pub cutoffs: Vec<usize>,
    /// `None` for queries excluded from the evaluation.
    pub rankings: Vec<Option<Vec<(ToolId, f64)>>>,
}

pub fn run_retrieval<F: Real>(
    retriever: &Retriever<'_, F>,
    annotations: &[QueryAnnotation],
    setting: Setting,
    cutoffs: &[usize],
    pools: &DomainPools,
) -> Result<RetrievalRun> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be positive and non-empty".into()));
    }
    let depth = *cutoffs.iter().max().unwrap();
    let pool_of: BTreeMap<Domain, BTreeSet<ToolId>> = Domain::ALL
        .iter()
        .map(|&d| (d, pools.pool(setting, d)))
        .collect();
    let tries: BTreeMap<Domain, Option<DisjunctiveTrie>> = match retriever {
        Retriever::Generative { vocab, index, .. } => pool_of
            .iter()
            .map(|(&d, pool)| {
                let trie = if pool.is_empty() {
                    None
                } else {
                    Some(pool_trie(index, vocab, Some(pool))?)
                };
                Ok((d, trie))
            })
            .collect::<Result<_>>()?,
        Retriever::Bm25(_) => BTreeMap::new(),
    };

    let rankings = annotations
        .par_iter()
        .map(|a| {
            let pool = &pool_of[&a.domain];
            if setting == Setting::InDomain && !a.relevant.is_subset(pool) {
                return None;
            }
            let ranked: Vec<(ToolId, F)> = match retriever {
                Retriever::Generative { scorer, vocab, index } => match &tries[&a.domain] {
                    Some(trie) => retrieve(*scorer, trie, index, vocab, &a.query, depth),
                    None => Vec::new(),
                },
                Retriever::Bm25(bm25) => bm25.search(&a.query, depth, Some(pool)),
            };
            Some(ranked.into_iter().map(|(t, s)| (t, s.as_f64())).collect())
        })
        .collect();
    Ok(RetrievalRun {
        setting,
        cutoffs: cutoffs.to_vec(),
        rankings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: Domain,
    pub queries: usize,
    /// Mean NDCG per cutoff, aligned with [`NdcgReport::cutoffs`].
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport {
    pub method: String,
    pub setting: Setting,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<DomainRow>,
    /// Queries dropped because a relevant tool lies outside the pool.
    pub excluded: usize,
    /// Queries without relevant tools; they score zero and are counted.
    pub empty_relevant: usize,
}

/// Mean NDCG per domain over the evaluated queries of `run`.
pub fn score_run(method: &str, run: &RetrievalRun, annotations: &[QueryAnnotation]) -> NdcgReport {
    let mut sums: BTreeMap<Domain, (usize, Vec<f64>)> = BTreeMap::new();
    let mut excluded = 0;
    let mut empty_relevant = 0;
    for (a, ranking) in annotations.iter().zip(&run.rankings) {
        let Some(ranking) = ranking else {
            excluded += 1;
            continue;
        };
        if a.relevant.is_empty() {
            empty_relevant += 1;
        }
        let ids: Vec<ToolId> = ranking.iter().map(|r| r.0).collect();
        let entry = sums
            .entry(a.domain)
            .or_insert_with(|| (0, vec![0.0; run.cutoffs.len()]));
        entry.0 += 1;
        for (slot, &c) in entry.1.iter_mut().zip(&run.cutoffs) {
            *slot += ndcg_at::<f64, _>(&ids, &a.relevant, c);
        }
    }
    let rows = sums
        .into_iter()
        .map(|(domain, (n, totals))| DomainRow {
            domain,
            queries: n,
            ndcg: totals.into_iter().map(|t| t / n as f64).collect(),
        })
        .collect();
    NdcgReport {
        method: method.to_string(),
        setting: run.setting,
        cutoffs: run.cutoffs.clone(),
        rows,
        excluded,
        empty_relevant,
    }
}

/// Runs `retriever` over `annotations` and scores the result.
pub fn evaluate<F: Real>(
    retriever: &Retriever<'_, F>,
    annotations: &[QueryAnnotation],
    setting: Setting,
    cutoffs: &[usize],
    pools: &DomainPools,
) -> Result<NdcgReport> {
    let run = run_retrieval(retriever, annotations, setting, cutoffs, pools)?;
    Ok(score_run(retriever.name(), &run, annotations))
}

impl NdcgReport {
    pub fn cell(&self, domain: Domain, cutoff: usize) -> Option<f64> {
        let col = self.cutoffs.iter().position(|&c| c == cutoff)?;
        self.rows
            .iter()
            .find(|r| r.domain == domain)
            .map(|r| r.ndcg[col])
    }

    /// Query-weighted mean over all domains at `cutoff`.
    pub fn overall(&self, cutoff: usize) -> Option<f64> {
        let col = self.cutoffs.iter().position(|&c| c == cutoff)?;
        let n: usize = self.rows.iter().map(|r| r.queries).sum();
        if n == 0 {
            return None;
        }
        Some(self.rows.iter().map(|r| r.ndcg[col] * r.queries as f64).sum::<f64>() / n as f64)
    }

    /// One header and one data row: `method,setting,I1@1,I1@3,...`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["method".to_string(), "setting".to_string()];
        let mut row = vec![self.method.clone(), self.setting.to_string()];
        for r in &self.rows {
            for (c, v) in self.cutoffs.iter().zip(&r.ndcg) {
                header.push(format!("{}@{c}", r.domain));
                row.push(format!("{v:.6}"));
            }
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

impl fmt::Display for NdcgReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({})", self.method, self.setting)?;
        write!(f, "{:<8}{:>8}", "domain", "queries")?;
        for c in &self.cutoffs {
            write!(f, "{:>10}", format!("NDCG@{c}"))?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "{:<8}{:>8}", r.domain.to_string(), r.queries)?;
            for v in &r.ndcg {
                write!(f, "{:>10.4}", v)?;
            }
            writeln!(f)?;
        }
        write!(f, "excluded: {}  empty relevant: {}", self.excluded, self.empty_relevant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{train_count_scorer, UniformScorer};
    use crate::indexer::{add_tool_tokens, build_index, IndexScheme};
    use crate::registry::{ApiDocument, ToolRegistry};

    fn setup(n: usize) -> (ToolRegistry, Vocabulary, ToolIndex) {
        let reg = ToolRegistry::from_apis((0..n).map(|i| ApiDocument {
            tool_name: format!("Tool{i}"),
            api_name: format!("call{i}"),
            description: format!("does thing number {i}"),
            method: "GET".into(),
            required_parameters: vec![],
            optional_parameters: vec![],
        }))
        .unwrap();
        let mut vocab = Vocabulary::bytes_only();
        add_tool_tokens(&mut vocab, &reg, false).unwrap();
        let idx = build_index::<f64>(&reg, IndexScheme::Atomic, &vocab, None).unwrap();
        (reg, vocab, idx)
    }

    #[test]
    fn memorized_pair_is_retrieved() {
        let (_, vocab, idx) = setup(10);
        let q = vocab.encode("find number seven");
        let scorer =
            train_count_scorer::<f64>(&[(q, idx.forward(ToolId(7)).to_vec())], 0.1, &vocab).unwrap();
        let trie = pool_trie(&idx, &vocab, None).unwrap();
        let hits = retrieve(&scorer, &trie, &idx, &vocab, "find number seven", 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, ToolId(7));
    }

    #[test]
    fn uniform_scorer_is_deterministic() {
        let (_, vocab, idx) = setup(10);
        let trie = pool_trie(&idx, &vocab, None).unwrap();
        let u = UniformScorer { vocab_size: vocab.len() };
        let a = retrieve::<f64, _>(&u, &trie, &idx, &vocab, "anything", 4);
        let b = retrieve::<f64, _>(&u, &trie, &idx, &vocab, "anything", 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let ids: BTreeSet<_> = a.iter().map(|h| h.0).collect();
        assert_eq!(ids.len(), 4);
    }

    fn ann(q: &str, rel: &[u32], d: Domain) -> QueryAnnotation {
        QueryAnnotation {
            query: q.into(),
            relevant: rel.iter().map(|&r| ToolId(r)).collect(),
            domain: d,
        }
    }

    #[test]
    fn perfect_retriever_scores_one() {
        let (reg, vocab, idx) = setup(6);
        let anns = vec![ann("does thing number 3", &[3], Domain::I1)];
        let pairs: Vec<_> = anns
            .iter()
            .map(|a| (vocab.encode(&a.query), idx.forward(ToolId(3)).to_vec()))
            .collect();
        let scorer = train_count_scorer::<f64>(&pairs, 0.1, &vocab).unwrap();
        let pools = DomainPools::from_annotations(&anns);
        for setting in [Setting::InDomain, Setting::MultiDomain] {
            let retriever = Retriever::Generative {
                scorer: &scorer,
                vocab: &vocab,
                index: &idx,
            };
            let r = evaluate(&retriever, &anns, setting, &DEFAULT_CUTOFFS, &pools).unwrap();
            assert_eq!(r.rows.len(), 1);
            assert!(r.rows[0].ndcg.iter().all(|&v| v == 1.0));
        }
        let bm25 = Bm25Index::<f64>::new(&reg);
        let r = evaluate(&Retriever::Bm25(&bm25), &anns, Setting::MultiDomain, &[1], &pools).unwrap();
        assert_eq!(r.cell(Domain::I1, 1), Some(1.0));
    }

    #[test]
    fn out_of_pool_annotations_are_excluded() {
        let (_, vocab, idx) = setup(6);
        let anns = vec![ann("a", &[1], Domain::I1), ann("b", &[2], Domain::I2)];
        let mut pools = DomainPools::from_annotations(&anns);
        pools.pools.get_mut(&Domain::I2).unwrap().clear();
        pools.pools.get_mut(&Domain::I2).unwrap().insert(ToolId(4));
        let scorer = UniformScorer { vocab_size: vocab.len() };
        let retriever = Retriever::<f64>::Generative {
            scorer: &scorer,
            vocab: &vocab,
            index: &idx,
        };
        let r = evaluate(&retriever, &anns, Setting::InDomain, &[1], &pools).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.rows.len(), 1);
        let r = evaluate(&retriever, &anns, Setting::MultiDomain, &[1], &pools).unwrap();
        assert_eq!(r.excluded, 0);
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn report_rendering_is_stable() {
        let (reg, _, _) = setup(6);
        let anns = vec![ann("thing number 1", &[1], Domain::I1), ann("thing 2", &[2, 5], Domain::I3)];
        let pools = DomainPools::from_annotations(&anns);
        let bm25 = Bm25Index::<f64>::new(&reg);
        let a = evaluate(&Retriever::Bm25(&bm25), &anns, Setting::InDomain, &DEFAULT_CUTOFFS, &pools).unwrap();
        let b = evaluate(&Retriever::Bm25(&bm25), &anns, Setting::InDomain, &DEFAULT_CUTOFFS, &pools).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().starts_with("method,setting,I1@1,I1@3,I1@5,I3@1"));
        assert!(a.to_string().contains("NDCG@5"));
        assert!(evaluate(&Retriever::Bm25(&bm25), &anns, Setting::InDomain, &[], &pools).is_err());
    }

    #[test]
    fn setting_parse() {
        assert_eq!("in-domain".parse::<Setting>().unwrap(), Setting::InDomain);
        assert_eq!("multi_domain".parse::<Setting>().unwrap(), Setting::MultiDomain);
        assert!("sideways".parse::<Setting>().is_err());
    }
}
