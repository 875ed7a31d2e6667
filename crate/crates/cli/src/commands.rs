use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tooltok::agent::{
    action_trie, finish_token, hallucination_rate, read_log, run_session, write_log, AgentConfig,
    Environment, FixtureEnv, HttpEnv, RetrievalAgentModel, SessionQuery, SessionTrajectory, Toolkit,
    DEFAULT_MAX_IN_FLIGHT,
};
use tooltok::datasets::{
    build_memorization, build_retrieval, corpus_stats, read_annotations, read_trajectories, Converter,
    QueryAnnotation, TrainingPair,
};
use tooltok::decoder::train_count_scorer;
use tooltok::indexer::{add_tool_tokens, trigram_features, FEATURE_DIM, FINISH_SURFACE};
use tooltok::retrieval::{evaluate, pool_trie, retrieve, DomainPools, Retriever, Setting};
use tooltok::{
    build_index, doc_text, load_registry, Bm25Index, CountScorer, IndexScheme, ToolIndex, ToolRegistry,
    Vocabulary,
};

use crate::config::RunConfig;
use crate::Failure;

pub struct Context {
    cfg: RunConfig,
    scheme: IndexScheme,
    setting: Setting,
    run_dir: PathBuf,
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

impl Context {
    pub fn new(cfg: RunConfig, out_root: &Path) -> Result<Self, Failure> {
        let scheme = cfg.index_scheme().map_err(Failure::Usage)?;
        let setting = cfg.retrieval_setting().map_err(Failure::Usage)?;
        let run_dir = out_root.join(cfg.hash());
        fs::create_dir_all(&run_dir).with_context(|| format!("cannot create {}", run_dir.display()))?;
        let mut config_json = serde_json::to_string_pretty(&cfg)?;
        config_json.push('\n');
        write_text(&run_dir.join("config.json"), &config_json)?;
        log::info!("run directory {}", run_dir.display());
        Ok(Context {
            cfg,
            scheme,
            setting,
            run_dir,
        })
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn required<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
        path.as_deref()
            .ok_or_else(|| Failure::Usage(format!("no {key} configured; pass --{key} or set `{key}` in the config")))
    }

    fn registry(&self) -> Result<ToolRegistry, Failure> {
        let path = self.required(&self.cfg.registry, "registry")?;
        let registry = load_registry(path)?;
        if registry.duplicates() > 0 {
            log::warn!("dropped {} duplicate APIs", registry.duplicates());
        }
        Ok(registry)
    }

    /// Vocabulary with documentation pieces, tool tokens (atomic scheme
    /// only) and the Finish token, plus the index under the configured
    /// scheme.
    fn vocab_and_index(&self, registry: &ToolRegistry) -> Result<(Vocabulary, ToolIndex), Failure> {
        let docs: Vec<String> = registry.apis().iter().map(doc_text).collect();
        let mut vocab = Vocabulary::from_corpus(&docs, self.cfg.vocab_pieces);
        if self.scheme == IndexScheme::Atomic {
            add_tool_tokens(&mut vocab, registry, true)?;
        } else {
            vocab.add_atomic_tokens(&[FINISH_SURFACE.to_string()])?;
        }
        let features = match self.scheme {
            IndexScheme::Hierarchical { .. } => Some(trigram_features::<f64>(registry, FEATURE_DIM)),
            _ => None,
        };
        let index = build_index(registry, self.scheme, &vocab, features.as_deref())?;
        Ok((vocab, index))
    }

    fn annotations(&self, registry: &ToolRegistry) -> Result<Option<Vec<QueryAnnotation>>, Failure> {
        match &self.cfg.annotations {
            Some(path) => Ok(Some(read_annotations(open(path)?, registry)?)),
            None => Ok(None),
        }
    }

    fn training_pairs(
        &self,
        registry: &ToolRegistry,
        index: &ToolIndex,
    ) -> Result<Vec<TrainingPair>, Failure> {
        let mut pairs = build_memorization(registry, index);
        if let Some(anns) = self.annotations(registry)? {
            pairs.extend(build_retrieval(&anns, index)?);
        }
        Ok(pairs)
    }

    /// The trained scorer from this run directory, or a freshly trained one.
    fn scorer(&self, registry: &ToolRegistry, vocab: &Vocabulary, index: &ToolIndex) -> Result<CountScorer, Failure> {
        let path = self.artifact("scorer.json");
        if path.exists() {
            log::info!("loading {}", path.display());
            return Ok(CountScorer::read_json(open(&path)?)?);
        }
        log::info!("no scorer.json in the run directory; training one");
        let pairs = self.training_pairs(registry, index)?;
        let tokenized: Vec<_> = pairs.iter().map(|p| p.tokenize(vocab)).collect();
        Ok(train_count_scorer(&tokenized, self.cfg.alpha, vocab)?)
    }

    pub fn ingest(&self) -> Result<(), Failure> {
        let registry = self.registry()?;
        write_jsonl(&self.artifact("registry.jsonl"), registry.to_tool_records())?;
        let tools: std::collections::BTreeSet<&str> =
            registry.apis().iter().map(|a| a.tool_name.as_str()).collect();
        println!(
            "{} APIs across {} tools ({} duplicates dropped)",
            registry.len(),
            tools.len(),
            registry.duplicates()
        );
        Ok(())
    }

    pub fn index(&self) -> Result<(), Failure> {
        let registry = self.registry()?;
        let (vocab, index) = self.vocab_and_index(&registry)?;
        let mut w = BufWriter::new(File::create(self.artifact("vocab.tsv"))?);
        vocab.write_to(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(self.artifact("index.jsonl"))?);
        index.write_jsonl(&mut w)?;
        w.flush()?;
        println!(
            "{} tools indexed with {}; vocabulary size {}",
            index.len(),
            self.scheme,
            vocab.len()
        );
        Ok(())
    }

    pub fn stats(&self) -> Result<(), Failure> {
        let registry = self.registry()?;
        let (_, index) = self.vocab_and_index(&registry)?;
        let stats = index.token_length_stats();
        println!("scheme {}", self.scheme);
        println!("length  tools");
        for (len, n) in &stats.histogram {
            println!("{len:>6}  {n}");
        }
        println!(
            "min {}  median {}  max {}  ({} tools)",
            stats.min, stats.median, stats.max, stats.count
        );
        let mut text = serde_json::to_string_pretty(&json!({
            "scheme": self.scheme.to_string(),
            "stats": stats,
        }))?;
        text.push('\n');
        write_text(&self.artifact("stats.json"), &text)?;
        Ok(())
    }

    pub fn build_data(&self) -> Result<(), Failure> {
        let registry = self.registry()?;
        let (_, index) = self.vocab_and_index(&registry)?;
        let memorization = build_memorization(&registry, &index);
        let retrieval = match self.annotations(&registry)? {
            Some(anns) => build_retrieval(&anns, &index)?,
            None => Vec::new(),
        };
        let mut converter = Converter::new(&registry, &index);
        converter.with_gt_tools = self.cfg.gt_tools;
        let report = match &self.cfg.trajectories {
            Some(path) => converter.convert_batch(&read_trajectories(open(path)?)?),
            None => Default::default(),
        };
        for r in &report.rejects {
            log::warn!("trajectory {} rejected: {}", r.record, r.error);
        }
        write_jsonl(&self.artifact("memorization.jsonl"), &memorization)?;
        write_jsonl(&self.artifact("retrieval.jsonl"), &retrieval)?;
        write_jsonl(&self.artifact("agent.jsonl"), report.samples.iter().map(|(_, s)| s))?;
        write_jsonl(&self.artifact("rejects.jsonl"), &report.rejects)?;

        let all: Vec<TrainingPair> = memorization.into_iter().chain(retrieval).collect();
        let stats = corpus_stats(&all, report.samples.len());
        println!("{stats}");
        if !report.rejects.is_empty() {
            println!("{} trajectories rejected", report.rejects.len());
        }
        write_text(&self.artifact("corpus_stats.txt"), &format!("{stats}\n"))?;
        Ok(())
    }

    pub fn train_scorer(&self) -> Result<(), Failure> {
        let registry = self.registry()?;
        let (vocab, index) = self.vocab_and_index(&registry)?;
        let pairs = self.training_pairs(&registry, &index)?;
        let tokenized: Vec<_> = pairs.iter().map(|p| p.tokenize(&vocab)).collect();
        let scorer: CountScorer = train_count_scorer(&tokenized, self.cfg.alpha, &vocab)?;
        let mut w = BufWriter::new(File::create(self.artifact("scorer.json"))?);
        scorer.write_json(&mut w)?;
        w.flush()?;
        println!(
            "trained on {} pairs; {} contexts",
            pairs.len(),
            scorer.context_count()
        );
        Ok(())
    }

    pub fn retrieve(&self, query: &str, k: usize, bm25: bool) -> Result<(), Failure> {
        if k == 0 {
            return Err(Failure::Usage("k must be positive".into()));
        }
        let registry = self.registry()?;
        let hits: Vec<(tooltok::ToolId, f64)> = if bm25 {
            Bm25Index::new(&registry).search(query, k, None)
        } else {
            let (vocab, index) = self.vocab_and_index(&registry)?;
            let scorer = self.scorer(&registry, &vocab, &index)?;
            let trie = pool_trie(&index, &vocab, None)?;
            retrieve(&scorer, &trie, &index, &vocab, query, k)
        };
        for (rank, (tool, score)) in hits.iter().enumerate() {
            let api = registry.api(*tool);
            println!(
                "{:>3}  {:>12.6}  {} / {}",
                rank + 1,
                score,
                api.tool_name,
                api.api_name
            );
        }
        Ok(())
    }

    pub fn eval_retrieval(&self, bm25: bool) -> Result<(), Failure> {
        let registry = self.registry()?;
        let anns = self
            .annotations(&registry)?
            .ok_or_else(|| Failure::Usage("eval-retrieval needs --annotations".into()))?;
        let pools = DomainPools::from_annotations(&anns);
        let report = if bm25 {
            let index = Bm25Index::new(&registry);
            evaluate(&Retriever::Bm25(&index), &anns, self.setting, &self.cfg.cutoffs, &pools)?
        } else {
            let (vocab, index) = self.vocab_and_index(&registry)?;
            let scorer = self.scorer(&registry, &vocab, &index)?;
            let retriever = Retriever::Generative {
                scorer: &scorer,
                vocab: &vocab,
                index: &index,
            };
            evaluate(&retriever, &anns, self.setting, &self.cfg.cutoffs, &pools)?
        };
        println!("{report}");
        let setting = match self.setting {
            Setting::InDomain => "in_domain",
            Setting::MultiDomain => "multi_domain",
        };
        let name = format!("ndcg_{}_{setting}.csv", report.method);
        write_text(&self.artifact(&name), &report.to_csv())?;
        Ok(())
    }

    fn environment<'r>(&self, registry: &'r ToolRegistry) -> Result<Box<dyn Environment + 'r>, Failure> {
        if let Some(path) = &self.cfg.fixtures {
            return Ok(Box::new(FixtureEnv::read_jsonl(open(path)?, registry)?));
        }
        if let Some(path) = &self.cfg.endpoints {
            let mut env = HttpEnv::new(registry, DEFAULT_MAX_IN_FLIGHT);
            env.read_endpoints(open(path)?)?;
            return Ok(Box::new(env));
        }
        log::warn!("no fixtures or endpoints configured; every tool call will fail");
        Ok(Box::new(FixtureEnv::new()))
    }

    fn session_queries(
        &self,
        registry: &ToolRegistry,
        query: Option<String>,
        limit: Option<usize>,
    ) -> Result<Vec<SessionQuery>, Failure> {
        let mut queries = match query {
            Some(q) => vec![SessionQuery {
                id: "q0".into(),
                query: q,
                gt_tools: None,
            }],
            None => self
                .annotations(registry)?
                .ok_or_else(|| Failure::Usage("agent sessions need --query or --annotations".into()))?
                .into_iter()
                .enumerate()
                .map(|(i, a)| SessionQuery {
                    id: format!("q{i}"),
                    query: a.query,
                    gt_tools: self.cfg.gt_tools.then(|| a.relevant.into_iter().collect()),
                })
                .collect(),
        };
        if let Some(n) = limit {
            queries.truncate(n);
        }
        Ok(queries)
    }

    /// Runs one session per query in parallel; output order follows input.
    fn run_sessions(
        &self,
        registry: &ToolRegistry,
        queries: &[SessionQuery],
        agent: &AgentConfig,
    ) -> Result<Vec<SessionTrajectory>, Failure> {
        let (vocab, index) = self.vocab_and_index(registry)?;
        let scorer = self.scorer(registry, &vocab, &index)?;
        let trie = action_trie(&index, &vocab, None)?;
        let finish = finish_token(&vocab)?;
        let env = self.environment(registry)?;
        let kit = Toolkit {
            vocab: &vocab,
            registry,
            index: &index,
            trie: &trie,
            env: env.as_ref(),
        };
        let seed = self.cfg.seed;
        let trajectories = queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let mut model = RetrievalAgentModel::new(&scorer, &vocab, finish, 1);
                run_session::<f64, _>(&mut model, kit, q, agent, seed.wrapping_add(i as u64))
            })
            .collect::<tooltok::Result<Vec<_>>>()?;
        Ok(trajectories)
    }

    pub fn agent_run(&self, query: Option<String>, limit: Option<usize>, unconstrained: bool) -> Result<(), Failure> {
        let registry = self.registry()?;
        let queries = self.session_queries(&registry, query, limit)?;
        let agent = AgentConfig {
            constrain_actions: self.cfg.agent.constrain_actions && !unconstrained,
            restrict_to_gt: self.cfg.agent.restrict_to_gt && self.cfg.gt_tools,
            ..self.cfg.agent.clone()
        };
        let trajectories = self.run_sessions(&registry, &queries, &agent)?;
        let log_name = if agent.constrain_actions {
            "trajectories.jsonl"
        } else {
            "trajectories_unconstrained.jsonl"
        };
        let mut w = BufWriter::new(File::create(self.artifact(log_name))?);
        write_log(&trajectories, &mut w)?;
        w.flush()?;

        let mut terminals: BTreeMap<String, usize> = BTreeMap::new();
        for t in &trajectories {
            let name = serde_json::to_value(t.terminal)?.as_str().unwrap_or_default().to_string();
            *terminals.entry(name).or_insert(0) += 1;
        }
        let summary = json!({
            "sessions": trajectories.len(),
            "constrained": agent.constrain_actions,
            "actions": trajectories.iter().map(SessionTrajectory::action_count).sum::<usize>(),
            "retries": trajectories.iter().map(SessionTrajectory::retry_count).sum::<usize>(),
            "terminals": terminals,
            "hallucination_rate": hallucination_rate(&trajectories),
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
        write_text(&self.artifact("agent_summary.json"), &format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
        Ok(())
    }

    pub fn eval_hallucination(&self, log: Option<PathBuf>, limit: Option<usize>) -> Result<(), Failure> {
        let fmt_rate = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.4}"));
        let result = match log {
            Some(path) => {
                let trajectories = read_log(open(&path)?)?;
                let rate = hallucination_rate(&trajectories);
                println!("{}: hallucination rate {}", path.display(), fmt_rate(rate));
                json!({
                    "log": path.display().to_string(),
                    "sessions": trajectories.len(),
                    "hallucination_rate": rate,
                })
            }
            None => {
                let registry = self.registry()?;
                let queries = self.session_queries(&registry, None, limit)?;
                let mut rows = serde_json::Map::new();
                for constrained in [true, false] {
                    let agent = AgentConfig {
                        constrain_actions: constrained,
                        ..self.cfg.agent.clone()
                    };
                    let trajectories = self.run_sessions(&registry, &queries, &agent)?;
                    let rate = hallucination_rate(&trajectories);
                    let label = if constrained { "constrained" } else { "unconstrained" };
                    println!("{label:<14} hallucination rate {}", fmt_rate(rate));
                    let mut w = BufWriter::new(File::create(self.artifact(&format!("trajectories_{label}.jsonl")))?);
                    write_log(&trajectories, &mut w)?;
                    w.flush()?;
                    rows.insert(
                        label.into(),
                        json!({
                            "sessions": trajectories.len(),
                            "actions": trajectories.iter().map(SessionTrajectory::action_count).sum::<usize>(),
                            "hallucination_rate": rate,
                        }),
                    );
                }
                serde_json::Value::Object(rows)
            }
        };
        write_text(&self.artifact("hallucination.json"), &format!("{}\n", serde_json::to_string_pretty(&result)?))?;
        Ok(())
    }
}
