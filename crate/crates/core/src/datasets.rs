//! Training corpora: tool memorization pairs, retrieval pairs, and
//! three-turn agent samples converted from raw ReAct trajectories.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use aho_corasick::{AhoCorasick, MatchKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexer::{atomic_surface, semantic_name, semantic_normalize, ToolIndex};
use crate::registry::{doc_text, ToolId, ToolRegistry};
use crate::tokenizer::{TokenSequence, Vocabulary};

/// Version of the fixed user-turn templates used by [`Converter`].
pub const TEMPLATE_VERSION: &str = "three-turn-v1";
pub const ACTION_HINT: &str = "Based on your thought, generate the tool to call next.";
pub const GT_PREFIX: &str = "I am using the following tools:";

/// Markers that open the candidate tool list inside a system prompt.
pub const TOOL_LIST_MARKERS: &[&str] = &[
    "Specifically, you have access to the following APIs:",
    "You have access to the following tools:",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(alias = "i1", alias = "G1")]
    I1,
    #[serde(alias = "i2", alias = "G2")]
    I2,
    #[serde(alias = "i3", alias = "G3")]
    I3,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::I1, Domain::I2, Domain::I3];
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::I1 => "I1",
            Domain::I2 => "I2",
            Domain::I3 => "I3",
        })
    }
}

/// How external files name a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolRef {
    /// `["tool_name", "api_name"]`
    Pair(String, String),
    Named { tool_name: String, api_name: String },
    /// An atomic surface, `{api}_for_{tool}`, or a bare API name.
    Name(String),
}

impl fmt::Display for ToolRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolRef::Pair(t, a) | ToolRef::Named { tool_name: t, api_name: a } => {
                write!(f, "{t}/{a}")
            }
            ToolRef::Name(n) => f.write_str(n),
        }
    }
}

/// Resolves action and annotation names to registry entries.
///
/// Names are normalized like semantic identifiers, then matched against
/// `{api}_for_{tool}` first and against bare API names second. Bare names
/// shared by several tools are ambiguous and never resolve.
#[derive(Debug, Clone)]
pub struct NameResolver {
    semantic: HashMap<String, ToolId>,
    bare: HashMap<String, Option<ToolId>>,
    atomic: HashMap<String, ToolId>,
}

impl NameResolver {
    pub fn new(registry: &ToolRegistry) -> Self {
        let mut semantic = HashMap::new();
        let mut bare: HashMap<String, Option<ToolId>> = HashMap::new();
        let mut atomic = HashMap::new();
        for (id, api) in registry.iter() {
            semantic.entry(semantic_name(api)).or_insert(id);
            atomic.insert(atomic_surface(api), id);
            bare.entry(semantic_normalize(&api.api_name))
                .and_modify(|slot| *slot = None)
                .or_insert(Some(id));
        }
        NameResolver {
            semantic,
            bare,
            atomic,
        }
    }

    pub fn resolve_name(&self, name: &str) -> Option<ToolId> {
        if let Some(&id) = self.atomic.get(name) {
            return Some(id);
        }
        let key = semantic_normalize(name);
        self.semantic
            .get(&key)
            .copied()
            .or_else(|| self.bare.get(&key).copied().flatten())
    }

    pub fn resolve(&self, registry: &ToolRegistry, r: &ToolRef) -> Option<ToolId> {
        match r {
            ToolRef::Pair(t, a) | ToolRef::Named { tool_name: t, api_name: a } => {
                registry.lookup(t, a)
            }
            ToolRef::Name(n) => self.resolve_name(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnnotation {
    pub query: String,
    pub relevant: BTreeSet<ToolId>,
    pub domain: Domain,
}

#[derive(Deserialize)]
struct RawAnnotation {
    query: String,
    relevant: Vec<ToolRef>,
    domain: Domain,
}

/// Reads annotation JSONL `{query, relevant: [tool refs], domain}`.
pub fn read_annotations(r: impl BufRead, registry: &ToolRegistry) -> Result<Vec<QueryAnnotation>> {
    let resolver = NameResolver::new(registry);
    let mut out = Vec::new();
    for (line_no, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<annotations>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("annotations:{}", line_no + 1), "<record>", e.to_string())
        })?;
        if raw.relevant.is_empty() {
            return Err(Error::parse(
                format!("annotations:{}", line_no + 1),
                "relevant",
                "must not be empty",
            ));
        }
        let relevant = raw
            .relevant
            .iter()
            .map(|r| {
                resolver.resolve(registry, r).ok_or_else(|| Error::UnresolvedTool {
                    annotation: out.len(),
                    name: r.to_string(),
                })
            })
            .collect::<Result<BTreeSet<_>>>()?;
        out.push(QueryAnnotation {
            query: raw.query,
            relevant,
            domain: raw.domain,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Memorization,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: String,
    #[serde(rename = "target_token_ids")]
    pub target: TokenSequence,
    pub stage: Stage,
    pub tool: ToolId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

impl TrainingPair {
    pub fn tokenize(&self, vocab: &Vocabulary) -> (TokenSequence, TokenSequence) {
        (vocab.encode(&self.input), self.target.clone())
    }
}

/// One `(doc_text → tool tokens)` pair per tool.
pub fn build_memorization(registry: &ToolRegistry, index: &ToolIndex) -> Vec<TrainingPair> {
    registry
        .iter()
        .map(|(id, api)| TrainingPair {
            input: doc_text(api),
            target: index.forward(id).to_vec(),
            stage: Stage::Memorization,
            tool: id,
            domain: None,
        })
        .collect()
}

/// One `(query → tool tokens)` pair per relevant tool of each annotation.
pub fn build_retrieval(annotations: &[QueryAnnotation], index: &ToolIndex) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for (i, ann) in annotations.iter().enumerate() {
        for &tool in &ann.relevant {
            if tool.ordinal() >= index.len() {
                return Err(Error::UnresolvedTool {
                    annotation: i,
                    name: tool.to_string(),
                });
            }
            out.push(TrainingPair {
                input: ann.query.clone(),
                target: index.forward(tool).to_vec(),
                stage: Stage::Retrieval,
                tool,
                domain: Some(ann.domain),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawStep {
    pub thought: String,
    pub action: String,
    pub action_input: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawTrajectory {
    #[serde(default)]
    pub system_prompt: String,
    pub query: String,
    #[serde(default)]
    pub steps: Vec<RawStep>,
    #[serde(default)]
    pub final_answer: String,
}

pub fn read_trajectories(r: impl BufRead) -> Result<Vec<RawTrajectory>> {
    let mut out = Vec::new();
    for (line_no, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trajectories>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("trajectories:{}", line_no + 1), "<record>", e.to_string())
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnTag {
    System,
    Query,
    Thought,
    ActionHint,
    Action,
    Documentation,
    Parameters,
    Observation,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub role: Role,
    pub tag: TurnTag,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<TokenSequence>,
}

impl ConversationTurn {
    fn new(role: Role, tag: TurnTag, content: impl Into<String>) -> Self {
        ConversationTurn {
            role,
            tag,
            content: content.into(),
            token_ids: None,
        }
    }
}

/// A converted trajectory. Each raw step contributes six turns: thought,
/// action hint, action tokens, documentation, parameters and observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSample {
    pub system_prompt: String,
    pub query: String,
    pub turns: Vec<ConversationTurn>,
    pub final_answer: String,
    /// Ground-truth tools announced before the first thought, if enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tools: Option<Vec<ToolId>>,
}

impl AgentSample {
    pub fn assistant_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Assistant).count()
    }

    /// Flat chat transcript: system, query, step turns, final answer.
    pub fn to_messages(&self, index: &ToolIndex) -> Vec<ConversationTurn> {
        let mut query = self.query.clone();
        if let Some(tools) = &self.gt_tools {
            let names: Vec<&str> = tools.iter().map(|&t| index.surface(t)).collect();
            query = format!("{GT_PREFIX} [{}]\n{query}", names.join(", "));
        }
        let mut out = vec![
            ConversationTurn::new(Role::System, TurnTag::System, self.system_prompt.clone()),
            ConversationTurn::new(Role::User, TurnTag::Query, query),
        ];
        out.extend(self.turns.iter().cloned());
        out.push(ConversationTurn::new(
            Role::Assistant,
            TurnTag::Final,
            self.final_answer.clone(),
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub record: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConversionReport {
    /// `(record index, sample)` in input order.
    pub samples: Vec<(usize, AgentSample)>,
    pub rejects: Vec<Reject>,
}

/// Converts raw trajectories into [`AgentSample`]s for one registry/index.
pub struct Converter<'a> {
    registry: &'a ToolRegistry,
    index: &'a ToolIndex,
    resolver: NameResolver,
    scrubber: AhoCorasick,
    markers: Vec<String>,
    pub with_gt_tools: bool,
}

impl<'a> Converter<'a> {
    pub fn new(registry: &'a ToolRegistry, index: &'a ToolIndex) -> Self {
        let mut surfaces: Vec<String> = registry
            .apis()
            .iter()
            .flat_map(|api| [atomic_surface(api), semantic_name(api)])
            .collect();
        surfaces.sort();
        surfaces.dedup();
        let scrubber = AhoCorasick::builder()
            .match_kind(MatchKind::LeftmostLongest)
            .build(&surfaces)
            .expect("tool surfaces form a valid automaton");
        Converter {
            registry,
            index,
            resolver: NameResolver::new(registry),
            scrubber,
            markers: TOOL_LIST_MARKERS.iter().map(|m| m.to_lowercase()).collect(),
            with_gt_tools: false,
        }
    }

    pub fn resolver(&self) -> &NameResolver {
        &self.resolver
    }

    /// Removes the candidate tool list (marker through the end of its
    /// paragraph) and any remaining registered tool surface.
    pub fn strip_system_prompt(&self, prompt: &str) -> String {
        let mut text = prompt.to_string();
        loop {
            let lower = text.to_lowercase();
            let hit = self
                .markers
                .iter()
                .filter_map(|m| lower.find(m.as_str()))
                .min();
            let Some(start) = hit.filter(|&s| text.is_char_boundary(s)) else {
                break;
            };
            let end = text[start..]
                .find("\n\n")
                .map_or(text.len(), |off| start + off);
            text.replace_range(start..end, "");
        }
        let mut out = String::with_capacity(text.len());
        self.scrubber.replace_all_with(&text, &mut out, |_, _, _| true);
        out.trim().to_string()
    }

    pub fn convert(&self, raw: &RawTrajectory) -> Result<AgentSample> {
        let mut turns = Vec::with_capacity(raw.steps.len() * 6);
        let mut used: Vec<ToolId> = Vec::new();
        for step in &raw.steps {
            let tool = self
                .resolver
                .resolve_name(&step.action)
                .ok_or_else(|| Error::UnresolvedAction(step.action.clone()))?;
            if tool.ordinal() >= self.index.len() {
                return Err(Error::UnindexedTool(tool.ordinal()));
            }
            if !used.contains(&tool) {
                used.push(tool);
            }
            turns.push(ConversationTurn::new(Role::Assistant, TurnTag::Thought, step.thought.clone()));
            turns.push(ConversationTurn::new(Role::User, TurnTag::ActionHint, ACTION_HINT));
            turns.push(ConversationTurn {
                role: Role::Assistant,
                tag: TurnTag::Action,
                content: self.index.surface(tool).to_string(),
                token_ids: Some(self.index.forward(tool).to_vec()),
            });
            turns.push(ConversationTurn::new(
                Role::User,
                TurnTag::Documentation,
                doc_text(self.registry.api(tool)),
            ));
            turns.push(ConversationTurn::new(
                Role::Assistant,
                TurnTag::Parameters,
                step.action_input.clone(),
            ));
            turns.push(ConversationTurn::new(
                Role::User,
                TurnTag::Observation,
                step.observation.clone(),
            ));
        }
        Ok(AgentSample {
            system_prompt: self.strip_system_prompt(&raw.system_prompt),
            query: raw.query.clone(),
            turns,
            final_answer: raw.final_answer.clone(),
            gt_tools: self.with_gt_tools.then_some(used),
        })
    }

    /// Converts records in parallel; output order follows input order and
    /// failing records are reported instead of aborting the batch.
    pub fn convert_batch(&self, raws: &[RawTrajectory]) -> ConversionReport {
        let results: Vec<(usize, Result<AgentSample>)> = raws
            .par_iter()
            .enumerate()
            .map(|(i, raw)| (i, self.convert(raw)))
            .collect();
        let mut report = ConversionReport::default();
        for (i, r) in results {
            match r {
                Ok(sample) => report.samples.push((i, sample)),
                Err(e) => report.rejects.push(Reject {
                    record: i,
                    error: e.to_string(),
                }),
            }
        }
        report
    }

    /// Recovers the raw steps of a converted sample. Action names come back
    /// in `{api}_for_{tool}` form.
    pub fn reassemble(&self, sample: &AgentSample) -> Result<Vec<RawStep>> {
        let bad = |msg: &str| Error::parse("agent sample", "turns", msg);
        if !sample.turns.len().is_multiple_of(6) {
            return Err(bad("turn count is not a multiple of six"));
        }
        sample
            .turns
            .chunks(6)
            .map(|c| {
                let tags: Vec<TurnTag> = c.iter().map(|t| t.tag).collect();
                if tags
                    != [
                        TurnTag::Thought,
                        TurnTag::ActionHint,
                        TurnTag::Action,
                        TurnTag::Documentation,
                        TurnTag::Parameters,
                        TurnTag::Observation,
                    ]
                {
                    return Err(bad("unexpected turn layout"));
                }
                let tokens = c[2].token_ids.as_deref().ok_or_else(|| bad("action without tokens"))?;
                let tool = self
                    .index
                    .decode_tool(tokens)
                    .ok_or_else(|| bad("action tokens decode to no tool"))?;
                Ok(RawStep {
                    thought: c[0].content.clone(),
                    action: semantic_name(self.registry.api(tool)),
                    action_input: c[4].content.clone(),
                    observation: c[5].content.clone(),
                })
            })
            .collect()
    }
}

/// Sample counts per training stage, laid out like the usual dataset table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub memorization: usize,
    /// Memorization pairs beyond the first for the same tool.
    pub memorization_duplicates: usize,
    pub retrieval: BTreeMap<Domain, usize>,
    pub retrieval_all: usize,
    pub agent: usize,
}

pub fn corpus_stats(pairs: &[TrainingPair], agent_samples: usize) -> CorpusStats {
    let mut stats = CorpusStats {
        retrieval: Domain::ALL.iter().map(|&d| (d, 0)).collect(),
        agent: agent_samples,
        ..CorpusStats::default()
    };
    let mut tools = BTreeSet::new();
    for p in pairs {
        match p.stage {
            Stage::Memorization => {
                stats.memorization += 1;
                if !tools.insert(p.tool) {
                    stats.memorization_duplicates += 1;
                }
            }
            Stage::Retrieval => {
                stats.retrieval_all += 1;
                if let Some(d) = p.domain {
                    *stats.retrieval.entry(d).or_insert(0) += 1;
                }
            }
        }
    }
    stats
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |d| self.retrieval.get(&d).copied().unwrap_or(0);
        writeln!(
            f,
            "{:<10} | {:>17} | {:>8} {:>8} {:>8} {:>8} | {:>23}",
            "Dataset", "Tool Memorization", "I1", "I2", "I3", "All", "End-to-End Agent-Tuning"
        )?;
        write!(
            f,
            "{:<10} | {:>17} | {:>8} {:>8} {:>8} {:>8} | {:>23}",
            "#num",
            self.memorization,
            r(Domain::I1),
            r(Domain::I2),
            r(Domain::I3),
            self.retrieval_all,
            self.agent
        )
    }
}
