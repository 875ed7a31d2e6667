//! The three-phase agent loop.
//!
//! Each round the model writes a Thought, decodes an Action (a tool token
//! sequence or the Finish token), reads the tool documentation, writes the
//! call Parameters as JSON and receives the tool's Feedback. The loop stops
//! on Finish or when the round or turn budget runs out, and always ends with
//! one Final answer.

mod env;
mod http;
mod models;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use env::{canonical_params, Environment, ExecutionResult, FixtureEnv, Status};
pub use http::{Endpoint, HttpEnv, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT_MS};
pub use models::{Apology, RetrievalAgentModel, ScriptedModel};

use crate::datasets::{ConversationTurn, Role, TurnTag, ACTION_HINT, GT_PREFIX};
use crate::decoder::{constrained_beam_search, sample_free, DecodeConfig, Scorer};
use crate::error::{Error, Result};
use crate::indexer::{ToolIndex, FINISH_SURFACE};
use crate::registry::{doc_text, ApiDocument, ToolId, ToolRegistry};
use crate::scalar::Real;
use crate::tokenizer::{TokenId, TokenSequence, Vocabulary};
use crate::trie::DisjunctiveTrie;

pub const SYSTEM_PROMPT: &str = "You are an assistant that answers queries by calling tools. \
Each round, write a thought, then generate the tool to call, then its parameters as one JSON object. \
Generate the Finish token once you can answer.";
pub const PARAMETERS_HINT: &str = "Write the parameters for this call as one JSON object.";
pub const REASK_HINT: &str = "That was not a JSON object. Reply with one JSON object only.";
pub const FINAL_HINT: &str = "Give your final answer now.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Assistant turns per session, Final included.
    pub max_turns: usize,
    pub max_action_rounds: usize,
    pub base_temperature: f64,
    pub retry_temperature: f64,
    pub max_retries: usize,
    pub constrain_actions: bool,
    /// Token cap on any single assistant turn.
    pub turn_token_budget: usize,
    /// In ground-truth mode, decode only among the announced tools.
    pub restrict_to_gt: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_turns: 16,
            max_action_rounds: 5,
            base_temperature: 0.0,
            retry_temperature: 0.7,
            max_retries: 3,
            constrain_actions: true,
            turn_token_budget: 256,
            restrict_to_gt: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns < 2 * self.max_action_rounds + 1 {
            return Err(Error::Config(format!(
                "max_turns {} cannot fit {} action rounds and a final answer",
                self.max_turns, self.max_action_rounds
            )));
        }
        if !(self.retry_temperature > self.base_temperature) {
            return Err(Error::Config(format!(
                "retry_temperature {} must exceed base_temperature {}",
                self.retry_temperature, self.base_temperature
            )));
        }
        if self.base_temperature < 0.0 {
            return Err(Error::Config("base_temperature must be non-negative".into()));
        }
        if self.turn_token_budget == 0 {
            return Err(Error::Config("turn_token_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thought,
    Parameters,
    Final,
}

/// What the model sees when asked for a text turn.
#[derive(Debug, Clone, Copy)]
pub struct TextRequest<'a> {
    pub phase: Phase,
    pub transcript: &'a [ConversationTurn],
    /// Zero-based action round.
    pub round: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: usize,
    /// The resolved tool's documentation during a Parameters turn.
    pub documentation: Option<&'a ApiDocument>,
}

#[derive(Debug, Clone, Copy)]
pub struct ActionContext<'a> {
    pub round: usize,
    pub query: &'a str,
    pub transcript: &'a [ConversationTurn],
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Generated {
    pub text: String,
    /// The model stopped at `max_tokens` without finishing.
    pub truncated: bool,
}

impl Generated {
    pub fn new(text: impl Into<String>) -> Self {
        Generated {
            text: text.into(),
            truncated: false,
        }
    }
}

/// The generator driving a session: free text for Thought, Parameters and
/// Final turns, and next-token log-probabilities for Action turns.
pub trait AgentModel<F: Real>: Sync {
    fn vocab_size(&self) -> usize;

    fn generate(&mut self, request: &TextRequest<'_>) -> Generated;

    fn action_log_probs(&self, ctx: &ActionContext<'_>, generated: &[TokenId]) -> Vec<F>;
}

struct ActionScorer<'m, 'c, M> {
    model: &'m M,
    ctx: ActionContext<'c>,
}

impl<F: Real, M: AgentModel<F>> Scorer<F> for ActionScorer<'_, '_, M> {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn score(&self, _prompt: &[TokenId], generated: &[TokenId]) -> Vec<F> {
        self.model.action_log_probs(&self.ctx, generated)
    }
}

/// True when the message, case-folded, contains "give up" or "i'm sorry".
pub fn retry_guard(message: &str) -> bool {
    let folded = message.to_lowercase().replace('\u{2019}', "'");
    folded.contains("give up") || folded.contains("i'm sorry")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Finished,
    BudgetExhausted,
    GaveUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Thought {
        text: String,
        truncated: bool,
    },
    Action {
        tokens: TokenSequence,
        /// `None` when the tokens name no registered tool.
        tool: Option<ToolId>,
        truncated: bool,
    },
    Parameters {
        /// The parsed object, or `null` when the model never produced one.
        record: Value,
        reasked: bool,
    },
    Feedback {
        result: ExecutionResult,
    },
    Retry {
        turn: usize,
        reason: String,
    },
    Final {
        text: String,
        truncated: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// One-based assistant turn the event belongs to.
    pub turn: usize,
    pub ts_ms: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrajectory {
    pub session: String,
    pub query: String,
    pub events: Vec<TimedEvent>,
    pub terminal: Terminal,
    pub assistant_turns: usize,
    /// Silent re-asks after malformed Parameters output.
    pub reasks: usize,
}

impl SessionTrajectory {
    pub fn actions(&self) -> impl Iterator<Item = (&TokenSequence, Option<ToolId>)> {
        self.events.iter().filter_map(|e| match &e.event {
            Event::Action { tokens, tool, .. } => Some((tokens, *tool)),
            _ => None,
        })
    }

    pub fn action_count(&self) -> usize {
        self.actions().count()
    }

    pub fn retry_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.event, Event::Retry { .. }))
            .count()
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match &e.event {
            Event::Final { text, .. } => Some(text.as_str()),
            _ => None,
        })
    }
}

/// Share of Action events naming no registered tool; `None` without any
/// Action events.
pub fn hallucination_rate(trajectories: &[SessionTrajectory]) -> Option<f64> {
    let (mut total, mut bad) = (0usize, 0usize);
    for (_, tool) in trajectories.iter().flat_map(SessionTrajectory::actions) {
        total += 1;
        bad += usize::from(tool.is_none());
    }
    (total > 0).then(|| bad as f64 / total as f64)
}

/// Checks `events` against `(Thought Action Parameters Feedback)* Thought?
/// Final`, where Retry events may only precede a regenerated Thought or
/// Final.
pub fn check_event_order(events: &[Event]) -> std::result::Result<(), String> {
    #[derive(Clone, Copy, PartialEq, Debug)]
    enum S {
        Start,
        Thought,
        Action,
        Parameters,
        Done,
    }
    let mut state = S::Start;
    for (i, e) in events.iter().enumerate() {
        state = match (state, e) {
            (S::Start | S::Thought, Event::Retry { .. }) => {
                match events.get(i + 1) {
                    Some(Event::Thought { .. } | Event::Final { .. } | Event::Retry { .. }) => state,
                    _ => return Err(format!("event {i}: retry not followed by a regenerated turn")),
                }
            }
            (S::Start, Event::Thought { .. }) => S::Thought,
            (S::Thought, Event::Action { .. }) => S::Action,
            (S::Action, Event::Parameters { .. }) => S::Parameters,
            (S::Parameters, Event::Feedback { .. }) => S::Start,
            (S::Start | S::Thought, Event::Final { .. }) => S::Done,
            (s, e) => return Err(format!("event {i}: unexpected {e:?} in state {s:?}")),
        };
    }
    if state == S::Done {
        Ok(())
    } else {
        Err(format!("sequence ends in state {state:?} without a Final"))
    }
}

/// The Finish token of `vocab`.
pub fn finish_token(vocab: &Vocabulary) -> Result<TokenId> {
    vocab
        .id_of(FINISH_SURFACE)
        .ok_or_else(|| Error::MissingAtomicToken(FINISH_SURFACE.into()))
}

/// Trie over the tool sequences of `tools` (all indexed tools when `None`)
/// plus the single-token Finish sequence.
pub fn action_trie(
    index: &ToolIndex,
    vocab: &Vocabulary,
    tools: Option<&BTreeSet<ToolId>>,
) -> Result<DisjunctiveTrie> {
    let finish = [finish_token(vocab)?];
    let mut seqs: Vec<&[TokenId]> = match tools {
        Some(tools) => tools.iter().map(|&t| index.forward(t)).collect(),
        None => index.sequences().iter().map(Vec::as_slice).collect(),
    };
    seqs.push(&finish);
    DisjunctiveTrie::build(seqs, vocab.eos())
}

/// Everything a session needs besides the model.
#[derive(Clone, Copy)]
pub struct Toolkit<'a> {
    pub vocab: &'a Vocabulary,
    pub registry: &'a ToolRegistry,
    pub index: &'a ToolIndex,
    /// Built by [`action_trie`].
    pub trie: &'a DisjunctiveTrie,
    pub env: &'a dyn Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionQuery {
    pub id: String,
    pub query: String,
    /// Ground-truth tools to announce before the first thought.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tools: Option<Vec<ToolId>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn mix(seed: u64, n: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct SessionState<'k, 'c, F, M> {
    model: &'k mut M,
    kit: Toolkit<'k>,
    trie: &'k DisjunctiveTrie,
    config: &'c AgentConfig,
    finish: TokenId,
    seed: u64,
    draws: u64,
    query: String,
    transcript: Vec<ConversationTurn>,
    events: Vec<TimedEvent>,
    turns: usize,
    retries: usize,
    reasks: usize,
    _scalar: std::marker::PhantomData<F>,
}

impl<F: Real, M: AgentModel<F>> SessionState<'_, '_, F, M> {
    fn record(&mut self, event: Event) {
        self.events.push(TimedEvent {
            turn: self.turns,
            ts_ms: now_ms(),
            event,
        });
    }

    fn fresh_seed(&mut self) -> u64 {
        self.draws += 1;
        mix(self.seed, self.draws)
    }

    fn say(&mut self, role: Role, tag: TurnTag, content: impl Into<String>) {
        self.transcript.push(ConversationTurn {
            role,
            tag,
            content: content.into(),
            token_ids: None,
        });
    }

    /// Enforces the per-turn token budget on model text.
    fn clip(&self, mut out: Generated) -> Generated {
        let budget = self.config.turn_token_budget;
        let ids = self.kit.vocab.encode(&out.text);
        if ids.len() > budget {
            out.text = self.kit.vocab.decode(&ids[..budget]);
            out.truncated = true;
        }
        out
    }

    fn ask(&mut self, phase: Phase, round: usize, temperature: f64, doc: Option<&ApiDocument>) -> Generated {
        let seed = self.fresh_seed();
        let request = TextRequest {
            phase,
            transcript: &self.transcript,
            round,
            temperature,
            seed,
            max_tokens: self.config.turn_token_budget,
            documentation: doc,
        };
        let out = self.model.generate(&request);
        self.clip(out)
    }

    /// Generates a Thought or Final turn, regenerating flagged output at the
    /// retry temperature while the session's retry budget lasts. Returns the
    /// accepted output and whether it is still flagged.
    fn apply_retry(&mut self, phase: Phase, round: usize) -> (Generated, bool) {
        let turn = self.turns + 1;
        let mut out = self.ask(phase, round, self.config.base_temperature, None);
        while retry_guard(&out.text) && self.retries < self.config.max_retries {
            self.retries += 1;
            self.events.push(TimedEvent {
                turn,
                ts_ms: now_ms(),
                event: Event::Retry {
                    turn,
                    reason: format!("flagged response: {}", out.text),
                },
            });
            out = self.ask(phase, round, self.config.retry_temperature, None);
        }
        let flagged = retry_guard(&out.text);
        (out, flagged)
    }

    fn decode_action(&mut self, round: usize) -> (TokenSequence, bool) {
        let seed = self.fresh_seed();
        let scorer = ActionScorer {
            model: &*self.model,
            ctx: ActionContext {
                round,
                query: &self.query,
                transcript: &self.transcript,
            },
        };
        if self.config.constrain_actions {
            let best = constrained_beam_search::<F, _>(&scorer, &[], self.trie, 1);
            let tokens = best.into_iter().next().map(|h| h.tokens).unwrap_or_default();
            (tokens, false)
        } else {
            let cfg = DecodeConfig {
                beam_width: 1,
                max_new_tokens: self.config.turn_token_budget,
                temperature: self.config.base_temperature,
                seed,
            };
            let sample = sample_free::<F, _>(&scorer, &[], self.kit.vocab.eos(), &cfg);
            (sample.tokens, !sample.hit_eos)
        }
    }

    fn parameters(&mut self, round: usize, doc: Option<&ApiDocument>) -> (Option<Map<String, Value>>, bool) {
        let first = self.ask(Phase::Parameters, round, self.config.base_temperature, doc);
        if let Some(record) = parse_record(&first.text) {
            self.say(Role::Assistant, TurnTag::Parameters, first.text);
            return (Some(record), false);
        }
        // one silent re-ask: the hint is shown to the model but not kept
        self.reasks += 1;
        self.say(Role::Assistant, TurnTag::Parameters, first.text);
        self.say(Role::User, TurnTag::Parameters, REASK_HINT);
        let second = self.ask(Phase::Parameters, round, self.config.base_temperature, doc);
        self.transcript.truncate(self.transcript.len() - 2);
        self.say(Role::Assistant, TurnTag::Parameters, second.text.clone());
        (parse_record(&second.text), true)
    }

    fn final_turn(&mut self, round: usize, forced: bool) -> bool {
        if forced {
            self.say(Role::User, TurnTag::Final, FINAL_HINT);
        }
        let (out, flagged) = self.apply_retry(Phase::Final, round);
        self.turns += 1;
        self.say(Role::Assistant, TurnTag::Final, out.text.clone());
        self.record(Event::Final {
            text: out.text,
            truncated: out.truncated,
        });
        flagged
    }

    fn run(&mut self) -> Terminal {
        let cfg = self.config;
        let mut round = 0;
        loop {
            // a full round costs three turns and must leave room for the final
            if round >= cfg.max_action_rounds || self.turns + 4 > cfg.max_turns {
                self.final_turn(round, true);
                return Terminal::BudgetExhausted;
            }

            let (thought, gave_up) = self.apply_retry(Phase::Thought, round);
            self.turns += 1;
            self.say(Role::Assistant, TurnTag::Thought, thought.text.clone());
            self.record(Event::Thought {
                text: thought.text,
                truncated: thought.truncated,
            });
            if gave_up {
                self.final_turn(round, true);
                return Terminal::GaveUp;
            }

            self.say(Role::User, TurnTag::ActionHint, ACTION_HINT);
            let (tokens, truncated) = self.decode_action(round);
            self.turns += 1;
            let surface = self.kit.vocab.decode(&tokens);
            self.say(Role::Assistant, TurnTag::Action, surface);
            if tokens == [self.finish] {
                let flagged = self.final_turn(round, false);
                return if flagged { Terminal::GaveUp } else { Terminal::Finished };
            }
            let tool = self.kit.index.decode_tool(&tokens);
            self.record(Event::Action {
                tokens,
                tool,
                truncated,
            });

            let registry = self.kit.registry;
            let doc = tool.and_then(|t| registry.get(t));
            let doc_turn = match doc {
                Some(api) => doc_text(api),
                None => "Unknown tool: no documentation is available.".to_string(),
            };
            self.say(Role::User, TurnTag::Documentation, format!("{doc_turn}\n{PARAMETERS_HINT}"));

            let (record, reasked) = self.parameters(round, doc);
            self.turns += 1;
            self.record(Event::Parameters {
                record: record.clone().map_or(Value::Null, Value::Object),
                reasked,
            });

            let result = match (tool, doc, record) {
                (None, _, _) | (_, None, _) => ExecutionResult::tool_error("unknown tool"),
                (_, _, None) => ExecutionResult::tool_error("malformed parameters: expected one JSON object"),
                (Some(t), Some(api), Some(record)) => {
                    let missing = api.missing_required(&record);
                    if missing.is_empty() {
                        self.kit.env.execute(t, &record)
                    } else {
                        ExecutionResult::tool_error(format!(
                            "missing required parameters: {}",
                            missing.join(", ")
                        ))
                    }
                }
            };
            self.say(Role::User, TurnTag::Observation, result.body.clone());
            self.record(Event::Feedback { result });
            round += 1;
        }
    }
}

fn parse_record(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str(text.trim()) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// Runs one session to completion.
///
/// With `constrain_actions` set, Action turns are decoded by beam search
/// (width 1) over `kit.trie`, so every Action names a registered tool. In
/// ground-truth mode the announced tools are prefixed to the query, and with
/// `restrict_to_gt` decoding is limited to them.
pub fn run_session<F: Real, M: AgentModel<F>>(
    model: &mut M,
    kit: Toolkit<'_>,
    query: &SessionQuery,
    config: &AgentConfig,
    seed: u64,
) -> Result<SessionTrajectory> {
    config.validate()?;
    let finish = finish_token(kit.vocab)?;
    let restricted = match (&query.gt_tools, config.restrict_to_gt) {
        (Some(tools), true) if !tools.is_empty() => {
            let set: BTreeSet<ToolId> = tools.iter().copied().collect();
            for &t in &set {
                if t.ordinal() >= kit.index.len() {
                    return Err(Error::UnindexedTool(t.ordinal()));
                }
            }
            Some(action_trie(kit.index, kit.vocab, Some(&set))?)
        }
        _ => None,
    };
    let mut user_turn = query.query.clone();
    if let Some(tools) = &query.gt_tools {
        let names: Vec<&str> = tools.iter().map(|&t| kit.index.surface(t)).collect();
        user_turn = format!("{GT_PREFIX} [{}]\n{user_turn}", names.join(", "));
    }

    let mut state = SessionState::<F, M> {
        model,
        kit,
        trie: restricted.as_ref().unwrap_or(kit.trie),
        config,
        finish,
        seed,
        draws: 0,
        query: query.query.clone(),
        transcript: Vec::new(),
        events: Vec::new(),
        turns: 0,
        retries: 0,
        reasks: 0,
        _scalar: std::marker::PhantomData,
    };
    state.say(Role::System, TurnTag::System, SYSTEM_PROMPT);
    state.say(Role::User, TurnTag::Query, user_turn);
    let terminal = state.run();
    Ok(SessionTrajectory {
        session: query.id.clone(),
        query: query.query.clone(),
        events: state.events,
        terminal,
        assistant_turns: state.turns,
        reasks: state.reasks,
    })
}

/// Writes the trajectories as JSONL: a `start` line, one line per event and
/// an `end` line per session, each carrying the session id, turn index and a
/// wall-clock stamp in milliseconds.
pub fn write_log(trajectories: &[SessionTrajectory], mut w: impl Write) -> std::io::Result<()> {
    for t in trajectories {
        let start_ms = t.events.first().map_or_else(now_ms, |e| e.ts_ms);
        let start = json!({"session": t.session, "turn": 0, "ts_ms": start_ms, "type": "start", "query": t.query});
        writeln!(w, "{start}")?;
        for e in &t.events {
            let mut v = serde_json::to_value(&e.event).expect("events serialize");
            let obj = v.as_object_mut().expect("tagged enum is an object");
            obj.insert("session".into(), json!(t.session));
            obj.insert("turn".into(), json!(e.turn));
            obj.insert("ts_ms".into(), json!(e.ts_ms));
            writeln!(w, "{v}")?;
        }
        let end_ms = t.events.last().map_or(start_ms, |e| e.ts_ms);
        let end = json!({
            "session": t.session,
            "turn": t.assistant_turns,
            "ts_ms": end_ms,
            "type": "end",
            "terminal": t.terminal,
            "assistant_turns": t.assistant_turns,
            "reasks": t.reasks,
        });
        writeln!(w, "{end}")?;
    }
    Ok(())
}

/// Reads a log written by [`write_log`].
pub fn read_log(r: impl BufRead) -> Result<Vec<SessionTrajectory>> {
    let mut out: Vec<SessionTrajectory> = Vec::new();
    let mut open: Option<SessionTrajectory> = None;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("trajectory log", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let origin = format!("trajectory log line {}", n + 1);
        let v: Value = serde_json::from_str(&line).map_err(|e| Error::parse(origin.clone(), "", e.to_string()))?;
        let field = |name: &str| v.get(name).cloned().unwrap_or(Value::Null);
        let session = field("session").as_str().unwrap_or_default().to_string();
        match v.get("type").and_then(Value::as_str) {
            Some("start") => {
                if open.is_some() {
                    return Err(Error::parse(origin, "type", "session started before the previous one ended"));
                }
                open = Some(SessionTrajectory {
                    session,
                    query: field("query").as_str().unwrap_or_default().to_string(),
                    events: Vec::new(),
                    terminal: Terminal::Finished,
                    assistant_turns: 0,
                    reasks: 0,
                });
            }
            Some("end") => {
                let mut t = open
                    .take()
                    .ok_or_else(|| Error::parse(origin.clone(), "type", "end without start"))?;
                t.terminal = serde_json::from_value(field("terminal"))
                    .map_err(|e| Error::parse(origin.clone(), "terminal", e.to_string()))?;
                t.assistant_turns = field("assistant_turns").as_u64().unwrap_or_default() as usize;
                t.reasks = field("reasks").as_u64().unwrap_or_default() as usize;
                out.push(t);
            }
            _ => {
                let t = open
                    .as_mut()
                    .ok_or_else(|| Error::parse(origin.clone(), "type", "event outside a session"))?;
                let turn = field("turn").as_u64().unwrap_or_default() as usize;
                let ts_ms = field("ts_ms").as_u64().unwrap_or_default();
                let event: Event =
                    serde_json::from_value(v).map_err(|e| Error::parse(origin, "type", e.to_string()))?;
                t.events.push(TimedEvent { turn, ts_ms, event });
            }
        }
    }
    if open.is_some() {
        return Err(Error::parse("trajectory log", "type", "last session has no end line"));
    }
    Ok(out)
}
