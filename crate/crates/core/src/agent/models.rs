use serde_json::{Map, Value};

use super::{ActionContext, AgentModel, Generated, Phase, TextRequest};
use crate::datasets::{Role, TurnTag};
use crate::decoder::Scorer;
use crate::scalar::Real;
use crate::tokenizer::{TokenId, TokenSequence, Vocabulary};

/// When a [`ScriptedModel`] answers Thought and Final turns with an apology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Apology {
    Never,
    /// Apologize whenever sampling at or below this temperature.
    AtOrBelow(f64),
    Always,
}

pub const APOLOGY: &str = "I'm sorry, I cannot help with this.";

/// Deterministic generator replaying fixed turns.
///
/// Round `r` decodes `actions[r]` (the last entry repeats), which may be the
/// Finish sequence, any tool sequence, or arbitrary tokens.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    pub vocab_size: usize,
    pub eos: TokenId,
    pub actions: Vec<TokenSequence>,
    pub thought: String,
    /// Parameters text per round, the last entry repeating.
    pub parameters: Vec<String>,
    pub final_answer: String,
    pub apology: Apology,
    /// Number of text turns requested so far, re-asks and retries included.
    pub calls: usize,
}

impl ScriptedModel {
    pub fn new(vocab: &Vocabulary, actions: Vec<TokenSequence>) -> Self {
        ScriptedModel {
            vocab_size: vocab.len(),
            eos: vocab.eos(),
            actions,
            thought: "I should call a tool.".into(),
            parameters: vec!["{}".into()],
            final_answer: "Done.".into(),
            apology: Apology::Never,
            calls: 0,
        }
    }

    fn apologizes(&self, temperature: f64) -> bool {
        match self.apology {
            Apology::Never => false,
            Apology::AtOrBelow(t) => temperature <= t,
            Apology::Always => true,
        }
    }
}

fn pick<T: Clone>(items: &[T], round: usize) -> Option<T> {
    items.get(round.min(items.len().saturating_sub(1))).cloned()
}

impl<F: Real> AgentModel<F> for ScriptedModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn generate(&mut self, req: &TextRequest<'_>) -> Generated {
        self.calls += 1;
        let text = match req.phase {
            Phase::Thought | Phase::Final if self.apologizes(req.temperature) => APOLOGY.to_string(),
            Phase::Thought => self.thought.clone(),
            Phase::Final => self.final_answer.clone(),
            Phase::Parameters => pick(&self.parameters, req.round).unwrap_or_default(),
        };
        Generated::new(text)
    }

    fn action_log_probs(&self, ctx: &ActionContext<'_>, generated: &[TokenId]) -> Vec<F> {
        let target = pick(&self.actions, ctx.round).unwrap_or_default();
        let next = if generated.len() < target.len() && target.starts_with(generated) {
            target[generated.len()]
        } else {
            self.eos
        };
        peaked(self.vocab_size, next)
    }
}

/// Log-probabilities putting 0.9 on `token` and spreading the rest evenly.
fn peaked<F: Real>(vocab_size: usize, token: TokenId) -> Vec<F> {
    if vocab_size <= 1 {
        return vec![F::zero(); vocab_size];
    }
    let rest = (F::lit(0.1) / F::from_count(vocab_size - 1)).ln();
    let mut out = vec![rest; vocab_size];
    if let Some(slot) = out.get_mut(token.index()) {
        *slot = F::lit(0.9).ln();
    }
    out
}

/// A retrieval scorer driving the agent loop.
///
/// For the first `rounds` rounds the Action turn is the scorer's
/// distribution given the query; afterwards the model decodes Finish.
/// Parameters fill each required field with its default or the query text,
/// and the final answer reports the last observation.
pub struct RetrievalAgentModel<'a, F> {
    scorer: &'a dyn Scorer<F>,
    vocab: &'a Vocabulary,
    finish: TokenId,
    rounds: usize,
}

impl<'a, F: Real> RetrievalAgentModel<'a, F> {
    pub fn new(scorer: &'a dyn Scorer<F>, vocab: &'a Vocabulary, finish: TokenId, rounds: usize) -> Self {
        RetrievalAgentModel {
            scorer,
            vocab,
            finish,
            rounds,
        }
    }
}

impl<F: Real> AgentModel<F> for RetrievalAgentModel<'_, F> {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn generate(&mut self, req: &TextRequest<'_>) -> Generated {
        let query = req
            .transcript
            .iter()
            .find(|t| t.tag == TurnTag::Query)
            .map_or("", |t| t.content.as_str());
        let text = match req.phase {
            Phase::Thought if req.round < self.rounds => {
                format!("I need a tool that can handle: {query}")
            }
            Phase::Thought => "I have enough information to answer.".to_string(),
            Phase::Parameters => {
                let mut record = Map::new();
                if let Some(api) = req.documentation {
                    for p in &api.required_parameters {
                        let v = p.default.clone().unwrap_or_else(|| query.to_string());
                        record.insert(p.name.clone(), Value::String(v));
                    }
                }
                Value::Object(record).to_string()
            }
            Phase::Final => {
                let last = req
                    .transcript
                    .iter()
                    .rev()
                    .find(|t| t.role == Role::User && t.tag == TurnTag::Observation);
                match last {
                    Some(obs) => format!("Based on the tool output: {}", obs.content),
                    None => "No tool was called.".to_string(),
                }
            }
        };
        Generated::new(text)
    }

    fn action_log_probs(&self, ctx: &ActionContext<'_>, generated: &[TokenId]) -> Vec<F> {
        if ctx.round < self.rounds {
            let prompt = self.vocab.encode(ctx.query);
            self.scorer.score(&prompt, generated)
        } else if generated.is_empty() {
            peaked(self.vocab.len(), self.finish)
        } else {
            peaked(self.vocab.len(), self.vocab.eos())
        }
    }
}
