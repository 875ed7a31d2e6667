use std::collections::HashMap;
use std::io::BufRead;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::{NameResolver, ToolRef};
use crate::error::{Error, Result};
use crate::registry::{ToolId, ToolRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ToolError,
    NetworkError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: Status,
    pub body: String,
    #[serde(rename = "latency_ms", with = "millis")]
    pub latency: Duration,
}

impl ExecutionResult {
    pub fn ok(body: impl Into<String>, latency: Duration) -> Self {
        ExecutionResult {
            status: Status::Ok,
            body: body.into(),
            latency,
        }
    }

    pub fn tool_error(body: impl Into<String>) -> Self {
        ExecutionResult {
            status: Status::ToolError,
            body: body.into(),
            latency: Duration::ZERO,
        }
    }

    pub fn network_error(body: impl Into<String>, latency: Duration) -> Self {
        ExecutionResult {
            status: Status::NetworkError,
            body: body.into(),
            latency,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_nanos((ms.max(0.0) * 1e6).round() as u64))
    }
}

/// Executes tool calls. Implementations never fail outright: every problem
/// is reported through [`ExecutionResult::status`].
pub trait Environment: Send + Sync {
    fn execute(&self, tool: ToolId, params: &Map<String, Value>) -> ExecutionResult;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn execute(&self, tool: ToolId, params: &Map<String, Value>) -> ExecutionResult {
        (**self).execute(tool, params)
    }
}

/// Canonical text of a parameter record: keys sorted at every level, no
/// whitespace.
pub fn canonical_params(params: &Map<String, Value>) -> String {
    // serde_json's map is ordered, so plain serialization is canonical
    serde_json::to_string(params).expect("json values always serialize")
}

/// Replays stored responses keyed by tool and canonical parameters.
#[derive(Debug, Clone, Default)]
pub struct FixtureEnv {
    fixtures: HashMap<(ToolId, String), String>,
}

#[derive(Deserialize)]
struct FixtureLine {
    tool: ToolRef,
    #[serde(default)]
    params: Map<String, Value>,
    body: String,
}

impl FixtureEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tool: ToolId, params: &Map<String, Value>, body: impl Into<String>) {
        self.fixtures.insert((tool, canonical_params(params)), body.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Reads `{tool, params, body}` lines. Later lines override earlier ones.
    pub fn read_jsonl(r: impl BufRead, registry: &ToolRegistry) -> Result<Self> {
        let resolver = NameResolver::new(registry);
        let mut env = FixtureEnv::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("fixtures", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("fixtures line {}", n + 1), "", e.to_string()))?;
            let tool = resolver
                .resolve(registry, &rec.tool)
                .ok_or_else(|| {
                    Error::parse(
                        format!("fixtures line {}", n + 1),
                        "tool",
                        format!("unknown tool {}", rec.tool),
                    )
                })?;
            env.insert(tool, &rec.params, rec.body);
        }
        Ok(env)
    }
}

impl Environment for FixtureEnv {
    fn execute(&self, tool: ToolId, params: &Map<String, Value>) -> ExecutionResult {
        let key = (tool, canonical_params(params));
        match self.fixtures.get(&key) {
            Some(body) => ExecutionResult::ok(body.clone(), Duration::ZERO),
            None => ExecutionResult::tool_error(format!(
                "no fixture for tool {} with parameters {}",
                tool.ordinal(),
                key.1
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::registry::{ApiDocument, ToolRegistry};

    fn params(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn hit_miss_and_determinism() {
        let mut env = FixtureEnv::new();
        env.insert(ToolId(0), &params(json!({"q": "x"})), "hello");
        let hit = env.execute(ToolId(0), &params(json!({"q": "x"})));
        assert_eq!(hit.status, Status::Ok);
        assert_eq!(hit.body, "hello");
        assert_eq!(hit, env.execute(ToolId(0), &params(json!({"q": "x"}))));
        let miss = env.execute(ToolId(1), &params(json!({"q": "x"})));
        assert_eq!(miss.status, Status::ToolError);
        assert!(miss.body.contains("no fixture"));
        assert_eq!(env.execute(ToolId(0), &params(json!({"q": "y"}))).status, Status::ToolError);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a: Map<String, Value> = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":1}}"#).unwrap();
        let b: Map<String, Value> = serde_json::from_str(r#"{"a":{"x":1,"y":2},"b":1}"#).unwrap();
        assert_eq!(canonical_params(&a), canonical_params(&b));
    }

    #[test]
    fn reads_jsonl_with_tool_refs() {
        let reg = ToolRegistry::from_apis([ApiDocument {
            tool_name: "Weather".into(),
            api_name: "current".into(),
            description: String::new(),
            method: "GET".into(),
            required_parameters: vec![],
            optional_parameters: vec![],
        }])
        .unwrap();
        let text = "{\"tool\":[\"Weather\",\"current\"],\"params\":{\"city\":\"Oslo\"},\"body\":\"rain\"}\n\
                    {\"tool\":\"current_for_weather\",\"params\":{},\"body\":\"sun\"}\n";
        let env = FixtureEnv::read_jsonl(text.as_bytes(), &reg).unwrap();
        assert_eq!(env.len(), 2);
        assert_eq!(env.execute(ToolId(0), &params(json!({"city": "Oslo"}))).body, "rain");
        assert_eq!(env.execute(ToolId(0), &Map::new()).body, "sun");
        let bad = "{\"tool\":\"nope\",\"body\":\"\"}";
        assert!(FixtureEnv::read_jsonl(bad.as_bytes(), &reg).is_err());
    }

    #[test]
    fn result_serializes_latency_in_millis() {
        let r = ExecutionResult::ok("b", Duration::from_millis(12));
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["status"], "ok");
        assert_eq!(v["latency_ms"], 12.0);
        let back: ExecutionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
