use std::collections::HashMap;
use std::io::BufRead;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{Map, Value};

use super::env::{Environment, ExecutionResult};
use crate::datasets::{NameResolver, ToolRef};
use crate::error::{Error, Result};
use crate::registry::{ToolId, ToolRegistry};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    /// URL with `{param}` placeholders filled from the call's parameters.
    pub url_template: String,
    pub method: String,
    pub timeout_ms: u64,
}

#[derive(Deserialize)]
struct EndpointLine {
    tool: ToolRef,
    url_template: String,
    #[serde(default)]
    method: Option<String>,
    #[serde(default)]
    timeout_ms: Option<u64>,
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Calls real HTTP endpoints.
///
/// Parameters named in the URL template are substituted into it; the rest
/// go to the query string for GET and DELETE and to a JSON body otherwise.
/// Calls missing a required parameter are rejected without touching the
/// network. Non-2xx responses are tool errors, transport failures and
/// timeouts are network errors.
pub struct HttpEnv<'a> {
    registry: &'a ToolRegistry,
    endpoints: HashMap<ToolId, Endpoint>,
    agent: ureq::Agent,
    gate: Gate,
}

impl<'a> HttpEnv<'a> {
    pub fn new(registry: &'a ToolRegistry, max_in_flight: usize) -> Self {
        HttpEnv {
            registry,
            endpoints: HashMap::new(),
            agent: ureq::AgentBuilder::new().build(),
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: max_in_flight.max(1),
            },
        }
    }

    /// Registers an endpoint. An empty `method` falls back to the tool's
    /// documented verb, then to GET.
    pub fn add_endpoint(&mut self, tool: ToolId, mut endpoint: Endpoint) {
        if endpoint.method.is_empty() {
            endpoint.method = self.registry.api(tool).method.clone();
        }
        if endpoint.method.is_empty() {
            endpoint.method = "GET".into();
        }
        endpoint.method.make_ascii_uppercase();
        self.endpoints.insert(tool, endpoint);
    }

    /// Reads `{tool, url_template, method?, timeout_ms?}` lines.
    pub fn read_endpoints(&mut self, r: impl BufRead) -> Result<()> {
        let resolver = NameResolver::new(self.registry);
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("endpoints", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let origin = format!("endpoints line {}", n + 1);
            let rec: EndpointLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(origin.clone(), "", e.to_string()))?;
            let tool = resolver
                .resolve(self.registry, &rec.tool)
                .ok_or_else(|| Error::parse(origin, "tool", format!("unknown tool {}", rec.tool)))?;
            self.add_endpoint(
                tool,
                Endpoint {
                    url_template: rec.url_template,
                    method: rec.method.unwrap_or_default(),
                    timeout_ms: rec.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS),
                },
            );
        }
        Ok(())
    }

    pub fn endpoint(&self, tool: ToolId) -> Option<&Endpoint> {
        self.endpoints.get(&tool)
    }

    fn send(&self, endpoint: &Endpoint, params: &Map<String, Value>) -> ExecutionResult {
        let (url, rest) = fill_template(&endpoint.url_template, params);
        let timeout = Duration::from_millis(endpoint.timeout_ms);
        let mut req = self.agent.request(&endpoint.method, &url).timeout(timeout);
        let with_body = !matches!(endpoint.method.as_str(), "GET" | "DELETE" | "HEAD");
        if !with_body {
            for (k, v) in &rest {
                req = req.query(k, &value_text(v));
            }
        }

        let _slot = self.gate.enter();
        let start = Instant::now();
        let outcome = if with_body {
            let body = serde_json::to_string(&rest).expect("json values always serialize");
            req.set("Content-Type", "application/json").send_string(&body)
        } else {
            req.call()
        };
        let elapsed = start.elapsed();
        match outcome {
            Ok(resp) => match resp.into_string() {
                Ok(body) => ExecutionResult::ok(body, elapsed),
                Err(e) => ExecutionResult::network_error(
                    format!("failed reading response after {} ms: {e}", elapsed.as_millis()),
                    elapsed,
                ),
            },
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                ExecutionResult {
                    latency: elapsed,
                    ..ExecutionResult::tool_error(format!("HTTP {code}: {body}"))
                }
            }
            Err(ureq::Error::Transport(t)) => ExecutionResult::network_error(
                format!("{} after {} ms: {t}", transport_label(&t), elapsed.as_millis()),
                elapsed,
            ),
        }
    }
}

fn transport_label(t: &ureq::Transport) -> &'static str {
    let timed_out = std::error::Error::source(t)
        .and_then(|s| s.downcast_ref::<std::io::Error>())
        .is_some_and(|e| matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
    if timed_out {
        "timed out"
    } else {
        "transport failure"
    }
}

impl Environment for HttpEnv<'_> {
    fn execute(&self, tool: ToolId, params: &Map<String, Value>) -> ExecutionResult {
        let Some(api) = self.registry.get(tool) else {
            return ExecutionResult::tool_error(format!("unknown tool {}", tool.ordinal()));
        };
        let missing = api.missing_required(params);
        if !missing.is_empty() {
            return ExecutionResult::tool_error(format!(
                "missing required parameters: {}",
                missing.join(", ")
            ));
        }
        match self.endpoints.get(&tool) {
            Some(endpoint) => self.send(endpoint, params),
            None => ExecutionResult::tool_error(format!(
                "no endpoint configured for {}/{}",
                api.tool_name, api.api_name
            )),
        }
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Substitutes `{name}` placeholders and returns the unused parameters.
fn fill_template(template: &str, params: &Map<String, Value>) -> (String, Map<String, Value>) {
    let mut rest = params.clone();
    let mut url = String::with_capacity(template.len());
    let mut tail = template;
    while let Some(open) = tail.find('{') {
        let Some(close) = tail[open..].find('}').map(|c| open + c) else {
            break;
        };
        let name = &tail[open + 1..close];
        url.push_str(&tail[..open]);
        match params.get(name) {
            Some(v) => {
                url.push_str(&percent_encode(&value_text(v)));
                rest.remove(name);
            }
            None => url.push_str(&tail[open..=close]),
        }
        tail = &tail[close + 1..];
    }
    url.push_str(tail);
    (url, rest)
}
