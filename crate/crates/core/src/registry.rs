//! Tool collections in the ToolBench interchange format.
//!
//! Every API of every tool becomes one addressable entry. Entries are kept in
//! canonical `(tool_name, api_name)` order so that ordinals, and everything
//! derived from them, are stable across machines and input file orders.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Version tag of the [`doc_text`] template.
pub const DOC_TEXT_VERSION: &str = "doc-text-v1";

/// Position of a tool in the registry's canonical ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolId(pub u32);

impl ToolId {
    #[inline]
    pub fn ordinal(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_ordinal(ordinal: usize) -> Self {
        ToolId(u32::try_from(ordinal).expect("registry larger than u32::MAX"))
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParameter {
    pub name: String,
    pub description: String,
    pub required: bool,
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiDocument {
    pub tool_name: String,
    pub api_name: String,
    pub description: String,
    /// Upper-case HTTP verb, or empty when the record does not say.
    pub method: String,
    pub required_parameters: Vec<ApiParameter>,
    pub optional_parameters: Vec<ApiParameter>,
}

impl ApiDocument {
    /// Names of required parameters absent from `params`.
    pub fn missing_required<'a>(&'a self, params: &Map<String, Value>) -> Vec<&'a str> {
        self.required_parameters
            .iter()
            .filter(|p| !params.contains_key(&p.name))
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// Canonical single-line rendering of an API's documentation.
///
/// Field order is fixed, whitespace runs collapse to one space, and empty
/// fields render as `(none)`.
pub fn doc_text(api: &ApiDocument) -> String {
    fn names(params: &[ApiParameter]) -> String {
        if params.is_empty() {
            "(none)".to_string()
        } else {
            params
                .iter()
                .map(|p| squash(&p.name))
                .collect::<Vec<_>>()
                .join(", ")
        }
    }
    fn or_none(s: &str) -> String {
        let s = squash(s);
        if s.is_empty() {
            "(none)".to_string()
        } else {
            s
        }
    }
    format!(
        "Tool: {}. API: {}. description: {}. method: {}. required parameters: {}. optional parameters: {}.",
        squash(&api.tool_name),
        squash(&api.api_name),
        or_none(&api.description),
        or_none(&api.method),
        names(&api.required_parameters),
        names(&api.optional_parameters),
    )
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Immutable, canonically ordered set of APIs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    apis: Vec<ApiDocument>,
    by_name: HashMap<(String, String), ToolId>,
    duplicates: usize,
}

impl ToolRegistry {
    /// Builds a registry from APIs in input order. Later duplicates of a
    /// `(tool_name, api_name)` pair are dropped and counted.
    pub fn from_apis(apis: impl IntoIterator<Item = ApiDocument>) -> Result<Self> {
        let mut seen: HashMap<(String, String), ()> = HashMap::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for api in apis {
            let key = (api.tool_name.clone(), api.api_name.clone());
            if seen.insert(key, ()).is_some() {
                duplicates += 1;
                continue;
            }
            kept.push(api);
        }
        if kept.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate API record(s)");
        }
        kept.sort_by(|a, b| (&a.tool_name, &a.api_name).cmp(&(&b.tool_name, &b.api_name)));
        let by_name = kept
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    (a.tool_name.clone(), a.api_name.clone()),
                    ToolId::from_ordinal(i),
                )
            })
            .collect();
        Ok(ToolRegistry {
            apis: kept,
            by_name,
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.apis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apis.is_empty()
    }

    /// Number of records dropped as duplicates during construction.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, id: ToolId) -> Option<&ApiDocument> {
        self.apis.get(id.ordinal())
    }

    pub fn api(&self, id: ToolId) -> &ApiDocument {
        &self.apis[id.ordinal()]
    }

    pub fn lookup(&self, tool_name: &str, api_name: &str) -> Option<ToolId> {
        self.by_name
            .get(&(tool_name.to_string(), api_name.to_string()))
            .copied()
    }

    pub fn apis(&self) -> &[ApiDocument] {
        &self.apis
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = ToolId> {
        (0..self.apis.len()).map(ToolId::from_ordinal)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (ToolId, &ApiDocument)> {
        self.apis
            .iter()
            .enumerate()
            .map(|(i, a)| (ToolId::from_ordinal(i), a))
    }

    /// Groups the registry back into interchange-format tool records, in
    /// canonical order.
    pub fn to_tool_records(&self) -> Vec<Value> {
        let mut out: Vec<Value> = Vec::new();
        let mut current: Option<(String, Vec<Value>)> = None;
        for api in &self.apis {
            let rendered = api_record(api);
            match &mut current {
                Some((name, apis)) if *name == api.tool_name => apis.push(rendered),
                _ => {
                    if let Some((name, apis)) = current.take() {
                        out.push(tool_record(name, apis));
                    }
                    current = Some((api.tool_name.clone(), vec![rendered]));
                }
            }
        }
        if let Some((name, apis)) = current {
            out.push(tool_record(name, apis));
        }
        out
    }
}

fn tool_record(name: String, apis: Vec<Value>) -> Value {
    serde_json::json!({ "tool_name": name, "apis": apis })
}

fn api_record(api: &ApiDocument) -> Value {
    let params = |ps: &[ApiParameter]| -> Vec<Value> {
        ps.iter()
            .map(|p| {
                let mut m = Map::new();
                m.insert("name".into(), Value::String(p.name.clone()));
                m.insert("description".into(), Value::String(p.description.clone()));
                if let Some(d) = &p.default {
                    m.insert("default".into(), Value::String(d.clone()));
                }
                Value::Object(m)
            })
            .collect()
    };
    serde_json::json!({
        "name": api.api_name,
        "description": api.description,
        "method": api.method,
        "required_parameters": params(&api.required_parameters),
        "optional_parameters": params(&api.optional_parameters),
    })
}

/// Loads every tool record under `path` (a `.json`/`.jsonl` file, or a
/// directory searched recursively in sorted order).
pub fn load_registry(path: impl AsRef<Path>) -> Result<ToolRegistry> {
    let path = path.as_ref();
    let files = collect_files(path)?;
    let mut apis = Vec::new();
    for file in &files {
        apis.extend(parse_file(file)?);
    }
    ToolRegistry::from_apis(apis)
}

fn collect_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("json") | Some("jsonl")
            ) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn parse_file(path: &Path) -> Result<Vec<ApiDocument>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| {
                Error::parse(format!("{name}:{}", line_no + 1), "<record>", e.to_string())
            })?;
            out.extend(parse_tool(&format!("{name}:{}", line_no + 1), &value)?);
        }
    } else {
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&name, "<document>", e.to_string()))?;
        match &value {
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    out.extend(parse_tool(&format!("{name}[{i}]"), item)?);
                }
            }
            _ => out.extend(parse_tool(&name, &value)?),
        }
    }
    Ok(out)
}

/// Parses one interchange record. Unknown fields are ignored.
pub fn parse_tool(origin: &str, value: &Value) -> Result<Vec<ApiDocument>> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(origin, "<record>", "expected a JSON object"))?;
    let tool_name = required_str(origin, obj, "tool_name", "tool_name")?;
    let apis = obj
        .get("apis")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(origin, "apis", "expected an array"))?;
    apis.iter()
        .enumerate()
        .map(|(i, api)| {
            let field = |f: &str| format!("apis[{i}].{f}");
            let api = api
                .as_object()
                .ok_or_else(|| Error::parse(origin, format!("apis[{i}]"), "expected an object"))?;
            let api_name = required_str(origin, api, "name", &field("name"))?;
            let description = optional_str(origin, api, "description", &field("description"))?;
            let method = optional_str(origin, api, "method", &field("method"))?.to_ascii_uppercase();
            if !matches!(method.as_str(), "" | "GET" | "POST" | "PUT" | "DELETE") {
                return Err(Error::parse(
                    origin,
                    field("method"),
                    format!("unsupported HTTP method {method:?}"),
                ));
            }
            Ok(ApiDocument {
                tool_name: tool_name.clone(),
                api_name,
                description,
                method,
                required_parameters: parse_params(origin, api, "required_parameters", i, true)?,
                optional_parameters: parse_params(origin, api, "optional_parameters", i, false)?,
            })
        })
        .collect()
}

fn parse_params(
    origin: &str,
    api: &Map<String, Value>,
    key: &str,
    api_idx: usize,
    required: bool,
) -> Result<Vec<ApiParameter>> {
    let Some(value) = api.get(key) else {
        return Ok(Vec::new());
    };
    if value.is_null() {
        return Ok(Vec::new());
    }
    let items = value
        .as_array()
        .ok_or_else(|| Error::parse(origin, format!("apis[{api_idx}].{key}"), "expected an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let field = |f: &str| format!("apis[{api_idx}].{key}[{j}].{f}");
            let p = p.as_object().ok_or_else(|| {
                Error::parse(origin, format!("apis[{api_idx}].{key}[{j}]"), "expected an object")
            })?;
            let name = required_str(origin, p, "name", &field("name"))?;
            let description = optional_str(origin, p, "description", &field("description"))?;
            let default = match p.get("default") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(other) => Some(other.to_string()),
            };
            Ok(ApiParameter {
                name,
                description,
                required,
                default,
            })
        })
        .collect()
}

fn required_str(origin: &str, obj: &Map<String, Value>, key: &str, field: &str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(Error::parse(origin, field, "must not be empty")),
        Some(_) => Err(Error::parse(origin, field, "expected a string")),
        None => Err(Error::parse(origin, field, "missing")),
    }
}

fn optional_str(origin: &str, obj: &Map<String, Value>, key: &str, field: &str) -> Result<String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::parse(origin, field, "expected a string")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn youtube() -> Value {
        serde_json::json!({
            "tool_name": "Youtube Hub",
            "tool_description": "Get YouTube video data.",
            "home_url": "https://rapidapi.com/",
            "apis": [{
                "name": "Get Video Details",
                "url": "https://youtube-hub.p.rapidapi.com/video",
                "description": "Get all the details of a YouTube video.",
                "method": "GET",
                "required_parameters": [
                    {"name": "id", "type": "STRING", "description": "Video id", "default": "dQw4w9WgXcQ"}
                ],
                "optional_parameters": []
            }]
        })
    }

    fn write(dir: &Path, name: &str, v: &Value) {
        fs::write(dir.join(name), serde_json::to_string_pretty(v).unwrap()).unwrap();
    }

    #[test]
    fn loads_youtube_record() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "youtube.json", &youtube());
        let reg = load_registry(dir.path()).unwrap();
        assert_eq!(reg.len(), 1);
        let id = reg.lookup("Youtube Hub", "Get Video Details").unwrap();
        assert_eq!(id, ToolId(0));
        let api = reg.api(id);
        assert_eq!(api.method, "GET");
        assert_eq!(api.required_parameters[0].default.as_deref(), Some("dQw4w9WgXcQ"));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_registry(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "empty registry");
    }

    #[test]
    fn duplicates_across_files_collapse() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.json", &youtube());
        write(dir.path(), "b.json", &youtube());
        let reg = load_registry(dir.path()).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.duplicates(), 1);
    }

    #[test]
    fn malformed_record_names_file_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = youtube();
        bad["apis"][0]["method"] = Value::from(7);
        write(dir.path(), "bad.json", &bad);
        let msg = load_registry(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("bad.json"), "{msg}");
        assert!(msg.contains("apis[0].method"), "{msg}");

        let mut missing = youtube();
        missing["apis"][0].as_object_mut().unwrap().remove("name");
        write(dir.path(), "bad.json", &missing);
        let msg = load_registry(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("apis[0].name"), "{msg}");
    }

    #[test]
    fn jsonl_and_arrays_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let mut other = youtube();
        other["tool_name"] = Value::from("Alpha");
        fs::write(
            dir.path().join("tools.jsonl"),
            format!("{}\n\n{}\n", youtube(), other),
        )
        .unwrap();
        let reg = load_registry(dir.path().join("tools.jsonl")).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.api(ToolId(0)).tool_name, "Alpha");

        let arr = Value::Array(vec![youtube(), other]);
        write(dir.path(), "arr.json", &arr);
        assert_eq!(load_registry(dir.path().join("arr.json")).unwrap().len(), 2);
    }

    #[test]
    fn doc_text_template() {
        let apis = parse_tool("t", &youtube()).unwrap();
        let text = doc_text(&apis[0]);
        assert!(text.starts_with("Tool: Youtube Hub. API: Get Video Details."), "{text}");
        assert_eq!(text, doc_text(&apis[0]));
        assert!(text.contains("required parameters: id."));

        let mut empty = apis[0].clone();
        empty.description = "  ".into();
        assert!(doc_text(&empty).contains("description: (none)"));
    }

    #[test]
    fn round_trip_through_tool_records() {
        let mut other = youtube();
        other["apis"][0]["name"] = Value::from("Search");
        let mut apis = parse_tool("a", &youtube()).unwrap();
        apis.extend(parse_tool("b", &other).unwrap());
        let reg = ToolRegistry::from_apis(apis).unwrap();
        let mut again = Vec::new();
        for (i, rec) in reg.to_tool_records().iter().enumerate() {
            again.extend(parse_tool(&i.to_string(), rec).unwrap());
        }
        assert_eq!(ToolRegistry::from_apis(again).unwrap().apis(), reg.apis());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn api(tool: String, name: String) -> ApiDocument {
            ApiDocument {
                tool_name: tool,
                api_name: name,
                description: String::new(),
                method: String::new(),
                required_parameters: vec![],
                optional_parameters: vec![],
            }
        }

        proptest! {
            #[test]
            fn ordering_is_canonical_and_permutation_invariant(
                pairs in prop::collection::btree_set(("[a-c]{1,3}", "[x-z]{1,3}"), 1..30),
                seed in any::<u64>(),
            ) {
                let apis: Vec<_> = pairs.iter().cloned().map(|(t, n)| api(t, n)).collect();
                let mut shuffled = apis.clone();
                let mut s = seed;
                for i in (1..shuffled.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
                let a = ToolRegistry::from_apis(apis).unwrap();
                let b = ToolRegistry::from_apis(shuffled).unwrap();
                prop_assert_eq!(a.apis(), b.apis());
                for (id, api) in a.iter() {
                    prop_assert_eq!(a.lookup(&api.tool_name, &api.api_name), Some(id));
                }
            }
        }
    }
}
