//! Tool identifiers: the mapping from registry entries to token sequences.
//!
//! Four schemes are supported:
//!
//! * **Atomic**: one dedicated vocabulary token per tool, surface
//!   `<<{tool_name}&&{api_name}>>`.
//! * **Semantic**: `{api}_for_{tool}` in normalized form, tokenized with the
//!   base tokenizer.
//! * **Numeric**: the ordinal as a zero-padded decimal, one token per digit.
//! * **Hierarchical**: the digit path of a recursive k-means tree over tool
//!   feature vectors.

mod cluster;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cluster::kmeans;

use crate::error::{Error, Result};
use crate::registry::{doc_text, ApiDocument, ToolId, ToolRegistry};
use crate::scalar::Real;
use crate::tokenizer::{EmbeddingTable, TokenId, TokenSequence, Vocabulary};

/// Surface of the reserved action that ends an agent session.
pub const FINISH_SURFACE: &str = "<<Finish>>";

pub const DEFAULT_NUMERIC_WIDTH: usize = 6;
pub const DEFAULT_BRANCHING: usize = 10;
pub const FEATURE_DIM: usize = 64;

const DIGITS: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexScheme {
    Atomic,
    Semantic,
    Numeric { width: usize },
    Hierarchical { branching: usize, seed: u64 },
}

impl IndexScheme {
    pub fn name(&self) -> &'static str {
        match self {
            IndexScheme::Atomic => "atomic",
            IndexScheme::Semantic => "semantic",
            IndexScheme::Numeric { .. } => "numeric",
            IndexScheme::Hierarchical { .. } => "hierarchical",
        }
    }
}

impl fmt::Display for IndexScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexScheme::Numeric { width } => write!(f, "numeric:{width}"),
            IndexScheme::Hierarchical { branching, seed } => {
                write!(f, "hierarchical:{branching}:{seed}")
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `atomic`, `semantic`, `numeric[:width]` or
/// `hierarchical[:branching[:seed]]`.
impl FromStr for IndexScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let num = |p: Option<&str>, default: u64| -> Result<u64> {
            p.map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::InvalidScheme(format!("bad number {v:?} in {s:?}")))
            })
        };
        let scheme = match kind.as_str() {
            "atomic" => IndexScheme::Atomic,
            "semantic" => IndexScheme::Semantic,
            "numeric" => IndexScheme::Numeric {
                width: num(parts.next(), DEFAULT_NUMERIC_WIDTH as u64)? as usize,
            },
            "hierarchical" => IndexScheme::Hierarchical {
                branching: num(parts.next(), DEFAULT_BRANCHING as u64)? as usize,
                seed: num(parts.next(), 0)?,
            },
            _ => return Err(Error::InvalidScheme(format!("unknown scheme {s:?}"))),
        };
        if parts.next().is_some() {
            return Err(Error::InvalidScheme(format!("trailing fields in {s:?}")));
        }
        Ok(scheme)
    }
}

/// Lower-cases and collapses every non-alphanumeric run to one underscore,
/// trimming underscores at both ends.
pub fn semantic_normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.extend(c.to_lowercase());
        } else {
            pending = true;
        }
    }
    out
}

pub fn atomic_surface(api: &ApiDocument) -> String {
    format!("<<{}&&{}>>", api.tool_name, api.api_name)
}

pub fn semantic_name(api: &ApiDocument) -> String {
    format!(
        "{}_for_{}",
        semantic_normalize(&api.api_name),
        semantic_normalize(&api.tool_name)
    )
}

/// Registers one atomic token per tool (in canonical order), optionally
/// followed by the [`FINISH_SURFACE`] token.
pub fn add_tool_tokens(
    vocab: &mut Vocabulary,
    registry: &ToolRegistry,
    with_finish: bool,
) -> Result<Vec<TokenId>> {
    let mut surfaces: Vec<String> = registry.apis().iter().map(atomic_surface).collect();
    if with_finish {
        surfaces.push(FINISH_SURFACE.to_string());
    }
    vocab.add_atomic_tokens(&surfaces)
}

/// Initializes every atomic tool row from the bare `"{tool_name} {api_name}"`
/// text.
pub fn init_tool_embeddings<F: Real>(
    vocab: &Vocabulary,
    table: &mut EmbeddingTable<F>,
    registry: &ToolRegistry,
) -> Result<()> {
    for api in registry.apis() {
        let surface = atomic_surface(api);
        let token = vocab
            .id_of(&surface)
            .ok_or(Error::MissingAtomicToken(surface))?;
        crate::tokenizer::init_embedding(
            vocab,
            table,
            token,
            &format!("{} {}", api.tool_name, api.api_name),
        )?;
    }
    Ok(())
}

/// Hashed character-trigram counts of each tool's [`doc_text`],
/// L2-normalized.
pub fn trigram_features<F: Real>(registry: &ToolRegistry, dim: usize) -> Vec<Vec<F>> {
    registry
        .apis()
        .iter()
        .map(|api| {
            let text: Vec<char> = doc_text(api).to_lowercase().chars().collect();
            let mut v = vec![F::zero(); dim];
            for w in text.windows(3) {
                let mut buf = [0u8; 12];
                let mut len = 0;
                for c in w {
                    len += c.encode_utf8(&mut buf[len..]).len();
                }
                let slot = (fnv1a(&buf[..len]) % dim as u64) as usize;
                v[slot] = v[slot] + F::one();
            }
            let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
            if norm > F::zero() {
                v.iter_mut().for_each(|x| *x = *x / norm);
            }
            v
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Bidirectional tool ⇄ token-sequence map.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolIndex {
    scheme: IndexScheme,
    forward: Vec<TokenSequence>,
    surfaces: Vec<String>,
    reverse: HashMap<TokenSequence, ToolId>,
}

impl ToolIndex {
    /// Assembles an index from explicit per-tool sequences (ordinal order).
    pub fn from_parts(
        scheme: IndexScheme,
        forward: Vec<TokenSequence>,
        surfaces: Vec<String>,
    ) -> Result<Self> {
        assert_eq!(forward.len(), surfaces.len());
        let mut reverse = HashMap::with_capacity(forward.len());
        for (i, seq) in forward.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::EmptySequence(i));
            }
            if let Some(prev) = reverse.insert(seq.clone(), ToolId::from_ordinal(i)) {
                return Err(Error::IndexCollision {
                    first: prev.ordinal(),
                    second: i,
                });
            }
        }
        Ok(ToolIndex {
            scheme,
            forward,
            surfaces,
            reverse,
        })
    }

    pub fn scheme(&self) -> IndexScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self, tool: ToolId) -> &[TokenId] {
        &self.forward[tool.ordinal()]
    }

    pub fn surface(&self, tool: ToolId) -> &str {
        &self.surfaces[tool.ordinal()]
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.forward
    }

    /// The tool whose sequence is exactly `seq`, if any.
    pub fn decode_tool(&self, seq: &[TokenId]) -> Option<ToolId> {
        self.reverse.get(seq).copied()
    }

    pub fn token_length_stats(&self) -> LengthStats {
        LengthStats::from_lengths(self.forward.iter().map(Vec::len))
    }

    /// One JSON object per line: `{ordinal, scheme, token_ids, surface}`.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, (seq, surface)) in self.forward.iter().zip(&self.surfaces).enumerate() {
            let rec = IndexRecord {
                ordinal: i,
                scheme: self.scheme,
                token_ids: seq.clone(),
                surface: surface.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut scheme = None;
        let mut forward = Vec::new();
        let mut surfaces = Vec::new();
        for (line_no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<index>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(format!("index:{}", line_no + 1), "<record>", e.to_string())
            })?;
            if rec.ordinal != forward.len() {
                return Err(Error::parse(
                    format!("index:{}", line_no + 1),
                    "ordinal",
                    "ordinals must be dense and ascending",
                ));
            }
            if *scheme.get_or_insert(rec.scheme) != rec.scheme {
                return Err(Error::parse(
                    format!("index:{}", line_no + 1),
                    "scheme",
                    "mixed schemes",
                ));
            }
            forward.push(rec.token_ids);
            surfaces.push(rec.surface);
        }
        let scheme = scheme.ok_or(Error::EmptyRegistry)?;
        Self::from_parts(scheme, forward, surfaces)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    ordinal: usize,
    scheme: IndexScheme,
    token_ids: Vec<TokenId>,
    surface: String,
}

/// Distribution of per-tool sequence lengths. The median is the lower
/// median, so it is always an observed length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthStats {
    pub histogram: BTreeMap<usize, usize>,
    pub count: usize,
    pub min: usize,
    pub median: usize,
    pub max: usize,
}

impl LengthStats {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut histogram = BTreeMap::new();
        for l in lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        let count: usize = histogram.values().sum();
        let min = histogram.keys().next().copied().unwrap_or(0);
        let max = histogram.keys().next_back().copied().unwrap_or(0);
        let mut median = 0;
        let mut seen = 0;
        let target = count.saturating_sub(1) / 2;
        for (&l, &c) in &histogram {
            if seen + c > target {
                median = l;
                break;
            }
            seen += c;
        }
        LengthStats {
            histogram,
            count,
            min,
            median,
            max,
        }
    }
}

/// Builds the index for `registry` under `scheme`.
///
/// Atomic indexing requires the tool tokens to be registered already (see
/// [`add_tool_tokens`]); hierarchical indexing requires one feature vector
/// per tool.
pub fn build_index<F: Real>(
    registry: &ToolRegistry,
    scheme: IndexScheme,
    vocab: &Vocabulary,
    features: Option<&[Vec<F>]>,
) -> Result<ToolIndex> {
    let n = registry.len();
    let (forward, surfaces): (Vec<TokenSequence>, Vec<String>) = match scheme {
        IndexScheme::Atomic => registry
            .apis()
            .iter()
            .map(|api| {
                let surface = atomic_surface(api);
                match vocab.id_of(&surface) {
                    Some(id) if vocab.is_atomic(id) => Ok((vec![id], surface)),
                    _ => Err(Error::MissingAtomicToken(surface)),
                }
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        IndexScheme::Semantic => registry
            .apis()
            .iter()
            .map(|api| {
                let name = semantic_name(api);
                (vocab.encode(&name), name)
            })
            .unzip(),
        IndexScheme::Numeric { width } => {
            let needed = decimal_digits(n.saturating_sub(1));
            if width < needed {
                return Err(Error::InvalidScheme(format!(
                    "numeric width {width} cannot address {n} tools (needs {needed})"
                )));
            }
            (0..n)
                .map(|i| {
                    let digits = format!("{i:0width$}");
                    let seq = digits.bytes().map(|b| vocab.byte_token(b)).collect();
                    (seq, spaced(digits.bytes()))
                })
                .unzip()
        }
        IndexScheme::Hierarchical { branching, seed } => {
            if !(2..=DIGITS.len()).contains(&branching) {
                return Err(Error::InvalidScheme(format!(
                    "branching must be in 2..={}, got {branching}",
                    DIGITS.len()
                )));
            }
            let features = features.ok_or_else(|| {
                Error::InvalidScheme("hierarchical indexing needs feature vectors".into())
            })?;
            if features.len() != n {
                return Err(Error::InvalidScheme(format!(
                    "{} feature vectors for {n} tools",
                    features.len()
                )));
            }
            hierarchical_paths(features, branching, seed)
                .into_iter()
                .map(|path| {
                    let bytes: Vec<u8> = path.iter().map(|&d| DIGITS[d]).collect();
                    let seq = bytes.iter().map(|&b| vocab.byte_token(b)).collect();
                    (seq, spaced(bytes.into_iter()))
                })
                .unzip()
        }
    };
    ToolIndex::from_parts(scheme, forward, surfaces)
}

fn decimal_digits(mut x: usize) -> usize {
    let mut d = 1;
    while x >= 10 {
        x /= 10;
        d += 1;
    }
    d
}

fn spaced(bytes: impl Iterator<Item = u8>) -> String {
    bytes
        .map(|b| (b as char).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Digit path of every point in the recursive clustering tree.
fn hierarchical_paths<F: Real>(features: &[Vec<F>], branching: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = features.len();
    let mut paths = vec![Vec::new(); n];
    if n == 1 {
        paths[0].push(0);
        return paths;
    }
    let mut node_counter = 0u64;
    let mut stack: Vec<Vec<usize>> = vec![(0..n).collect()];
    while let Some(members) = stack.pop() {
        if members.len() <= 1 {
            continue;
        }
        let k = branching.min(members.len());
        let points: Vec<&[F]> = members.iter().map(|&m| features[m].as_slice()).collect();
        let node_seed = seed ^ node_counter.wrapping_mul(0x9e3779b97f4a7c15);
        node_counter += 1;
        let assign = kmeans(&points, k, node_seed);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (&m, &c) in members.iter().zip(&assign) {
            groups[c].push(m);
        }
        groups.retain(|g| !g.is_empty());
        if groups.len() < 2 {
            groups = vec![Vec::new(); k];
            for (i, &m) in members.iter().enumerate() {
                groups[i % k].push(m);
            }
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        for (digit, group) in groups.into_iter().enumerate() {
            for &m in &group {
                paths[m].push(digit);
            }
            stack.push(group);
        }
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ApiDocument;

    fn api(tool: &str, name: &str) -> ApiDocument {
        ApiDocument {
            tool_name: tool.into(),
            api_name: name.into(),
            description: format!("{name} of {tool}"),
            method: "GET".into(),
            required_parameters: vec![],
            optional_parameters: vec![],
        }
    }

    fn registry(n: usize) -> ToolRegistry {
        ToolRegistry::from_apis((0..n).map(|i| api(&format!("Tool {}", i / 3), &format!("Api {i}"))))
            .unwrap()
    }

    #[test]
    fn youtube_surfaces() {
        let yt = api("Youtube Hub", "Get Video Details");
        assert_eq!(atomic_surface(&yt), "<<Youtube Hub&&Get Video Details>>");
        assert_eq!(semantic_name(&yt), "get_video_details_for_youtube_hub");
        assert_eq!(semantic_normalize("--A  b!!C--"), "a_b_c");
    }

    #[test]
    fn scheme_strings() {
        for s in ["atomic", "semantic", "numeric:6", "hierarchical:10:3"] {
            assert_eq!(s.parse::<IndexScheme>().unwrap().to_string(), s);
        }
        assert_eq!(
            "numeric".parse::<IndexScheme>().unwrap(),
            IndexScheme::Numeric { width: 6 }
        );
        assert!("bogus".parse::<IndexScheme>().is_err());
    }

    #[test]
    fn atomic_requires_tokens() {
        let reg = registry(4);
        let vocab = Vocabulary::bytes_only();
        let err = build_index::<f64>(&reg, IndexScheme::Atomic, &vocab, None).unwrap_err();
        assert!(matches!(err, Error::MissingAtomicToken(_)));
    }

    #[test]
    fn atomic_index_is_single_token() {
        let reg = registry(7);
        let mut vocab = Vocabulary::bytes_only();
        add_tool_tokens(&mut vocab, &reg, true).unwrap();
        let idx = build_index::<f64>(&reg, IndexScheme::Atomic, &vocab, None).unwrap();
        let stats = idx.token_length_stats();
        assert_eq!(stats.histogram, BTreeMap::from([(1, 7)]));
        for id in reg.ids() {
            assert_eq!(idx.decode_tool(idx.forward(id)), Some(id));
        }
        assert_eq!(idx.decode_tool(&[]), None);
        assert_eq!(idx.decode_tool(&[vocab.id_of(FINISH_SURFACE).unwrap()]), None);
    }

    #[test]
    fn numeric_digits() {
        let reg = registry(200);
        let vocab = Vocabulary::bytes_only();
        let idx = build_index::<f64>(&reg, IndexScheme::Numeric { width: 6 }, &vocab, None).unwrap();
        let digits: Vec<u8> = idx.forward(ToolId(128)).iter().map(|t| t.0 as u8).collect();
        assert_eq!(digits, b"000128");
        assert_eq!(idx.surface(ToolId(128)), "0 0 0 1 2 8");
        assert_eq!(idx.token_length_stats().histogram, BTreeMap::from([(6, 200)]));
        assert!(build_index::<f64>(&reg, IndexScheme::Numeric { width: 2 }, &vocab, None).is_err());
    }

    #[test]
    fn numeric_gap_is_not_a_tool() {
        let reg = registry(30);
        let vocab = Vocabulary::bytes_only();
        let idx = build_index::<f64>(&reg, IndexScheme::Numeric { width: 3 }, &vocab, None).unwrap();
        let assigned: std::collections::HashSet<String> =
            (0..30).map(|i| format!("{i:03}")).collect();
        let mut seq = idx.forward(ToolId(12)).to_vec();
        // alter the hundreds digit until the code falls outside the assigned set
        for d in b'1'..=b'9' {
            seq[0] = vocab.byte_token(d);
            let code: String = seq.iter().map(|t| t.0 as u8 as char).collect();
            if !assigned.contains(&code) {
                assert_eq!(idx.decode_tool(&seq), None);
                return;
            }
        }
        panic!("no gap found");
    }

    #[test]
    fn hierarchical_paths_are_unique_and_valid() {
        let reg = registry(120);
        let vocab = Vocabulary::bytes_only();
        let feats = trigram_features::<f64>(&reg, FEATURE_DIM);
        let scheme = IndexScheme::Hierarchical { branching: 10, seed: 5 };
        let idx = build_index(&reg, scheme, &vocab, Some(&feats)).unwrap();
        let again = build_index(&reg, scheme, &vocab, Some(&feats)).unwrap();
        assert_eq!(idx, again);
        // sibling digits are distinct and contiguous from 0 at every node
        let mut children: HashMap<Vec<TokenId>, std::collections::BTreeSet<TokenId>> = HashMap::new();
        for seq in idx.sequences() {
            for i in 0..seq.len() {
                children.entry(seq[..i].to_vec()).or_default().insert(seq[i]);
            }
        }
        for kids in children.values() {
            let expect: Vec<TokenId> = (0..kids.len()).map(|d| vocab.byte_token(DIGITS[d])).collect();
            assert_eq!(kids.iter().copied().collect::<Vec<_>>(), expect);
        }
        // no path is a prefix of another, so each path ends at exactly one leaf
        for a in idx.sequences() {
            for b in idx.sequences() {
                assert!(a == b || !b.starts_with(a));
            }
        }
    }

    #[test]
    fn hierarchical_duplicate_features_terminate() {
        let reg = registry(25);
        let vocab = Vocabulary::bytes_only();
        let feats = vec![vec![0.5f32; 4]; 25];
        let scheme = IndexScheme::Hierarchical { branching: 3, seed: 1 };
        let idx = build_index(&reg, scheme, &vocab, Some(&feats)).unwrap();
        assert_eq!(idx.len(), 25);
        assert!(idx.token_length_stats().max <= 4);
    }

    #[test]
    fn hierarchical_single_tool() {
        let reg = registry(1);
        let vocab = Vocabulary::bytes_only();
        let feats = vec![vec![1.0f64]];
        let scheme = IndexScheme::Hierarchical { branching: 10, seed: 0 };
        let idx = build_index(&reg, scheme, &vocab, Some(&feats)).unwrap();
        assert_eq!(idx.forward(ToolId(0)), &[vocab.byte_token(b'0')]);
    }

    #[test]
    fn semantic_collision_is_reported() {
        let reg = ToolRegistry::from_apis([api("A b", "x"), api("a-B", "x")]).unwrap();
        let err = build_index::<f64>(&reg, IndexScheme::Semantic, &Vocabulary::bytes_only(), None)
            .unwrap_err();
        assert!(matches!(err, Error::IndexCollision { .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let reg = registry(9);
        let vocab = Vocabulary::from_corpus(reg.apis().iter().map(doc_text), 50);
        let idx = build_index::<f64>(&reg, IndexScheme::Semantic, &vocab, None).unwrap();
        let mut buf = Vec::new();
        idx.write_jsonl(&mut buf).unwrap();
        assert_eq!(ToolIndex::read_jsonl(buf.as_slice()).unwrap(), idx);
    }

    #[test]
    fn lower_median() {
        let s = LengthStats::from_lengths([3, 1, 2, 4]);
        assert_eq!((s.min, s.median, s.max, s.count), (1, 2, 4, 4));
        assert_eq!(LengthStats::from_lengths([]).count, 0);
    }

    #[test]
    fn tool_embeddings_from_names() {
        let reg = registry(3);
        let mut vocab = Vocabulary::bytes_only();
        add_tool_tokens(&mut vocab, &reg, false).unwrap();
        let mut table = EmbeddingTable::<f64>::seeded(vocab.base_size(), 8, 1);
        init_tool_embeddings(&vocab, &mut table, &reg).unwrap();
        assert_eq!(table.rows(), vocab.len());
        let t = vocab.id_of(&atomic_surface(reg.api(ToolId(0)))).unwrap();
        assert!(table.row(t).iter().any(|&x| x != 0.0));
    }
}
