//! Deterministic base tokenizer with atomic tool-token expansion.
//!
//! Ids `0..256` are single-byte fallback tokens, followed by the `eos` and
//! `pad` specials and then any multi-byte word pieces; together they form the
//! base vocabulary. Tool tokens added with
//! [`Vocabulary::add_atomic_tokens`] occupy a contiguous range right after it.
//! Encoding is greedy longest-match, so a registered tool surface standing
//! alone always encodes to exactly one token.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub type TokenSequence = Vec<TokenId>;

pub const EOS_SURFACE: &str = "<|eos|>";
pub const PAD_SURFACE: &str = "<|pad|>";
const VOCAB_HEADER: &str = "#tooltok-vocab v1";

#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<Vec<u8>>,
    entries: HashMap<Vec<u8>, TokenId>,
    /// Distinct entry lengths per first byte, longest first.
    lengths: Vec<Vec<usize>>,
    base_size: usize,
    eos: TokenId,
    pad: TokenId,
    atomic_end: usize,
}

impl Vocabulary {
    /// Byte fallback tokens and the two specials, nothing else.
    pub fn bytes_only() -> Self {
        Self::with_pieces(std::iter::empty::<&str>())
    }

    /// Base vocabulary with the given multi-byte pieces appended in order.
    /// Single-byte and repeated pieces are skipped.
    pub fn with_pieces<S: AsRef<str>>(pieces: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            entries: HashMap::new(),
            lengths: vec![Vec::new(); 256],
            base_size: 0,
            eos: TokenId(256),
            pad: TokenId(257),
            atomic_end: 0,
        };
        for b in 0..=255u8 {
            vocab.push_entry(vec![b]);
        }
        vocab.surfaces.push(EOS_SURFACE.as_bytes().to_vec());
        vocab.surfaces.push(PAD_SURFACE.as_bytes().to_vec());
        for piece in pieces {
            let bytes = piece.as_ref().as_bytes();
            if bytes.len() > 1 && !vocab.entries.contains_key(bytes) {
                vocab.push_entry(bytes.to_vec());
            }
        }
        vocab.base_size = vocab.surfaces.len();
        vocab.atomic_end = vocab.base_size;
        vocab
    }

    /// Harvests the `max_pieces` most frequent words (with and without a
    /// leading space) from `texts`. Ties break lexicographically.
    pub fn from_corpus<S: AsRef<str>>(texts: impl IntoIterator<Item = S>, max_pieces: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            let text = text.as_ref();
            let mut start = None;
            for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
                match (c.is_alphanumeric(), start) {
                    (true, None) => start = Some(i),
                    (false, Some(s)) => {
                        let word = &text[s..i];
                        *counts.entry(word.to_string()).or_default() += 1;
                        if s > 0 && text.as_bytes()[s - 1] == b' ' {
                            *counts.entry(format!(" {word}")).or_default() += 1;
                        }
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(w, _)| w.len() > 1).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::with_pieces(ranked.into_iter().take(max_pieces).map(|(w, _)| w))
    }

    fn push_entry(&mut self, bytes: Vec<u8>) -> TokenId {
        let id = TokenId(self.surfaces.len() as u32);
        let lens = &mut self.lengths[bytes[0] as usize];
        if let Err(pos) = lens.binary_search_by(|l| bytes.len().cmp(l)) {
            lens.insert(pos, bytes.len());
        }
        self.entries.insert(bytes.clone(), id);
        self.surfaces.push(bytes);
        id
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    /// Half-open id range of atomic tool tokens.
    pub fn atomic_range(&self) -> Range<u32> {
        self.base_size as u32..self.atomic_end as u32
    }

    pub fn is_base(&self, id: TokenId) -> bool {
        id.index() < self.base_size
    }

    pub fn is_atomic(&self, id: TokenId) -> bool {
        self.atomic_range().contains(&id.0)
    }

    /// Token for the single byte `b`, e.g. a decimal digit.
    pub fn byte_token(&self, b: u8) -> TokenId {
        TokenId(b as u32)
    }

    /// Exact lookup of a matchable surface.
    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.entries.get(surface.as_bytes()).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&[u8]> {
        self.surfaces.get(id.index()).map(Vec::as_slice)
    }

    /// Adds one token per surface. Returned ids are contiguous and ascending.
    pub fn add_atomic_tokens<S: AsRef<str>>(&mut self, surfaces: &[S]) -> Result<Vec<TokenId>> {
        let mut seen = std::collections::HashSet::new();
        for s in surfaces {
            let s = s.as_ref();
            if s.is_empty() || self.entries.contains_key(s.as_bytes()) || !seen.insert(s) {
                return Err(Error::DuplicateSurface(s.to_string()));
            }
        }
        if self.atomic_end != self.surfaces.len() {
            unreachable!("atomic tokens must stay at the end of the vocabulary");
        }
        let ids = surfaces
            .iter()
            .map(|s| self.push_entry(s.as_ref().as_bytes().to_vec()))
            .collect::<Vec<_>>();
        self.atomic_end = self.surfaces.len();
        Ok(ids)
    }

    /// Greedy longest-match encoding with byte fallback.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let mut pos = 0;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            let (id, len) = self.lengths[rest[0] as usize]
                .iter()
                .filter(|&&l| l <= rest.len())
                .find_map(|&l| self.entries.get(&rest[..l]).map(|&id| (id, l)))
                .unwrap_or((TokenId(rest[0] as u32), 1));
            out.push(id);
            pos += len;
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter()
            .filter_map(|&id| self.surface(id))
            .flatten()
            .copied()
            .collect()
    }

    /// Concatenated surfaces; invalid UTF-8 (only possible for arbitrary
    /// byte-token sequences) is replaced lossily.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// Writes the line-oriented `surface<TAB>id` format with its header.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{VOCAB_HEADER}")?;
        writeln!(w, "#base_size\t{}", self.base_size)?;
        writeln!(w, "#eos\t{}", self.eos)?;
        writeln!(w, "#pad\t{}", self.pad)?;
        let r = self.atomic_range();
        writeln!(w, "#atomic_range\t{}\t{}", r.start, r.end)?;
        for (id, surface) in self.surfaces.iter().enumerate() {
            writeln!(w, "{}\t{}", escape(surface), id)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let bad = |field: &str, msg: &str| Error::parse("vocabulary", field, msg);
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("<eof>", "truncated file"))?
                .map_err(|e| bad("<io>", &e.to_string()))
        };
        if next()? != VOCAB_HEADER {
            return Err(bad("header", "unrecognized vocabulary header"));
        }
        let mut header = |key: &str| -> Result<Vec<usize>> {
            let line = next()?;
            let mut parts = line.split('\t');
            if parts.next() != Some(key) {
                return Err(bad(key, "missing header line"));
            }
            parts
                .map(|p| p.parse::<usize>().map_err(|_| bad(key, "not an integer")))
                .collect()
        };
        let base_size = header("#base_size")?[0];
        let eos = header("#eos")?[0];
        let pad = header("#pad")?[0];
        let atomic = header("#atomic_range")?;
        if atomic.len() != 2 || eos != 256 || pad != 257 || atomic[0] != base_size {
            return Err(bad("#atomic_range", "inconsistent header"));
        }
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            entries: HashMap::new(),
            lengths: vec![Vec::new(); 256],
            base_size,
            eos: TokenId(eos as u32),
            pad: TokenId(pad as u32),
            atomic_end: atomic[1],
        };
        for (expected, line) in (0usize..).zip(lines_rest(next)) {
            let line = line?;
            let (surface, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad("entry", "expected surface<TAB>id"))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(bad("entry", "ids must be dense and ascending"));
            }
            let bytes = unescape(surface).ok_or_else(|| bad("entry", "bad escape"))?;
            if expected == eos || expected == pad {
                vocab.surfaces.push(bytes);
            } else {
                vocab.push_entry(bytes);
            }
        }
        if vocab.surfaces.len() != vocab.atomic_end {
            return Err(bad("#atomic_range", "entry count does not match header"));
        }
        Ok(vocab)
    }
}

fn lines_rest(mut next: impl FnMut() -> Result<String>) -> impl Iterator<Item = Result<String>> {
    std::iter::from_fn(move || match next() {
        Err(Error::Parse { field, .. }) if field == "<eof>" => None,
        other => Some(other),
    })
}

fn escape(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b'x' => {
                let hex = std::str::from_utf8(bytes.get(i + 2..i + 4)?).ok()?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
            }
            _ => return None,
        }
    }
    Some(out)
}

/// Dense row-major embedding matrix, one row per token id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F> {
    dim: usize,
    data: Vec<F>,
}

impl<F: Real> EmbeddingTable<F> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            data: vec![F::zero(); rows * dim],
        }
    }

    /// Entries drawn uniformly from `[-1, 1)` with a seeded generator.
    pub fn seeded(rows: usize, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim)
            .map(|_| F::lit(rng.gen_range(-1.0..1.0)))
            .collect();
        EmbeddingTable { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, id: TokenId) -> &[F] {
        &self.data[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: TokenId) -> &mut [F] {
        &mut self.data[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    /// Appends zero rows until the table has `rows` rows.
    pub fn grow_to(&mut self, rows: usize) {
        if rows > self.rows() {
            self.data.resize(rows * self.dim, F::zero());
        }
    }
}

/// Sets an atomic token's row to the mean of the base-token rows that `name`
/// encodes to, and returns the written row.
pub fn init_embedding<F: Real>(
    vocab: &Vocabulary,
    table: &mut EmbeddingTable<F>,
    token: TokenId,
    name: &str,
) -> Result<Vec<F>> {
    if !vocab.is_atomic(token) {
        return Err(Error::NotAtomic(token.0));
    }
    let base: Vec<TokenId> = vocab
        .encode(name)
        .into_iter()
        .filter(|&t| vocab.is_base(t))
        .collect();
    if base.is_empty() {
        return Err(Error::EmptyName(name.to_string()));
    }
    table.grow_to(vocab.len());
    let mut mean = vec![F::zero(); table.dim()];
    for &t in &base {
        for (m, &v) in mean.iter_mut().zip(table.row(t)) {
            *m = *m + v;
        }
    }
    let n = F::from_count(base.len());
    for m in &mut mean {
        *m = *m / n;
    }
    table.row_mut(token).copy_from_slice(&mean);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vocab() -> Vocabulary {
        Vocabulary::with_pieces(["get", "video", " details", "ab", "abc"])
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        assert!(small_vocab().encode("").is_empty());
    }

    #[test]
    fn exact_entry_is_one_token() {
        let v = small_vocab();
        assert_eq!(v.encode("video"), vec![v.id_of("video").unwrap()]);
        assert_eq!(v.encode("abc").len(), 1);
        assert_eq!(v.encode("abd"), vec![v.id_of("ab").unwrap(), TokenId(b'd' as u32)]);
    }

    #[test]
    fn atomic_tokens_are_contiguous_and_single() {
        let mut v = small_vocab();
        let base = v.base_size();
        let s = "<<Youtube Hub&&Get Video Details>>";
        let ids = v.add_atomic_tokens(&[s, "<<A&&B>>"]).unwrap();
        assert_eq!(ids, vec![TokenId(base as u32), TokenId(base as u32 + 1)]);
        assert_eq!(v.encode(s), vec![ids[0]]);
        assert_eq!(v.atomic_range(), base as u32..base as u32 + 2);
        assert_eq!(v.decode(&v.encode(&format!("x{s}y"))), format!("x{s}y"));
    }

    #[test]
    fn adding_nothing_changes_nothing() {
        let mut v = small_vocab();
        let before = v.len();
        assert!(v.add_atomic_tokens::<&str>(&[]).unwrap().is_empty());
        assert_eq!(v.len(), before);
    }

    #[test]
    fn duplicate_surface_is_rejected() {
        let mut v = small_vocab();
        v.add_atomic_tokens(&["<<A&&B>>"]).unwrap();
        let err = v.add_atomic_tokens(&["<<A&&B>>"]).unwrap_err();
        assert!(err.to_string().contains("<<A&&B>>"));
        assert!(v.add_atomic_tokens(&["<<C>>", "<<C>>"]).is_err());
        assert!(v.add_atomic_tokens(&["video"]).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let mut v = Vocabulary::with_pieces(["tab\there", "back\\slash", "é"]);
        v.add_atomic_tokens(&["<<x&&y>>"]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let again = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(again.len(), v.len());
        assert_eq!(again.atomic_range(), v.atomic_range());
        for text in ["tab\there back\\slash é", "<<x&&y>>", "plain"] {
            assert_eq!(again.encode(text), v.encode(text));
        }
    }

    #[test]
    fn corpus_pieces_are_deterministic() {
        let texts = ["get video details", "get video", "get"];
        let a = Vocabulary::from_corpus(texts, 3);
        let b = Vocabulary::from_corpus(texts, 3);
        assert_eq!(a.len(), b.len());
        assert_eq!(a.encode("get video"), b.encode("get video"));
        assert!(a.id_of("get").is_some());
    }

    #[test]
    fn singleton_name_copies_row() {
        let mut v = small_vocab();
        let t = v.add_atomic_tokens(&["<<tool>>"]).unwrap()[0];
        let mut table = EmbeddingTable::<f64>::seeded(v.base_size(), 4, 7);
        let row = init_embedding(&v, &mut table, t, "video").unwrap();
        assert_eq!(row, table.row(v.id_of("video").unwrap()).to_vec());
        assert_eq!(table.rows(), v.len());
    }

    #[test]
    fn two_token_mean() {
        let mut v = Vocabulary::bytes_only();
        let t = v.add_atomic_tokens(&["<<xy>>"]).unwrap()[0];
        let mut table = EmbeddingTable::<f32>::zeros(v.len(), 2);
        table.row_mut(TokenId(b'x' as u32)).copy_from_slice(&[0.0, 2.0]);
        table.row_mut(TokenId(b'y' as u32)).copy_from_slice(&[2.0, 0.0]);
        assert_eq!(init_embedding(&v, &mut table, t, "xy").unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn embedding_errors() {
        let mut v = Vocabulary::bytes_only();
        let t = v.add_atomic_tokens(&["<<xy>>"]).unwrap()[0];
        let mut table = EmbeddingTable::<f64>::zeros(v.len(), 2);
        assert!(matches!(init_embedding(&v, &mut table, t, ""), Err(Error::EmptyName(_))));
        // a name made only of atomic tokens has no base tokens to average
        assert!(matches!(
            init_embedding(&v, &mut table, t, "<<xy>>"),
            Err(Error::EmptyName(_))
        ));
        assert!(matches!(
            init_embedding(&v, &mut table, TokenId(3), "x"),
            Err(Error::NotAtomic(3))
        ));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "\\PC{0,40}", extra in prop::collection::vec("[a-z<>&]{2,6}", 0..8)) {
            let mut v = Vocabulary::with_pieces(extra.iter());
            let _ = v.add_atomic_tokens(&["<<a&&b>>"]);
            prop_assert_eq!(v.decode(&v.encode(&s)), s);
        }

        #[test]
        fn base_ids_survive_expansion(words in prop::collection::btree_set("[a-z]{2,5}", 1..10)) {
            let mut v = Vocabulary::with_pieces(words.iter());
            let before: Vec<_> = words.iter().map(|w| v.id_of(w)).collect();
            let surfaces: Vec<String> = words.iter().map(|w| format!("<<{w}>>")).collect();
            v.add_atomic_tokens(&surfaces).unwrap();
            let after: Vec<_> = words.iter().map(|w| v.id_of(w)).collect();
            prop_assert_eq!(before, after);
            for s in &surfaces {
                prop_assert_eq!(v.encode(s).len(), 1);
            }
        }

        #[test]
        fn mean_matches_recomputation(name in "[a-e ]{1,12}", seed in any::<u64>()) {
            let mut v = Vocabulary::with_pieces(["ab", "cd", " e"]);
            let t = v.add_atomic_tokens(&["<<t>>"]).unwrap()[0];
            let mut table = EmbeddingTable::<f64>::seeded(v.len(), 3, seed);
            let got = init_embedding(&v, &mut table, t, &name).unwrap();
            // recompute from the surfaces directly rather than through encode
            let mut pieces = Vec::new();
            let bytes = name.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                let two = bytes.get(i..i + 2).and_then(|b| std::str::from_utf8(b).ok());
                match two {
                    Some(p) if ["ab", "cd", " e"].contains(&p) => { pieces.push(v.id_of(p).unwrap()); i += 2; }
                    _ => { pieces.push(TokenId(bytes[i] as u32)); i += 1; }
                }
            }
            for d in 0..3 {
                let want = pieces.iter().map(|&p| table.row(p)[d]).sum::<f64>() / pieces.len() as f64;
                prop_assert!((got[d] - want).abs() < 1e-12);
            }
        }
    }
}
