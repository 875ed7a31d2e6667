//! Disjunctive trie over tool token sequences.
//!
//! Each inserted sequence is stored with the terminator (the vocabulary's
//! `eos`) appended, so "this prefix is a complete tool" is answered by the
//! trie itself: the terminator shows up among the feasible next tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Arena index of a trie node. The root is `NodeId(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<TokenId, NodeId>,
    terminal: bool,
}

#[derive(Debug, Clone)]
pub struct DisjunctiveTrie {
    nodes: Vec<Node>,
    terminator: TokenId,
    leaves: usize,
    max_len: usize,
}

impl DisjunctiveTrie {
    pub const ROOT: NodeId = NodeId(0);

    /// Inserts every sequence followed by `terminator`. Repeated sequences
    /// are stored once.
    pub fn build<S: AsRef<[TokenId]>>(
        sequences: impl IntoIterator<Item = S>,
        terminator: TokenId,
    ) -> Result<Self> {
        let mut trie = DisjunctiveTrie {
            nodes: vec![Node::default()],
            terminator,
            leaves: 0,
            max_len: 0,
        };
        for (i, seq) in sequences.into_iter().enumerate() {
            let seq = seq.as_ref();
            if seq.is_empty() {
                return Err(Error::EmptySequence(i));
            }
            if seq.contains(&terminator) {
                return Err(Error::TerminatorInSequence(i));
            }
            let mut level = Self::ROOT;
            for &id in seq.iter().chain(std::iter::once(&terminator)) {
                level = match trie.nodes[level.0 as usize].children.get(&id) {
                    Some(&child) => child,
                    None => {
                        let child = NodeId(trie.nodes.len() as u32);
                        trie.nodes.push(Node::default());
                        trie.nodes[level.0 as usize].children.insert(id, child);
                        child
                    }
                };
            }
            let end = &mut trie.nodes[level.0 as usize];
            if !end.terminal {
                end.terminal = true;
                trie.leaves += 1;
                trie.max_len = trie.max_len.max(seq.len());
            }
        }
        if trie.leaves == 0 {
            return Err(Error::EmptyTrie);
        }
        Ok(trie)
    }

    pub fn terminator(&self) -> TokenId {
        self.terminator
    }

    /// Number of distinct inserted sequences.
    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Length of the longest inserted sequence, terminator excluded.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn child(&self, node: NodeId, id: TokenId) -> Option<NodeId> {
        self.nodes[node.0 as usize].children.get(&id).copied()
    }

    /// Child keys of `node` in ascending id order.
    pub fn children(&self, node: NodeId) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = self.nodes[node.0 as usize].children.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        self.nodes[node.0 as usize].terminal
    }

    pub fn walk(&self, prefix: &[TokenId]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(Self::ROOT, |node, &id| self.child(node, id))
    }

    /// Tokens that may follow `prefix`; empty when `prefix` is not a path.
    pub fn feasible_next(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        self.walk(prefix)
            .map(|node| self.children(node))
            .unwrap_or_default()
    }

    /// Whether `seq` followed by the terminator is an inserted entry.
    pub fn is_complete(&self, seq: &[TokenId]) -> bool {
        self.walk(seq)
            .and_then(|node| self.child(node, self.terminator))
            .is_some_and(|end| self.is_terminal(end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn t(ids: &[u32]) -> Vec<TokenId> {
        ids.iter().map(|&i| TokenId(i)).collect()
    }

    fn fixture() -> DisjunctiveTrie {
        DisjunctiveTrie::build([t(&[5, 7]), t(&[5, 8]), t(&[9])], TokenId(0)).unwrap()
    }

    #[test]
    fn hand_built_structure() {
        let trie = fixture();
        assert_eq!(trie.feasible_next(&[]), t(&[5, 9]));
        assert_eq!(trie.feasible_next(&t(&[5])), t(&[7, 8]));
        assert_eq!(trie.feasible_next(&t(&[9])), t(&[0]));
        assert!(trie.feasible_next(&t(&[9, 0])).is_empty());
        assert!(trie.feasible_next(&t(&[4])).is_empty());
        assert!(trie.is_complete(&t(&[5, 7])));
        assert!(!trie.is_complete(&t(&[5])));
        assert!(!trie.is_complete(&t(&[7])));
        assert_eq!(trie.leaf_count(), 3);
        // root, 5, 7, 7·0, 8, 8·0, 9, 9·0
        assert_eq!(trie.node_count(), 8);
    }

    #[test]
    fn single_sequence() {
        let trie = DisjunctiveTrie::build([t(&[3])], TokenId(0)).unwrap();
        assert_eq!(trie.feasible_next(&[]), t(&[3]));
        assert_eq!(trie.feasible_next(&t(&[3])), t(&[0]));
        let end = trie.walk(&t(&[3, 0])).unwrap();
        assert!(trie.is_terminal(end));
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            DisjunctiveTrie::build([t(&[1]), t(&[])], TokenId(0)),
            Err(Error::EmptySequence(1))
        ));
        assert!(matches!(
            DisjunctiveTrie::build([t(&[1, 0, 2])], TokenId(0)),
            Err(Error::TerminatorInSequence(0))
        ));
        assert!(matches!(
            DisjunctiveTrie::build(Vec::<Vec<TokenId>>::new(), TokenId(0)),
            Err(Error::EmptyTrie)
        ));
    }

    fn seq_set() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(1u32..6, 1..5), 1..25)
    }

    proptest! {
        #[test]
        fn membership_matches_hash_set(seqs in seq_set(), probes in prop::collection::vec(prop::collection::vec(1u32..6, 0..5), 0..40)) {
            let trie = DisjunctiveTrie::build(seqs.iter().map(|s| t(s)), TokenId(0)).unwrap();
            let set: HashSet<Vec<u32>> = seqs.iter().cloned().collect();
            for p in probes.iter().chain(seqs.iter()) {
                prop_assert_eq!(trie.is_complete(&t(p)), set.contains(p));
            }
            prop_assert_eq!(trie.leaf_count(), set.len());
            let total: usize = seqs.iter().map(|s| s.len() + 1).sum();
            prop_assert!(trie.node_count() <= 1 + total);
        }

        #[test]
        fn greedy_walks_terminate_at_leaves(seqs in seq_set(), picks in prop::collection::vec(any::<usize>(), 8)) {
            let trie = DisjunctiveTrie::build(seqs.iter().map(|s| t(s)), TokenId(0)).unwrap();
            let mut node = DisjunctiveTrie::ROOT;
            let mut steps = 0;
            while !trie.is_terminal(node) {
                let kids = trie.children(node);
                prop_assert!(!kids.is_empty());
                node = trie.child(node, kids[picks[steps % picks.len()] % kids.len()]).unwrap();
                steps += 1;
            }
            prop_assert!(steps <= trie.max_len() + 1);
            prop_assert!(trie.children(node).is_empty());
        }
    }
}
