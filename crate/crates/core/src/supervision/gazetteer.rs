use std::collections::HashMap;

use super::text::{normalize, tokenize};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

/// A linked entity mention covering tokens `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mention {
    pub entity: EntityId,
    pub start: usize,
    pub end: usize,
}

/// Entity detection and linking over a token sequence. Returned mentions
/// must be sorted and non-overlapping.
pub trait EntityLinker: Sync {
    fn link(&self, tokens: &[String]) -> Vec<Mention>;
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    entity: Option<EntityId>,
}

/// Exact string matcher over entity labels: case-insensitive after
/// whitespace normalization, leftmost-longest.
#[derive(Debug)]
pub struct Gazetteer {
    nodes: Vec<TrieNode>,
    labels: usize,
}

impl Gazetteer {
    pub fn build(kg: &KnowledgeGraph) -> Result<Self> {
        if kg.num_entities() == 0 {
            return Err(Error::EmptyVocabulary(
                "gazetteer needs at least one entity".into(),
            ));
        }
        Ok(Self::from_labels(
            kg.entities()
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| (EntityId(i as u32), l.as_str())),
        ))
    }

    /// When two labels normalize to the same token sequence the first one wins.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = (EntityId, &'a str)>) -> Self {
        let mut g = Gazetteer {
            nodes: vec![TrieNode::default()],
            labels: 0,
        };
        for (id, label) in labels {
            let tokens = tokenize(label);
            if tokens.is_empty() {
                continue;
            }
            let mut node = 0;
            for tok in tokens {
                let key = normalize(&tok);
                node = match g.nodes[node].children.get(&key) {
                    Some(&next) => next,
                    None => {
                        g.nodes.push(TrieNode::default());
                        let next = g.nodes.len() - 1;
                        g.nodes[node].children.insert(key, next);
                        next
                    }
                };
            }
            if g.nodes[node].entity.is_none() {
                g.nodes[node].entity = Some(id);
                g.labels += 1;
            }
        }
        g
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    /// Longest match starting at `start`, as (end, entity).
    fn longest_at(&self, tokens: &[String], start: usize) -> Option<(usize, EntityId)> {
        let mut node = 0;
        let mut best = None;
        for (i, tok) in tokens.iter().enumerate().skip(start) {
            match self.nodes[node].children.get(&normalize(tok)) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(e) = self.nodes[node].entity {
                best = Some((i + 1, e));
            }
        }
        best
    }
}

impl EntityLinker for Gazetteer {
    fn link(&self, tokens: &[String]) -> Vec<Mention> {
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.longest_at(tokens, i) {
                Some((end, entity)) => {
                    mentions.push(Mention {
                        entity,
                        start: i,
                        end,
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        mentions
    }
}
