use crate::supervision::Context;

/// Default hashing-trick dimension.
pub const DEFAULT_HASH_DIM: usize = 1 << 18;

/// Binary sparse feature vector: sorted, deduplicated active indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextFeatures {
    pub indices: Vec<u32>,
}

impl ContextFeatures {
    pub fn from_indices(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn distance_bucket(gap: usize) -> usize {
    match gap {
        0 => 0,
        g => ((usize::BITS - g.leading_zeros()) as usize).min(6),
    }
}

/// Hashed unigrams and bigrams of the three pieces around the mentions
/// (before, between, after), each prefixed with its piece tag, plus a
/// log-scale bucket of the token gap between the mentions. Mention tokens
/// themselves are not featurized.
pub fn featurize_context(c: &Context, hash_dim: usize) -> ContextFeatures {
    assert!(hash_dim > 0);
    let lower = |range: std::ops::Range<usize>| -> Vec<String> {
        c.tokens[range].iter().map(|t| t.to_lowercase()).collect()
    };
    let pieces = [
        ("B", lower(0..c.span1.start)),
        ("M", lower(c.span1.end..c.span2.start)),
        ("A", lower(c.span2.end..c.tokens.len())),
    ];
    let mut indices = Vec::new();
    let mut push = |s: String| indices.push((fnv1a(s.as_bytes()) % hash_dim as u64) as u32);
    for (tag, toks) in &pieces {
        for t in toks {
            push(format!("{tag}:u:{t}"));
        }
        for w in toks.windows(2) {
            push(format!("{tag}:b:{} {}", w[0], w[1]));
        }
    }
    push(format!("D:{}", distance_bucket(c.span2.start - c.span1.end)));
    ContextFeatures::from_indices(indices)
}
