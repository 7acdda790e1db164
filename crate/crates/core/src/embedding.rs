//! Deterministic text embeddings.
//!
//! `hashing-v1` is a seeded signed feature-hashing vectorizer over a bag of
//! lowercase alphanumeric tokens. Other providers can be plugged in through
//! [`EmbeddingProvider`].

use serde::{Deserialize, Serialize};

use crate::graph::{NodeKind, ReasoningGraph, DEFAULT_DIM};
use crate::util::{mix64, seeded_hash};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 0x6d65_6d6f_6772_6170;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingScheme {
    #[serde(rename = "hashing-v1")]
    HashingV1,
    #[serde(rename = "external")]
    External,
}

impl std::fmt::Display for EmbeddingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingScheme::HashingV1 => "hashing-v1",
            EmbeddingScheme::External => "external",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub scheme: EmbeddingScheme,
    pub seed: u64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            dim: DEFAULT_DIM,
            scheme: EmbeddingScheme::HashingV1,
            seed: DEFAULT_SEED,
        }
    }
}

impl EmbeddingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedding.dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Builds the provider for this spec. Only `hashing-v1` ships with the crate.
    pub fn embedder(&self) -> Result<HashingEmbedder> {
        self.validate()?;
        match self.scheme {
            EmbeddingScheme::HashingV1 => Ok(HashingEmbedder {
                dim: self.dim,
                seed: self.seed,
            }),
            EmbeddingScheme::External => Err(Error::Unsupported(
                "embedding.scheme \"external\" is an extension point with no built-in provider".into(),
            )),
        }
    }
}

/// A pure text → vector map. Outputs are unit-norm, or all-zero for text
/// without tokens.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn spec(&self) -> EmbeddingSpec {
        EmbeddingSpec {
            dim: self.dim,
            scheme: EmbeddingScheme::HashingV1,
            seed: self.seed,
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = seeded_hash(self.seed, token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if mix64(h) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        normalize(&mut v);
        v
    }

    /// Feature for a node: the kind name participates as a token so that kinds
    /// influence semantic similarity.
    pub fn node_feature(&self, kind: NodeKind, label: &str) -> Vec<f64> {
        self.embed_text(&format!("{} {}", kind.as_str(), label))
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        self.embed_text(text)
    }
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either vector is zero. Bitwise-identical
/// nonzero inputs give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Scales `v` to unit L2 norm in place; zero vectors are left alone.
pub fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Mean of node features, re-normalized. Summation runs over the features in
/// a canonical (sorted) order so the result is bitwise independent of node
/// enumeration order.
pub fn pool_graph(graph: &ReasoningGraph) -> Result<Vec<f64>> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(pool_features(graph.dim(), graph.nodes().iter().map(|n| n.feature.as_slice())))
}

pub(crate) fn pool_features<'a>(dim: usize, features: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut feats: Vec<&[f64]> = features.collect();
    feats.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut acc = vec![0.0; dim];
    for f in &feats {
        for (a, x) in acc.iter_mut().zip(f.iter()) {
            *a += x;
        }
    }
    let n = feats.len().max(1) as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    normalize(&mut acc);
    acc
}
