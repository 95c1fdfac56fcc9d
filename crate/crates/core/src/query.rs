//! Selective Top-K query fusion for agents that share a detection backbone.
//!
//! The sender ranks its queries by confidence and transmits only the best
//! `k`. On the ego side, selected queries are paired with ego queries through
//! their reference points; paired ego queries receive `λ · sender_sem` added
//! to their semantic half while the positional half is left as it was.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::refpts::{AgentFrame, CoordinateFrame, MatchSet, Origin, ReferencePoint};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_LAMBDA: f32 = 0.5;
pub const DEFAULT_EMBED_DIM: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("lambda must lie in (0, 1], got {0}")]
    Lambda(f32),
    #[error("query {instance_id}: positional dim {pos} and semantic dim {sem} differ or are zero")]
    MalformedQuery { instance_id: u64, pos: usize, sem: usize },
    #[error(
        "embedding dimension mismatch: ego query {ego_index} has d={ego_dim}, sender query {sender_index} has d={sender_dim}"
    )]
    DimensionMismatch {
        ego_index: usize,
        sender_index: usize,
        ego_dim: usize,
        sender_dim: usize,
    },
    #[error("pairing references ego {ego} / sender {sender} outside the query lists")]
    PairOutOfBounds { ego: usize, sender: usize },
}

/// Detector query split into positional and semantic embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub pos_embed: Vec<f32>,
    pub sem_embed: Vec<f32>,
    pub confidence: f64,
    pub reference_point: Point3,
    pub instance_id: u64,
}

impl Query {
    pub fn dim(&self) -> usize {
        self.sem_embed.len()
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let (pos, sem) = (self.pos_embed.len(), self.sem_embed.len());
        if pos != sem || sem == 0 {
            return Err(QueryError::MalformedQuery {
                instance_id: self.instance_id,
                pos,
                sem,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryFusionConfig {
    pub k: usize,
    pub lambda: f32,
    pub embed_dim: usize,
}

impl Default for QueryFusionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            lambda: DEFAULT_LAMBDA,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl QueryFusionConfig {
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.k == 0 {
            return Err(QueryError::ZeroK);
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(QueryError::Lambda(self.lambda));
        }
        Ok(())
    }
}

/// Indices of the `k` most confident queries, best first. Equal confidences
/// are ordered by ascending instance id.
pub fn top_k_indices(confidences: &[(f64, u64)], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        let (ca, ia) = confidences[*a];
        let (cb, ib) = confidences[*b];
        cb.total_cmp(&ca).then(ia.cmp(&ib))
    };
    let k = k.min(order.len());
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order.truncate(k);
    order
}

pub fn select_top_k(sender_queries: &[Query], k: usize) -> Vec<Query> {
    let keys: Vec<(f64, u64)> = sender_queries
        .iter()
        .map(|q| (q.confidence, q.instance_id))
        .collect();
    top_k_indices(&keys, k)
        .into_iter()
        .map(|i| sender_queries[i].clone())
        .collect()
}

/// Output of [`fuse_queries`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFusion {
    /// Ego queries, same order and count as the input.
    pub queries: Vec<Query>,
    /// Selected sender queries that found no ego partner, as plain reference
    /// points for geometric fusion.
    pub fallback: Vec<ReferencePoint>,
}

/// `ego.sem += λ · sender.sem` for every pair in `pairing`
/// (ego index ↔ selected-sender index).
pub fn fuse_queries(
    ego_queries: &[Query],
    selected: &[Query],
    pairing: &MatchSet,
    cfg: &QueryFusionConfig,
) -> Result<QueryFusion, QueryError> {
    cfg.validate()?;
    let mut queries = ego_queries.to_vec();
    let mut paired = vec![false; selected.len()];
    for pair in &pairing.pairs {
        let (Some(ego), Some(sender)) = (queries.get_mut(pair.ego), selected.get(pair.sender)) else {
            return Err(QueryError::PairOutOfBounds {
                ego: pair.ego,
                sender: pair.sender,
            });
        };
        if ego.sem_embed.len() != sender.sem_embed.len() {
            return Err(QueryError::DimensionMismatch {
                ego_index: pair.ego,
                sender_index: pair.sender,
                ego_dim: ego.sem_embed.len(),
                sender_dim: sender.sem_embed.len(),
            });
        }
        add_scaled(&mut ego.sem_embed, &sender.sem_embed, cfg.lambda);
        paired[pair.sender] = true;
    }
    let fallback = selected
        .iter()
        .zip(&paired)
        .filter(|(_, p)| !**p)
        .map(|(q, _)| query_reference_point(q))
        .collect();
    Ok(QueryFusion { queries, fallback })
}

/// `acc += lambda · x`, elementwise.
pub fn add_scaled(acc: &mut [f32], x: &[f32], lambda: f32) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += lambda * b;
    }
}

pub fn query_reference_point(q: &Query) -> ReferencePoint {
    ReferencePoint::new(q.instance_id, q.reference_point, q.confidence)
}

/// Reference-point view of a query list, for association.
pub fn queries_as_frame(agent_id: u32, frame_index: u64, timestamp: f64, queries: &[Query]) -> AgentFrame {
    AgentFrame {
        agent_id,
        frame_index,
        timestamp,
        points: queries
            .iter()
            .map(|q| ReferencePoint {
                origin: Origin::Local,
                ..query_reference_point(q)
            })
            .collect(),
        to_ego: None,
        coordinates: CoordinateFrame::AgentLocal,
    }
}
