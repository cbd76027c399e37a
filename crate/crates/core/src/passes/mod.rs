//! The action space: a catalog of deterministic, semantics-preserving graph
//! rewrites, plus the default pipeline used as a baseline.
//!
//! Passes other than `dce` do not remove the nodes they orphan. A rewrite
//! that bypasses `Multiply(x, 1)` leaves the constant `1` behind until `dce`
//! runs, which is what makes the order of passes matter.

mod rewrite;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::Graph;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PassError {
    #[error("unknown pass id {0} (catalog has {1} passes)")]
    UnknownPass(usize, usize),
    #[error("unknown pass name `{0}`")]
    UnknownName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PassId(pub usize);

impl fmt::Display for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Built-in rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pass {
    ConstantFolding,
    Dce,
    Cse,
    IdentityElim,
    ZeroElim,
    NegNegElim,
    ExpLogElim,
    TransposeFolding,
    ReshapeFolding,
    BroadcastFolding,
    AlgebraicSimplify,
    StrengthReduceDiv,
}

impl Pass {
    pub const ALL: [Pass; 12] = [
        Pass::ConstantFolding,
        Pass::Dce,
        Pass::Cse,
        Pass::IdentityElim,
        Pass::ZeroElim,
        Pass::NegNegElim,
        Pass::ExpLogElim,
        Pass::TransposeFolding,
        Pass::ReshapeFolding,
        Pass::BroadcastFolding,
        Pass::AlgebraicSimplify,
        Pass::StrengthReduceDiv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pass::ConstantFolding => "constant-folding",
            Pass::Dce => "dce",
            Pass::Cse => "cse",
            Pass::IdentityElim => "identity-elim",
            Pass::ZeroElim => "zero-elim",
            Pass::NegNegElim => "neg-neg-elim",
            Pass::ExpLogElim => "exp-log-elim",
            Pass::TransposeFolding => "transpose-folding",
            Pass::ReshapeFolding => "reshape-folding",
            Pass::BroadcastFolding => "broadcast-folding",
            Pass::AlgebraicSimplify => "algebraic-simplify",
            Pass::StrengthReduceDiv => "strength-reduce-div",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Pass::ConstantFolding => "replace ops whose operands are all constants by their value",
            Pass::Dce => "remove nodes unreachable from the root",
            Pass::Cse => "merge structurally identical nodes, keeping the earliest",
            Pass::IdentityElim => "x+0, x*1, x-0, x/1 -> x",
            Pass::ZeroElim => "x*0 -> 0",
            Pass::NegNegElim => "-(-x) -> x",
            Pass::ExpLogElim => "exp(log(x)) -> x, log(exp(x)) -> x",
            Pass::TransposeFolding => "compose nested transposes, dropping identities",
            Pass::ReshapeFolding => "compose nested reshapes, dropping no-op reshapes",
            Pass::BroadcastFolding => "compose nested broadcasts, dropping no-op broadcasts",
            Pass::AlgebraicSimplify => "x-x -> 0, x/x -> 1, max(x,x) -> x",
            Pass::StrengthReduceDiv => "x/c -> x*(1/c) for nonzero constant c",
        }
    }

    pub fn run(self, graph: &Graph) -> Graph {
        match self {
            Pass::ConstantFolding => rules::constant_folding(graph),
            Pass::Dce => rules::dce(graph),
            Pass::Cse => rules::cse(graph),
            Pass::IdentityElim => rules::identity_elim(graph),
            Pass::ZeroElim => rules::zero_elim(graph),
            Pass::NegNegElim => rules::neg_neg_elim(graph),
            Pass::ExpLogElim => rules::exp_log_elim(graph),
            Pass::TransposeFolding => rules::transpose_folding(graph),
            Pass::ReshapeFolding => rules::reshape_folding(graph),
            Pass::BroadcastFolding => rules::broadcast_folding(graph),
            Pass::AlgebraicSimplify => rules::algebraic_simplify(graph),
            Pass::StrengthReduceDiv => rules::strength_reduce_div(graph),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassInfo {
    pub id: PassId,
    pub name: String,
    pub description: String,
    pub pass: Pass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    passes: Vec<PassInfo>,
    default_pipeline: Vec<PassId>,
    default_pipeline_rounds: usize,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl Catalog {
    /// The twelve built-in passes in their canonical order, with the default
    /// pipeline run for up to three rounds.
    pub fn standard() -> Self {
        let passes: Vec<PassInfo> = Pass::ALL
            .iter()
            .enumerate()
            .map(|(i, &p)| PassInfo {
                id: PassId(i),
                name: p.name().to_string(),
                description: p.description().to_string(),
                pass: p,
            })
            .collect();
        let id_of = |p: Pass| PassId(Pass::ALL.iter().position(|&q| q == p).unwrap());
        let default_pipeline = [
            Pass::ConstantFolding,
            Pass::IdentityElim,
            Pass::ZeroElim,
            Pass::NegNegElim,
            Pass::ExpLogElim,
            Pass::TransposeFolding,
            Pass::ReshapeFolding,
            Pass::BroadcastFolding,
            Pass::AlgebraicSimplify,
            Pass::StrengthReduceDiv,
            Pass::Cse,
            Pass::Dce,
        ]
        .into_iter()
        .map(id_of)
        .collect();
        Self {
            passes,
            default_pipeline,
            default_pipeline_rounds: 3,
        }
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    pub fn passes(&self) -> &[PassInfo] {
        &self.passes
    }

    pub fn default_pipeline(&self) -> &[PassId] {
        &self.default_pipeline
    }

    pub fn default_pipeline_rounds(&self) -> usize {
        self.default_pipeline_rounds
    }

    pub fn get(&self, id: PassId) -> Result<&PassInfo, PassError> {
        self.passes
            .get(id.0)
            .ok_or(PassError::UnknownPass(id.0, self.passes.len()))
    }

    pub fn id_by_name(&self, name: &str) -> Result<PassId, PassError> {
        self.passes
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.id)
            .ok_or_else(|| PassError::UnknownName(name.to_string()))
    }

    pub fn name(&self, id: PassId) -> &str {
        self.passes.get(id.0).map_or("?", |p| p.name.as_str())
    }

    /// SHA-256 over the newline-joined pass names. Checkpoints store it so
    /// that action indices are never reinterpreted against another catalog.
    pub fn fingerprint(&self) -> String {
        let joined = self
            .passes
            .iter()
            .map(|p| p.name.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        hex::encode(Sha256::digest(joined.as_bytes()))
    }

    /// `id<TAB>name<TAB>description` per pass.
    pub fn listing(&self) -> String {
        self.passes
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.id, p.name, p.description))
            .collect()
    }

    /// Applies one pass. `changed` is true iff the result differs structurally.
    pub fn apply_pass(&self, graph: &Graph, id: PassId) -> Result<(Graph, bool), PassError> {
        let info = self.get(id)?;
        let out = info.pass.run(graph);
        let changed = out != *graph;
        Ok((out, changed))
    }

    pub fn run_pipeline(&self, graph: &Graph, sequence: &[PassId]) -> Result<Graph, PassError> {
        let mut g = graph.clone();
        for &id in sequence {
            g = self.apply_pass(&g, id)?.0;
        }
        Ok(g)
    }

    /// Runs the default pipeline until a round changes nothing or the round
    /// limit is reached.
    pub fn run_default_pipeline(&self, graph: &Graph) -> Graph {
        let mut g = graph.clone();
        for _ in 0..self.default_pipeline_rounds {
            let mut any = false;
            for &id in &self.default_pipeline {
                let (next, changed) = self
                    .apply_pass(&g, id)
                    .expect("default pipeline only names catalog passes");
                any |= changed;
                g = next;
            }
            if !any {
                break;
            }
        }
        g
    }
}
