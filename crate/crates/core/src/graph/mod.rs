//! Miniature HLO-like tensor-graph IR.
//!
//! A [`Graph`] is a topologically ordered list of [`Node`]s with a single
//! root. Operands always refer to nodes that appear earlier in the list, so
//! graphs are acyclic by construction. The submodules provide validation, a
//! reference interpreter, cost analysis and a line-oriented text format.

mod builder;
mod cost;
mod eval;
mod text;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use builder::GraphBuilder;
pub use cost::{cost_analysis, observation, CostAnalysis, Observation, OBSERVATION_LEN};
pub use eval::{eval_node, evaluate, evaluate_all, Bindings, Tensor};
pub use text::{emit_text, parse_text, ParseError};
pub use validate::{expected_shape, validate, Violation};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("binding error: {0}")]
    Binding(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Element type. The IR only models single-precision tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DType {
    #[default]
    F32,
}

/// Dimensions of a dense tensor; an empty list is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TensorShape {
    pub dims: Vec<usize>,
    pub dtype: DType,
}

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Self {
            dims: dims.into(),
            dtype: DType::F32,
        }
    }

    pub fn scalar() -> Self {
        Self::new(Vec::new())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f32[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Operation kinds. The declaration order is the observation layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Parameter,
    Constant,
    Add,
    Subtract,
    Multiply,
    Divide,
    Negate,
    Maximum,
    Exp,
    Log,
    Tanh,
    Dot,
    Transpose,
    Reshape,
    Broadcast,
    ReduceSum,
}

impl OpKind {
    pub const COUNT: usize = 16;

    pub const ALL: [OpKind; Self::COUNT] = [
        OpKind::Parameter,
        OpKind::Constant,
        OpKind::Add,
        OpKind::Subtract,
        OpKind::Multiply,
        OpKind::Divide,
        OpKind::Negate,
        OpKind::Maximum,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Tanh,
        OpKind::Dot,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Broadcast,
        OpKind::ReduceSum,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_transcendental(self) -> bool {
        matches!(self, OpKind::Exp | OpKind::Log | OpKind::Tanh)
    }

    pub fn is_elementwise_binary(self) -> bool {
        matches!(
            self,
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide | OpKind::Maximum
        )
    }

    pub fn is_elementwise_unary(self) -> bool {
        matches!(self, OpKind::Negate | OpKind::Exp | OpKind::Log | OpKind::Tanh)
    }

    pub fn arity(self) -> usize {
        match self {
            OpKind::Parameter | OpKind::Constant => 0,
            OpKind::Negate
            | OpKind::Exp
            | OpKind::Log
            | OpKind::Tanh
            | OpKind::Transpose
            | OpKind::Reshape
            | OpKind::Broadcast
            | OpKind::ReduceSum => 1,
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide | OpKind::Maximum | OpKind::Dot => 2,
        }
    }

    /// Mnemonic used by the text format.
    pub fn mnemonic(self) -> &'static str {
        match self {
            OpKind::Parameter => "parameter",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "multiply",
            OpKind::Divide => "divide",
            OpKind::Negate => "negate",
            OpKind::Maximum => "maximum",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Tanh => "tanh",
            OpKind::Dot => "dot",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Broadcast => "broadcast",
            OpKind::ReduceSum => "reduce-sum",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.mnemonic() == s)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Kind-specific payload of a node.
///
/// Reshape carries no attribute: its target dims are the node's own shape.
/// Broadcast's target dims are likewise the node shape; the attribute maps
/// each source dimension to a target dimension.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub enum Attrs {
    #[default]
    None,
    /// Row-major constant values.
    Literal(Vec<f64>),
    Perm(Vec<usize>),
    BroadcastDims(Vec<usize>),
    ReduceDims(Vec<usize>),
}

// Literals compare bitwise so that NaN constants are equal to themselves and
// structural equality stays reflexive.
impl PartialEq for Attrs {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Attrs::None, Attrs::None) => true,
            (Attrs::Literal(a), Attrs::Literal(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Attrs::Perm(a), Attrs::Perm(b)) => a == b,
            (Attrs::BroadcastDims(a), Attrs::BroadcastDims(b)) => a == b,
            (Attrs::ReduceDims(a), Attrs::ReduceDims(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Attrs {}

impl std::hash::Hash for Attrs {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Attrs::None => {}
            Attrs::Literal(v) => v.iter().for_each(|x| x.to_bits().hash(state)),
            Attrs::Perm(v) | Attrs::BroadcastDims(v) | Attrs::ReduceDims(v) => v.hash(state),
        }
    }
}

impl Attrs {
    pub fn literal(&self) -> Option<&[f64]> {
        match self {
            Attrs::Literal(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: OpKind,
    pub operands: Vec<NodeId>,
    pub shape: TensorShape,
    pub attrs: Attrs,
}

impl Node {
    /// True for a constant whose every element equals `value`.
    pub fn is_splat_constant(&self, value: f64) -> bool {
        match (&self.kind, &self.attrs) {
            (OpKind::Constant, Attrs::Literal(v)) => !v.is_empty() && v.iter().all(|&x| x == value),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Graph {
    pub name: String,
    pub nodes: Vec<Node>,
    pub root: NodeId,
}

/// Structural equality: node lists and root. The name is metadata.
impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.nodes == other.nodes
    }
}

impl Eq for Graph {}

impl Graph {
    pub fn new(name: impl Into<String>, nodes: Vec<Node>, root: NodeId) -> Self {
        Self {
            name: name.into(),
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.position(id).map(|p| &self.nodes[p])
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        // Fast path for canonical graphs where ids equal positions.
        match self.nodes.get(id.0) {
            Some(n) if n.id == id => Some(id.0),
            _ => self.nodes.iter().position(|n| n.id == id),
        }
    }

    pub fn root_node(&self) -> Option<&Node> {
        self.node(self.root)
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == OpKind::Parameter)
    }

    pub fn max_id(&self) -> Option<NodeId> {
        self.nodes.iter().map(|n| n.id).max()
    }

    /// Renumbers node ids to their topological positions.
    pub fn canonicalize(&self) -> Graph {
        let map: std::collections::HashMap<NodeId, NodeId> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, NodeId(i))).collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                id: map[&n.id],
                operands: n.operands.iter().map(|o| map.get(o).copied().unwrap_or(*o)).collect(),
                ..n.clone()
            })
            .collect();
        Graph {
            name: self.name.clone(),
            nodes,
            root: map.get(&self.root).copied().unwrap_or(self.root),
        }
    }

    /// Node ids reachable from the root, as a membership mask over positions.
    pub fn reachable_mask(&self) -> Vec<bool> {
        let index: std::collections::HashMap<NodeId, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut live = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = index.get(&self.root).copied().into_iter().collect();
        while let Some(p) = stack.pop() {
            if live[p] {
                continue;
            }
            live[p] = true;
            for o in &self.nodes[p].operands {
                if let Some(&q) = index.get(o) {
                    if !live[q] {
                        stack.push(q);
                    }
                }
            }
        }
        live
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit_text(self))
    }
}
