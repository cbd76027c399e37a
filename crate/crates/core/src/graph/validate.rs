use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Attrs, Graph, NodeId, OpKind, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateId,
    Ordering,
    Arity,
    Attr,
    Shape,
    Root,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "{id}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

fn strictly_increasing_below(v: &[usize], bound: usize) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&d| d < bound)
}

/// Shape of a node of `kind` with the given operand shapes and attributes.
///
/// `declared` is the node's own shape; Parameter, Constant, Reshape and
/// Broadcast take their result shape from it.
pub fn expected_shape(
    kind: OpKind,
    operands: &[&TensorShape],
    attrs: &Attrs,
    declared: &TensorShape,
) -> Result<TensorShape, String> {
    if operands.len() != kind.arity() {
        return Err(format!(
            "{kind} expects {} operands, got {}",
            kind.arity(),
            operands.len()
        ));
    }
    let attrs_ok = matches!(
        (kind, attrs),
        (OpKind::Constant, Attrs::Literal(_))
            | (OpKind::Transpose, Attrs::Perm(_))
            | (OpKind::Broadcast, Attrs::BroadcastDims(_))
            | (OpKind::ReduceSum, Attrs::ReduceDims(_))
    ) || (matches!(attrs, Attrs::None)
        && !matches!(
            kind,
            OpKind::Constant | OpKind::Transpose | OpKind::Broadcast | OpKind::ReduceSum
        ));
    if !attrs_ok {
        return Err(format!("{kind} has mismatched attributes {attrs:?}"));
    }
    match kind {
        OpKind::Parameter => Ok(declared.clone()),
        OpKind::Constant => {
            let lit = attrs.literal().unwrap_or_default();
            if lit.len() != declared.element_count() {
                return Err(format!("literal has {} values for shape {declared}", lit.len()));
            }
            Ok(declared.clone())
        }
        k if k.is_elementwise_binary() => {
            if operands[0] != operands[1] {
                return Err(format!("{k} operand shapes differ: {} vs {}", operands[0], operands[1]));
            }
            Ok(operands[0].clone())
        }
        k if k.is_elementwise_unary() => Ok(operands[0].clone()),
        OpKind::Dot => {
            let (a, b) = (operands[0], operands[1]);
            if a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[0] {
                return Err(format!("dot needs [m,k]x[k,n], got {a} x {b}"));
            }
            Ok(TensorShape::new([a.dims[0], b.dims[1]]))
        }
        OpKind::Transpose => {
            let Attrs::Perm(perm) = attrs else { unreachable!() };
            let a = operands[0];
            let mut seen = vec![false; a.rank()];
            let valid = perm.len() == a.rank()
                && perm
                    .iter()
                    .all(|&p| p < a.rank() && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(format!("perm {perm:?} is not a permutation of rank {}", a.rank()));
            }
            Ok(TensorShape::new(perm.iter().map(|&p| a.dims[p]).collect::<Vec<_>>()))
        }
        OpKind::Reshape => {
            if operands[0].element_count() != declared.element_count() {
                return Err(format!("reshape {} -> {declared} changes element count", operands[0]));
            }
            Ok(declared.clone())
        }
        OpKind::Broadcast => {
            let Attrs::BroadcastDims(map) = attrs else {
                unreachable!()
            };
            let a = operands[0];
            let valid = map.len() == a.rank()
                && strictly_increasing_below(map, declared.rank())
                && map.iter().enumerate().all(|(i, &t)| a.dims[i] == declared.dims[t]);
            if !valid {
                return Err(format!("broadcast {a} -> {declared} with dims {map:?} is invalid"));
            }
            Ok(declared.clone())
        }
        OpKind::ReduceSum => {
            let Attrs::ReduceDims(red) = attrs else { unreachable!() };
            let a = operands[0];
            if !strictly_increasing_below(red, a.rank()) {
                return Err(format!("reduce dims {red:?} invalid for {a}"));
            }
            Ok(TensorShape::new(
                a.dims
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !red.contains(i))
                    .map(|(_, &d)| d)
                    .collect::<Vec<_>>(),
            ))
        }
        _ => unreachable!("all kinds covered"),
    }
}

/// Returns every invariant violation in `graph`; empty means valid.
pub fn validate(graph: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut shapes: std::collections::HashMap<NodeId, &TensorShape> = Default::default();
    let all_ids: HashSet<NodeId> = graph.nodes.iter().map(|n| n.id).collect();

    for node in &graph.nodes {
        let here = Some(node.id);
        if !seen.insert(node.id) {
            out.push(Violation {
                node: here,
                kind: ViolationKind::DuplicateId,
                message: "duplicate node id".into(),
            });
            continue;
        }
        if node.shape.dims.contains(&0) {
            out.push(Violation {
                node: here,
                kind: ViolationKind::Shape,
                message: format!("shape {} has a zero dimension", node.shape),
            });
        }
        if node.operands.len() != node.kind.arity() {
            out.push(Violation {
                node: here,
                kind: ViolationKind::Arity,
                message: format!(
                    "{} expects {} operands, got {}",
                    node.kind,
                    node.kind.arity(),
                    node.operands.len()
                ),
            });
            continue;
        }
        let mut ordered = true;
        for op in &node.operands {
            if !shapes.contains_key(op) {
                ordered = false;
                let message = if all_ids.contains(op) {
                    format!("operand {op} appears after its use")
                } else {
                    format!("operand {op} does not exist")
                };
                out.push(Violation {
                    node: here,
                    kind: ViolationKind::Ordering,
                    message,
                });
            }
        }
        if ordered {
            let operand_shapes: Vec<&TensorShape> = node.operands.iter().map(|o| shapes[o]).collect();
            match expected_shape(node.kind, &operand_shapes, &node.attrs, &node.shape) {
                Ok(s) if s == node.shape => {}
                Ok(s) => out.push(Violation {
                    node: here,
                    kind: ViolationKind::Shape,
                    message: format!("declared shape {} but rule gives {s}", node.shape),
                }),
                Err(message) => out.push(Violation {
                    node: here,
                    kind: if message.contains("attributes") {
                        ViolationKind::Attr
                    } else {
                        ViolationKind::Shape
                    },
                    message,
                }),
            }
        }
        shapes.insert(node.id, &node.shape);
    }

    if !all_ids.contains(&graph.root) {
        out.push(Violation {
            node: None,
            kind: ViolationKind::Root,
            message: format!("root {} is not a node", graph.root),
        });
    }
    out
}
