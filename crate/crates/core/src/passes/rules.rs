//! The catalog's rewrite rules.

use std::collections::HashMap;

use super::rewrite::{to_fixed_point, Rewrite, Sweep};
use crate::graph::{eval_node, Attrs, Graph, Node, NodeId, OpKind, Tensor, TensorShape};

fn literal_tensor(node: &Node) -> Option<Tensor> {
    match (&node.kind, &node.attrs) {
        (OpKind::Constant, Attrs::Literal(v)) => Some(Tensor {
            shape: node.shape.clone(),
            data: v.clone(),
        }),
        _ => None,
    }
}

pub(crate) fn constant_folding(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            if n.operands.is_empty() {
                return Rewrite::Keep;
            }
            let Some(values) = n
                .operands
                .iter()
                .map(|&o| literal_tensor(s.get(o)))
                .collect::<Option<Vec<_>>>()
            else {
                return Rewrite::Keep;
            };
            let refs: Vec<&Tensor> = values.iter().collect();
            let folded = eval_node(n, &refs);
            // Non-finite results stay as computations.
            if !folded.is_finite() {
                return Rewrite::Keep;
            }
            Rewrite::Become {
                kind: OpKind::Constant,
                operands: vec![],
                attrs: Attrs::Literal(folded.data),
            }
        }
    })
}

pub(crate) fn dce(g: &Graph) -> Graph {
    let live = g.reachable_mask();
    let nodes = g
        .nodes
        .iter()
        .zip(live)
        .filter(|(n, live)| *live || n.kind == OpKind::Parameter)
        .map(|(n, _)| n.clone())
        .collect();
    Graph::new(g.name.clone(), nodes, g.root)
}

pub(crate) fn cse(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        let mut seen: HashMap<(OpKind, Vec<NodeId>, Attrs, TensorShape), NodeId> = HashMap::new();
        move |_: &mut Sweep, n: &Node| {
            // Parameters are distinct inputs even when shapes agree.
            if n.kind == OpKind::Parameter {
                return Rewrite::Keep;
            }
            let key = (n.kind, n.operands.clone(), n.attrs.clone(), n.shape.clone());
            match seen.get(&key) {
                Some(&earlier) => Rewrite::Replace(earlier),
                None => {
                    seen.insert(key, n.id);
                    Rewrite::Keep
                }
            }
        }
    })
}

pub(crate) fn identity_elim(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            if !n.kind.is_elementwise_binary() {
                return Rewrite::Keep;
            }
            let (a, b) = (n.operands[0], n.operands[1]);
            let zero = |id| s.get(id).is_splat_constant(0.0);
            let one = |id| s.get(id).is_splat_constant(1.0);
            let keep = match n.kind {
                OpKind::Add if zero(b) => Some(a),
                OpKind::Add if zero(a) => Some(b),
                OpKind::Multiply if one(b) => Some(a),
                OpKind::Multiply if one(a) => Some(b),
                OpKind::Subtract if zero(b) => Some(a),
                OpKind::Divide if one(b) => Some(a),
                _ => None,
            };
            keep.map_or(Rewrite::Keep, Rewrite::Replace)
        }
    })
}

pub(crate) fn zero_elim(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            if n.kind != OpKind::Multiply {
                return Rewrite::Keep;
            }
            // Elementwise operands share the result shape, so the zero
            // operand itself is a zero constant of the result shape.
            let (a, b) = (n.operands[0], n.operands[1]);
            if s.get(b).is_splat_constant(0.0) {
                Rewrite::Replace(b)
            } else if s.get(a).is_splat_constant(0.0) {
                Rewrite::Replace(a)
            } else {
                Rewrite::Keep
            }
        }
    })
}

fn unwrap_pair(s: &Sweep, n: &Node, outer: OpKind, inner: OpKind) -> Option<NodeId> {
    if n.kind != outer {
        return None;
    }
    let child = s.get(n.operands[0]);
    (child.kind == inner).then(|| child.operands[0])
}

pub(crate) fn neg_neg_elim(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            unwrap_pair(s, n, OpKind::Negate, OpKind::Negate).map_or(Rewrite::Keep, Rewrite::Replace)
        }
    })
}

pub(crate) fn exp_log_elim(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            unwrap_pair(s, n, OpKind::Exp, OpKind::Log)
                .or_else(|| unwrap_pair(s, n, OpKind::Log, OpKind::Exp))
                .map_or(Rewrite::Keep, Rewrite::Replace)
        }
    })
}

pub(crate) fn transpose_folding(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            let (OpKind::Transpose, Attrs::Perm(outer)) = (n.kind, &n.attrs) else {
                return Rewrite::Keep;
            };
            let child = s.get(n.operands[0]);
            let (OpKind::Transpose, Attrs::Perm(inner)) = (child.kind, &child.attrs) else {
                return Rewrite::Keep;
            };
            let source = child.operands[0];
            let composed: Vec<usize> = outer.iter().map(|&j| inner[j]).collect();
            if composed.iter().enumerate().all(|(i, &p)| i == p) {
                Rewrite::Replace(source)
            } else {
                Rewrite::Become {
                    kind: OpKind::Transpose,
                    operands: vec![source],
                    attrs: Attrs::Perm(composed),
                }
            }
        }
    })
}

pub(crate) fn reshape_folding(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            if n.kind != OpKind::Reshape {
                return Rewrite::Keep;
            }
            let child = s.get(n.operands[0]);
            if child.shape == n.shape {
                return Rewrite::Replace(child.id);
            }
            if child.kind != OpKind::Reshape {
                return Rewrite::Keep;
            }
            let source = s.get(child.operands[0]);
            if source.shape == n.shape {
                Rewrite::Replace(source.id)
            } else {
                Rewrite::Become {
                    kind: OpKind::Reshape,
                    operands: vec![source.id],
                    attrs: Attrs::None,
                }
            }
        }
    })
}

pub(crate) fn broadcast_folding(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            let (OpKind::Broadcast, Attrs::BroadcastDims(outer)) = (n.kind, &n.attrs) else {
                return Rewrite::Keep;
            };
            let child = s.get(n.operands[0]);
            if child.shape == n.shape {
                return Rewrite::Replace(child.id);
            }
            let (OpKind::Broadcast, Attrs::BroadcastDims(inner)) = (child.kind, &child.attrs) else {
                return Rewrite::Keep;
            };
            let source = s.get(child.operands[0]);
            if source.shape == n.shape {
                return Rewrite::Replace(source.id);
            }
            Rewrite::Become {
                kind: OpKind::Broadcast,
                operands: vec![source.id],
                attrs: Attrs::BroadcastDims(inner.iter().map(|&i| outer[i]).collect()),
            }
        }
    })
}

pub(crate) fn algebraic_simplify(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |_: &mut Sweep, n: &Node| {
            if n.operands.len() != 2 || n.operands[0] != n.operands[1] {
                return Rewrite::Keep;
            }
            let splat = |v: f64| Rewrite::Become {
                kind: OpKind::Constant,
                operands: vec![],
                attrs: Attrs::Literal(vec![v; n.shape.element_count()]),
            };
            match n.kind {
                OpKind::Subtract => splat(0.0),
                OpKind::Divide => splat(1.0),
                OpKind::Maximum => Rewrite::Replace(n.operands[0]),
                _ => Rewrite::Keep,
            }
        }
    })
}

pub(crate) fn strength_reduce_div(g: &Graph) -> Graph {
    to_fixed_point(g, || {
        |s: &mut Sweep, n: &Node| {
            if n.kind != OpKind::Divide {
                return Rewrite::Keep;
            }
            let divisor = s.get(n.operands[1]);
            let Some(values) = divisor.attrs.literal().filter(|_| divisor.kind == OpKind::Constant) else {
                return Rewrite::Keep;
            };
            let reciprocal: Vec<f64> = values.iter().map(|&c| 1.0 / c).collect();
            if values.contains(&0.0) || reciprocal.iter().any(|r| !r.is_finite()) {
                return Rewrite::Keep;
            }
            let shape = divisor.shape.clone();
            let c = s.fresh(OpKind::Constant, vec![], Attrs::Literal(reciprocal), shape);
            Rewrite::Become {
                kind: OpKind::Multiply,
                operands: vec![n.operands[0], c],
                attrs: Attrs::None,
            }
        }
    })
}
