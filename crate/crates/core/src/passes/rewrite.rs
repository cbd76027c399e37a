//! Single-node rewrite machinery shared by the catalog passes.
//!
//! A sweep walks the graph in topological order. Each node is first given
//! operands remapped through earlier replacements, then offered to a rule
//! which may keep it, replace it by an existing node (the rewritten node is
//! dropped and its uses redirected), or turn it in place into a different
//! operation. Operands orphaned by a rewrite are left in the graph.

use std::collections::HashMap;

use crate::graph::{Attrs, Graph, Node, NodeId, OpKind, TensorShape};

pub(crate) enum Rewrite {
    Keep,
    Replace(NodeId),
    Become {
        kind: OpKind,
        operands: Vec<NodeId>,
        attrs: Attrs,
    },
}

pub(crate) struct Sweep {
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    subst: HashMap<NodeId, NodeId>,
    next_id: usize,
}

impl Sweep {
    pub(crate) fn get(&self, id: NodeId) -> &Node {
        &self.nodes[self.index[&id]]
    }

    /// Inserts a new node ahead of the node currently being rewritten.
    pub(crate) fn fresh(&mut self, kind: OpKind, operands: Vec<NodeId>, attrs: Attrs, shape: TensorShape) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.index.insert(id, self.nodes.len());
        self.nodes.push(Node {
            id,
            kind,
            operands,
            shape,
            attrs,
        });
        id
    }

    fn resolve(&self, mut id: NodeId) -> NodeId {
        while let Some(&next) = self.subst.get(&id) {
            id = next;
        }
        id
    }
}

/// One topological sweep. Returns the rewritten graph and whether any rule fired.
pub(crate) fn sweep(graph: &Graph, rule: &mut dyn FnMut(&mut Sweep, &Node) -> Rewrite) -> (Graph, bool) {
    let mut s = Sweep {
        nodes: Vec::with_capacity(graph.len()),
        index: HashMap::with_capacity(graph.len()),
        subst: HashMap::new(),
        next_id: graph.max_id().map_or(0, |m| m.0 + 1),
    };
    let mut fired = false;
    for original in &graph.nodes {
        let mut node = original.clone();
        for o in &mut node.operands {
            *o = s.resolve(*o);
        }
        match rule(&mut s, &node) {
            Rewrite::Keep => {}
            Rewrite::Replace(target) => {
                fired = true;
                s.subst.insert(node.id, target);
                continue;
            }
            Rewrite::Become { kind, operands, attrs } => {
                fired = true;
                node.kind = kind;
                node.operands = operands;
                node.attrs = attrs;
            }
        }
        s.index.insert(node.id, s.nodes.len());
        s.nodes.push(node);
    }
    let root = s.resolve(graph.root);
    (Graph::new(graph.name.clone(), s.nodes, root), fired)
}

/// Repeats sweeps until a sweep fires no rule. `make_rule` is called once per
/// sweep so stateful rules start fresh.
pub(crate) fn to_fixed_point<R>(graph: &Graph, mut make_rule: impl FnMut() -> R) -> Graph
where
    R: FnMut(&mut Sweep, &Node) -> Rewrite,
{
    // Every rule strictly shrinks the graph or moves it towards a normal
    // form, so this bound is never reached on valid input.
    const MAX_SWEEPS: usize = 10_000;
    let mut current = graph.clone();
    for _ in 0..MAX_SWEEPS {
        let mut rule = make_rule();
        let (next, fired) = sweep(&current, &mut rule);
        current = next;
        if !fired {
            break;
        }
    }
    current
}
