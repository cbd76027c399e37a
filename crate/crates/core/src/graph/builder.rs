use std::collections::HashMap;

use super::{expected_shape, Attrs, Graph, GraphError, Node, NodeId, OpKind, TensorShape};

/// Appends shape-checked nodes in topological order.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    name: String,
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            nodes: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-parameter nodes added so far.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind != OpKind::Parameter).count()
    }

    pub fn shape(&self, id: NodeId) -> &TensorShape {
        &self.nodes[self.index[&id]].shape
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[self.index[&id]]
    }

    pub fn push(
        &mut self,
        kind: OpKind,
        operands: Vec<NodeId>,
        attrs: Attrs,
        declared: TensorShape,
    ) -> Result<NodeId, GraphError> {
        let shapes: Vec<&TensorShape> = operands
            .iter()
            .map(|o| {
                self.index
                    .get(o)
                    .map(|&p| &self.nodes[p].shape)
                    .ok_or_else(|| GraphError::Shape(format!("unknown operand {o}")))
            })
            .collect::<Result<_, _>>()?;
        let shape = expected_shape(kind, &shapes, &attrs, &declared).map_err(GraphError::Shape)?;
        if shape.dims.contains(&0) {
            return Err(GraphError::Shape(format!("zero dimension in {shape}")));
        }
        let id = NodeId(self.nodes.len());
        self.index.insert(id, self.nodes.len());
        self.nodes.push(Node {
            id,
            kind,
            operands,
            shape,
            attrs,
        });
        Ok(id)
    }

    pub fn parameter(&mut self, dims: impl Into<Vec<usize>>) -> NodeId {
        self.push(OpKind::Parameter, vec![], Attrs::None, TensorShape::new(dims))
            .expect("parameter shapes are always valid")
    }

    pub fn constant(&mut self, dims: impl Into<Vec<usize>>, values: Vec<f64>) -> Result<NodeId, GraphError> {
        self.push(OpKind::Constant, vec![], Attrs::Literal(values), TensorShape::new(dims))
    }

    /// Constant with every element equal to `value`.
    pub fn splat(&mut self, dims: impl Into<Vec<usize>>, value: f64) -> NodeId {
        let shape = TensorShape::new(dims);
        let n = shape.element_count();
        self.push(OpKind::Constant, vec![], Attrs::Literal(vec![value; n]), shape)
            .expect("splat constants are always valid")
    }

    pub fn unary(&mut self, kind: OpKind, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(kind, vec![x], Attrs::None, TensorShape::scalar())
    }

    pub fn binary(&mut self, kind: OpKind, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(kind, vec![a, b], Attrs::None, TensorShape::scalar())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Subtract, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Multiply, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Divide, a, b)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Maximum, a, b)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.unary(OpKind::Negate, x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.unary(OpKind::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.unary(OpKind::Log, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.unary(OpKind::Tanh, x)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(OpKind::Dot, a, b)
    }

    pub fn transpose(&mut self, x: NodeId, perm: Vec<usize>) -> Result<NodeId, GraphError> {
        self.push(OpKind::Transpose, vec![x], Attrs::Perm(perm), TensorShape::scalar())
    }

    pub fn reshape(&mut self, x: NodeId, dims: impl Into<Vec<usize>>) -> Result<NodeId, GraphError> {
        self.push(OpKind::Reshape, vec![x], Attrs::None, TensorShape::new(dims))
    }

    pub fn broadcast(
        &mut self,
        x: NodeId,
        dims: impl Into<Vec<usize>>,
        mapping: Vec<usize>,
    ) -> Result<NodeId, GraphError> {
        self.push(
            OpKind::Broadcast,
            vec![x],
            Attrs::BroadcastDims(mapping),
            TensorShape::new(dims),
        )
    }

    pub fn reduce_sum(&mut self, x: NodeId, dims: Vec<usize>) -> Result<NodeId, GraphError> {
        self.push(
            OpKind::ReduceSum,
            vec![x],
            Attrs::ReduceDims(dims),
            TensorShape::scalar(),
        )
    }

    pub fn finish(self, root: NodeId) -> Graph {
        Graph::new(self.name, self.nodes, root)
    }
}
