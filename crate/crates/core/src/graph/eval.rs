//! Reference interpreter. Arithmetic is carried out in `f64`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Attrs, Graph, GraphError, Node, NodeId, OpKind, TensorShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self, GraphError> {
        if data.len() != shape.element_count() {
            return Err(GraphError::Shape(format!("{} values for shape {shape}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: TensorShape, value: f64) -> Self {
        let n = shape.element_count();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub type Bindings = BTreeMap<NodeId, Tensor>;

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Calls `f(flat_index, coords)` for every element of `dims` in row-major order.
fn for_each_coord(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let n: usize = dims.iter().product();
    let mut coord = vec![0usize; dims.len()];
    for flat in 0..n {
        f(flat, &coord);
        for axis in (0..dims.len()).rev() {
            coord[axis] += 1;
            if coord[axis] < dims[axis] {
                break;
            }
            coord[axis] = 0;
        }
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Evaluates a single non-parameter node given its operand values.
pub fn eval_node(node: &Node, operands: &[&Tensor]) -> Tensor {
    let shape = node.shape.clone();
    let zip = |f: fn(f64, f64) -> f64| -> Vec<f64> {
        operands[0]
            .data
            .iter()
            .zip(&operands[1].data)
            .map(|(&a, &b)| f(a, b))
            .collect()
    };
    let map = |f: fn(f64) -> f64| -> Vec<f64> { operands[0].data.iter().map(|&a| f(a)).collect() };
    let data = match node.kind {
        OpKind::Parameter => unreachable!("parameters are bound, not evaluated"),
        OpKind::Constant => node.attrs.literal().unwrap_or_default().to_vec(),
        OpKind::Add => zip(|a, b| a + b),
        OpKind::Subtract => zip(|a, b| a - b),
        OpKind::Multiply => zip(|a, b| a * b),
        OpKind::Divide => zip(|a, b| a / b),
        OpKind::Maximum => zip(nan_max),
        OpKind::Negate => map(|a| -a),
        OpKind::Exp => map(f64::exp),
        OpKind::Log => map(f64::ln),
        OpKind::Tanh => map(f64::tanh),
        OpKind::Dot => {
            let (a, b) = (operands[0], operands[1]);
            let (m, k, n) = (a.shape.dims[0], a.shape.dims[1], b.shape.dims[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = a.data[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += x * b.data[p * n + j];
                    }
                }
            }
            out
        }
        OpKind::Transpose => {
            let Attrs::Perm(perm) = &node.attrs else { unreachable!() };
            let src = operands[0];
            let in_strides = strides(&src.shape.dims);
            let mut out = vec![0.0; shape.element_count()];
            for_each_coord(&shape.dims, |flat, c| {
                let idx: usize = perm.iter().enumerate().map(|(i, &p)| c[i] * in_strides[p]).sum();
                out[flat] = src.data[idx];
            });
            out
        }
        OpKind::Reshape => operands[0].data.clone(),
        OpKind::Broadcast => {
            let Attrs::BroadcastDims(map) = &node.attrs else {
                unreachable!()
            };
            let src = operands[0];
            let in_strides = strides(&src.shape.dims);
            let mut out = vec![0.0; shape.element_count()];
            for_each_coord(&shape.dims, |flat, c| {
                let idx: usize = map.iter().enumerate().map(|(i, &t)| c[t] * in_strides[i]).sum();
                out[flat] = src.data[idx];
            });
            out
        }
        OpKind::ReduceSum => {
            let Attrs::ReduceDims(red) = &node.attrs else {
                unreachable!()
            };
            let src = operands[0];
            let out_strides = strides(&shape.dims);
            let kept: Vec<usize> = (0..src.shape.rank()).filter(|i| !red.contains(i)).collect();
            let mut out = vec![0.0; shape.element_count()];
            for_each_coord(&src.shape.dims, |flat, c| {
                let idx: usize = kept.iter().enumerate().map(|(j, &axis)| c[axis] * out_strides[j]).sum();
                out[idx] += src.data[flat];
            });
            out
        }
    };
    Tensor { shape, data }
}

/// Values of every node, in node order.
///
/// Unreachable nodes are evaluated too; this is what passes use to reason
/// about constants and what tests use to screen non-finite intermediates.
pub fn evaluate_all(graph: &Graph, bindings: &Bindings) -> Result<Vec<Tensor>, GraphError> {
    let mut pos: HashMap<NodeId, usize> = HashMap::with_capacity(graph.len());
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.len());
    for node in &graph.nodes {
        let value = if node.kind == OpKind::Parameter {
            let bound = bindings
                .get(&node.id)
                .ok_or_else(|| GraphError::Binding(format!("no binding for parameter {}", node.id)))?;
            if bound.shape.dims != node.shape.dims || bound.data.len() != node.shape.element_count() {
                return Err(GraphError::Binding(format!(
                    "parameter {} expects {}, bound {}",
                    node.id, node.shape, bound.shape
                )));
            }
            bound.clone()
        } else {
            let ops: Vec<&Tensor> = node
                .operands
                .iter()
                .map(|o| {
                    pos.get(o)
                        .map(|&p| &values[p])
                        .ok_or_else(|| GraphError::Shape(format!("operand {o} of {} unavailable", node.id)))
                })
                .collect::<Result<_, _>>()?;
            eval_node(node, &ops)
        };
        pos.insert(node.id, values.len());
        values.push(value);
    }
    Ok(values)
}

/// Value of the root node.
pub fn evaluate(graph: &Graph, bindings: &Bindings) -> Result<Tensor, GraphError> {
    let p = graph
        .position(graph.root)
        .ok_or_else(|| GraphError::Shape(format!("root {} missing", graph.root)))?;
    let mut all = evaluate_all(graph, bindings)?;
    Ok(all.swap_remove(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    #[test]
    fn add_constants() {
        let mut b = GraphBuilder::new("g");
        let x = b.constant([2], vec![1.0, 2.0]).unwrap();
        let y = b.constant([2], vec![3.0, 4.0]).unwrap();
        let s = b.add(x, y).unwrap();
        let g = b.finish(s);
        assert_eq!(evaluate(&g, &Bindings::new()).unwrap().data, vec![4.0, 6.0]);
    }

    #[test]
    fn identity_dot() {
        let mut b = GraphBuilder::new("g");
        let i = b.constant([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = b.constant([2, 2], vec![1.5, -2.0, 3.25, 7.0]).unwrap();
        let d = b.dot(i, m).unwrap();
        let g = b.finish(d);
        assert_eq!(evaluate(&g, &Bindings::new()).unwrap().data, vec![1.5, -2.0, 3.25, 7.0]);
    }

    #[test]
    fn exp_log_inverse() {
        let mut b = GraphBuilder::new("g");
        let c = b.constant([1], vec![5.0]).unwrap();
        let l = b.log(c).unwrap();
        let e = b.exp(l).unwrap();
        let g = b.finish(e);
        let v = evaluate(&g, &Bindings::new()).unwrap().data[0];
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_broadcast_reduce_index_maps() {
        let mut b = GraphBuilder::new("g");
        let c = b.constant([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = b.transpose(c, vec![1, 0]).unwrap();
        let r = b.reduce_sum(c, vec![1]).unwrap();
        let bc = b.broadcast(r, [2, 2], vec![0]).unwrap();
        let g = b.finish(bc);
        let vals = evaluate_all(&g, &Bindings::new()).unwrap();
        assert_eq!(vals[1].data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(vals[1].shape.dims, vec![3, 2]);
        assert_eq!(vals[2].data, vec![6.0, 15.0]);
        assert_eq!(vals[3].data, vec![6.0, 6.0, 15.0, 15.0]);
        assert!(t.0 == 1);
    }

    #[test]
    fn log_of_nonpositive_is_ieee_not_error() {
        let mut b = GraphBuilder::new("g");
        let c = b.constant([2], vec![0.0, -1.0]).unwrap();
        let l = b.log(c).unwrap();
        let g = b.finish(l);
        let v = evaluate(&g, &Bindings::new()).unwrap();
        assert_eq!(v.data[0], f64::NEG_INFINITY);
        assert!(v.data[1].is_nan());
    }

    #[test]
    fn binding_errors() {
        let mut b = GraphBuilder::new("g");
        let p = b.parameter([2]);
        let g = b.finish(p);
        assert!(matches!(evaluate(&g, &Bindings::new()), Err(GraphError::Binding(_))));
        let mut bad = Bindings::new();
        bad.insert(p, Tensor::filled(TensorShape::new([3]), 1.0));
        assert!(matches!(evaluate(&g, &bad), Err(GraphError::Binding(_))));
    }
}
