use serde::{Deserialize, Serialize};

use super::{Graph, OpKind};

/// Length of the observation vector: total op count followed by one slot
/// per [`OpKind`].
pub const OBSERVATION_LEN: usize = OpKind::COUNT + 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostAnalysis {
    /// Non-parameter nodes, reachable or not.
    pub op_count: u64,
    pub per_kind: [u64; OpKind::COUNT],
    pub flop_count: u64,
    pub transcendental_count: u64,
}

pub fn cost_analysis(graph: &Graph) -> CostAnalysis {
    let mut per_kind = [0u64; OpKind::COUNT];
    let mut flops = 0u64;
    let mut transcendental = 0u64;
    let shape_of = |id| graph.node(id).map(|n| &n.shape);
    for node in &graph.nodes {
        per_kind[node.kind.index()] += 1;
        let out = node.shape.element_count() as u64;
        flops += match node.kind {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide | OpKind::Negate | OpKind::Maximum => {
                out
            }
            OpKind::Exp | OpKind::Log | OpKind::Tanh => {
                transcendental += out;
                out
            }
            OpKind::Dot => {
                let k = node
                    .operands
                    .first()
                    .and_then(|&a| shape_of(a))
                    .and_then(|s| s.dims.get(1).copied())
                    .unwrap_or(0) as u64;
                2 * out * k
            }
            OpKind::ReduceSum => node
                .operands
                .first()
                .and_then(|&a| shape_of(a))
                .map_or(0, |s| s.element_count() as u64),
            OpKind::Parameter | OpKind::Constant | OpKind::Transpose | OpKind::Reshape | OpKind::Broadcast => 0,
        };
    }
    let op_count = per_kind.iter().sum::<u64>() - per_kind[OpKind::Parameter.index()];
    CostAnalysis {
        op_count,
        per_kind,
        flop_count: flops,
        transcendental_count: transcendental,
    }
}

/// Raw per-kind operation counts exposed to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn from_cost(cost: &CostAnalysis) -> Self {
        let mut v = Vec::with_capacity(OBSERVATION_LEN);
        v.push(cost.op_count as f64);
        v.extend(cost.per_kind.iter().map(|&c| c as f64));
        Self(v)
    }

    pub fn total(&self) -> f64 {
        self.0[0]
    }

    pub fn slot(&self, kind: OpKind) -> f64 {
        self.0[1 + kind.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn observation(graph: &Graph) -> Observation {
    Observation::from_cost(&cost_analysis(graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    #[test]
    fn add_of_parameters() {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([4]);
        let y = b.parameter([4]);
        let s = b.add(x, y).unwrap();
        let c = cost_analysis(&b.finish(s));
        assert_eq!((c.op_count, c.flop_count, c.transcendental_count), (1, 4, 0));
    }

    #[test]
    fn dot_flops() {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([2, 3]);
        let y = b.parameter([3, 4]);
        let d = b.dot(x, y).unwrap();
        assert_eq!(cost_analysis(&b.finish(d)).flop_count, 48);
    }

    #[test]
    fn exp_and_add_over_eight_elements() {
        // Exp[8] contributes 8 flops and 8 transcendentals, Add[8] another 8 flops.
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([8]);
        let e = b.exp(x).unwrap();
        let s = b.add(e, x).unwrap();
        let c = cost_analysis(&b.finish(s));
        assert_eq!((c.flop_count, c.transcendental_count), (16, 8));
    }

    #[test]
    fn reduce_sum_counts_input_elements() {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([3, 5]);
        let r = b.reduce_sum(x, vec![0, 1]).unwrap();
        assert_eq!(cost_analysis(&b.finish(r)).flop_count, 15);
    }

    #[test]
    fn parameter_root_observation() {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([2]);
        let obs = observation(&b.finish(x));
        let mut expected = vec![0.0; OBSERVATION_LEN];
        expected[1] = 1.0;
        assert_eq!(obs.0, expected);
    }

    #[test]
    fn observation_slots() {
        let mut b = GraphBuilder::new("g");
        let p: Vec<_> = (0..3).map(|_| b.parameter([2])).collect();
        let a = b.add(p[0], p[1]).unwrap();
        let a2 = b.add(a, p[2]).unwrap();
        let e = b.exp(a2).unwrap();
        let obs = observation(&b.finish(e));
        assert_eq!(obs.total(), 3.0);
        assert_eq!(obs.slot(OpKind::Add), 2.0);
        assert_eq!(obs.slot(OpKind::Exp), 1.0);
        assert_eq!(obs.slot(OpKind::Parameter), 3.0);
    }
}
