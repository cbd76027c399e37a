//! Synthetic benchmark graphs.
//!
//! Each graph is built from a model-like template and then salted with
//! material the catalog passes can remove. Generation retries with a fresh
//! random stream until the graph validates, lands in the requested size
//! range, is strictly improved by the default pipeline, and is a fixed point
//! of that pipeline after one application.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::graph::{cost_analysis, validate, Graph, GraphBuilder, NodeId, OpKind};
use crate::passes::Catalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    MlpBlock,
    AttentionLike,
    ResidualChain,
    RandomDag,
}

impl Origin {
    pub const ALL: [Origin; 4] = [
        Origin::MlpBlock,
        Origin::AttentionLike,
        Origin::ResidualChain,
        Origin::RandomDag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::MlpBlock => "mlp_block",
            Origin::AttentionLike => "attention_like",
            Origin::ResidualChain => "residual_chain",
            Origin::RandomDag => "random_dag",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Origin::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown origin `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub graph: Graph,
    pub origin: Origin,
    pub seed: u64,
}

pub const MIN_OPS: usize = 5;
pub const MAX_OPS: usize = 5000;
const MAX_ATTEMPTS: u64 = 512;

/// `count` benchmarks with seeds `seed, seed + 1, ...`.
pub fn generate_suite(count: usize, size_range: (usize, usize), seed: u64) -> Result<Vec<Benchmark>, BenchError> {
    if count == 0 {
        return Err(BenchError::InvalidRange("count must be at least 1".into()));
    }
    check_range(size_range)?;
    let catalog = Catalog::standard();
    (0..count as u64)
        .map(|i| generate_with(&catalog, seed.wrapping_add(i), size_range))
        .collect()
}

pub fn generate_benchmark(seed: u64, size_range: (usize, usize)) -> Result<Benchmark, BenchError> {
    check_range(size_range)?;
    generate_with(&Catalog::standard(), seed, size_range)
}

fn check_range((lo, hi): (usize, usize)) -> Result<(), BenchError> {
    if lo < MIN_OPS || hi > MAX_OPS || lo > hi {
        return Err(BenchError::InvalidRange(format!(
            "size range [{lo}, {hi}] must lie within [{MIN_OPS}, {MAX_OPS}] with lo <= hi"
        )));
    }
    Ok(())
}

fn generate_with(catalog: &Catalog, seed: u64, (lo, hi): (usize, usize)) -> Result<Benchmark, BenchError> {
    let origin = *Origin::ALL
        .choose(&mut ChaCha8Rng::seed_from_u64(seed))
        .expect("non-empty");
    let name = format!("{origin}_{seed}");
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt + 1);
        let target = rng.gen_range(lo..=hi);
        let graph = Gen::new(&name, rng, hi).build(origin, target);
        if acceptable(catalog, &graph, lo, hi) {
            return Ok(Benchmark {
                name,
                graph,
                origin,
                seed,
            });
        }
    }
    Err(BenchError::InvalidRange(format!(
        "could not generate a graph of {lo}..={hi} ops for seed {seed}"
    )))
}

fn acceptable(catalog: &Catalog, g: &Graph, lo: usize, hi: usize) -> bool {
    let ops = cost_analysis(g).op_count as usize;
    if ops < lo || ops > hi || !validate(g).is_empty() {
        return false;
    }
    let once = catalog.run_default_pipeline(g);
    cost_analysis(&once).op_count < ops as u64 && catalog.run_default_pipeline(&once) == once
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Salt {
    Identity,
    NegNeg,
    LogExp,
    TransposePair,
    ReshapePair,
    BroadcastSelf,
    DupMax,
    DupSub,
    ZeroMul,
    ConstIsland,
    SharedDivisor,
}

const SALTS: [Salt; 11] = [
    Salt::Identity,
    Salt::NegNeg,
    Salt::LogExp,
    Salt::TransposePair,
    Salt::ReshapePair,
    Salt::BroadcastSelf,
    Salt::DupMax,
    Salt::DupSub,
    Salt::ZeroMul,
    Salt::ConstIsland,
    Salt::SharedDivisor,
];

/// Builder wrapper that tracks an upper bound on the magnitude of every
/// value, so generated graphs stay finite on inputs in [-1, 1].
struct Gen {
    b: GraphBuilder,
    rng: ChaCha8Rng,
    bound: HashMap<NodeId, f64>,
    values: Vec<NodeId>,
    max_ops: usize,
}

const BOUND_LIMIT: f64 = 1e4;
const SALT_RATE: f64 = 0.35;
const SHARED_DIVISOR_RATE: f64 = 0.3;

impl Gen {
    fn new(name: &str, rng: ChaCha8Rng, max_ops: usize) -> Self {
        Self {
            b: GraphBuilder::new(name),
            rng,
            bound: HashMap::new(),
            values: vec![],
            max_ops,
        }
    }

    fn ops(&self) -> usize {
        self.b.op_count()
    }

    fn room(&self, n: usize) -> bool {
        self.ops() + n <= self.max_ops
    }

    fn dims(&self, v: NodeId) -> Vec<usize> {
        self.b.shape(v).dims.clone()
    }

    fn bnd(&self, v: NodeId) -> f64 {
        self.bound.get(&v).copied().unwrap_or(1.0)
    }

    fn track(&mut self, v: NodeId, bound: f64) -> NodeId {
        self.bound.insert(v, bound);
        v
    }

    fn param(&mut self, dims: &[usize]) -> NodeId {
        let v = self.b.parameter(dims);
        self.values.push(v);
        self.track(v, 1.0)
    }

    fn splat(&mut self, dims: &[usize], value: f64) -> NodeId {
        let v = self.b.splat(dims, value);
        self.track(v, value.abs())
    }

    fn binary(&mut self, kind: OpKind, a: NodeId, b: NodeId) -> NodeId {
        let (ba, bb) = (self.bnd(a), self.bnd(b));
        let bound = match kind {
            OpKind::Add | OpKind::Subtract => ba + bb,
            OpKind::Multiply => ba * bb,
            OpKind::Maximum => ba.max(bb),
            OpKind::Dot => ba * bb * self.b.shape(a).dims[1] as f64,
            // Divisors are either splat constants or exponentials of tanh.
            OpKind::Divide => ba * std::f64::consts::E.max(1.0 / self.min_abs(b)),
            _ => unreachable!("not a binary kind"),
        };
        let v = self.b.binary(kind, a, b).expect("generator shapes are consistent");
        self.track(v, bound)
    }

    fn min_abs(&self, v: NodeId) -> f64 {
        self.b.node(v).attrs.literal().map_or(1.0 / std::f64::consts::E, |l| {
            l.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
        })
    }

    fn unary(&mut self, kind: OpKind, x: NodeId) -> NodeId {
        let bx = self.bnd(x);
        let bound = match kind {
            OpKind::Negate => bx,
            OpKind::Tanh => 1.0,
            OpKind::Exp => bx.exp(),
            OpKind::Log => bx,
            _ => unreachable!("not a unary kind"),
        };
        let v = self.b.unary(kind, x).expect("generator shapes are consistent");
        self.track(v, bound)
    }

    /// Squashes values whose bound has grown too large.
    fn tame(&mut self, v: NodeId) -> NodeId {
        if self.bnd(v) > BOUND_LIMIT {
            self.unary(OpKind::Tanh, v)
        } else {
            v
        }
    }

    fn core(&mut self, v: NodeId) -> NodeId {
        let v = self.tame(v);
        self.values.push(v);
        self.maybe_salt(v)
    }

    fn maybe_salt(&mut self, v: NodeId) -> NodeId {
        if self.rng.gen::<f64>() < SALT_RATE {
            self.salt(v)
        } else {
            v
        }
    }

    fn applicable(&self, v: NodeId, s: Salt) -> bool {
        let node = self.b.node(v);
        match s {
            Salt::LogExp => self.bnd(v) <= 20.0,
            Salt::TransposePair => node.shape.rank() == 2,
            Salt::ReshapePair => node.shape.rank() >= 1,
            Salt::DupMax | Salt::DupSub => !node.operands.is_empty(),
            _ => true,
        }
    }

    fn salt(&mut self, v: NodeId) -> NodeId {
        if !self.room(4) {
            return v;
        }
        let s = if self.rng.gen::<f64>() < SHARED_DIVISOR_RATE {
            Salt::SharedDivisor
        } else {
            let options: Vec<Salt> = SALTS.into_iter().filter(|&s| self.applicable(v, s)).collect();
            *options.choose(&mut self.rng).expect("identity always applies")
        };
        let dims = self.dims(v);
        let bv = self.bnd(v);
        let out = match s {
            Salt::Identity => {
                let form = self.rng.gen_range(0..6);
                let unit = self.splat(&dims, if form < 2 || form == 5 { 1.0 } else { 0.0 });
                match form {
                    0 => self.binary(OpKind::Multiply, v, unit),
                    1 => self.binary(OpKind::Multiply, unit, v),
                    2 => self.binary(OpKind::Add, v, unit),
                    3 => self.binary(OpKind::Add, unit, v),
                    4 => self.binary(OpKind::Subtract, v, unit),
                    _ => self.binary(OpKind::Divide, v, unit),
                }
            }
            Salt::NegNeg => {
                let n = self.unary(OpKind::Negate, v);
                self.unary(OpKind::Negate, n)
            }
            Salt::LogExp => {
                let e = self.unary(OpKind::Exp, v);
                self.unary(OpKind::Log, e)
            }
            Salt::TransposePair => {
                let t = self.b.transpose(v, vec![1, 0]).expect("rank 2");
                self.track(t, bv);
                let t2 = self.b.transpose(t, vec![1, 0]).expect("rank 2");
                self.track(t2, bv)
            }
            Salt::ReshapePair => {
                let n: usize = dims.iter().product();
                let mid = if dims.len() == 1 { vec![1, n] } else { vec![n] };
                let r = self.b.reshape(v, mid).expect("same element count");
                self.track(r, bv);
                let r2 = self.b.reshape(r, dims.clone()).expect("same element count");
                self.track(r2, bv)
            }
            Salt::BroadcastSelf => {
                let mapping = (0..dims.len()).collect();
                let r = self.b.broadcast(v, dims.clone(), mapping).expect("identity broadcast");
                self.track(r, bv)
            }
            Salt::DupMax | Salt::DupSub => {
                let node = self.b.node(v).clone();
                let d = self
                    .b
                    .push(node.kind, node.operands, node.attrs, node.shape)
                    .expect("copy of a valid node");
                self.track(d, bv);
                if s == Salt::DupMax {
                    self.binary(OpKind::Maximum, v, d)
                } else {
                    let z = self.binary(OpKind::Subtract, d, v);
                    self.binary(OpKind::Add, v, z)
                }
            }
            Salt::ZeroMul => {
                let zero = self.splat(&dims, 0.0);
                let m = if self.rng.gen() {
                    self.binary(OpKind::Multiply, v, zero)
                } else {
                    self.binary(OpKind::Multiply, zero, v)
                };
                self.track(m, 0.0);
                self.binary(OpKind::Add, v, m)
            }
            Salt::ConstIsland => {
                let a = *[0.25, 0.5, 0.75, 2.0, -1.0].choose(&mut self.rng).expect("non-empty");
                let b = if self.rng.gen() { 1.0 - a } else { 0.5 };
                let ca = self.splat(&dims, a);
                let cb = self.splat(&dims, b);
                let c = self.binary(OpKind::Add, ca, cb);
                self.track(c, (a + b).abs());
                self.binary(OpKind::Multiply, v, c)
            }
            Salt::SharedDivisor => {
                let k = *[2.0, 4.0, 0.5, 0.25].choose(&mut self.rng).expect("non-empty");
                let c = self.splat(&dims, k);
                let q = self.binary(OpKind::Divide, v, c);
                let m = self.binary(OpKind::Multiply, v, c);
                self.binary(OpKind::Add, q, m)
            }
        };
        self.tame(out)
    }

    /// A few operations nobody consumes.
    fn dead_code(&mut self) {
        if !self.room(2) || self.values.is_empty() {
            return;
        }
        let u = *self.values.choose(&mut self.rng).expect("non-empty");
        let t = self.unary(OpKind::Tanh, u);
        if self.rng.gen() {
            self.unary(OpKind::Negate, t);
        } else {
            self.binary(OpKind::Add, t, u);
        }
    }

    fn pick_dim(&mut self) -> usize {
        self.rng.gen_range(2..=4)
    }

    fn build(mut self, origin: Origin, target: usize) -> Graph {
        let core_target = (target * 3 / 5).max(1);
        let root = match origin {
            Origin::MlpBlock => self.mlp_block(core_target),
            Origin::AttentionLike => self.attention_like(core_target),
            Origin::ResidualChain => self.residual_chain(core_target),
            Origin::RandomDag => self.random_dag(core_target),
        };
        let mut root = root;
        let mut guard = 0;
        while self.ops() < target && self.room(2) && guard < 10 * target {
            guard += 1;
            if self.rng.gen::<f64>() < 0.8 {
                root = self.salt(root);
            } else {
                self.dead_code();
            }
        }
        self.b.finish(root)
    }

    fn mlp_block(&mut self, core_target: usize) -> NodeId {
        let batch = self.rng.gen_range(1..=3);
        let mut width = self.pick_dim();
        let mut x = self.param(&[batch, width]);
        while self.ops() < core_target && self.room(4) {
            let out = self.pick_dim();
            let w = self.param(&[width, out]);
            let bias = self.param(&[out]);
            let h = self.binary(OpKind::Dot, x, w);
            let h = self.core(h);
            let bb = self.b.broadcast(bias, [batch, out], vec![1]).expect("bias broadcast");
            self.track(bb, 1.0);
            let h = self.binary(OpKind::Add, h, bb);
            let h = self.core(h);
            let h = self.unary(OpKind::Tanh, h);
            x = self.core(h);
            width = out;
        }
        x
    }

    fn attention_like(&mut self, core_target: usize) -> NodeId {
        let s = self.pick_dim();
        let d = self.pick_dim();
        let mut q = self.param(&[s, d]);
        let k = self.param(&[s, d]);
        let v = self.param(&[s, d]);
        if !self.room(10) {
            return self.random_dag(core_target);
        }
        while self.ops() < core_target && self.room(10) {
            let kt = self.b.transpose(k, vec![1, 0]).expect("rank 2");
            self.track(kt, 1.0);
            let scores = self.binary(OpKind::Dot, q, kt);
            let scale = self.splat(&[s, s], (d as f64).sqrt());
            let scaled = self.binary(OpKind::Divide, scores, scale);
            let scaled = self.core(scaled);
            let squashed = self.unary(OpKind::Tanh, scaled);
            let e = self.unary(OpKind::Exp, squashed);
            let e = self.core(e);
            let sum = self.b.reduce_sum(e, vec![1]).expect("reduce rows");
            self.track(sum, self.bnd(e) * s as f64);
            let sb = self.b.broadcast(sum, [s, s], vec![0]).expect("row broadcast");
            self.track(sb, self.bnd(e) * s as f64);
            let p = self.b.div(e, sb).expect("same shape");
            self.track(p, 1.0);
            let p = self.core(p);
            let o = self.binary(OpKind::Dot, p, v);
            q = self.core(o);
        }
        q
    }

    fn residual_chain(&mut self, core_target: usize) -> NodeId {
        let batch = self.rng.gen_range(1..=3);
        let d = self.pick_dim();
        let mut x = self.param(&[batch, d]);
        while self.ops() < core_target && self.room(3) {
            let w = self.param(&[d, d]);
            let y = self.binary(OpKind::Dot, x, w);
            let y = self.core(y);
            let y = self.unary(OpKind::Tanh, y);
            let y = self.core(y);
            let sum = self.binary(OpKind::Add, x, y);
            x = self.core(sum);
        }
        x
    }

    fn random_dag(&mut self, core_target: usize) -> NodeId {
        let dims = [self.pick_dim(), self.pick_dim()];
        let mut pool: Vec<NodeId> = (0..self.rng.gen_range(2..=3)).map(|_| self.param(&dims)).collect();
        while self.ops() < core_target && self.room(3) {
            // Prefer recent values so the graph grows deep rather than wide.
            let pick = |g: &mut Self, pool: &[NodeId]| {
                let n = pool.len();
                let back = g.rng.gen_range(0..n.min(4));
                pool[n - 1 - back]
            };
            let a = pick(self, &pool);
            let b = pick(self, &pool);
            let v = match self.rng.gen_range(0..8) {
                0 => self.binary(OpKind::Add, a, b),
                1 => self.binary(OpKind::Subtract, a, b),
                2 => self.binary(OpKind::Multiply, a, b),
                3 => self.binary(OpKind::Maximum, a, b),
                4 => self.unary(OpKind::Negate, a),
                5 => self.unary(OpKind::Tanh, a),
                6 => {
                    let t = self.unary(OpKind::Tanh, b);
                    let e = self.unary(OpKind::Exp, t);
                    self.binary(OpKind::Divide, a, e)
                }
                _ => {
                    let t = self.b.transpose(a, vec![1, 0]).expect("rank 2");
                    let ba = self.bnd(a);
                    self.track(t, ba);
                    if dims[0] == dims[1] {
                        self.binary(OpKind::Add, t, b)
                    } else {
                        let r = self.b.reshape(t, dims).expect("same element count");
                        self.track(r, ba);
                        self.binary(OpKind::Add, r, b)
                    }
                }
            };
            let v = self.core(v);
            pool.push(v);
        }
        *pool.last().expect("non-empty pool")
    }
}
