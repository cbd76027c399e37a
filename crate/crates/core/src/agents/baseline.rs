use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_policy, AgentError, EpisodeOutcome, Policy};
use crate::env::PassEnv;
use crate::graph::{cost_analysis, Graph};
use crate::passes::{Catalog, PassId};

/// Largest number of sequences [`brute_force_optimal`] will enumerate.
pub const BRUTE_FORCE_BUDGET: u64 = 1_000_000;

/// Picks the action with the largest immediate op-count decrease; ties go to
/// the lowest pass id.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn act(&self, env: &PassEnv, _: bool, _: &mut dyn RngCore) -> Result<usize, AgentError> {
        let graph = env.current_graph()?;
        let before = env.current_cost()?.op_count as i64;
        let mut best: Option<(i64, PassId, usize)> = None;
        for a in 0..env.action_space_size() {
            let pass = env.action_pass(a)?;
            let (g, _) = env.catalog().apply_pass(graph, pass)?;
            let gain = before - cost_analysis(&g).op_count as i64;
            let better = match best {
                None => true,
                Some((g0, p0, _)) => gain > g0 || (gain == g0 && pass < p0),
            };
            if better {
                best = Some((gain, pass, a));
            }
        }
        Ok(best.map_or(0, |(_, _, a)| a))
    }
}

pub fn greedy_baseline(env: &mut PassEnv, graph: &Graph) -> Result<EpisodeOutcome, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    evaluate_policy(&GreedyPolicy, env, graph, true, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BruteForceResult {
    pub sequence: Vec<PassId>,
    pub final_op_count: u64,
}

/// Exhaustive search over all `|actions|^horizon` sequences. Ties go to the
/// lexicographically smallest sequence in `actions` order.
pub fn brute_force_optimal(
    catalog: &Catalog,
    graph: &Graph,
    actions: &[PassId],
    horizon: usize,
) -> Result<BruteForceResult, AgentError> {
    let space = (actions.len() as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if space > BRUTE_FORCE_BUDGET as u128 {
        return Err(AgentError::Budget(space, BRUTE_FORCE_BUDGET));
    }
    let mut best = BruteForceResult {
        sequence: vec![],
        final_op_count: u64::MAX,
    };
    let mut prefix = Vec::with_capacity(horizon);
    search(catalog, graph, actions, horizon, &mut prefix, &mut best)?;
    Ok(best)
}

fn search(
    catalog: &Catalog,
    graph: &Graph,
    actions: &[PassId],
    left: usize,
    prefix: &mut Vec<PassId>,
    best: &mut BruteForceResult,
) -> Result<(), AgentError> {
    if left == 0 || actions.is_empty() {
        let count = cost_analysis(graph).op_count;
        if count < best.final_op_count {
            best.final_op_count = count;
            best.sequence = prefix.clone();
        }
        return Ok(());
    }
    for &pass in actions {
        let (next, _) = catalog.apply_pass(graph, pass)?;
        prefix.push(pass);
        search(catalog, &next, actions, left - 1, prefix, best)?;
        prefix.pop();
    }
    Ok(())
}
