//! Gym-style environment over graphs.
//!
//! The state is a graph, the agent sees its per-kind operation counts, an
//! action applies one catalog pass, and the reward is the negated operation
//! count scaled by the count at the start of the episode. Episodes run for a
//! fixed horizon.
//!
//! With shaping enabled, [`PassEnv::shaped_step`] adds the potential-based
//! term `gamma * phi(s') - phi(s)` where
//! `phi(s) = -(flop_weight * flops(s) + transcendental_weight * transcendentals(s)) / scale`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{cost_analysis, emit_text, validate, CostAnalysis, Graph, Observation, Violation, OBSERVATION_LEN};
use crate::passes::{Catalog, PassError, PassId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("invalid graph: {0:?}")]
    InvalidGraph(Vec<Violation>),
    #[error("action {action} out of range (action space has {size} actions)")]
    ActionOutOfRange { action: usize, size: usize },
    #[error("episode is complete; call reset")]
    EpisodeComplete,
    #[error("environment has not been reset")]
    NotReset,
    #[error("shaped_step called with shaping disabled")]
    ShapingDisabled,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Pass(#[from] PassError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    ScaledOpcount,
}

/// Divisor applied to the shaping potential.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ShapingScale {
    /// The flop count of the episode's initial graph (at least 1).
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for ShapingScale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ShapingScale::Auto => s.serialize_str("auto"),
            ShapingScale::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ShapingScale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "auto" => Ok(ShapingScale::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "shaping scale must be \"auto\" or a positive number, got {t:?}"
            ))),
            Raw::Number(v) => Ok(ShapingScale::Fixed(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub enabled: bool,
    pub flop_weight: f64,
    pub transcendental_weight: f64,
    pub scale: ShapingScale,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            flop_weight: 1.0,
            transcendental_weight: 2.0,
            scale: ShapingScale::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub horizon: usize,
    /// Discount used by the shaping term.
    pub gamma: f64,
    pub reward_mode: RewardMode,
    pub action_subset: Option<Vec<PassId>>,
    pub shaping: ShapingConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            gamma: 0.99,
            reward_mode: RewardMode::ScaledOpcount,
            action_subset: None,
            shaping: ShapingConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EnvError::Config(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if let Some(subset) = &self.action_subset {
            if subset.is_empty() {
                return Err(EnvError::Config("action_subset is empty".into()));
            }
            for &id in subset {
                catalog.get(id)?;
            }
        }
        let s = &self.shaping;
        if !s.flop_weight.is_finite() || !s.transcendental_weight.is_finite() {
            return Err(EnvError::Config("shaping weights must be finite".into()));
        }
        if let ShapingScale::Fixed(v) = s.scale {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("shaping scale {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub op_count: u64,
    pub flop_count: u64,
    pub transcendental_count: u64,
    pub pass_changed: bool,
    pub step_index: usize,
    /// Potential of the resulting state; shaped steps only.
    pub phi: Option<f64>,
    /// Unshaped reward; shaped steps only.
    pub base_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpace {
    pub len: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Episode {
    graph: Graph,
    cost: CostAnalysis,
    initial: CostAnalysis,
    step_index: usize,
    cumulative_reward: f64,
    settled: Vec<bool>,
}

/// One environment instance. Owns its episode state; cheap to clone.
#[derive(Debug, Clone)]
pub struct PassEnv {
    config: EnvConfig,
    catalog: Arc<Catalog>,
    actions: Vec<PassId>,
    episode: Option<Episode>,
}

impl PassEnv {
    pub fn new(config: EnvConfig, catalog: Arc<Catalog>) -> Result<Self, EnvError> {
        config.validate(&catalog)?;
        let actions = match &config.action_subset {
            Some(s) => s.clone(),
            None => catalog.passes().iter().map(|p| p.id).collect(),
        };
        Ok(Self {
            config,
            catalog,
            actions,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn action_space_size(&self) -> usize {
        self.actions.len()
    }

    /// Catalog pass behind an action index.
    pub fn action_pass(&self, action: usize) -> Result<PassId, EnvError> {
        self.actions.get(action).copied().ok_or(EnvError::ActionOutOfRange {
            action,
            size: self.actions.len(),
        })
    }

    pub fn observation_space(&self) -> ObservationSpace {
        ObservationSpace {
            len: OBSERVATION_LEN,
            low: vec![0.0; OBSERVATION_LEN],
            high: vec![f64::INFINITY; OBSERVATION_LEN],
        }
    }

    pub fn reset(&mut self, graph: &Graph) -> Result<Observation, EnvError> {
        let violations = validate(graph);
        if !violations.is_empty() {
            return Err(EnvError::InvalidGraph(violations));
        }
        let cost = cost_analysis(graph);
        let obs = Observation::from_cost(&cost);
        self.episode = Some(Episode {
            graph: graph.clone(),
            initial: cost.clone(),
            cost,
            step_index: 0,
            cumulative_reward: 0.0,
            settled: vec![false; self.actions.len()],
        });
        Ok(obs)
    }

    fn episode(&self) -> Result<&Episode, EnvError> {
        self.episode.as_ref().ok_or(EnvError::NotReset)
    }

    pub fn current_graph(&self) -> Result<&Graph, EnvError> {
        Ok(&self.episode()?.graph)
    }

    pub fn current_cost(&self) -> Result<&CostAnalysis, EnvError> {
        Ok(&self.episode()?.cost)
    }

    pub fn initial_cost(&self) -> Result<&CostAnalysis, EnvError> {
        Ok(&self.episode()?.initial)
    }

    pub fn step_index(&self) -> Result<usize, EnvError> {
        Ok(self.episode()?.step_index)
    }

    /// Per action: true when the graph has not changed since that action was
    /// last taken this episode.
    pub fn settled_actions(&self) -> Result<&[bool], EnvError> {
        Ok(&self.episode()?.settled)
    }

    pub fn is_done(&self) -> bool {
        self.episode
            .as_ref()
            .is_some_and(|e| e.step_index >= self.config.horizon)
    }

    pub fn observation(&self) -> Result<Observation, EnvError> {
        Ok(Observation::from_cost(&self.episode()?.cost))
    }

    /// `-op_count / max(1, I)` with `I` the op count at reset.
    pub fn base_reward(&self, cost: &CostAnalysis) -> Result<f64, EnvError> {
        let initial = self.episode()?.initial.op_count.max(1) as f64;
        Ok(match self.config.reward_mode {
            RewardMode::ScaledOpcount => -(cost.op_count as f64) / initial,
        })
    }

    /// Shaping potential of a state with the given costs.
    pub fn potential(&self, cost: &CostAnalysis) -> Result<f64, EnvError> {
        let s = &self.config.shaping;
        let scale = match s.scale {
            ShapingScale::Auto => self.episode()?.initial.flop_count.max(1) as f64,
            ShapingScale::Fixed(v) => v,
        };
        Ok(
            -(s.flop_weight * cost.flop_count as f64 + s.transcendental_weight * cost.transcendental_count as f64)
                / scale,
        )
    }

    fn advance(&mut self, action: usize) -> Result<(CostAnalysis, CostAnalysis, bool), EnvError> {
        let pass = self.action_pass(action)?;
        let horizon = self.config.horizon;
        let catalog = Arc::clone(&self.catalog);
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.step_index >= horizon {
            return Err(EnvError::EpisodeComplete);
        }
        let (graph, changed) = catalog.apply_pass(&ep.graph, pass)?;
        let before = std::mem::replace(&mut ep.cost, cost_analysis(&graph));
        ep.graph = graph;
        ep.step_index += 1;
        if changed {
            ep.settled.fill(false);
        }
        ep.settled[action] = true;
        Ok((before, ep.cost.clone(), changed))
    }

    fn finish_step(
        &mut self,
        after: CostAnalysis,
        reward: f64,
        changed: bool,
        phi: Option<f64>,
        base: Option<f64>,
    ) -> StepResult {
        let horizon = self.config.horizon;
        let ep = self.episode.as_mut().expect("advance checked the episode");
        ep.cumulative_reward += reward;
        StepResult {
            observation: Observation::from_cost(&after),
            reward,
            done: ep.step_index == horizon,
            info: StepInfo {
                op_count: after.op_count,
                flop_count: after.flop_count,
                transcendental_count: after.transcendental_count,
                pass_changed: changed,
                step_index: ep.step_index,
                phi,
                base_reward: base,
            },
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let (_, after, changed) = self.advance(action)?;
        let reward = self.base_reward(&after)?;
        Ok(self.finish_step(after, reward, changed, None, None))
    }

    pub fn shaped_step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if !self.config.shaping.enabled {
            return Err(EnvError::ShapingDisabled);
        }
        let (before, after, changed) = self.advance(action)?;
        let base = self.base_reward(&after)?;
        let phi_before = self.potential(&before)?;
        let phi_after = self.potential(&after)?;
        let reward = base + self.config.gamma * phi_after - phi_before;
        Ok(self.finish_step(after, reward, changed, Some(phi_after), Some(base)))
    }

    /// `shaped_step` when shaping is enabled, `step` otherwise.
    pub fn transition(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.config.shaping.enabled {
            self.shaped_step(action)
        } else {
            self.step(action)
        }
    }

    /// Header comment followed by the current graph in text form.
    pub fn render(&self) -> Result<String, EnvError> {
        let ep = self.episode()?;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# step {} op_count {} cumulative_reward {}",
            ep.step_index, ep.cost.op_count, ep.cumulative_reward
        );
        out.push_str(&emit_text(&ep.graph));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_text, GraphBuilder, NodeId};

    fn env(config: EnvConfig) -> PassEnv {
        PassEnv::new(config, Arc::new(Catalog::standard())).unwrap()
    }

    fn named(name: &str) -> usize {
        Catalog::standard().id_by_name(name).unwrap().0
    }

    /// Root is a Parameter with `dead` unreachable negations of it.
    fn with_dead(live_ops: usize, dead: usize) -> Graph {
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([2]);
        let mut y = x;
        for _ in 0..live_ops {
            y = b.tanh(y).unwrap();
        }
        for _ in 0..dead {
            b.neg(x).unwrap();
        }
        b.finish(y)
    }

    #[test]
    fn reset_reports_initial_counts() {
        let mut e = env(EnvConfig::default());
        let g = with_dead(5, 0);
        let o1 = e.reset(&g).unwrap();
        assert_eq!(o1.total(), 5.0);
        let o2 = e.reset(&g).unwrap();
        assert_eq!(o1, o2);
        let r = e.step(named("cse")).unwrap();
        assert_eq!(r.info.op_count, 5);
    }

    #[test]
    fn reward_is_scaled_by_initial_count() {
        let mut e = env(EnvConfig::default());
        e.reset(&with_dead(8, 2)).unwrap();
        let r = e.step(named("dce")).unwrap();
        assert!(r.info.pass_changed);
        assert_eq!(r.reward, -0.8);
        let r2 = e.step(named("dce")).unwrap();
        assert!(!r2.info.pass_changed);
        assert_eq!(r2.reward, -0.8);
        assert_eq!(r2.info.op_count as f64, r2.observation.total());
    }

    #[test]
    fn horizon_and_errors() {
        let mut e = env(EnvConfig {
            horizon: 2,
            ..Default::default()
        });
        assert_eq!(e.step(0), Err(EnvError::NotReset));
        e.reset(&with_dead(2, 1)).unwrap();
        assert_eq!(e.step(12), Err(EnvError::ActionOutOfRange { action: 12, size: 12 }));
        assert!(!e.step(0).unwrap().done);
        assert!(e.step(0).unwrap().done);
        assert_eq!(e.step(0), Err(EnvError::EpisodeComplete));
    }

    #[test]
    fn action_spaces() {
        let e = env(EnvConfig::default());
        assert_eq!(e.action_space_size(), 12);
        let sub = env(EnvConfig {
            action_subset: Some((0..6).map(PassId).collect()),
            ..Default::default()
        });
        assert_eq!(sub.action_space_size(), 6);
        let space = e.observation_space();
        assert_eq!(space.len, 17);
        assert!(space.low.iter().all(|&l| l == 0.0));
        assert!(space.high.iter().all(|h| h.is_infinite()));
    }

    #[test]
    fn config_validation() {
        let cat = Arc::new(Catalog::standard());
        for bad in [
            EnvConfig {
                horizon: 0,
                ..Default::default()
            },
            EnvConfig {
                gamma: 1.0,
                ..Default::default()
            },
            EnvConfig {
                action_subset: Some(vec![PassId(99)]),
                ..Default::default()
            },
        ] {
            assert!(PassEnv::new(bad, cat.clone()).is_err());
        }
    }

    #[test]
    fn shaping_term_with_constant_potential() {
        let mut e = env(EnvConfig {
            shaping: ShapingConfig {
                enabled: true,
                ..Default::default()
            },
            ..Default::default()
        });
        e.reset(&with_dead(3, 0)).unwrap();
        let phi = e.potential(e.current_cost().unwrap()).unwrap();
        let r = e.shaped_step(named("dce")).unwrap();
        let base = r.info.base_reward.unwrap();
        assert!(((r.reward - base) - (0.99 - 1.0) * phi).abs() < 1e-15);
        assert_eq!(r.info.phi, Some(phi));
    }

    #[test]
    fn removing_an_eight_element_exp_raises_phi() {
        // exp(log(x)) over 8 elements: exp-log-elim removes the Exp node.
        let mut b = GraphBuilder::new("g");
        let x = b.parameter([8]);
        let l = b.log(x).unwrap();
        let ex = b.exp(l).unwrap();
        let g = b.finish(ex);
        let mut e = env(EnvConfig {
            shaping: ShapingConfig {
                enabled: true,
                scale: ShapingScale::Fixed(100.0),
                ..Default::default()
            },
            ..Default::default()
        });
        e.reset(&g).unwrap();
        let before = e.potential(e.current_cost().unwrap()).unwrap();
        let r = e.shaped_step(named("exp-log-elim")).unwrap();
        assert!((r.info.phi.unwrap() - before - 0.24).abs() < 1e-12);
    }

    #[test]
    fn shaped_step_requires_shaping() {
        let mut e = env(EnvConfig::default());
        e.reset(&with_dead(1, 0)).unwrap();
        assert_eq!(e.shaped_step(0), Err(EnvError::ShapingDisabled));
    }

    #[test]
    fn render_parses_back_and_tracks_steps() {
        let mut e = env(EnvConfig::default());
        let g = with_dead(2, 2);
        e.reset(&g).unwrap();
        let first = e.render().unwrap();
        assert!(first.starts_with("# step 0 "));
        assert_eq!(parse_text(&first).unwrap(), g);
        e.step(named("dce")).unwrap();
        let second = e.render().unwrap();
        assert_ne!(first, second);
        assert!(parse_text(&second).unwrap().root == NodeId(2));
    }

    #[test]
    fn stepping_does_not_touch_the_input_graph() {
        let g = with_dead(2, 3);
        let copy = g.clone();
        let mut e = env(EnvConfig::default());
        e.reset(&g).unwrap();
        e.step(named("dce")).unwrap();
        assert_eq!(g, copy);
    }
}
