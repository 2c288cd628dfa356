//! Runtime scheduling policy: linear softmax over registered activities,
//! ε-mixed exploration, policy-gradient updates and trajectory curation.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionId, ActivityRegistry, Trajectory};
use crate::error::{Error, Result};
use crate::numkit::{softmax, OptimState, ParamStore, Tensor};

/// One weight row (`state_dim` weights then a bias) per activity that has
/// ever been registered. Rows of removed activities are kept but unused.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    state_dim: usize,
    rows: BTreeMap<ActionId, usize>,
    params: ParamStore,
    optim: OptimState,
    /// Registry version the rows were last synced to.
    pub registry_version: u64,
    /// Per-macro distributions over that activity's micro-steps.
    pub micro: BTreeMap<ActionId, Vec<f64>>,
}

fn row_name(a: ActionId) -> String {
    format!("policy.w.{}", a.0)
}

impl PolicyParameters {
    /// Zero weights for every registered activity.
    pub fn zeros(state_dim: usize, registry: &ActivityRegistry, learning_rate: f64) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("policy state dimension must be positive"));
        }
        let params = ParamStore::new();
        let optim = OptimState::adam(&params, learning_rate);
        let mut p = PolicyParameters {
            state_dim,
            rows: BTreeMap::new(),
            params,
            optim,
            registry_version: registry.version(),
            micro: BTreeMap::new(),
        };
        p.sync(registry)?;
        Ok(p)
    }

    /// Rebuilds from stored rows, e.g. after loading a checkpoint.
    pub fn from_params(state_dim: usize, params: ParamStore, optim: OptimState, registry_version: u64) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (id, name) in params.names().enumerate() {
            let a = name
                .strip_prefix("policy.w.")
                .and_then(|s| s.parse::<u8>().ok())
                .ok_or_else(|| Error::invalid(format!("unexpected policy tensor `{name}`")))?;
            if params.value(id).shape() != [state_dim + 1] {
                return Err(Error::shape("policy row", format!("`{name}` is {:?}", params.value(id).shape())));
            }
            rows.insert(ActionId(a), id);
        }
        Ok(PolicyParameters { state_dim, rows, params, optim, registry_version, micro: BTreeMap::new() })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn optim(&self) -> &OptimState {
        &self.optim
    }

    /// Adds a zero row for every registered activity that lacks one.
    pub fn sync(&mut self, registry: &ActivityRegistry) -> Result<()> {
        for a in registry.action_ids() {
            if !self.rows.contains_key(&a) {
                let id = self.params.insert(row_name(a), Tensor::zeros(&[self.state_dim + 1]))?;
                self.rows.insert(a, id);
            }
        }
        self.optim.sync_shapes(&self.params);
        self.registry_version = registry.version();
        Ok(())
    }

    pub fn row(&self, a: ActionId) -> Option<&[f64]> {
        self.rows.get(&a).map(|&id| self.params.value(id).data())
    }

    pub fn row_mut(&mut self, a: ActionId) -> Option<&mut [f64]> {
        let id = *self.rows.get(&a)?;
        Some(self.params.value_mut(id).data_mut())
    }

    fn logit(&self, a: ActionId, state: &[f64]) -> f64 {
        match self.row(a) {
            Some(w) => w[..self.state_dim].iter().zip(state).map(|(w, x)| w * x).sum::<f64>() + w[self.state_dim],
            None => 0.0,
        }
    }
}

/// Softmax over the registered activities, in ascending id order. Activities
/// without a row yet score a zero logit, as a freshly added row would.
pub fn policy_distribution(state: &[f64], params: &PolicyParameters, registry: &ActivityRegistry) -> Result<Vec<f64>> {
    if state.len() != params.state_dim {
        return Err(Error::shape("policy_distribution", format!("state {} vs {}", state.len(), params.state_dim)));
    }
    let logits: Vec<f64> = registry.action_ids().into_iter().map(|a| params.logit(a, state)).collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("policy parameters produce non-finite logits"));
    }
    Ok(softmax(&logits))
}

/// `(1 - ε)·π + ε·uniform`.
pub fn mixture(pi: &[f64], epsilon: f64) -> Vec<f64> {
    let u = 1.0 / pi.len() as f64;
    pi.iter().map(|p| (1.0 - epsilon) * p + epsilon * u).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationParams {
    pub epsilon: f64,
    /// ε used whenever the value estimate falls below `value_threshold`.
    pub explore_epsilon: f64,
    pub value_threshold: f64,
    /// Multiplicative decay applied by [`ExplorationParams::decay`].
    pub decay: f64,
    pub min_epsilon: f64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        ExplorationParams { epsilon: 0.1, explore_epsilon: 0.3, value_threshold: f64::NEG_INFINITY, decay: 1.0, min_epsilon: 0.05 }
    }
}

impl ExplorationParams {
    pub fn fixed(epsilon: f64) -> Self {
        ExplorationParams { epsilon, explore_epsilon: epsilon, min_epsilon: epsilon, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("explore_epsilon", self.explore_epsilon), ("min_epsilon", self.min_epsilon)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("exploration.{name}"), "must lie in [0, 1]"));
            }
        }
        if self.min_epsilon > self.epsilon {
            return Err(Error::config("exploration.min_epsilon", "exceeds epsilon"));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::config("exploration.decay", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// One decay step, never dropping below `min_epsilon`.
    pub fn decay(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.min_epsilon);
    }

    /// ε in effect for a state with the given value estimate.
    pub fn effective(&self, value_estimate: f64) -> f64 {
        if value_estimate < self.value_threshold {
            self.explore_epsilon
        } else {
            self.epsilon
        }
    }
}

/// Value estimate gating exploration: max policy probability times the
/// recent mean return.
pub fn value_estimate(pi: &[f64], recent_mean_return: f64) -> f64 {
    pi.iter().copied().fold(0.0, f64::max) * recent_mean_return
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub action: ActionId,
    /// Mixture probability of `action`.
    pub prob: f64,
    /// True when the uniform component made the choice.
    pub explored: bool,
    pub epsilon: f64,
    /// Policy distribution over the registry, ascending id order.
    pub pi: Vec<f64>,
}

/// Samples from the ε-mixture and records the mixture probability.
pub fn select_activity(
    state: &[f64],
    params: &PolicyParameters,
    registry: &ActivityRegistry,
    explore: &ExplorationParams,
    recent_mean_return: f64,
    rng: &mut impl Rng,
) -> Result<Selection> {
    let pi = policy_distribution(state, params, registry)?;
    let epsilon = explore.effective(value_estimate(&pi, recent_mean_return));
    let ids = registry.action_ids();
    let explored = rng.gen::<f64>() < epsilon;
    let idx = if explored { rng.gen_range(0..ids.len()) } else { draw(&pi, rng.gen::<f64>()) };
    let prob = mixture(&pi, epsilon)[idx];
    Ok(Selection { action: ids[idx], prob, explored, epsilon, pi })
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// How returns are centered before the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Subtract the mean return of the trajectory.
    #[default]
    TrajectoryMean,
}

/// Policy-gradient estimate `Σ_t ∇log μ(a_t|s_t)·(G_t - b)` for the
/// ε-mixture `μ = (1-ε)π + ε/n`, so that
/// `∇log μ(a) = (1-ε)·π(a)/μ(a)·∇log π(a)`. Keyed by action row; each row is
/// `state_dim + 1` long.
pub fn policy_gradient(
    traj: &Trajectory,
    returns: &[f64],
    params: &PolicyParameters,
    registry: &ActivityRegistry,
    baseline: Baseline,
) -> Result<BTreeMap<ActionId, Vec<f64>>> {
    if returns.len() != traj.len() {
        return Err(Error::invalid(format!("{} returns for {} steps", returns.len(), traj.len())));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("non-finite return"));
    }
    let b = match baseline {
        Baseline::None => 0.0,
        Baseline::TrajectoryMean if !returns.is_empty() => returns.iter().sum::<f64>() / returns.len() as f64,
        Baseline::TrajectoryMean => 0.0,
    };
    let ids = registry.action_ids();
    let d = params.state_dim;
    let mut grad: BTreeMap<ActionId, Vec<f64>> = ids.iter().map(|&a| (a, vec![0.0; d + 1])).collect();
    for (step, &g) in traj.steps.iter().zip(returns) {
        if !step.policy_step || step.epsilon >= 1.0 {
            continue;
        }
        let Some(k) = ids.iter().position(|&a| a == step.action) else {
            return Err(Error::invalid(format!("step at tick {} uses unregistered action {}", step.tick, step.action)));
        };
        let pi = policy_distribution(&step.observation, params, registry)?;
        let weight = (1.0 - step.epsilon) * pi[k] / step.behavior_prob * (g - b);
        if weight == 0.0 {
            continue;
        }
        for (j, &a) in ids.iter().enumerate() {
            let coef = weight * (if j == k { 1.0 } else { 0.0 } - pi[j]);
            let row = grad.get_mut(&a).expect("row per id");
            for (r, &x) in row[..d].iter_mut().zip(&step.observation) {
                *r += coef * x;
            }
            row[d] += coef;
        }
    }
    Ok(grad)
}

/// One ascent step on the policy-gradient estimate through the adaptive
/// optimizer. `returns` are the credited returns, one per step.
pub fn reinforce_update(
    traj: &Trajectory,
    returns: Option<&[f64]>,
    params: &mut PolicyParameters,
    registry: &ActivityRegistry,
    baseline: Baseline,
) -> Result<()> {
    let returns = returns.ok_or_else(|| Error::invalid("reinforce_update needs credited returns"))?;
    params.sync(registry)?;
    let grad = policy_gradient(traj, returns, params, registry, baseline)?;
    // A zero estimate is no evidence; skip so momentum cannot drift weights.
    if grad.values().flatten().all(|&g| g == 0.0) {
        return Ok(());
    }
    params.params.zero_grads();
    for (a, g) in grad {
        let id = params.rows[&a];
        for (dst, v) in params.params.grad_mut(id).data_mut().iter_mut().zip(g) {
            *dst = -v;
        }
    }
    params.optim.apply(&mut params.params);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedItem {
    pub trajectory: u64,
    pub step: usize,
    pub tick: u64,
    pub observation: Vec<f64>,
    pub action: ActionId,
    pub credited_return: f64,
    pub quality: Quality,
    pub synthetic: bool,
    pub registry_version: u64,
}

/// Append-only store of curated steps keyed by `(trajectory, tick)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CuratedDataset {
    pub items: Vec<CuratedItem>,
    pub version: u64,
    keys: BTreeSet<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurateOutcome {
    pub added: usize,
    /// Steps whose key was already present.
    pub rejected: usize,
}

impl CuratedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Tags each step good (return `>= threshold`) or bad and appends it. Bad
    /// steps are kept. The version moves only when something was added.
    pub fn curate(&mut self, traj: &Trajectory, returns: &[f64], threshold: f64) -> Result<CurateOutcome> {
        if returns.len() != traj.len() {
            return Err(Error::invalid(format!("{} returns for {} steps", returns.len(), traj.len())));
        }
        let mut out = CurateOutcome { added: 0, rejected: 0 };
        for (i, (s, &g)) in traj.steps.iter().zip(returns).enumerate() {
            if !g.is_finite() {
                return Err(Error::invalid(format!("non-finite return at step {i}")));
            }
            if !self.keys.insert((traj.id, s.tick)) {
                out.rejected += 1;
                continue;
            }
            self.items.push(CuratedItem {
                trajectory: traj.id,
                step: i,
                tick: s.tick,
                observation: s.observation.clone(),
                action: s.action,
                credited_return: g,
                quality: if g >= threshold { Quality::Good } else { Quality::Bad },
                synthetic: traj.synthetic,
                registry_version: s.registry_version,
            });
            out.added += 1;
        }
        if out.added > 0 {
            self.version += 1;
        }
        Ok(out)
    }
}

pub mod toy;
