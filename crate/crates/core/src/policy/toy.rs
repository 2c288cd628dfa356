//! Two-state, two-action, horizon-2 processes small enough to enumerate.
//!
//! [`ToyProcess::exact_gradient`] differentiates the expected return through
//! a backward value recursion in forward mode. [`ToyProcess::enumerated_estimate`]
//! averages [`policy_gradient`] over all 16 trajectories weighted by their
//! exact probabilities. The two share no code beyond the policy softmax.

use std::collections::BTreeMap;

use rand::Rng;

use super::{mixture, policy_distribution, policy_gradient, Baseline, PolicyParameters};
use crate::domain::{ActionId, ActivityDescriptor, ActivityRegistry, Trajectory, TrajectoryStep};
use crate::error::Result;
use crate::reward::{credit_delayed, FeedbackEvent};
use crate::rng::{stream, Purpose};

const TOY_STREAM: u64 = 0x70_7930;

#[derive(Debug, Clone)]
pub struct ToyProcess {
    pub registry: ActivityRegistry,
    pub params: PolicyParameters,
    pub epsilon: f64,
    /// Initial state distribution.
    pub rho: [f64; 2],
    /// `p_next[s][a]` is the probability of moving to state 1.
    pub p_next: [[f64; 2]; 2],
    pub reward: [[f64; 2]; 2],
}

fn features(s: usize) -> Vec<f64> {
    let mut x = vec![0.0; 2];
    x[s] = 1.0;
    x
}

impl ToyProcess {
    /// Random weights, dynamics and rewards. `epsilon` mixes in uniform
    /// exploration.
    pub fn random(seed: u64, epsilon: f64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::Custom(TOY_STREAM), 0, 0);
        let mut registry = ActivityRegistry::new(ActivityDescriptor::new(ActionId(0), 1.0))?;
        registry.register(ActivityDescriptor::new(ActionId(1), 1.0))?;
        let mut params = PolicyParameters::zeros(2, &registry, 0.1)?;
        for a in [ActionId(0), ActionId(1)] {
            for w in params.row_mut(a).expect("row") {
                *w = rng.gen_range(-1.5..1.5);
            }
        }
        let r0: f64 = rng.gen_range(0.1..0.9);
        let mut unit = || rng.gen_range(0.05..0.95);
        let p_next = [[unit(), unit()], [unit(), unit()]];
        let mut signed = || rng.gen_range(-2.0..2.0);
        let reward = [[signed(), signed()], [signed(), signed()]];
        Ok(ToyProcess { registry, params, epsilon, rho: [r0, 1.0 - r0], p_next, reward })
    }

    fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        if next == 1 {
            self.p_next[s][a]
        } else {
            1.0 - self.p_next[s][a]
        }
    }

    fn mu(&self, s: usize) -> Result<Vec<f64>> {
        Ok(mixture(&policy_distribution(&features(s), &self.params, &self.registry)?, self.epsilon))
    }

    /// `∂μ(a|s)/∂θ` flattened as `[row 0 (w0, w1, bias), row 1 (...)]`.
    fn mu_grad(&self, s: usize) -> Result<[Vec<f64>; 2]> {
        let pi = policy_distribution(&features(s), &self.params, &self.registry)?;
        let x = [features(s)[0], features(s)[1], 1.0];
        let g = |a: usize| {
            let mut v = vec![0.0; 6];
            for b in 0..2 {
                let d = (1.0 - self.epsilon) * pi[a] * (if a == b { 1.0 } else { 0.0 } - pi[b]);
                for i in 0..3 {
                    v[b * 3 + i] = d * x[i];
                }
            }
            v
        };
        Ok([g(0), g(1)])
    }

    /// `∇J` for `J = E[r_0 + r_1]`, by forward-mode differentiation of the
    /// value recursion.
    pub fn exact_gradient(&self) -> Result<Vec<f64>> {
        let mut v1 = [0.0; 2];
        let mut dv1 = [vec![0.0; 6], vec![0.0; 6]];
        for s in 0..2 {
            let (mu, dmu) = (self.mu(s)?, self.mu_grad(s)?);
            for a in 0..2 {
                v1[s] += mu[a] * self.reward[s][a];
                for i in 0..6 {
                    dv1[s][i] += dmu[a][i] * self.reward[s][a];
                }
            }
        }
        let mut dj = vec![0.0; 6];
        for s in 0..2 {
            let (mu, dmu) = (self.mu(s)?, self.mu_grad(s)?);
            for a in 0..2 {
                let q = self.reward[s][a] + (0..2).map(|n| self.transition(s, a, n) * v1[n]).sum::<f64>();
                for i in 0..6 {
                    let dq: f64 = (0..2).map(|n| self.transition(s, a, n) * dv1[n][i]).sum();
                    dj[i] += self.rho[s] * (dmu[a][i] * q + mu[a] * dq);
                }
            }
        }
        Ok(dj)
    }

    /// Probability-weighted mean of the estimator over every trajectory.
    /// Rewards arrive as delayed feedback credited with `γ = 1`.
    pub fn enumerated_estimate(&self) -> Result<Vec<f64>> {
        let mut total = vec![0.0; 6];
        for s0 in 0..2 {
            for a0 in 0..2 {
                for s1 in 0..2 {
                    for a1 in 0..2 {
                        let (m0, m1) = (self.mu(s0)?, self.mu(s1)?);
                        let p = self.rho[s0] * m0[a0] * self.transition(s0, a0, s1) * m1[a1];
                        let mut traj = Trajectory::new(1);
                        let mut events = Vec::new();
                        for (tick, (s, a, m)) in [(s0, a0, &m0), (s1, a1, &m1)].into_iter().enumerate() {
                            traj.push(TrajectoryStep {
                                tick: tick as u64,
                                observation: features(s),
                                action: ActionId(a as u8),
                                reward: 0.0,
                                behavior_prob: m[a],
                                epsilon: self.epsilon,
                                policy_step: true,
                                registry_version: self.registry.version(),
                            })?;
                            events.push(FeedbackEvent {
                                emitted_tick: tick as u64,
                                observed_tick: tick as u64 + 1,
                                value: self.reward[s][a],
                                trajectory: 1,
                            });
                        }
                        let returns = credit_delayed(&traj, &events, 1.0)?;
                        let g: BTreeMap<ActionId, Vec<f64>> =
                            policy_gradient(&traj, &returns, &self.params, &self.registry, Baseline::None)?;
                        for (t, v) in total.iter_mut().zip(g.values().flatten()) {
                            *t += p * v;
                        }
                    }
                }
            }
        }
        Ok(total)
    }

    /// Largest absolute coordinate gap between the two gradients.
    pub fn unbiasedness_gap(&self) -> Result<f64> {
        let (a, b) = (self.exact_gradient()?, self.enumerated_estimate()?);
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }
}
