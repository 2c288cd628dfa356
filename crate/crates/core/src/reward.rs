//! Composite reward and delayed-feedback credit assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Trajectory;
use crate::engine::Mode;
use crate::error::{Error, Result};

/// `R_total = α·R_ext + β·R_int`, with optional per-mode `(α, β)` overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Weights of `(target_alignment, efficacy_bonus, transfer_bonus)` inside
    /// `R_int`.
    pub internal_terms: [f64; 3],
    pub context_adjust: BTreeMap<Mode, (f64, f64)>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { alpha: 0.5, beta: 0.5, internal_terms: [1.0; 3], context_adjust: BTreeMap::new() }
    }
}

fn check_pair(path: &str, alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::config(path, "alpha and beta must be finite and >= 0"));
    }
    if alpha + beta <= 0.0 {
        return Err(Error::config(path, "alpha + beta must be positive"));
    }
    Ok(())
}

impl RewardWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = RewardWeights { alpha, beta, ..Default::default() };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        check_pair("reward.alpha", self.alpha, self.beta)?;
        if self.internal_terms.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("reward.internal_terms", "weights must be finite and >= 0"));
        }
        for (mode, &(a, b)) in &self.context_adjust {
            check_pair(&format!("reward.context_adjust.{mode:?}"), a, b)?;
        }
        Ok(())
    }

    /// `(α, β)` in effect for `mode`.
    pub fn for_mode(&self, mode: Mode) -> (f64, f64) {
        self.context_adjust.get(&mode).copied().unwrap_or((self.alpha, self.beta))
    }

    pub fn internal(&self, t: &InternalRewardTerms) -> f64 {
        let [a, e, x] = self.internal_terms;
        a * t.target_alignment + e * t.efficacy_bonus + x * t.transfer_bonus
    }

    pub fn total(&self, mode: Mode, external: f64, internal: &InternalRewardTerms) -> f64 {
        let (alpha, beta) = self.for_mode(mode);
        alpha * external + beta * self.internal(internal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InternalRewardTerms {
    /// Share of the expected target met, in `[0, 1]`.
    pub target_alignment: f64,
    /// Bonus for resolving a novel or long-standing issue, `>= 0`.
    pub efficacy_bonus: f64,
    /// Bonus for formalizing a new goal, `>= 0`.
    pub transfer_bonus: f64,
}

impl InternalRewardTerms {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_alignment) {
            return Err(Error::invalid(format!("target_alignment {} outside [0, 1]", self.target_alignment)));
        }
        for (name, v) in [("efficacy_bonus", self.efficacy_bonus), ("transfer_bonus", self.transfer_bonus)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `α·R_ext + β·(alignment + efficacy + transfer)` with the base weights.
pub fn composite_reward(external: f64, internal: &InternalRewardTerms, weights: &RewardWeights) -> f64 {
    weights.alpha * external + weights.beta * (internal.target_alignment + internal.efficacy_bonus + internal.transfer_bonus)
}

/// An observed outcome value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Num(f64),
    Text(String),
}

/// One expected-target constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Equals(Value),
    AtMost(f64),
    AtLeast(f64),
}

impl Constraint {
    pub fn satisfied_by(&self, v: &Value) -> bool {
        match (self, v) {
            (Constraint::Equals(want), got) => want == got,
            (Constraint::AtMost(x), Value::Num(y)) => y <= x,
            (Constraint::AtLeast(x), Value::Num(y)) => y >= x,
            _ => false,
        }
    }
}

/// Fraction of expected constraints the outcome satisfies. Keys missing from
/// the outcome count as violated; fully disjoint key sets are an error.
pub fn target_alignment(expected: &BTreeMap<String, Constraint>, outcome: &BTreeMap<String, Value>) -> Result<f64> {
    if expected.is_empty() {
        return Err(Error::invalid("expected target has no constraints"));
    }
    if !expected.keys().any(|k| outcome.contains_key(k)) {
        return Err(Error::invalid("expected target and outcome share no keys"));
    }
    let met = expected.iter().filter(|(k, c)| outcome.get(*k).is_some_and(|v| c.satisfied_by(v))).count();
    Ok(met as f64 / expected.len() as f64)
}

/// A reward signal about the decision at `emitted_tick`, observed later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub emitted_tick: u64,
    pub observed_tick: u64,
    pub value: f64,
    pub trajectory: u64,
}

impl FeedbackEvent {
    pub fn validate(&self) -> Result<()> {
        if self.observed_tick < self.emitted_tick {
            return Err(Error::invalid(format!(
                "feedback observed at {} before its emission at {}",
                self.observed_tick, self.emitted_tick
            )));
        }
        if !self.value.is_finite() {
            return Err(Error::invalid("feedback value must be finite"));
        }
        Ok(())
    }
}

/// Per-step credited returns: each step's own reward plus, for every event,
/// `v·γ^(t_e - t)` on every step with tick `t <= t_e`.
///
/// Event contributions are summed in a canonical order, so the result does
/// not depend on the order of `events`.
pub fn credit_delayed(traj: &Trajectory, events: &[FeedbackEvent], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    for e in events {
        e.validate()?;
        if e.trajectory != traj.id {
            return Err(Error::invalid(format!("feedback for trajectory {} applied to {}", e.trajectory, traj.id)));
        }
    }
    let mut sorted: Vec<&FeedbackEvent> = events.iter().collect();
    sorted.sort_by(|a, b| {
        (a.emitted_tick, a.observed_tick, a.value.to_bits()).cmp(&(b.emitted_tick, b.observed_tick, b.value.to_bits()))
    });
    Ok(traj
        .steps
        .iter()
        .map(|s| {
            let mut g = s.reward;
            for e in sorted.iter().filter(|e| s.tick <= e.emitted_tick) {
                g += e.value * decay(gamma, e.emitted_tick - s.tick);
            }
            g
        })
        .collect())
}

/// `γ^k` with `0^0 = 1`.
fn decay(gamma: f64, k: u64) -> f64 {
    if k == 0 {
        1.0
    } else {
        gamma.powf(k as f64)
    }
}
