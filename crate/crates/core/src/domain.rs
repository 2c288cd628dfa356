//! Core data model shared by every module: actions, environment snapshots,
//! cognitive state, the activity registry and feature encoding.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest action space the toolkit knows about (ids 0..=6).
pub const MAX_ACTIONS: usize = 7;
/// Number of environment-only features appended after the action one-hot.
pub const ENV_FEATURES: usize = 8;
pub const HOURS_PER_DAY: usize = 24;
/// Default length of the action history window.
pub const DEFAULT_HISTORY_K: usize = 6;

const ACTION_NAMES: [&str; MAX_ACTIONS] = [
    "Idle",
    "Execute a Task",
    "Summarize the Experience",
    "Imagine the Future",
    "Recall the Past",
    "Rest",
    "Recalling What is Important for Current",
];

/// Category code of a thinking activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u8);

impl ActionId {
    pub const IDLE: ActionId = ActionId(0);
    pub const EXECUTE: ActionId = ActionId(1);
    pub const SUMMARIZE: ActionId = ActionId(2);
    pub const IMAGINE: ActionId = ActionId(3);
    pub const RECALL: ActionId = ActionId(4);
    pub const REST: ActionId = ActionId(5);
    pub const RECALL_IMPORTANT: ActionId = ActionId(6);

    /// Checked constructor for an action space of `n_actions` categories.
    pub fn new(id: usize, n_actions: usize) -> Result<Self> {
        check_n_actions(n_actions)?;
        if id >= n_actions {
            return Err(Error::invalid(format!(
                "action id {id} out of range for a {n_actions}-action space"
            )));
        }
        Ok(ActionId(id as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        ACTION_NAMES.get(self.index()).copied().unwrap_or("Unknown")
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name(), self.0)
    }
}

/// Only the 6- and 7-action modes exist.
pub fn check_n_actions(n_actions: usize) -> Result<()> {
    if n_actions == 6 || n_actions == 7 {
        Ok(())
    } else {
        Err(Error::invalid(format!("n_actions must be 6 or 7, got {n_actions}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Weather {
    Sunny = 0,
    Cloudy = 1,
    Rainy = 2,
    Windy = 3,
}

impl Weather {
    pub const ALL: [Weather; 4] = [Weather::Sunny, Weather::Cloudy, Weather::Rainy, Weather::Windy];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for Weather {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Weather::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("weather category {v} out of range 0..=3")))
    }
}

impl From<Weather> for u8 {
    fn from(w: Weather) -> u8 {
        w as u8
    }
}

/// `6 <= hour < 18` is day; the half-open range partitions the 24 hours.
pub fn is_day_hour(hour: u8) -> bool {
    (6..18).contains(&hour)
}

/// One observation of the outside world plus the simulated internal resource level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub weather: Weather,
    pub temperature_c: f64,
    pub hour: u8,
    pub is_day: bool,
    pub resource_level: f64,
}

impl EnvSnapshot {
    pub fn new(weather: Weather, temperature_c: f64, hour: u8, resource_level: f64) -> Result<Self> {
        let env = EnvSnapshot {
            weather,
            temperature_c,
            hour,
            is_day: is_day_hour(hour),
            resource_level,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hour > 23 {
            return Err(Error::invalid(format!("hour {} out of range 0..=23", self.hour)));
        }
        if self.is_day != is_day_hour(self.hour) {
            return Err(Error::invalid(format!(
                "is_day={} inconsistent with hour {}",
                self.is_day, self.hour
            )));
        }
        if !self.temperature_c.is_finite() {
            return Err(Error::invalid("temperature must be finite"));
        }
        if !(0.0..=1.0).contains(&self.resource_level) {
            return Err(Error::invalid(format!(
                "resource level {} outside [0, 1]",
                self.resource_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub day_index: usize,
    pub env: EnvSnapshot,
    pub action: ActionId,
}

/// One simulated day: exactly 24 hourly records in hour order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day_index: usize,
    pub hours: Vec<HourRecord>,
}

impl DayRecord {
    pub fn new(day_index: usize, hours: Vec<HourRecord>) -> Result<Self> {
        let day = DayRecord { day_index, hours };
        day.validate()?;
        Ok(day)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hours.len() != HOURS_PER_DAY {
            return Err(Error::invalid(format!(
                "day {} has {} hourly records, expected {HOURS_PER_DAY}",
                self.day_index,
                self.hours.len()
            )));
        }
        for (h, rec) in self.hours.iter().enumerate() {
            if rec.env.hour as usize != h || rec.day_index != self.day_index {
                return Err(Error::invalid(format!(
                    "day {}: record {h} is (day {}, hour {})",
                    self.day_index, rec.day_index, rec.env.hour
                )));
            }
            rec.env.validate()?;
        }
        Ok(())
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.hours.iter().map(|r| r.action).collect()
    }

    pub fn envs(&self) -> Vec<EnvSnapshot> {
        self.hours.iter().map(|r| r.env).collect()
    }
}

/// Fixed-length window over the most recent actions, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryWindow {
    actions: VecDeque<ActionId>,
}

impl HistoryWindow {
    /// A full window of length `k` holding `fill` everywhere.
    pub fn filled(k: usize, fill: ActionId) -> Self {
        assert!(k > 0, "history window needs k >= 1");
        HistoryWindow { actions: std::iter::repeat(fill).take(k).collect() }
    }

    pub fn from_actions(actions: Vec<ActionId>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("history window needs at least one action"));
        }
        Ok(HistoryWindow { actions: actions.into() })
    }

    pub fn k(&self) -> usize {
        self.actions.len()
    }

    /// Appends the newest action and drops the oldest.
    pub fn push(&mut self, a: ActionId) {
        self.actions.pop_front();
        self.actions.push_back(a);
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.actions.iter().copied()
    }

    pub fn last(&self) -> ActionId {
        *self.actions.back().expect("window is never empty")
    }

    pub fn is_constant(&self) -> bool {
        let first = self.actions[0];
        self.actions.iter().all(|&a| a == first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityGroup {
    Macro,
    Micro,
}

/// Simulated execution behaviour of an activity. No real actuation happens;
/// the stub only decides success and how many micro-steps were logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionStub {
    pub success_prob: f64,
    pub micro_steps: u32,
}

impl Default for ExecutionStub {
    fn default() -> Self {
        ExecutionStub { success_prob: 1.0, micro_steps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDescriptor {
    pub action: ActionId,
    pub name: String,
    /// Opaque per-activity parameter block.
    pub params: Vec<f64>,
    /// Compute cost in units; scales the per-tick resource drain.
    pub cost: f64,
    pub group: ActivityGroup,
    #[serde(default)]
    pub stub: ExecutionStub,
}

impl ActivityDescriptor {
    pub fn new(action: ActionId, cost: f64) -> Self {
        ActivityDescriptor {
            action,
            name: action.name().to_string(),
            params: Vec::new(),
            cost,
            group: ActivityGroup::Macro,
            stub: ExecutionStub::default(),
        }
    }
}

/// The versioned set of registered activities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRegistry {
    activities: BTreeMap<ActionId, ActivityDescriptor>,
    version: u64,
}

impl ActivityRegistry {
    pub fn new(first: ActivityDescriptor) -> Result<Self> {
        let mut reg = ActivityRegistry { activities: BTreeMap::new(), version: 0 };
        reg.register(first)?;
        reg.version = 0;
        Ok(reg)
    }

    /// Registry holding actions `0..n_actions` with unit cost, at version 0.
    pub fn with_actions(n_actions: usize) -> Result<Self> {
        check_n_actions(n_actions)?;
        let activities = (0..n_actions)
            .map(|i| {
                let a = ActionId(i as u8);
                (a, ActivityDescriptor::new(a, 1.0))
            })
            .collect();
        Ok(ActivityRegistry { activities, version: 0 })
    }

    pub fn register(&mut self, desc: ActivityDescriptor) -> Result<()> {
        if desc.action.index() >= MAX_ACTIONS {
            return Err(Error::Registry(format!("action id {} exceeds the supported space", desc.action.0)));
        }
        if !desc.cost.is_finite() || desc.cost < 0.0 {
            return Err(Error::Registry(format!("cost {} must be finite and >= 0", desc.cost)));
        }
        if self.activities.contains_key(&desc.action) {
            return Err(Error::Registry(format!("activity {} already registered", desc.action)));
        }
        self.activities.insert(desc.action, desc);
        self.version += 1;
        Ok(())
    }

    pub fn remove(&mut self, action: ActionId) -> Result<ActivityDescriptor> {
        if !self.activities.contains_key(&action) {
            return Err(Error::Registry(format!("activity {action} not registered")));
        }
        if self.activities.len() == 1 {
            return Err(Error::Registry("cannot remove the last registered activity".into()));
        }
        self.version += 1;
        Ok(self.activities.remove(&action).expect("checked above"))
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn contains(&self, a: ActionId) -> bool {
        self.activities.contains_key(&a)
    }

    pub fn get(&self, a: ActionId) -> Option<&ActivityDescriptor> {
        self.activities.get(&a)
    }

    /// Registered actions in ascending id order.
    pub fn action_ids(&self) -> Vec<ActionId> {
        self.activities.keys().copied().collect()
    }

    /// Same activity set, ignoring version counters.
    pub fn same_activities(&self, other: &ActivityRegistry) -> bool {
        self.activities == other.activities
    }
}

/// Self-sensed data carried in the cognitive state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfData {
    pub resource_level: f64,
    pub pending_goals: Vec<String>,
}

/// The thinking state: current mode, context, previous action and self data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveState {
    pub macro_state: ActionId,
    pub context: EnvSnapshot,
    pub recent: Vec<ActionId>,
    pub last_action: Option<ActionId>,
    pub self_data: SelfData,
}

/// Engine-side inputs to [`compose_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateInputs {
    pub macro_state: ActionId,
    pub last_action: Option<ActionId>,
    pub pending_goals: Vec<String>,
}

/// The environment-only part of the hourly features:
/// `[weather one-hot (4) | (T-15)/15 | is_day | sin(2πh/24) | cos(2πh/24)]`.
pub fn env_features(hour: u8, env: &EnvSnapshot) -> Result<[f64; ENV_FEATURES]> {
    if hour > 23 {
        return Err(Error::invalid(format!("hour {hour} out of range 0..=23")));
    }
    if !env.temperature_c.is_finite() {
        return Err(Error::invalid("temperature must be finite"));
    }
    let mut out = [0.0; ENV_FEATURES];
    out[env.weather.index()] = 1.0;
    out[4] = (env.temperature_c - 15.0) / 15.0;
    out[5] = if is_day_hour(hour) { 1.0 } else { 0.0 };
    let angle = 2.0 * PI * hour as f64 / 24.0;
    out[6] = angle.sin();
    out[7] = angle.cos();
    Ok(out)
}

/// Hourly feature vector: `[action one-hot (n_actions) | env features (8)]`.
/// `action = None` leaves the one-hot block at zero.
pub fn encode_hour_features(
    hour: u8,
    env: &EnvSnapshot,
    action: Option<ActionId>,
    n_actions: usize,
) -> Result<Vec<f64>> {
    check_n_actions(n_actions)?;
    let mut v = vec![0.0; n_actions + ENV_FEATURES];
    if let Some(a) = action {
        if a.index() >= n_actions {
            return Err(Error::invalid(format!(
                "action {} out of range for {n_actions}-action encoding",
                a.0
            )));
        }
        v[a.index()] = 1.0;
    }
    v[n_actions..].copy_from_slice(&env_features(hour, env)?);
    Ok(v)
}

/// Concatenated positional one-hots of the window, oldest block first.
pub fn history_embedding(window: &HistoryWindow, n_actions: usize) -> Vec<f64> {
    let mut v = vec![0.0; window.k() * n_actions];
    for (slot, a) in window.iter().enumerate() {
        debug_assert!(a.index() < n_actions);
        if a.index() < n_actions {
            v[slot * n_actions + a.index()] = 1.0;
        }
    }
    v
}

/// Builds the cognitive state and the augmented policy input
/// `[hour features | resource level | history embedding]`.
pub fn compose_state(
    inputs: &StateInputs,
    env: &EnvSnapshot,
    history: &HistoryWindow,
    n_actions: usize,
) -> Result<(CognitiveState, Vec<f64>)> {
    env.validate()?;
    let mut features = encode_hour_features(env.hour, env, inputs.last_action, n_actions)?;
    features.push(env.resource_level);
    features.extend(history_embedding(history, n_actions));
    let state = CognitiveState {
        macro_state: inputs.macro_state,
        context: *env,
        recent: history.iter().collect(),
        last_action: inputs.last_action,
        self_data: SelfData {
            resource_level: env.resource_level,
            pending_goals: inputs.pending_goals.clone(),
        },
    };
    Ok((state, features))
}

/// Width of the vector returned by [`compose_state`].
pub fn state_dim(n_actions: usize, k: usize) -> usize {
    n_actions + ENV_FEATURES + 1 + k * n_actions
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub tick: u64,
    pub observation: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    /// Probability with which the behaviour distribution picked `action`.
    pub behavior_prob: f64,
    /// Exploration weight of the uniform component when the step was taken.
    pub epsilon: f64,
    /// Whether the step was chosen by the scheduling policy (dream work is not).
    pub policy_step: bool,
    pub registry_version: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub synthetic: bool,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(id: u64) -> Self {
        Trajectory { id, synthetic: false, steps: Vec::new() }
    }

    /// Appends a step; ticks must strictly increase and rewards be finite.
    pub fn push(&mut self, step: TrajectoryStep) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if step.tick <= last.tick {
                return Err(Error::invalid(format!(
                    "trajectory {}: tick {} not after {}",
                    self.id, step.tick, last.tick
                )));
            }
        }
        if !step.reward.is_finite() {
            return Err(Error::invalid(format!("trajectory {}: non-finite reward", self.id)));
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }
}
