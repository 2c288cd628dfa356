//! The heartbeat loop.
//!
//! Each tick admits due external events, updates the mode, then either lets
//! the policy pick an activity (Active) or performs one unit of dream work
//! (Dream). Every tick appends exactly one trajectory step and one log entry.
//! Ticks are logical; [`run_wall_clock`] paces the same loop in real time.

mod dream;

use std::collections::BTreeMap;
use std::sync::mpsc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dream::{
    consolidate, context_bucket, propose_intrinsic_goal, synthetic_replay, BufferEntry, ConsolidationSummary,
    ContextEntry, IntrinsicGoal, ReplayMode,
};

use crate::domain::{
    compose_state, state_dim, ActionId, ActivityDescriptor, ActivityRegistry, EnvSnapshot, HistoryWindow, StateInputs,
    Trajectory, TrajectoryStep, Weather, MAX_ACTIONS,
};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::policy::{reinforce_update, select_activity, Baseline, CuratedDataset, ExplorationParams, PolicyParameters};
use crate::reward::{credit_delayed, target_alignment, Constraint, FeedbackEvent, InternalRewardTerms, RewardWeights, Value};
use crate::rng::{stream, Purpose};
use crate::synthgen::{sample_weather, temperature_model, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Active,
    Dream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Logical ticks between heartbeats.
    pub tick_interval: u64,
    pub idle_ticks_to_dream: u32,
    pub resource_floor: f64,
    pub initial_resource: f64,
    /// Drain per active tick, scaled by the activity's cost.
    pub drain_per_tick: f64,
    /// Recovery per Dream or Rest tick.
    pub recover_per_tick: f64,
    pub max_ticks: u64,
    /// Dream episodes end after this many ticks.
    pub max_dream_ticks: u32,
    pub history_k: usize,
    pub exploration: ExplorationParams,
    /// Set from the run configuration's top-level reward section.
    #[serde(skip)]
    pub reward: RewardWeights,
    pub gamma: f64,
    pub learning_rate: f64,
    pub baseline: Baseline,
    /// Ticks per policy-update segment.
    pub update_every: u64,
    /// Ticks a segment waits for delayed feedback before its update.
    pub feedback_lag: u64,
    pub curation_threshold: f64,
    /// Consolidation keeps low-value entries younger than this; `None` keeps all.
    pub retention: Option<u64>,
    pub prune_threshold: f64,
    pub replay_rollouts: usize,
    pub replay_length: usize,
    pub failure_penalty: f64,
    /// Ticks a task must wait before resolving it earns the efficacy bonus.
    pub long_standing_wait: u64,
    /// Per-tick arrival probability of generated external tasks.
    pub task_rate: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tick_interval: 1,
            idle_ticks_to_dream: 3,
            resource_floor: 0.2,
            initial_resource: 1.0,
            drain_per_tick: 0.01,
            recover_per_tick: 0.03,
            max_ticks: 10_000,
            max_dream_ticks: 12,
            history_k: crate::domain::DEFAULT_HISTORY_K,
            exploration: ExplorationParams::default(),
            reward: RewardWeights::default(),
            gamma: 0.9,
            learning_rate: 0.05,
            baseline: Baseline::TrajectoryMean,
            update_every: 24,
            feedback_lag: 12,
            curation_threshold: 0.0,
            retention: Some(500),
            prune_threshold: 0.05,
            replay_rollouts: 4,
            replay_length: 24,
            failure_penalty: 0.5,
            long_standing_wait: 3,
            task_rate: 0.15,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tick_interval == 0 {
            return Err(Error::config("engine.tick_interval", "must be positive"));
        }
        for (name, v) in [
            ("resource_floor", self.resource_floor),
            ("initial_resource", self.initial_resource),
            ("gamma", self.gamma),
            ("task_rate", self.task_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("engine.{name}"), "must lie in [0, 1]"));
            }
        }
        for (name, v) in [("drain_per_tick", self.drain_per_tick), ("recover_per_tick", self.recover_per_tick)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("engine.{name}"), "must be finite and >= 0"));
            }
        }
        if self.history_k == 0 || self.update_every == 0 {
            return Err(Error::config("engine.update_every", "history_k and update_every must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("engine.learning_rate", "must be positive"));
        }
        self.exploration.validate()?;
        self.reward.validate()
    }
}

/// An external task arriving at `tick`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEvent {
    pub id: u64,
    pub tick: u64,
    #[serde(default)]
    pub priority: i32,
    /// External reward for completing the task.
    #[serde(default = "one")]
    pub reward: f64,
}

fn one() -> f64 {
    1.0
}

/// Where each tick's environment comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvFeed {
    /// Weather and temperature from the synthetic generator's models.
    Generated(GeneratorConfig),
    /// Recorded snapshots, cycled when exhausted.
    Recorded(Vec<EnvSnapshot>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedEvent {
    pub event: ExternalEvent,
    pub enqueued: u64,
}

/// Everything that evolves from tick to tick. Cheap to clone as a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub mode: Mode,
    /// Next tick to run.
    pub tick: u64,
    pub resource: f64,
    /// Priority order: highest priority, then earliest enqueue, then id.
    pub queue: Vec<QueuedEvent>,
    pub history: HistoryWindow,
    pub idle_ticks: u32,
    pub dream_ticks: u32,
    pub last_action: Option<ActionId>,
    pub goals: Vec<IntrinsicGoal>,
    pub epsilon: f64,
    pub recent_mean_return: f64,
}

/// One line of the tick log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: u64,
    pub mode: Mode,
    pub state_hash: String,
    pub action: ActionId,
    /// Selection distribution over the registry (empty for dream work).
    pub probs: Vec<f64>,
    pub explored: bool,
    pub reward: f64,
    pub resource: f64,
    pub registry_version: u64,
    pub queue_len: usize,
    /// Task resolved this tick.
    pub resolved: Option<u64>,
    pub failed: bool,
    /// Micro-step indices executed inside the activity.
    pub micro: Vec<u32>,
    pub dream_work: Option<String>,
}

fn state_hash(s: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in s {
        h.update(x.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Mode update for one tick, given whether the queue holds events.
pub fn transition_mode(state: &mut EngineState, config: &EngineConfig) {
    let busy = !state.queue.is_empty();
    match state.mode {
        Mode::Dream => {
            if busy || state.resource < config.resource_floor || state.dream_ticks >= config.max_dream_ticks {
                state.mode = Mode::Active;
                state.idle_ticks = 0;
            }
        }
        Mode::Active => {
            if !busy && state.idle_ticks >= config.idle_ticks_to_dream && state.resource >= config.resource_floor {
                state.mode = Mode::Dream;
                state.dream_ticks = 0;
            }
        }
    }
}

pub struct Engine {
    config: EngineConfig,
    registry: ActivityRegistry,
    policy: PolicyParameters,
    state: EngineState,
    feed: EnvFeed,
    weather: Vec<Weather>,
    scheduled: Vec<ExternalEvent>,
    feedback: Vec<FeedbackEvent>,
    inbox: mpsc::Receiver<ExternalEvent>,
    sender: mpsc::Sender<ExternalEvent>,
    trajectory: Trajectory,
    contexts: Vec<u8>,
    updated_upto: u64,
    buffer: Vec<BufferEntry>,
    archive: Vec<BufferEntry>,
    dataset: CuratedDataset,
    summary: Option<ConsolidationSummary>,
    report: Option<EvalReport>,
    next_synthetic_id: u64,
    next_event_id: u64,
    late_feedback: u64,
}

impl Engine {
    pub fn new(config: EngineConfig, registry: ActivityRegistry, feed: EnvFeed) -> Result<Self> {
        config.validate()?;
        if let EnvFeed::Recorded(v) = &feed {
            if v.is_empty() {
                return Err(Error::invalid("recorded environment feed is empty"));
            }
            v.iter().try_for_each(|e| e.validate())?;
        }
        let policy = PolicyParameters::zeros(state_dim(MAX_ACTIONS, config.history_k), &registry, config.learning_rate)?;
        let fill = registry.action_ids()[0];
        let state = EngineState {
            mode: Mode::Active,
            tick: 0,
            resource: config.initial_resource,
            queue: vec![],
            history: HistoryWindow::filled(config.history_k, fill),
            idle_ticks: 0,
            dream_ticks: 0,
            last_action: None,
            goals: vec![],
            epsilon: config.exploration.epsilon,
            recent_mean_return: 0.0,
        };
        let (sender, inbox) = mpsc::channel();
        Ok(Engine {
            config,
            registry,
            policy,
            state,
            feed,
            weather: vec![],
            scheduled: vec![],
            feedback: vec![],
            inbox,
            sender,
            trajectory: Trajectory::new(0),
            contexts: vec![],
            updated_upto: 0,
            buffer: vec![],
            archive: vec![],
            dataset: CuratedDataset::new(),
            summary: None,
            report: None,
            next_synthetic_id: 1,
            next_event_id: 1 << 32,
            late_feedback: 0,
        })
    }

    /// Events to inject at their `tick` (replayable event feed).
    pub fn schedule_events(&mut self, mut events: Vec<ExternalEvent>) {
        self.scheduled.append(&mut events);
        self.scheduled.sort_by_key(|e| (e.tick, e.id));
    }

    /// Delayed feedback about the engine's own trajectory (id 0).
    pub fn add_feedback(&mut self, events: Vec<FeedbackEvent>) -> Result<()> {
        for e in &events {
            e.validate()?;
        }
        self.feedback.extend(events);
        Ok(())
    }

    /// Handle for enqueueing events from other threads; they are admitted at
    /// the start of the next tick.
    pub fn sender(&self) -> mpsc::Sender<ExternalEvent> {
        self.sender.clone()
    }

    /// Enqueues an event now; the next tick sees it.
    pub fn enqueue(&mut self, mut event: ExternalEvent) {
        event.tick = self.state.tick;
        self.admit(event);
    }

    pub fn set_eval_report(&mut self, report: EvalReport) {
        self.report = Some(report);
    }

    pub fn register(&mut self, desc: ActivityDescriptor) -> Result<()> {
        self.registry.register(desc)
    }

    pub fn remove(&mut self, action: ActionId) -> Result<ActivityDescriptor> {
        self.registry.remove(action)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn registry(&self) -> &ActivityRegistry {
        &self.registry
    }

    pub fn policy(&self) -> &PolicyParameters {
        &self.policy
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn dataset(&self) -> &CuratedDataset {
        &self.dataset
    }

    pub fn summary(&self) -> Option<&ConsolidationSummary> {
        self.summary.as_ref()
    }

    /// Entries pruned by consolidation, kept for archiving.
    pub fn archive(&self) -> &[BufferEntry] {
        &self.archive
    }

    pub fn late_feedback(&self) -> u64 {
        self.late_feedback
    }

    fn admit(&mut self, event: ExternalEvent) {
        let q = QueuedEvent { enqueued: event.tick, event };
        let key = |q: &QueuedEvent| (std::cmp::Reverse(q.event.priority), q.enqueued, q.event.id);
        let at = self.state.queue.partition_point(|x| key(x) <= key(&q));
        self.state.queue.insert(at, q);
    }

    fn env_at(&mut self, tick: u64) -> Result<EnvSnapshot> {
        let hour = (tick % 24) as u8;
        let day = (tick / 24) as usize;
        let mut env = match &self.feed {
            EnvFeed::Recorded(v) => v[(tick % v.len() as u64) as usize],
            EnvFeed::Generated(cfg) => {
                while self.weather.len() <= day {
                    let prev = self.weather.last().copied();
                    self.weather.push(sample_weather(cfg, self.weather.len(), prev));
                }
                let temp = temperature_model(day, hour, cfg.seed, &cfg.temperature, true);
                EnvSnapshot::new(self.weather[day], temp, hour, 1.0)?
            }
        };
        env.resource_level = self.state.resource;
        Ok(env)
    }

    fn generated_tasks(&mut self, tick: u64) {
        if self.config.task_rate <= 0.0 {
            return;
        }
        let mut rng = stream(self.config.seed, Purpose::Custom(0x7461_736b), tick, 0);
        if rng.gen::<f64>() < self.config.task_rate {
            let id = self.next_event_id;
            self.next_event_id += 1;
            let priority = rng.gen_range(0..3);
            self.admit(ExternalEvent { id, tick, priority, reward: 1.0 });
        }
    }

    fn fallback_action(&self, preferred: ActionId) -> ActionId {
        if self.registry.contains(preferred) {
            preferred
        } else {
            self.registry.action_ids()[0]
        }
    }

    /// Runs one heartbeat.
    pub fn tick(&mut self) -> Result<TickLog> {
        let k = self.state.tick;
        if k >= self.config.max_ticks {
            return Err(Error::invalid(format!("engine halted after {} ticks", self.config.max_ticks)));
        }
        while let Ok(mut e) = self.inbox.try_recv() {
            e.tick = k;
            self.admit(e);
        }
        while self.scheduled.first().is_some_and(|e| e.tick <= k) {
            let e = self.scheduled.remove(0);
            self.admit(e);
        }
        self.generated_tasks(k);
        transition_mode(&mut self.state, &self.config);
        if self.policy.registry_version != self.registry.version() {
            self.policy.sync(&self.registry)?;
        }

        let env = self.env_at(k)?;
        let inputs = StateInputs {
            macro_state: self.state.last_action.unwrap_or(ActionId(0)),
            last_action: self.state.last_action,
            pending_goals: self.state.goals.iter().map(|g| g.description.clone()).collect(),
        };
        let (_, obs) = compose_state(&inputs, &env, &self.state.history, MAX_ACTIONS)?;
        let mut rng = stream(self.config.seed, Purpose::Engine, k, 0);
        let mode = self.state.mode;
        let mut log = TickLog {
            tick: k,
            mode,
            state_hash: state_hash(&obs),
            action: ActionId(0),
            probs: vec![],
            explored: false,
            reward: 0.0,
            resource: 0.0,
            registry_version: self.registry.version(),
            queue_len: self.state.queue.len(),
            resolved: None,
            failed: false,
            micro: vec![],
            dream_work: None,
        };
        let (behavior_prob, epsilon, policy_step);
        match mode {
            Mode::Active => {
                let mut explore = self.config.exploration.clone();
                explore.epsilon = self.state.epsilon;
                let sel = select_activity(&obs, &self.policy, &self.registry, &explore, self.state.recent_mean_return, &mut rng)?;
                let desc = self.registry.get(sel.action).expect("selected from registry").clone();
                let success = rng.gen::<f64>() < desc.stub.success_prob;
                log.micro = self.micro_steps(&desc, &mut rng);
                let task = self.state.queue.first().cloned();
                let resolved = success && sel.action == ActionId::EXECUTE && task.is_some();
                let cost = if sel.action == ActionId::REST { -self.config.recover_per_tick } else { self.config.drain_per_tick * desc.cost };
                let resource_after = (self.state.resource - cost).clamp(0.0, 1.0);
                let expected = BTreeMap::from([
                    ("executed".to_string(), Constraint::Equals(Value::Bool(true))),
                    ("task".to_string(), Constraint::Equals(Value::Bool(task.is_some()))),
                    ("resource".to_string(), Constraint::AtLeast(self.config.resource_floor)),
                ]);
                let outcome = BTreeMap::from([
                    ("executed".to_string(), Value::Bool(success)),
                    ("task".to_string(), Value::Bool(resolved)),
                    ("resource".to_string(), Value::Num(resource_after)),
                ]);
                let waited = task.as_ref().map_or(0, |t| k - t.enqueued);
                let internal = InternalRewardTerms {
                    target_alignment: target_alignment(&expected, &outcome)?,
                    efficacy_bonus: if resolved && waited >= self.config.long_standing_wait { 1.0 } else { 0.0 },
                    transfer_bonus: 0.0,
                };
                let external = if resolved { task.as_ref().map_or(0.0, |t| t.event.reward) } else { 0.0 };
                let mut reward = self.config.reward.total(Mode::Active, external, &internal);
                if !success {
                    reward -= self.config.failure_penalty;
                }
                if resolved {
                    let t = self.state.queue.remove(0);
                    log.resolved = Some(t.event.id);
                }
                self.state.idle_ticks = if task.is_none() { self.state.idle_ticks + 1 } else { 0 };
                self.state.resource = resource_after;
                log.action = sel.action;
                log.probs = crate::policy::mixture(&sel.pi, sel.epsilon);
                log.explored = sel.explored;
                log.failed = !success;
                log.reward = reward;
                (behavior_prob, epsilon, policy_step) = (sel.prob, sel.epsilon, true);
            }
            Mode::Dream => {
                let (action, work, transfer) = self.dream_work(k, &mut rng)?;
                let internal = InternalRewardTerms { transfer_bonus: transfer, ..Default::default() };
                log.reward = self.config.reward.total(Mode::Dream, 0.0, &internal);
                log.action = action;
                log.dream_work = Some(work);
                self.state.dream_ticks += 1;
                self.state.resource = (self.state.resource + self.config.recover_per_tick).clamp(0.0, 1.0);
                (behavior_prob, epsilon, policy_step) = (1.0, 0.0, false);
            }
        }
        log.resource = self.state.resource;
        self.trajectory.push(TrajectoryStep {
            tick: k,
            observation: obs,
            action: log.action,
            reward: log.reward,
            behavior_prob,
            epsilon,
            policy_step,
            registry_version: self.registry.version(),
        })?;
        self.contexts.push(context_bucket(env.hour, env.weather.index()));
        self.state.history.push(log.action);
        self.state.last_action = Some(log.action);
        self.state.tick = k + self.config.tick_interval;
        self.maybe_update(k)?;
        Ok(log)
    }

    /// Runs `n` ticks and returns their log entries.
    pub fn run(&mut self, n: u64) -> Result<Vec<TickLog>> {
        (0..n).map(|_| self.tick()).collect()
    }

    fn micro_steps(&self, desc: &ActivityDescriptor, rng: &mut impl Rng) -> Vec<u32> {
        let n = desc.stub.micro_steps;
        match self.policy.micro.get(&desc.action) {
            Some(table) if !table.is_empty() => (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for (i, p) in table.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return i as u32;
                        }
                    }
                    table.len() as u32 - 1
                })
                .collect(),
            _ => (0..n).collect(),
        }
    }

    /// One unit of dream work, cycling consolidation, replay and goal work.
    fn dream_work(&mut self, k: u64, rng: &mut impl Rng) -> Result<(ActionId, String, f64)> {
        let version = self.registry.version();
        match self.state.dream_ticks % 3 {
            0 => {
                let (summary, kept, archived) =
                    consolidate(&self.buffer, MAX_ACTIONS, k, self.config.retention, self.config.prune_threshold)?;
                let work = format!("consolidate {} entries, pruned {}", summary.source_len, summary.pruned);
                self.buffer = kept;
                self.archive.extend(archived);
                self.summary = Some(summary);
                Ok((self.fallback_action(ActionId::SUMMARIZE), work, 0.0))
            }
            1 => {
                let action = self.fallback_action(ActionId::IMAGINE);
                let Some(summary) = self.summary.as_ref().filter(|s| !s.is_empty()) else {
                    return Ok((action, "replay skipped: nothing consolidated".into(), 0.0));
                };
                let mode = ReplayMode::Rollout { length: self.config.replay_length, start: None };
                let n = self.config.replay_rollouts.max(1);
                let trajs = synthetic_replay(summary, n, &mode, version, self.next_synthetic_id, rng)?;
                self.next_synthetic_id += trajs.len() as u64;
                let mut added = 0;
                for t in &trajs {
                    let returns = credit_delayed(t, &[], self.config.gamma)?;
                    added += self.dataset.curate(t, &returns, self.config.curation_threshold)?.added;
                }
                Ok((action, format!("replay {} rollouts, curated {added}", trajs.len()), 0.0))
            }
            _ => {
                let action = self.fallback_action(ActionId::RECALL);
                if let Some(goal) = self.report.as_ref().and_then(|r| propose_intrinsic_goal(r, &mut self.state.goals)) {
                    return Ok((action, format!("goal: {}", goal.description), 1.0));
                }
                if let (Some(goal), Some(summary)) = (self.state.goals.first().cloned(), self.summary.as_ref()) {
                    if !summary.is_empty() {
                        let mode = ReplayMode::Rollout { length: self.config.replay_length, start: Some(goal.action) };
                        let trajs = synthetic_replay(summary, 1, &mode, version, self.next_synthetic_id, rng)?;
                        self.next_synthetic_id += 1;
                        let returns = credit_delayed(&trajs[0], &[], self.config.gamma)?;
                        self.dataset.curate(&trajs[0], &returns, self.config.curation_threshold)?;
                        self.state.goals.remove(0);
                        return Ok((action, format!("practiced: {}", goal.description), 0.0));
                    }
                }
                Ok((action, "idle reflection".into(), 0.0))
            }
        }
    }

    /// Updates the policy on the segment whose feedback window just closed.
    fn maybe_update(&mut self, k: u64) -> Result<()> {
        let every = self.config.update_every;
        let lag = self.config.feedback_lag;
        if k < lag || (k - lag + 1) % every != 0 {
            return Ok(());
        }
        let end = k - lag + 1;
        let (from, to) = (self.updated_upto, end);
        self.updated_upto = end;
        let idx: Vec<usize> =
            (0..self.trajectory.len()).filter(|&i| (from..to).contains(&self.trajectory.steps[i].tick)).collect();
        if idx.is_empty() {
            return Ok(());
        }
        let mut seg = Trajectory::new(self.trajectory.id);
        for &i in &idx {
            let mut s = self.trajectory.steps[i].clone();
            s.policy_step &= self.registry.contains(s.action);
            seg.push(s)?;
        }
        let (events, rest): (Vec<FeedbackEvent>, Vec<FeedbackEvent>) =
            self.feedback.drain(..).partition(|e| (from..to).contains(&e.emitted_tick));
        self.feedback = rest;
        let (usable, late): (Vec<FeedbackEvent>, Vec<FeedbackEvent>) = events
            .into_iter()
            .filter(|e| e.trajectory == seg.id)
            .partition(|e| e.observed_tick <= k);
        self.late_feedback += late.len() as u64;
        let returns = credit_delayed(&seg, &usable, self.config.gamma)?;
        reinforce_update(&seg, Some(&returns), &mut self.policy, &self.registry, self.config.baseline)?;
        self.dataset.curate(&seg, &returns, self.config.curation_threshold)?;
        for (&i, &g) in idx.iter().zip(&returns) {
            let s = &self.trajectory.steps[i];
            if s.policy_step {
                self.buffer.push(BufferEntry { tick: s.tick, action: s.action, context: self.contexts[i], credited_return: g });
            }
        }
        self.state.recent_mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        let mut explore = self.config.exploration.clone();
        explore.epsilon = self.state.epsilon;
        explore.decay();
        self.state.epsilon = explore.epsilon;
        Ok(())
    }
}

/// Paces [`Engine::tick`] in wall-clock time.
pub fn run_wall_clock(engine: &mut Engine, interval: std::time::Duration, ticks: u64) -> Result<Vec<TickLog>> {
    let mut out = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        let start = std::time::Instant::now();
        out.push(engine.tick()?);
        if let Some(rest) = interval.checked_sub(start.elapsed()) {
            std::thread::sleep(rest);
        }
    }
    Ok(out)
}
