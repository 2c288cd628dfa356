//! Dream-mode work: consolidation, synthetic replay and intrinsic goals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionId, Trajectory, TrajectoryStep};
use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// One credited step kept for consolidation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub tick: u64,
    pub action: ActionId,
    /// Context bucket, see [`context_bucket`].
    pub context: u8,
    pub credited_return: f64,
}

/// `quarter_of_day * 4 + weather`, in `0..16`.
pub fn context_bucket(hour: u8, weather_index: usize) -> u8 {
    (hour / 6) * 4 + weather_index as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub action: ActionId,
    pub context: u8,
    pub count: u64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsolidationSummary {
    pub n_actions: usize,
    /// `transitions[a][b]`: entries with action `a` directly followed (next
    /// tick) by an entry with action `b`.
    pub transitions: Vec<Vec<u64>>,
    pub action_counts: Vec<u64>,
    /// Mean credited return per action, 0 for unseen actions.
    pub mean_return: Vec<f64>,
    /// Sorted by `(action, context)`.
    pub contexts: Vec<ContextEntry>,
    /// Summary keys per source entry, in `(0, 1]`.
    pub compression_ratio: f64,
    pub pruned: usize,
    pub source_len: usize,
    pub notes: Vec<String>,
}

impl ConsolidationSummary {
    pub fn is_empty(&self) -> bool {
        self.source_len == 0
    }

    /// Row-normalized successor distribution of `a`, `None` for an empty row.
    pub fn successor_distribution(&self, a: ActionId) -> Option<Vec<f64>> {
        let row = self.transitions.get(a.index())?;
        let total: u64 = row.iter().sum();
        (total > 0).then(|| row.iter().map(|&c| c as f64 / total as f64).collect())
    }

    fn action_distribution(&self) -> Option<Vec<f64>> {
        let total: u64 = self.action_counts.iter().sum();
        (total > 0).then(|| self.action_counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

/// Summarizes `buffer` and prunes entries older than `retention` ticks (as
/// of `now`) whose credited return is below `prune_threshold` in magnitude.
/// Returns the summary, the kept entries and the archived ones.
pub fn consolidate(
    buffer: &[BufferEntry],
    n_actions: usize,
    now: u64,
    retention: Option<u64>,
    prune_threshold: f64,
) -> Result<(ConsolidationSummary, Vec<BufferEntry>, Vec<BufferEntry>)> {
    if let Some(e) = buffer.iter().find(|e| e.action.index() >= n_actions) {
        return Err(Error::invalid(format!("buffer action {} outside {n_actions} actions", e.action)));
    }
    let mut transitions = vec![vec![0u64; n_actions]; n_actions];
    for w in buffer.windows(2) {
        if w[1].tick == w[0].tick + 1 {
            transitions[w[0].action.index()][w[1].action.index()] += 1;
        }
    }
    let mut action_counts = vec![0u64; n_actions];
    let mut return_sums = vec![0.0; n_actions];
    let mut ctx: std::collections::BTreeMap<(ActionId, u8), (u64, f64)> = Default::default();
    for e in buffer {
        action_counts[e.action.index()] += 1;
        return_sums[e.action.index()] += e.credited_return;
        let slot = ctx.entry((e.action, e.context)).or_default();
        slot.0 += 1;
        slot.1 += e.credited_return;
    }
    let mean_return =
        action_counts.iter().zip(&return_sums).map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let contexts: Vec<ContextEntry> = ctx
        .into_iter()
        .map(|((action, context), (count, sum))| ContextEntry { action, context, count, mean_return: sum / count as f64 })
        .collect();
    let (kept, archived): (Vec<BufferEntry>, Vec<BufferEntry>) = buffer.iter().cloned().partition(|e| {
        let old = retention.is_some_and(|r| now.saturating_sub(e.tick) > r);
        !(old && e.credited_return.abs() < prune_threshold)
    });
    let mut summary = ConsolidationSummary {
        n_actions,
        compression_ratio: if buffer.is_empty() { 1.0 } else { contexts.len() as f64 / buffer.len() as f64 },
        transitions,
        action_counts,
        mean_return,
        contexts,
        pruned: archived.len(),
        source_len: buffer.len(),
        notes: vec![],
    };
    summary.notes = notes(&summary);
    Ok((summary, kept, archived))
}

fn notes(s: &ConsolidationSummary) -> Vec<String> {
    let mut out = vec![];
    for a in 0..s.n_actions {
        let row = &s.transitions[a];
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        let (b, &c) = row.iter().enumerate().max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i))).expect("non-empty row");
        out.push(format!(
            "{} is most often followed by {} ({c}/{total}), mean return {:.3}",
            ActionId(a as u8).name(),
            ActionId(b as u8).name(),
            s.mean_return[a]
        ));
    }
    out
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayMode {
    /// Sample action chains from the consolidated transitions. Without a
    /// start action the first one follows the overall action frequencies.
    Rollout { length: usize, start: Option<ActionId> },
    /// Copy `source`, swap exactly one action per output, re-score rewards.
    Counterfactual { source: Trajectory },
}

/// Synthetic trajectories (marked `synthetic`) with ids `first_id..`.
/// Rewards come from the summary's mean return per action.
pub fn synthetic_replay(
    summary: &ConsolidationSummary,
    n: usize,
    mode: &ReplayMode,
    registry_version: u64,
    first_id: u64,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::invalid("synthetic replay needs n > 0"));
    }
    let score = |a: ActionId| summary.mean_return.get(a.index()).copied().unwrap_or(0.0);
    match mode {
        ReplayMode::Rollout { length, start } => {
            let freq = summary.action_distribution().ok_or_else(|| Error::invalid("rollout from an empty summary"))?;
            (0..n)
                .map(|k| {
                    let mut t = Trajectory { id: first_id + k as u64, synthetic: true, steps: vec![] };
                    let mut a = start.unwrap_or_else(|| ActionId(draw(&freq, rng.gen()) as u8));
                    let mut prob = if start.is_some() { 1.0 } else { freq[a.index()] };
                    for i in 0..*length {
                        t.push(replay_step(i as u64, vec![], a, score(a), prob, registry_version))?;
                        let next = summary.successor_distribution(a).unwrap_or_else(|| freq.clone());
                        let b = draw(&next, rng.gen());
                        prob = next[b];
                        a = ActionId(b as u8);
                    }
                    Ok(t)
                })
                .collect()
        }
        ReplayMode::Counterfactual { source } => {
            if source.is_empty() {
                return Err(Error::invalid("counterfactual replay of an empty trajectory"));
            }
            if summary.n_actions < 2 {
                return Err(Error::invalid("counterfactual replay needs at least two actions"));
            }
            (0..n)
                .map(|k| {
                    let at = rng.gen_range(0..source.len());
                    let old = source.steps[at].action.index();
                    let shift = rng.gen_range(1..summary.n_actions);
                    let swap = ActionId(((old + shift) % summary.n_actions) as u8);
                    let mut t = Trajectory { id: first_id + k as u64, synthetic: true, steps: vec![] };
                    for (i, s) in source.steps.iter().enumerate() {
                        let a = if i == at { swap } else { s.action };
                        t.push(replay_step(s.tick, s.observation.clone(), a, score(a), 1.0, registry_version))?;
                    }
                    Ok(t)
                })
                .collect()
        }
    }
}

fn replay_step(tick: u64, observation: Vec<f64>, action: ActionId, reward: f64, prob: f64, version: u64) -> TrajectoryStep {
    TrajectoryStep {
        tick,
        observation,
        action,
        reward,
        behavior_prob: prob,
        epsilon: 0.0,
        policy_step: false,
        registry_version: version,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrinsicGoal {
    pub action: ActionId,
    pub description: String,
}

/// Appends a "practice" goal for the class with the lowest recall below 1.
/// Returns the new goal, or `None` when nothing needs practice or the goal
/// is already pending.
pub fn propose_intrinsic_goal(report: &EvalReport, goals: &mut Vec<IntrinsicGoal>) -> Option<IntrinsicGoal> {
    let (worst, recall) = report
        .confusion
        .recall
        .iter()
        .enumerate()
        .filter_map(|(c, r)| r.map(|r| (c, r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if recall >= 1.0 {
        return None;
    }
    let action = ActionId(worst as u8);
    if goals.iter().any(|g| g.action == action) {
        return None;
    }
    let goal = IntrinsicGoal { action, description: format!("practice {}", action.name()) };
    goals.push(goal.clone());
    Some(goal)
}
