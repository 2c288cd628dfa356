//! Seeded generator for the synthetic daily-activity dataset.
//!
//! Each day draws its weather from a persistent Markov chain; each hour draws
//! a temperature and then an action from [`step_distribution`]. Every random
//! draw comes from its own `(purpose, day, hour)` substream, so changing the
//! tables or enabling drift never reshuffles unrelated draws.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    check_n_actions, ActionId, DayRecord, EnvSnapshot, HourRecord, Weather, HOURS_PER_DAY, MAX_ACTIONS,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

const DEFAULT_TOML: &str = include_str!("../config/generator.toml");
const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBlock {
    pub first_hour: u8,
    pub last_hour: u8,
    /// Base probabilities over all seven action ids.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    pub base_c: f64,
    pub seasonal_amp: f64,
    pub period_days: f64,
    pub diurnal_amp: f64,
    pub diurnal_phase_hour: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action6Trigger {
    pub first_hour: u8,
    pub last_hour: u8,
    pub weather: Weather,
    pub min_temp_c: f64,
}

impl Action6Trigger {
    /// Hour in window, matching weather, temperature strictly above the bound.
    pub fn fires(&self, hour: u8, env: &EnvSnapshot) -> bool {
        (self.first_hour..=self.last_hour).contains(&hour)
            && env.weather == self.weather
            && env.temperature_c > self.min_temp_c
    }
}

/// Replacement base tables from `day_index` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub day_index: usize,
    pub hour_blocks: Vec<HourBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_days: usize,
    pub n_actions: usize,
    pub seed: u64,
    pub exec_streak_boost: f64,
    pub action6_boost: f64,
    pub action6_self_boost: f64,
    pub weather_initial: [f64; 4],
    pub weather_transition: [[f64; 4]; 4],
    pub weather_modifiers: [[f64; MAX_ACTIONS]; 4],
    pub action6_trigger: Action6Trigger,
    pub temperature: TemperatureParams,
    pub hour_blocks: Vec<HourBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_TOML).expect("bundled generator config parses")
    }
}

fn check_row(path: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::config(path, "probabilities must be finite and non-negative"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(Error::config(path, format!("row sums to {s}, expected 1")));
    }
    Ok(())
}

fn check_blocks(path: &str, blocks: &[HourBlock]) -> Result<()> {
    let mut covered = [false; HOURS_PER_DAY];
    for (i, b) in blocks.iter().enumerate() {
        let p = format!("{path}[{i}]");
        if b.first_hour > b.last_hour || b.last_hour as usize >= HOURS_PER_DAY {
            return Err(Error::config(&p, format!("bad hour range {}..={}", b.first_hour, b.last_hour)));
        }
        if b.probs.len() != MAX_ACTIONS {
            return Err(Error::config(format!("{p}.probs"), format!("expected {MAX_ACTIONS} entries")));
        }
        check_row(&format!("{p}.probs"), &b.probs)?;
        for h in b.first_hour..=b.last_hour {
            if covered[h as usize] {
                return Err(Error::config(&p, format!("hour {h} covered twice")));
            }
            covered[h as usize] = true;
        }
    }
    if let Some(h) = covered.iter().position(|c| !c) {
        return Err(Error::config(path, format!("hour {h} not covered by any block")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn with(n_days: usize, n_actions: usize, seed: u64) -> Self {
        GeneratorConfig { n_days, n_actions, seed, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig =
            toml::from_str(text).map_err(|e| Error::config("generator", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check_n_actions(self.n_actions).map_err(|e| Error::config("n_actions", e.to_string()))?;
        if self.n_days == 0 {
            return Err(Error::config("n_days", "must be positive"));
        }
        check_row("weather_initial", &self.weather_initial)?;
        for (i, row) in self.weather_transition.iter().enumerate() {
            check_row(&format!("weather_transition[{i}]"), row)?;
        }
        for (i, row) in self.weather_modifiers.iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("weather_modifiers[{i}]"), "non-finite delta"));
            }
        }
        for (name, v) in [
            ("exec_streak_boost", self.exec_streak_boost),
            ("action6_boost", self.action6_boost),
            ("action6_self_boost", self.action6_self_boost),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        check_blocks("hour_blocks", &self.hour_blocks)?;
        if let Some(d) = &self.drift {
            check_blocks("drift.hour_blocks", &d.hour_blocks)?;
        }
        if self.temperature.noise_std < 0.0 || self.temperature.period_days <= 0.0 {
            return Err(Error::config("temperature", "noise_std >= 0 and period_days > 0 required"));
        }
        Ok(())
    }

    /// Base tables in force on `day`.
    pub fn blocks_for_day(&self, day: usize) -> &[HourBlock] {
        match &self.drift {
            Some(d) if day >= d.day_index => &d.hour_blocks,
            _ => &self.hour_blocks,
        }
    }
}

/// Chronological split of `(history, target day)` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub history_days: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    /// 70/15/15 with validation and test each `round(0.15 · samples)`.
    pub fn proportional(n_days: usize, history_days: usize) -> Result<Self> {
        if n_days <= history_days {
            return Err(Error::invalid(format!("{n_days} days leave no samples after {history_days} history days")));
        }
        let total = n_days - history_days;
        let held = (0.15 * total as f64).round() as usize;
        if total < 2 * held + 1 {
            return Err(Error::invalid(format!("{total} samples are too few to split")));
        }
        Ok(SplitSpec { history_days, train: total - 2 * held, val: held, test: held })
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Target-day indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub history_days: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

pub fn split_dataset(days: &[DayRecord], spec: &SplitSpec) -> Result<Splits> {
    let n = days.len();
    if n <= spec.history_days {
        return Err(Error::invalid(format!("{n} days cannot cover {} history days", spec.history_days)));
    }
    if spec.total() != n - spec.history_days {
        return Err(Error::invalid(format!(
            "split counts {}+{}+{} != {} samples",
            spec.train,
            spec.val,
            spec.test,
            n - spec.history_days
        )));
    }
    let h = spec.history_days;
    let a = h + spec.train;
    let b = a + spec.val;
    Ok(Splits { history_days: h, train: (h..a).collect(), val: (a..b).collect(), test: (b..n).collect() })
}

/// `base + seasonal·sin(2π·day/period) + diurnal·sin(2π·(hour−phase)/24) + ε`.
pub fn temperature_model(day: usize, hour: u8, seed: u64, params: &TemperatureParams, noise: bool) -> f64 {
    let seasonal = params.seasonal_amp * (2.0 * PI * day as f64 / params.period_days).sin();
    let diurnal = params.diurnal_amp * (2.0 * PI * (hour as f64 - params.diurnal_phase_hour) / 24.0).sin();
    let mut t = params.base_c + seasonal + diurnal;
    if noise && params.noise_std > 0.0 {
        let mut rng = stream(seed, Purpose::Temperature, day as u64, hour as u64);
        let eps: f64 = StandardNormal.sample(&mut rng);
        t += params.noise_std * eps;
    }
    t
}

/// Action distribution for one hour given the most recent actions (oldest first).
pub fn step_distribution(
    hour: u8,
    env: &EnvSnapshot,
    recent: &[ActionId],
    config: &GeneratorConfig,
) -> Result<Vec<f64>> {
    step_distribution_with(&config.hour_blocks, hour, env, recent, config)
}

fn step_distribution_with(
    blocks: &[HourBlock],
    hour: u8,
    env: &EnvSnapshot,
    recent: &[ActionId],
    config: &GeneratorConfig,
) -> Result<Vec<f64>> {
    let n = config.n_actions;
    let block = blocks
        .iter()
        .find(|b| (b.first_hour..=b.last_hour).contains(&hour))
        .ok_or_else(|| Error::invalid(format!("no hour block covers hour {hour}")))?;
    let mut p: Vec<f64> = block.probs[..n].to_vec();
    for (x, d) in p.iter_mut().zip(&config.weather_modifiers[env.weather.index()][..n]) {
        *x += d;
    }
    if let [.., a, b] = recent {
        if *a == ActionId::EXECUTE && *b == ActionId::EXECUTE {
            p[ActionId::SUMMARIZE.index()] += config.exec_streak_boost;
        }
    }
    if n == MAX_ACTIONS {
        let six = ActionId::RECALL_IMPORTANT.index();
        if config.action6_trigger.fires(hour, env) {
            p[six] += config.action6_boost;
            p[ActionId::IDLE.index()] -= config.action6_boost / 2.0;
            p[ActionId::RECALL.index()] -= config.action6_boost / 2.0;
        }
        if recent.last() == Some(&ActionId::RECALL_IMPORTANT) {
            p[six] += config.action6_self_boost;
        }
    }
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = p.iter().sum();
    if s <= 0.0 {
        return Err(Error::invalid(format!("all action probabilities vanished at hour {hour}")));
    }
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

/// Inverse-CDF draw; zero-probability categories are never returned.
fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc && x > 0.0 {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).expect("distribution has mass")
}

/// Weather of `day` given the previous day's weather (`None` on day 0).
pub fn sample_weather(cfg: &GeneratorConfig, day: usize, prev: Option<Weather>) -> Weather {
    let u: f64 = stream(cfg.seed, Purpose::Weather, day as u64, 0).gen();
    let row = match prev {
        None => &cfg.weather_initial,
        Some(w) => &cfg.weather_transition[w.index()],
    };
    Weather::ALL[sample_categorical(row, u)]
}

pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<DayRecord>> {
    config.validate()?;
    let mut days = Vec::with_capacity(config.n_days);
    let mut recent: Vec<ActionId> = Vec::with_capacity(2);
    let mut weather = None;
    for day in 0..config.n_days {
        let w = sample_weather(config, day, weather);
        weather = Some(w);
        let blocks = config.blocks_for_day(day);
        let mut hours = Vec::with_capacity(HOURS_PER_DAY);
        for hour in 0..HOURS_PER_DAY as u8 {
            let temp = temperature_model(day, hour, config.seed, &config.temperature, true);
            let env = EnvSnapshot::new(w, temp, hour, 1.0)?;
            let p = step_distribution_with(blocks, hour, &env, &recent, config)?;
            let u: f64 = stream(config.seed, Purpose::Action, day as u64, hour as u64).gen();
            let action = ActionId(sample_categorical(&p, u) as u8);
            if recent.len() == 2 {
                recent.remove(0);
            }
            recent.push(action);
            hours.push(HourRecord { day_index: day, env, action });
        }
        days.push(DayRecord::new(day, hours)?);
    }
    Ok(days)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(hour: u8, weather: Weather, t: f64) -> EnvSnapshot {
        EnvSnapshot::new(weather, t, hour, 1.0).unwrap()
    }

    #[test]
    fn bundled_config_is_valid() {
        let cfg = GeneratorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_days, 1800);
        assert_eq!(cfg.action6_boost, 0.12);
        assert_eq!(GeneratorConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn temperature_noise_off() {
        let p = GeneratorConfig::default().temperature;
        assert_eq!(temperature_model(0, 9, 1, &p, false), 15.0);
        let peak = (0..24u8).max_by(|&a, &b| {
            temperature_model(0, a, 1, &p, false).total_cmp(&temperature_model(0, b, 1, &p, false))
        });
        assert_eq!(peak, Some(15));
        assert_eq!(temperature_model(0, 15, 1, &p, false), 20.0);
    }

    #[test]
    fn temperature_deterministic_per_seed() {
        let p = GeneratorConfig::default().temperature;
        let a: Vec<f64> = (0..48).map(|i| temperature_model(i / 24, (i % 24) as u8, 9, &p, true)).collect();
        let b: Vec<f64> = (0..48).map(|i| temperature_model(i / 24, (i % 24) as u8, 9, &p, true)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn action6_boost_when_triggered() {
        let cfg = GeneratorConfig { n_actions: 7, ..Default::default() };
        let base = &cfg.hour_blocks.iter().find(|b| b.first_hour <= 13 && 13 <= b.last_hour).unwrap().probs;
        let p = step_distribution(13, &env(13, Weather::Sunny, 30.0), &[ActionId(2), ActionId(4)], &cfg).unwrap();
        // Idle and Recall can both fund 0.06, so no renormalization is needed.
        let expected = base[6] + 0.12;
        assert!((p[6] - expected).abs() < 1e-12, "{p:?}");
        assert!((p[0] - (base[0] - 0.06)).abs() < 1e-12);

        let q = step_distribution(13, &env(13, Weather::Cloudy, 30.0), &[ActionId(2), ActionId(4)], &cfg).unwrap();
        assert!((q[6] - base[6]).abs() < 1e-12);
        let r = step_distribution(13, &env(13, Weather::Sunny, 28.0), &[], &cfg).unwrap();
        assert_eq!(r[6], 0.0);
    }

    #[test]
    fn exec_streak_boosts_summarize() {
        let cfg = GeneratorConfig::default();
        let e = env(9, Weather::Cloudy, 20.0);
        let plain = step_distribution(9, &e, &[ActionId(2), ActionId(1)], &cfg).unwrap();
        let streak = step_distribution(9, &e, &[ActionId(1), ActionId(1)], &cfg).unwrap();
        let base = &cfg.hour_blocks[2].probs;
        assert!((plain[2] - base[2]).abs() < 1e-12);
        assert!((streak[2] - (base[2] + 0.15) / 1.15).abs() < 1e-12);
    }

    #[test]
    fn six_action_mode_never_emits_six() {
        let days = generate_dataset(&GeneratorConfig::with(60, 6, 3)).unwrap();
        assert_eq!(days.len(), 60);
        assert!(days.iter().flat_map(|d| &d.hours).all(|r| r.action.index() < 6));
    }

    #[test]
    fn same_seed_same_data_and_seed_matters() {
        let a = generate_dataset(&GeneratorConfig::with(30, 7, 5)).unwrap();
        let b = generate_dataset(&GeneratorConfig::with(30, 7, 5)).unwrap();
        let c = generate_dataset(&GeneratorConfig::with(30, 7, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn drift_swaps_tables_from_day() {
        let mut cfg = GeneratorConfig::with(40, 6, 5);
        let mut blocks = cfg.hour_blocks.clone();
        for b in &mut blocks {
            b.probs = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        }
        cfg.drift = Some(Drift { day_index: 20, hour_blocks: blocks });
        // Rest is certain after drift only if no modifier or boost can add mass.
        cfg.weather_modifiers = [[0.0; MAX_ACTIONS]; 4];
        cfg.exec_streak_boost = 0.0;
        let days = generate_dataset(&cfg).unwrap();
        assert!(days[20..].iter().flat_map(|d| &d.hours).all(|r| r.action == ActionId::REST));
        assert!(days[..20].iter().flat_map(|d| &d.hours).any(|r| r.action != ActionId::REST));
    }

    #[test]
    fn splits_match_reported_counts() {
        let spec = SplitSpec::proportional(1800, 3).unwrap();
        assert_eq!(spec.total(), 1797);
        assert_eq!((spec.train, spec.val, spec.test), (1257, 270, 270));
        let days = generate_dataset(&GeneratorConfig::with(40, 6, 1)).unwrap();
        let spec = SplitSpec::proportional(40, 3).unwrap();
        let s = split_dataset(&days, &spec).unwrap();
        assert_eq!(s.total(), 37);
        assert!(s.train.last() < s.val.first() && s.val.last() < s.test.first());
        let bad = SplitSpec { train: 10, ..spec };
        assert!(split_dataset(&days, &bad).is_err());
    }

    #[test]
    fn invalid_config_reports_field() {
        let mut cfg = GeneratorConfig::default();
        cfg.hour_blocks[0].probs[0] += 0.1;
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "hour_blocks[0].probs"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn distributions_always_valid(
            hour in 0u8..24,
            w in 0u8..4,
            t in -10.0f64..40.0,
            r1 in 0u8..7,
            r2 in 0u8..7,
            seven in any::<bool>(),
        ) {
            let n = if seven { 7 } else { 6 };
            let cfg = GeneratorConfig { n_actions: n, ..Default::default() };
            let recent = [ActionId(r1 % n as u8), ActionId(r2 % n as u8)];
            let p = step_distribution(hour, &env(hour, Weather::try_from(w).unwrap(), t), &recent, &cfg).unwrap();
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
