//! Multi-day sequence forecaster: a recurrent encoder per history day,
//! positional multi-head self-attention across days, and a recurrent decoder
//! with additive attention over every encoded hour.

mod model;
mod reference;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    check_n_actions, encode_hour_features, env_features, ActionId, DayRecord, EnvSnapshot, ENV_FEATURES,
    HOURS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::numkit::{compensated_sum, dd, finite_diff_check, GradCheckReport, OptimState, ParamStore, Tensor};
use crate::par::{self, Exec};
use crate::rng::{stream, Purpose};
use crate::synthgen::Splits;

pub use model::positional_encoding;
use model::{chunk_backward, chunk_forward, chunk_losses, days_forward, decoder_forward, encoder_forward, Feed, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub history_days: usize,
    pub n_heads: usize,
    pub n_actions: usize,
    pub hours_per_day: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub tf_start: f64,
    pub tf_end: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Samples per gradient work unit. Chunk gradients are summed in chunk
    /// order, so results do not depend on how chunks are scheduled.
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            hidden_dim: 128,
            encoder_layers: 2,
            history_days: 3,
            n_heads: 4,
            n_actions: 6,
            hours_per_day: HOURS_PER_DAY,
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            tf_start: 0.8,
            tf_end: 0.2,
            grad_clip: Some(5.0),
            chunk_size: 8,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    /// The small model used for gradient checking: hidden 8, two history
    /// days of six hours.
    pub fn micro(n_actions: usize, seed: u64) -> Self {
        ForecasterConfig {
            hidden_dim: 8,
            history_days: 2,
            hours_per_day: 6,
            n_actions,
            batch_size: 4,
            chunk_size: 2,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_n_actions(self.n_actions).map_err(|e| Error::config("forecaster.n_actions", e.to_string()))?;
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("history_days", self.history_days),
            ("n_heads", self.n_heads),
            ("hours_per_day", self.hours_per_day),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("chunk_size", self.chunk_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("forecaster.{name}"), "must be positive"));
            }
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::config(
                "forecaster.n_heads",
                format!("hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.n_heads),
            ));
        }
        if !(0.0..=1.0).contains(&self.tf_end) || !(self.tf_end..=1.0).contains(&self.tf_start) {
            return Err(Error::config("forecaster.tf_start", "need 0 <= tf_end <= tf_start <= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("forecaster.learning_rate", "must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("forecaster.grad_clip", "must be positive"));
            }
        }
        Ok(())
    }

    /// Linear decay from `tf_start` at epoch 0 to `tf_end` at the last epoch.
    pub fn tf_ratio(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.tf_start;
        }
        if epoch + 1 >= self.epochs {
            return self.tf_end;
        }
        self.tf_start + (self.tf_end - self.tf_start) * epoch as f64 / (self.epochs - 1) as f64
    }
}

/// One training example: `history_days` encoded days and the target day.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index of the target day in the dataset.
    pub day: usize,
    /// `H x T x (n_actions + 8)` encoder features, oldest day first.
    pub history: Vec<f64>,
    /// `T x 8` environment features of the target day.
    pub env: Vec<f64>,
    /// Target actions, one per hour.
    pub target: Vec<usize>,
}

impl Sample {
    /// Builds the sample whose target is `days[target]`.
    pub fn from_days(days: &[DayRecord], target: usize, history_days: usize, n_actions: usize) -> Result<Self> {
        if target < history_days || target >= days.len() {
            return Err(Error::invalid(format!(
                "target day {target} needs {history_days} earlier days within {} days",
                days.len()
            )));
        }
        Self::from_parts(&days[target - history_days..target], &days[target].envs(), Some(&days[target]), n_actions)
            .map(|mut s| {
                s.day = target;
                s
            })
    }

    /// Builds an unlabelled sample from explicit history and target environment.
    pub fn from_history(history: &[DayRecord], target_env: &[EnvSnapshot], n_actions: usize) -> Result<Self> {
        Self::from_parts(history, target_env, None, n_actions)
    }

    fn from_parts(
        history: &[DayRecord],
        target_env: &[EnvSnapshot],
        target: Option<&DayRecord>,
        n_actions: usize,
    ) -> Result<Self> {
        check_n_actions(n_actions)?;
        let mut h = Vec::with_capacity(history.len() * HOURS_PER_DAY * (n_actions + ENV_FEATURES));
        for d in history {
            for r in &d.hours {
                h.extend(encode_hour_features(r.env.hour, &r.env, Some(r.action), n_actions)?);
            }
        }
        let mut env = Vec::with_capacity(target_env.len() * ENV_FEATURES);
        for e in target_env {
            env.extend_from_slice(&env_features(e.hour, e)?);
        }
        let labels = match target {
            Some(d) => d
                .hours
                .iter()
                .map(|r| {
                    if r.action.index() >= n_actions {
                        Err(Error::invalid(format!(
                            "day {} hour {} has action {} but the model has {n_actions} actions",
                            d.day_index, r.env.hour, r.action.0
                        )))
                    } else {
                        Ok(r.action.index())
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![0; target_env.len()],
        };
        Ok(Sample { day: target.map_or(0, |d| d.day_index), history: h, env, target: labels })
    }

    fn check(&self, lay: &Layout) -> Result<()> {
        let t = lay.hours;
        if self.history.len() != lay.history * t * lay.enc_input()
            || self.env.len() != t * ENV_FEATURES
            || self.target.len() != t
        {
            return Err(Error::shape(
                "forecaster_sample",
                format!(
                    "history {} / env {} / target {} values do not fit {} days of {t} hours",
                    self.history.len(),
                    self.env.len(),
                    self.target.len(),
                    lay.history
                ),
            ));
        }
        if let Some(&a) = self.target.iter().find(|&&a| a >= lay.n_actions) {
            return Err(Error::invalid(format!("target action {a} >= {} actions", lay.n_actions)));
        }
        Ok(())
    }
}

/// Samples for the given target-day indices.
pub fn build_samples(days: &[DayRecord], targets: &[usize], history_days: usize, n_actions: usize) -> Result<Vec<Sample>> {
    targets.iter().map(|&t| Sample::from_days(days, t, history_days, n_actions)).collect()
}

/// How predictions choose each hour's action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    /// Seeded ancestral sampling that ignores classes below `min_prob`. The
    /// draws for a day depend only on `seed` and the day index.
    Sample { seed: u64, min_prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub day: usize,
    pub actions: Vec<ActionId>,
    /// Per-hour probability vectors.
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// `T x n_actions`.
    pub logits: Tensor,
    /// Action fed into each step; `None` marks the start token.
    pub fed: Vec<Option<ActionId>>,
    /// Attention weights over the `H·T` memory rows, per step.
    pub attention: Vec<Vec<f64>>,
}

/// Model parameters bound to their config.
#[derive(Debug, Clone)]
pub struct Forecaster {
    config: ForecasterConfig,
    layout: Layout,
    params: ParamStore,
}

impl Forecaster {
    pub fn new(config: ForecasterConfig) -> Result<Self> {
        let (layout, params) = Layout::init(&config)?;
        Ok(Forecaster { config, layout, params })
    }

    /// Binds existing parameters; names and shapes must match `config`.
    pub fn from_params(config: ForecasterConfig, params: ParamStore) -> Result<Self> {
        let (layout, fresh) = Layout::init(&config)?;
        let names: Vec<&str> = fresh.names().collect();
        if params.names().collect::<Vec<_>>() != names {
            return Err(Error::invalid("parameter names do not match the forecaster config"));
        }
        for id in 0..fresh.len() {
            if fresh.value(id).shape() != params.value(id).shape() {
                return Err(Error::shape(
                    "forecaster_params",
                    format!("`{}` has shape {:?}, expected {:?}", names[id], params.value(id).shape(), fresh.value(id).shape()),
                ));
            }
        }
        Ok(Forecaster { config, layout, params })
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Encodes one day of `T x (n_actions + 8)` features. Returns the top-layer
    /// hourly states `[T, hidden]` and the day embedding (last hourly state).
    pub fn encode_day(&self, features: &[f64]) -> Result<(Tensor, Tensor)> {
        let lay = &self.layout;
        let (t, d) = (lay.hours, lay.enc_input());
        if features.len() != t * d {
            return Err(Error::shape("encode_day", format!("{} values, expected {t} x {d}", features.len())));
        }
        // Run a single-day model: the history axis has length one.
        let one = Layout { history: 1, ..lay.clone() };
        let s = Sample { day: 0, history: features.to_vec(), env: vec![], target: vec![] };
        let enc = encoder_forward(&one, &self.params, &[&s]);
        let hd = lay.hidden;
        let mut states = Vec::with_capacity(t * hd);
        for step in &enc.top {
            states.extend_from_slice(step);
        }
        let emb = enc.top[t - 1].clone();
        Ok((Tensor::from_vec(&[t, hd], states)?, Tensor::from_vec(&[hd], emb)?))
    }

    /// Positional self-attention across `[H, hidden]` day embeddings. Returns
    /// the attended embeddings and the per-head `H x H` weight matrices.
    pub fn attend_days(&self, embeddings: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let lay = &self.layout;
        let hd = lay.hidden;
        if embeddings.shape() != [lay.history, hd] {
            return Err(Error::shape(
                "attend_days",
                format!("embeddings {:?}, expected [{}, {hd}]", embeddings.shape(), lay.history),
            ));
        }
        // Feed the embeddings as the last encoder step of a one-hour encoder output.
        let enc = model::EncoderOut { caches: vec![], top: vec![embeddings.data().to_vec()] };
        let one_hour = Layout { hours: 1, ..lay.clone() };
        let days = days_forward(&one_hour, &self.params, &enc, 1);
        Ok((Tensor::from_vec(&[lay.history, hd], days.attended[0].clone())?, days.mhsa[0].weights.clone()))
    }

    /// Decodes one day over an `[H·T, hidden]` memory. With a teacher sequence
    /// each step is fed the true previous action with probability `tf_ratio`
    /// (coins drawn from `seed`); otherwise the model's own argmax.
    pub fn decode_day(
        &self,
        memory: &Tensor,
        target_env: &[f64],
        teacher: Option<&[ActionId]>,
        tf_ratio: f64,
        seed: u64,
    ) -> Result<DecodeOutput> {
        let lay = &self.layout;
        let (t, hd, na) = (lay.hours, lay.hidden, lay.n_actions);
        if !(0.0..=1.0).contains(&tf_ratio) {
            return Err(Error::invalid(format!("tf_ratio {tf_ratio} outside [0, 1]")));
        }
        if memory.shape() != [lay.history * t, hd] || target_env.len() != t * ENV_FEATURES {
            return Err(Error::shape(
                "decode_day",
                format!("memory {:?} / env {} values for {} days of {t} hours", memory.shape(), target_env.len(), lay.history),
            ));
        }
        let targets: Vec<usize> = match teacher {
            Some(seq) if seq.len() != t => {
                return Err(Error::shape("decode_day", format!("teacher has {} steps, expected {t}", seq.len())))
            }
            Some(seq) => seq.iter().map(|a| a.index()).collect(),
            None => vec![0; t],
        };
        let coins = vec![teacher_coins(seed, 0, 0, t, if teacher.is_some() { tf_ratio } else { 0.0 })];
        let mut keys = vec![0.0; lay.history * t * hd];
        crate::numkit::gemm(
            lay.history * t,
            hd,
            hd,
            1.0,
            memory.data(),
            false,
            self.params.by_name("attn.wk")?.data(),
            false,
            0.0,
            &mut keys,
        );
        let dec = decoder_forward(
            lay,
            &self.params,
            &[memory.data().to_vec()],
            &[keys],
            &[target_env],
            &[&targets],
            Feed::Teacher { coins: &coins },
        );
        let mut logits = Vec::with_capacity(t * na);
        for step in &dec.logits {
            logits.extend_from_slice(step);
        }
        Ok(DecodeOutput {
            logits: Tensor::from_vec(&[t, na], logits)?,
            fed: dec.fed[0].iter().map(|f| f.map(|a| ActionId(a as u8))).collect(),
            attention: dec.attend.iter().map(|step| step[0].weights.clone()).collect(),
        })
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::invalid("empty sample set"));
        }
        samples.iter().try_for_each(|s| s.check(&self.layout))
    }

    /// Mean per-hour cross-entropy with the decoder fed according to `coins`
    /// (`coins[i][t]` true = teacher at step `t` of sample `i`).
    pub fn loss(&self, samples: &[Sample], coins: &[Vec<bool>], exec: Exec) -> Result<f64> {
        self.check_samples(samples)?;
        Ok(self.loss_with(&self.params, samples, coins, exec))
    }

    fn loss_with(&self, params: &ParamStore, samples: &[Sample], coins: &[Vec<bool>], exec: Exec) -> f64 {
        let chunks = self.chunks(samples, coins);
        let terms = par::map(exec, &chunks, |(refs, c)| {
            let fwd = chunk_forward(&self.layout, params, refs, Feed::Teacher { coins: c });
            chunk_losses(&self.layout, &fwd, refs)
        });
        compensated_sum(terms.into_iter().flatten()) / (samples.len() * self.layout.hours) as f64
    }

    /// Like [`Forecaster::loss`], also writing the gradient of the mean loss
    /// into the parameter gradient buffers (overwriting them).
    pub fn loss_and_grad(&mut self, samples: &[Sample], coins: &[Vec<bool>], exec: Exec) -> Result<f64> {
        self.check_samples(samples)?;
        let scale = 1.0 / (samples.len() * self.layout.hours) as f64;
        let (lay, params) = (&self.layout, &self.params);
        let chunks = self.chunks(samples, coins);
        let results = par::map(exec, &chunks, |(refs, c)| {
            let fwd = chunk_forward(lay, params, refs, Feed::Teacher { coins: c });
            (chunk_losses(lay, &fwd, refs), chunk_backward(lay, params, &fwd, refs, scale))
        });
        self.params.zero_grads();
        for (_, g) in &results {
            self.params.accumulate(g);
        }
        let total = compensated_sum(results.into_iter().flat_map(|(l, _)| l));
        Ok(total / (samples.len() * self.layout.hours) as f64)
    }

    fn chunks<'a>(&self, samples: &'a [Sample], coins: &'a [Vec<bool>]) -> Vec<(Vec<&'a Sample>, &'a [Vec<bool>])> {
        let cs = self.config.chunk_size;
        samples
            .chunks(cs)
            .zip(coins.chunks(cs))
            .map(|(s, c)| (s.iter().collect(), c))
            .collect()
    }

    /// Predicts every sample's day. Only the inputs of each sample are used.
    pub fn predict(&self, samples: &[Sample], mode: DecodeMode, exec: Exec) -> Result<Vec<Prediction>> {
        if samples.is_empty() {
            return Ok(vec![]);
        }
        for s in samples {
            let blank = Sample { target: vec![0; self.layout.hours], ..s.clone() };
            blank.check(&self.layout)?;
        }
        let (t, na) = (self.layout.hours, self.layout.n_actions);
        let chunks: Vec<&[Sample]> = samples.chunks(self.config.chunk_size).collect();
        let out = par::map(exec, &chunks, |chunk| {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let uniforms: Vec<Vec<f64>> = match mode {
                DecodeMode::Sample { seed, .. } => chunk
                    .iter()
                    .map(|s| {
                        let mut rng = stream(seed, Purpose::Decode, s.day as u64, 0);
                        (0..t).map(|_| rng.gen::<f64>()).collect()
                    })
                    .collect(),
                DecodeMode::Greedy => vec![],
            };
            let feed = match mode {
                DecodeMode::Greedy => Feed::Greedy,
                DecodeMode::Sample { min_prob, .. } => Feed::Draw { uniforms: &uniforms, min_prob },
            };
            let fwd = chunk_forward(&self.layout, &self.params, &refs, feed);
            chunk
                .iter()
                .enumerate()
                .map(|(b, s)| Prediction {
                    day: s.day,
                    actions: fwd.dec.emitted[b].iter().map(|&a| ActionId(a as u8)).collect(),
                    probs: (0..t).map(|h| fwd.dec.probs[h][b * na..(b + 1) * na].to_vec()).collect(),
                })
                .collect::<Vec<_>>()
        });
        Ok(out.into_iter().flatten().collect())
    }

    /// Predicts the 24 actions of a day from `history_days` earlier days and
    /// the day's environment.
    pub fn predict_day(&self, history: &[DayRecord], target_env: &[EnvSnapshot], mode: DecodeMode) -> Result<Prediction> {
        if history.len() != self.config.history_days {
            return Err(Error::invalid(format!(
                "history has {} days, the model expects {}",
                history.len(),
                self.config.history_days
            )));
        }
        if target_env.len() != self.layout.hours {
            return Err(Error::invalid(format!("target env has {} hours, expected {}", target_env.len(), self.layout.hours)));
        }
        let mut s = Sample::from_history(history, target_env, self.config.n_actions)?;
        s.day = history.last().map_or(0, |d| d.day_index + 1);
        let mut p = self.predict(std::slice::from_ref(&s), mode, Exec::Sequential)?;
        Ok(p.remove(0))
    }
}

/// Teacher-forcing coins for one sample in one epoch. Step 0 always uses the
/// start token, so its coin is irrelevant and fixed to `true`.
pub fn teacher_coins(seed: u64, epoch: u64, day: u64, hours: usize, tf_ratio: f64) -> Vec<bool> {
    let mut rng = stream(seed, Purpose::TeacherForcing, epoch, day);
    (0..hours).map(|t| t == 0 || rng.gen::<f64>() < tf_ratio).collect()
}

/// Random inputs shaped for `model`: one-hot history actions, varied
/// weather, temperature and hour, and random targets.
pub fn random_samples(model: &Forecaster, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let lay = &model.layout;
    let na = lay.n_actions;
    let step = (HOURS_PER_DAY / lay.hours).max(1);
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Custom(0x5a), i as u64, 0);
            let env_at = |rng: &mut crate::rng::StreamRng, t: usize| {
                let w = crate::domain::Weather::ALL[rng.gen_range(0..4)];
                EnvSnapshot::new(w, rng.gen_range(0.0..32.0), ((t * step) % HOURS_PER_DAY) as u8, 1.0)
            };
            let mut history = Vec::with_capacity(lay.history * lay.hours * lay.enc_input());
            for _ in 0..lay.history {
                for t in 0..lay.hours {
                    let e = env_at(&mut rng, t)?;
                    let a = ActionId(rng.gen_range(0..na) as u8);
                    history.extend(encode_hour_features(e.hour, &e, Some(a), na)?);
                }
            }
            let mut env = Vec::with_capacity(lay.hours * ENV_FEATURES);
            for t in 0..lay.hours {
                let e = env_at(&mut rng, t)?;
                env.extend_from_slice(&env_features(e.hour, &e)?);
            }
            let target = (0..lay.hours).map(|_| rng.gen_range(0..na)).collect();
            Ok(Sample { day: i, history, env, target })
        })
        .collect()
}

/// Finite-difference check of the full training loss gradient on the micro
/// model (every coordinate when `samples` covers them all). Teacher forcing
/// is mixed at 0.5 so both feedback paths are exercised. The perturbed losses
/// are evaluated in double-double precision and differenced against the
/// unperturbed one before rounding, so the numeric side carries no `f64`
/// cancellation noise.
pub fn gradcheck_micro(n_actions: usize, seed: u64, samples: usize, exec: Exec) -> Result<GradCheckReport> {
    let mut model = Forecaster::new(ForecasterConfig::micro(n_actions, seed))?;
    let data = random_samples(&model, 4, seed)?;
    let t = model.layout.hours;
    let coins: Vec<Vec<bool>> = data.iter().map(|s| teacher_coins(seed, 0, s.day as u64, t, 0.5)).collect();
    model.loss_and_grad(&data, &coins, exec)?;
    let base = reference::loss_dd(&model.layout, &model.params, &data, &coins);
    finite_diff_check(
        &model.params,
        |p| dd::to_f64(reference::loss_dd(&model.layout, p, &data, &coins) - base),
        samples,
        seed,
        exec,
    )
}

/// Everything needed to resume or reuse a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ForecasterConfig,
    pub params: ParamStore,
    pub optim: OptimState,
    /// Epoch at which `params` were captured (best validation loss).
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub registry_version: u64,
}

impl Checkpoint {
    pub fn forecaster(&self) -> Result<Forecaster> {
        Forecaster::from_params(self.config.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub tf_ratio: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trains on `splits.train`, selecting the epoch with the lowest validation
/// loss. `on_epoch` sees each epoch's statistics as they complete.
pub fn train_forecaster(
    days: &[DayRecord],
    splits: &Splits,
    config: &ForecasterConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Checkpoint> {
    config.validate()?;
    if splits.history_days != config.history_days {
        return Err(Error::invalid(format!(
            "splits use {} history days, the model {}",
            splits.history_days, config.history_days
        )));
    }
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::invalid("train and validation splits must be non-empty"));
    }
    let train = build_samples(days, &splits.train, config.history_days, config.n_actions)?;
    let val = build_samples(days, &splits.val, config.history_days, config.n_actions)?;
    let mut model = Forecaster::new(config.clone())?;
    model.check_samples(&train)?;
    model.check_samples(&val)?;
    let t = model.layout.hours;
    let mut optim = OptimState::adam(&model.params, config.learning_rate);
    let val_coins = vec![vec![true; t]; val.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore, OptimState)> = None;
    let (mut train_curve, mut val_curve) = (vec![], vec![]);

    for epoch in 0..config.epochs {
        let tf = config.tf_ratio(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch as u64, 0));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<Sample> = batch.iter().map(|&i| train[i].clone()).collect();
            let coins: Vec<Vec<bool>> =
                samples.iter().map(|s| teacher_coins(config.seed, epoch as u64, s.day as u64, t, tf)).collect();
            let loss = model.loss_and_grad(&samples, &coins, exec)?;
            epoch_loss += loss * samples.len() as f64;
            if let Some(clip) = config.grad_clip {
                let norm = model.params.grad_norm();
                if norm > clip {
                    model.params.scale_grads(clip / norm);
                }
            }
            optim.apply(&mut model.params);
        }
        if !model.params.all_finite() {
            return Err(Error::invalid(format!("parameters became non-finite in epoch {epoch}")));
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = model.loss(&val, &val_coins, exec)?;
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        on_epoch(&EpochStats { epoch, tf_ratio: tf, train_loss, val_loss });
        if best.as_ref().map_or(true, |b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.params.clone(), optim.clone()));
        }
    }
    let (_, epoch, params, optim) = best.expect("at least one epoch");
    Ok(Checkpoint {
        config: config.clone(),
        params,
        optim,
        epoch,
        train_loss: train_curve,
        val_loss: val_curve,
        registry_version: 0,
    })
}

#[cfg(test)]
mod tests;
