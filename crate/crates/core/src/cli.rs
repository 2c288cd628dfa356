//! Command-line entry point. Each subcommand is also a public function so the
//! pipelines can be driven from tests.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::domain::{ActionId, ActivityRegistry, DayRecord};
use crate::engine::{ConsolidationSummary, Engine, EngineConfig, EnvFeed, ExternalEvent, TickLog};
use crate::error::{Error, Result};
use crate::eval::{evaluate, plot_triples, EvalConfig, EvalReport, SequenceRecord};
use crate::forecaster::{build_samples, gradcheck_micro, train_forecaster, Checkpoint, DecodeMode, ForecasterConfig};
use crate::numkit::GradCheckReport;
use crate::par::Exec;
use crate::persist::{self, DatasetMeta};
use crate::reward::{FeedbackEvent, RewardWeights};
use crate::rng::named_seed;
use crate::synthgen::{generate_dataset, split_dataset, GeneratorConfig, SplitSpec, Splits};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Minimum class probability kept by the default sampled decoding.
pub const DEFAULT_MIN_PROB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub feedback: Option<PathBuf>,
}

/// Fully merged configuration of a run. Archived next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Root seed; every section's seed is derived from it.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub forecaster: ForecasterConfig,
    pub engine: EngineConfig,
    pub reward: RewardWeights,
    pub eval: EvalConfig,
    pub decode: DecodeMode,
    /// Engine ticks for `simulate`.
    pub ticks: u64,
    /// Finite-difference coordinates for `gradcheck`.
    pub gradcheck_coords: usize,
    /// Test days exported by `plotdata`.
    pub plot_days: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 7,
            generator: GeneratorConfig::with(1800, 6, 0),
            forecaster: ForecasterConfig::default(),
            engine: EngineConfig::default(),
            reward: RewardWeights::default(),
            eval: EvalConfig::default(),
            decode: DecodeMode::Sample { seed: 0, min_prob: DEFAULT_MIN_PROB },
            ticks: 10_000,
            gradcheck_coords: 200,
            plot_days: 7,
            paths: Paths { out: PathBuf::from("out"), data: None, checkpoint: None, events: None, feedback: None },
        };
        cfg.derive_seeds();
        cfg
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with a (possibly partial) TOML file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let over: toml::Value = persist::read_toml(path, persist::RUN_CONFIG)?;
        let mut base = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::config("config", e.to_string()))?;
        merge(&mut base, over);
        RunConfig::deserialize(base).map_err(|e| Error::config(path.display().to_string(), e.message()))
    }

    /// Sets every section's seed from the root seed. Derived seeds keep 63
    /// bits so they fit TOML integers.
    pub fn derive_seeds(&mut self) {
        let derive = |name| named_seed(self.seed, name) >> 1;
        self.generator.seed = derive("gen");
        self.forecaster.seed = derive("train");
        self.engine.seed = derive("engine");
        if let DecodeMode::Sample { seed, .. } = &mut self.decode {
            *seed = derive("eval");
        }
    }

    /// Sets the action space of the generator, forecaster and evaluation.
    pub fn set_actions(&mut self, n: usize) {
        self.generator.n_actions = n;
        self.forecaster.n_actions = n;
        self.eval.new_action = (n > 6).then_some(ActionId::RECALL_IMPORTANT);
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.forecaster.validate()?;
        self.engine_config().validate()?;
        if self.generator.n_actions != self.forecaster.n_actions {
            return Err(Error::config(
                "forecaster.n_actions",
                format!("{} differs from generator.n_actions {}", self.forecaster.n_actions, self.generator.n_actions),
            ));
        }
        if let DecodeMode::Sample { min_prob, .. } = self.decode {
            if !(0.0..1.0).contains(&min_prob) {
                return Err(Error::config("decode.min_prob", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig { reward: self.reward.clone(), ..self.engine.clone() }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::proportional(self.generator.n_days, self.forecaster.history_days)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }

    pub fn archive(&self) -> Result<()> {
        persist::write_toml(&self.out("config.toml"), persist::RUN_CONFIG, self)
    }
}

#[derive(Debug, Parser)]
#[command(name = "cogsched", version, about = "Cognitive activity scheduling: data, forecaster, engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration (partial files are merged over defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub days: Option<usize>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(6..=7))]
    pub actions: Option<u8>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ticks: Option<u64>,
    /// Engine event feed (JSONL).
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    /// Delayed feedback feed (JSONL).
    #[arg(long, global = true)]
    pub feedback: Option<PathBuf>,
    /// Dataset JSONL to use instead of generating one.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory (default `<out>/checkpoint`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Run every data-parallel section on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Train the forecaster and write a checkpoint plus loss curves.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Run the heartbeat engine and write its tick log.
    Simulate,
    /// Train and evaluate on 6 and then 7 actions and compare.
    Extend,
    /// Finite-difference check of the micro forecaster's gradient.
    Gradcheck,
    /// Export (day, hour, true, predicted) rows for plotting.
    Plotdata,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.derive_seeds();
        if let Some(d) = self.days {
            cfg.generator.n_days = d;
        }
        if let Some(a) = self.actions {
            cfg.set_actions(a as usize);
        }
        if let Some(e) = self.epochs {
            cfg.forecaster.epochs = e;
        }
        if let Some(t) = self.ticks {
            cfg.ticks = t;
        }
        if let Some(o) = &self.out {
            cfg.paths.out = o.clone();
        }
        for (slot, v) in [
            (&mut cfg.paths.events, &self.events),
            (&mut cfg.paths.feedback, &self.feedback),
            (&mut cfg.paths.data, &self.data),
            (&mut cfg.paths.checkpoint, &self.checkpoint),
        ] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

/// Exit code for an error: 2 for filesystem failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let exec = cli.common.exec();
    match cli.command {
        Command::Gen => {
            let path = cmd_gen(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let ck = cmd_train(&cfg, exec)?;
            println!("best epoch {} (val loss {:.4})", ck.epoch, ck.val_loss[ck.epoch]);
        }
        Command::Eval => {
            let r = cmd_eval(&cfg, exec)?;
            print_report(&r);
        }
        Command::Simulate => {
            let s = cmd_simulate(&cfg)?;
            println!(
                "{} ticks, {} dream, {} curated, {} late feedback events",
                s.ticks, s.dream_ticks, s.curated, s.late_feedback
            );
        }
        Command::Extend => {
            let c = cmd_extend(&cfg, exec)?;
            print_report(&c.a_report);
            print_report(&c.b_report);
            println!("{}", serde_json::to_string_pretty(&c.comparison).expect("serializable"));
        }
        Command::Gradcheck => {
            let r = cmd_gradcheck(&cfg, exec)?;
            println!("max relative error {:.3e} over {} coordinates", r.max_rel_error, r.coords_checked);
            if !(r.max_rel_error < GRADCHECK_TOL) {
                return Err(Error::invalid(format!("gradient check failed: {:.3e} >= {GRADCHECK_TOL:e}", r.max_rel_error)));
            }
        }
        Command::Plotdata => {
            let path = cmd_plotdata(&cfg, exec)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{} actions: coverage {}/{}, H_true {:.3}, H_pred {:.3}, dH {:.3}, rare recall {}, accuracy {:.3}",
        r.n_actions,
        r.coverage_covered,
        r.coverage_total,
        r.entropy_true,
        r.entropy_pred,
        r.delta_h,
        r.confusion.rare_recall.map_or("n/a".into(), |x| format!("{x:.3}")),
        r.hourly_accuracy
    );
    if let Some(e) = &r.extension {
        println!(
            "action {}: predicted {} vs true {} (ratio {:.2}), {:.0}% inside hours {}-{}",
            e.action.0,
            e.pred_total,
            e.true_total,
            e.frequency_ratio,
            100.0 * e.in_window_fraction,
            e.window.0,
            e.window.1
        );
    }
}

/// Reads `paths.data` when set, otherwise generates from the config.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Vec<DayRecord>> {
    match &cfg.paths.data {
        Some(p) => {
            let (meta, days) = persist::read_dataset(p)?;
            if meta.n_actions != cfg.forecaster.n_actions {
                return Err(Error::config(
                    "forecaster.n_actions",
                    format!("dataset has {} actions, config {}", meta.n_actions, cfg.forecaster.n_actions),
                ));
            }
            Ok(days)
        }
        None => generate_dataset(&cfg.generator),
    }
}

pub fn splits(cfg: &RunConfig, days: &[DayRecord]) -> Result<Splits> {
    let spec = SplitSpec::proportional(days.len(), cfg.forecaster.history_days)?;
    split_dataset(days, &spec)
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    let days = generate_dataset(&cfg.generator)?;
    let path = cfg.out("dataset.jsonl");
    let meta = DatasetMeta { n_days: days.len(), n_actions: cfg.generator.n_actions, seed: cfg.generator.seed };
    persist::write_dataset(&path, &meta, &days)?;
    persist::write_toml(&cfg.out("generator.toml"), "cogsched.generator", &cfg.generator)?;
    cfg.archive()?;
    Ok(path)
}

pub fn train(cfg: &RunConfig, days: &[DayRecord], exec: Exec) -> Result<Checkpoint> {
    let s = splits(cfg, days)?;
    train_forecaster(days, &s, &cfg.forecaster, exec, |e| {
        eprintln!("epoch {:>3}  tf {:.3}  train {:.4}  val {:.4}", e.epoch, e.tf_ratio, e.train_loss, e.val_loss)
    })
}

pub fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| cfg.out("checkpoint"))
}

fn curves_csv(ck: &Checkpoint) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(["epoch", "tf_ratio", "train_loss", "val_loss"]).map_err(err)?;
    for (i, (t, v)) in ck.train_loss.iter().zip(&ck.val_loss).enumerate() {
        w.write_record([i.to_string(), ck.config.tf_ratio(i).to_string(), t.to_string(), v.to_string()]).map_err(err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?).map_err(|e| Error::invalid(e.to_string()))
}

pub fn cmd_train(cfg: &RunConfig, exec: Exec) -> Result<Checkpoint> {
    let days = load_or_generate(cfg)?;
    let ck = train(cfg, &days, exec)?;
    persist::save_checkpoint(&checkpoint_dir(cfg), &ck)?;
    persist::write_csv(&cfg.out("curves.csv"), "cogsched.curves", &curves_csv(&ck)?)?;
    cfg.archive()?;
    Ok(ck)
}

/// Predicts the test split with the configured decoding and scores it.
pub fn evaluate_checkpoint(cfg: &RunConfig, ck: &Checkpoint, days: &[DayRecord], exec: Exec) -> Result<EvalReport> {
    let n = ck.config.n_actions;
    let s = splits(cfg, days)?;
    let model = ck.forecaster()?;
    let test = build_samples(days, &s.test, ck.config.history_days, n)?;
    let preds = model.predict(&test, cfg.decode, exec)?;
    let records = preds
        .into_iter()
        .map(|p| SequenceRecord { day: p.day, truth: days[p.day].actions(), pred: p.actions })
        .collect();
    let mut eval = cfg.eval.clone();
    if n <= ActionId::RECALL_IMPORTANT.index() {
        eval.new_action = None;
    }
    evaluate(records, n, &eval, exec)
}

pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    persist::write_json(&dir.join("report.json"), persist::REPORT, r)?;
    persist::write_csv(&dir.join("confusion.csv"), "cogsched.confusion", &r.confusion_csv()?)?;
    if let Some(h) = r.hour_histogram_csv()? {
        persist::write_csv(&dir.join("hour_histogram.csv"), "cogsched.hour_histogram", &h)?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, exec: Exec) -> Result<EvalReport> {
    let ck = persist::load_checkpoint(&checkpoint_dir(cfg))?;
    let days = load_or_generate(cfg)?;
    let r = evaluate_checkpoint(cfg, &ck, &days, exec)?;
    write_report(&cfg.paths.out, &r)?;
    cfg.archive()?;
    Ok(r)
}

/// The headline numbers of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n_actions: usize,
    pub n_samples: usize,
    pub n_test: usize,
    pub coverage_covered: usize,
    pub coverage_total: usize,
    pub delta_h: f64,
    pub rare_recall: Option<f64>,
    pub hourly_accuracy: f64,
}

impl ExperimentSummary {
    pub fn new(r: &EvalReport, s: &Splits) -> Self {
        ExperimentSummary {
            n_actions: r.n_actions,
            n_samples: s.total(),
            n_test: s.test.len(),
            coverage_covered: r.coverage_covered,
            coverage_total: r.coverage_total,
            delta_h: r.delta_h,
            rare_recall: r.confusion.rare_recall,
            hourly_accuracy: r.hourly_accuracy,
        }
    }
}

/// How much the original-class metrics moved from A to B. Positive values
/// are degradations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    /// Drop in the covered share of the original classes.
    pub coverage: f64,
    /// Growth of `|H_pred - H_true|`.
    pub delta_h: f64,
    /// Drop in pooled rare-action recall.
    pub rare_recall: f64,
}

impl Degradation {
    pub fn max(&self) -> f64 {
        self.coverage.max(self.delta_h).max(self.rare_recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: ExperimentSummary,
    pub b: ExperimentSummary,
    /// Classes of A covered by B's predictions.
    pub b_original_covered: usize,
    pub degradation: Degradation,
}

pub fn compare(a: &EvalReport, sa: &Splits, b: &EvalReport, sb: &Splits) -> Comparison {
    let n = a.n_actions;
    let covered = (0..n).filter(|&c| b.sequences.iter().any(|s| s.pred.iter().any(|p| p.index() == c))).count();
    let degradation = Degradation {
        coverage: a.coverage_covered as f64 / n as f64 - covered as f64 / n as f64,
        delta_h: b.delta_h - a.delta_h,
        rare_recall: a.confusion.rare_recall.unwrap_or(0.0) - b.confusion.rare_recall.unwrap_or(0.0),
    };
    Comparison { a: ExperimentSummary::new(a, sa), b: ExperimentSummary::new(b, sb), b_original_covered: covered, degradation }
}

pub struct ExtendOutcome {
    pub a_checkpoint: Checkpoint,
    pub b_checkpoint: Checkpoint,
    pub a_report: EvalReport,
    pub b_report: EvalReport,
    pub comparison: Comparison,
}

/// Generates, trains and evaluates with `n` actions under `<out>/<name>`.
pub fn run_experiment(base: &RunConfig, n: usize, name: &str, exec: Exec) -> Result<(RunConfig, Checkpoint, EvalReport, Splits)> {
    let mut cfg = base.clone();
    cfg.set_actions(n);
    cfg.paths.out = base.paths.out.join(name);
    cfg.paths.data = None;
    cfg.paths.checkpoint = None;
    cfg.validate()?;
    let days = generate_dataset(&cfg.generator)?;
    let meta = DatasetMeta { n_days: days.len(), n_actions: n, seed: cfg.generator.seed };
    persist::write_dataset(&cfg.out("dataset.jsonl"), &meta, &days)?;
    let ck = train(&cfg, &days, exec)?;
    persist::save_checkpoint(&checkpoint_dir(&cfg), &ck)?;
    persist::write_csv(&cfg.out("curves.csv"), "cogsched.curves", &curves_csv(&ck)?)?;
    let r = evaluate_checkpoint(&cfg, &ck, &days, exec)?;
    write_report(&cfg.paths.out, &r)?;
    cfg.archive()?;
    let s = splits(&cfg, &days)?;
    Ok((cfg, ck, r, s))
}

pub fn cmd_extend(cfg: &RunConfig, exec: Exec) -> Result<ExtendOutcome> {
    let (_, a_checkpoint, a_report, sa) = run_experiment(cfg, 6, "a", exec)?;
    let (_, b_checkpoint, b_report, sb) = run_experiment(cfg, 7, "b", exec)?;
    let comparison = compare(&a_report, &sa, &b_report, &sb);
    persist::write_json(&cfg.out("comparison.json"), "cogsched.comparison", &comparison)?;
    cfg.archive()?;
    Ok(ExtendOutcome { a_checkpoint, b_checkpoint, a_report, b_report, comparison })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub ticks: u64,
    pub dream_ticks: u64,
    pub resolved: u64,
    pub curated: usize,
    pub late_feedback: u64,
    pub consolidation: Option<ConsolidationSummary>,
}

pub fn simulate(cfg: &RunConfig) -> Result<(Engine, Vec<TickLog>)> {
    let mut gen = cfg.generator.clone();
    gen.n_days = (cfg.ticks as usize).div_ceil(24).max(1);
    let registry = ActivityRegistry::with_actions(cfg.generator.n_actions)?;
    let mut engine = Engine::new(cfg.engine_config(), registry, EnvFeed::Generated(gen))?;
    if let Some(p) = &cfg.paths.events {
        let (_, events): (_, Vec<ExternalEvent>) = persist::read_jsonl(p, persist::EVENTS, false)?;
        engine.schedule_events(events);
    }
    if let Some(p) = &cfg.paths.feedback {
        let (_, fb): (_, Vec<FeedbackEvent>) = persist::read_jsonl(p, persist::FEEDBACK, false)?;
        engine.add_feedback(fb)?;
    }
    let logs = engine.run(cfg.ticks)?;
    Ok((engine, logs))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationSummary> {
    let (engine, logs) = simulate(cfg)?;
    persist::write_jsonl(&cfg.out("ticklog.jsonl"), persist::TICK_LOG, &serde_json::json!({ "seed": cfg.engine.seed }), &logs)?;
    persist::save_policy(&cfg.out("policy"), engine.policy())?;
    let summary = SimulationSummary {
        ticks: logs.len() as u64,
        dream_ticks: logs.iter().filter(|l| l.mode == crate::engine::Mode::Dream).count() as u64,
        resolved: logs.iter().filter(|l| l.resolved.is_some()).count() as u64,
        curated: engine.dataset().len(),
        late_feedback: engine.late_feedback(),
        consolidation: engine.summary().cloned(),
    };
    persist::write_json(&cfg.out("simulation.json"), "cogsched.simulation", &summary)?;
    if !engine.archive().is_empty() {
        persist::write_jsonl(&cfg.out("archive.jsonl"), "cogsched.archive", &serde_json::json!({}), engine.archive())?;
    }
    cfg.archive()?;
    Ok(summary)
}

pub fn cmd_gradcheck(cfg: &RunConfig, exec: Exec) -> Result<GradCheckReport> {
    let r = gradcheck_micro(6, cfg.forecaster.seed, cfg.gradcheck_coords, exec)?;
    persist::write_json(&cfg.out("gradcheck.json"), "cogsched.gradcheck", &r)?;
    Ok(r)
}

pub fn cmd_plotdata(cfg: &RunConfig, exec: Exec) -> Result<PathBuf> {
    let ck = persist::load_checkpoint(&checkpoint_dir(cfg))?;
    let days = load_or_generate(cfg)?;
    let r = evaluate_checkpoint(cfg, &ck, &days, exec)?;
    let chosen: Vec<usize> = r.sequences.iter().take(cfg.plot_days).map(|s| s.day).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(["day", "hour", "true", "pred"]).map_err(err)?;
    for (d, h, t, p) in plot_triples(&r, &chosen) {
        w.write_record([d.to_string(), h.to_string(), t.0.to_string(), p.0.to_string()]).map_err(err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let path = cfg.out("plotdata.csv");
    persist::write_csv(&path, "cogsched.plotdata", &body)?;
    if let Some(h) = r.hour_histogram_csv()? {
        persist::write_csv(&cfg.out("hour_histogram.csv"), "cogsched.hour_histogram", &h)?;
    }
    Ok(path)
}
