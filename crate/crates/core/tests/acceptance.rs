//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! The experiment criteria train two full-size forecasters. Set
//! `COGSCHED_ACCEPTANCE_EPOCHS` to shorten them.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use cogsched::cli::{self, RunConfig};
use cogsched::domain::{ActionId, ActivityDescriptor, ActivityRegistry};
use cogsched::engine::{Engine, EngineConfig, EnvFeed, ExternalEvent, Mode};
use cogsched::eval::{evaluate, EvalConfig, SequenceRecord};
use cogsched::forecaster::{build_samples, gradcheck_micro, train_forecaster, DecodeMode, ForecasterConfig};
use cogsched::par::Exec;
use cogsched::persist::{self, DatasetMeta};
use cogsched::policy::toy::ToyProcess;
use cogsched::policy::ExplorationParams;
use cogsched::synthgen::{generate_dataset, split_dataset, step_distribution, GeneratorConfig, SplitSpec};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let r = gradcheck_micro(6, 7, 200, Exec::Parallel).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        r.max_rel_error < 1e-4 && took < Duration::from_secs(60),
        format!("max rel error {:.2e} over {} coords in {took:.1?}", r.max_rel_error, r.coords_checked),
    )
}

fn policy_gradient_unbiased() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (seed, eps) in [(1, 0.0), (2, 0.2), (3, 0.5)] {
        let toy = ToyProcess::random(seed, eps).map_err(|e| e.to_string())?;
        worst = worst.max(toy.unbiasedness_gap().map_err(|e| e.to_string())?);
    }
    let took = start.elapsed();
    check(worst <= 1e-10 && took < Duration::from_secs(1), format!("worst gap {worst:.2e} in {took:.1?}"))
}

fn experiments() -> (Outcome, Outcome) {
    let mut cfg = RunConfig::default();
    if let Some(e) = std::env::var("COGSCHED_ACCEPTANCE_EPOCHS").ok().and_then(|v| v.parse().ok()) {
        cfg.forecaster.epochs = e;
    }
    let dir = tempfile::tempdir().unwrap();
    cfg.paths.out = dir.path().to_path_buf();
    let start = Instant::now();
    let o = match cli::cmd_extend(&cfg, Exec::Parallel) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let took = start.elapsed();
    let c = &o.comparison;
    let a = &c.a;
    let rare = a.rare_recall.unwrap_or(0.0);
    let exp_a = check(
        a.coverage_covered == 6
            && a.coverage_total == 6
            && a.delta_h <= 0.15
            && rare >= 0.60
            && a.n_samples == 1797
            && a.n_test == 270,
        format!(
            "{} epochs, coverage {}/{}, dH {:.3}, rare recall {rare:.3}, samples {}/{}, accuracy {:.3}, both runs {took:.0?}",
            cfg.forecaster.epochs, a.coverage_covered, a.coverage_total, a.delta_h, a.n_samples, a.n_test, a.hourly_accuracy
        ),
    );
    let exp_b = match &o.b_report.extension {
        None => Err("no extension report".into()),
        Some(x) => {
            let deg = c.degradation.max();
            check(
                x.pred_total > 0
                    && (0.5..=2.0).contains(&x.frequency_ratio)
                    && x.in_window_fraction >= 0.8
                    && deg <= 0.05,
                format!(
                    "action 6 true {} predicted {} (ratio {:.2}), {:.0}% in hours {}-{}, degradation coverage {:.3} dH {:.3} rare {:.3}",
                    x.true_total,
                    x.pred_total,
                    x.frequency_ratio,
                    100.0 * x.in_window_fraction,
                    x.window.0,
                    x.window.1,
                    c.degradation.coverage,
                    c.degradation.delta_h,
                    c.degradation.rare_recall
                ),
            )
        }
    };
    (exp_a, exp_b)
}

fn generator_invariants() -> Outcome {
    let cfg = GeneratorConfig::with(1800, 7, 99);
    let days = generate_dataset(&cfg).map_err(|e| e.to_string())?;
    let again = generate_dataset(&cfg).map_err(|e| e.to_string())?;
    let bits = |d: &[cogsched::domain::DayRecord]| -> Vec<(u8, u64)> {
        d.iter().flat_map(|d| &d.hours).map(|h| (h.action.0, h.env.temperature_c.to_bits())).collect()
    };
    if days != again || bits(&days) != bits(&again) {
        return Err("re-run differs".into());
    }
    let hours: Vec<_> = days.iter().flat_map(|d| &d.hours).collect();
    let six = ActionId::RECALL_IMPORTANT;
    let (mut occurrences, mut by_trigger, mut worst_sum) = (0usize, 0usize, 0.0f64);
    for (i, h) in hours.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| hours[j].action);
        if h.action == six {
            occurrences += 1;
            let fires = cfg.action6_trigger.fires(h.env.hour, &h.env);
            by_trigger += fires as usize;
            if !fires && prev != Some(six) {
                return Err(format!("action 6 at day {} hour {} without trigger or persistence", h.day_index, h.env.hour));
            }
        }
        let recent: Vec<ActionId> = hours[i.saturating_sub(2)..i].iter().map(|h| h.action).collect();
        let p = step_distribution(h.env.hour, &h.env, &recent, &cfg).map_err(|e| e.to_string())?;
        if p.iter().any(|&x| x < 0.0) {
            return Err(format!("negative probability at record {i}"));
        }
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let six_in_6 = generate_dataset(&GeneratorConfig::with(1800, 6, 99))
        .map_err(|e| e.to_string())?
        .iter()
        .flat_map(|d| &d.hours)
        .filter(|h| h.action == six)
        .count();
    check(
        worst_sum <= 1e-9 && occurrences > 0 && six_in_6 == 0,
        format!(
            "{} records, {occurrences} action-6 occurrences ({by_trigger} triggered), worst |sum - 1| {worst_sum:.1e}",
            hours.len()
        ),
    )
}

fn engine_properties() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig { seed: 21, exploration: ExplorationParams::fixed(0.05), max_ticks: 10_000, ..Default::default() };
    let floor = cfg.resource_floor;
    let feed = EnvFeed::Generated(GeneratorConfig::with(30, 6, cfg.seed));
    let mut e = Engine::new(cfg, ActivityRegistry::with_actions(6).unwrap(), feed).map_err(|e| e.to_string())?;
    let events: Vec<ExternalEvent> =
        (0..200).map(|i| ExternalEvent { id: i, tick: 37 * i + 5, priority: 1, reward: 1.0 }).collect();
    let event_ticks: Vec<u64> = events.iter().map(|e| e.tick).collect();
    e.schedule_events(events);
    let register_at = 101u64;
    let mut logs = e.run(register_at).map_err(|e| e.to_string())?;
    e.register(ActivityDescriptor::new(ActionId(6), 1.0)).map_err(|e| e.to_string())?;
    logs.extend(e.run(10_000 - register_at).map_err(|e| e.to_string())?);
    let took = start.elapsed();

    if logs.len() != 10_000 || e.trajectory().len() != 10_000 {
        return Err(format!("{} logs, {} trajectory steps", logs.len(), e.trajectory().len()));
    }
    let mut prev_resource = 1.0;
    for l in &logs {
        if !(0.0..=1.0).contains(&l.resource) {
            return Err(format!("resource {} at tick {}", l.resource, l.tick));
        }
        if l.mode == Mode::Dream && prev_resource < floor {
            return Err(format!("dream at tick {} with resource {prev_resource}", l.tick));
        }
        prev_resource = l.resource;
    }
    let mut preempted = 0;
    for &t in &event_ticks {
        let i = t as usize;
        if logs[i].mode != Mode::Active {
            return Err(format!("event at tick {t} did not preempt dream"));
        }
        if i > 0 && logs[i - 1].mode == Mode::Dream {
            preempted += 1;
        }
    }
    let mut counts = [0usize; 7];
    for l in logs.iter().filter(|l| l.mode == Mode::Active) {
        counts[l.action.index()] += 1;
    }
    let first6 = logs.iter().find(|l| l.mode == Mode::Active && l.action == ActionId(6)).map(|l| l.tick);
    check(
        counts.iter().all(|&c| c > 0) && first6.is_some_and(|t| t >= register_at) && took < Duration::from_secs(10),
        format!(
            "{} dream ticks, {preempted} dreams preempted, selections {counts:?}, new activity first at tick {first6:?} (registered after tick {}), {took:.1?}",
            logs.iter().filter(|l| l.mode == Mode::Dream).count(),
            register_at - 1
        ),
    )
}

fn metric_oracles() -> Outcome {
    let n = 6;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let records: Vec<SequenceRecord> = (0..5)
        .map(|day| SequenceRecord {
            day,
            truth: (0..24).map(|_| ActionId(rng.gen_range(0..n as u8))).collect(),
            pred: (0..24).map(|_| ActionId(rng.gen_range(0..n as u8 - 1))).collect(),
        })
        .collect();
    let cfg = EvalConfig::default();
    let r = evaluate(records.clone(), n, &cfg, Exec::Sequential).map_err(|e| e.to_string())?;

    let mut confusion: HashMap<(u8, u8), u64> = HashMap::new();
    let (mut tcount, mut pcount) = (HashMap::<u8, u64>::new(), HashMap::<u8, u64>::new());
    let (mut ttrans, mut ptrans) = (HashMap::<(u8, u8), u64>::new(), HashMap::<(u8, u8), u64>::new());
    for rec in &records {
        for h in 0..24 {
            let (t, p) = (rec.truth[h].0, rec.pred[h].0);
            *confusion.entry((t, p)).or_default() += 1;
            *tcount.entry(t).or_default() += 1;
            *pcount.entry(p).or_default() += 1;
            if h + 1 < 24 {
                *ttrans.entry((t, rec.truth[h + 1].0)).or_default() += 1;
                *ptrans.entry((p, rec.pred[h + 1].0)).or_default() += 1;
            }
        }
    }
    let total = 120.0;
    let entropy = |c: &HashMap<u8, u64>| -> f64 {
        let mut h = 0.0;
        for &k in c.values() {
            let p = k as f64 / total;
            h -= p * p.ln() / std::f64::consts::LN_2;
        }
        h
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut bad = Vec::new();
    if !close(r.entropy_true, entropy(&tcount)) || !close(r.entropy_pred, entropy(&pcount)) {
        bad.push("entropy");
    }
    for t in 0..n as u8 {
        for p in 0..n as u8 {
            if r.confusion.matrix[t as usize][p as usize] != confusion.get(&(t, p)).copied().unwrap_or(0) {
                bad.push("confusion");
            }
        }
        let row = tcount.get(&t).copied().unwrap_or(0);
        let want = (row > 0).then(|| confusion.get(&(t, t)).copied().unwrap_or(0) as f64 / row as f64);
        match (r.confusion.recall[t as usize], want) {
            (Some(a), Some(b)) if close(a, b) => {}
            (None, None) => {}
            _ => bad.push("recall"),
        }
    }
    let rare_tp: u64 = [0u8, 3].iter().map(|&c| confusion.get(&(c, c)).copied().unwrap_or(0)).sum();
    let rare_pos: u64 = [0u8, 3].iter().map(|c| tcount.get(c).copied().unwrap_or(0)).sum();
    if !r.confusion.rare_recall.is_some_and(|x| close(x, rare_tp as f64 / rare_pos as f64)) {
        bad.push("rare recall");
    }
    let row_dist = |m: &HashMap<(u8, u8), u64>, a: u8| -> Vec<f64> {
        let out: u64 = (0..n as u8).map(|b| m.get(&(a, b)).copied().unwrap_or(0)).sum();
        (0..n as u8)
            .map(|b| if out == 0 { 1.0 / n as f64 } else { m.get(&(a, b)).copied().unwrap_or(0) as f64 / out as f64 })
            .collect()
    };
    let mut l1_sum = 0.0;
    for a in 0..n as u8 {
        let (t, p) = (row_dist(&ttrans, a), row_dist(&ptrans, a));
        let l1: f64 = t.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum();
        if !close(r.transitions.row_l1[a as usize], l1) {
            bad.push("transition row");
        }
        l1_sum += l1;
    }
    if !close(r.transitions.l1, l1_sum / n as f64) {
        bad.push("transition distance");
    }
    if r.coverage_covered != pcount.len() {
        bad.push("coverage");
    }
    bad.dedup();
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("entropy {:.6}/{:.6}, transition L1 {:.6}", r.entropy_true, r.entropy_pred, r.transitions.l1)
        } else {
            format!("mismatched: {}", bad.join(", "))
        },
    )
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let err = |e: cogsched::Error| e.to_string();
    let days = generate_dataset(&GeneratorConfig::with(40, 7, 3)).map_err(err)?;
    let path = dir.path().join("d.jsonl");
    let meta = DatasetMeta { n_days: 40, n_actions: 7, seed: 3 };
    persist::write_dataset(&path, &meta, &days).map_err(err)?;
    let (_, back) = persist::read_dataset(&path).map_err(err)?;
    let temps = |d: &[cogsched::domain::DayRecord]| -> Vec<u64> {
        d.iter().flat_map(|d| &d.hours).map(|h| h.env.temperature_c.to_bits()).collect()
    };
    if back != days || temps(&back) != temps(&days) {
        return Err("dataset round trip differs".into());
    }

    let splits = split_dataset(&days, &SplitSpec::proportional(40, 3).map_err(err)?).map_err(err)?;
    let fc = ForecasterConfig { hidden_dim: 8, n_heads: 2, epochs: 2, n_actions: 7, seed: 5, ..Default::default() };
    let ck = train_forecaster(&days, &splits, &fc, Exec::Parallel, |_| {}).map_err(err)?;
    persist::save_checkpoint(dir.path(), &ck).map_err(err)?;
    let loaded = persist::load_checkpoint(dir.path()).map_err(err)?;
    let same_params = ck.params.values().iter().zip(loaded.params.values()).all(|(a, b)| {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    if !same_params || ck.params.len() != loaded.params.len() {
        return Err("checkpoint parameters differ".into());
    }
    let samples = build_samples(&days, &(20..40).collect::<Vec<_>>(), 3, 7).map_err(err)?;
    for mode in [DecodeMode::Greedy, DecodeMode::Sample { seed: 4, min_prob: 0.1 }] {
        let a = ck.forecaster().map_err(err)?.predict(&samples, mode, Exec::Parallel).map_err(err)?;
        let b = loaded.forecaster().map_err(err)?.predict(&samples, mode, Exec::Sequential).map_err(err)?;
        if a != b {
            return Err(format!("predictions differ under {mode:?}"));
        }
    }
    Ok(format!("{} hourly records and {} tensors bit-exact, {} predictions identical", 40 * 24, ck.params.len(), samples.len()))
}

#[test]
fn acceptance() {
    let (exp_a, exp_b) = experiments();
    let results = [
        ("1 gradient correctness", gradient_correctness()),
        ("2 policy-gradient unbiasedness", policy_gradient_unbiased()),
        ("3 experiment A", exp_a),
        ("4 experiment B", exp_b),
        ("5 generator invariants", generator_invariants()),
        ("6 engine properties", engine_properties()),
        ("7 metric oracles", metric_oracles()),
        ("8 persistence", persistence()),
    ];
    let mut failed = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(d) => println!("criterion {name}: PASS ({d})"),
            Err(d) => {
                println!("criterion {name}: FAIL ({d})");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
