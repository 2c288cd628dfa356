use std::path::Path;

use cogsched::cli::{self, dispatch, RunConfig};
use cogsched::engine::TickLog;
use cogsched::eval::EvalReport;
use cogsched::persist;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("cogsched").chain(args.iter().copied()))
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "[forecaster]\nhidden_dim = 8\nn_heads = 2\nbatch_size = 8\n\n[engine]\ntask_rate = 0.2\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(run(&["gen", "--days", "60", "--actions", "6", "--seed", "7", "--out", out.to_str().unwrap()]), 0);
    }
    let da = std::fs::read(a.join("dataset.jsonl")).unwrap();
    assert_eq!(da, std::fs::read(b.join("dataset.jsonl")).unwrap());
    assert!(String::from_utf8_lossy(&da).starts_with("{\"format\":\"cogsched.dataset\",\"version\":\"1.0\""));
    let (meta, days) = persist::read_dataset(&a.join("dataset.jsonl")).unwrap();
    assert_eq!((meta.n_days, days.len()), (60, 60));

    let archived = RunConfig::from_file(&a.join("config.toml")).unwrap();
    assert_eq!(archived.seed, 7);
    assert_eq!(archived.generator.n_days, 60);
    let c = dir.path().join("c");
    let cfg = a.join("config.toml");
    assert_eq!(run(&["gen", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap()]), 0);
    assert_eq!(da, std::fs::read(c.join("dataset.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["gen", "--bogus"]), 1);
    assert_eq!(run(&["gen", "--actions", "9"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["eval", "--out", out]), 2);
    assert_eq!(run(&["gen", "--config", "/nonexistent/cfg.toml"]), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[forecaster]\nhidden_dim = 10\nn_heads = 4\n").unwrap();
    assert_eq!(run(&["gen", "--config", bad.to_str().unwrap(), "--out", out]), 1);
    std::fs::write(&bad, "[engine]\nresource_floor = \"high\"\n").unwrap();
    assert_eq!(run(&["gen", "--config", bad.to_str().unwrap(), "--out", out]), 1);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[forecaster]\nhidden_dim = 10\nn_heads = 4\n").unwrap();
    let cfg = RunConfig::from_file(&bad).unwrap();
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("forecaster.n_heads"), "{err}");
    std::fs::write(&bad, "format = \"cogsched.run_config\"\nversion = \"3.0\"\n").unwrap();
    assert!(matches!(RunConfig::from_file(&bad), Err(cogsched::Error::Version { .. })));
}

#[test]
fn train_eval_plotdata_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let common = ["--config", cfg.as_str(), "--days", "60", "--epochs", "1", "--out", o];
    assert_eq!(run(&[&["gen"], &common[..]].concat()), 0);
    let data = out.join("dataset.jsonl");
    let with_data = [&common[..], &["--data", data.to_str().unwrap()]].concat();
    assert_eq!(run(&[&["train"], &with_data[..]].concat()), 0);
    assert!(out.join("checkpoint/checkpoint.json").exists());
    assert!(out.join("curves.csv").exists());
    assert_eq!(run(&[&["eval"], &with_data[..]].concat()), 0);
    let r: EvalReport = persist::read_json(&out.join("report.json"), persist::REPORT).unwrap();
    assert_eq!(r.n_actions, 6);
    assert_eq!(r.n_sequences, 9);
    assert!(std::fs::read_to_string(out.join("confusion.csv")).unwrap().starts_with("# cogsched.confusion 1.0\n"));
    assert_eq!(run(&[&["plotdata"], &with_data[..]].concat()), 0);
    let plot = std::fs::read_to_string(out.join("plotdata.csv")).unwrap();
    assert_eq!(plot.lines().count(), 2 + 7 * 24);
}

#[test]
fn simulate_writes_tick_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let events = dir.path().join("events.jsonl");
    std::fs::write(&events, "{\"id\":1,\"tick\":10,\"priority\":2}\n{\"id\":2,\"tick\":50}\n").unwrap();
    let feedback = dir.path().join("fb.jsonl");
    std::fs::write(&feedback, "{\"emitted_tick\":5,\"observed_tick\":8,\"value\":2.0,\"trajectory\":0}\n").unwrap();
    let args = [
        "simulate",
        "--ticks",
        "300",
        "--out",
        out.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
        "--feedback",
        feedback.to_str().unwrap(),
    ];
    assert_eq!(run(&args), 0);
    let (meta, logs): (_, Vec<TickLog>) = persist::read_jsonl(&out.join("ticklog.jsonl"), persist::TICK_LOG, true).unwrap();
    assert!(meta.get("seed").is_some());
    assert_eq!(logs.len(), 300);
    assert!(logs.iter().any(|l| l.resolved == Some(1)));
    assert!(persist::load_policy(&out.join("policy")).is_ok());

    let again = dir.path().join("sim2");
    let args2: Vec<&str> = args.iter().map(|a| if *a == out.to_str().unwrap() { again.to_str().unwrap() } else { a }).collect();
    assert_eq!(run(&args2), 0);
    assert_eq!(std::fs::read(out.join("ticklog.jsonl")).unwrap(), std::fs::read(again.join("ticklog.jsonl")).unwrap());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["gradcheck", "--out", dir.path().to_str().unwrap()]), 0);
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn extend_reports_both_action_spaces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(dir.path());
    let mut cfg = RunConfig::from_file(Path::new(&cfg_path)).unwrap();
    cfg.generator.n_days = 60;
    cfg.forecaster.epochs = 1;
    cfg.paths.out = dir.path().join("ext");
    let o = cli::cmd_extend(&cfg, cogsched::par::Exec::Parallel).unwrap();
    assert_eq!(o.a_report.n_actions, 6);
    assert_eq!(o.b_report.n_actions, 7);
    assert!(o.a_report.extension.is_none());
    assert!(o.b_report.extension.is_some());
    assert!(dir.path().join("ext/comparison.json").exists());
    let b: EvalReport = persist::read_json(&dir.path().join("ext/b/report.json"), persist::REPORT).unwrap();
    assert_eq!(b, o.b_report);
}
