use std::process::Command;

use ald::envs::EnvKind;
use ald::harness::{
    bench_latency, curve, read_metrics, run_experiment, seed_curve_export, time_in_band, BenchModel, ExperimentConfig,
    PLATEAU_BAND,
};
use ald::models::checkpoint;
use ald::pipeline::metrics::{evaluate_success, EpisodeRecord};
use ald::pipeline::Mode;
use proptest::prelude::*;

fn desk(mode: Mode, steps: u64, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_text(&format!(
        "run.mode = {mode}\nrun.env_steps = {steps}\nrun.metrics_every = 200\nrun.deterministic = true\n\
         pipeline.actors = 2\npipeline.batch = 2\npipeline.unroll = 10\npipeline.distillers = 1\n\
         model.layers = 1\nmodel.embed_dim = 16\nmodel.heads = 2\nmodel.head_dim = 8\nmodel.ff_dim = 16\nmodel.mem_len = 8\n"
    ))
    .unwrap();
    cfg.output = Some(dir.to_path_buf());
    cfg
}

#[test]
fn zero_budget_gives_empty_stream_and_zero_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (o, s) = run_experiment(&desk(Mode::Ald, 0, dir.path())).unwrap();
    assert!(o.records.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap(), "");
    assert_eq!(
        (s.env_steps, s.learner_steps, s.distill_steps, s.episodes),
        (0, 0, 0, 0)
    );
    assert_eq!(s.final_success, None);
    assert!(s.thresholds.iter().all(|t| t.env_steps.is_none()));
    let back: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(back["env_steps"], 0);
}

#[test]
fn metrics_stream_is_jsonl_and_conserves_steps() {
    let dir = tempfile::tempdir().unwrap();
    let (o, s) = run_experiment(&desk(Mode::Lstm, 1000, dir.path())).unwrap();
    let recs = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(recs.len(), o.records.len());
    assert_eq!(recs.last().unwrap().env_steps, s.env_steps);
    assert_eq!(s.env_steps, o.per_actor_steps.values().sum::<u64>());
    for w in recs.windows(2) {
        assert!(w[1].env_steps >= w[0].env_steps);
        assert!(w[1].learner_steps >= w[0].learner_steps);
        assert!(w[1].distill_steps >= w[0].distill_steps);
    }
    assert!(s.conservation_balanced);
    // the standalone LSTM trains the acting model directly; distillation is inert
    assert_eq!(s.distill_steps, 0);
    assert_eq!(s.actor_transformer_calls, 0);
}

#[test]
fn asymmetric_baseline_acts_with_the_small_model_only() {
    let dir = tempfile::tempdir().unwrap();
    let (o, s) = run_experiment(&desk(Mode::AsymmAc, 400, dir.path())).unwrap();
    assert_eq!(o.actor_transformer_calls, 0);
    assert_eq!(s.distill_steps, 0);
    assert!(s.learner_steps > 0);
}

#[test]
fn run_leaves_a_loadable_actor_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_experiment(&desk(Mode::Ald, 400, dir.path())).unwrap();
    let (net, params) = checkpoint::load_model(&dir.path().join("actor.ckpt")).unwrap();
    let (want_net, want) = o.actor_model.unwrap();
    assert_eq!(net.tower_configs(), want_net.tower_configs());
    assert!(!net.uses_transformer());
    assert_eq!(params.len(), want.len());
    for ((n, a), (m, b)) in params.iter().zip(want.iter()) {
        assert_eq!(n, m);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn success_rule_and_no_data_marker() {
    let ep = |ret, terminal| EpisodeRecord {
        ret,
        terminal_reward: terminal,
        ..Default::default()
    };
    assert_eq!(evaluate_success(&[], EnvKind::IMaze, 0), None);
    assert_eq!(evaluate_success(&[ep(1.0, 1.0)], EnvKind::IMaze, 0), Some(1.0));
    assert_eq!(
        evaluate_success(&[ep(4.0, 1.0), ep(3.0, 1.0)], EnvKind::MetaFetch, 4),
        Some(0.5)
    );
}

#[test]
fn band_statistic_constant_runs() {
    let one: Vec<(u64, f64)> = (1..=10).map(|i| (i * 100, 1.0)).collect();
    let half: Vec<(u64, f64)> = (1..=10).map(|i| (i * 100, 0.5)).collect();
    assert_eq!(time_in_band(&one, PLATEAU_BAND), Some(0.0));
    assert_eq!(time_in_band(&half, PLATEAU_BAND), Some(1.0));
}

/// Direct counting over a unit-step expansion of the curve.
fn counted(curve: &[(u64, f64)]) -> Option<f64> {
    let mut steps = Vec::new();
    let mut prev = 0;
    for &(s, v) in curve {
        for _ in prev..s {
            steps.push(v);
        }
        prev = prev.max(s);
    }
    (!steps.is_empty()).then(|| steps.iter().filter(|&&v| (0.4..=0.6).contains(&v)).count() as f64 / steps.len() as f64)
}

#[test]
fn staircase_band_matches_counting() {
    // 0 → 0.4 (edge) → 0.5 → 0.6 (edge) → 0.61 → 1.0 with uneven spacing
    let stairs = [(50, 0.0), (80, 0.4), (200, 0.5), (230, 0.6), (300, 0.61), (1000, 1.0)];
    assert_eq!(time_in_band(&stairs, PLATEAU_BAND), counted(&stairs));
    assert_eq!(time_in_band(&stairs, PLATEAU_BAND), Some(180.0 / 1000.0));
}

proptest! {
    #[test]
    fn band_matches_counting(points in prop::collection::vec((1u64..50, 0u8..=10), 1..20)) {
        let mut curve = Vec::new();
        let mut at = 0;
        for (dx, s) in points {
            at += dx;
            curve.push((at, s as f64 / 10.0));
        }
        let got = time_in_band(&curve, PLATEAU_BAND).unwrap();
        let want = counted(&curve).unwrap();
        prop_assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn export_writes_per_seed_csv() {
    let root = tempfile::tempdir().unwrap();
    for seed in 0..2 {
        let mut cfg = desk(Mode::Lstm, 600, &root.path().join(format!("lstm-{seed}")));
        cfg.seed = seed;
        run_experiment(&cfg).unwrap();
    }
    let curves = seed_curve_export(root.path()).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[1].seed, Some(1));
    let csv = std::fs::read_to_string(root.path().join("seeds.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(rows, curves.iter().map(|c| c.points.len()).sum::<usize>());
    assert!(root.path().join("time_in_band.csv").is_file());
    let recs = read_metrics(&root.path().join("lstm-0/metrics.jsonl")).unwrap();
    assert_eq!(curves[0].points, curve(&recs));
    assert!(seed_curve_export(tempfile::tempdir().unwrap().path()).is_err());
}

#[test]
fn bench_reports_ordered_latencies() {
    assert!(bench_latency(BenchModel::lstm(), 0).is_err());
    let mut prev = 0.0;
    for hidden in [32, 128, 512] {
        let r = bench_latency(BenchModel::Lstm { hidden }, 300).unwrap();
        assert!(r.median_ms > 0.0 && r.p95_ms >= r.median_ms && r.sps > 0.0);
        assert!(r.median_ms >= prev, "hidden {hidden}: {} < {prev}", r.median_ms);
        prev = r.median_ms;
    }
}

#[test]
fn cli_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ald");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "run.mode = nonsense\n").unwrap();
    let st = Command::new(exe).args(["run", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = Command::new(exe)
        .args(["bench", "--model", "lstm", "--trials", "0"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let good = dir.path().join("good.cfg");
    std::fs::write(
        &good,
        "run.env_steps = 200\nrun.metrics_every = 100\npipeline.actors = 2\npipeline.batch = 2\npipeline.unroll = 10\nmodel.layers = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = Command::new(exe)
        .args(["run", "--mode", "lstm", "--seed", "4", "--deterministic", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["seed"], 4);
    assert_eq!(summary["mode"], "lstm");
    assert!(out.join("metrics.jsonl").is_file());
    let st = Command::new(exe).args(["export", "--runs"]).arg(&out).status().unwrap();
    assert!(st.success());
    assert!(out.join("seeds.csv").is_file());
}
