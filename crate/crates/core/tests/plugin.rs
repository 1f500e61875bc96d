use std::time::Instant;

use nars::builtin;
use nars::evaluator::{
    EvalRequest, EvalStatus, Evaluator, PluginConfig, PluginEvaluator, PluginMode,
};
use nars::space::sample_uniform;
use nars::Error;

const ECHO: &str = env!("CARGO_BIN_EXE_nars-echo-plugin");

fn plugin(mode: PluginMode, parallelism: usize, args: &[&str]) -> PluginEvaluator {
    let mut command = vec![ECHO.to_string()];
    command.extend(args.iter().map(|s| s.to_string()));
    PluginEvaluator::new(PluginConfig {
        command,
        mode,
        parallelism,
        ..PluginConfig::default()
    })
    .unwrap()
}

fn requests(ids: impl IntoIterator<Item = u64>, budget: u32) -> Vec<EvalRequest> {
    let space = builtin::toy_space();
    ids.into_iter()
        .map(|id| EvalRequest {
            id,
            candidate: sample_uniform(&space, id),
            epoch_budget: budget,
            seed: 7,
        })
        .collect()
}

#[test]
fn echo_results_match_fixture() {
    let mut reqs = requests([10, 11, 12], 4);
    reqs[1].epoch_budget = 3;
    reqs[2].epoch_budget = 1;
    for mode in [PluginMode::Multiplex, PluginMode::PerSlot] {
        let out = plugin(mode, 2, &[]).evaluate(&reqs).unwrap();
        let text = serde_json::to_string(&out).unwrap() + "\n";
        assert_eq!(text, include_str!("fixtures/echo_results.json"));
    }
}

#[test]
fn results_keep_request_order() {
    // Later requests finish first: budgets shrink along the batch.
    let reqs: Vec<EvalRequest> = requests(0..8, 1)
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.epoch_budget = 8 - i as u32;
            r
        })
        .collect();
    let out = plugin(PluginMode::Multiplex, 8, &["--delay-ms", "5"])
        .evaluate(&reqs)
        .unwrap();
    let ids: Vec<u64> = out.iter().map(|r| r.id).collect();
    assert_eq!(ids, (0..8).collect::<Vec<_>>());
    assert!(out
        .iter()
        .zip(&reqs)
        .all(|(o, r)| o.curve.len() == r.epoch_budget as usize));
}

#[test]
fn crash_fails_only_the_inflight_request() {
    let reqs = requests(0..6, 3);
    let out = plugin(PluginMode::PerSlot, 2, &["--crash-on", "2"])
        .evaluate(&reqs)
        .unwrap();
    for r in &out {
        if r.id == 2 {
            assert_eq!(
                r.status,
                EvalStatus::Failed {
                    reason: "plugin exited".into()
                }
            );
            assert_eq!(r.curve, vec![0.25]);
        } else {
            assert!(r.is_ok(), "request {} failed", r.id);
        }
    }
}

#[test]
fn outstanding_requests_respect_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("peak");
    let stats = stats.to_str().unwrap();
    let reqs = requests(0..48, 3);
    let out = plugin(
        PluginMode::Multiplex,
        8,
        &["--delay-ms", "5", "--stats", stats],
    )
    .evaluate(&reqs)
    .unwrap();
    assert!(out.iter().all(|r| r.is_ok()));
    let peak: usize = std::fs::read_to_string(stats).unwrap().parse().unwrap();
    assert!((2..=8).contains(&peak), "peak {peak}");
}

#[test]
fn hung_request_times_out() {
    let mut command = vec![ECHO.to_string(), "--hang-on".into(), "1".into()];
    command.extend(["--delay-ms".into(), "1".into()]);
    let eval = PluginEvaluator::new(PluginConfig {
        command,
        mode: PluginMode::Multiplex,
        parallelism: 4,
        timeout_floor_secs: 0.5,
        ..PluginConfig::default()
    })
    .unwrap();
    let started = Instant::now();
    let out = eval.evaluate(&requests(0..4, 2)).unwrap();
    assert!(started.elapsed().as_secs_f64() < 10.0);
    assert_eq!(
        out[1].status,
        EvalStatus::Failed {
            reason: "timeout".into()
        }
    );
    for i in [0, 2, 3] {
        assert!(out[i].is_ok());
    }
}

#[test]
fn failed_result_keeps_progress() {
    let out = plugin(PluginMode::Multiplex, 2, &["--fail-on", "1"])
        .evaluate(&requests(0..3, 4))
        .unwrap();
    assert_eq!(
        out[1].status,
        EvalStatus::Failed {
            reason: "diverged".into()
        }
    );
    assert_eq!(out[1].curve, vec![0.2]);
    assert!(out[0].is_ok() && out[2].is_ok());
}

#[test]
fn version_mismatch_aborts() {
    let err = plugin(PluginMode::Multiplex, 1, &["--version", "2"])
        .evaluate(&requests([0], 1))
        .unwrap_err();
    match err {
        Error::Protocol { message, .. } => assert!(message.contains("protocol 2"), "{message}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn malformed_line_is_reported() {
    let err = plugin(PluginMode::Multiplex, 2, &["--garbage-on", "1"])
        .evaluate(&requests(0..2, 2))
        .unwrap_err();
    match err {
        Error::Protocol { line, .. } => assert_eq!(line, "{this is not json"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn missing_program_fails_requests() {
    let eval = PluginEvaluator::new(PluginConfig {
        command: vec!["/nonexistent/trainer".into()],
        ..PluginConfig::default()
    })
    .unwrap();
    let out = eval.evaluate(&requests(0..2, 1)).unwrap();
    assert!(out.iter().all(|r| !r.is_ok()));
}
