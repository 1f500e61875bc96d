//! Test double for the evaluator wire protocol.
//!
//! Answers every request with the fixed curve `acc(e) = e / (budget + 1)`,
//! handling requests concurrently. Options:
//!
//! ```text
//! --delay-ms N        sleep N ms per epoch
//! --crash-on ID       exit abruptly after the first epoch of request ID
//! --hang-on ID        never answer request ID
//! --garbage-on ID     answer request ID with a malformed line
//! --fail-on ID        report request ID as failed after one epoch
//! --version N         announce protocol version N
//! --stats FILE        keep the peak number of outstanding requests in FILE
//! ```

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use nars::evaluator::protocol::{self, PluginMessage};
use nars::evaluator::{EvalResult, EvalStatus};

#[derive(Default)]
struct Options {
    delay_ms: u64,
    crash_on: Option<u64>,
    hang_on: Option<u64>,
    garbage_on: Option<u64>,
    fail_on: Option<u64>,
    version: u32,
    stats: Option<String>,
}

fn parse_args() -> Options {
    let mut o = Options {
        version: protocol::PROTOCOL_VERSION,
        ..Options::default()
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args
            .next()
            .unwrap_or_else(|| panic!("{flag} needs a value"));
        let num = || {
            value
                .parse::<u64>()
                .unwrap_or_else(|_| panic!("bad value for {flag}"))
        };
        match flag.as_str() {
            "--delay-ms" => o.delay_ms = num(),
            "--crash-on" => o.crash_on = Some(num()),
            "--hang-on" => o.hang_on = Some(num()),
            "--garbage-on" => o.garbage_on = Some(num()),
            "--fail-on" => o.fail_on = Some(num()),
            "--version" => o.version = num() as u32,
            "--stats" => o.stats = Some(value),
            _ => panic!("unknown flag {flag}"),
        }
    }
    o
}

struct Shared {
    out: Mutex<std::io::Stdout>,
    outstanding: AtomicUsize,
    peak: AtomicUsize,
    stats: Option<String>,
}

impl Shared {
    fn emit(&self, line: &str) {
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }

    fn record_peak(&self, now: usize) {
        let peak = self.peak.fetch_max(now, Ordering::SeqCst).max(now);
        if let Some(path) = &self.stats {
            std::fs::write(path, peak.to_string()).unwrap();
        }
    }
}

fn main() {
    let opts = Arc::new(parse_args());
    let shared = Arc::new(Shared {
        out: Mutex::new(std::io::stdout()),
        outstanding: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        stats: opts.stats.clone(),
    });
    shared.emit(&protocol::encode(&PluginMessage::Hello {
        protocol_version: opts.version,
        capabilities: vec!["multiplex".into()],
    }));
    let stdin = std::io::stdin();
    let mut workers = Vec::new();
    for line in stdin.lock().lines() {
        let line = line.unwrap();
        if line.trim().is_empty() {
            continue;
        }
        let req = protocol::parse_request(&line).unwrap();
        let now = shared.outstanding.fetch_add(1, Ordering::SeqCst) + 1;
        shared.record_peak(now);
        let (shared, opts) = (Arc::clone(&shared), Arc::clone(&opts));
        workers.push(thread::spawn(move || {
            if opts.hang_on == Some(req.id) {
                return;
            }
            let budget = req.epoch_budget;
            let curve: Vec<f64> = (1..=budget)
                .map(|e| f64::from(e) / f64::from(budget + 1))
                .collect();
            for (e, &acc) in curve.iter().enumerate() {
                thread::sleep(Duration::from_millis(opts.delay_ms));
                shared.emit(&protocol::encode(&PluginMessage::Progress {
                    id: req.id,
                    epoch: e as u32 + 1,
                    accuracy: acc,
                }));
                if opts.crash_on == Some(req.id) {
                    std::process::exit(17);
                }
                if opts.fail_on == Some(req.id) {
                    shared.outstanding.fetch_sub(1, Ordering::SeqCst);
                    shared.emit(&protocol::encode(&PluginMessage::Result(
                        EvalResult::failed(req.id, Vec::new(), "diverged"),
                    )));
                    return;
                }
            }
            if opts.garbage_on == Some(req.id) {
                shared.emit("{this is not json");
                return;
            }
            shared.outstanding.fetch_sub(1, Ordering::SeqCst);
            shared.emit(&protocol::encode(&PluginMessage::Result(EvalResult {
                id: req.id,
                curve,
                status: EvalStatus::Ok,
            })));
        }));
    }
    for w in workers {
        let _ = w.join();
    }
}
