//! Runs an external trainer as a subprocess speaking [`super::protocol`].

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{self, PluginMessage, PROTOCOL_VERSION};
use super::{EvalRequest, EvalResult, Evaluator};
use crate::error::{Error, Result};
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PluginMode {
    /// One process with up to `parallelism` requests outstanding.
    Multiplex,
    /// `parallelism` processes, one request each at a time.
    PerSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PluginConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub mode: PluginMode,
    pub parallelism: usize,
    /// Lower bound of the per-request timeout; the effective timeout is the
    /// larger of this and ten times the median completed request time.
    pub timeout_floor_secs: f64,
    pub hello_timeout_secs: f64,
}

impl Default for PluginConfig {
    fn default() -> Self {
        PluginConfig {
            command: Vec::new(),
            mode: PluginMode::PerSlot,
            parallelism: 1,
            timeout_floor_secs: 60.0,
            hello_timeout_secs: 30.0,
        }
    }
}

#[derive(Debug)]
pub struct PluginEvaluator {
    config: PluginConfig,
    durations: Mutex<Vec<f64>>,
}

enum Incoming {
    Line(String),
    Closed,
}

/// A running plugin process and a channel fed by its stdout reader.
struct Session {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<Incoming>,
}

impl Session {
    fn spawn(config: &PluginConfig) -> Result<Session> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| Error::Evaluator("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Evaluator(format!("cannot launch `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) if l.trim().is_empty() => continue,
                    Ok(l) => {
                        if tx.send(Incoming::Line(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(Incoming::Closed);
        });
        let mut s = Session { child, stdin, rx };
        let wait = Duration::from_secs_f64(config.hello_timeout_secs);
        match s.rx.recv_timeout(wait) {
            Ok(Incoming::Line(l)) => match protocol::parse_plugin_message(&l) {
                Ok(PluginMessage::Hello {
                    protocol_version, ..
                }) if protocol_version == PROTOCOL_VERSION => Ok(s),
                Ok(PluginMessage::Hello {
                    protocol_version, ..
                }) => {
                    s.kill();
                    Err(Error::Protocol {
                        message: format!(
                            "plugin speaks protocol {protocol_version}, expected {PROTOCOL_VERSION}"
                        ),
                        line: l,
                    })
                }
                Ok(_) => {
                    s.kill();
                    Err(Error::Protocol {
                        message: "expected hello".into(),
                        line: l,
                    })
                }
                Err(e) => {
                    s.kill();
                    Err(e)
                }
            },
            _ => {
                s.kill();
                Err(Error::Evaluator("plugin did not send hello".into()))
            }
        }
    }

    fn send(&mut self, r: &EvalRequest) -> std::io::Result<()> {
        writeln!(self.stdin, "{}", protocol::encode_request(r))?;
        self.stdin.flush()
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.kill();
    }
}

struct InFlight {
    index: usize,
    curve: Vec<f64>,
    started: Instant,
}

/// Shared work queue and result slots for all workers of one batch.
struct Batch<'a> {
    requests: &'a [EvalRequest],
    queue: Mutex<VecDeque<usize>>,
    results: Mutex<Vec<Option<EvalResult>>>,
}

impl Batch<'_> {
    fn next(&self) -> Option<usize> {
        self.queue.lock().unwrap().pop_front()
    }

    fn requeue(&self, index: usize) {
        self.queue.lock().unwrap().push_front(index);
    }

    fn finish(&self, index: usize, result: EvalResult) {
        self.results.lock().unwrap()[index] = Some(result);
    }

    fn fail_remaining(&self, reason: &str) {
        while let Some(i) = self.next() {
            self.finish(
                i,
                EvalResult::failed(self.requests[i].id, Vec::new(), reason),
            );
        }
    }
}

impl PluginEvaluator {
    pub fn new(config: PluginConfig) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::InvalidArgument("plugin command is empty".into()));
        }
        if config.parallelism == 0 {
            return Err(Error::InvalidArgument(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(PluginEvaluator {
            config,
            durations: Mutex::new(Vec::new()),
        })
    }

    fn timeout(&self) -> Duration {
        let floor = self.config.timeout_floor_secs;
        let d = self.durations.lock().unwrap();
        let secs = if d.is_empty() {
            floor
        } else {
            floor.max(10.0 * median(&d))
        };
        Duration::from_secs_f64(secs)
    }

    /// Drives one plugin process until the shared queue is drained.
    fn worker(&self, batch: &Batch<'_>, cap: usize) -> Result<()> {
        let mut session: Option<Session> = None;
        let mut inflight: HashMap<u64, InFlight> = HashMap::new();
        loop {
            if session.is_none() {
                if batch.queue.lock().unwrap().is_empty() {
                    return Ok(());
                }
                match Session::spawn(&self.config) {
                    Ok(s) => session = Some(s),
                    Err(e @ Error::Protocol { .. }) => return Err(e),
                    Err(e) => {
                        batch.fail_remaining(&e.to_string());
                        return Ok(());
                    }
                }
            }
            let s = session.as_mut().unwrap();
            while inflight.len() < cap {
                let Some(i) = batch.next() else { break };
                let r = &batch.requests[i];
                if s.send(r).is_err() {
                    batch.requeue(i);
                    break;
                }
                inflight.insert(
                    r.id,
                    InFlight {
                        index: i,
                        curve: Vec::new(),
                        started: Instant::now(),
                    },
                );
            }
            if inflight.is_empty() {
                if batch.queue.lock().unwrap().is_empty() {
                    return Ok(());
                }
                // The write failed before anything was in flight: restart.
                session = None;
                continue;
            }
            let timeout = self.timeout();
            let oldest = inflight.values().map(|f| f.started).min().unwrap();
            let wait = (oldest + timeout).saturating_duration_since(Instant::now());
            match s.rx.recv_timeout(wait) {
                Ok(Incoming::Line(line)) => match protocol::parse_plugin_message(&line)? {
                    PluginMessage::Progress {
                        id,
                        epoch,
                        accuracy,
                    } => {
                        if let Some(f) = inflight.get_mut(&id) {
                            let pos = epoch as usize - 1;
                            if pos >= f.curve.len() {
                                f.curve.resize(pos + 1, accuracy);
                            }
                            f.curve[pos] = accuracy;
                        }
                    }
                    PluginMessage::Result(mut res) => {
                        let Some(f) = inflight.remove(&res.id) else {
                            return Err(Error::Protocol {
                                message: format!("result for unknown request {}", res.id),
                                line,
                            });
                        };
                        let budget = batch.requests[f.index].epoch_budget as usize;
                        if res.is_ok() && res.curve.len() != budget {
                            return Err(Error::Protocol {
                                message: format!(
                                    "curve has {} epochs, budget is {budget}",
                                    res.curve.len()
                                ),
                                line,
                            });
                        }
                        if !res.is_ok() && res.curve.is_empty() {
                            res.curve = f.curve;
                        }
                        self.durations
                            .lock()
                            .unwrap()
                            .push(f.started.elapsed().as_secs_f64());
                        batch.finish(f.index, res);
                    }
                    PluginMessage::Hello { .. } => {
                        return Err(Error::Protocol {
                            message: "unexpected hello".into(),
                            line,
                        })
                    }
                },
                Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => {
                    log::warn!("plugin exited with {} request(s) in flight", inflight.len());
                    for (id, f) in inflight.drain() {
                        batch.finish(f.index, EvalResult::failed(id, f.curve, "plugin exited"));
                    }
                    session = None;
                }
                Err(RecvTimeoutError::Timeout) => {
                    let now = Instant::now();
                    let expired: Vec<u64> = inflight
                        .iter()
                        .filter(|(_, f)| now.duration_since(f.started) >= timeout)
                        .map(|(&id, _)| id)
                        .collect();
                    log::warn!("{} request(s) timed out; restarting plugin", expired.len());
                    for id in expired {
                        let f = inflight.remove(&id).unwrap();
                        batch.finish(f.index, EvalResult::failed(id, f.curve, "timeout"));
                    }
                    // The plugin may still be busy with the expired work, so
                    // restart it and resend whatever else was outstanding.
                    for (_, f) in inflight.drain() {
                        batch.requeue(f.index);
                    }
                    session = None;
                }
            }
        }
    }
}

impl Evaluator for PluginEvaluator {
    fn evaluate(&self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>> {
        let mut ids: Vec<u64> = requests.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "duplicate request ids in one batch".into(),
            ));
        }
        let batch = Batch {
            requests,
            queue: Mutex::new((0..requests.len()).collect()),
            results: Mutex::new(vec![None; requests.len()]),
        };
        let p = self.config.parallelism;
        let (workers, cap) = match self.config.mode {
            PluginMode::Multiplex => (1, p),
            PluginMode::PerSlot => (p.min(requests.len()).max(1), 1),
        };
        let outcomes: Vec<Result<()>> = thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| scope.spawn(|| self.worker(&batch, cap)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for o in outcomes {
            o?;
        }
        Ok(batch
            .results
            .into_inner()
            .unwrap()
            .into_iter()
            .zip(requests)
            .map(|(r, req)| {
                r.unwrap_or_else(|| EvalResult::failed(req.id, Vec::new(), "not evaluated"))
            })
            .collect())
    }
}
