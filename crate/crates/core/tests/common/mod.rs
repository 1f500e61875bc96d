#![allow(dead_code)]

pub mod cost_oracle;

use std::sync::atomic::{AtomicUsize, Ordering};

use nars::evaluator::{EvalRequest, EvalResult, Evaluator};

/// Forwards to another evaluator and counts requests.
pub struct Counting<'a, E> {
    pub inner: &'a E,
    pub calls: AtomicUsize,
}

impl<'a, E: Evaluator> Counting<'a, E> {
    pub fn new(inner: &'a E) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Evaluator> Evaluator for Counting<'_, E> {
    fn evaluate(&self, requests: &[EvalRequest]) -> nars::Result<Vec<EvalResult>> {
        self.calls.fetch_add(requests.len(), Ordering::SeqCst);
        self.inner.evaluate(requests)
    }
}
