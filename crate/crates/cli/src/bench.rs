//! Closed-loop load measurement: how much service capacity do runaway
//! requests eat compared to well-behaved ones?
//!
//! The capacity model is a token budget `B` — the number of tokens that
//! may be in flight at once — so a condition whose requests may run `L`
//! tokens long is admitted `floor(B / L)` concurrent workers. Each worker
//! serves back-to-back requests against the backend until the measurement
//! window closes; only requests that finish inside the window count.
//! Driving a service-timed scripted model (see the mock backend's
//! `service_ms_per_token`) makes the counts reproducible.
//!
//! Throughput is counted tokens over the window, latency is the mean
//! measured request time, and the request quota is the number of
//! completions. Comparisons report throughput as a drop percentage and
//! the other two as attack/baseline multipliers.

use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use rentropy_backend::ModelBackend;
use serde::{Deserialize, Serialize};

/// One load condition. Requests in it run until `max_tokens` (or the
/// model's own end-of-thinking token, which a runaway script never
/// reaches).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    pub prompt: String,
    pub max_tokens: usize,
}

/// Shared measurement parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    /// Tokens that may be in flight at once across all workers.
    pub token_budget: usize,
    /// Hard cap on workers regardless of the budget.
    pub max_concurrency: usize,
    /// Measurement window.
    pub window: Duration,
    /// Generation temperature (0 keeps the drive fully deterministic).
    pub temperature: f64,
}

impl BenchSettings {
    /// Concurrent workers a condition is entitled to.
    pub fn concurrency_for(&self, request_tokens: usize) -> Result<usize> {
        if request_tokens == 0 {
            bail!("condition has zero-token requests");
        }
        let c = (self.token_budget / request_tokens).min(self.max_concurrency);
        if c == 0 {
            bail!(
                "token budget {} cannot admit even one {}-token request",
                self.token_budget,
                request_tokens
            );
        }
        Ok(c)
    }
}

/// Measured results for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    /// The per-request token cap the concurrency was derived from.
    pub request_tokens: usize,
    pub concurrency: usize,
    /// Requests completed inside the window (the request quota).
    pub completed_requests: usize,
    /// Tokens actually generated by those requests.
    pub completed_tokens: usize,
    /// Aggregate tokens per second over the window.
    pub throughput: f64,
    /// Tokens per second as seen by a single request.
    pub throughput_per_request: f64,
    /// Mean request completion time, milliseconds.
    pub mean_latency_ms: f64,
}

/// Baseline-versus-attack summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchComparison {
    pub baseline: ConditionReport,
    pub attack: ConditionReport,
    /// Aggregate throughput lost to the attack, percent of baseline.
    pub tp_drop_pct: f64,
    /// Attack latency over baseline latency.
    pub ltc_multiplier: f64,
    /// Attack request quota over baseline request quota.
    pub rq_multiplier: f64,
}

/// Runs one condition: spawns its workers, lets each serve back-to-back
/// generation requests, and counts completions that land inside the
/// window.
pub fn run_condition(
    backend: &dyn ModelBackend,
    settings: &BenchSettings,
    spec: &ConditionSpec,
) -> Result<ConditionReport> {
    let concurrency = settings.concurrency_for(spec.max_tokens)?;

    let start = Instant::now();
    let deadline = start + settings.window;
    type WorkerResult = Result<Vec<(usize, Duration)>, rentropy_backend::BackendError>;
    let per_worker: Vec<WorkerResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..concurrency)
            .map(|_| {
                scope.spawn(move || -> WorkerResult {
                    let mut done: Vec<(usize, Duration)> = Vec::new();
                    while Instant::now() < deadline {
                        let begin = Instant::now();
                        let result = backend.generate(
                            &spec.prompt,
                            spec.max_tokens,
                            settings.temperature,
                        )?;
                        let end = Instant::now();
                        if end <= deadline {
                            done.push((result.n_reasoning_tokens, end - begin));
                        }
                    }
                    Ok(done)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });

    let mut completions: Vec<(usize, Duration)> = Vec::new();
    for worker in per_worker {
        completions.extend(worker.context("bench request failed")?);
    }

    let completed_requests = completions.len();
    let completed_tokens: usize = completions.iter().map(|(n, _)| n).sum();
    let window_s = settings.window.as_secs_f64();
    let mean_latency = if completed_requests == 0 {
        0.0
    } else {
        completions
            .iter()
            .map(|(_, d)| d.as_secs_f64())
            .sum::<f64>()
            / completed_requests as f64
    };
    let mean_tokens = if completed_requests == 0 {
        0.0
    } else {
        completed_tokens as f64 / completed_requests as f64
    };
    Ok(ConditionReport {
        condition: spec.name.clone(),
        request_tokens: spec.max_tokens,
        concurrency,
        completed_requests,
        completed_tokens,
        throughput: completed_tokens as f64 / window_s,
        throughput_per_request: if mean_latency > 0.0 {
            mean_tokens / mean_latency
        } else {
            0.0
        },
        mean_latency_ms: mean_latency * 1e3,
    })
}

/// Computes the headline deltas from two measured conditions.
pub fn compare(baseline: ConditionReport, attack: ConditionReport) -> BenchComparison {
    let tp_drop_pct = if baseline.throughput > 0.0 {
        (1.0 - attack.throughput / baseline.throughput) * 100.0
    } else {
        0.0
    };
    let ltc_multiplier = if baseline.mean_latency_ms > 0.0 {
        attack.mean_latency_ms / baseline.mean_latency_ms
    } else {
        0.0
    };
    let rq_multiplier = if baseline.completed_requests > 0 {
        attack.completed_requests as f64 / baseline.completed_requests as f64
    } else {
        0.0
    };
    BenchComparison {
        baseline,
        attack,
        tp_drop_pct,
        ltc_multiplier,
        rq_multiplier,
    }
}
