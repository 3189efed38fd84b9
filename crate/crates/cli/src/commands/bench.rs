//! `rentropy bench`: measure the serving-capacity impact of runaway
//! requests against a service-timed scripted model.
//!
//! Two conditions run back to back — short, well-behaved requests and
//! cap-length runaway ones — under the same token budget. An optional
//! control repeats the baseline condition to show measurement stability.

use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use rentropy_backend::mock::MockBackend;
use serde::Serialize;

use crate::bench::{compare, run_condition, BenchSettings, ConditionReport, ConditionSpec};
use crate::config::LoadedConfig;
use crate::store;

use super::ensure_out_dir;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Rerun the baseline condition and report its deltas.
    #[arg(long)]
    pub control: bool,
}

/// Stability check: the same condition measured twice.
#[derive(Debug, Serialize)]
struct ControlCheck {
    report: ConditionReport,
    tp_delta_pct: f64,
    ltc_delta_pct: f64,
    rq_delta_pct: f64,
}

fn pct_delta(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (b - a).abs() / a * 100.0
    }
}

fn csv_row(r: &ConditionReport) -> Vec<String> {
    vec![
        r.condition.clone(),
        r.request_tokens.to_string(),
        r.concurrency.to_string(),
        r.completed_requests.to_string(),
        r.completed_tokens.to_string(),
        format!("{:.3}", r.throughput),
        format!("{:.3}", r.throughput_per_request),
        format!("{:.3}", r.mean_latency_ms),
    ]
}

pub fn run(args: &BenchArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let b = &cfg.config.bench;
    let model_file = b
        .model_file
        .as_ref()
        .context("bench needs [bench] model_file (a service-timed scripted model)")?;
    let path = cfg.resolve(model_file);
    let backend = MockBackend::from_path(&path, 8, 1.0)
        .with_context(|| format!("loading bench model {}", path.display()))?;

    let settings = BenchSettings {
        token_budget: b.token_budget,
        max_concurrency: b.max_concurrency,
        window: Duration::from_millis(b.window_ms),
        temperature: 0.0,
    };
    let baseline_spec = ConditionSpec {
        name: "baseline".into(),
        prompt: b.prompt.clone(),
        max_tokens: b.baseline_max_tokens,
    };
    let attack_spec = ConditionSpec {
        name: "attack".into(),
        prompt: b.prompt.clone(),
        max_tokens: b.attack_max_tokens,
    };

    let baseline = run_condition(&backend, &settings, &baseline_spec)?;
    let attack = run_condition(&backend, &settings, &attack_spec)?;
    let control = if args.control {
        let rerun = run_condition(&backend, &settings, &baseline_spec)?;
        Some(ControlCheck {
            tp_delta_pct: pct_delta(baseline.throughput, rerun.throughput),
            ltc_delta_pct: pct_delta(baseline.mean_latency_ms, rerun.mean_latency_ms),
            rq_delta_pct: pct_delta(
                baseline.completed_requests as f64,
                rerun.completed_requests as f64,
            ),
            report: rerun,
        })
    } else {
        None
    };

    let mut rows = vec![csv_row(&baseline), csv_row(&attack)];
    if let Some(c) = &control {
        let mut row = csv_row(&c.report);
        row[0] = "control".into();
        rows.push(row);
    }
    store::write_csv(
        &out_dir.join("bench_conditions.csv"),
        &[
            "condition",
            "request_tokens",
            "concurrency",
            "completed_requests",
            "completed_tokens",
            "throughput",
            "throughput_per_request",
            "mean_latency_ms",
        ],
        &rows,
    )?;

    let comparison = compare(baseline, attack);
    #[derive(Serialize)]
    struct Output {
        #[serde(flatten)]
        comparison: crate::bench::BenchComparison,
        #[serde(skip_serializing_if = "Option::is_none")]
        control: Option<ControlCheck>,
    }
    let output = Output {
        comparison,
        control,
    };
    store::write_json(&out_dir.join("bench_report.json"), &output)?;

    let c = &output.comparison;
    println!(
        "bench: throughput drop {:.1}%, latency x{:.2}, request quota x{:.4} \
         (baseline {} req @ {} workers, attack {} req @ {} workers)",
        c.tp_drop_pct,
        c.ltc_multiplier,
        c.rq_multiplier,
        c.baseline.completed_requests,
        c.baseline.concurrency,
        c.attack.completed_requests,
        c.attack.concurrency,
    );
    if let Some(ctl) = &output.control {
        println!(
            "control: tp delta {:.2}%, ltc delta {:.2}%, rq delta {:.2}%",
            ctl.tp_delta_pct, ctl.ltc_delta_pct, ctl.rq_delta_pct
        );
    }
    Ok(())
}
