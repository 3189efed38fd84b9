//! Acceptance suite: one test per release criterion.
//!
//! The first seven criteria exercise the libraries directly against
//! independent oracles (an arbitrary-precision entropy recomputation, a
//! separately written nucleus scan, closed-form regression targets, and
//! hand-built trace corpora). The last three drive the compiled binary
//! against the bundled fixtures and check its artifacts as a black box.
//!
//! Every test prints a single `criterion N: PASS — ...` line once its
//! assertions hold, so a `--nocapture` run reads as a checklist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use rentropy_attack::{
    compression_ratio, run, trim, CandidateScore, GuidedRun, RunOutcome, SamplerConfig, ScanOrder,
    TokenCounter,
};
use rentropy_backend::mock::MockBackend;
use rentropy_backend::ModelBackend;
use rentropy_core::counterfactual::BasicQuestion;
use rentropy_core::dist::{
    clamped_entropy, recursive_entropy, top_p_renormalize, DistEntry, NextTokenDistribution,
    RecursiveEntropyRecord, TokenId, TokenSequence,
};
use rentropy_core::trace::{detect_loop, fact_hit, over_reflection, segment};
use rentropy_core::trend::{analyze_trend, TrendClass};
use rentropy_core::CoreError;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Runs the compiled binary in `cwd` and panics with full output on a
/// non-zero exit, so CLI failures surface inside the test report.
fn run_cli(cwd: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_rentropy"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary spawns");
    assert!(
        out.status.success(),
        "rentropy {:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("well-formed jsonl row"))
        .collect()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).expect("well-formed json")
}

/// SHA-256 of every file under `dir`, keyed by path relative to it.
fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                let bytes = std::fs::read(&p).expect("readable file");
                let digest = Sha256::digest(&bytes);
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    out
}

// --- random distribution generator -----------------------------------------

/// Builds a normalized distribution over `n` tokens. When `quantize` is
/// set, weights come from a three-level grid so exact probability ties
/// occur across token ids.
fn random_dist(rng: &mut ChaCha20Rng, n: usize, quantize: bool) -> NextTokenDistribution {
    let weights: Vec<f64> = if quantize {
        let levels = [4.0, 2.0, 1.0];
        (0..n).map(|_| levels[rng.random_range(0..3)]).collect()
    } else {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                -(u.max(1e-300)).ln() + 1e-9
            })
            .collect()
    };
    let total: f64 = weights.iter().sum();
    let entries = weights
        .iter()
        .enumerate()
        .map(|(i, w)| DistEntry {
            token: TokenId(i as u32),
            logprob: (w / total).ln(),
        })
        .collect();
    NextTokenDistribution::new(entries, false, 0).expect("valid random distribution")
}

// --- arbitrary-precision entropy oracle -------------------------------------

const ORACLE_BITS: usize = 192;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, ORACLE_BITS)
}

/// |a| <= |b| in the big-float domain (there is no lossless way back to
/// f64, so all comparisons stay on this side).
fn abs_le(a: &BigFloat, b: &BigFloat) -> bool {
    match a.abs_cmp(b) {
        Some(c) => c <= 0,
        None => panic!("incomparable big-float values"),
    }
}

/// Entropy of the given weights recomputed at 192 bits, clamped from
/// below exactly like the production definition.
fn oracle_entropy(weights: &[f64], floor: f64, cc: &mut Consts) -> BigFloat {
    let mut h = big(0.0);
    for &q in weights {
        if q > 0.0 {
            let bq = big(q);
            let term = bq.mul(&bq.ln(ORACLE_BITS, RM, cc), ORACLE_BITS, RM);
            h = h.sub(&term, ORACLE_BITS, RM);
        }
    }
    let f = big(floor);
    if matches!(h.cmp(&f), Some(c) if c < 0) {
        f
    } else {
        h
    }
}

fn assert_close_big(actual: f64, oracle: &BigFloat, tol: f64, what: &str) {
    let diff = big(actual).sub(oracle, ORACLE_BITS, RM);
    assert!(
        abs_le(&diff, &big(tol)),
        "{what}: f64 result {actual} differs from the high-precision oracle by more than {tol}"
    );
}

// --- ordinary least squares, written from the raw-sum formulas --------------

/// Independent regression used to cross-check fitted trends. Deliberately
/// uses the expanded sums rather than the mean-centered form.
fn ols_raw(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * n {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, intercept, r2)
}

// --- in-test mock models -----------------------------------------------------

/// A 24-token model whose trajectories open with a few scripted steps,
/// wander through ten distinct fill steps, and then fall into a five-step
/// cycle whose per-step score keeps rising. Token ids:
///
/// * 0 filler/unknown, 1 end-of-thinking (neither ever reachable),
/// * 2..=6   openers (one-hot into the first fill),
/// * 7..=16  fill steps F0..F9 (0.6 toward the next step, rest chatter),
/// * 17..=21 cycle steps C0..C4 with rising transition confidence,
/// * 22..=23 chatter words with a flat high-entropy row.
fn cycle_backend() -> MockBackend {
    const WORDS: [&str; 10] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    let n = 24usize;
    let mut text = vec![String::new(); n];
    text[0] = "~".into();
    text[1] = "</think>".into();
    for i in 0..5 {
        text[2 + i] = format!("Opening check {} clears the slate.\n\n", WORDS[i]);
    }
    for i in 0..10 {
        text[7 + i] = format!("Fill pass {} rechecks one margin.\n\n", WORDS[i]);
    }
    for i in 0..5 {
        text[17 + i] = format!("Cycle claim {} restates the same total.\n\n", WORDS[i]);
    }
    text[22] = "mm ".into();
    text[23] = "hm ".into();

    let mut rows = vec![vec![0.0f64; n]; n];
    rows[0][1] = 1.0;
    rows[1][1] = 1.0;
    for i in 2..=6 {
        rows[i][7] = 1.0;
    }
    for i in 7..=16 {
        let next = if i == 16 { 17 } else { i + 1 };
        rows[i][next] = 0.6;
        rows[i][22] = 0.25;
        rows[i][23] = 0.15;
    }
    // Transition confidence ramps up around the cycle, so each pass
    // scores higher than the fills that led into it.
    let ramp = [0.90, 0.93, 0.95, 0.97, 0.985];
    for (i, &q) in ramp.iter().enumerate() {
        let from = 17 + i;
        let to = 17 + (i + 1) % 5;
        rows[from][to] = q;
        let a = 2.0 * (1.0 - q) / 3.0;
        rows[from][22] = a;
        rows[from][23] = 1.0 - q - a;
    }
    for i in 22..=23 {
        for target in 7..15 {
            rows[i][target] = 0.125;
        }
    }

    let mut initial = vec![0.0f64; n];
    for cell in initial.iter_mut().skip(2).take(5) {
        *cell = 0.2;
    }

    let model = serde_json::json!({
        "kind": "mock-markov",
        "vocab_size": n,
        "eot_token": 1,
        "unk_token": 0,
        "seed": 4242,
        "token_text": text,
        "markov": rows,
        "initial": initial,
    });
    MockBackend::from_json(&model.to_string(), n, 1.0).expect("valid cycle model")
}

/// Guides 100 seeded contexts through the cycle model. Every run is
/// expected to end in a detected loop after the ten fills plus two full
/// cycle passes.
fn cycle_runs(audit: bool) -> Vec<GuidedRun> {
    let backend = cycle_backend();
    let cfg = SamplerConfig {
        t_max: 200,
        ..SamplerConfig::default()
    };
    (0..100u32)
        .map(|s| {
            let ctx = TokenSequence::from(vec![2 + s / 25, 2 + (s / 5) % 5, 2 + s % 5]);
            let prefix = backend
                .detokenize(ctx.as_slice())
                .expect("openers detokenize");
            run(&backend, &ctx, &prefix, &cfg, audit)
                .unwrap_or_else(|e| panic!("cycle run {s} aborted: {e}"))
        })
        .collect()
}

/// A 7-token control model: five words, each followed by the same
/// uniform choice over the five, with no step delimiters anywhere. The
/// trajectory is a single ever-growing step, so loop detection never has
/// two steps to compare and the token budget must run out.
fn uniform_chain_backend() -> MockBackend {
    let n = 7usize;
    let text = vec![
        "~".to_string(),
        "</think>".to_string(),
        "alpha ".to_string(),
        "beta ".to_string(),
        "gamma ".to_string(),
        "delta ".to_string(),
        "epsilon ".to_string(),
    ];
    let mut rows = vec![vec![0.0f64; n]; n];
    for row in rows.iter_mut() {
        for cell in row.iter_mut().skip(2) {
            *cell = 0.2;
        }
    }
    let initial = rows[0].clone();
    let model = serde_json::json!({
        "kind": "mock-markov",
        "vocab_size": n,
        "eot_token": 1,
        "unk_token": 0,
        "seed": 77,
        "token_text": text,
        "markov": rows,
        "initial": initial,
    });
    MockBackend::from_json(&model.to_string(), n, 1.0).expect("valid uniform model")
}

fn uniform_runs(audit: bool) -> Vec<GuidedRun> {
    let backend = uniform_chain_backend();
    let cfg = SamplerConfig {
        t_max: 64,
        ..SamplerConfig::default()
    };
    (0..100u32)
        .map(|s| {
            let ctx = TokenSequence::from(vec![2 + s % 5]);
            let prefix = backend.detokenize(ctx.as_slice()).expect("word detokenizes");
            run(&backend, &ctx, &prefix, &cfg, audit)
                .unwrap_or_else(|e| panic!("uniform run {s} aborted: {e}"))
        })
        .collect()
}

/// Weighted draw from a distribution's canonical entries.
fn sample_entry(dist: &NextTokenDistribution, rng: &mut ChaCha20Rng) -> DistEntry {
    let r: f64 = rng.random();
    let mut cum = 0.0;
    for e in dist.entries() {
        cum += e.prob();
        if r <= cum {
            return *e;
        }
    }
    *dist.entries().last().expect("non-empty distribution")
}

// ---------------------------------------------------------------------------
// Criterion 1: entropy values match an arbitrary-precision recomputation
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_entropy_matches_high_precision_oracle() {
    let started = Instant::now();
    let mut cc = Consts::new().expect("constants cache");
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let thresholds = [0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0];

    for case in 0..1000usize {
        let n = 2 + rng.random_range(0..63usize);
        let dist = random_dist(&mut rng, n, case % 10 == 0);
        let p = thresholds[case % thresholds.len()];
        let set = top_p_renormalize(&dist, p).expect("untruncated nucleus always resolves");
        let weights: Vec<f64> = set.entries.iter().map(|&(_, q)| q).collect();

        let h = clamped_entropy(&set, 1e-6);
        let oracle_h = oracle_entropy(&weights, 1e-6, &mut cc);
        assert_close_big(h, &oracle_h, 1e-9, &format!("case {case} entropy"));

        // Score two parent entries against the same nucleus: the argmax
        // and a rotating pick, so both ends of the probability range see
        // coverage.
        for e in [dist.entries()[0], dist.entries()[case % dist.len()]] {
            let rec = recursive_entropy(e.token, e.prob(), &set, 1e-6, case);
            let oracle_v = big(e.prob().min(1.0)).div(&oracle_h, ORACLE_BITS, RM);
            assert_close_big(rec.value, &oracle_v, 1e-9, &format!("case {case} score"));
            assert!(rec.value.is_finite() && rec.value > 0.0);
        }
    }

    // Uniform distributions: the entropy must equal ln n almost exactly.
    for n in 2..=64usize {
        let entries = (0..n)
            .map(|i| DistEntry {
                token: TokenId(i as u32),
                logprob: (1.0 / n as f64).ln(),
            })
            .collect();
        let dist = NextTokenDistribution::new(entries, false, 0).expect("uniform distribution");
        let set = top_p_renormalize(&dist, 1.0).expect("keeps full support");
        let h = clamped_entropy(&set, 1e-6);
        let target = (n as f64).ln();
        assert!(
            (h - target).abs() <= 1e-12,
            "uniform n={n}: entropy {h} not within 1e-12 of ln n = {target}"
        );
    }

    // Single-token nucleus: the raw entropy is zero, so the clamp must
    // surface exactly as the floor and the score as prob / floor.
    let one = NextTokenDistribution::new(
        vec![DistEntry {
            token: TokenId(0),
            logprob: 0.0,
        }],
        false,
        0,
    )
    .expect("one-hot distribution");
    let set = top_p_renormalize(&one, 0.9).expect("single entry nucleus");
    let h = clamped_entropy(&set, 1e-6);
    assert_eq!(h, 1e-6, "one-hot entropy must clamp to the floor exactly");
    let rec = recursive_entropy(TokenId(0), 0.7, &set, 1e-6, 0);
    let oracle_v = big(0.7).div(&big(1e-6), ORACLE_BITS, RM);
    assert_close_big(rec.value, &oracle_v, 1e-9, "floored score");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "oracle comparison took {elapsed:?}, budget is 5 s"
    );
    println!(
        "criterion 1: PASS — 1000 random distributions within 1e-9 of a 192-bit \
         recomputation, 63 uniform cases within 1e-12 of ln n, floor case exact \
         ({elapsed:?} elapsed)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: nucleus selection matches an independently written scan
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_nucleus_matches_reference_scan() {
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let thresholds = [0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0];
    let mut mismatches = 0usize;
    let mut tie_cases = 0usize;
    let mut boundary_cases = 0usize;

    for case in 0..1000usize {
        let n = 2 + rng.random_range(0..63usize);
        let quantize = case % 5 == 0;
        if quantize {
            tie_cases += 1;
        }
        let dist = random_dist(&mut rng, n, quantize);

        // Reference order rebuilt from scratch: probability descending,
        // token id ascending on equal probability.
        let mut ordered: Vec<(TokenId, f64)> = dist
            .entries()
            .iter()
            .map(|e| (e.token, e.prob()))
            .collect();
        ordered.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        // Exercise exact cumulative boundaries: request precisely the
        // running mass of a prefix, which must cut at that prefix.
        let p = if case % 7 == 0 {
            boundary_cases += 1;
            let j = 1 + rng.random_range(0..n - 1);
            ordered[..j].iter().map(|&(_, q)| q).sum::<f64>()
        } else {
            thresholds[case % thresholds.len()]
        };
        if !(p > 0.0 && p <= 1.0) {
            continue;
        }

        let mut cum = 0.0f64;
        let mut kept = None;
        for (i, &(_, q)) in ordered.iter().enumerate() {
            cum += q;
            if cum >= p {
                kept = Some(i + 1);
                break;
            }
        }
        let kept = kept.unwrap_or(ordered.len());
        let mass: f64 = ordered[..kept].iter().map(|&(_, q)| q).sum();
        let expect: Vec<(TokenId, f64)> = ordered[..kept]
            .iter()
            .map(|&(t, q)| (t, q / mass))
            .collect();

        let set = top_p_renormalize(&dist, p).expect("untruncated scan succeeds");
        if set.entries != expect || set.parent_mass != mass || set.threshold != p {
            mismatches += 1;
        }
    }
    assert_eq!(
        mismatches, 0,
        "{mismatches} of 1000 nuclei differ from the reference scan"
    );

    // A producer that withholds mass must fail once the request exceeds
    // what is visible, and succeed on what is.
    let truncated = NextTokenDistribution::new(
        vec![
            DistEntry {
                token: TokenId(0),
                logprob: 0.4f64.ln(),
            },
            DistEntry {
                token: TokenId(1),
                logprob: 0.2f64.ln(),
            },
        ],
        true,
        0,
    )
    .expect("truncated distribution");
    assert!(matches!(
        top_p_renormalize(&truncated, 0.95),
        Err(CoreError::InsufficientMass { .. })
    ));
    let ok = top_p_renormalize(&truncated, 0.5).expect("visible mass suffices");
    assert_eq!(ok.entries.len(), 2);

    println!(
        "criterion 2: PASS — 1000 nuclei identical to the reference scan \
         ({tie_cases} with exact ties, {boundary_cases} at exact cumulative boundaries), \
         truncated-support failure honored"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: the sampler always takes the highest-scoring candidate
// ---------------------------------------------------------------------------

/// Winner by the published selection order — maximal score, ties broken
/// toward higher probability, then toward the lower token id — written as
/// a fold independent of the production comparator.
fn reference_pick(candidates: &[CandidateScore]) -> usize {
    use std::cmp::Ordering;
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let (a, b) = (&candidates[i], &candidates[best]);
        let better = match a.value.partial_cmp(&b.value).expect("finite scores") {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match a.prob.partial_cmp(&b.prob).expect("finite probs") {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => a.token < b.token,
            },
        };
        if better {
            best = i;
        }
    }
    best
}

#[test]
fn criterion_03_selection_is_always_the_argmax() {
    let mut steps_checked = 0usize;
    let mut violations = 0usize;

    for run in cycle_runs(true).iter().chain(uniform_runs(true).iter()) {
        let slates = run
            .per_step_candidates
            .as_ref()
            .expect("audited runs keep their slates");
        assert_eq!(slates.len(), run.emitted.len(), "one slate per emitted token");
        for (rec, slate) in run.emitted.iter().zip(slates) {
            assert!(!slate.is_empty());
            let pick = &slate[reference_pick(slate)];
            if pick.token != rec.token || pick.value != rec.value {
                violations += 1;
            }
            steps_checked += 1;
        }
    }

    assert!(steps_checked >= 8000, "expected a large audited corpus");
    assert_eq!(
        violations, 0,
        "{violations} of {steps_checked} selections disagree with the reference argmax"
    );
    println!(
        "criterion 3: PASS — {steps_checked} audited selections all match the \
         reference argmax (score desc, prob desc, token asc)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: loops induced on the cycle model, none on the uniform chain
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_loop_induction_and_control() {
    let started = Instant::now();

    let looped = cycle_runs(false);
    let mut max_emitted = 0usize;
    for (i, r) in looped.iter().enumerate() {
        assert_eq!(
            r.outcome,
            RunOutcome::LoopDetected,
            "cycle run {i} ended with {:?}",
            r.outcome
        );
        let info = r.loop_info.as_ref().expect("loop evidence present");
        assert!(info.found);
        assert_eq!(info.period, 5, "cycle run {i} detected period {}", info.period);
        assert!(
            r.emitted.len() < 200,
            "cycle run {i} needed {} tokens",
            r.emitted.len()
        );
        // Ten fills plus exactly two passes around the five-step cycle.
        assert_eq!(r.emitted.len(), 20, "cycle run {i} token count");
        max_emitted = max_emitted.max(r.emitted.len());
    }

    let control = uniform_runs(false);
    let control_loops = control
        .iter()
        .filter(|r| r.loop_info.as_ref().is_some_and(|l| l.found))
        .count();
    for (i, r) in control.iter().enumerate() {
        assert_eq!(
            r.outcome,
            RunOutcome::BudgetExhausted,
            "control run {i} ended with {:?}",
            r.outcome
        );
        assert_eq!(r.emitted.len(), 64);
    }
    assert_eq!(control_loops, 0, "{control_loops} control runs looped");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "mock-model induction took {elapsed:?}, budget is 30 s"
    );
    println!(
        "criterion 4: PASS — 100/100 cycle-model runs loop within {max_emitted} tokens, \
         0/100 uniform-chain runs loop ({elapsed:?} elapsed)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: trend classification and regression exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_trend_classification_and_fit() {
    // Descending: a probe model whose branching factor grows with the
    // context, so each step's score shrinks no matter which token the
    // seeded draw picks.
    let backend = MockBackend::from_path(
        &fixtures_dir().join("models").join("probe_down.json"),
        256,
        1.0,
    )
    .expect("probe model loads");

    let mut descending = 0usize;
    for s in 0..100u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(500 + s);
        let mut ctx = TokenSequence::from(vec![198u32; 1 + (s as usize) % 3]);
        let mut records: Vec<RecursiveEntropyRecord> = Vec::with_capacity(30);
        for _ in 0..30 {
            let dist = backend.next_distribution(&ctx).expect("row exists");
            let e = sample_entry(&dist, &mut rng);
            let succ = backend
                .next_distribution(&ctx.with_token(e.token))
                .expect("successor row exists");
            let nucleus = top_p_renormalize(&succ, 0.99).expect("nucleus resolves");
            records.push(recursive_entropy(e.token, e.prob(), &nucleus, 1e-6, ctx.len()));
            ctx.push(e.token);
        }
        let analysis = analyze_trend(&records).expect("enough records");
        assert_eq!(
            analysis.classification,
            TrendClass::Descending,
            "probe trajectory {s} classified {:?} (slope {})",
            analysis.classification,
            analysis.slope
        );

        // Cross-check the fit with an independently written regression
        // over the same grouped points.
        let full: Vec<&[RecursiveEntropyRecord]> = records
            .chunks(10)
            .filter(|c| c.len() == 10)
            .collect();
        let xs: Vec<f64> = full
            .iter()
            .map(|c| {
                let mut pos: Vec<f64> = c.iter().map(|r| r.position as f64).collect();
                pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (pos[4] + pos[5]) / 2.0
            })
            .collect();
        let ys: Vec<f64> = full
            .iter()
            .map(|c| (c.iter().map(|r| r.value).sum::<f64>() / c.len() as f64).ln())
            .collect();
        let (slope, intercept, _) = ols_raw(&xs, &ys);
        assert!(
            (slope - analysis.slope).abs() <= 1e-9,
            "trajectory {s}: slope {} vs reference {slope}",
            analysis.slope
        );
        assert!(
            (intercept - analysis.intercept).abs() <= 1e-9,
            "trajectory {s}: intercept {} vs reference {intercept}",
            analysis.intercept
        );
        descending += 1;
    }
    assert_eq!(descending, 100);

    // Ascending: every cycle-model trajectory scores its loop pass far
    // above the fills that preceded it.
    let mut ascending = 0usize;
    for (i, r) in cycle_runs(false).iter().enumerate() {
        let analysis = analyze_trend(&r.emitted).expect("twenty records");
        assert_eq!(
            analysis.classification,
            TrendClass::Ascending,
            "cycle run {i} classified {:?} (slope {})",
            analysis.classification,
            analysis.slope
        );
        assert!(analysis.r_squared > 0.99);
        ascending += 1;
    }
    assert_eq!(ascending, 100);

    // Exact geometric series: value = exp(a + b * position) has a known
    // fitted line in closed form, because within-group offsets from the
    // median are identical for every group.
    for &(a, b) in &[(0.4, -0.05), (-1.2, 0.03)] {
        let records: Vec<RecursiveEntropyRecord> = (0..100usize)
            .map(|i| {
                let value = (a + b * i as f64).exp();
                RecursiveEntropyRecord {
                    token: TokenId(0),
                    prob: 0.5,
                    successor_entropy: 0.5 / value,
                    value,
                    position: i,
                }
            })
            .collect();
        let analysis = analyze_trend(&records).expect("ten full groups");
        let group_mean_log = (0..10).map(|k| (b * k as f64).exp()).sum::<f64>() / 10.0;
        let expect_intercept = a + group_mean_log.ln() - 4.5 * b;
        assert!(
            (analysis.slope - b).abs() <= 1e-9,
            "slope {} differs from {b}",
            analysis.slope
        );
        assert!(
            (analysis.intercept - expect_intercept).abs() <= 1e-9,
            "intercept {} differs from {expect_intercept}",
            analysis.intercept
        );
        assert!((analysis.r_squared - 1.0).abs() <= 1e-9);
        let expected_class = if b < 0.0 {
            TrendClass::Descending
        } else {
            TrendClass::Ascending
        };
        assert_eq!(analysis.classification, expected_class);
    }

    println!(
        "criterion 5: PASS — 100/100 probe trajectories descending, 100/100 \
         cycle trajectories ascending, fits match closed form and an \
         independent regression within 1e-9"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: answer-mention detection on a worked trace and a corpus
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_answer_mention_detection() {
    let q = BasicQuestion {
        stem: "How many small bags can the packer fill?".into(),
        answer: "90".into(),
        options: None,
    };

    // A worked trace in the style the detector is built for: the answer
    // appears standalone in three later steps, while an early "900" must
    // not count as a mention of 90.
    let steps = [
        "Okay, the packer has three large bags, each ten ounces, and wants ten pieces per small bag.",
        "Total weight: 3 times 10 ounces is 30 ounces.",
        "Each ounce holds 30 pieces, so 30 times 30 gives 900 pieces.",
        "900 divided by 10 per small bag suggests he can fill 90 small bags.",
        "Wait, the prompt insists on 63, so recheck: 900 over 10 is still 90.",
        "Per-bag weight says each large bag yields 30 small ones, and 3 of them give 90.",
        "Alternatively, maybe the phrasing hides a different split.",
    ];
    let expected_hits = [false, false, false, true, true, true, false];
    for (i, (step, want)) in steps.iter().zip(expected_hits).enumerate() {
        assert_eq!(
            fact_hit(step, &q),
            want,
            "step {i} misclassified: {step:?}"
        );
    }
    let trace = segment(&steps.join("\n\n"));
    let report = over_reflection(&trace, &q);
    assert!(report.flagged, "three standalone mentions must flag the trace");
    assert_eq!(report.hit_indices, vec![3, 4, 5]);
    assert_eq!(report.o, Some(5), "anchor is the third hit");

    // Two mentions must not flag.
    let short = segment("The total is 90.\n\nStill 90.\n\nMoving on.");
    let r = over_reflection(&short, &q);
    assert!(!r.flagged && r.o.is_none());

    // Generated corpus: templated steps whose ground truth follows from
    // the documented boundary rules (digit fusion, decimal and sign
    // attachment, word boundaries, case folding).
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let mut cases = 0usize;
    let mut wrong = 0usize;

    let int_answers = ["90", "7", "120", "48"];
    let pos_int = [
        "the running total comes to {} exactly.",
        "final check: {} once more.",
        "so we are back at {} again.",
        "it still reads {} after the recount.",
        "({}) keeps coming up in the margin.",
    ];
    let neg_int = [
        "the reading is 9{} now.",
        "it reads {}.25 by the gauge.",
        "lot id{} is already assigned.",
        "nothing numeric shows up in this step at all.",
        "the other column lists {}7 instead.",
    ];
    let dec_answers = ["2.5", "0.25"];
    let pos_dec = [
        "the dial shows {} precisely.",
        "calibration returns {} again.",
        "{}0 on the meter matches.",
    ];
    let neg_dec = [
        "the dial shows {}5 instead.",
        "a reading of 1{} appears.",
        "no digits at all in this remark.",
    ];
    let txt_answers = ["ochre", "quartz", "oakum"];
    let pos_txt = [
        "clearly {} fits every clue.",
        "the swatch is {}, full stop.",
        "I keep coming back to {} here.",
    ];
    let neg_txt = [
        "{}ite is a different material entirely.",
        "the adjacent swatch is teal, not rust.",
        "no candidate label is repeated here.",
    ];
    let neg_answer = "-4";
    let pos_neg = [
        "the balance settles at {} overall.",
        "net change: {} once more.",
        "we land on {} after refunds.",
    ];
    let neg_neg = [
        "a loss of 4 points was logged.",
        "the delta reads {}7 now.",
        "no numerals appear in this note.",
    ];

    let mut check = |answer: &str, template: &str, expect: bool, upper: bool| {
        let mut text = template.replace("{}", answer);
        if upper {
            text = text.to_uppercase();
        }
        let question = BasicQuestion {
            stem: "irrelevant".into(),
            answer: answer.into(),
            options: None,
        };
        if fact_hit(&text, &question) != expect {
            eprintln!("misclassified ({expect} expected): answer {answer:?}, step {text:?}");
            wrong += 1;
        }
        cases += 1;
    };

    for i in 0..150usize {
        let upper = i % 9 == 0;
        let a = int_answers[rng.random_range(0..int_answers.len())];
        check(a, pos_int[rng.random_range(0..pos_int.len())], true, false);
        check(a, neg_int[rng.random_range(0..neg_int.len())], false, false);
        let d = dec_answers[rng.random_range(0..dec_answers.len())];
        check(d, pos_dec[rng.random_range(0..pos_dec.len())], true, false);
        check(d, neg_dec[rng.random_range(0..neg_dec.len())], false, false);
        let t = txt_answers[rng.random_range(0..txt_answers.len())];
        check(t, pos_txt[rng.random_range(0..pos_txt.len())], true, upper);
        check(t, neg_txt[rng.random_range(0..neg_txt.len())], false, false);
        check(neg_answer, pos_neg[rng.random_range(0..pos_neg.len())], true, false);
        check(neg_answer, neg_neg[rng.random_range(0..neg_neg.len())], false, false);
    }

    assert!(cases >= 500, "corpus too small: {cases}");
    assert_eq!(wrong, 0, "{wrong} of {cases} corpus steps misclassified");
    println!(
        "criterion 6: PASS — worked trace flags at the third mention with the \
         embedded 900 ignored; {cases} generated boundary cases, 0 misclassified"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: trimming keeps the prefix intact and compresses the middle
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_trim_fidelity_and_compression() {
    let q = BasicQuestion {
        stem: "How many crates arrived?".into(),
        answer: "90".into(),
        options: None,
    };
    let loop_templates = [
        "Alternatively, the running sum keeps coming back to the same ninety mark.",
        "Therefore the recount refuses to move anywhere new.",
        "Wait, the very same figure surfaces on the next pass.",
    ];
    let counter = TokenCounter::WhitespaceWords;
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    let mut ratios = Vec::with_capacity(50);

    for case in 0..50usize {
        let mut steps: Vec<String> = vec![
            "First pass puts the shipment at 90 crates.".into(),
            "Cross-checking the ledger lands on 90 once more.".into(),
            "So the recount still says 90 in the end.".into(),
        ];
        let fills = 8 + rng.random_range(0..11usize);
        for i in 0..fills {
            let opener = if i == 0 { "Alternatively," } else { "Next," };
            steps.push(format!(
                "{opener} audit row {} of the intake sheet before trusting it.",
                ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                 "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
                 "seventeen", "eighteen"][i]
            ));
        }
        let period = 1 + rng.random_range(0..3usize);
        let repeats = 2 + rng.random_range(0..3usize);
        let rot = rng.random_range(0..period);
        let block: Vec<&str> = (0..period)
            .map(|j| loop_templates[(j + rot) % period])
            .collect();
        for _ in 0..repeats {
            for s in &block {
                steps.push((*s).to_string());
            }
        }

        let full = steps.join("\n\n");
        let trace = segment(&full);
        assert_eq!(trace.steps.len(), steps.len());
        let report = over_reflection(&trace, &q);
        assert!(report.flagged && report.o == Some(2), "case {case} anchor");
        let info = detect_loop(&trace, 8, 2);
        assert!(info.found, "case {case} loop not detected");
        assert_eq!(info.period, period, "case {case} period");
        assert_eq!(info.loop_start, 3 + fills, "case {case} loop start");

        let run = GuidedRun {
            seed_context: TokenSequence::from(vec![0u32]),
            reasoning_prefix: String::new(),
            generated_text: full.clone(),
            emitted: Vec::new(),
            outcome: RunOutcome::LoopDetected,
            final_trace: trace,
            loop_info: Some(info.clone()),
            per_step_candidates: None,
        };

        // Reference splice: first step at or after the loop start whose
        // first word equals the word opening the post-anchor step.
        let region_start = info.loop_start.max(3);
        let m = steps.len() - 1;
        let matches: Vec<usize> = (region_start..=m)
            .filter(|&i| steps[i].split_whitespace().next() == Some("Alternatively,"))
            .collect();
        let expect_asc = matches.first().copied().unwrap_or(region_start);
        let expect_end = matches.last().copied().unwrap_or(region_start);

        let prompt = trim(&run, &report, &info, &format!("case-{case}"), ScanOrder::Ascending, &counter)
            .expect("trim succeeds");
        assert_eq!(prompt.o, 2);
        assert_eq!(prompt.m, m);
        assert_eq!(prompt.s, expect_asc, "case {case} ascending splice");
        assert_eq!(prompt.direction_token, "Alternatively,");

        let expected_text = steps[..=2]
            .iter()
            .chain(&steps[expect_asc..])
            .cloned()
            .collect::<Vec<_>>()
            .join("\n\n");
        assert_eq!(prompt.text, expected_text, "case {case} prompt bytes");
        assert_eq!(prompt.input_tokens, expected_text.split_whitespace().count());

        let from_end = trim(&run, &report, &info, &format!("case-{case}"), ScanOrder::FromEnd, &counter)
            .expect("trim succeeds");
        assert_eq!(from_end.s, expect_end, "case {case} from-end splice");
        assert!(from_end.s >= prompt.s);

        let ratio = compression_ratio(&prompt, &run, &counter).expect("countable");
        assert!(ratio < 1.0, "case {case} did not compress: {ratio}");
        assert!(
            (ratio - prompt.input_tokens as f64 / full.split_whitespace().count() as f64).abs()
                < 1e-12
        );
        ratios.push(ratio);
    }

    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(
        mean < 0.6,
        "mean length ratio {mean:.3} across 50 cases, expected below 0.6"
    );
    println!(
        "criterion 7: PASS — 50 synthetic loops trimmed with byte-exact prefixes, \
         splice indices matching the reference scan in both orders, mean length \
         ratio {mean:.3}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: replayed prompts pin the decoder while originals terminate
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_replay_amplification_end_to_end() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = fixtures_dir().join("rentropy.toml");
    let questions = fixtures_dir().join("suite100_questions.jsonl");

    run_cli(
        tmp.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "attack",
            "--questions",
            questions.to_str().unwrap(),
        ],
    );
    run_cli(
        tmp.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "replay",
            "--max-tokens",
            "400",
        ],
    );

    let rows = read_jsonl(&tmp.path().join("out").join("replays.jsonl"));
    let attack: Vec<&serde_json::Value> = rows
        .iter()
        .filter(|r| r["condition"] == "attack")
        .collect();
    let baseline: Vec<&serde_json::Value> = rows
        .iter()
        .filter(|r| r["condition"] == "baseline")
        .collect();
    assert_eq!(attack.len(), 100, "one replay per question");
    assert_eq!(baseline.len(), 100, "one baseline per question");

    let pinned = attack
        .iter()
        .filter(|r| {
            r["reasoning_tokens"] == 400
                && r["finish_reason"] == "length"
                && r["loop_info"]["found"] == true
        })
        .count();
    assert!(
        pinned >= 90,
        "only {pinned}/100 replays hit the 400-token cap inside a loop"
    );

    for r in &baseline {
        assert_eq!(
            r["loop_info"]["found"], false,
            "baseline {} looped",
            r["prompt_id"]
        );
        assert_eq!(r["finish_reason"], "eot", "baseline {}", r["prompt_id"]);
        let tokens = r["reasoning_tokens"].as_u64().unwrap();
        assert!(tokens < 400, "baseline {} ran to the cap", r["prompt_id"]);
    }

    let summary = read_json(&tmp.path().join("out").join("replay_summary.json"));
    assert_eq!(summary["attack"]["loop_rate"], 1.0);
    assert_eq!(summary["baseline"]["loop_rate"], 0.0);

    println!(
        "criterion 8: PASS — {pinned}/100 replays pinned at the 400-token cap \
         inside a detected loop; 100/100 baselines finish naturally with no loop"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: capacity impact of runaway requests
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_capacity_bench_ratios() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = fixtures_dir().join("rentropy.toml");
    run_cli(
        tmp.path(),
        &["--config", cfg.to_str().unwrap(), "bench", "--control"],
    );

    let report = read_json(&tmp.path().join("out").join("bench_report.json"));

    // The token budget admits 20 short requests or 2 runaway ones.
    assert_eq!(report["baseline"]["concurrency"], 20);
    assert_eq!(report["attack"]["concurrency"], 2);

    let drop = report["tp_drop_pct"].as_f64().unwrap();
    let ltc = report["ltc_multiplier"].as_f64().unwrap();
    let rq = report["rq_multiplier"].as_f64().unwrap();
    assert!(
        (drop - 90.0).abs() <= 9.0,
        "throughput drop {drop:.2}% outside 90% ± 10%"
    );
    assert!(
        (ltc - 10.0).abs() <= 1.0,
        "latency multiplier {ltc:.3} outside 10x ± 10%"
    );
    assert!(
        (rq - 0.01).abs() <= 0.001,
        "request-rate multiplier {rq:.5} outside 0.01x ± 10%"
    );

    let control = &report["control"];
    for key in ["tp_delta_pct", "ltc_delta_pct", "rq_delta_pct"] {
        let delta = control[key].as_f64().unwrap();
        assert!(
            delta.abs() <= 2.0,
            "control {key} = {delta:.3}% exceeds the 2% repeatability band"
        );
    }

    println!(
        "criterion 9: PASS — throughput drop {drop:.1}%, latency x{ltc:.2}, \
         request rate x{rq:.4}, control deltas within 2%"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: the whole pipeline is byte-deterministic
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_pipeline_determinism() {
    let cfg = fixtures_dir().join("rentropy.toml");
    let probe_cfg = fixtures_dir().join("probe_down.toml");
    let questions = fixtures_dir().join("questions.jsonl");

    // Every computational stage once, in a fresh working directory. The
    // capacity bench is deliberately absent: its report records measured
    // wall-clock latencies, which are not byte-stable between runs.
    let execute = || -> BTreeMap<String, String> {
        let tmp = tempfile::tempdir().expect("tempdir");
        let c = cfg.to_str().unwrap();
        run_cli(
            tmp.path(),
            &["--config", c, "counterfactual", "--questions", questions.to_str().unwrap()],
        );
        run_cli(tmp.path(), &["--config", c, "attack", "--audit"]);
        run_cli(tmp.path(), &["--config", c, "trim"]);
        run_cli(tmp.path(), &["--config", c, "replay"]);
        run_cli(tmp.path(), &["--config", probe_cfg.to_str().unwrap(), "probe"]);
        run_cli(
            tmp.path(),
            &[
                "--config",
                c,
                "analyze",
                "--records",
                "out-probe-down/probe_records.jsonl",
                "--kind",
                "probe",
                "--prefix",
                "reanalysis",
            ],
        );

        let mut hashes = BTreeMap::new();
        for (label, dir) in [("out", "out"), ("probe", "out-probe-down")] {
            for (rel, digest) in hash_tree(&tmp.path().join(dir)) {
                hashes.insert(format!("{label}/{rel}"), digest);
            }
        }
        hashes
    };

    let first = execute();
    let second = execute();

    assert!(
        first.len() >= 15,
        "expected the full artifact set, found {:?}",
        first.keys().collect::<Vec<_>>()
    );
    for (name, digest) in &first {
        let other = second
            .get(name)
            .unwrap_or_else(|| panic!("{name} missing from the second execution"));
        assert_eq!(digest, other, "{name} differs between identical executions");
    }
    assert_eq!(first.len(), second.len(), "artifact sets differ");

    println!(
        "criterion 10: PASS — {} artifacts byte-identical across two executions \
         (capacity bench excluded: it reports measured wall-clock latencies)",
        first.len()
    );
}
