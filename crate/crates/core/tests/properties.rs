//! Property tests. Each checked operation is paired with a plain
//! re-implementation of its definition, so regressions in the optimized
//! paths cannot hide.

use proptest::prelude::*;
use rentropy_core::counterfactual::{canonicalize, synthesize_incorrect, BasicQuestion};
use rentropy_core::dist::{
    clamped_entropy, softmax, top_p_renormalize, DistEntry, NextTokenDistribution, TokenId,
};
use rentropy_core::trace::{detect_loop, normalize_step, segment, LoopDetection};
use rentropy_core::trend::{analyze_trend, GROUP_SIZE};

fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-12.0f64..12.0, 1..=64)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in logits_strategy()) {
        let d = softmax(&logits, 0).unwrap();
        let mass: f64 = d.entries().iter().map(|e| e.prob()).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-6);
        prop_assert!(!d.truncated());
        for w in d.entries().windows(2) {
            prop_assert!(
                w[0].logprob > w[1].logprob
                    || (w[0].logprob == w[1].logprob && w[0].token < w[1].token)
            );
        }
    }

    #[test]
    fn softmax_shift_invariance(logits in logits_strategy(), shift in -50.0f64..50.0) {
        let a = softmax(&logits, 0).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let b = softmax(&shifted, 0).unwrap();
        for (ea, eb) in a.entries().iter().zip(b.entries()) {
            prop_assert_eq!(ea.token, eb.token);
            prop_assert!((ea.logprob - eb.logprob).abs() < 1e-9);
        }
    }

    #[test]
    fn top_p_matches_prefix_scan_oracle(
        logits in logits_strategy(),
        p in 0.01f64..=1.0,
    ) {
        let d = softmax(&logits, 0).unwrap();
        let set = top_p_renormalize(&d, p).unwrap();

        // Oracle: walk prefixes directly over the canonical entries.
        let probs: Vec<f64> = d.entries().iter().map(|e| e.prob()).collect();
        let mut expected_kept = probs.len();
        let mut cum = 0.0;
        for (i, q) in probs.iter().enumerate() {
            cum += q;
            if cum >= p {
                expected_kept = i + 1;
                break;
            }
        }

        prop_assert_eq!(set.entries.len(), expected_kept);
        let sum: f64 = set.entries.iter().map(|&(_, q)| q).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "renormalized sum {}", sum);

        // Minimality: one entry fewer must fall short of the threshold.
        if expected_kept > 1 {
            let shorter: f64 = probs[..expected_kept - 1].iter().sum();
            if expected_kept <= probs.len() && shorter >= p {
                prop_assert!(false, "prefix was not minimal");
            }
        }
        // Kept ids are exactly the first entries in canonical order.
        for (i, &(t, _)) in set.entries.iter().enumerate() {
            prop_assert_eq!(t, d.entries()[i].token);
        }
    }

    #[test]
    fn entropy_bounds(logits in logits_strategy(), p in 0.5f64..=1.0) {
        let d = softmax(&logits, 0).unwrap();
        let set = top_p_renormalize(&d, p).unwrap();
        let h = clamped_entropy(&set, 1e-6);
        let n = set.entries.len() as f64;
        prop_assert!(h >= 1e-6);
        prop_assert!(h <= n.ln().max(1e-6) + 1e-9, "h {} over ln {}", h, n);
    }

    #[test]
    fn truncated_distributions_never_overcount(
        logits in logits_strategy(),
        keep in 1usize..=8,
        p in 0.01f64..=1.0,
    ) {
        // Build a truncated view by dropping the tail of a full softmax.
        let full = softmax(&logits, 0).unwrap();
        let kept: Vec<DistEntry> = full.entries().iter().take(keep).copied().collect();
        let visible: f64 = kept.iter().map(|e| e.prob()).sum();
        let d = NextTokenDistribution::new(kept, true, 0).unwrap();
        match top_p_renormalize(&d, p) {
            Ok(set) => {
                let sum: f64 = set.entries.iter().map(|&(_, q)| q).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(set.parent_mass >= p - 1e-15);
            }
            Err(rentropy_core::CoreError::InsufficientMass { available, requested }) => {
                prop_assert!(visible < p, "refused although visible mass {visible} >= {p}");
                prop_assert!((available - visible).abs() < 1e-12);
                prop_assert_eq!(requested, p);
            }
            Err(e) => prop_assert!(false, "unexpected error {:?}", e),
        }
    }
}

fn step_text_strategy() -> impl Strategy<Value = String> {
    // Step bodies never contain a blank line; single newlines are allowed.
    "[a-z0-9 .,]{1,12}(\n[a-z0-9 .,]{1,12})?"
        .prop_filter("step must hold a visible character", |s| {
            !s.trim().is_empty() && !s.contains("\n\n")
        })
}

proptest! {
    #[test]
    fn segmentation_inverts_joining(
        steps in prop::collection::vec(step_text_strategy(), 1..10),
        seps in prop::collection::vec(2usize..5, 0..10),
    ) {
        // Join with newline runs of varying width; all widths >= 2 must
        // segment identically.
        let mut text = String::new();
        for (i, s) in steps.iter().enumerate() {
            if i > 0 {
                let w = seps.get(i - 1).copied().unwrap_or(2);
                text.push_str(&"\n".repeat(w));
            }
            text.push_str(s);
        }
        let t = segment(&text);
        let got: Vec<&str> = t.steps.iter().map(|s| s.text.as_str()).collect();
        let want: Vec<&str> = steps.iter().map(|s| s.as_str()).collect();
        prop_assert_eq!(got, want);
        // Spans index back into the original text.
        for s in &t.steps {
            prop_assert_eq!(&t.full_text[s.span.0..s.span.1], s.text.as_str());
        }
    }

    #[test]
    fn loop_detection_matches_brute_force(
        base in prop::collection::vec(0u8..4, 0..24),
        max_period in 1usize..=8,
    ) {
        // Small alphabets make accidental periodicity common, which is
        // exactly what the oracle comparison needs.
        let texts: Vec<String> = base.iter().map(|b| format!("s{b}")).collect();
        let joined = texts.join("\n\n");
        let trace = segment(&joined);
        let got = detect_loop(&trace, max_period, 2);

        let norm: Vec<String> = trace.steps.iter().map(|s| normalize_step(&s.text)).collect();
        let expected = brute_force_loop(&norm, max_period, 2);
        prop_assert_eq!(got.found, expected.found);
        if got.found {
            prop_assert_eq!(got.period, expected.period);
            prop_assert_eq!(got.loop_start, expected.loop_start);
        }
    }

    #[test]
    fn canonicalize_is_idempotent(s in "[-+]?[0-9]{0,6}(\\.[0-9]{0,4})?|[A-Za-z ]{0,10}") {
        let once = canonicalize(&s);
        let twice = canonicalize(once.as_str());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn perturbations_stay_in_band(answer in 1i64..100_000, n in 1usize..=6, seed in 0u64..1000) {
        let q = BasicQuestion {
            stem: "how many?".into(),
            answer: answer.to_string(),
            options: None,
        };
        let set = synthesize_incorrect(&q, n, seed).unwrap();
        prop_assert_eq!(set.values.len(), n);
        let a = answer as f64;
        let mut seen = std::collections::HashSet::new();
        for v in &set.values {
            prop_assert!(seen.insert(v.clone()), "duplicate {}", v);
            prop_assert_ne!(v.as_str(), q.answer.as_str());
            let x: f64 = v.parse().unwrap();
            // Half a unit of slack for the rounding back to integer.
            prop_assert!(x >= 0.5 * a - 0.5 && x <= 1.5 * a + 0.5, "{} out of band", x);
        }
    }

    #[test]
    fn trend_fit_matches_normal_equations(
        rates in prop::collection::vec(0.2f64..3.0, 2 * GROUP_SIZE..=6 * GROUP_SIZE),
    ) {
        let records: Vec<_> = rates
            .iter()
            .enumerate()
            .map(|(i, &v)| rentropy_core::dist::RecursiveEntropyRecord {
                token: TokenId(0),
                prob: 0.5,
                successor_entropy: 0.5 / v,
                value: v,
                position: i,
            })
            .collect();
        let t = analyze_trend(&records).unwrap();

        // Normal-equation oracle over the same full-group points.
        let pts: Vec<(f64, f64)> = t
            .groups
            .iter()
            .filter(|g| g.count == GROUP_SIZE)
            .map(|g| (g.median_token_index, g.mean_re.ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = sy / n - slope * sx / n;
        prop_assert!((t.slope - slope).abs() < 1e-9, "slope {} vs {}", t.slope, slope);
        prop_assert!((t.intercept - intercept).abs() < 1e-9);
    }
}

/// Direct transcription of the loop definition: for each period, test
/// every possible start for full periodicity to the end of the trace.
fn brute_force_loop(norm: &[String], max_period: usize, min_repeats: usize) -> LoopDetection {
    let n = norm.len();
    for p in 1..=max_period {
        let mut best_start = None;
        for start in (0..n).rev() {
            let ok = (start..n.saturating_sub(p)).all(|i| norm[i] == norm[i + p]);
            if ok && (n - start) / p >= min_repeats {
                best_start = Some(start);
            }
        }
        if let Some(s) = best_start {
            return LoopDetection {
                found: true,
                period: p,
                loop_start: s,
                evidence: (s..n - p).map(|i| (i, i + p)).collect(),
            };
        }
    }
    LoopDetection::none()
}
