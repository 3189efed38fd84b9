//! Cross-checks the f64 entropy pipeline against a 256-bit
//! extended-precision evaluation of the same definitions.

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rentropy_core::dist::{
    clamped_entropy, recursive_entropy, softmax, top_p_renormalize, TokenId,
};

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn to_f64(x: &BigFloat) -> f64 {
    format!("{x}").parse::<f64>().expect("decimal round-trip")
}

/// Entropy of the kept parent probabilities after renormalization, done
/// entirely in extended precision: q_i = p_i / sum(p), H = -sum q ln q.
fn entropy_oracle(parent_probs: &[f64], floor: f64) -> f64 {
    let mut cc = Consts::new().unwrap();
    let mut mass = BigFloat::from_f64(0.0, PREC);
    for &p in parent_probs {
        mass = mass.add(&BigFloat::from_f64(p, PREC), PREC, RM);
    }
    let mut acc = BigFloat::from_f64(0.0, PREC);
    for &p in parent_probs {
        if p <= 0.0 {
            continue;
        }
        let q = BigFloat::from_f64(p, PREC).div(&mass, PREC, RM);
        let l = q.ln(PREC, RM, &mut cc);
        acc = acc.add(&q.mul(&l, PREC, RM), PREC, RM);
    }
    let h = to_f64(&acc.neg());
    h.max(floor)
}

fn random_dist(rng: &mut ChaCha20Rng) -> (rentropy_core::dist::NextTokenDistribution, Vec<f64>) {
    let n = rng.random_range(1..=64usize);
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
    let d = softmax(&logits, 0).unwrap();
    let probs: Vec<f64> = d.entries().iter().map(|e| e.prob()).collect();
    (d, probs)
}

#[test]
fn clamped_entropy_matches_extended_precision() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_0001);
    let floor = 1e-6;
    for case in 0..200 {
        let (d, _) = random_dist(&mut rng);
        let p: f64 = rng.random_range(0.5..=1.0);
        let set = top_p_renormalize(&d, p).unwrap();
        let kept_parent: Vec<f64> = d.entries()[..set.entries.len()]
            .iter()
            .map(|e| e.prob())
            .collect();
        let expected = entropy_oracle(&kept_parent, floor);
        let got = clamped_entropy(&set, floor);
        assert!(
            (got - expected).abs() < 1e-9,
            "case {case}: got {got}, oracle {expected}"
        );
    }
}

#[test]
fn recursive_entropy_matches_extended_precision() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_0002);
    let floor = 1e-6;
    for case in 0..200 {
        let (d, _) = random_dist(&mut rng);
        let set = top_p_renormalize(&d, 0.99).unwrap();
        let kept_parent: Vec<f64> = d.entries()[..set.entries.len()]
            .iter()
            .map(|e| e.prob())
            .collect();
        let prob: f64 = rng.random_range(0.01..=1.0);
        let rec = recursive_entropy(TokenId(3), prob, &set, floor, case);
        let h = entropy_oracle(&kept_parent, floor);
        let expected = prob / h;
        let rel = ((rec.value - expected) / expected).abs();
        assert!(
            rel < 1e-9,
            "case {case}: got {}, oracle {expected}",
            rec.value
        );
    }
}

#[test]
fn near_one_hot_distributions_clamp_identically() {
    // Sharp distributions drive the raw entropy under the floor; both
    // sides must clamp rather than disagree in the tail.
    let floor = 1e-6;
    for sharp in [30.0, 60.0, 200.0] {
        let logits = vec![sharp, 0.0, 0.0];
        let d = softmax(&logits, 0).unwrap();
        let set = top_p_renormalize(&d, 0.999999).unwrap();
        let kept_parent: Vec<f64> = d.entries()[..set.entries.len()]
            .iter()
            .map(|e| e.prob())
            .collect();
        let got = clamped_entropy(&set, floor);
        let expected = entropy_oracle(&kept_parent, floor);
        assert!(
            (got - expected).abs() < 1e-9,
            "sharp {sharp}: got {got}, oracle {expected}"
        );
    }
}

#[test]
fn uniform_entropy_equals_ln_n() {
    for n in [2usize, 4, 7, 16, 33, 64] {
        let logits = vec![0.0; n];
        let d = softmax(&logits, 0).unwrap();
        let set = top_p_renormalize(&d, 1.0).unwrap();
        let h = clamped_entropy(&set, 1e-6);
        assert!(
            (h - (n as f64).ln()).abs() < 1e-12,
            "uniform {n}: {h} vs {}",
            (n as f64).ln()
        );
    }
}
