use proptest::prelude::*;
use rctkg_core::special::{beta_pdf, regularized_incomplete_beta};
use rctkg_core::{ArmPosterior, SubgroupPosterior};

fn arm(stat: u32, extra: u32) -> ArmPosterior {
    ArmPosterior::new(stat as f64, (stat + extra) as f64).unwrap()
}

fn arm_strategy(max: u32) -> impl Strategy<Value = ArmPosterior> {
    (0..=max, 0..=max).prop_map(|(w, f)| arm(w, f))
}

proptest! {
    #[test]
    fn updates_are_additive(start in arm_strategy(50), w1 in 0u32..30, f1 in 0u32..30, w2 in 0u32..30, f2 in 0u32..30) {
        let once = start.update((w1 + w2) as f64, (w1 + f1 + w2 + f2) as f64).unwrap();
        let twice = start
            .update(w1 as f64, (w1 + f1) as f64).unwrap()
            .update(w2 as f64, (w2 + f2) as f64).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn update_matches_beta_conjugacy(w in 0u32..200, f in 0u32..200) {
        let p = ArmPosterior::JEFFREYS.update(w as f64, (w + f) as f64).unwrap();
        let (a, b) = p.beta_params();
        prop_assert_eq!(a, w as f64 + 0.5);
        prop_assert_eq!(b, f as f64 + 0.5);
    }

    #[test]
    fn swapping_arms_complements(c in arm_strategy(400), t in arm_strategy(400)) {
        let sp = SubgroupPosterior::new(c, t);
        let p = sp.prob_effective(0.0).unwrap();
        let q = sp.swapped().prob_effective(0.0).unwrap();
        prop_assert!((p + q - 1.0).abs() < 2e-9, "{} + {}", p, q);
    }

    #[test]
    fn series_agrees_with_quadrature(c in arm_strategy(3000), t in arm_strategy(3000)) {
        let sp = SubgroupPosterior::new(c, t);
        let p = sp.prob_effective(0.0).unwrap();
        let q = sp.prob_effective_quadrature(0.0).unwrap();
        prop_assert!((p - q).abs() < 1e-8, "{:?}: {} vs {}", sp, p, q);
    }

    #[test]
    fn threshold_is_monotone(c in arm_strategy(100), t in arm_strategy(100), tau in 0.0f64..1.0) {
        let sp = SubgroupPosterior::new(c, t);
        let lo = sp.prob_effective(tau).unwrap();
        let hi = sp.prob_effective(tau + 0.25).unwrap();
        prop_assert!(hi <= lo + 1e-8);
    }

    #[test]
    fn incomplete_beta_reflection(a in 0.05f64..300.0, b in 0.05f64..300.0, x in 0.0f64..=1.0) {
        let lhs = regularized_incomplete_beta(a, b, x).unwrap();
        let rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12, "I_{}({}, {})", x, a, b);
    }

    #[test]
    fn incomplete_beta_is_monotone(a in 0.1f64..100.0, b in 0.1f64..100.0, x in 0.0f64..0.99) {
        let lo = regularized_incomplete_beta(a, b, x).unwrap();
        let hi = regularized_incomplete_beta(a, b, x + 0.01).unwrap();
        prop_assert!(hi >= lo - 1e-14);
    }
}

#[test]
fn beta_binomial_normalizes() {
    for (w, f) in [(0, 0), (3, 1), (10, 40), (250, 249)] {
        let p = arm(w, f);
        for n in 0..=100u64 {
            let total: f64 = (0..=n).map(|k| p.beta_binomial_pmf(n, k).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10, "n={n} state={p:?}: {total}");
        }
    }
}

#[test]
fn beta_binomial_mean() {
    let p = arm(7, 12);
    let n = 30u64;
    let mean: f64 = (0..=n).map(|k| k as f64 * p.beta_binomial_pmf(n, k).unwrap()).sum();
    assert!((mean - n as f64 * p.posterior_mean()).abs() < 1e-9);
}

#[test]
fn prob_effective_matches_monte_carlo() {
    // 100 posterior pairs, three thresholds, 3-sigma agreement each.
    let taus = [0.0, 0.1, 0.33];
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let c = arm((i * 7 % 61) as u32, (i * 13 % 47) as u32);
        let t = arm((i * 11 % 53) as u32, (i * 5 % 41) as u32);
        let sp = SubgroupPosterior::new(c, t);
        let tau = taus[(i % 3) as usize];
        let exact = sp.prob_effective(tau).unwrap();
        let mc = sp.mc_prob_effective(tau, 200_000, 1000 + i).unwrap();
        let sigma = mc.std_error.max(1e-4);
        let z = (exact - mc.mean).abs() / sigma;
        worst = worst.max(z);
        assert!(z < 3.0, "pair {i} tau={tau}: exact {exact} mc {} ± {}", mc.mean, mc.std_error);
    }
    println!("worst |z| = {worst:.2}");
}

#[test]
fn posterior_concentrates_on_truth() {
    let p = ArmPosterior::JEFFREYS.update(3_000.0, 10_000.0).unwrap();
    assert!((p.posterior_mean() - 0.3).abs() < 1e-3);
    assert!(p.posterior_variance() < 3e-5);
    let sp = SubgroupPosterior::new(ArmPosterior::JEFFREYS.update(5_000.0, 10_000.0).unwrap(), p);
    assert!(sp.prob_effective(0.0).unwrap() < 1e-12);
    assert!(sp.swapped().prob_effective(0.0).unwrap() > 1.0 - 1e-12);
}

#[test]
fn tail_probabilities_stay_accurate() {
    // Far-separated arms where the first series term underflows.
    let sp = SubgroupPosterior::new(arm(7065, 6824), arm(6545, 2050));
    let p = sp.prob_effective(0.0).unwrap();
    let q = sp.prob_effective_quadrature(0.0).unwrap();
    assert!((p - q).abs() < 1e-9 && p > 0.999_999, "{p} vs {q}");
}

#[test]
fn density_integrates_against_cdf() {
    // I_x(a, b) equals the integral of the density up to x.
    let (a, b, x) = (3.5, 7.5, 0.4);
    let n = 100_000;
    let h = x / n as f64;
    let integral: f64 = (0..n).map(|i| beta_pdf(a, b, (i as f64 + 0.5) * h) * h).sum();
    assert!((integral - regularized_incomplete_beta(a, b, x).unwrap()).abs() < 1e-8);
}
