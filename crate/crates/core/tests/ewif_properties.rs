//! Closed-form walltime factors against independent oracles.

use approx::assert_relative_eq;
use proptest::prelude::*;
use speccascade_core::ewif::*;

/// Expected tokens per cycle of plain speculative decoding by summing the
/// accepted-prefix distribution term by term.
fn sd_by_summation(alpha: f64, cost: f64, k: u32) -> f64 {
    let mut expected = 0.0;
    for j in 0..=k {
        // Exactly j accepted then a rejection, or all k accepted.
        let p = if j < k { alpha.powi(j as i32) * (1.0 - alpha) } else { alpha.powi(k as i32) };
        expected += p * (j as f64 + 1.0);
    }
    expected / (cost * k as f64 + 1.0)
}

/// Horizontal cascade by enumerating where the first rejection falls.
fn hc_by_summation(a1: f64, a2: f64, c1: f64, c2: f64, k1: u32, k2: u32) -> f64 {
    let mut expected = 0.0;
    for j in 0..=(k1 + k2) {
        let accept_prefix: f64 = (0..j).map(|i| if i < k1 { a1 } else { a2 }).product();
        let p = if j < k1 + k2 {
            let next = if j < k1 { a1 } else { a2 };
            accept_prefix * (1.0 - next)
        } else {
            accept_prefix
        };
        expected += p * (j as f64 + 1.0);
    }
    expected / (1.0 + k1 as f64 * c1 + k2 as f64 * c2)
}

#[test]
fn golden_values() {
    assert_relative_eq!(ewif_sd(&SpecParams::new(0.8, 0.3, 3)).unwrap(), 1.55368, epsilon = 1e-5);
    let hc = HcParams { alpha_d1: 0.9, alpha_d2: 0.8, c_d1: 0.4, c_d2: 0.3, k_d1: 2, k_d2: 2 };
    assert_relative_eq!(ewif_hc(&hc).unwrap(), 1.61517, epsilon = 1e-5);
    let vc = VcParams { alpha_t_d1: 0.9, alpha_d1_d2: 0.8, c_d1: 0.4, c_d2: 0.01, n: 2, k: 3 };
    assert_relative_eq!(ewif_vc(&vc).unwrap(), 2.7350, epsilon = 1e-4);
    assert_eq!(ewif_sd(&SpecParams::new(0.0, 0.5, 2)).unwrap(), 0.5);
}

#[test]
fn domain_errors() {
    assert!(ewif_sd(&SpecParams::new(1.2, 0.3, 2)).is_err());
    assert!(ewif_sd(&SpecParams::new(0.5, -0.1, 2)).is_err());
    let hc = HcParams { alpha_d1: 0.9, alpha_d2: 0.8, c_d1: 0.4, c_d2: 0.3, k_d1: 0, k_d2: 0 };
    assert!(ewif_hc(&hc).is_err());
    let vc = VcParams { alpha_t_d1: 0.9, alpha_d1_d2: 0.8, c_d1: 0.4, c_d2: 0.01, n: 0, k: 3 };
    assert!(ewif_vc(&vc).is_err());
}

#[test]
fn unit_acceptance_limits() {
    assert_relative_eq!(ewif_sd(&SpecParams::new(1.0, 0.2, 4)).unwrap(), 5.0 / 1.8, epsilon = 1e-12);
    // Continuity across the unit-acceptance branch of the cascade formula.
    let at = |a: f64| ewif_vc(&VcParams { alpha_t_d1: a, alpha_d1_d2: 0.7, c_d1: 0.3, c_d2: 0.02, n: 3, k: 2 }).unwrap();
    assert_relative_eq!(at(1.0), at(1.0 - 1e-7), epsilon = 1e-5);
}

#[test]
fn generating_function_basics() {
    assert_eq!(pgf(0.7, 3, 1.0).unwrap(), 1.0);
    assert_relative_eq!(pgf(0.5, 0, 0.9).unwrap(), 0.9, epsilon = 1e-15);
    // E[x^L] for L = accepted count of a k-token draft, by enumeration.
    let (a, k, x) = (0.6_f64, 4u32, 0.8_f64);
    let direct: f64 = (0..=k)
        .map(|j| {
            let p = if j < k { a.powi(j as i32) * (1.0 - a) } else { a.powi(k as i32) };
            p * x.powi(j as i32 + 1)
        })
        .sum();
    assert_relative_eq!(pgf(a, k, x).unwrap(), direct, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn sd_matches_summation(alpha in 0.0..1.0f64, cost in 0.0..2.0f64, k in 0u32..12) {
        let closed = ewif_sd(&SpecParams::new(alpha, cost, k)).unwrap();
        prop_assert!((closed - sd_by_summation(alpha, cost, k)).abs() < 1e-10);
    }

    #[test]
    fn sd_monotone_in_alpha_and_cost(a in 0.0..0.99f64, d in 0.001..0.01f64, c in 0.0..1.0f64, dc in 0.001..0.1f64, k in 1u32..10) {
        let base = ewif_sd(&SpecParams::new(a, c, k)).unwrap();
        prop_assert!(ewif_sd(&SpecParams::new(a + d, c, k)).unwrap() >= base);
        prop_assert!(ewif_sd(&SpecParams::new(a, c + dc, k)).unwrap() <= base);
    }

    #[test]
    fn hc_matches_summation(a1 in 0.0..1.0f64, a2 in 0.0..1.0f64, c1 in 0.0..1.0f64, c2 in 0.0..1.0f64, k1 in 0u32..6, k2 in 0u32..6) {
        prop_assume!(k1 + k2 >= 1);
        let p = HcParams { alpha_d1: a1, alpha_d2: a2, c_d1: c1, c_d2: c2, k_d1: k1, k_d2: k2 };
        prop_assert!((ewif_hc(&p).unwrap() - hc_by_summation(a1, a2, c1, c2, k1, k2)).abs() < 1e-10);
    }

    #[test]
    fn hc_without_first_stage_is_sd(a1 in 0.0..1.0f64, a2 in 0.0..1.0f64, c1 in 0.0..1.0f64, c2 in 0.0..1.0f64, k2 in 1u32..10) {
        let p = HcParams { alpha_d1: a1, alpha_d2: a2, c_d1: c1, c_d2: c2, k_d1: 0, k_d2: k2 };
        let sd = ewif_sd(&SpecParams::new(a2, c2, k2)).unwrap();
        prop_assert!((ewif_hc(&p).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn vc_single_empty_round_is_sd(a1 in 0.0..0.999f64, a2 in 0.0..1.0f64, c1 in 0.0..1.0f64, c2 in 0.0..1.0f64) {
        let p = VcParams { alpha_t_d1: a1, alpha_d1_d2: a2, c_d1: c1, c_d2: c2, n: 1, k: 0 };
        let sd = ewif_sd(&SpecParams::new(a1, c1, 1)).unwrap();
        prop_assert!((ewif_vc(&p).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn optimizers_equal_brute_force(a1 in 0.05..0.99f64, a2 in 0.05..0.99f64, c1 in 0.01..0.8f64, c2 in 0.001..0.5f64) {
        let k_max = 8;
        let sd = optimal_sd(a1, c1, k_max).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..=k_max {
            let v = sd_by_summation(a1, c1, k);
            if v > best.1 + 1e-12 { best = (k, v); }
        }
        prop_assert!((sd.ewif - best.1).abs() < 1e-10);

        let hc = optimal_hc(&HcModels { alpha_d1: a1, alpha_d2: a2, c_d1: c1, c_d2: c2 }, 6).unwrap();
        let mut best = f64::NEG_INFINITY;
        for k1 in 0..=6 { for k2 in 0..=6 {
            if k1 + k2 > 0 { best = best.max(hc_by_summation(a1, a2, c1, c2, k1, k2)); }
        } }
        prop_assert!((hc.ewif - best).abs() < 1e-10);

        let models = VcModels { alpha_t_d1: a1, alpha_d1_d2: a2, c_d1: c1, c_d2: c2 };
        let vc = optimal_vc(&models, 5, 5).unwrap();
        let mut best = f64::NEG_INFINITY;
        for n in 1..=5 { for k in 1..=5 {
            best = best.max(ewif_vc(&models.with_schedule(n, k)).unwrap());
        } }
        prop_assert!((vc.ewif - best).abs() < 1e-12);
        prop_assert!((ewif_vc(&models.with_schedule(vc.n, vc.k)).unwrap() - vc.ewif).abs() < 1e-12);
    }

    #[test]
    fn hc_bound_flips_the_inequality(a1 in 0.3..0.99f64, a2 in 0.05..0.9f64, c2 in 0.001..0.1f64, k1 in 1u32..5, k2 in 0u32..5, k0 in 1u32..6) {
        let b = HcBoundParams { alpha_d1: a1, alpha_d2: a2, c_d2: c2, k_d1: k1, k_d2: k2, k0 };
        let crit = bound_hc_closed(&b).unwrap();
        prop_assume!(crit > 1e-4);
        let sd = ewif_sd(&SpecParams::new(a2, c2, k0)).unwrap();
        let hc = |c1: f64| hc_by_summation(a1, a2, c1, c2, k1, k2);
        prop_assert!((hc(crit) - sd).abs() < 1e-9);
        prop_assert!(hc(crit * 0.99) > sd);
        prop_assert!(hc(crit * 1.01) < sd);
    }

    #[test]
    fn vc_bound_flips_the_inequality(a1 in 0.5..0.99f64, a12 in 0.3..0.95f64, a2 in 0.05..0.6f64, c2 in 0.001..0.05f64, n in 1u32..4, k in 1u32..4, k0 in 1u32..6) {
        let b = VcBoundParams { alpha_t_d1: a1, alpha_d1_d2: a12, alpha_t_d2: a2, c_d2: c2, n, k, k0 };
        let crit = bound_vc_closed(&b).unwrap();
        prop_assume!(crit > 1e-4);
        let sd = ewif_sd(&SpecParams::new(a2, c2, k0)).unwrap();
        let vc = |c_d1: f64| ewif_vc(&VcParams { alpha_t_d1: a1, alpha_d1_d2: a12, c_d1, c_d2: c2, n, k }).unwrap();
        prop_assert!((vc(crit) - sd).abs() < 1e-6);
        prop_assert!(vc(crit * 0.99) >= sd);
        prop_assert!(vc(crit * 1.01) < sd);
    }
}

#[test]
fn borderline_curves_are_monotone() {
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    for mode in [CascadeMode::Vc, CascadeMode::Hc] {
        let cfg = BorderlineConfig::new(mode);
        let pts = borderline_curve(&grid, &cfg).unwrap();
        let vals: Vec<f64> = pts.iter().map(|p| p.c_d1_critical.unwrap_or(0.0)).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{mode:?} {vals:?}");
    }
    assert!(borderline_curve(&[0.0], &BorderlineConfig::new(CascadeMode::Vc)).is_err());
    assert_eq!(borderline_curve(&[0.5], &BorderlineConfig::new(CascadeMode::Hc)).unwrap().len(), 1);
}
