//! Closed-form expected walltime improvement factors (EWIF).
//!
//! Every evaluator measures expected tokens produced per unit of cost, where
//! one target forward costs 1 and acceptance of each drafted token is an
//! independent Bernoulli trial. Plain autoregressive decoding scores 1.
//!
//! - [`ewif_sd`]: one draft model proposing `k` tokens per verify cycle.
//! - [`ewif_vc`]: a vertical cascade, where `M_d1` drafts through `n` rounds of
//!   speculation against a cheaper `M_d2`.
//! - [`ewif_hc`]: a horizontal cascade, `k_d1` tokens from `M_d1` followed by
//!   `k_d2` tokens from `M_d2`.
//!
//! On top of these sit exhaustive hyperparameter optimizers, the
//! cost-coefficient bounds for `M_d1` and the borderline curves comparing the
//! optimized cascade against optimized plain speculative decoding.

use alloc::vec::Vec;

use crate::math::{bisect_last_true, geometric_sum, powi, Bracket, UNIT_EPS};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Absolute tolerance in `c_d1` for bound and borderline bisection.
pub const BISECT_TOL: f64 = 1e-6;
/// Iteration cap for bound and borderline bisection.
pub const BISECT_MAX_ITER: u32 = 60;

fn check_alpha(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(name, v, "[0, 1]"))
    }
}

fn check_cost(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, v, "(0, inf)"))
    }
}

fn check_at_least(name: &'static str, v: u32, min: u32) -> Result<()> {
    if v >= min {
        Ok(())
    } else if min == 1 {
        Err(Error::domain(name, v as f64, "[1, inf)"))
    } else {
        Err(Error::domain(name, v as f64, "[0, inf)"))
    }
}

/// Probability generating function of the number of tokens produced by one
/// verify cycle of `k` drafted tokens with acceptance rate `alpha`:
/// `1 + (x - 1)(1 - (alpha x)^(k+1)) / (1 - alpha x)`.
///
/// At `alpha * x = 1` the analytic limit `1 + (x - 1)(k + 1)` is returned.
pub fn pgf(alpha: f64, k: u32, x: f64) -> Result<f64> {
    check_alpha("alpha", alpha)?;
    Ok(pgf_unchecked(alpha, k, x))
}

pub(crate) fn pgf_unchecked(alpha: f64, k: u32, x: f64) -> f64 {
    1.0 + (x - 1.0) * geometric_sum(alpha * x, k)
}

/// Parameters of plain speculative decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SpecParams {
    /// Expected acceptance rate of the draft model.
    pub alpha: f64,
    /// Draft forward cost relative to one target forward.
    pub cost: f64,
    /// Draft length.
    pub k: u32,
}

impl SpecParams {
    pub fn new(alpha: f64, cost: f64, k: u32) -> Self {
        Self { alpha, cost, k }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha("alpha", self.alpha)?;
        check_cost("cost", self.cost)
    }
}

/// `T_SD = (1 - alpha^(k+1)) / ((1 - alpha)(c k + 1))`, or `(k + 1)/(c k + 1)`
/// at `alpha = 1`.
pub fn ewif_sd(p: &SpecParams) -> Result<f64> {
    p.validate()?;
    Ok(sd_unchecked(p.alpha, p.cost, p.k))
}

pub(crate) fn sd_unchecked(alpha: f64, cost: f64, k: u32) -> f64 {
    geometric_sum(alpha, k) / (cost * k as f64 + 1.0)
}

/// Parameters of a two-model vertical cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VcParams {
    /// `alpha(M_t, M_d1)`.
    pub alpha_t_d1: f64,
    /// `alpha(M_d1, M_d2)`.
    pub alpha_d1_d2: f64,
    pub c_d1: f64,
    pub c_d2: f64,
    /// Sub-draft rounds run by `M_d1`.
    pub n: u32,
    /// Tokens drafted by `M_d2` per sub-round.
    pub k: u32,
}

impl VcParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha("alpha_t_d1", self.alpha_t_d1)?;
        check_alpha("alpha_d1_d2", self.alpha_d1_d2)?;
        check_cost("c_d1", self.c_d1)?;
        check_cost("c_d2", self.c_d2)?;
        check_at_least("n", self.n, 1)
    }
}

/// `T_VC = (1 - alpha phi(alpha)^n) / ((1 - alpha)(1 + n c_d1 + n k c_d2))`
/// with `phi` the generating function for `(alpha_d1_d2, k)` and
/// `alpha = alpha_t_d1`. `phi^n` is the n-th power: the `n` sub-round lengths
/// are independent, so the generating function of their sum is the product.
pub fn ewif_vc(p: &VcParams) -> Result<f64> {
    p.validate()?;
    Ok(vc_unchecked(p))
}

fn vc_unchecked(p: &VcParams) -> f64 {
    let a = p.alpha_t_d1;
    let n = p.n as f64;
    let denom_cost = 1.0 + n * p.c_d1 + n * p.k as f64 * p.c_d2;
    let numer = if (1.0 - a).abs() < UNIT_EPS {
        // d/da of a*phi(a)^n at a = 1, since (1 - a phi^n)/(1 - a) -> that derivative.
        let dphi = geometric_sum(p.alpha_d1_d2, p.k);
        1.0 + n * dphi
    } else {
        let phi = pgf_unchecked(p.alpha_d1_d2, p.k, a);
        (1.0 - a * powi(phi, p.n)) / (1.0 - a)
    };
    numer / denom_cost
}

/// Parameters of a two-model horizontal cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HcParams {
    pub alpha_d1: f64,
    pub alpha_d2: f64,
    pub c_d1: f64,
    pub c_d2: f64,
    pub k_d1: u32,
    pub k_d2: u32,
}

impl HcParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha("alpha_d1", self.alpha_d1)?;
        check_alpha("alpha_d2", self.alpha_d2)?;
        check_cost("c_d1", self.c_d1)?;
        check_cost("c_d2", self.c_d2)?;
        check_at_least("k_d1 + k_d2", self.k_d1 + self.k_d2, 1)
    }
}

/// Expected tokens per verify cycle of a horizontal cascade (the numerator of
/// `T_HC`).
fn hc_expected_tokens(alpha_d1: f64, alpha_d2: f64, k_d1: u32, k_d2: u32) -> f64 {
    geometric_sum(alpha_d1, k_d1)
        + powi(alpha_d1, k_d1) * (geometric_sum(alpha_d2, k_d2) - 1.0)
}

pub fn ewif_hc(p: &HcParams) -> Result<f64> {
    p.validate()?;
    Ok(hc_unchecked(p.alpha_d1, p.alpha_d2, p.c_d1, p.c_d2, p.k_d1, p.k_d2))
}

fn hc_unchecked(a1: f64, a2: f64, c1: f64, c2: f64, k1: u32, k2: u32) -> f64 {
    hc_expected_tokens(a1, a2, k1, k2) / (1.0 + k1 as f64 * c1 + k2 as f64 * c2)
}

/// Argmax of `T_SD` over `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SdOptimum {
    pub k: u32,
    pub ewif: f64,
}

/// Exhaustive argmax of [`ewif_sd`] over `k` in `[0, k_max]`; ties go to the
/// smaller `k`.
pub fn optimal_sd(alpha: f64, cost: f64, k_max: u32) -> Result<SdOptimum> {
    check_alpha("alpha", alpha)?;
    check_cost("cost", cost)?;
    check_at_least("k_max", k_max, 1)?;
    Ok(optimal_sd_unchecked(alpha, cost, k_max))
}

fn optimal_sd_unchecked(alpha: f64, cost: f64, k_max: u32) -> SdOptimum {
    let mut best = SdOptimum { k: 0, ewif: sd_unchecked(alpha, cost, 0) };
    for k in 1..=k_max {
        let t = sd_unchecked(alpha, cost, k);
        if t > best.ewif {
            best = SdOptimum { k, ewif: t };
        }
    }
    best
}

/// Model parameters of a vertical cascade without its schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VcModels {
    pub alpha_t_d1: f64,
    pub alpha_d1_d2: f64,
    pub c_d1: f64,
    pub c_d2: f64,
}

impl VcModels {
    pub fn with_schedule(&self, n: u32, k: u32) -> VcParams {
        VcParams {
            alpha_t_d1: self.alpha_t_d1,
            alpha_d1_d2: self.alpha_d1_d2,
            c_d1: self.c_d1,
            c_d2: self.c_d2,
            n,
            k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VcOptimum {
    pub n: u32,
    pub k: u32,
    pub ewif: f64,
}

/// Exhaustive argmax of [`ewif_vc`] over `n` in `[1, n_max]`, `k` in
/// `[1, k_max]`; ties go to the smaller `n`, then the smaller `k`.
pub fn optimal_vc(models: &VcModels, n_max: u32, k_max: u32) -> Result<VcOptimum> {
    models.with_schedule(1, 1).validate()?;
    check_at_least("n_max", n_max, 1)?;
    check_at_least("k_max", k_max, 1)?;
    Ok(optimal_vc_unchecked(models, n_max, k_max))
}

fn optimal_vc_unchecked(models: &VcModels, n_max: u32, k_max: u32) -> VcOptimum {
    let mut best = VcOptimum { n: 0, k: 0, ewif: f64::NEG_INFINITY };
    for n in 1..=n_max {
        for k in 1..=k_max {
            let t = vc_unchecked(&models.with_schedule(n, k));
            if t > best.ewif {
                best = VcOptimum { n, k, ewif: t };
            }
        }
    }
    best
}

/// Model parameters of a horizontal cascade without its schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HcModels {
    pub alpha_d1: f64,
    pub alpha_d2: f64,
    pub c_d1: f64,
    pub c_d2: f64,
}

impl HcModels {
    pub fn with_schedule(&self, k_d1: u32, k_d2: u32) -> HcParams {
        HcParams {
            alpha_d1: self.alpha_d1,
            alpha_d2: self.alpha_d2,
            c_d1: self.c_d1,
            c_d2: self.c_d2,
            k_d1,
            k_d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HcOptimum {
    pub k_d1: u32,
    pub k_d2: u32,
    pub ewif: f64,
}

/// Exhaustive argmax of [`ewif_hc`] over `[0, k_max]^2` minus `(0, 0)`; ties go
/// to the smaller `k_d1`, then the smaller `k_d2`.
pub fn optimal_hc(models: &HcModels, k_max: u32) -> Result<HcOptimum> {
    models.with_schedule(1, 0).validate()?;
    check_at_least("k_max", k_max, 1)?;
    Ok(optimal_hc_unchecked(models, 0, k_max))
}

fn optimal_hc_unchecked(m: &HcModels, k_d1_min: u32, k_max: u32) -> HcOptimum {
    let mut best = HcOptimum { k_d1: 0, k_d2: 0, ewif: f64::NEG_INFINITY };
    for k1 in k_d1_min..=k_max {
        for k2 in 0..=k_max {
            if k1 + k2 == 0 {
                continue;
            }
            let t = hc_unchecked(m.alpha_d1, m.alpha_d2, m.c_d1, m.c_d2, k1, k2);
            if t > best.ewif {
                best = HcOptimum { k_d1: k1, k_d2: k2, ewif: t };
            }
        }
    }
    best
}

/// Vertical-cascade bound inputs: everything but `c_d1`, plus the baseline
/// draft length `k0` of plain speculative decoding with `M_d2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcBoundParams {
    pub alpha_t_d1: f64,
    pub alpha_d1_d2: f64,
    /// `alpha(M_t, M_d2)` used by the baseline.
    pub alpha_t_d2: f64,
    pub c_d2: f64,
    pub n: u32,
    pub k: u32,
    pub k0: u32,
}

/// Critical `c_d1` at which `T_VC(c_d1) = T_SD(M_d2, k0)`, found by bisection.
///
/// `T_VC` is strictly decreasing in `c_d1`, so the inequality
/// `T_VC >= T_SD` holds exactly below the returned value. Returns 0 when it
/// fails already at `c_d1 = 0`.
pub fn bound_vc_closed(p: &VcBoundParams) -> Result<f64> {
    check_alpha("alpha_t_d1", p.alpha_t_d1)?;
    check_alpha("alpha_d1_d2", p.alpha_d1_d2)?;
    check_alpha("alpha_t_d2", p.alpha_t_d2)?;
    check_cost("c_d2", p.c_d2)?;
    check_at_least("n", p.n, 1)?;
    let baseline = sd_unchecked(p.alpha_t_d2, p.c_d2, p.k0);
    let vc_at = |c_d1: f64| {
        vc_unchecked(&VcParams {
            alpha_t_d1: p.alpha_t_d1,
            alpha_d1_d2: p.alpha_d1_d2,
            c_d1,
            c_d2: p.c_d2,
            n: p.n,
            k: p.k,
        })
    };
    if vc_at(0.0) < baseline {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while vc_at(hi) >= baseline {
        hi *= 2.0;
    }
    // The bracket is narrowed to machine precision here so the residual at the
    // returned point is tight; the defining equation is smooth in c_d1.
    let b = bisect_last_true(0.0, hi, 0.0, 200, |c| vc_at(c) >= baseline);
    Ok(b.lo)
}

/// Right-hand side of the algebraic vertical-cascade bound in its published
/// form, evaluated at a trial `c_d1`. There the inner generating function is
/// replaced by `(1 - a^(k_d1+1)) / ((1 - a)(1 + k_d1 c_d1))`, which itself
/// depends on `c_d1`; the value is a diagnostic only, [`bound_vc_closed`] is
/// the reference.
pub fn vc_bound_published_rhs(p: &VcBoundParams, k_d1: u32, c_d1: f64) -> f64 {
    let a1 = p.alpha_t_d1;
    let n = p.n as f64;
    let phi = sd_unchecked(a1, c_d1, k_d1);
    let first = if (1.0 - a1).abs() < UNIT_EPS {
        1.0 + n * phi
    } else {
        (1.0 - a1 * powi(phi, p.n)) / (1.0 - a1)
    };
    let inv_sd = 1.0 / sd_unchecked(p.alpha_t_d2, p.c_d2, p.k0);
    (first * inv_sd - (1.0 + n * p.k as f64 * p.c_d2)) / n
}

/// Horizontal-cascade bound inputs: everything but `c_d1`, plus the baseline
/// draft length `k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcBoundParams {
    pub alpha_d1: f64,
    pub alpha_d2: f64,
    pub c_d2: f64,
    pub k_d1: u32,
    pub k_d2: u32,
    pub k0: u32,
}

/// Closed-form critical `c_d1` for `T_HC >= T_SD(M_d2, k0)`:
///
/// `c_d1 <= (1/k_d1) [ N (1 - a2)(c_d2 k0 + 1)/(1 - a2^(k0+1)) - (1 + k_d2 c_d2) ]`
///
/// with `N` the expected tokens per horizontal-cascade cycle. The value can be
/// negative, meaning no positive `c_d1` works.
pub fn bound_hc_closed(p: &HcBoundParams) -> Result<f64> {
    check_alpha("alpha_d1", p.alpha_d1)?;
    check_alpha("alpha_d2", p.alpha_d2)?;
    check_cost("c_d2", p.c_d2)?;
    check_at_least("k_d1", p.k_d1, 1)?;
    let numer = hc_expected_tokens(p.alpha_d1, p.alpha_d2, p.k_d1, p.k_d2);
    let inv_sd = 1.0 / sd_unchecked(p.alpha_d2, p.c_d2, p.k0);
    Ok((numer * inv_sd - (1.0 + p.k_d2 as f64 * p.c_d2)) / p.k_d1 as f64)
}

/// Which cascade a borderline curve compares against plain speculative decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CascadeMode {
    Vc,
    Hc,
}

/// Settings of [`borderline_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorderlineConfig {
    pub mode: CascadeMode,
    /// Cost of the bottom model `M_d2`.
    pub c_d2: f64,
    /// `alpha(M_t, M_d2)`, equal to `alpha(M_d1, M_d2)` by assumption.
    pub alpha_d2: f64,
    pub k_max: u32,
    pub n_max: u32,
    /// Upper end of the searched `c_d1` range.
    pub c_max: f64,
}

impl BorderlineConfig {
    pub fn new(mode: CascadeMode) -> Self {
        Self { mode, c_d2: 0.01, alpha_d2: 0.3, k_max: 10, n_max: 10, c_max: 1.0 }
    }

    /// Best plain speculative decoding with `M_d2` alone.
    pub fn baseline(&self) -> f64 {
        optimal_sd_unchecked(self.alpha_d2, self.c_d2, self.k_max).ewif
    }

    /// Best cascade EWIF for a given `M_d1`.
    pub fn optimized_cascade(&self, alpha_d1: f64, c_d1: f64) -> f64 {
        match self.mode {
            CascadeMode::Vc => {
                let m = VcModels {
                    alpha_t_d1: alpha_d1,
                    alpha_d1_d2: self.alpha_d2,
                    c_d1,
                    c_d2: self.c_d2,
                };
                optimal_vc_unchecked(&m, self.n_max, self.k_max).ewif
            }
            CascadeMode::Hc => {
                let m = HcModels { alpha_d1, alpha_d2: self.alpha_d2, c_d1, c_d2: self.c_d2 };
                // k_d1 = 0 is plain speculative decoding and would always tie.
                optimal_hc_unchecked(&m, 1, self.k_max).ewif
            }
        }
    }

    /// Whether the optimized cascade at least matches the optimized baseline.
    pub fn cascade_wins(&self, alpha_d1: f64, c_d1: f64) -> bool {
        self.optimized_cascade(alpha_d1, c_d1) >= self.baseline()
    }
}

/// One point of a borderline curve.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BorderlinePoint {
    pub alpha_d1: f64,
    /// Largest `c_d1` where the optimized cascade ties optimized SD; `None`
    /// when the cascade loses even at `c_d1 -> 0`. Capped at `c_max`.
    pub c_d1_critical: Option<f64>,
}

/// Critical `c_d1` for every `alpha_d1` on the grid, by bisection over
/// `(0, c_max]` with absolute tolerance [`BISECT_TOL`].
pub fn borderline_curve(alpha_grid: &[f64], cfg: &BorderlineConfig) -> Result<Vec<BorderlinePoint>> {
    check_cost("c_d2", cfg.c_d2)?;
    check_alpha("alpha_d2", cfg.alpha_d2)?;
    check_at_least("k_max", cfg.k_max, 1)?;
    check_at_least("n_max", cfg.n_max, 1)?;
    check_cost("c_max", cfg.c_max)?;
    for &a in alpha_grid {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::domain("alpha_d1", a, "(0, 1)"));
        }
    }
    let baseline = cfg.baseline();
    let wins = |a: f64, c: f64| cfg.optimized_cascade(a, c) >= baseline;
    Ok(alpha_grid
        .iter()
        .map(|&alpha_d1| {
            let c_d1_critical = if !wins(alpha_d1, 0.0) {
                None
            } else if wins(alpha_d1, cfg.c_max) {
                Some(cfg.c_max)
            } else {
                let Bracket { lo, .. } =
                    bisect_last_true(0.0, cfg.c_max, BISECT_TOL, BISECT_MAX_ITER, |c| wins(alpha_d1, c));
                Some(lo)
            };
            BorderlinePoint { alpha_d1, c_d1_critical }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pgf_normalized_at_one() {
        for ai in 0..=20 {
            let a = ai as f64 / 20.0;
            for k in 0..=32 {
                assert_abs_diff_eq!(pgf(a, k, 1.0).unwrap(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pgf_alpha_zero_collapses() {
        assert_abs_diff_eq!(pgf(0.0, 5, 2.0).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn pgf_limit_branch() {
        // alpha * x = 1
        let v = pgf(0.5, 3, 2.0).unwrap();
        assert_abs_diff_eq!(v, 1.0 + 1.0 * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pgf_rejects_bad_alpha() {
        assert!(matches!(pgf(1.5, 2, 1.0), Err(Error::Domain { name: "alpha", .. })));
    }

    #[test]
    fn pgf_derivative_is_expected_length() {
        // Finite difference at x = 1 against the explicit length distribution.
        let (a, k) = (0.8, 2);
        let h = 1e-6;
        let fd = (pgf(a, k, 1.0 + h).unwrap() - pgf(a, k, 1.0 - h).unwrap()) / (2.0 * h);
        // p_i = a^(i-1)(1-a) for i <= k, p_(k+1) = a^k
        let mut mean = 0.0;
        for i in 1..=k {
            mean += i as f64 * powi(a, i - 1) * (1.0 - a);
        }
        mean += (k + 1) as f64 * powi(a, k);
        assert_abs_diff_eq!(fd, 2.44, epsilon = 1e-6);
        assert_abs_diff_eq!(mean, 2.44, epsilon = 1e-12);
    }

    #[test]
    fn sd_examples() {
        let t = ewif_sd(&SpecParams::new(0.8, 0.3, 3)).unwrap();
        assert_abs_diff_eq!(t, 0.5904 / 0.38, epsilon = 1e-12);
        assert!((t - 1.554).abs() < 5e-4);
        assert_eq!(ewif_sd(&SpecParams::new(0.37, 0.9, 0)).unwrap(), 1.0);
        assert_abs_diff_eq!(ewif_sd(&SpecParams::new(0.0, 0.5, 2)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ewif_sd(&SpecParams::new(1.0, 0.5, 2)).unwrap(), 1.5, epsilon = 1e-12);
        assert!(ewif_sd(&SpecParams::new(0.5, 0.0, 2)).is_err());
    }

    #[test]
    fn vc_degenerate_is_sd() {
        let p = VcParams { alpha_t_d1: 0.9, alpha_d1_d2: 0.9, c_d1: 0.4, c_d2: 0.01, n: 1, k: 0 };
        let t = ewif_vc(&p).unwrap();
        assert_abs_diff_eq!(t, (1.0 - 0.81) / (0.1 * 1.4), epsilon = 1e-12);
        assert_abs_diff_eq!(t, ewif_sd(&SpecParams::new(0.9, 0.4, 1)).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn vc_alpha_zero() {
        let p = VcParams { alpha_t_d1: 0.0, alpha_d1_d2: 0.6, c_d1: 0.3, c_d2: 0.05, n: 3, k: 2 };
        assert_abs_diff_eq!(ewif_vc(&p).unwrap(), 1.0 / (1.0 + 0.9 + 0.3), epsilon = 1e-12);
    }

    #[test]
    fn vc_alpha_one_limit_is_continuous() {
        let mut p = VcParams { alpha_t_d1: 1.0, alpha_d1_d2: 0.7, c_d1: 0.3, c_d2: 0.05, n: 2, k: 3 };
        let at_one = ewif_vc(&p).unwrap();
        p.alpha_t_d1 = 1.0 - 1e-7;
        assert_abs_diff_eq!(at_one, ewif_vc(&p).unwrap(), epsilon = 1e-5);
    }

    #[test]
    fn hc_counterexample() {
        let p = HcParams { alpha_d1: 0.9, alpha_d2: 0.8, c_d1: 0.4, c_d2: 0.3, k_d1: 2, k_d2: 2 };
        let t = ewif_hc(&p).unwrap();
        assert_abs_diff_eq!(t, 3.8764 / 2.4, epsilon = 1e-12);
        assert!((t - 1.615).abs() < 5e-4);
    }

    #[test]
    fn hc_without_first_stage_is_sd() {
        let p = HcParams { alpha_d1: 0.3, alpha_d2: 0.75, c_d1: 0.4, c_d2: 0.2, k_d1: 0, k_d2: 4 };
        assert_abs_diff_eq!(
            ewif_hc(&p).unwrap(),
            ewif_sd(&SpecParams::new(0.75, 0.2, 4)).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn optimal_sd_examples() {
        let o = optimal_sd(0.8, 0.3, 10).unwrap();
        assert_eq!(o.k, 3);
        assert!((o.ewif - 1.554).abs() < 5e-4);
        assert_eq!(optimal_sd(0.0, 0.3, 10).unwrap(), SdOptimum { k: 0, ewif: 1.0 });
    }

    #[test]
    fn optimal_vc_alpha_zero_prefers_smallest_schedule() {
        let m = VcModels { alpha_t_d1: 0.0, alpha_d1_d2: 0.5, c_d1: 0.2, c_d2: 0.05 };
        let o = optimal_vc(&m, 6, 6).unwrap();
        assert_eq!((o.n, o.k), (1, 1));
        assert_abs_diff_eq!(o.ewif, 1.0 / 1.25, epsilon = 1e-12);
    }

    #[test]
    fn optimal_hc_counterexample_is_2_2() {
        let m = HcModels { alpha_d1: 0.9, alpha_d2: 0.8, c_d1: 0.4, c_d2: 0.3 };
        let o = optimal_hc(&m, 8).unwrap();
        assert_eq!((o.k_d1, o.k_d2), (2, 2));
        assert!(o.ewif >= 1.615 - 5e-4);
    }

    #[test]
    fn optimal_hc_prohibitive_first_stage() {
        let m = HcModels { alpha_d1: 0.95, alpha_d2: 0.7, c_d1: 1e9, c_d2: 0.1 };
        assert_eq!(optimal_hc(&m, 12).unwrap().k_d1, 0);
    }

    #[test]
    fn hc_bound_symmetric_models() {
        let p = HcBoundParams { alpha_d1: 0.7, alpha_d2: 0.7, c_d2: 0.2, k_d1: 2, k_d2: 3, k0: 5 };
        assert_abs_diff_eq!(bound_hc_closed(&p).unwrap(), 0.2, epsilon = 1e-12);
        let p0 = HcBoundParams { k_d1: 0, ..p };
        assert!(bound_hc_closed(&p0).is_err());
    }

    #[test]
    fn vc_bound_matches_linear_solve() {
        let p = VcBoundParams {
            alpha_t_d1: 0.85,
            alpha_d1_d2: 0.5,
            alpha_t_d2: 0.5,
            c_d2: 0.01,
            n: 2,
            k: 3,
            k0: 4,
        };
        let c = bound_vc_closed(&p).unwrap();
        // T_VC = A / (1 + n c1 + n k c2) is linear-fractional in c1.
        let phi = pgf(0.5, 3, 0.85).unwrap();
        let a = (1.0 - 0.85 * phi * phi) / 0.15;
        let t_sd = ewif_sd(&SpecParams::new(0.5, 0.01, 4)).unwrap();
        let direct = (a / t_sd - 1.0 - 2.0 * 3.0 * 0.01) / 2.0;
        assert_abs_diff_eq!(c, direct, epsilon = 1e-9);
    }

    #[test]
    fn borderline_rejects_bad_grid() {
        let cfg = BorderlineConfig::new(CascadeMode::Vc);
        assert!(borderline_curve(&[0.5, 1.0], &cfg).is_err());
        assert!(borderline_curve(&[0.0], &cfg).is_err());
    }
}
