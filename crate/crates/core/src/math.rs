//! Small numeric helpers shared by the analytic and simulation code.

/// Threshold below which `|1 - alpha|` takes the analytic-limit branch.
pub const UNIT_EPS: f64 = 1e-9;

/// `x^n` for a non-negative integer exponent by repeated squaring.
pub fn powi(mut x: f64, mut n: u32) -> f64 {
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= x;
        }
        x *= x;
        n >>= 1;
    }
    acc
}

/// `1 + x + ... + x^k`, using the count `k + 1` when `x` is within
/// [`UNIT_EPS`] of one.
pub fn geometric_sum(x: f64, k: u32) -> f64 {
    if (1.0 - x).abs() < UNIT_EPS {
        (k + 1) as f64
    } else {
        (1.0 - powi(x, k + 1)) / (1.0 - x)
    }
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Outcome of [`bisect_last_true`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    /// Largest probed point where the predicate held.
    pub lo: f64,
    /// Smallest probed point where it failed.
    pub hi: f64,
    pub iterations: u32,
}

/// Bisection for the boundary of a predicate that holds on `[lo, x*]` and
/// fails on `(x*, hi]`. Requires `pred(lo)` and `!pred(hi)`; stops when the
/// bracket is narrower than `tol` or after `max_iter` halvings.
pub fn bisect_last_true<F>(mut lo: f64, mut hi: f64, tol: f64, max_iter: u32, mut pred: F) -> Bracket
where
    F: FnMut(f64) -> bool,
{
    let mut iterations = 0;
    while hi - lo > tol && iterations < max_iter {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Bracket { lo, hi, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powi_matches_repeated_product() {
        for n in 0..20u32 {
            let direct = (0..n).fold(1.0, |acc, _| acc * 0.93);
            assert!((powi(0.93, n) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_sum_limit() {
        assert_eq!(geometric_sum(1.0, 4), 5.0);
        assert!((geometric_sum(0.5, 2) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn bisect_finds_threshold() {
        let b = bisect_last_true(0.0, 1.0, 1e-9, 60, |x| x <= 0.3);
        assert!(b.lo <= 0.3 && b.hi > 0.3);
        assert!(b.hi - b.lo <= 1e-9);
    }
}
