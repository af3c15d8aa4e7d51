//! Online acceptance and latency estimates.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::hierarchy::ModelId;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_PRIOR_PRECISION: f64 = 1.0;
pub const DEFAULT_NOISE_PRECISION: f64 = 25.0;
/// Floor of every cost prediction.
pub const MIN_COST: f64 = 1e-4;

/// Exponential moving average over windowed first-token outcomes.
///
/// Each outcome is pushed into a window of the last `window` outcomes; the
/// average is then blended as `ema = lambda * ema + (1 - lambda) * mean(window)`.
/// The first outcome of an uninitialized estimator sets `ema` to the window
/// mean directly.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaEstimator {
    ema: f64,
    history: VecDeque<bool>,
    hits: usize,
    window: usize,
    lambda: f64,
    initialized: bool,
}

impl AlphaEstimator {
    pub fn new(window: usize, lambda: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::domain("window", 0.0, "[1, inf)"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::domain("lambda", lambda, "[0, 1]"));
        }
        Ok(Self { ema: 0.0, history: VecDeque::with_capacity(window), hits: 0, window, lambda, initialized: false })
    }

    /// Starts from `prior` as if it had been observed.
    pub fn with_prior(mut self, prior: f64) -> Self {
        self.set_prior(prior);
        self
    }

    pub fn set_prior(&mut self, prior: f64) {
        self.ema = prior.clamp(0.0, 1.0);
        self.initialized = true;
    }

    pub fn record(&mut self, accepted: bool) {
        if self.history.len() == self.window && self.history.pop_front() == Some(true) {
            self.hits -= 1;
        }
        self.history.push_back(accepted);
        self.hits += accepted as usize;
        let recent = self.recent_mean();
        self.ema = if self.initialized { self.lambda * self.ema + (1.0 - self.lambda) * recent } else { recent };
        self.initialized = true;
    }

    pub fn ema(&self) -> f64 {
        self.ema
    }

    /// Mean of the outcomes in the window (0 when empty).
    pub fn recent_mean(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.hits as f64 / self.history.len() as f64
        }
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        self.history.iter().copied()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Usage counters of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Usage {
    pub selected: u64,
    pub outcomes: u64,
    pub accepted: u64,
}

/// Acceptance estimates for a set of configurations.
///
/// Every configuration is keyed to one model (its top-level model for
/// vertical cascades) and configurations with the same key share one
/// estimator. Estimators are only touched by outcomes of their own key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigCatalog {
    keys: Vec<ModelId>,
    usage: Vec<Usage>,
    estimators: Vec<AlphaEstimator>,
}

impl ConfigCatalog {
    /// `keys[c]` is the estimator key of configuration `c`; keys must be
    /// below `n_models`.
    pub fn new(keys: Vec<ModelId>, n_models: usize, window: usize, lambda: f64) -> Result<Self> {
        if let Some(bad) = keys.iter().find(|k| k.0 >= n_models) {
            return Err(Error::UnknownConfig(bad.0));
        }
        let proto = AlphaEstimator::new(window, lambda)?;
        Ok(Self { usage: vec![Usage::default(); keys.len()], keys, estimators: vec![proto; n_models] })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, config: usize) -> Result<ModelId> {
        self.keys.get(config).copied().ok_or(Error::UnknownConfig(config))
    }

    pub fn estimator(&self, config: usize) -> Result<&AlphaEstimator> {
        Ok(&self.estimators[self.key(config)?.0])
    }

    pub fn model_estimator(&self, model: ModelId) -> &AlphaEstimator {
        &self.estimators[model.0]
    }

    pub fn estimate(&self, config: usize) -> Result<f64> {
        Ok(self.estimator(config)?.ema())
    }

    pub fn usage(&self, config: usize) -> Result<Usage> {
        self.usage.get(config).copied().ok_or(Error::UnknownConfig(config))
    }

    pub fn note_selected(&mut self, config: usize) -> Result<()> {
        self.usage.get_mut(config).ok_or(Error::UnknownConfig(config))?.selected += 1;
        Ok(())
    }

    /// Seeds each model's estimator with `priors[model]`.
    pub fn apply_priors(&mut self, priors: &[f64]) {
        for (e, &p) in self.estimators.iter_mut().zip(priors) {
            e.set_prior(p);
        }
    }

    pub fn all_initialized(&self) -> bool {
        self.keys.iter().all(|k| self.estimators[k.0].is_initialized())
    }
}

/// Feeds one first-token outcome to the estimator of `config`.
pub fn record_first_token_outcome(catalog: &mut ConfigCatalog, config: usize, accepted: bool) -> Result<()> {
    let key = catalog.key(config)?;
    catalog.estimators[key.0].record(accepted);
    let u = &mut catalog.usage[config];
    u.outcomes += 1;
    u.accepted += accepted as u64;
    Ok(())
}

/// Cold-start priors from cost rank: with `r` the number of strictly more
/// expensive models among `n`, the prior is `clamp(1 - (r + 1)/(n + 1), 0.05, 0.95)`.
pub fn heuristic_priors(costs: &[f64]) -> Vec<f64> {
    let n = costs.len() as f64;
    costs
        .iter()
        .map(|&c| {
            let r = costs.iter().filter(|&&o| o > c).count() as f64;
            (1.0 - (r + 1.0) / (n + 1.0)).clamp(0.05, 0.95)
        })
        .collect()
}

/// Runs one calibration cycle of a configuration and reports whether its
/// first drafted token was accepted.
pub trait CalibrationProbe {
    fn probe(&mut self, config: usize) -> Result<bool>;
}

/// Exercises every configuration for `steps` cycles in round-robin order.
/// With `steps = 0` the estimators are seeded from `priors` instead.
pub fn calibrate<P: CalibrationProbe>(
    catalog: &mut ConfigCatalog,
    probe: &mut P,
    steps: usize,
    priors: &[f64],
) -> Result<()> {
    if steps == 0 {
        catalog.apply_priors(priors);
        return Ok(());
    }
    for _ in 0..steps {
        for config in 0..catalog.len() {
            let accepted = probe.probe(config)?;
            record_first_token_outcome(catalog, config, accepted)?;
        }
    }
    Ok(())
}

/// Product of per-edge acceptance values along a root-to-node path.
pub fn accumulated_alpha(path: &[f64]) -> Result<f64> {
    path.iter().try_fold(1.0, |acc, &a| {
        if (0.0..=1.0).contains(&a) {
            Ok(acc * a)
        } else {
            Err(Error::domain("edge alpha", a, "[0, 1]"))
        }
    })
}

/// One observed draft call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallFeatures {
    pub config: usize,
    pub k: usize,
    pub width: usize,
}

/// Bayesian linear regression of draft-call cost.
///
/// The cost of a call is modelled as `slope[c] * k + intercept[c] + w * width`
/// for configuration `c`, with a Gaussian prior around nominal coefficients
/// and Gaussian noise. The posterior is kept as its precision matrix and the
/// precision-weighted mean, and solved by Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    n_configs: usize,
    noise_precision: f64,
    precision: Vec<f64>,
    shift: Vec<f64>,
    mean: Vec<f64>,
    stale: bool,
}

impl LatencyModel {
    /// `nominal[c] = (slope, intercept)`; the width weight starts at 0.
    pub fn new(nominal: &[(f64, f64)], prior_precision: f64, noise_precision: f64) -> Result<Self> {
        if !(prior_precision > 0.0) {
            return Err(Error::domain("prior_precision", prior_precision, "(0, inf)"));
        }
        if !(noise_precision > 0.0) {
            return Err(Error::domain("noise_precision", noise_precision, "(0, inf)"));
        }
        let d = 2 * nominal.len() + 1;
        let mut mean = vec![0.0; d];
        for (c, &(s, i)) in nominal.iter().enumerate() {
            mean[2 * c] = s;
            mean[2 * c + 1] = i;
        }
        let mut precision = vec![0.0; d * d];
        for i in 0..d {
            precision[i * d + i] = prior_precision;
        }
        let shift = mean.iter().map(|m| m * prior_precision).collect();
        Ok(Self { n_configs: nominal.len(), noise_precision, precision, shift, mean, stale: false })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_configs + 1
    }

    fn features(&self, f: CallFeatures) -> [(usize, f64); 3] {
        [(2 * f.config, f.k as f64), (2 * f.config + 1, 1.0), (self.dim() - 1, f.width as f64)]
    }

    /// Adds one observation to the posterior.
    pub fn observe(&mut self, f: CallFeatures, cost: f64) -> Result<()> {
        if f.config >= self.n_configs {
            return Err(Error::UnknownConfig(f.config));
        }
        let d = self.dim();
        let x = self.features(f);
        for &(i, xi) in &x {
            self.shift[i] += self.noise_precision * xi * cost;
            for &(j, xj) in &x {
                self.precision[i * d + j] += self.noise_precision * xi * xj;
            }
        }
        self.stale = true;
        Ok(())
    }

    /// Conjugate update with a batch of observations.
    pub fn fit(&mut self, observations: &[(CallFeatures, f64)]) -> Result<()> {
        for &(f, c) in observations {
            self.observe(f, c)?;
        }
        self.refresh()
    }

    /// Recomputes the posterior mean after observations.
    pub fn refresh(&mut self) -> Result<()> {
        if self.stale {
            let l = cholesky(&self.precision, self.dim())?;
            self.mean = cholesky_solve(&l, self.dim(), &self.shift);
            self.stale = false;
        }
        Ok(())
    }

    /// Posterior mean weights: per configuration `(slope, intercept)`, then
    /// the width weight.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Posterior covariance (inverse precision), row-major.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let l = cholesky(&self.precision, d)?;
        let mut cov = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = cholesky_solve(&l, d, &e);
            for i in 0..d {
                cov[i * d + j] = col[i];
            }
        }
        Ok(cov)
    }

    /// Whether the posterior precision admits a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        cholesky(&self.precision, self.dim()).is_ok()
    }

    /// Predicted cost of drafting `k` tokens with `config`, floored at [`MIN_COST`].
    pub fn predict_cost(&self, config: usize, k: usize, width: usize) -> f64 {
        let f = CallFeatures { config, k, width };
        self.features(f).iter().map(|&(i, x)| self.mean[i] * x).sum::<f64>().max(MIN_COST)
    }
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for p in 0..j {
                s -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::domain("posterior precision pivot", s, "(0, inf)"));
                }
                l[i * d + i] = crate::math::sqrt(s);
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|p| l[i * d + p] * y[p]).sum();
        y[i] = (b[i] - s) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|p| l[p * d + i] * x[p]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_step() {
        let mut e = AlphaEstimator::new(10, 0.7).unwrap();
        for i in 0..9 {
            e.record(i != 4);
        }
        e.set_prior(0.5);
        e.record(true);
        assert!((e.recent_mean() - 0.9).abs() < 1e-12);
        assert!((e.ema() - 0.62).abs() < 1e-12);
    }

    #[test]
    fn first_outcome_sets_ema() {
        let mut e = AlphaEstimator::new(20, 0.7).unwrap();
        assert!(!e.is_initialized());
        e.record(true);
        assert_eq!(e.ema(), 1.0);
    }

    #[test]
    fn window_is_bounded() {
        let mut e = AlphaEstimator::new(3, 0.7).unwrap();
        for i in 0..10 {
            e.record(i % 2 == 0);
            assert!(e.history().len() <= 3);
        }
    }

    #[test]
    fn priors_decrease_with_cost() {
        let p = heuristic_priors(&[0.45, 0.3, 0.01]);
        assert_eq!(p, vec![0.75, 0.5, 0.25]);
    }

    #[test]
    fn accumulated_products() {
        assert!((accumulated_alpha(&[0.9, 0.8]).unwrap() - 0.72).abs() < 1e-12);
        assert_eq!(accumulated_alpha(&[]).unwrap(), 1.0);
        assert!((accumulated_alpha(&[0.8, 2.0 / 3.0]).unwrap() - 0.533_333_333_333).abs() < 1e-9);
        assert!(accumulated_alpha(&[1.5]).is_err());
    }

    #[test]
    fn prior_only_prediction() {
        let m = LatencyModel::new(&[(0.3, 0.0)], 1.0, 25.0).unwrap();
        assert!((m.predict_cost(0, 2, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn catalog_rejects_unknown() {
        let mut c = ConfigCatalog::new(vec![ModelId(0)], 1, 20, 0.7).unwrap();
        assert_eq!(record_first_token_outcome(&mut c, 3, true), Err(Error::UnknownConfig(3)));
    }
}
