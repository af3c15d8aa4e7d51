//! Acceptance estimators, the latency regression and the simulated drafters.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use speccascade_core::estimation::*;
use speccascade_core::hierarchy::*;
use speccascade_core::rng::SimRng;

fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

proptest! {
    #[test]
    fn ema_follows_the_two_step_recurrence(prior in 0.0..=1.0f64, window in 1usize..30, lambda in 0.0..=1.0f64,
                                           past in prop::collection::vec(any::<bool>(), 0..40), a in any::<bool>(), b in any::<bool>()) {
        let mut e = AlphaEstimator::new(window, lambda).unwrap().with_prior(prior);
        for &o in &past {
            e.record(o);
        }
        let start = e.ema();
        let mut hist: Vec<bool> = past.iter().rev().take(window).rev().copied().collect();
        let mut mean_after = |o: bool| {
            if hist.len() == window { hist.remove(0); }
            hist.push(o);
            hist.iter().filter(|&&x| x).count() as f64 / hist.len() as f64
        };
        let (m1, m2) = (mean_after(a), mean_after(b));
        let expected = lambda * (lambda * start + (1.0 - lambda) * m1) + (1.0 - lambda) * m2;
        e.record(a);
        e.record(b);
        prop_assert!((e.ema() - expected).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e.ema()));
        prop_assert!(e.history().len() <= window);
    }

    #[test]
    fn untouched_estimators_are_bit_identical(outcomes in prop::collection::vec((0usize..3, any::<bool>()), 1..500)) {
        // Configs 0 and 1 share model 0; config 2 is model 1; model 2 has its own config 3.
        let keys = vec![ModelId(0), ModelId(0), ModelId(1), ModelId(2)];
        let mut cat = ConfigCatalog::new(keys, 3, DEFAULT_WINDOW, DEFAULT_LAMBDA).unwrap();
        cat.apply_priors(&[0.75, 0.5, 0.25]);
        record_first_token_outcome(&mut cat, 3, true).unwrap();
        let frozen = cat.estimator(3).unwrap().clone();
        let bits = frozen.ema().to_bits();
        for (c, o) in outcomes {
            record_first_token_outcome(&mut cat, c, o).unwrap();
            cat.note_selected(c).unwrap();
        }
        prop_assert_eq!(cat.estimator(3).unwrap(), &frozen);
        prop_assert_eq!(cat.estimate(3).unwrap().to_bits(), bits);
        prop_assert_eq!(cat.estimate(0).unwrap().to_bits(), cat.estimate(1).unwrap().to_bits());
    }
}

#[test]
fn calibration_on_a_stationary_model() {
    struct Bernoulli(SimRng, f64);
    impl CalibrationProbe for Bernoulli {
        fn probe(&mut self, _: usize) -> speccascade_core::Result<bool> {
            Ok(self.0.random_bool(self.1))
        }
    }
    let mut inside = 0;
    for seed in 0..200 {
        let mut cat = ConfigCatalog::new(vec![ModelId(0)], 1, DEFAULT_WINDOW, DEFAULT_LAMBDA).unwrap();
        calibrate(&mut cat, &mut Bernoulli(rng(seed), 0.8), 60, &[]).unwrap();
        inside += (0.6..=0.95).contains(&cat.estimate(0).unwrap()) as usize;
    }
    assert!(inside >= 190, "{inside}/200");

    let mut cat = ConfigCatalog::new(vec![ModelId(0), ModelId(1), ModelId(2)], 3, 20, 0.7).unwrap();
    let priors = heuristic_priors(&[0.45, 0.3, 0.01]);
    calibrate(&mut cat, &mut Bernoulli(rng(0), 0.5), 0, &priors).unwrap();
    let est: Vec<f64> = (0..3).map(|c| cat.estimate(c).unwrap()).collect();
    assert!(est[0] > est[1] && est[1] > est[2], "{est:?}");
}

/// Ordinary least squares through the normal equations, by Gaussian elimination.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = rows[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (x, &t) in rows.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
            a[i][d] += x[i] * t;
        }
    }
    for col in 0..d {
        let pivot = (col..d).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=d {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

#[test]
fn latency_regression_recovers_noise_free_weights() {
    let mut r = rng(3);
    let obs: Vec<(CallFeatures, f64)> = (0..50)
        .map(|_| {
            let f = CallFeatures { config: 0, k: r.random_range(1..8), width: r.random_range(1..5) };
            (f, 0.3 * f.k as f64 + 0.05)
        })
        .collect();
    let mut m = LatencyModel::new(&[(1.0, 1.0)], 1e-10, DEFAULT_NOISE_PRECISION).unwrap();
    m.fit(&obs).unwrap();
    let rows: Vec<Vec<f64>> = obs.iter().map(|(f, _)| vec![f.k as f64, 1.0, f.width as f64]).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let ols = least_squares(&rows, &y);
    for (got, want) in m.mean().iter().zip(&ols) {
        assert!((got - want).abs() < 1e-6, "{:?} vs {ols:?}", m.mean());
    }
    assert!((m.mean()[0] - 0.3).abs() < 1e-6 && (m.mean()[1] - 0.05).abs() < 1e-6);
    // Width carries no weight in the generator.
    assert!((m.predict_cost(0, 3, 8) - m.predict_cost(0, 3, 4)).abs() < 1e-5);

    let mut doubled = LatencyModel::new(&[(1.0, 1.0)], 1e-10, DEFAULT_NOISE_PRECISION).unwrap();
    let twice: Vec<_> = obs.iter().chain(&obs).copied().collect();
    doubled.fit(&twice).unwrap();
    for (a, b) in doubled.mean().iter().zip(m.mean()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn latency_prior_only_and_holdout() {
    let m = LatencyModel::new(&[(0.3, 0.0)], 1.0, 25.0).unwrap();
    assert!((m.predict_cost(0, 2, 1) - 0.6).abs() < 1e-12);
    assert_eq!(LatencyModel::new(&[(0.0, 0.0)], 1.0, 25.0).unwrap().predict_cost(0, 3, 1), MIN_COST);

    let models = [ModelSpec::neural("a", 0.8, 0.45, 0.1), ModelSpec::neural("b", 0.7, 0.3, 0.1)];
    let truth = make_corpus(5, 4000, 0.2).unwrap();
    let mut r = rng(9);
    let mut trace = Vec::new();
    for i in 0..400 {
        let c = i % 2;
        let k = r.random_range(1..6);
        let d = draft_step(&models[c], &truth, i * 5, k, &mut r).unwrap();
        trace.push((CallFeatures { config: c, k, width: r.random_range(1..4) }, d.cost_units));
    }
    let (train, hold) = trace.split_at(300);
    let mut lm = LatencyModel::new(&[(0.5, 0.0), (0.5, 0.0)], 1.0, 25.0).unwrap();
    lm.fit(train).unwrap();
    for (f, cost) in hold {
        let p = lm.predict_cost(f.config, f.k, f.width);
        assert!((p - cost).abs() <= 0.05 * cost, "{f:?}: {p} vs {cost}");
    }
}

proptest! {
    #[test]
    fn latency_posterior_stays_positive_definite(obs in prop::collection::vec((0usize..3, 1usize..10, 0usize..6, 0.0..2.0f64), 1..60)) {
        let mut m = LatencyModel::new(&[(0.4, 0.0), (0.2, 0.0), (0.01, 0.0)], DEFAULT_PRIOR_PRECISION, DEFAULT_NOISE_PRECISION).unwrap();
        for (config, k, width, cost) in obs {
            m.observe(CallFeatures { config, k, width }, cost).unwrap();
            prop_assert!(m.is_positive_definite());
        }
        m.refresh().unwrap();
        let d = m.dim();
        let cov = m.covariance().unwrap();
        for i in 0..d {
            prop_assert!(cov[i * d + i] > 0.0);
            for j in 0..d {
                prop_assert!((cov[i * d + j] - cov[j * d + i]).abs() <= 1e-9 * cov[i * d + i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn prompt_lookup_only_copies_continuations(seed in any::<u64>(), len in 1usize..120, max_ngram in 2usize..5, k in 1usize..8) {
        let mut r = rng(seed);
        let prefix: Vec<Token> = (0..len).map(|_| r.random_range(0..4)).collect();
        let d = pld_draft(&prefix, max_ngram, k, DEFAULT_PLD_COST);
        prop_assert_eq!(d.cost_units, DEFAULT_PLD_COST);
        prop_assert_eq!(d.tokens.len(), d.confidences.len());
        if !d.is_empty() {
            prop_assert!(d.tokens.len() <= k);
            let n = (d.confidences[0] * max_ngram as f64).round() as usize;
            prop_assert!(n >= 2 && n <= max_ngram);
            let suffix = &prefix[len - n..];
            // Some earlier occurrence of the suffix is followed by exactly the draft.
            let ok = (0..len - n).any(|s| {
                &prefix[s..s + n] == suffix && prefix[s + n..].starts_with(&d.tokens)
            });
            prop_assert!(ok);
        }
    }
}

#[test]
fn first_token_frequency_matches_alpha() {
    let m = ModelSpec::neural("d", 0.8, 0.3, 0.1);
    let truth = make_corpus(2, 20_000, 0.0).unwrap();
    let mut r = rng(4);
    let trials = 1_000_000;
    let mut hits = 0u64;
    for i in 0..trials {
        let pos = i % (truth.len() - 8);
        let d = draft_step(&m, &truth, pos, 4, &mut r).unwrap();
        hits += (d.tokens[0] == truth.tokens()[pos]) as u64;
    }
    let rate = hits as f64 / trials as f64;
    assert!((rate - 0.8).abs() < 0.002, "{rate}");
}

#[test]
fn accepted_length_matches_geometric_expectation() {
    let m = ModelSpec::statistical("d", 0.8, 0.1);
    let truth = make_corpus(6, 20_000, 0.0).unwrap();
    let mut r = rng(5);
    let trials = 1_000_000;
    let mut total = 0usize;
    for i in 0..trials {
        let pos = i % (truth.len() - 8);
        let d = draft_step(&m, &truth, pos, 5, &mut r).unwrap();
        total += verify_path(&truth, pos, &d.tokens).unwrap().0 + 1;
    }
    let mean = total as f64 / trials as f64;
    let want = (1.0 - 0.8f64.powi(6)) / 0.2;
    assert!((mean / want - 1.0).abs() < 0.005, "{mean} vs {want}");
}

#[test]
fn prompt_lookup_rate_on_half_repetitive_text() {
    // Per position: a lookup miss drafts nothing and counts as not accepted.
    let s = make_corpus(1, 100_000, 0.5).unwrap();
    let mut idx = PldIndex::new(DEFAULT_MAX_NGRAM);
    let mut hits = 0usize;
    for pos in 0..s.len() - 1 {
        let d = idx.draft(&[], DEFAULT_MAX_NGRAM, 1, DEFAULT_PLD_COST);
        hits += (d.tokens.first() == Some(&s.tokens()[pos])) as usize;
        idx.push(s.tokens()[pos]);
    }
    let rate = hits as f64 / (s.len() - 1) as f64;
    assert!((0.1..=0.6).contains(&rate), "{rate}");
}

#[test]
fn layered_hierarchy_is_valid() {
    let h = Hierarchy::new(vec![
        ModelSpec::neural("d1", 0.75, 0.45, 0.1),
        ModelSpec::neural("d2", 0.6, 0.3, 0.1),
        ModelSpec::pld("pld", 0.3),
    ]);
    assert!(validate_hierarchy(&h).is_empty());
    let bad = Hierarchy::new(vec![ModelSpec::neural("d1", 0.75, 0.3, 0.1), ModelSpec::neural("d2", 0.6, 0.45, 0.1)]);
    let v = validate_hierarchy(&bad);
    assert!(v.contains(&Violation::CostOrder { upper: "d1".into(), lower: "d2".into() }));
    assert!(v.contains(&Violation::BottomKind { model: "d2".into() }));
}
