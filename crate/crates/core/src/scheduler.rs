//! Draft-tree schedulers: the dynamic tree cascade, its greedy baseline and
//! fixed-pattern plans.
//!
//! Each expansion of the dynamic scheduler picks a configuration and draft
//! length `k` maximizing
//!
//! ```text
//! T(S, k) = (E_S(k) + a_S^k * a_bottom) / (cost_S(k) + cost_bottom)
//! E_S(k)  = a_S (1 - a_S^k) / (1 - a_S)        (k when a_S = 1)
//! ```
//!
//! which credits a step with the tokens the bottom drafter could still add
//! afterwards. The greedy baseline maximizes `E_S(k) / cost_S(k)` instead.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::hierarchy::{DraftResult, Hierarchy, ModelId, ModelKind};
use crate::math::{geometric_sum, powi, UNIT_EPS};
use crate::tree::{DraftTree, NodeId, DEFAULT_MAX_SIZE};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const DEFAULT_K_MAX: usize = 5;
pub const DEFAULT_T_MIN: f64 = 1.1;
pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_TOP_P: f64 = 0.2;

/// How a configuration drafts.
#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Single(ModelId),
    /// `top` drafts by verifying rounds of `inner_k` tokens from `inner`.
    Vc { top: ModelId, inner: Box<Structure>, inner_k: usize },
}

impl Structure {
    /// Model whose estimator the configuration uses.
    pub fn key(&self) -> ModelId {
        match self {
            Structure::Single(m) => *m,
            Structure::Vc { top, .. } => *top,
        }
    }

    /// Number of models stacked in the configuration.
    pub fn levels(&self) -> usize {
        match self {
            Structure::Single(_) => 1,
            Structure::Vc { inner, .. } => 1 + inner.levels(),
        }
    }

    pub fn label(&self, h: &Hierarchy) -> String {
        match self {
            Structure::Single(m) => h.model(*m).id.clone(),
            Structure::Vc { top, inner, .. } => format!("vc({},{})", h.model(*top).id, inner.label(h)),
        }
    }

    fn bottom_model(&self) -> ModelId {
        match self {
            Structure::Single(m) => *m,
            Structure::Vc { inner, .. } => inner.bottom_model(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateConfig {
    pub id: usize,
    pub structure: Structure,
    pub label: String,
}

/// Nominal cost of drafting `k` tokens with `s`: per-token cost for model
/// drafters, the flat charge for prompt lookup, and for a vertical cascade
/// the expected number of rounds times the cost of one round.
pub fn nominal_cost(h: &Hierarchy, s: &Structure, k: usize) -> f64 {
    match s {
        Structure::Single(m) => {
            let spec = h.model(*m);
            match spec.kind {
                ModelKind::NgramPld => spec.cost,
                _ => spec.cost * k as f64,
            }
        }
        Structure::Vc { top, inner, inner_k } => {
            let per_round = geometric_sum(h.model(inner.key()).alpha.mean(), *inner_k as u32);
            let round_cost = h.model(*top).cost + nominal_cost(h, inner, *inner_k);
            k as f64 / per_round * round_cost
        }
    }
}

/// Inner draft length of a vertical cascade maximizing top-model tokens per
/// unit cost of a round, over `1..=k_max`.
pub fn vc_inner_k(h: &Hierarchy, top: ModelId, inner: &Structure, k_max: usize) -> usize {
    let alpha = h.model(inner.key()).alpha.mean();
    let c_top = h.model(top).cost;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_max.max(1) {
        let rate = geometric_sum(alpha, k as u32) / (c_top + nominal_cost(h, inner, k));
        if rate > best.1 {
            best = (k, rate);
        }
    }
    best.0
}

/// Candidate configurations: every model alone, each non-bottom model over
/// the bottom, and (optionally) each ordered pair of non-bottom models over
/// the bottom.
pub fn candidate_configs(h: &Hierarchy, k_max: usize, three_level: bool) -> Vec<CandidateConfig> {
    let bottom = h.bottom_id();
    let mut out: Vec<Structure> = h.ids().map(Structure::Single).collect();
    let uppers: Vec<ModelId> = h.ids().filter(|&m| m != bottom && h.model(m).kind != ModelKind::NgramPld).collect();
    let vc = |top: ModelId, inner: Structure| {
        let inner_k = vc_inner_k(h, top, &inner, k_max);
        Structure::Vc { top, inner: Box::new(inner), inner_k }
    };
    for &m in &uppers {
        out.push(vc(m, Structure::Single(bottom)));
    }
    if three_level {
        for (i, &a) in uppers.iter().enumerate() {
            for &b in &uppers[i + 1..] {
                out.push(vc(a, vc(b, Structure::Single(bottom))));
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(id, structure)| CandidateConfig { id, label: structure.label(h), structure })
        .collect()
}

/// Candidate id of the bottom model alone.
pub fn bottom_config(h: &Hierarchy, candidates: &[CandidateConfig]) -> Result<usize> {
    candidates
        .iter()
        .position(|c| c.structure == Structure::Single(h.bottom_id()))
        .ok_or_else(|| Error::InvalidScheduler("candidate list lacks the bottom model".into()))
}

/// Checks that every candidate references existing models and bottoms out
/// at the hierarchy's bottom model.
pub fn validate_candidates(h: &Hierarchy, candidates: &[CandidateConfig]) -> Result<()> {
    fn models_exist(h: &Hierarchy, s: &Structure) -> bool {
        match s {
            Structure::Single(m) => m.0 < h.len(),
            Structure::Vc { top, inner, .. } => {
                top.0 < h.len() && h.model(*top).kind != ModelKind::NgramPld && models_exist(h, inner)
            }
        }
    }
    for c in candidates {
        if !models_exist(h, &c.structure) {
            return Err(Error::InvalidScheduler(format!("candidate `{}` references an unusable model", c.label)));
        }
        if matches!(c.structure, Structure::Vc { .. }) && c.structure.bottom_model() != h.bottom_id() {
            return Err(Error::InvalidScheduler(format!("candidate `{}` does not end at the bottom model", c.label)));
        }
    }
    Ok(())
}

/// Tree-expansion stop threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopThreshold {
    Fixed(f64),
    /// The best plain speculative EWIF of the bottom model under the current
    /// estimates: expansion stops once the bottom model could no longer beat
    /// drafting with itself alone.
    BottomSdOptimum,
}

/// Source of acceptance estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EstimateMode {
    /// Windowed EMA of first-token outcomes plus regression cost predictions.
    Online,
    /// True acceptance profiles and nominal costs.
    Perfect,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SchedulerParams {
    pub k_max: usize,
    pub t_min: StopThreshold,
    pub max_size: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub calibration_steps: usize,
    pub estimates: EstimateMode,
    /// Use token-level confidences as edge values when a drafter has them.
    pub use_confidence: bool,
    pub three_level: bool,
    /// Adds this verification cost to the greedy denominator.
    pub greedy_verify_cost: Option<f64>,
    /// With online estimates, a cycle that would draft nothing instead drafts
    /// one token with the bottom model so its estimate can recover.
    pub idle_probe: bool,
    pub window: usize,
    pub lambda: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            t_min: StopThreshold::Fixed(DEFAULT_T_MIN),
            max_size: DEFAULT_MAX_SIZE,
            top_k: DEFAULT_TOP_K,
            top_p: DEFAULT_TOP_P,
            calibration_steps: 0,
            estimates: EstimateMode::Online,
            use_confidence: true,
            three_level: true,
            greedy_verify_cost: None,
            idle_probe: true,
            window: crate::estimation::DEFAULT_WINDOW,
            lambda: crate::estimation::DEFAULT_LAMBDA,
        }
    }
}

impl SchedulerParams {
    /// True estimates, no token confidences and no siblings.
    pub fn perfect() -> Self {
        Self { estimates: EstimateMode::Perfect, use_confidence: false, top_k: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::domain("k_max", 0.0, "[1, inf)"));
        }
        if let StopThreshold::Fixed(t) = self.t_min {
            if !(t > 0.0) {
                return Err(Error::domain("t_min", t, "(0, inf)"));
            }
        }
        if self.max_size < 2 {
            return Err(Error::domain("max_size", self.max_size as f64, "[2, inf)"));
        }
        if self.top_k == 0 {
            return Err(Error::domain("top_k", 0.0, "[1, inf)"));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(Error::domain("top_p", self.top_p, "[0, 1]"));
        }
        if self.window == 0 {
            return Err(Error::domain("window", 0.0, "[1, inf)"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::domain("lambda", self.lambda, "[0, 1]"));
        }
        Ok(())
    }
}

/// Expected accepted tokens of a `k`-token draft with per-token rate `alpha`.
pub fn expected_accepted(alpha: f64, k: usize) -> f64 {
    if (1.0 - alpha).abs() < UNIT_EPS {
        k as f64
    } else {
        alpha * (1.0 - powi(alpha, k as u32)) / (1.0 - alpha)
    }
}

/// The dynamic objective for one `(S, k)`; `None` when the denominator vanishes.
pub fn dytc_objective(alpha: f64, cost_k: f64, k: usize, alpha_dn: f64, cost_dn: f64) -> Option<f64> {
    let den = cost_k + cost_dn;
    (den.abs() > 1e-12).then(|| (expected_accepted(alpha, k) + powi(alpha, k as u32) * alpha_dn) / den)
}

/// The greedy local objective, optionally with a verification term.
pub fn greedy_objective(alpha: f64, cost_k: f64, k: usize, verify_cost: Option<f64>) -> Option<f64> {
    let den = cost_k + verify_cost.unwrap_or(0.0);
    (den.abs() > 1e-12).then(|| expected_accepted(alpha, k) / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Dytc,
    Greedy { verify_cost: Option<f64> },
}

/// One evaluated `(configuration, k)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Evaluated {
    pub config: usize,
    pub k: usize,
    pub objective: f64,
}

/// Winner and best pair of any other configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Choice {
    pub best: Option<Evaluated>,
    pub runner_up: Option<Evaluated>,
}

/// Argmax over `config < n` and `k` in `1..=k_max`. Ties go to the lower `k`,
/// then the earlier configuration. No winner when the best value is `<= 0`.
pub fn find_best_config_by(
    n: usize,
    alpha: impl Fn(usize) -> f64,
    cost: impl Fn(usize, usize) -> f64,
    alpha_dn: f64,
    cost_dn: f64,
    k_max: usize,
    objective: Objective,
) -> Choice {
    let mut per_config: Vec<Option<Evaluated>> = vec![None; n];
    let mut best: Option<Evaluated> = None;
    for k in 1..=k_max {
        for (c, slot) in per_config.iter_mut().enumerate() {
            let a = alpha(c);
            let ck = cost(c, k);
            let value = match objective {
                Objective::Dytc => dytc_objective(a, ck, k, alpha_dn, cost_dn),
                Objective::Greedy { verify_cost } => greedy_objective(a, ck, k, verify_cost),
            };
            let Some(value) = value else { continue };
            let e = Evaluated { config: c, k, objective: value };
            if slot.is_none_or(|s| value > s.objective) {
                *slot = Some(e);
            }
            if best.is_none_or(|b| value > b.objective) {
                best = Some(e);
            }
        }
    }
    let Some(b) = best.filter(|b| b.objective > 0.0) else {
        return Choice::default();
    };
    let mut runner_up: Option<Evaluated> = None;
    for e in per_config.into_iter().flatten().filter(|e| e.config != b.config) {
        if runner_up.is_none_or(|r| e.objective > r.objective || e.objective == r.objective && e.k < r.k) {
            runner_up = Some(e);
        }
    }
    Choice { best: Some(b), runner_up }
}

/// Dynamic argmax with constant per-token costs `costs[c]`.
pub fn find_best_config(alphas: &[f64], costs: &[f64], alpha_dn: f64, cost_dn: f64, k_max: usize) -> Result<Choice> {
    if alphas.is_empty() || alphas.len() != costs.len() {
        return Err(Error::InvalidScheduler("need one cost per candidate and at least one candidate".into()));
    }
    if k_max == 0 {
        return Err(Error::domain("k_max", 0.0, "[1, inf)"));
    }
    for &a in alphas.iter().chain([&alpha_dn]) {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::domain("alpha estimate", a, "[0, 1]"));
        }
    }
    for &c in costs.iter().chain([&cost_dn]) {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::domain("cost estimate", c, "[0, inf)"));
        }
    }
    Ok(find_best_config_by(
        alphas.len(),
        |c| alphas[c],
        |c, k| costs[c] * k as f64,
        alpha_dn,
        cost_dn,
        k_max,
        Objective::Dytc,
    ))
}

/// Acceptance and cost estimates seen by a scheduler.
pub trait Estimates {
    fn alpha(&self, config: usize) -> f64;
    /// Predicted cost of drafting `k` tokens at parallel width `width`.
    fn cost(&self, config: usize, k: usize, width: usize) -> f64;
}

/// Requested draft length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DraftLen {
    /// `k` tokens; a vertical cascade keeps running rounds until it has at
    /// least `k` tokens or a round accepts nothing.
    Tokens(usize),
    /// Exactly `n` rounds of a vertical cascade.
    Rounds(usize),
}

/// Produces drafts for tree leaves.
pub trait DraftSource {
    fn draft(&mut self, tree: &DraftTree, leaf: NodeId, structure: &Structure, len: DraftLen, top_k: usize) -> DraftResult;
}

/// Why tree generation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    NoActiveLeaf,
    Threshold,
    NoConfig,
    TreeFull,
    Plan,
}

/// One draft call made while building a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub leaf: NodeId,
    /// Candidate (dynamic schedulers) or plan stage (static plans).
    pub config: usize,
    pub k: usize,
    pub width: usize,
    pub objective: Option<f64>,
    pub runner_up: Option<Evaluated>,
    /// First drafted node, if any token was drafted and fit.
    pub first: Option<NodeId>,
    pub drafted: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub expansions: Vec<Expansion>,
    pub stop: StopReason,
    pub t_min: f64,
}

/// Inputs shared by the dynamic schedulers.
#[derive(Debug, Clone, Copy)]
pub struct TreeContext<'a> {
    pub candidates: &'a [CandidateConfig],
    pub bottom: usize,
    pub params: &'a SchedulerParams,
}

impl TreeContext<'_> {
    fn t_min(&self, est: &impl Estimates) -> f64 {
        match self.params.t_min {
            StopThreshold::Fixed(t) => t,
            StopThreshold::BottomSdOptimum => {
                let a = est.alpha(self.bottom);
                (1..=self.params.k_max)
                    .map(|k| geometric_sum(a, k as u32) / (1.0 + est.cost(self.bottom, k, 1)))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }
}

fn parallel_width(tree: &DraftTree, leaf: NodeId) -> usize {
    match tree.node(leaf).parent {
        None => 1,
        Some(p) => tree.children(p).filter(|&c| tree.node(c).active).count().max(1),
    }
}

/// Dynamic tree cascade generation.
pub fn dytc_generate<E: Estimates, S: DraftSource>(
    tree: &mut DraftTree,
    cx: &TreeContext<'_>,
    est: &E,
    source: &mut S,
) -> Generation {
    generate_tree(tree, cx, est, source, Objective::Dytc)
}

/// Greedy local-speedup generation with the same loop and stop rule.
pub fn greedy_schedule<E: Estimates, S: DraftSource>(
    tree: &mut DraftTree,
    cx: &TreeContext<'_>,
    est: &E,
    source: &mut S,
) -> Generation {
    let verify_cost = cx.params.greedy_verify_cost;
    generate_tree(tree, cx, est, source, Objective::Greedy { verify_cost })
}

/// The expansion loop: take the active leaf with the highest accumulated
/// acceptance, stop once `(a_bottom / cost_bottom) * p_acc < t_min`, else
/// draft with the best configuration and hang the result below the leaf.
pub fn generate_tree<E: Estimates, S: DraftSource>(
    tree: &mut DraftTree,
    cx: &TreeContext<'_>,
    est: &E,
    source: &mut S,
    objective: Objective,
) -> Generation {
    let p = cx.params;
    let t_min = cx.t_min(est);
    let alpha_dn = est.alpha(cx.bottom);
    let cost_dn = est.cost(cx.bottom, 1, 1);
    let mut expansions = Vec::new();
    let stop = loop {
        if tree.is_full() {
            break StopReason::TreeFull;
        }
        let Some(leaf) = tree.best_active_leaf() else {
            break StopReason::NoActiveLeaf;
        };
        if alpha_dn / cost_dn * tree.node(leaf).p_acc < t_min {
            tree.deactivate(leaf);
            break StopReason::Threshold;
        }
        let width = parallel_width(tree, leaf);
        let choice = find_best_config_by(
            cx.candidates.len(),
            |c| est.alpha(c),
            |c, k| est.cost(c, k, width),
            alpha_dn,
            cost_dn,
            p.k_max,
            objective,
        );
        let Some(best) = choice.best else {
            tree.deactivate(leaf);
            break StopReason::NoConfig;
        };
        let structure = &cx.candidates[best.config].structure;
        let draft = source.draft(tree, leaf, structure, DraftLen::Tokens(best.k), p.top_k);
        tree.deactivate(leaf);
        let first = attach(tree, leaf, &draft, est.alpha(best.config), best.config, p);
        expansions.push(Expansion {
            leaf,
            config: best.config,
            k: best.k,
            width,
            objective: Some(best.objective),
            runner_up: choice.runner_up,
            first,
            drafted: draft.len(),
            cost: draft.cost_units,
        });
    };
    Generation { expansions, stop, t_min }
}

/// Hangs a draft below `leaf`; returns the first drafted node.
fn attach(tree: &mut DraftTree, leaf: NodeId, d: &DraftResult, alpha: f64, config: usize, p: &SchedulerParams) -> Option<NodeId> {
    let alphas: Vec<f64> = if p.use_confidence && d.token_confidence {
        d.confidences.clone()
    } else {
        vec![alpha; d.len()]
    };
    if p.top_k > 1 && !d.rows.is_empty() {
        tree.sibling_expand(leaf, &d.rows, &alphas, p.top_p, p.top_k, config).0.first().copied()
    } else {
        tree.add_chain(leaf, &d.tokens, &alphas, config).first().copied()
    }
}

/// Fixed drafting patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "plan", rename_all = "snake_case"))]
pub enum StaticPlan {
    /// `k` tokens from one model.
    Sd { model: ModelId, k: usize },
    /// `k1` tokens from `d1`, then `k2` from `d2`.
    Hc { d1: ModelId, k1: usize, d2: ModelId, k2: usize },
    /// `n` rounds in which `top` verifies `k` tokens of `inner`.
    Vc { top: ModelId, inner: ModelId, n: usize, k: usize },
    /// A vertical cascade followed by `k_tail` tokens from `tail`.
    HcVc { top: ModelId, inner: ModelId, n: usize, k: usize, tail: ModelId, k_tail: usize },
    /// `k` tokens from one model with sibling alternatives.
    ChainTree { model: ModelId, k: usize },
}

impl StaticPlan {
    pub fn validate(&self, h: &Hierarchy) -> Result<()> {
        let exists = |m: ModelId| {
            if m.0 < h.len() {
                Ok(())
            } else {
                Err(Error::UnknownModel(format!("#{}", m.0)))
            }
        };
        let verifier = |m: ModelId| {
            exists(m)?;
            if h.model(m).kind == ModelKind::NgramPld {
                Err(Error::InvalidScheduler(format!("`{}` cannot verify a cascade", h.model(m).id)))
            } else {
                Ok(())
            }
        };
        let positive = |name: &'static str, v: usize| {
            if v == 0 {
                Err(Error::domain(name, 0.0, "[1, inf)"))
            } else {
                Ok(())
            }
        };
        match *self {
            StaticPlan::Sd { model, k } | StaticPlan::ChainTree { model, k } => {
                exists(model)?;
                positive("k", k)
            }
            StaticPlan::Hc { d1, k1, d2, k2 } => {
                exists(d1)?;
                exists(d2)?;
                positive("k1 + k2", k1 + k2)
            }
            StaticPlan::Vc { top, inner, n, .. } => {
                verifier(top)?;
                exists(inner)?;
                positive("n", n)
            }
            StaticPlan::HcVc { top, inner, n, tail, .. } => {
                verifier(top)?;
                exists(inner)?;
                exists(tail)?;
                positive("n", n)
            }
        }
    }

    /// Short name, e.g. `hc(d1:2,d2:2)`.
    pub fn label(&self, h: &Hierarchy) -> String {
        let id = |m: ModelId| h.model(m).id.clone();
        match *self {
            StaticPlan::Sd { model, k } => format!("sd({}:{k})", id(model)),
            StaticPlan::Hc { d1, k1, d2, k2 } => format!("hc({}:{k1},{}:{k2})", id(d1), id(d2)),
            StaticPlan::Vc { top, inner, n, k } => format!("vc({},{};n={n},k={k})", id(top), id(inner)),
            StaticPlan::HcVc { top, inner, n, k, tail, k_tail } => {
                format!("hcvc({},{};n={n},k={k};{}:{k_tail})", id(top), id(inner), id(tail))
            }
            StaticPlan::ChainTree { model, k } => format!("tree({}:{k})", id(model)),
        }
    }

    /// Draft stages as `(structure, length)`.
    pub fn stages(&self) -> Vec<(Structure, DraftLen)> {
        let vc = |top, inner, k| Structure::Vc { top, inner: Box::new(Structure::Single(inner)), inner_k: k };
        match *self {
            StaticPlan::Sd { model, k } | StaticPlan::ChainTree { model, k } => {
                vec![(Structure::Single(model), DraftLen::Tokens(k))]
            }
            StaticPlan::Hc { d1, k1, d2, k2 } => {
                let mut v = Vec::new();
                if k1 > 0 {
                    v.push((Structure::Single(d1), DraftLen::Tokens(k1)));
                }
                if k2 > 0 {
                    v.push((Structure::Single(d2), DraftLen::Tokens(k2)));
                }
                v
            }
            StaticPlan::Vc { top, inner, n, k } => vec![(vc(top, inner, k), DraftLen::Rounds(n))],
            StaticPlan::HcVc { top, inner, n, k, tail, k_tail } => {
                let mut v = vec![(vc(top, inner, k), DraftLen::Rounds(n))];
                if k_tail > 0 {
                    v.push((Structure::Single(tail), DraftLen::Tokens(k_tail)));
                }
                v
            }
        }
    }
}

/// Builds the fixed-pattern tree of `plan`: each stage drafts from the tip
/// of the previous one. Sibling alternatives are only used by chain trees.
pub fn static_schedule<S: DraftSource>(
    plan: &StaticPlan,
    tree: &mut DraftTree,
    source: &mut S,
    top_k: usize,
    top_p: f64,
) -> Generation {
    let with_siblings = matches!(plan, StaticPlan::ChainTree { .. }) && top_k > 1;
    let params = SchedulerParams { top_k: if with_siblings { top_k } else { 1 }, top_p, ..SchedulerParams::default() };
    let mut expansions = Vec::new();
    let mut tip = NodeId::ROOT;
    let mut stop = StopReason::Plan;
    for (stage, (structure, len)) in plan.stages().into_iter().enumerate() {
        if tree.is_full() {
            stop = StopReason::TreeFull;
            break;
        }
        let draft = source.draft(tree, tip, &structure, len, params.top_k);
        tree.deactivate(tip);
        let alphas = draft.confidences.clone();
        let chain = if with_siblings && !draft.rows.is_empty() {
            tree.sibling_expand(tip, &draft.rows, &alphas, top_p, top_k, stage).0
        } else {
            tree.add_chain(tip, &draft.tokens, &alphas, stage)
        };
        let k = match len {
            DraftLen::Tokens(k) | DraftLen::Rounds(k) => k,
        };
        expansions.push(Expansion {
            leaf: tip,
            config: stage,
            k,
            width: 1,
            objective: None,
            runner_up: None,
            first: chain.first().copied(),
            drafted: draft.len(),
            cost: draft.cost_units,
        });
        match chain.last() {
            Some(&last) if chain.len() == draft.len() => tip = last,
            _ => {
                // Truncated or empty: later stages would draft past a gap.
                if tree.is_full() {
                    stop = StopReason::TreeFull;
                }
                break;
            }
        }
    }
    Generation { expansions, stop, t_min: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eq5_pick_counterexample_pair() {
        let c = find_best_config(&[0.9, 0.8], &[0.4, 0.3], 0.3, 0.01, 5).unwrap();
        let b = c.best.unwrap();
        assert_eq!((b.config, b.k), (1, 1));
        assert!((b.objective - 1.04 / 0.31).abs() < 1e-12);
        assert_eq!(c.runner_up.unwrap().config, 0);
    }

    #[test]
    fn eq5_unit_alpha_guard() {
        let b = find_best_config(&[1.0], &[0.5], 0.0, 0.01, 3).unwrap().best.unwrap();
        assert_eq!(b.k, 3);
        assert!((b.objective - 3.0 / 1.51).abs() < 1e-12);
    }

    #[test]
    fn eq5_nothing_beneficial() {
        let c = find_best_config(&[0.0, 0.0], &[0.4, 0.3], 0.0, 0.01, 5).unwrap();
        assert_eq!(c.best, None);
    }

    #[test]
    fn greedy_prefers_cheaper_model() {
        let c = find_best_config_by(
            2,
            |c| [0.9, 0.8][c],
            |c, k| [0.4, 0.3][c] * k as f64,
            0.8,
            0.3,
            5,
            Objective::Greedy { verify_cost: None },
        );
        assert_eq!(c.best.map(|b| (b.config, b.k)), Some((1, 1)));
    }

    #[test]
    fn plan_stages() {
        let hc0 = StaticPlan::Hc { d1: ModelId(0), k1: 0, d2: ModelId(1), k2: 3 };
        let sd = StaticPlan::Sd { model: ModelId(1), k: 3 };
        assert_eq!(hc0.stages(), sd.stages());
    }
}
