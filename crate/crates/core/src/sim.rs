//! Decode sessions, cost ledger, scenario presets and paired ensembles.
//!
//! Cost units: one target forward (one verification of a whole tree) is 1,
//! a model drafter charges its cost per drafted token and prompt lookup a
//! flat cost per call. Empirical EWIF is generated tokens per cost unit, so
//! autoregressive decoding scores exactly 1.
//!
//! Every session derives its target stream from the seed alone, so sessions
//! of different schedulers under one seed are paired.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::estimation::{
    heuristic_priors, record_first_token_outcome, CallFeatures, ConfigCatalog, LatencyModel,
    DEFAULT_NOISE_PRECISION, DEFAULT_PRIOR_PRECISION,
};
use crate::hierarchy::{
    alternatives, make_corpus_with_vocab, sample_token, validate_hierarchy, AlphaProfile, CandidateRow,
    DraftResult, Hierarchy, ModelId, ModelKind, ModelSpec, PldIndex, Token, TokenStream, DEFAULT_VOCAB,
};
use crate::math::sqrt;
use crate::rng::{derive_seed, stream_rng, SimRng, Stream};
use crate::scheduler::{
    bottom_config, candidate_configs, dytc_generate, greedy_schedule, nominal_cost, static_schedule, CandidateConfig,
    DraftLen, DraftSource, EstimateMode, Estimates, Evaluated, Generation, SchedulerParams, StaticPlan, StopReason,
    Structure, TreeContext,
};
use crate::tree::{DraftTree, NodeId, DEFAULT_MAX_SIZE};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default session length in generated tokens.
pub const DEFAULT_HORIZON: usize = 1024;
/// Stand-in for stream positions past the end of the target stream.
const PAST_END: Token = Token::MAX;

/// Target-stream generator settings (the seed comes from the session).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CorpusSpec {
    pub repeat_bias: f64,
    pub vocab: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { repeat_bias: 0.0, vocab: DEFAULT_VOCAB }
    }
}

/// One piece of a mixture regime: per-model acceptance from `start` on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RegimeSegment {
    pub start: usize,
    pub alphas: Vec<f64>,
}

/// How acceptance rates evolve over the stream.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Regime {
    #[default]
    Stationary,
    /// Every model switches to `alphas[i]` at `step`.
    Shift { step: usize, alphas: Vec<f64> },
    Mixture { segments: Vec<RegimeSegment> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub corpus: CorpusSpec,
    pub hierarchy: Hierarchy,
    pub regime: Regime,
    pub horizon: usize,
}

impl Scenario {
    pub fn new(name: impl Into<String>, hierarchy: Hierarchy) -> Self {
        Self {
            name: name.into(),
            corpus: CorpusSpec::default(),
            hierarchy,
            regime: Regime::Stationary,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_corpus(mut self, corpus: CorpusSpec) -> Self {
        self.corpus = corpus;
        self
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidScenario("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.corpus.repeat_bias) {
            return Err(Error::InvalidScenario("repeat_bias must lie in [0, 1]".into()));
        }
        if self.corpus.vocab < 2 {
            return Err(Error::InvalidScenario("vocab must be at least 2".into()));
        }
        let n = self.hierarchy.len();
        let check = |alphas: &[f64]| {
            if alphas.len() != n {
                return Err(Error::InvalidScenario(alloc::format!(
                    "regime lists {} alphas for {n} models",
                    alphas.len()
                )));
            }
            if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::InvalidScenario("regime alphas must lie in [0, 1]".into()));
            }
            Ok(())
        };
        match &self.regime {
            Regime::Stationary => {}
            Regime::Shift { step, alphas } => {
                if *step >= self.horizon {
                    return Err(Error::InvalidScenario("shift step must be below the horizon".into()));
                }
                check(alphas)?;
            }
            Regime::Mixture { segments } => {
                for s in segments {
                    check(&s.alphas)?;
                }
            }
        }
        if let Some(v) = validate_hierarchy(&self.compiled_hierarchy()).first() {
            return Err(Error::InvalidScenario(v.to_string()));
        }
        Ok(())
    }

    /// The hierarchy with the regime folded into each model's profile.
    pub fn compiled_hierarchy(&self) -> Hierarchy {
        let mut h = self.hierarchy.clone();
        let changes: Vec<(usize, &[f64])> = match &self.regime {
            Regime::Stationary => Vec::new(),
            Regime::Shift { step, alphas } => vec![(*step, alphas.as_slice())],
            Regime::Mixture { segments } => segments.iter().map(|s| (s.start, s.alphas.as_slice())).collect(),
        };
        for (start, alphas) in changes {
            for (m, &a) in h.models.iter_mut().zip(alphas) {
                m.alpha = core::mem::replace(&mut m.alpha, AlphaProfile::constant(0.0)).with_change(start, a);
            }
        }
        h
    }

    /// Positions where any acceptance rate changes, ascending, 0 first.
    pub fn segment_starts(&self) -> Vec<usize> {
        let mut starts: Vec<usize> = self
            .compiled_hierarchy()
            .models
            .iter()
            .flat_map(|m| m.alpha.segments().iter().map(|s| s.start))
            .filter(|&s| s < self.horizon)
            .collect();
        starts.push(0);
        starts.sort_unstable();
        starts.dedup();
        starts
    }
}

/// Names of the built-in scenarios.
pub const PRESETS: [&str; 3] = ["counterexample", "layered", "shift"];

/// Built-in scenarios.
///
/// - `counterexample`: a neural drafter (0.9, cost 0.4) over a statistical
///   bottom (0.8, cost 0.3), where greedy per-step choices are suboptimal.
/// - `layered`: two neural tiers (0.75/0.45 and 0.6/0.3) over prompt lookup.
/// - `shift`: the `counterexample` pair with rates dropping to 0.6/0.5
///   halfway through the stream.
pub fn make_scenario(preset: &str) -> Result<Scenario> {
    let s = match preset {
        "counterexample" => Scenario::new(
            preset,
            Hierarchy::new(vec![ModelSpec::neural("d1", 0.9, 0.4, 0.1), ModelSpec::statistical("d2", 0.8, 0.3)]),
        ),
        "layered" => Scenario::new(
            preset,
            Hierarchy::new(vec![
                ModelSpec::neural("ls04", 0.75, 0.45, 0.15),
                ModelSpec::neural("ls06", 0.6, 0.3, 0.15),
                ModelSpec::pld("pld", 0.3),
            ]),
        )
        .with_corpus(CorpusSpec { repeat_bias: 0.5, vocab: DEFAULT_VOCAB }),
        "shift" => Scenario::new(
            preset,
            Hierarchy::new(vec![ModelSpec::neural("d1", 0.9, 0.4, 0.1), ModelSpec::statistical("d2", 0.8, 0.3)]),
        )
        .with_regime(Regime::Shift { step: DEFAULT_HORIZON / 2, alphas: vec![0.6, 0.5] }),
        _ => return Err(Error::UnknownPreset(preset.into())),
    };
    Ok(s)
}

/// Rescales a scenario to a new horizon, moving regime changes proportionally.
pub fn rescale_horizon(mut s: Scenario, horizon: usize) -> Scenario {
    let scale = |p: usize| ((p as u128 * horizon as u128) / s.horizon.max(1) as u128) as usize;
    s.regime = match s.regime {
        Regime::Stationary => Regime::Stationary,
        Regime::Shift { step, alphas } => Regime::Shift { step: scale(step), alphas },
        Regime::Mixture { segments } => Regime::Mixture {
            segments: segments.into_iter().map(|seg| RegimeSegment { start: scale(seg.start), ..seg }).collect(),
        },
    };
    s.horizon = horizon;
    s
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SchedulerKind {
    Autoregressive,
    Static { plan: StaticPlan, max_size: usize, top_k: usize, top_p: f64 },
    Dytc(SchedulerParams),
    Greedy(SchedulerParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSpec {
    pub name: String,
    pub kind: SchedulerKind,
}

impl SchedulerSpec {
    pub fn autoregressive() -> Self {
        Self { name: "autoregressive".into(), kind: SchedulerKind::Autoregressive }
    }

    /// A static plan named by its label, with default tree settings.
    pub fn fixed(h: &Hierarchy, plan: StaticPlan) -> Self {
        Self {
            name: plan.label(h),
            kind: SchedulerKind::Static {
                plan,
                max_size: DEFAULT_MAX_SIZE,
                top_k: crate::scheduler::DEFAULT_TOP_K,
                top_p: crate::scheduler::DEFAULT_TOP_P,
            },
        }
    }

    pub fn dytc(params: SchedulerParams) -> Self {
        Self { name: "dytc".into(), kind: SchedulerKind::Dytc(params) }
    }

    pub fn greedy(params: SchedulerParams) -> Self {
        Self { name: "greedy".into(), kind: SchedulerKind::Greedy(params) }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self, h: &Hierarchy) -> Result<()> {
        match &self.kind {
            SchedulerKind::Autoregressive => Ok(()),
            SchedulerKind::Static { plan, max_size, top_k, top_p } => {
                plan.validate(h)?;
                if *max_size < 2 {
                    return Err(Error::domain("max_size", *max_size as f64, "[2, inf)"));
                }
                if *top_k == 0 {
                    return Err(Error::domain("top_k", 0.0, "[1, inf)"));
                }
                if !(0.0..=1.0).contains(top_p) {
                    return Err(Error::domain("top_p", *top_p, "[0, 1]"));
                }
                Ok(())
            }
            SchedulerKind::Dytc(p) | SchedulerKind::Greedy(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub log_steps: bool,
    pub log_trees: bool,
    pub log_estimates: bool,
}

/// One draft call in the step log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CallRecord {
    pub config: String,
    pub k: usize,
    pub width: usize,
    pub objective: Option<f64>,
    pub runner_up: Option<String>,
    pub runner_up_k: Option<usize>,
    pub runner_up_objective: Option<f64>,
    pub drafted: usize,
    pub cost: f64,
    pub first_accepted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TreeDumpNode {
    pub parent: Option<u32>,
    pub token: Token,
    pub p_acc: f64,
    pub config: Option<usize>,
}

/// One verify cycle.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepRecord {
    pub step: u64,
    pub position: usize,
    pub calibration: bool,
    pub calls: Vec<CallRecord>,
    pub stop: Option<StopReason>,
    pub t_min: Option<f64>,
    pub tree_size: usize,
    pub accepted: usize,
    /// Draft charges plus the verification unit.
    pub cost: f64,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub estimates: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub tree: Option<Vec<TreeDumpNode>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConfigCount {
    pub config: String,
    pub selected: u64,
}

/// Tokens and cost of the cycles starting inside one regime segment.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SegmentStats {
    pub start: usize,
    pub tokens: usize,
    pub cost_units: f64,
}

impl SegmentStats {
    pub fn ewif(&self) -> f64 {
        if self.cost_units > 0.0 {
            self.tokens as f64 / self.cost_units
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimResult {
    pub scheduler: String,
    pub seed: u64,
    pub tokens_generated: usize,
    pub cost_units: f64,
    pub empirical_ewif: f64,
    pub cycles: u64,
    pub calibration_cycles: u64,
    pub draft_calls: u64,
    pub config_counts: Vec<ConfigCount>,
    pub segments: Vec<SegmentStats>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub steps: Vec<StepRecord>,
    /// Every committed token, including any emitted past the horizon.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub output: Vec<Token>,
}

/// Target stream of a session: the horizon plus slack for drafts and the
/// final bonus token.
pub fn session_truth(scenario: &Scenario, seed: u64, max_size: usize) -> Result<TokenStream> {
    let len = scenario.horizon + 2 * max_size + 64;
    make_corpus_with_vocab(derive_seed(seed, Stream::Truth), len, scenario.corpus.repeat_bias, scenario.corpus.vocab)
}

struct PerfectEstimates<'a> {
    h: &'a Hierarchy,
    candidates: &'a [CandidateConfig],
    position: usize,
}

impl Estimates for PerfectEstimates<'_> {
    fn alpha(&self, config: usize) -> f64 {
        self.h.model(self.candidates[config].structure.key()).alpha.at(self.position)
    }

    fn cost(&self, config: usize, k: usize, _width: usize) -> f64 {
        nominal_cost(self.h, &self.candidates[config].structure, k)
    }
}

struct OnlineEstimates<'a> {
    catalog: &'a ConfigCatalog,
    latency: &'a LatencyModel,
}

impl Estimates for OnlineEstimates<'_> {
    fn alpha(&self, config: usize) -> f64 {
        self.catalog.estimate(config).unwrap_or(0.0)
    }

    fn cost(&self, config: usize, k: usize, width: usize) -> f64 {
        self.latency.predict_cost(config, k, width)
    }
}

/// A model's stream of own tokens at consecutive positions, drawn against
/// the stream one level up.
struct Level {
    model: ModelId,
    base: usize,
    tokens: Vec<Token>,
    confidences: Vec<f64>,
    /// Still equal to the target stream so far (only at level 1).
    on_path: bool,
}

/// Drafting machinery of one session.
///
/// Draws of a model at a position whose prefix is the target's own are
/// memoized within a cycle: re-drafting the same prefix with the same model
/// yields the same token, as a deterministic drafter would.
struct Drafter<'a> {
    h: &'a Hierarchy,
    truth: &'a TokenStream,
    pld: Option<PldIndex>,
    rng: SimRng,
    committed: usize,
    epoch: u64,
    memo: Vec<Vec<(u64, Token, f64)>>,
    memo_rows: Vec<Vec<(u64, CandidateRow)>>,
    levels: Vec<Level>,
    tail: Vec<Token>,
}

impl<'a> Drafter<'a> {
    fn new(h: &'a Hierarchy, truth: &'a TokenStream, seed: u64) -> Self {
        Self {
            h,
            truth,
            pld: h.pld_max_ngram().map(PldIndex::new),
            rng: stream_rng(seed, Stream::Draft),
            committed: 0,
            epoch: 0,
            memo: vec![Vec::new(); h.len()],
            memo_rows: vec![Vec::new(); h.len()],
            levels: Vec::new(),
            tail: Vec::new(),
        }
    }

    fn start_cycle(&mut self) {
        self.epoch += 1;
    }

    fn commit(&mut self, tokens: &[Token]) {
        self.committed += tokens.len();
        if let Some(idx) = &mut self.pld {
            idx.extend(tokens);
        }
    }

    fn truth_at(&self, pos: usize) -> Token {
        self.truth.get(pos).unwrap_or(PAST_END)
    }

    fn memo_slot(&mut self, model: ModelId, pos: usize) -> Option<(Token, f64)> {
        let rel = pos - self.committed;
        match self.memo[model.0].get(rel) {
            Some(&(e, t, c)) if e == self.epoch => Some((t, c)),
            _ => None,
        }
    }

    fn memo_store(&mut self, model: ModelId, pos: usize, token: Token, conf: f64) {
        let rel = pos - self.committed;
        let row = &mut self.memo[model.0];
        if row.len() <= rel {
            row.resize(rel + 1, (0, 0, 0.0));
        }
        row[rel] = (self.epoch, token, conf);
    }

    /// A draw of `model` at `pos` against `expected`, memoized when the
    /// prefix is the target's own.
    fn draw(&mut self, model: ModelId, pos: usize, expected: Token, on_path: bool) -> (Token, f64) {
        if on_path {
            if let Some(hit) = self.memo_slot(model, pos) {
                return hit;
            }
        }
        let spec = self.h.model(model);
        let out = sample_token(spec, spec.effective_noise(), expected, pos, self.truth.vocab(), &mut self.rng);
        if on_path {
            self.memo_store(model, pos, out.0, out.1);
        }
        out
    }

    fn row(&mut self, model: ModelId, pos: usize, token: Token, conf: f64, expected: Token, on_path: bool, top_k: usize) -> CandidateRow {
        let rel = pos - self.committed;
        if on_path {
            if let Some((e, r)) = self.memo_rows[model.0].get(rel) {
                if *e == self.epoch && r.tokens.len() == top_k.min(self.truth.vocab() as usize) {
                    return r.clone();
                }
            }
        }
        let r = alternatives(token, expected, conf, top_k, self.truth.vocab(), &mut self.rng);
        if on_path {
            let rows = &mut self.memo_rows[model.0];
            if rows.len() <= rel {
                rows.resize(rel + 1, (0, CandidateRow { tokens: Vec::new(), probs: Vec::new() }));
            }
            rows[rel] = (self.epoch, r.clone());
        }
        r
    }

    /// Token of reference level `level` at `pos` (level 0 is the target).
    fn reference(&mut self, level: usize, pos: usize) -> Token {
        if level == 0 {
            return self.truth_at(pos);
        }
        let l = &self.levels[level - 1];
        let j = pos - l.base;
        if j < l.tokens.len() {
            return l.tokens[j];
        }
        let (model, base) = (l.model, l.base);
        for p in base + l.tokens.len()..=pos {
            let expected = self.reference(level - 1, p);
            let on_path = self.levels[level - 1].on_path;
            let (t, c) = self.draw(model, p, expected, on_path);
            let l = &mut self.levels[level - 1];
            l.tokens.push(t);
            l.confidences.push(c);
            l.on_path &= t == expected;
        }
        self.levels[level - 1].tokens[j]
    }

    /// Drafts with `s` at `pos`, judged against reference `level`. The
    /// context for prompt lookup is the committed prefix plus `self.tail`.
    fn draft_at(&mut self, s: &Structure, len: DraftLen, level: usize, pos: usize, on_path: bool, top_k: usize) -> DraftResult {
        match s {
            Structure::Single(m) => {
                let spec = self.h.model(*m);
                let k = match len {
                    DraftLen::Tokens(k) | DraftLen::Rounds(k) => k,
                };
                if spec.kind == ModelKind::NgramPld {
                    return match &self.pld {
                        Some(idx) => idx.draft(&self.tail, spec.max_ngram, k, spec.cost),
                        None => DraftResult { cost_units: spec.cost, token_confidence: true, ..DraftResult::default() },
                    };
                }
                let with_rows = level == 0 && top_k > 1 && spec.kind == ModelKind::NeuralSim;
                let mut out = DraftResult {
                    tokens: Vec::with_capacity(k),
                    confidences: Vec::with_capacity(k),
                    cost_units: spec.cost * k as f64,
                    token_confidence: spec.kind == ModelKind::NeuralSim,
                    rows: Vec::new(),
                };
                let mut path = on_path && level == 0;
                for i in 0..k {
                    let p = pos + i;
                    let expected = self.reference(level, p);
                    let (t, c) = self.draw(*m, p, expected, path);
                    if with_rows {
                        let row = self.row(*m, p, t, c, expected, path, top_k);
                        out.rows.push(row);
                    }
                    out.tokens.push(t);
                    out.confidences.push(c);
                    path &= t == expected;
                }
                out
            }
            Structure::Vc { top, inner, inner_k } => {
                let top_spec = self.h.model(*top);
                self.levels.push(Level {
                    model: *top,
                    base: pos,
                    tokens: Vec::new(),
                    confidences: Vec::new(),
                    on_path: on_path && level == 0,
                });
                let own = level + 1;
                let tail_len = self.tail.len();
                let mut out = DraftResult {
                    token_confidence: top_spec.kind == ModelKind::NeuralSim,
                    ..DraftResult::default()
                };
                let mut rounds = 0;
                loop {
                    let at = pos + out.tokens.len();
                    let inner_draft = if *inner_k > 0 {
                        self.draft_at(inner, DraftLen::Tokens(*inner_k), own, at, false, 1)
                    } else {
                        DraftResult::default()
                    };
                    let mut accepted = 0;
                    while accepted < inner_draft.tokens.len()
                        && inner_draft.tokens[accepted] == self.reference(own, at + accepted)
                    {
                        accepted += 1;
                    }
                    for p in at..=at + accepted {
                        let t = self.reference(own, p);
                        let c = self.levels[own - 1].confidences[p - pos];
                        out.tokens.push(t);
                        out.confidences.push(c);
                        self.tail.push(t);
                    }
                    out.cost_units += inner_draft.cost_units + top_spec.cost;
                    rounds += 1;
                    let done = match len {
                        DraftLen::Rounds(n) => rounds >= n,
                        DraftLen::Tokens(k) => out.tokens.len() >= k || accepted == 0,
                    };
                    if done {
                        break;
                    }
                }
                self.tail.truncate(tail_len);
                self.levels.pop();
                out
            }
        }
    }
}

impl DraftSource for Drafter<'_> {
    fn draft(&mut self, tree: &DraftTree, leaf: NodeId, structure: &Structure, len: DraftLen, top_k: usize) -> DraftResult {
        tree.path_tokens(leaf, &mut self.tail);
        let on_path = self.tail.iter().enumerate().all(|(i, &t)| self.truth_at(self.committed + i) == t);
        let pos = self.committed + self.tail.len();
        self.draft_at(structure, len, 0, pos, on_path, top_k)
    }
}

/// Per-session state of the dynamic schedulers.
struct Dynamic {
    params: SchedulerParams,
    candidates: Vec<CandidateConfig>,
    bottom: usize,
    catalog: ConfigCatalog,
    latency: LatencyModel,
    greedy: bool,
}

impl Dynamic {
    fn new(h: &Hierarchy, params: SchedulerParams, greedy: bool) -> Result<Self> {
        params.validate()?;
        let candidates = candidate_configs(h, params.k_max, params.three_level);
        let bottom = bottom_config(h, &candidates)?;
        let keys = candidates.iter().map(|c| c.structure.key()).collect();
        let mut catalog = ConfigCatalog::new(keys, h.len(), params.window, params.lambda)?;
        if params.calibration_steps == 0 {
            let costs: Vec<f64> = h.models.iter().map(|m| m.cost).collect();
            catalog.apply_priors(&heuristic_priors(&costs));
        }
        let nominal: Vec<(f64, f64)> = candidates
            .iter()
            .map(|c| match &c.structure {
                Structure::Single(m) if h.model(*m).kind == ModelKind::NgramPld => (0.0, h.model(*m).cost),
                s => (nominal_cost(h, s, 1), 0.0),
            })
            .collect();
        let latency = LatencyModel::new(&nominal, DEFAULT_PRIOR_PRECISION, DEFAULT_NOISE_PRECISION)?;
        Ok(Self { params, candidates, bottom, catalog, latency, greedy })
    }
}

enum Plan {
    Autoregressive,
    Static { plan: StaticPlan, top_k: usize, top_p: f64 },
    Dynamic(Dynamic),
}

struct Session<'a> {
    scenario: &'a Scenario,
    h: &'a Hierarchy,
    truth: &'a TokenStream,
    drafter: Drafter<'a>,
    tree: DraftTree,
    plan: Plan,
    output: Vec<Token>,
    options: RunOptions,
    cost: f64,
    cycles: u64,
    calibration_cycles: u64,
    draft_calls: u64,
    selected: Vec<u64>,
    segments: Vec<SegmentStats>,
    steps: Vec<StepRecord>,
    accepted_mask: Vec<bool>,
}

impl Session<'_> {
    fn position(&self) -> usize {
        self.output.len()
    }

    fn labels(&self) -> Vec<String> {
        match &self.plan {
            Plan::Autoregressive => Vec::new(),
            Plan::Static { plan, .. } => {
                plan.stages().iter().map(|(s, _)| s.label(self.h)).collect()
            }
            Plan::Dynamic(d) => d.candidates.iter().map(|c| c.label.clone()).collect(),
        }
    }

    fn build(&mut self) -> Option<Generation> {
        let root = self.output.last().copied().unwrap_or(0);
        self.tree.reset(root);
        self.drafter.start_cycle();
        match &mut self.plan {
            Plan::Autoregressive => None,
            Plan::Static { plan, top_k, top_p } => {
                Some(static_schedule(plan, &mut self.tree, &mut self.drafter, *top_k, *top_p))
            }
            Plan::Dynamic(d) => {
                let cx = TreeContext { candidates: &d.candidates, bottom: d.bottom, params: &d.params };
                let position = self.output.len();
                let g = match d.params.estimates {
                    EstimateMode::Perfect => {
                        let est = PerfectEstimates { h: self.h, candidates: &d.candidates, position };
                        if d.greedy {
                            greedy_schedule(&mut self.tree, &cx, &est, &mut self.drafter)
                        } else {
                            dytc_generate(&mut self.tree, &cx, &est, &mut self.drafter)
                        }
                    }
                    EstimateMode::Online => {
                        let est = OnlineEstimates { catalog: &d.catalog, latency: &d.latency };
                        if d.greedy {
                            greedy_schedule(&mut self.tree, &cx, &est, &mut self.drafter)
                        } else {
                            dytc_generate(&mut self.tree, &cx, &est, &mut self.drafter)
                        }
                    }
                };
                Some(self.probe_if_idle(g))
            }
        }
    }

    /// Drafts one bottom-model token below an otherwise empty tree.
    fn probe_if_idle(&mut self, mut g: Generation) -> Generation {
        let Plan::Dynamic(d) = &self.plan else { return g };
        if self.tree.size() > 1 || !d.params.idle_probe || d.params.estimates != EstimateMode::Online {
            return g;
        }
        let config = d.bottom;
        let draft = self.drafter.draft(&self.tree, NodeId::ROOT, &d.candidates[config].structure, DraftLen::Tokens(1), 1);
        let alpha = d.catalog.estimate(config).unwrap_or(0.0);
        let alphas = vec![alpha; draft.len()];
        let first = self.tree.add_chain(NodeId::ROOT, &draft.tokens, &alphas, config).first().copied();
        g.expansions.push(crate::scheduler::Expansion {
            leaf: NodeId::ROOT,
            config,
            k: 1,
            width: 1,
            objective: None,
            runner_up: None,
            first,
            drafted: draft.len(),
            cost: draft.cost_units,
        });
        g
    }

    /// Verifies the current tree, commits the result and books the cycle.
    fn settle(&mut self, generation: Option<Generation>, calibration: bool) -> Result<Option<bool>> {
        let position = self.position();
        let verdict = self.tree.verify(self.truth, position)?;
        self.accepted_mask.clear();
        self.accepted_mask.resize(self.tree.size(), false);
        self.accepted_mask[0] = true;
        let start = self.output.len();
        for &n in &verdict.path {
            self.accepted_mask[n.index()] = true;
            self.output.push(self.tree.node(n).token);
        }
        self.output.push(verdict.bonus);
        let fresh = &self.output[start..];
        if let Some(i) = fresh.iter().zip(&self.truth.tokens()[start..]).position(|(a, b)| a != b) {
            return Err(Error::Losslessness { position: start + i });
        }
        self.drafter.commit(fresh);

        let draft_cost: f64 = generation.iter().flat_map(|g| &g.expansions).map(|e| e.cost).sum();
        let cycle_cost = draft_cost + 1.0;
        self.cost += cycle_cost;
        self.cycles += 1;
        if calibration {
            self.calibration_cycles += 1;
        }
        let seg = self.segments.partition_point(|s| s.start <= position).saturating_sub(1);
        self.segments[seg].tokens += verdict.accepted() + 1;
        self.segments[seg].cost_units += cycle_cost;

        let mut first_outcome = None;
        let mut outcomes: Vec<Option<bool>> = Vec::new();
        if let Some(g) = &generation {
            self.draft_calls += g.expansions.len() as u64;
            for e in &g.expansions {
                let outcome = if !self.accepted_mask[e.leaf.index()] {
                    None
                } else {
                    e.first.map(|f| self.accepted_mask[f.index()])
                };
                outcomes.push(outcome);
                if first_outcome.is_none() {
                    first_outcome = Some(outcome.unwrap_or(false));
                }
                if !calibration && e.config < self.selected.len() {
                    self.selected[e.config] += 1;
                }
            }
            if let Plan::Dynamic(d) = &mut self.plan {
                for (e, o) in g.expansions.iter().zip(&outcomes) {
                    d.catalog.note_selected(e.config)?;
                    if let Some(o) = o {
                        record_first_token_outcome(&mut d.catalog, e.config, *o)?;
                    }
                    let f = CallFeatures { config: e.config, k: e.k, width: e.width };
                    d.latency.observe(f, e.cost)?;
                }
                d.latency.refresh()?;
            }
        }

        if self.options.log_steps {
            let labels = self.labels();
            let label = |c: usize| labels.get(c).cloned().unwrap_or_default();
            let calls = generation
                .iter()
                .flat_map(|g| &g.expansions)
                .zip(outcomes.iter().copied().chain(core::iter::repeat(None)))
                .map(|(e, o)| CallRecord {
                    config: label(e.config),
                    k: e.k,
                    width: e.width,
                    objective: e.objective,
                    runner_up: e.runner_up.map(|r: Evaluated| label(r.config)),
                    runner_up_k: e.runner_up.map(|r| r.k),
                    runner_up_objective: e.runner_up.map(|r| r.objective),
                    drafted: e.drafted,
                    cost: e.cost,
                    first_accepted: o,
                })
                .collect();
            let estimates = match (&self.plan, self.options.log_estimates) {
                (Plan::Dynamic(d), true) => {
                    Some((0..d.candidates.len()).map(|c| d.catalog.estimate(c).unwrap_or(0.0)).collect())
                }
                _ => None,
            };
            let tree = self.options.log_trees.then(|| {
                self.tree
                    .nodes()
                    .iter()
                    .map(|n| TreeDumpNode { parent: n.parent.map(|p| p.0), token: n.token, p_acc: n.p_acc, config: n.config })
                    .collect()
            });
            self.steps.push(StepRecord {
                step: self.cycles - 1,
                position,
                calibration,
                calls,
                stop: generation.as_ref().map(|g| g.stop),
                t_min: generation.as_ref().map(|g| g.t_min),
                tree_size: self.tree.size(),
                accepted: verdict.accepted(),
                cost: cycle_cost,
                estimates,
                tree,
            });
        }
        Ok(first_outcome)
    }

    fn calibrate(&mut self) -> Result<()> {
        let Plan::Dynamic(d) = &self.plan else { return Ok(()) };
        let steps = d.params.calibration_steps;
        let n = d.candidates.len();
        for _ in 0..steps {
            for config in 0..n {
                if self.position() >= self.scenario.horizon {
                    return Ok(());
                }
                let root = self.output.last().copied().unwrap_or(0);
                self.tree.reset(root);
                self.drafter.start_cycle();
                let Plan::Dynamic(d) = &self.plan else { unreachable!() };
                let structure = d.candidates[config].structure.clone();
                let draft = self.drafter.draft(&self.tree, NodeId::ROOT, &structure, DraftLen::Tokens(1), 1);
                self.tree.deactivate(NodeId::ROOT);
                let alphas = vec![1.0; draft.len()];
                let chain = self.tree.add_chain(NodeId::ROOT, &draft.tokens, &alphas, config);
                let g = Generation {
                    expansions: vec![crate::scheduler::Expansion {
                        leaf: NodeId::ROOT,
                        config,
                        k: 1,
                        width: 1,
                        objective: None,
                        runner_up: None,
                        first: chain.first().copied(),
                        drafted: draft.len(),
                        cost: draft.cost_units,
                    }],
                    stop: StopReason::Plan,
                    t_min: 0.0,
                };
                self.settle(Some(g), true)?;
            }
        }
        Ok(())
    }
}

/// Runs one decode session of `scheduler` on `scenario` under `seed`.
pub fn run_decode(scenario: &Scenario, scheduler: &SchedulerSpec, seed: u64, options: RunOptions) -> Result<SimResult> {
    scenario.validate()?;
    let h = scenario.compiled_hierarchy();
    scheduler.validate(&h)?;
    let max_size = match &scheduler.kind {
        SchedulerKind::Autoregressive => 2,
        SchedulerKind::Static { max_size, .. } => *max_size,
        SchedulerKind::Dytc(p) | SchedulerKind::Greedy(p) => p.max_size,
    };
    let truth = session_truth(scenario, seed, max_size)?;
    let plan = match &scheduler.kind {
        SchedulerKind::Autoregressive => Plan::Autoregressive,
        SchedulerKind::Static { plan, top_k, top_p, .. } => Plan::Static { plan: *plan, top_k: *top_k, top_p: *top_p },
        SchedulerKind::Dytc(p) => Plan::Dynamic(Dynamic::new(&h, p.clone(), false)?),
        SchedulerKind::Greedy(p) => Plan::Dynamic(Dynamic::new(&h, p.clone(), true)?),
    };
    let n_labels = match &plan {
        Plan::Autoregressive => 0,
        Plan::Static { plan, .. } => plan.stages().len(),
        Plan::Dynamic(d) => d.candidates.len(),
    };
    let segments = scenario
        .segment_starts()
        .into_iter()
        .map(|start| SegmentStats { start, tokens: 0, cost_units: 0.0 })
        .collect();
    let mut s = Session {
        scenario,
        h: &h,
        truth: &truth,
        drafter: Drafter::new(&h, &truth, seed),
        tree: DraftTree::new(0, max_size),
        plan,
        output: Vec::with_capacity(scenario.horizon + max_size + 1),
        options,
        cost: 0.0,
        cycles: 0,
        calibration_cycles: 0,
        draft_calls: 0,
        selected: vec![0; n_labels],
        segments,
        steps: Vec::new(),
        accepted_mask: Vec::new(),
    };
    s.calibrate()?;
    while s.position() < scenario.horizon {
        let g = s.build();
        s.settle(g, false)?;
    }
    let labels = s.labels();
    let tokens_generated = scenario.horizon;
    Ok(SimResult {
        scheduler: scheduler.name.clone(),
        seed,
        tokens_generated,
        cost_units: s.cost,
        empirical_ewif: tokens_generated as f64 / s.cost,
        cycles: s.cycles,
        calibration_cycles: s.calibration_cycles,
        draft_calls: s.draft_calls,
        config_counts: labels
            .into_iter()
            .zip(s.selected)
            .map(|(config, selected)| ConfigCount { config, selected })
            .collect(),
        segments: s.segments,
        steps: s.steps,
        output: s.output,
    })
}

/// Summary of one scheduler across seeds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EnsembleRow {
    pub scheduler: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean, sample standard deviation and 95% normal-approximation interval.
pub fn summarize(scheduler: &str, values: &[f64]) -> EnsembleRow {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let sd = if n > 1 {
        sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
    } else {
        0.0
    };
    let half = 1.959_963_984_540_054 * sd / sqrt(n.max(1) as f64);
    EnsembleRow { scheduler: scheduler.into(), runs: n, mean, sd, ci_low: mean - half, ci_high: mean + half }
}

/// Paired results: `ewif[i][j]` is scheduler `i` under `seeds[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<EnsembleRow>,
    pub ewif: Vec<Vec<f64>>,
}

impl EnsembleTable {
    /// Builds the table from `results[i][j]` (scheduler `i`, seed `j`).
    pub fn from_results(seeds: Vec<u64>, results: &[Vec<SimResult>]) -> Self {
        let ewif: Vec<Vec<f64>> = results.iter().map(|r| r.iter().map(|x| x.empirical_ewif).collect()).collect();
        let rows = results
            .iter()
            .zip(&ewif)
            .map(|(r, e)| summarize(r.first().map_or("", |x| x.scheduler.as_str()), e))
            .collect();
        Self { seeds, rows, ewif }
    }

    pub fn row(&self, scheduler: &str) -> Option<&EnsembleRow> {
        self.rows.iter().find(|r| r.scheduler == scheduler)
    }
}

/// Runs every scheduler under every seed, sequentially.
pub fn run_ensemble(scenario: &Scenario, schedulers: &[SchedulerSpec], seeds: &[u64], options: RunOptions) -> Result<EnsembleTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidScenario("an ensemble needs at least one seed".into()));
    }
    let mut results = Vec::with_capacity(schedulers.len());
    for s in schedulers {
        let runs = seeds.iter().map(|&seed| run_decode(scenario, s, seed, options)).collect::<Result<Vec<_>>>()?;
        results.push(runs);
    }
    Ok(EnsembleTable::from_results(seeds.to_vec(), &results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sd_spec(h: &Hierarchy, model: usize, k: usize) -> SchedulerSpec {
        SchedulerSpec::fixed(h, StaticPlan::Sd { model: ModelId(model), k })
    }

    #[test]
    fn autoregressive_is_unit() {
        let s = make_scenario("counterexample").unwrap().with_horizon(500);
        let r = run_decode(&s, &SchedulerSpec::autoregressive(), 1, RunOptions::default()).unwrap();
        assert_eq!(r.cost_units, 500.0);
        assert_eq!(r.empirical_ewif, 1.0);
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            make_scenario(p).unwrap().validate().unwrap();
        }
        assert!(matches!(make_scenario("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn ledger_matches_log() {
        let s = make_scenario("layered").unwrap().with_horizon(2000);
        let opts = RunOptions { log_steps: true, ..RunOptions::default() };
        let r = run_decode(&s, &SchedulerSpec::dytc(SchedulerParams::default()), 3, opts).unwrap();
        let logged: f64 = r.steps.iter().map(|st| st.cost).sum();
        assert!((logged - r.cost_units).abs() < 1e-6);
        let calls: f64 = r.steps.iter().flat_map(|st| &st.calls).map(|c| c.cost).sum();
        assert!((calls + r.cycles as f64 - r.cost_units).abs() < 1e-6);
    }

    #[test]
    fn sd_short_run_is_plausible() {
        let s = make_scenario("counterexample").unwrap().with_horizon(50_000);
        let r = run_decode(&s, &sd_spec(&s.hierarchy, 1, 3), 7, RunOptions::default()).unwrap();
        assert!((r.empirical_ewif - 1.5537).abs() < 0.03, "{}", r.empirical_ewif);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = make_scenario("shift").unwrap();
        let spec = SchedulerSpec::dytc(SchedulerParams::default());
        let a = run_decode(&s, &spec, 11, RunOptions::default()).unwrap();
        let b = run_decode(&s, &spec, 11, RunOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
