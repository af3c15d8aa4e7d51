//! Simulated draft models and the target stream they are judged against.
//!
//! The target model is replaced by a fixed token stream: whatever it would
//! have emitted under greedy decoding. A draft token is accepted iff it equals
//! the stream at its position, which makes lossless decoding checkable as
//! plain stream equality.
//!
//! Neural stand-ins hit the stream with a per-position probability drawn
//! around their `alpha`; the drawn probability doubles as the token's
//! confidence, so confidences are calibrated while the marginal acceptance of
//! every position stays Bernoulli(`alpha`). The prompt-lookup drafter works
//! on the actual tokens and is therefore data dependent.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;

use crate::rng::{mix, SimRng};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub type Token = u32;

/// Default vocabulary size of synthetic streams.
pub const DEFAULT_VOCAB: u32 = 256;
/// Default flat cost of one prompt-lookup call.
pub const DEFAULT_PLD_COST: f64 = 0.01;
/// Default longest n-gram the prompt-lookup drafter tries to match.
pub const DEFAULT_MAX_NGRAM: usize = 3;
/// Longest n-gram supported by [`PldIndex`].
pub const MAX_SUPPORTED_NGRAM: usize = 4;
/// Successors per order-2 context in the synthetic Markov chain.
const MARKOV_FANOUT: u64 = 64;

/// Parameters of a synthetic target stream.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CorpusParams {
    pub seed: u64,
    pub length: usize,
    /// Probability that a segment is a verbatim copy of the text one period back.
    pub repeat_bias: f64,
    pub vocab: u32,
}

/// A deterministic target stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    tokens: Vec<Token>,
    params: CorpusParams,
    period: usize,
}

impl TokenStream {
    /// Wraps explicit tokens (vocabulary inferred as `max + 1`, at least 2).
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let vocab = tokens.iter().copied().max().map_or(2, |m| (m + 1).max(2));
        let params = CorpusParams { seed: 0, length: tokens.len(), repeat_bias: 0.0, vocab };
        Self { tokens, params, period: 0 }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn params(&self) -> &CorpusParams {
        &self.params
    }

    pub fn vocab(&self) -> u32 {
        self.params.vocab
    }

    /// Period of the copy segments.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn get(&self, position: usize) -> Option<Token> {
        self.tokens.get(position).copied()
    }
}

/// Builds a synthetic stream: an order-2 Markov chain with 64 successors per
/// context, interleaved with segments copied verbatim from one period back.
/// Each segment (8 to 32 tokens) is a copy with probability `repeat_bias`.
/// With `repeat_bias = 1` the stream is periodic after the first period.
pub fn make_corpus(seed: u64, length: usize, repeat_bias: f64) -> Result<TokenStream> {
    make_corpus_with_vocab(seed, length, repeat_bias, DEFAULT_VOCAB)
}

pub fn make_corpus_with_vocab(seed: u64, length: usize, repeat_bias: f64, vocab: u32) -> Result<TokenStream> {
    if length == 0 {
        return Err(Error::domain("length", 0.0, "[1, inf)"));
    }
    if !(0.0..=1.0).contains(&repeat_bias) {
        return Err(Error::domain("repeat_bias", repeat_bias, "[0, 1]"));
    }
    if vocab < 2 {
        return Err(Error::domain("vocab", vocab as f64, "[2, inf)"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let period = rng.random_range(24..=64usize);
    let markov_next = |a: Token, b: Token, r: u64| -> Token {
        (mix(&[seed, a as u64, b as u64, r]) % vocab as u64) as Token
    };
    let mut tokens: Vec<Token> = Vec::with_capacity(length);
    let (mut a, mut b) = (0, 0);
    while tokens.len() < length {
        // The first period is always fresh text so later copies have a source.
        let (seg, copy) = if tokens.len() < period {
            (period - tokens.len(), false)
        } else {
            (rng.random_range(8..=32usize), rng.random_bool(repeat_bias))
        };
        for _ in 0..seg {
            if tokens.len() == length {
                break;
            }
            let t = if copy {
                tokens[tokens.len() - period]
            } else {
                markov_next(a, b, rng.random_range(0..MARKOV_FANOUT))
            };
            tokens.push(t);
            a = b;
            b = t;
        }
    }
    Ok(TokenStream {
        tokens,
        params: CorpusParams { seed, length, repeat_bias, vocab },
        period,
    })
}

/// Index of a model within its [`Hierarchy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ModelId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelKind {
    /// Stand-in for a dynamically switched variant of the target model.
    NeuralSim,
    /// I.i.d. Bernoulli drafter without token-level confidence; may sit at
    /// the bottom of a hierarchy.
    Statistical,
    /// Prompt-lookup n-gram drafter.
    NgramPld,
}

impl ModelKind {
    pub fn is_bottom_capable(self) -> bool {
        !matches!(self, ModelKind::NeuralSim)
    }
}

/// One piece of an [`AlphaProfile`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AlphaSegment {
    pub start: usize,
    pub alpha: f64,
}

/// Piecewise-constant acceptance probability over stream positions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AlphaProfile {
    segments: Vec<AlphaSegment>,
}

impl AlphaProfile {
    pub fn constant(alpha: f64) -> Self {
        Self { segments: alloc::vec![AlphaSegment { start: 0, alpha }] }
    }

    /// Builds a profile from `(start, alpha)` pieces. The first piece is moved
    /// to start 0; pieces are sorted by start.
    pub fn from_segments(mut segments: Vec<AlphaSegment>) -> Self {
        segments.sort_by_key(|s| s.start);
        if let Some(first) = segments.first_mut() {
            first.start = 0;
        }
        Self { segments }
    }

    /// Replaces the value from `start` on.
    pub fn with_change(mut self, start: usize, alpha: f64) -> Self {
        self.segments.retain(|s| s.start < start);
        self.segments.push(AlphaSegment { start, alpha });
        Self::from_segments(self.segments)
    }

    pub fn segments(&self) -> &[AlphaSegment] {
        &self.segments
    }

    pub fn at(&self, position: usize) -> f64 {
        let idx = self.segments.partition_point(|s| s.start <= position);
        self.segments[idx.saturating_sub(1)].alpha
    }

    /// Unweighted mean of the piece values.
    pub fn mean(&self) -> f64 {
        self.segments.iter().map(|s| s.alpha).sum::<f64>() / self.segments.len() as f64
    }
}

/// A simulated draft model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelSpec {
    pub id: String,
    pub kind: ModelKind,
    /// True per-token acceptance probability against the target. For the
    /// prompt-lookup drafter this is only a nominal value used for ordering
    /// and priors.
    pub alpha: AlphaProfile,
    /// Cost per drafted token (flat per call for prompt lookup).
    pub cost: f64,
    /// Half-width of the per-token acceptance probability around `alpha`.
    pub confidence_noise: f64,
    /// Longest n-gram tried by prompt lookup.
    pub max_ngram: usize,
}

impl ModelSpec {
    pub fn neural(id: impl Into<String>, alpha: f64, cost: f64, confidence_noise: f64) -> Self {
        Self {
            id: id.into(),
            kind: ModelKind::NeuralSim,
            alpha: AlphaProfile::constant(alpha),
            cost,
            confidence_noise,
            max_ngram: DEFAULT_MAX_NGRAM,
        }
    }

    pub fn statistical(id: impl Into<String>, alpha: f64, cost: f64) -> Self {
        Self { kind: ModelKind::Statistical, ..Self::neural(id, alpha, cost, 0.0) }
    }

    pub fn pld(id: impl Into<String>, nominal_alpha: f64) -> Self {
        Self {
            kind: ModelKind::NgramPld,
            ..Self::neural(id, nominal_alpha, DEFAULT_PLD_COST, 0.0)
        }
    }

    /// Confidence spread actually applied; statistical drafters have none.
    pub fn effective_noise(&self) -> f64 {
        match self.kind {
            ModelKind::NeuralSim => self.confidence_noise,
            _ => 0.0,
        }
    }

    /// Problems with this model alone.
    pub fn problems(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            out.push("cost must be positive");
        }
        if self.alpha.segments().is_empty() {
            out.push("alpha profile is empty");
        }
        if self.alpha.segments().iter().any(|s| !(0.0..=1.0).contains(&s.alpha)) {
            out.push("alpha values must lie in [0, 1]");
        }
        if !(self.confidence_noise >= 0.0) {
            out.push("confidence_noise must be non-negative");
        }
        if self.kind == ModelKind::NgramPld {
            if self.cost > 0.05 {
                out.push("prompt-lookup cost must be at most 0.05");
            }
            if !(2..=MAX_SUPPORTED_NGRAM).contains(&self.max_ngram) {
                out.push("max_ngram must lie in [2, 4]");
            }
        }
        out
    }
}

/// Ordered draft models, most accurate first, bottom draft last.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Hierarchy {
    pub models: Vec<ModelSpec>,
    pub bottom: usize,
}

impl Hierarchy {
    /// The last model becomes the bottom draft.
    pub fn new(models: Vec<ModelSpec>) -> Self {
        let bottom = models.len().saturating_sub(1);
        Self { models, bottom }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn model(&self, id: ModelId) -> &ModelSpec {
        &self.models[id.0]
    }

    pub fn bottom_id(&self) -> ModelId {
        ModelId(self.bottom)
    }

    pub fn find(&self, name: &str) -> Option<ModelId> {
        self.models.iter().position(|m| m.id == name).map(ModelId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ModelId> {
        (0..self.models.len()).map(ModelId)
    }

    /// Longest n-gram any prompt-lookup model uses, or `None` without one.
    pub fn pld_max_ngram(&self) -> Option<usize> {
        self.models
            .iter()
            .filter(|m| m.kind == ModelKind::NgramPld)
            .map(|m| m.max_ngram)
            .max()
    }
}

/// A broken hierarchy rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    InvalidModel { model: String, problem: &'static str },
    /// Mean acceptance increases from `upper` to `lower`.
    AlphaOrder { upper: String, lower: String },
    /// Cost increases from `upper` to `lower`.
    CostOrder { upper: String, lower: String },
    BottomNotLast { bottom: usize, len: usize },
    /// The bottom draft is a neural stand-in.
    BottomKind { model: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "hierarchy has no models"),
            Violation::InvalidModel { model, problem } => write!(f, "model `{model}`: {problem}"),
            Violation::AlphaOrder { upper, lower } => {
                write!(f, "alpha ordering: `{lower}` has a higher mean acceptance than `{upper}` above it")
            }
            Violation::CostOrder { upper, lower } => {
                write!(f, "cost ordering: `{lower}` is more expensive than `{upper}` above it")
            }
            Violation::BottomNotLast { bottom, len } => {
                write!(f, "bottom index {bottom} is not the last of {len} models")
            }
            Violation::BottomKind { model } => write!(
                f,
                "bottom draft `{model}` is a neural stand-in; the bottom stage must be a drafter that cannot itself be sped up by speculation"
            ),
        }
    }
}

/// All rule violations of `h`; empty iff the hierarchy is well formed.
pub fn validate_hierarchy(h: &Hierarchy) -> Vec<Violation> {
    let mut out = Vec::new();
    if h.models.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    for m in &h.models {
        for problem in m.problems() {
            out.push(Violation::InvalidModel { model: m.id.clone(), problem });
        }
    }
    for pair in h.models.windows(2) {
        let (upper, lower) = (&pair[0], &pair[1]);
        if lower.alpha.mean() > upper.alpha.mean() {
            out.push(Violation::AlphaOrder { upper: upper.id.clone(), lower: lower.id.clone() });
        }
        if lower.cost > upper.cost {
            out.push(Violation::CostOrder { upper: upper.id.clone(), lower: lower.id.clone() });
        }
    }
    if h.bottom != h.models.len() - 1 {
        out.push(Violation::BottomNotLast { bottom: h.bottom, len: h.models.len() });
    }
    if let Some(b) = h.models.get(h.bottom) {
        if !b.kind.is_bottom_capable() {
            out.push(Violation::BottomKind { model: b.id.clone() });
        }
    }
    out
}

/// Top-K candidates of one drafted position, rank 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub tokens: Vec<Token>,
    /// Normalized probabilities, non-increasing.
    pub probs: Vec<f64>,
}

/// Output of one draft call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DraftResult {
    pub tokens: Vec<Token>,
    pub confidences: Vec<f64>,
    /// Cost charged for the call.
    pub cost_units: f64,
    /// Whether `confidences` are token-level (otherwise placeholders).
    pub token_confidence: bool,
    /// Per-token candidate rows; empty unless requested.
    pub rows: Vec<CandidateRow>,
}

impl DraftResult {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Uniform token of `[0, vocab)` different from `avoid`.
pub(crate) fn wrong_token(avoid: Token, vocab: u32, rng: &mut SimRng) -> Token {
    let r = rng.random_range(0..vocab - 1);
    if r >= avoid {
        r + 1
    } else {
        r
    }
}

/// Per-token acceptance probability around `alpha`: uniform on
/// `alpha +- s` with `s = min(noise, alpha, 1 - alpha)`, so its mean is
/// exactly `alpha`.
pub(crate) fn latent_alpha(alpha: f64, noise: f64, rng: &mut SimRng) -> f64 {
    let s = noise.min(alpha).min(1.0 - alpha);
    if s > 0.0 {
        alpha + s * (2.0 * rng.random::<f64>() - 1.0)
    } else {
        alpha
    }
}

/// Draws `k` tokens from a neural or statistical model against `reference`,
/// where `reference[i]` is the token the verifier expects at `position + i`.
///
/// With `top_k > 1` each row also carries `top_k - 1` alternatives; rank `j`
/// gets probability `(1 - p)/2^j` and holds the expected token with exactly
/// that probability whenever rank 0 misses.
pub(crate) fn draft_against(
    model: &ModelSpec,
    reference: &[Token],
    position: usize,
    k: usize,
    top_k: usize,
    vocab: u32,
    rng: &mut SimRng,
) -> DraftResult {
    debug_assert!(model.kind != ModelKind::NgramPld);
    let noise = model.effective_noise();
    let mut out = DraftResult {
        tokens: Vec::with_capacity(k),
        confidences: Vec::with_capacity(k),
        cost_units: model.cost * k as f64,
        token_confidence: model.kind == ModelKind::NeuralSim,
        rows: Vec::new(),
    };
    for (i, &expected) in reference.iter().take(k).enumerate() {
        let (main, p) = sample_token(model, noise, expected, position + i, vocab, rng);
        out.tokens.push(main);
        out.confidences.push(p);
        if top_k > 1 {
            out.rows.push(alternatives(main, expected, p, top_k, vocab, rng));
        }
    }
    out
}

/// One drafted token against `expected` and its acceptance probability.
pub(crate) fn sample_token(
    model: &ModelSpec,
    noise: f64,
    expected: Token,
    position: usize,
    vocab: u32,
    rng: &mut SimRng,
) -> (Token, f64) {
    let p = latent_alpha(model.alpha.at(position), noise, rng);
    let token = if rng.random_bool(p) { expected } else { wrong_token(expected, vocab, rng) };
    (token, p)
}

pub(crate) fn alternatives(
    main: Token,
    expected: Token,
    p: f64,
    top_k: usize,
    vocab: u32,
    rng: &mut SimRng,
) -> CandidateRow {
    let width = top_k.min(vocab as usize);
    let hit = main == expected;
    // Rank holding the expected token when rank 0 misses; `width` means off-list.
    let slot = if hit {
        0
    } else {
        let mut j = 1;
        while j < width && !rng.random_bool(0.5) {
            j += 1;
        }
        j
    };
    let mut tokens = Vec::with_capacity(width);
    let mut probs = Vec::with_capacity(width);
    tokens.push(main);
    probs.push(p);
    let mut scale = 1.0;
    for j in 1..width {
        scale *= 0.5;
        let t = if j == slot {
            expected
        } else {
            loop {
                let cand = rng.random_range(0..vocab);
                if cand != expected && !tokens.contains(&cand) {
                    break cand;
                }
            }
        };
        tokens.push(t);
        probs.push((1.0 - p) * scale);
    }
    CandidateRow { tokens, probs }
}

/// Drafts `k` tokens at `position` of `truth` with a neural or statistical model.
pub fn draft_step(
    model: &ModelSpec,
    truth: &TokenStream,
    position: usize,
    k: usize,
    rng: &mut SimRng,
) -> Result<DraftResult> {
    if model.kind == ModelKind::NgramPld {
        return Err(Error::InvalidScheduler(alloc::format!(
            "draft_step needs a neural or statistical model, `{}` is prompt lookup",
            model.id
        )));
    }
    if k == 0 {
        return Err(Error::domain("k", 0.0, "[1, inf)"));
    }
    if position + k > truth.len() {
        return Err(Error::Overflow { position, len: k, stream_len: truth.len() });
    }
    Ok(draft_against(model, &truth.tokens()[position..position + k], position, k, 1, truth.vocab(), rng))
}

/// Prompt-lookup drafting by a direct backwards scan.
///
/// Finds the longest suffix n-gram (`2 <= n <= max_ngram`) of `prefix` that
/// also occurs earlier, and drafts up to `k` tokens following its most recent
/// earlier occurrence. Each token's confidence is `min(1, n / max_ngram)`. An
/// empty result means no match; the flat `cost` is charged either way.
pub fn pld_draft(prefix: &[Token], max_ngram: usize, k: usize, cost: f64) -> DraftResult {
    let len = prefix.len();
    for n in (2..=max_ngram).rev() {
        if len < n + 1 {
            continue;
        }
        let suffix = &prefix[len - n..];
        if let Some(start) = (0..len - n).rev().find(|&s| &prefix[s..s + n] == suffix) {
            return pld_result(prefix[start + n..len.min(start + n + k)].to_vec(), n, max_ngram, cost);
        }
    }
    DraftResult { cost_units: cost, ..DraftResult::default() }
}

fn pld_result(tokens: Vec<Token>, n: usize, max_ngram: usize, cost: f64) -> DraftResult {
    let conf = (n as f64 / max_ngram as f64).min(1.0);
    DraftResult {
        confidences: alloc::vec![conf; tokens.len()],
        tokens,
        cost_units: cost,
        token_confidence: true,
        rows: Vec::new(),
    }
}

fn ngram_key(tokens: impl Iterator<Item = Token>) -> u128 {
    tokens.fold(0u128, |acc, t| (acc << 32) | t as u128)
}

/// Incremental prompt-lookup index over a growing committed prefix.
///
/// Answers the same queries as [`pld_draft`] on `committed ++ tail` without
/// rescanning the committed part: for every n-gram it remembers its two most
/// recent start positions.
#[derive(Debug, Clone, Default)]
pub struct PldIndex {
    tokens: Vec<Token>,
    max_ngram: usize,
    /// `maps[n - 2]`: n-gram -> (last start, previous start).
    maps: Vec<BTreeMap<u128, (usize, Option<usize>)>>,
}

impl PldIndex {
    pub fn new(max_ngram: usize) -> Self {
        let max_ngram = max_ngram.clamp(2, MAX_SUPPORTED_NGRAM);
        Self { tokens: Vec::new(), max_ngram, maps: (2..=max_ngram).map(|_| BTreeMap::new()).collect() }
    }

    pub fn committed(&self) -> &[Token] {
        &self.tokens
    }

    pub fn push(&mut self, token: Token) {
        self.tokens.push(token);
        let c = self.tokens.len();
        for n in 2..=self.max_ngram {
            if c >= n {
                let key = ngram_key(self.tokens[c - n..].iter().copied());
                let start = c - n;
                self.maps[n - 2]
                    .entry(key)
                    .and_modify(|e| *e = (start, Some(e.0)))
                    .or_insert((start, None));
            }
        }
    }

    pub fn extend(&mut self, tokens: &[Token]) {
        for &t in tokens {
            self.push(t);
        }
    }

    /// Equivalent to `pld_draft(committed ++ tail, max_ngram, k, cost)` for
    /// `max_ngram` up to the index's own.
    pub fn draft(&self, tail: &[Token], max_ngram: usize, k: usize, cost: f64) -> DraftResult {
        let c = self.tokens.len();
        let len = c + tail.len();
        let at = |i: usize| if i < c { self.tokens[i] } else { tail[i - c] };
        for n in (2..=max_ngram.min(self.max_ngram)).rev() {
            if len < n + 1 {
                continue;
            }
            let last_start = len - n - 1;
            let suffix_key = ngram_key((len - n..len).map(at));
            let matches = |s: usize| (0..n).all(|j| at(s + j) == at(len - n + j));
            // Occurrences that reach into the tail.
            let overlap_lo = (c + 1).saturating_sub(n);
            let mut found = (overlap_lo..=last_start).rev().find(|&s| matches(s));
            if found.is_none() {
                if let Some(&(last, prev)) = self.maps[n - 2].get(&suffix_key) {
                    found = if last <= last_start { Some(last) } else { prev.filter(|&p| p <= last_start) };
                }
            }
            if let Some(start) = found {
                let end = len.min(start + n + k);
                return pld_result((start + n..end).map(at).collect(), n, max_ngram, cost);
            }
        }
        DraftResult { cost_units: cost, ..DraftResult::default() }
    }
}

/// Target verification of a linear draft: the length of the longest prefix
/// of `path` equal to the stream at `position`, and the bonus token that
/// follows it.
pub fn verify_path(truth: &TokenStream, position: usize, path: &[Token]) -> Result<(usize, Token)> {
    if position + path.len() >= truth.len() {
        return Err(Error::Overflow { position, len: path.len() + 1, stream_len: truth.len() });
    }
    let expected = &truth.tokens()[position..];
    let accepted = path.iter().zip(expected).take_while(|(a, b)| a == b).count();
    Ok((accepted, expected[accepted]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = make_corpus(1, 100, 0.0).unwrap();
        let b = make_corpus(1, 100, 0.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tokens(), make_corpus(2, 100, 0.0).unwrap().tokens());
        assert!(make_corpus(1, 0, 0.0).is_err());
    }

    #[test]
    fn full_repeat_is_periodic() {
        let s = make_corpus(3, 2000, 1.0).unwrap();
        let p = s.period();
        assert!(s.tokens()[p..].iter().enumerate().all(|(i, &t)| t == s.tokens()[i]));
    }

    #[test]
    fn alpha_profile_lookup() {
        let prof = AlphaProfile::constant(0.8).with_change(100, 0.5);
        assert_eq!(prof.at(0), 0.8);
        assert_eq!(prof.at(99), 0.8);
        assert_eq!(prof.at(100), 0.5);
        assert_eq!(prof.at(10_000), 0.5);
        assert!((prof.mean() - 0.65).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_hopeless_drafters() {
        let truth = make_corpus(5, 200, 0.0).unwrap();
        let perfect = ModelSpec::neural("p", 1.0, 0.3, 0.2);
        let d = draft_step(&perfect, &truth, 10, 6, &mut rng(1)).unwrap();
        assert_eq!(d.tokens, truth.tokens()[10..16]);
        assert!((d.cost_units - 1.8).abs() < 1e-12);
        let hopeless = ModelSpec::neural("z", 0.0, 0.3, 0.2);
        let d = draft_step(&hopeless, &truth, 10, 6, &mut rng(1)).unwrap();
        assert!(d.tokens.iter().zip(&truth.tokens()[10..16]).all(|(a, b)| a != b));
        assert!(draft_step(&hopeless, &truth, 198, 6, &mut rng(1)).is_err());
    }

    #[test]
    fn pld_constructed_match() {
        let d = pld_draft(&[7, 3, 9, 7, 3], 3, 1, 0.01);
        assert_eq!(d.tokens, vec![9]);
        assert!((d.confidences[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.cost_units, 0.01);
    }

    #[test]
    fn pld_no_repeats() {
        let d = pld_draft(&[1, 2, 3, 4, 5, 6], 3, 4, 0.01);
        assert!(d.is_empty());
        assert_eq!(d.cost_units, 0.01);
    }

    #[test]
    fn pld_periodic_next_period() {
        let d = pld_draft(&[1, 2, 3, 4, 1, 2, 3, 4, 1, 2], 3, 4, 0.01);
        assert_eq!(d.tokens, vec![3, 4, 1, 2]);
        assert_eq!(d.confidences, vec![1.0; 4]);
    }

    #[test]
    fn index_matches_scan_with_tail() {
        let s = make_corpus(11, 3000, 0.5).unwrap();
        let mut idx = PldIndex::new(3);
        for c in 0..400 {
            for tail_len in 0..4 {
                let tail = &s.tokens()[c..(c + tail_len).min(s.len())];
                let mut full = s.tokens()[..c].to_vec();
                full.extend_from_slice(tail);
                assert_eq!(idx.draft(tail, 3, 5, 0.01), pld_draft(&full, 3, 5, 0.01), "c={c} tail={tail_len}");
            }
            idx.push(s.tokens()[c]);
        }
    }

    #[test]
    fn verify_path_cases() {
        let truth = TokenStream::from_tokens(vec![5, 6, 7, 8, 9, 10]);
        assert_eq!(verify_path(&truth, 1, &[6, 7, 8, 9]).unwrap(), (4, 10));
        assert_eq!(verify_path(&truth, 1, &[0, 7]).unwrap(), (0, 6));
        assert!(verify_path(&truth, 2, &[7, 8, 9, 10]).is_err());
    }

    #[test]
    fn hierarchy_rules() {
        let good = Hierarchy::new(vec![
            ModelSpec::neural("ls04", 0.75, 0.45, 0.1),
            ModelSpec::neural("ls06", 0.6, 0.3, 0.1),
            ModelSpec::pld("pld", 0.3),
        ]);
        assert!(validate_hierarchy(&good).is_empty());

        let mut reversed = good.clone();
        reversed.models[1].cost = 0.6;
        let v = validate_hierarchy(&reversed);
        assert_eq!(v, vec![Violation::CostOrder { upper: "ls04".into(), lower: "ls06".into() }]);

        let neural_bottom = Hierarchy::new(vec![
            ModelSpec::neural("a", 0.8, 0.4, 0.0),
            ModelSpec::neural("b", 0.7, 0.3, 0.0),
        ]);
        assert_eq!(validate_hierarchy(&neural_bottom), vec![Violation::BottomKind { model: "b".into() }]);

        let mut pricey_pld = good.clone();
        pricey_pld.models[2].cost = 0.2;
        assert!(validate_hierarchy(&pricey_pld)
            .iter()
            .any(|v| matches!(v, Violation::InvalidModel { model, .. } if model == "pld")));
        assert_eq!(validate_hierarchy(&Hierarchy::new(vec![])), vec![Violation::Empty]);
    }

    #[test]
    fn alternatives_are_calibrated_and_distinct() {
        let m = ModelSpec::neural("m", 0.5, 0.3, 0.0);
        let reference = vec![42; 1];
        let mut r = rng(9);
        let trials = 40_000;
        let mut rank_hits = [0usize; 3];
        for _ in 0..trials {
            let d = draft_against(&m, &reference, 0, 1, 3, 256, &mut r);
            let row = &d.rows[0];
            assert_eq!(row.tokens.len(), 3);
            assert!(row.tokens[0] != row.tokens[1] && row.tokens[1] != row.tokens[2] && row.tokens[0] != row.tokens[2]);
            if let Some(j) = row.tokens.iter().position(|&t| t == 42) {
                rank_hits[j] += 1;
            }
        }
        let f = |j: usize| rank_hits[j] as f64 / trials as f64;
        assert!((f(0) - 0.5).abs() < 0.01);
        assert!((f(1) - 0.25).abs() < 0.01);
        assert!((f(2) - 0.125).abs() < 0.01);
    }
}
