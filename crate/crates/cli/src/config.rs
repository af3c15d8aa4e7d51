//! TOML run configuration.
//!
//! ```toml
//! version = 1
//! seeds = { start = 0, count = 20 }
//! horizon = 100000
//!
//! [scenario]
//! preset = "counterexample"
//!
//! [[schedulers]]
//! kind = "static"
//! name = "hc22"
//! plan = { plan = "hc", d1 = "d1", k1 = 2, d2 = "d2", k2 = 2 }
//!
//! [[schedulers]]
//! kind = "dytc"
//!
//! [output]
//! dir = "out"
//! step_log = true
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use speccascade_core::hierarchy::{Hierarchy, ModelId, ModelKind, ModelSpec, DEFAULT_MAX_NGRAM, DEFAULT_PLD_COST};
use speccascade_core::scheduler::{SchedulerParams, StaticPlan, DEFAULT_TOP_K, DEFAULT_TOP_P};
use speccascade_core::sim::{make_scenario, rescale_horizon, CorpusSpec, Regime, Scenario, SchedulerKind, SchedulerSpec};
use speccascade_core::tree::DEFAULT_MAX_SIZE;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub schedulers: Vec<SchedulerEntry>,
    /// Defaults for `dytc` and `greedy` entries that carry no `params`.
    #[serde(default)]
    pub params: SchedulerParams,
    pub seeds: SeedSpec,
    /// Overrides the scenario horizon; regime change points scale along.
    pub horizon: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<String>,
    pub inline: Option<InlineScenario>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineScenario {
    pub name: String,
    /// Top to bottom; the last entry is the bottom model.
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub regime: Regime,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub kind: ModelKind,
    pub alpha: f64,
    pub cost: Option<f64>,
    #[serde(default)]
    pub confidence_noise: f64,
    pub max_ngram: Option<usize>,
}

impl ModelConfig {
    fn to_spec(&self) -> Result<ModelSpec, CliError> {
        let cost = match (self.kind, self.cost) {
            (_, Some(c)) => c,
            (ModelKind::NgramPld, None) => DEFAULT_PLD_COST,
            (_, None) => return Err(CliError::usage(format!("model `{}` needs a cost", self.id))),
        };
        let mut spec = match self.kind {
            ModelKind::NeuralSim => ModelSpec::neural(&self.id, self.alpha, cost, self.confidence_noise),
            ModelKind::Statistical => ModelSpec::statistical(&self.id, self.alpha, cost),
            ModelKind::NgramPld => ModelSpec::pld(&self.id, self.alpha),
        };
        spec.cost = cost;
        spec.max_ngram = self.max_ngram.unwrap_or(DEFAULT_MAX_NGRAM);
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Also write every verify cycle to `steps.jsonl`.
    #[serde(default)]
    pub step_log: bool,
    /// Include per-cycle estimator values in the step log.
    #[serde(default)]
    pub log_estimates: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerEntry {
    Autoregressive {
        name: Option<String>,
    },
    Static {
        name: Option<String>,
        plan: PlanConfig,
        max_size: Option<usize>,
        top_k: Option<usize>,
        top_p: Option<f64>,
    },
    Dytc {
        name: Option<String>,
        params: Option<SchedulerParams>,
    },
    Greedy {
        name: Option<String>,
        params: Option<SchedulerParams>,
    },
}

/// A static plan with models referenced by id.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanConfig {
    Sd { model: String, k: usize },
    Hc { d1: String, k1: usize, d2: String, k2: usize },
    Vc { top: String, inner: String, n: usize, k: usize },
    HcVc { top: String, inner: String, n: usize, k: usize, tail: String, k_tail: usize },
    ChainTree { model: String, k: usize },
}

impl PlanConfig {
    fn resolve(&self, h: &Hierarchy) -> Result<StaticPlan, CliError> {
        let m = |name: &str| -> Result<ModelId, CliError> {
            h.find(name).ok_or_else(|| CliError::usage(format!("plan references unknown model `{name}`")))
        };
        Ok(match self {
            PlanConfig::Sd { model, k } => StaticPlan::Sd { model: m(model)?, k: *k },
            PlanConfig::Hc { d1, k1, d2, k2 } => StaticPlan::Hc { d1: m(d1)?, k1: *k1, d2: m(d2)?, k2: *k2 },
            PlanConfig::Vc { top, inner, n, k } => StaticPlan::Vc { top: m(top)?, inner: m(inner)?, n: *n, k: *k },
            PlanConfig::HcVc { top, inner, n, k, tail, k_tail } => StaticPlan::HcVc {
                top: m(top)?,
                inner: m(inner)?,
                n: *n,
                k: *k,
                tail: m(tail)?,
                k_tail: *k_tail,
            },
            PlanConfig::ChainTree { model, k } => StaticPlan::ChainTree { model: m(model)?, k: *k },
        })
    }
}

impl SchedulerEntry {
    fn resolve(&self, h: &Hierarchy, defaults: &SchedulerParams) -> Result<SchedulerSpec, CliError> {
        let spec = match self {
            SchedulerEntry::Autoregressive { name } => SchedulerSpec::autoregressive().rename(name),
            SchedulerEntry::Static { name, plan, max_size, top_k, top_p } => {
                let plan = plan.resolve(h)?;
                let mut spec = SchedulerSpec::fixed(h, plan);
                spec.kind = SchedulerKind::Static {
                    plan,
                    max_size: max_size.unwrap_or(DEFAULT_MAX_SIZE),
                    top_k: top_k.unwrap_or(DEFAULT_TOP_K),
                    top_p: top_p.unwrap_or(DEFAULT_TOP_P),
                };
                spec.rename(name)
            }
            SchedulerEntry::Dytc { name, params } => {
                SchedulerSpec::dytc(params.clone().unwrap_or_else(|| defaults.clone())).rename(name)
            }
            SchedulerEntry::Greedy { name, params } => {
                SchedulerSpec::greedy(params.clone().unwrap_or_else(|| defaults.clone())).rename(name)
            }
        };
        spec.validate(h).map_err(|e| CliError::usage(format!("scheduler `{}`: {e}", spec.name)))?;
        Ok(spec)
    }
}

trait Rename {
    fn rename(self, name: &Option<String>) -> Self;
}

impl Rename for SchedulerSpec {
    fn rename(self, name: &Option<String>) -> Self {
        match name {
            Some(n) => self.named(n.clone()),
            None => self,
        }
    }
}

/// A validated run: scenario, schedulers and seeds ready for the simulator.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub scenario: Scenario,
    pub schedulers: Vec<SchedulerSpec>,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedRun, CliError> {
        let mut scenario = match (&self.scenario.preset, &self.scenario.inline) {
            (Some(p), None) => make_scenario(p).map_err(|e| CliError::usage(e.to_string()))?,
            (None, Some(s)) => {
                let models = s.models.iter().map(ModelConfig::to_spec).collect::<Result<Vec<_>, _>>()?;
                Scenario::new(&s.name, Hierarchy::new(models))
                    .with_corpus(s.corpus)
                    .with_regime(s.regime.clone())
                    .with_horizon(s.horizon)
            }
            _ => return Err(CliError::usage("scenario needs exactly one of `preset` or `inline`")),
        };
        if let Some(h) = self.horizon {
            if h == 0 {
                return Err(CliError::usage("horizon must be at least 1"));
            }
            scenario = rescale_horizon(scenario, h);
        }
        scenario.validate().map_err(|e| CliError::usage(e.to_string()))?;
        if self.schedulers.is_empty() {
            return Err(CliError::usage("scheduler list is empty"));
        }
        self.params.validate().map_err(|e| CliError::usage(format!("params: {e}")))?;
        let schedulers = self
            .schedulers
            .iter()
            .map(|s| s.resolve(&scenario.hierarchy, &self.params))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, s) in schedulers.iter().enumerate() {
            if schedulers[..i].iter().any(|t| t.name == s.name) {
                return Err(CliError::usage(format!("scheduler name `{}` is used twice", s.name)));
            }
        }
        let seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return Err(CliError::usage("seed list is empty"));
        }
        Ok(ResolvedRun { scenario, schedulers, seeds, output: self.output.clone() })
    }
}
