//! JSON experiment configs, named hyperparameter tables, desk-scale presets
//! and multi-seed batches with aggregation.
//!
//! A batch writes one directory per run label holding `seed_XXXX.jsonl`
//! metric streams, `aggregate.jsonl` (mean and standard error across seeds)
//! and `summary.json`; the batch root holds `manifest.json` and the preset
//! `summary.json`. [`analyze`] recomputes everything from the streams.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{Algorithm, HyperParams, Schedule, StormInit};
use crate::async_rt::{run_async, AsyncConfig, Scheduler, Timing};
use crate::engine::{read_jsonl, run, write_csv, write_jsonl, BitCosts, Init, MetricsRecord, PotentialSpec, RunConfig, Seeds};
use crate::error::{Error, Result};
use crate::graph::{build_incidence, EdgeLaw, IncidenceMatrix, SamplerSpec, Topology};
use crate::objectives::{AsyncGradientMask, NoiseModel, ObjectiveSuite, Partition};
use crate::rng::{derive_seed, domain};

// ---------------------------------------------------------------------------
// Named hyperparameter tables

/// One row of the published hyperparameter tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedHyperParams {
    pub name: &'static str,
    pub algorithm: Algorithm,
    pub hp: HyperParams,
    /// Fraction of coordinates exchanged, when the row fixes one.
    pub sparsity: Option<f64>,
    /// Edge activation probability, when the row fixes one.
    pub edge_prob: Option<f64>,
}

fn row(
    name: &'static str,
    algorithm: Algorithm,
    hp: HyperParams,
    sparsity: Option<f64>,
    edge_prob: Option<f64>,
) -> NamedHyperParams {
    NamedHyperParams {
        name,
        algorithm,
        hp,
        sparsity,
        edge_prob,
    }
}

/// Every named row. DSGD rows fix only the step size; their mixing weight
/// is 0.5, which averages the two endpoints of an active edge.
pub fn hyperparam_table() -> Vec<NamedHyperParams> {
    use Algorithm::*;
    let sa = |a, e| HyperParams::new(a, e, 0.5, 1.0);
    let dsgd = |a| HyperParams::new(a, 0.0, 0.5, 0.0);
    vec![
        row("mnist_sa_defaults", FspdaSa, sa(1e-4, 1e-5), Some(0.1), None),
        row(
            "mnist_storm_defaults",
            FspdaStorm,
            HyperParams::new(1e-3, 1e-2, 0.5, 0.1).with_momentum(1e-2, 1e-2),
            Some(0.067),
            None,
        ),
        row("mnist_dsgd_defaults", Dsgd, dsgd(1e-4), Some(1.0), Some(0.013)),
        row("imagenet_sa_10pct", FspdaSa, sa(0.1, 5e-9), Some(0.1), None),
        row("imagenet_sa_1pct", FspdaSa, sa(0.1, 1e-9), Some(0.01), None),
        row("imagenet_sa_0_1pct", FspdaSa, sa(0.05, 5e-10), Some(0.001), None),
        row("hetero_sa", FspdaSa, sa(1e-4, 1e-4), None, None),
        row("homo_sa", FspdaSa, sa(1e-4, 1e-5), None, None),
        row(
            "hetero_storm",
            FspdaStorm,
            HyperParams::new(1e-3, 1e-3, 0.5, 0.1).with_momentum(0.1, 0.1),
            None,
            None,
        ),
        row(
            "homo_storm",
            FspdaStorm,
            HyperParams::new(1e-3, 1e-4, 0.5, 0.1).with_momentum(0.1, 0.1),
            None,
            None,
        ),
        row("hetero_dsgd", Dsgd, dsgd(1e-4), Some(1.0), Some(5e-4)),
        row("homo_dsgd", Dsgd, dsgd(1e-4), Some(1.0), Some(5e-4)),
        row("exact_grad_dense_sa", FspdaSa, sa(1e-3, 5e-6), Some(1.0), None),
        row("exact_grad_sparse_sa", FspdaSa, sa(1e-4, 5e-4), Some(0.01), None),
        row(
            "dual_momentum_off",
            FspdaStorm,
            HyperParams::new(1e-3, 5e-6, 0.5, 1.0).with_momentum(1e-3, 1.0),
            None,
            None,
        ),
        row(
            "dual_momentum_on",
            FspdaStorm,
            HyperParams::new(1e-3, 5e-6, 0.5, 1.0).with_momentum(1e-3, 1e-2),
            None,
            None,
        ),
    ]
}

pub fn named_hyperparams(name: &str) -> Option<NamedHyperParams> {
    hyperparam_table().into_iter().find(|r| r.name == name)
}

fn default_row(algorithm: Algorithm) -> NamedHyperParams {
    let name = match algorithm {
        Algorithm::FspdaSa => "mnist_sa_defaults",
        Algorithm::FspdaStorm => "mnist_storm_defaults",
        Algorithm::Dsgd => "mnist_dsgd_defaults",
    };
    named_hyperparams(name).expect("default rows exist")
}

// ---------------------------------------------------------------------------
// Config schema

/// Hyperparameters: an optional named row, with individual fields
/// overriding it. Missing fields fall back to the algorithm's default row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_lambda: Option<f64>,
}

impl HyperParamsConfig {
    pub fn explicit(hp: HyperParams) -> Self {
        Self {
            preset: None,
            alpha: Some(hp.alpha),
            eta: Some(hp.eta),
            gamma: Some(hp.gamma),
            beta: Some(hp.beta),
            a_x: Some(hp.a_x),
            a_lambda: Some(hp.a_lambda),
        }
    }

    pub fn resolve(&self, algorithm: Algorithm) -> Result<HyperParams> {
        let base = match &self.preset {
            Some(name) => named_hyperparams(name)
                .ok_or_else(|| Error::config("hyperparams.preset", format!("unknown table row `{name}`")))?
                .hp,
            None => default_row(algorithm).hp,
        };
        Ok(HyperParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            eta: self.eta.unwrap_or(base.eta),
            gamma: self.gamma.unwrap_or(base.gamma),
            beta: self.beta.unwrap_or(base.beta),
            a_x: self.a_x.unwrap_or(base.a_x),
            a_lambda: self.a_lambda.unwrap_or(base.a_lambda),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLawKind {
    OneEdgeUniform,
    IndependentBernoulli,
    FullGraph,
    PeriodicLocalUpdate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeLawParams {
    /// Uniform Bernoulli probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Per-edge Bernoulli probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub edge_law: EdgeLawKind,
    #[serde(default)]
    pub params: EdgeLawParams,
    #[serde(default = "one")]
    pub sparsity: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            edge_law: EdgeLawKind::OneEdgeUniform,
            params: EdgeLawParams::default(),
            sparsity: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn edge_law(&self, n_edges: usize) -> Result<EdgeLaw> {
        Ok(match self.edge_law {
            EdgeLawKind::OneEdgeUniform => EdgeLaw::OneEdgeUniform,
            EdgeLawKind::FullGraph => EdgeLaw::FullGraph,
            EdgeLawKind::IndependentBernoulli => match (&self.params.probs, self.params.p) {
                (Some(probs), None) => EdgeLaw::IndependentBernoulli { probs: probs.clone() },
                (None, Some(p)) => EdgeLaw::bernoulli_uniform(p, n_edges),
                _ => {
                    return Err(Error::config(
                        "sampler.params.p",
                        "independent_bernoulli needs exactly one of `p` or `probs`",
                    ))
                }
            },
            EdgeLawKind::PeriodicLocalUpdate => EdgeLaw::PeriodicLocalUpdate {
                period: self
                    .params
                    .period
                    .ok_or_else(|| Error::config("sampler.params.period", "periodic_local_update needs `period`"))?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    Path,
    Star,
    Er,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Edge probability for `er`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Edge-list file for `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl TopologyConfig {
    pub fn of(kind: TopologyKind, n: usize) -> Self {
        Self {
            kind,
            n: Some(n),
            p: None,
            path: None,
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<Topology> {
        let n = || {
            self.n
                .ok_or_else(|| Error::config("topology.n", "required for this topology kind"))
        };
        let topo = match self.kind {
            TopologyKind::Complete => Topology::complete(n()?),
            TopologyKind::Ring => Topology::ring(n()?),
            TopologyKind::Path => Topology::path(n()?),
            TopologyKind::Star => Topology::star(n()?),
            TopologyKind::Er => {
                let p = self.p.ok_or_else(|| Error::config("topology.p", "required for `er`"))?;
                Topology::erdos_renyi(n()?, p, self.seed)
            }
            TopologyKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("topology.path", "required for `file`"))?;
                let t = Topology::load(path)?;
                if let Some(n) = self.n {
                    if n != t.n() {
                        return Err(Error::config(
                            "topology.n",
                            format!("file declares {} agents, config says {n}", t.n()),
                        ));
                    }
                }
                Ok(t)
            }
        };
        topo.map_err(|e| Error::config("topology", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    #[serde(default = "default_d")]
    pub d: usize,
    /// Heterogeneity scale of the quadratic suite.
    #[serde(default = "one")]
    pub h: f64,
    /// Samples per agent for the logistic suite.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_partition")]
    pub partition: Partition,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            d: default_d(),
            h: 1.0,
            m: default_m(),
            partition: default_partition(),
            l2: default_l2(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default)]
    pub params: ProblemParams,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            params: ProblemParams::default(),
        }
    }
}

impl ProblemConfig {
    pub fn quadratic(d: usize, h: f64, seed: u64) -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            params: ProblemParams {
                d,
                h,
                seed,
                ..ProblemParams::default()
            },
        }
    }

    pub fn build(&self, n: usize) -> Result<ObjectiveSuite> {
        let p = &self.params;
        let suite = match self.kind {
            ProblemKind::Quadratic => ObjectiveSuite::heterogeneous_quadratic(n, p.d, p.h, p.seed),
            ProblemKind::Logistic => ObjectiveSuite::logistic(n, p.m, p.d, p.partition, p.l2, p.seed),
        };
        suite.map_err(|e| Error::config("problem.params", e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write per-seed CSV files.
    #[serde(default)]
    pub csv: bool,
}

fn one() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn default_t() -> u64 {
    1000
}
fn default_d() -> usize {
    10
}
fn default_m() -> usize {
    50
}
fn default_l2() -> f64 {
    0.01
}
fn default_partition() -> Partition {
    Partition::Shuffled
}
fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "T", default = "default_t")]
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub hyperparams: HyperParamsConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub schedule: Schedule,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub async_mask: Option<AsyncGradientMask>,
    #[serde(default)]
    pub init: Init,
    #[serde(default, skip_serializing_if = "is_default")]
    pub storm_init: StormInit,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "one_u64")]
    pub metric_period: u64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub bits: BitCosts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    /// Run on the asynchronous runtime with this timing model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub async_timing: Option<Timing>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub output: OutputConfig,
}

/// A config with its graph and suite materialized.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub inc: IncidenceMatrix,
    pub suite: ObjectiveSuite,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, iterations: u64, hp: HyperParams, topology: TopologyConfig) -> Self {
        Self {
            algorithm,
            iterations,
            hyperparams: HyperParamsConfig::explicit(hp),
            schedule: Schedule::Constant,
            sampler: SamplerConfig::default(),
            topology,
            problem: ProblemConfig::default(),
            noise: NoiseModel::EXACT,
            async_mask: None,
            init: Init::default(),
            storm_init: StormInit::default(),
            seeds: Seeds::default(),
            metric_period: 1,
            bits: BitCosts::default(),
            potential: None,
            async_timing: None,
            output: OutputConfig::default(),
        }
    }

    /// Checks every field and materializes graph and suite. Errors name
    /// the offending field path.
    pub fn build(&self) -> Result<Experiment> {
        if self.iterations == 0 {
            return Err(Error::config("T", "must be at least 1"));
        }
        if self.metric_period == 0 {
            return Err(Error::config("metric_period", "must be at least 1"));
        }
        let hp = self.hyperparams.resolve(self.algorithm)?;
        if !(hp.alpha > 0.0) {
            return Err(Error::config("hyperparams.alpha", format!("{} must be > 0", hp.alpha)));
        }
        hp.validate(self.algorithm).map_err(|e| match e {
            Error::HyperParam { field, reason } => Error::config(format!("hyperparams.{field}"), reason),
            other => other,
        })?;
        self.schedule
            .validate()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        if !(self.sampler.sparsity > 0.0 && self.sampler.sparsity <= 1.0) {
            return Err(Error::config(
                "sampler.sparsity",
                format!("{} must lie in (0, 1]", self.sampler.sparsity),
            ));
        }
        let topology = self.topology.build()?;
        let inc = build_incidence(&topology);
        let edge_law = self.sampler.edge_law(inc.edge_count())?;
        let sampler = SamplerSpec::new(edge_law, self.sampler.sparsity, self.seeds.graph);
        sampler
            .validate(inc.edge_count())
            .map_err(|e| Error::config("sampler.params", e.to_string()))?;
        let suite = self.problem.build(topology.n())?;
        suite
            .check_noise(&self.noise)
            .map_err(|e| Error::config("noise", e.to_string()))?;
        if let Some(m) = &self.async_mask {
            m.validate(suite.n()).map_err(|e| Error::config("async_mask", e.to_string()))?;
        }
        if let Some(p) = &self.potential {
            if !(p.a > 0.0 && p.delta1 > 0.0) {
                return Err(Error::config("potential", "`a` and `delta1` must be > 0"));
            }
        }
        if self.async_timing.is_some() {
            if self.algorithm != Algorithm::FspdaSa {
                return Err(Error::config("async_timing", "the asynchronous runtime runs fspda_sa only"));
            }
            if self.sampler.edge_law != EdgeLawKind::OneEdgeUniform {
                return Err(Error::config(
                    "sampler.edge_law",
                    "the asynchronous runtime activates one edge per gossip",
                ));
            }
        }
        let run = RunConfig {
            algorithm: self.algorithm,
            iterations: self.iterations,
            hp,
            schedule: self.schedule,
            sampler,
            noise: self.noise.clone(),
            async_mask: self.async_mask.clone(),
            init: self.init.clone(),
            storm_init: self.storm_init,
            metric_period: self.metric_period,
            seeds: self.seeds,
            bits: self.bits,
            potential: self.potential,
        };
        run.validate(&suite, inc.edge_count())?;
        Ok(Experiment {
            config: self.clone(),
            topology,
            inc,
            suite,
            run,
        })
    }
}

/// Parses a config document, reporting the field path of schema errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })?;
    Ok(cfg)
}

/// Reads, parses and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    cfg.build()?;
    Ok(cfg)
}

/// Applies `key.path=value` to a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key.path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config(key, "empty path segment"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..k].join("."), "not an object"))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Applies overrides to a config and re-validates it.
pub fn override_config(config: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    let mut doc = serde_json::to_value(config)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg = parse_config(&doc.to_string())?;
    cfg.build()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// CLI shorthands for graphs and samplers

/// `ring:5`, `path:4`, `star:6`, `complete:5`, `er:8:0.4[:seed]` or
/// `file:<path>`.
pub fn parse_topology_spec(spec: &str) -> Result<TopologyConfig> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = |m: &str| Error::config("topology", format!("`{spec}`: {m}"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("agent count must be an integer"));
    let kind = match parts[0] {
        "complete" => TopologyKind::Complete,
        "ring" => TopologyKind::Ring,
        "path" => TopologyKind::Path,
        "star" => TopologyKind::Star,
        "er" => TopologyKind::Er,
        "file" => {
            let path = spec.strip_prefix("file:").ok_or_else(|| bad("expected file:<path>"))?;
            return Ok(TopologyConfig {
                kind: TopologyKind::File,
                n: None,
                p: None,
                path: Some(path.into()),
                seed: 0,
            });
        }
        _ => return Err(bad("unknown topology kind")),
    };
    match (kind, parts.len()) {
        (TopologyKind::Er, 3 | 4) => Ok(TopologyConfig {
            kind,
            n: Some(num(parts[1])?),
            p: Some(parts[2].parse().map_err(|_| bad("p must be a number"))?),
            path: None,
            seed: match parts.get(3) {
                Some(s) => s.parse().map_err(|_| bad("seed must be an integer"))?,
                None => 0,
            },
        }),
        (TopologyKind::Er, _) => Err(bad("expected er:<n>:<p>[:seed]")),
        (_, 2) => Ok(TopologyConfig::of(kind, num(parts[1])?)),
        _ => Err(bad("expected <kind>:<n>")),
    }
}

/// `one_edge`, `full`, `bernoulli:<p>` or `periodic:<P>`, optionally
/// followed by `,s=<sparsity>`.
pub fn parse_sampler_spec(spec: &str) -> Result<SamplerConfig> {
    let bad = |m: &str| Error::config("sampler", format!("`{spec}`: {m}"));
    let (law, rest) = match spec.split_once(',') {
        Some((l, r)) => (l, Some(r)),
        None => (spec, None),
    };
    let mut cfg = SamplerConfig::default();
    match law.split_once(':') {
        None if law == "one_edge" => cfg.edge_law = EdgeLawKind::OneEdgeUniform,
        None if law == "full" => cfg.edge_law = EdgeLawKind::FullGraph,
        Some(("bernoulli", p)) => {
            cfg.edge_law = EdgeLawKind::IndependentBernoulli;
            cfg.params.p = Some(p.parse().map_err(|_| bad("p must be a number"))?);
        }
        Some(("periodic", p)) => {
            cfg.edge_law = EdgeLawKind::PeriodicLocalUpdate;
            cfg.params.period = Some(p.parse().map_err(|_| bad("period must be an integer"))?);
        }
        _ => return Err(bad("unknown edge law")),
    }
    if let Some(rest) = rest {
        let s = rest.strip_prefix("s=").ok_or_else(|| bad("expected ,s=<sparsity>"))?;
        cfg.sparsity = s.parse().map_err(|_| bad("sparsity must be a number"))?;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Presets

/// One labelled run of a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRun {
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub runs: Vec<PresetRun>,
    /// Seeds used when the caller does not choose.
    pub default_seeds: usize,
}

pub const PRESET_NAMES: [&str; 10] = [
    "rate_sweep",
    "pl_linear",
    "storm_vs_sa",
    "heterogeneity",
    "sparsity_sweep",
    "topology_sweep",
    "deterministic",
    "dual_momentum",
    "dsgd_bias",
    "async_vs_sync",
];

fn ring5_quadratic(
    algorithm: Algorithm,
    iterations: u64,
    hp: HyperParams,
    h: f64,
    master: u64,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(algorithm, iterations, hp, TopologyConfig::of(TopologyKind::Ring, 5));
    c.problem = ProblemConfig::quadratic(10, h, derive_seed(master, domain::SUITE));
    c.seeds = Seeds::from_master(master);
    c
}

fn gaussian(sigma: f64) -> NoiseModel {
    NoiseModel::AdditiveGaussian { sigma }
}

fn one_edge(s: f64) -> SamplerConfig {
    SamplerConfig {
        sparsity: s,
        ..SamplerConfig::default()
    }
}

/// Builds a named preset. The published tables were tuned for neural
/// networks at scale; presets keep their structure (which parameters vary,
/// which stay fixed) but use step sizes sized for the 10-dimensional
/// synthetic suites, with `T` scaled to seconds of compute.
pub fn preset(name: &str, master: u64) -> Result<Preset> {
    let sa = Algorithm::FspdaSa;
    let storm = Algorithm::FspdaStorm;
    let dsgd = Algorithm::Dsgd;
    let mut runs = Vec::new();
    let mut push = |label: String, config: ExperimentConfig| runs.push(PresetRun { label, config });
    let default_seeds = match name {
        // α = c/√T with c = 0.5, one-edge graph, half the coordinates.
        "rate_sweep" => {
            for t in [1000u64, 4000, 16000] {
                let alpha = 0.5 / (t as f64).sqrt();
                let mut c = ring5_quadratic(sa, t, HyperParams::new(alpha, alpha / 5.0, 0.05, 1.0), 10.0, master);
                c.sampler = one_edge(0.5);
                c.noise = gaussian(1.0);
                push(format!("T{t}"), c);
            }
            20
        }
        // Static full graph, exact gradients, conservative steps.
        "pl_linear" => {
            let mut c = ring5_quadratic(sa, 20000, HyperParams::new(0.0015, 4e-4, 0.008, 1.0), 10.0, master);
            c.sampler.edge_law = EdgeLawKind::FullGraph;
            c.potential = Some(PotentialSpec { a: 1.0, delta1: 8.0 });
            push("sa".into(), c);
            1
        }
        // Heavy noise; both algorithms share α, η, γ.
        "storm_vs_sa" => {
            let hp = HyperParams::new(0.002, 0.0004, 0.05, 1.0);
            for (label, alg, hp) in [("sa", sa, hp), ("storm", storm, hp.with_momentum(0.01, 0.1))] {
                let mut c = ring5_quadratic(alg, 100_000, hp, 10.0, master);
                c.sampler = one_edge(0.5);
                c.noise = gaussian(10.0);
                c.metric_period = 10;
                push(label.into(), c);
            }
            10
        }
        "heterogeneity" => {
            for h in [0.0, 1.0, 10.0] {
                let mut c = ring5_quadratic(sa, 20000, HyperParams::new(0.005, 0.001, 0.05, 1.0), h, master);
                c.noise = gaussian(1.0);
                c.metric_period = 10;
                push(format!("sa_h{h}"), c.clone());
                c.algorithm = dsgd;
                c.hyperparams = HyperParamsConfig::explicit(HyperParams::new(0.005, 0.0, 0.5, 0.0));
                push(format!("dsgd_h{h}"), c);
            }
            5
        }
        "sparsity_sweep" => {
            for s in [1.0, 0.5, 0.1] {
                let mut c = ring5_quadratic(sa, 20000, HyperParams::new(0.005, 0.001, 0.05, 1.0), 10.0, master);
                c.sampler = one_edge(s);
                c.noise = gaussian(1.0);
                c.metric_period = 10;
                push(format!("s{s}"), c);
            }
            5
        }
        "topology_sweep" => {
            let topos = [
                ("ring", TopologyConfig::of(TopologyKind::Ring, 8)),
                ("star", TopologyConfig::of(TopologyKind::Star, 8)),
                ("complete", TopologyConfig::of(TopologyKind::Complete, 8)),
                (
                    "er",
                    TopologyConfig {
                        p: Some(0.4),
                        seed: derive_seed(master, domain::EDGE_SELECT),
                        ..TopologyConfig::of(TopologyKind::Er, 8)
                    },
                ),
            ];
            for (label, topo) in topos {
                let mut c = ring5_quadratic(sa, 20000, HyperParams::new(0.005, 0.001, 0.05, 1.0), 10.0, master);
                c.topology = topo;
                c.noise = gaussian(1.0);
                c.metric_period = 10;
                push(label.into(), c);
            }
            5
        }
        "deterministic" => {
            for s in [1.0, 0.1] {
                let mut c = ring5_quadratic(sa, 20000, HyperParams::new(0.01, 0.002, 0.05, 1.0), 10.0, master);
                c.sampler = one_edge(s);
                c.metric_period = 10;
                push(format!("sa_s{s}"), c);
            }
            let mut c = ring5_quadratic(dsgd, 20000, HyperParams::new(0.01, 0.0, 0.5, 0.0), 10.0, master);
            c.metric_period = 10;
            push("dsgd".into(), c);
            1
        }
        "dual_momentum" => {
            for a_lambda in [1.0, 0.01] {
                let hp = HyperParams::new(0.002, 0.0004, 0.05, 1.0).with_momentum(0.01, a_lambda);
                let mut c = ring5_quadratic(storm, 20000, hp, 10.0, master);
                c.sampler = one_edge(0.5);
                c.noise = gaussian(1.0);
                c.metric_period = 10;
                push(format!("a_lambda{a_lambda}"), c);
            }
            5
        }
        // Exact gradients on the heterogeneous suite: DSGD at its default
        // step and two larger ones against FSPDA-SA.
        "dsgd_bias" => {
            let mut c = ring5_quadratic(sa, 100_000, HyperParams::new(0.01, 0.002, 0.05, 1.0), 10.0, master);
            c.metric_period = 10;
            push("sa".into(), c.clone());
            for m in [1.0, 2.0, 4.0] {
                c.algorithm = dsgd;
                c.hyperparams = HyperParamsConfig::explicit(HyperParams::new(0.01 * m, 0.0, 0.3, 0.0));
                push(format!("dsgd_x{m}"), c.clone());
            }
            1
        }
        "async_vs_sync" => {
            let mut c = ring5_quadratic(sa, 5000, HyperParams::new(0.005, 0.001, 0.05, 1.0), 10.0, master);
            c.sampler = one_edge(0.5);
            c.noise = gaussian(1.0);
            c.metric_period = 10;
            push("sync".into(), c.clone());
            c.async_timing = Some(Timing::default());
            push("async".into(), c);
            5
        }
        _ => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{name}`; known: {}", PRESET_NAMES.join(", ")),
            ))
        }
    };
    Ok(Preset {
        name: name.to_string(),
        runs,
        default_seeds,
    })
}

// ---------------------------------------------------------------------------
// Batches

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Standard error of the mean across seeds (0 for one seed).
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub t: u64,
    pub grad_norm_sq_avg: Stat,
    pub worst_grad_norm_sq: Stat,
    pub worst_loss: Stat,
    pub consensus_err: Stat,
    pub bits_cum: Stat,
    pub suboptimality: Option<Stat>,
    pub potential: Option<Stat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit { slope, intercept, r2 })
}

/// Per-label summary of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub algorithm: Algorithm,
    #[serde(rename = "T")]
    pub iterations: u64,
    pub seeds: usize,
    /// Mean over recorded iterates with `t < T` of `‖∇F(x̄)‖²`.
    pub time_avg_grad_norm_sq: Stat,
    pub time_avg_consensus_err: Stat,
    /// Mean of `‖∇F(x̄)‖²` over the last 10% of iterations.
    pub plateau_grad_norm_sq: Stat,
    pub final_grad_norm_sq: Stat,
    pub final_consensus_err: Stat,
    pub final_worst_loss: Stat,
    pub bits_total: Stat,
    /// Log-linear fit of `F(x̄) − f⋆ + ‖x‖²_K` on the seed-mean series.
    pub linear_fit: Option<LinearFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub preset: String,
    pub n_seeds: usize,
    pub runs: Vec<RunSummary>,
    /// Preset-level fitted quantities (slopes, ratios, plateaus).
    pub fits: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub n_seeds: usize,
    pub runs: Vec<PresetRun>,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub summary: BatchSummary,
    /// Per label, per seed metric streams.
    pub streams: Vec<Vec<Vec<MetricsRecord>>>,
    pub aggregates: Vec<Vec<AggregateRecord>>,
}

/// Seeds of batch member `k`: the config's own seeds for `k = 0`, fresh
/// derived seeds otherwise.
pub fn seeds_for(base: Seeds, k: usize) -> Seeds {
    if k == 0 {
        return base;
    }
    let root = base.graph ^ base.noise.rotate_left(21) ^ base.init.rotate_left(42);
    Seeds::from_master(derive_seed(root, k as u64))
}

fn execute(exp: &Experiment, seeds: Seeds) -> Result<Vec<MetricsRecord>> {
    let mut cfg = exp.run.clone();
    cfg.seeds = seeds;
    cfg.sampler.seed = seeds.graph;
    match &exp.config.async_timing {
        None => Ok(run(&cfg, &exp.inc, &exp.suite)?.records),
        Some(timing) => {
            let acfg = AsyncConfig {
                iterations: cfg.iterations,
                hp: cfg.hp,
                sparsity: cfg.sampler.sparsity,
                noise: cfg.noise.clone(),
                init: cfg.init.clone(),
                seeds,
                metric_period: cfg.metric_period,
                max_events: None,
            };
            Ok(run_async(&acfg, &exp.inc, &exp.suite, &Scheduler::Random(*timing), None, &mut |_| {})?.records)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FSPDA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config("FSPDA_THREADS", format!("`{v}` is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config("FSPDA_THREADS", e.to_string()))
}

/// Runs every labelled config for `n_seeds` seeds in parallel, writes the
/// streams and summaries under `out` when given, and returns them.
pub fn run_batch(name: &str, runs: &[PresetRun], n_seeds: usize, out: Option<&Path>) -> Result<BatchResult> {
    if n_seeds == 0 {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let experiments = runs
        .iter()
        .map(|r| {
            r.config
                .build()
                .map_err(|e| Error::config(r.label.clone(), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|r| (0..n_seeds).map(move |k| (r, k)))
        .collect();
    let pool = thread_pool()?;
    let results: Vec<Result<Vec<MetricsRecord>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, k)| {
                let exp = &experiments[r];
                execute(exp, seeds_for(exp.config.seeds, k)).map_err(|e| Error::Seed {
                    seed: k as u64,
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let mut streams: Vec<Vec<Vec<MetricsRecord>>> = vec![Vec::with_capacity(n_seeds); runs.len()];
    for ((r, _), res) in jobs.iter().zip(results) {
        streams[*r].push(res?);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            preset: name.to_string(),
            n_seeds,
            runs: runs.to_vec(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (run, seeds) in runs.iter().zip(&streams) {
            let sub = dir.join(&run.label);
            fs::create_dir_all(&sub)?;
            for (k, recs) in seeds.iter().enumerate() {
                write_jsonl(recs, fs::File::create(sub.join(format!("seed_{k:04}.jsonl")))?)?;
                if run.config.output.csv {
                    write_csv(recs, fs::File::create(sub.join(format!("seed_{k:04}.csv")))?)?;
                }
            }
        }
    }
    summarize(name, runs, streams, out)
}

/// Runs a preset (after overrides) with its default seed count unless one
/// is given.
pub fn run_preset(
    name: &str,
    master: u64,
    n_seeds: Option<usize>,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<BatchResult> {
    let p = preset(name, master)?;
    let runs = p
        .runs
        .iter()
        .map(|r| {
            Ok(PresetRun {
                label: r.label.clone(),
                config: override_config(&r.config, overrides)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_batch(name, &runs, n_seeds.unwrap_or(p.default_seeds), out)
}

/// Recomputes aggregates and summaries from a batch directory.
pub fn analyze(dir: &Path) -> Result<BatchSummary> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut streams = Vec::with_capacity(manifest.runs.len());
    for run in &manifest.runs {
        let mut seeds = Vec::with_capacity(manifest.n_seeds);
        for k in 0..manifest.n_seeds {
            let path = dir.join(&run.label).join(format!("seed_{k:04}.jsonl"));
            seeds.push(read_jsonl(&fs::read_to_string(&path)?)?);
        }
        streams.push(seeds);
    }
    Ok(summarize(&manifest.preset, &manifest.runs, streams, Some(dir))?.summary)
}

fn aggregate_streams(seeds: &[Vec<MetricsRecord>]) -> Vec<AggregateRecord> {
    let len = seeds.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col = |f: &dyn Fn(&MetricsRecord) -> f64| Stat::of(&seeds.iter().map(|s| f(&s[i])).collect::<Vec<_>>());
            let opt = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
                seeds
                    .iter()
                    .map(|s| f(&s[i]))
                    .collect::<Option<Vec<_>>>()
                    .map(|v| Stat::of(&v))
            };
            AggregateRecord {
                t: seeds[0][i].t,
                grad_norm_sq_avg: col(&|r| r.grad_norm_sq_avg),
                worst_grad_norm_sq: col(&|r| r.worst_grad_norm_sq),
                worst_loss: col(&|r| r.worst_loss),
                consensus_err: col(&|r| r.consensus_err),
                bits_cum: col(&|r| r.bits_cum as f64),
                suboptimality: opt(&|r| r.suboptimality),
                potential: opt(&|r| r.potential),
            }
        })
        .collect()
}

fn window_mean(recs: &[MetricsRecord], keep: impl Fn(u64) -> bool, f: impl Fn(&MetricsRecord) -> f64) -> f64 {
    let vals: Vec<f64> = recs.iter().filter(|r| keep(r.t)).map(f).collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn summarize_run(run: &PresetRun, seeds: &[Vec<MetricsRecord>], agg: &[AggregateRecord]) -> RunSummary {
    let t_end = run.config.iterations;
    let plateau_from = t_end - t_end / 10;
    let per_seed = |f: &dyn Fn(&[MetricsRecord]) -> f64| Stat::of(&seeds.iter().map(|s| f(s)).collect::<Vec<_>>());
    let last = |f: fn(&MetricsRecord) -> f64| move |s: &[MetricsRecord]| s.last().map_or(f64::NAN, f);
    let linear_fit = {
        let pts: Vec<(f64, f64)> = agg
            .iter()
            .filter_map(|a| {
                let v = a.suboptimality?.mean + a.consensus_err.mean;
                (v > 0.0 && v.is_finite()).then(|| (a.t as f64, v.ln()))
            })
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if run.config.noise.is_exact() {
            least_squares(&xs, &ys)
        } else {
            None
        }
    };
    RunSummary {
        label: run.label.clone(),
        algorithm: run.config.algorithm,
        iterations: t_end,
        seeds: seeds.len(),
        time_avg_grad_norm_sq: per_seed(&|s| window_mean(s, |t| t < t_end, |r| r.grad_norm_sq_avg)),
        time_avg_consensus_err: per_seed(&|s| window_mean(s, |t| t < t_end, |r| r.consensus_err)),
        plateau_grad_norm_sq: per_seed(&|s| window_mean(s, |t| t >= plateau_from, |r| r.grad_norm_sq_avg)),
        final_grad_norm_sq: per_seed(&last(|r| r.grad_norm_sq_avg)),
        final_consensus_err: per_seed(&last(|r| r.consensus_err)),
        final_worst_loss: per_seed(&last(|r| r.worst_loss)),
        bits_total: per_seed(&last(|r| r.bits_cum as f64)),
        linear_fit,
    }
}

fn preset_fits(name: &str, runs: &[RunSummary]) -> BTreeMap<String, f64> {
    let mut fits = BTreeMap::new();
    let by = |label: &str| runs.iter().find(|r| r.label == label);
    match name {
        "rate_sweep" => {
            let xs: Vec<f64> = runs.iter().map(|r| (r.iterations as f64).ln()).collect();
            let ys: Vec<f64> = runs.iter().map(|r| r.time_avg_grad_norm_sq.mean.ln()).collect();
            if let Some(f) = least_squares(&xs, &ys) {
                fits.insert("loglog_slope".into(), f.slope);
            }
            let lo = runs.iter().min_by_key(|r| r.iterations);
            let hi = runs.iter().max_by_key(|r| r.iterations);
            if let (Some(lo), Some(hi)) = (lo, hi) {
                fits.insert(
                    "consensus_ratio".into(),
                    hi.time_avg_consensus_err.mean / lo.time_avg_consensus_err.mean,
                );
            }
        }
        "pl_linear" => {
            if let Some(f) = runs.first().and_then(|r| r.linear_fit) {
                fits.insert("slope".into(), f.slope);
                fits.insert("r2".into(), f.r2);
            }
        }
        "storm_vs_sa" | "dual_momentum" | "async_vs_sync" => {
            let (num, den) = match name {
                "storm_vs_sa" => ("storm", "sa"),
                "dual_momentum" => ("a_lambda0.01", "a_lambda1"),
                _ => ("async", "sync"),
            };
            if let (Some(a), Some(b)) = (by(num), by(den)) {
                fits.insert(
                    format!("{num}_over_{den}"),
                    a.time_avg_grad_norm_sq.mean / b.time_avg_grad_norm_sq.mean,
                );
            }
        }
        "dsgd_bias" => {
            if let Some(sa) = by("sa") {
                fits.insert("sa_plateau".into(), sa.plateau_grad_norm_sq.mean);
            }
            let dsgd_min = runs
                .iter()
                .filter(|r| r.algorithm == Algorithm::Dsgd)
                .map(|r| r.plateau_grad_norm_sq.mean)
                .fold(f64::INFINITY, f64::min);
            if dsgd_min.is_finite() {
                fits.insert("dsgd_min_plateau".into(), dsgd_min);
            }
        }
        _ => {}
    }
    for r in runs {
        fits.insert(format!("{}.time_avg_grad_norm_sq", r.label), r.time_avg_grad_norm_sq.mean);
    }
    fits
}

fn summarize(
    name: &str,
    runs: &[PresetRun],
    streams: Vec<Vec<Vec<MetricsRecord>>>,
    out: Option<&Path>,
) -> Result<BatchResult> {
    let aggregates: Vec<Vec<AggregateRecord>> = streams.iter().map(|s| aggregate_streams(s)).collect();
    let summaries: Vec<RunSummary> = runs
        .iter()
        .zip(&streams)
        .zip(&aggregates)
        .map(|((r, s), a)| summarize_run(r, s, a))
        .collect();
    let summary = BatchSummary {
        preset: name.to_string(),
        n_seeds: streams.first().map_or(0, Vec::len),
        fits: preset_fits(name, &summaries),
        runs: summaries,
    };
    if let Some(dir) = out {
        for ((run, agg), s) in runs.iter().zip(&aggregates).zip(&summary.runs) {
            let sub = dir.join(&run.label);
            fs::create_dir_all(&sub)?;
            let mut text = String::new();
            for a in agg {
                text.push_str(&serde_json::to_string(a)?);
                text.push('\n');
            }
            fs::write(sub.join("aggregate.jsonl"), text)?;
            fs::write(sub.join("summary.json"), serde_json::to_string_pretty(s)?)?;
        }
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(BatchResult {
        summary,
        streams,
        aggregates,
    })
}
