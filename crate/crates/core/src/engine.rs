//! Synchronous iteration driver.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    compute_v, dsgd_step, fspda_sa_step, fspda_storm_step, storm_init, Algorithm, AgentStates, HyperParams, Potential,
    PotentialWeights, Schedule, StormInit,
};
use crate::blocks::{norm_sq, Blocks};
use crate::error::{Error, Result};
use crate::graph::{expected_laplacian, k_seminorm_sq, GraphSample, IncidenceMatrix, SampleSource, Sampler, SamplerSpec};
use crate::objectives::{AsyncGradientMask, NoiseModel, ObjectiveSuite};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    /// Every agent starts at `x`.
    ConsensusAt { x: Vec<f64> },
    PerAgent { x: Vec<Vec<f64>> },
    /// Independent `N(0, scale²)` coordinates drawn from the init seed.
    Random { scale: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::Random { scale: 1.0 }
    }
}

impl Init {
    pub fn materialize(&self, n: usize, d: usize, seed: u64) -> Result<Blocks> {
        match self {
            Init::ConsensusAt { x } => {
                if x.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: x.len(),
                        context: "initial point",
                    });
                }
                Ok(Blocks::consensus(n, x))
            }
            Init::PerAgent { x } => {
                if x.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: x.len(),
                        context: "per-agent initial points",
                    });
                }
                let b = Blocks::from_rows(x.clone())?;
                b.check_shape(n, d, "per-agent initial points")?;
                Ok(b)
            }
            Init::Random { scale } => {
                let mut r = rng::stream(seed, domain::INIT, 0, 0);
                let data = (0..n * d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
                Blocks::from_flat(n, d, data)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub graph: u64,
    #[serde(default)]
    pub noise: u64,
    #[serde(default)]
    pub init: u64,
}

impl Seeds {
    /// Independent graph/noise/init seeds derived from one master seed.
    pub fn from_master(seed: u64) -> Self {
        Self {
            graph: rng::derive_seed(seed, domain::EDGE_SELECT),
            noise: rng::derive_seed(seed, domain::GRAD_NOISE),
            init: rng::derive_seed(seed, domain::INIT),
        }
    }
}

/// Per transmitted coordinate: value bits plus index bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitCosts {
    pub value_bits: u64,
    pub index_bits: u64,
}

impl Default for BitCosts {
    fn default() -> Self {
        Self {
            value_bits: 32,
            index_bits: 32,
        }
    }
}

/// Bits sent in one iteration: both directions of every active edge carry
/// `|mask|` index-value pairs per exchanged vector.
pub fn account_bits(sample: &GraphSample, algorithm: Algorithm, costs: BitCosts) -> u64 {
    let coords: u64 = sample.active.iter().map(|a| a.mask.len() as u64).sum();
    2 * coords * (costs.value_bits + costs.index_bits) * algorithm.exchanged_vectors()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub a: f64,
    #[serde(default = "default_delta1")]
    pub delta1: f64,
}

fn default_delta1() -> f64 {
    PotentialWeights::DEFAULT_DELTA1
}

fn default_metric_period() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "T")]
    pub iterations: u64,
    pub hp: HyperParams,
    #[serde(default)]
    pub schedule: Schedule,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub async_mask: Option<AsyncGradientMask>,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub storm_init: StormInit,
    #[serde(default = "default_metric_period")]
    pub metric_period: u64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub bits: BitCosts,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, iterations: u64, hp: HyperParams, sampler: SamplerSpec) -> Self {
        Self {
            algorithm,
            iterations,
            hp,
            schedule: Schedule::Constant,
            sampler,
            noise: NoiseModel::EXACT,
            async_mask: None,
            init: Init::default(),
            storm_init: StormInit::Theoretical,
            metric_period: 1,
            seeds: Seeds::default(),
            bits: BitCosts::default(),
            potential: None,
        }
    }

    pub fn validate(&self, suite: &ObjectiveSuite, n_edges: usize) -> Result<()> {
        if self.metric_period == 0 {
            return Err(Error::HyperParam {
                field: "metric_period",
                reason: "must be at least 1".into(),
            });
        }
        self.hp.validate(self.algorithm)?;
        self.schedule.validate()?;
        self.sampler.validate(n_edges)?;
        suite.check_noise(&self.noise)?;
        if let Some(m) = &self.async_mask {
            m.validate(suite.n())?;
        }
        Ok(())
    }
}

/// One metrics emission. Optional fields serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    /// `‖∇F(x̄)‖²`.
    pub grad_norm_sq_avg: f64,
    /// `max_i ‖∇F(x_i)‖²`.
    pub worst_grad_norm_sq: f64,
    /// `max_i F(x_i)`.
    pub worst_loss: f64,
    /// `‖x‖_K²`.
    pub consensus_err: f64,
    pub v_norm_sq: Option<f64>,
    pub potential: Option<f64>,
    pub bits_cum: u64,
    /// `F(x̄) − f_⋆`.
    pub suboptimality: Option<f64>,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 9] = [
        "t",
        "grad_norm_sq_avg",
        "worst_grad_norm_sq",
        "worst_loss",
        "consensus_err",
        "v_norm_sq",
        "potential",
        "bits_cum",
        "suboptimality",
    ];

    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.t.to_string(),
            self.grad_norm_sq_avg.to_string(),
            self.worst_grad_norm_sq.to_string(),
            self.worst_loss.to_string(),
            self.consensus_err.to_string(),
            opt(self.v_norm_sq),
            opt(self.potential),
            self.bits_cum.to_string(),
            opt(self.suboptimality),
        ]
        .join(",")
    }
}

pub fn write_jsonl(records: &[MetricsRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// CSV with the JSONL field names as header; missing values are empty.
pub fn write_csv(records: &[MetricsRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{}", MetricsRecord::COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<MetricsRecord>,
    pub final_state: AgentStates,
    pub bits_total: u64,
}

/// Computes every metric at the current state.
pub struct MetricsProbe<'a> {
    suite: &'a ObjectiveSuite,
    hp: HyperParams,
    with_v: bool,
    potential: Option<Potential>,
}

impl<'a> MetricsProbe<'a> {
    pub fn new(config: &RunConfig, suite: &'a ObjectiveSuite, inc: &IncidenceMatrix) -> Result<Self> {
        let potential = match &config.potential {
            Some(p) => {
                let el = expected_laplacian(&config.sampler, inc, suite.dim())?;
                let w = PotentialWeights::recipe(p.a, &config.hp, p.delta1)?;
                Some(Potential::new(w, &el)?)
            }
            None => None,
        };
        Ok(Self {
            suite,
            hp: config.hp,
            with_v: config.hp.eta > 0.0 && config.algorithm != Algorithm::Dsgd,
            potential,
        })
    }

    pub fn record(&self, t: u64, state: &AgentStates, bits_cum: u64) -> Result<MetricsRecord> {
        let suite = self.suite;
        let x_bar = state.x.mean();
        let mut worst_grad: f64 = 0.0;
        let mut worst_loss = f64::NEG_INFINITY;
        for row in state.x.rows() {
            worst_grad = worst_grad.max(norm_sq(&suite.global_grad(row)));
            worst_loss = worst_loss.max(suite.global_value(row));
        }
        let v_norm_sq = if self.with_v {
            Some(compute_v(state, suite, &self.hp)?.1)
        } else {
            None
        };
        let potential = match &self.potential {
            Some(p) => Some(p.evaluate(state, suite, &self.hp)?.total()),
            None => None,
        };
        Ok(MetricsRecord {
            t,
            grad_norm_sq_avg: norm_sq(&suite.global_grad(&x_bar)),
            worst_grad_norm_sq: worst_grad,
            worst_loss,
            consensus_err: k_seminorm_sq(&state.x),
            v_norm_sq,
            potential,
            bits_cum,
            suboptimality: suite.excess(&x_bar),
        })
    }
}

/// Stochastic gradients at `x` for iteration-stream `t`: noise and
/// participation draws are keyed by `(t, agent)`, so repeated calls agree.
pub fn draw_gradients(
    suite: &ObjectiveSuite,
    x: &Blocks,
    noise: &NoiseModel,
    mask: Option<&AsyncGradientMask>,
    noise_seed: u64,
    t: u64,
) -> Blocks {
    let mut g = Blocks::zeros(x.n(), x.dim());
    for i in 0..x.n() {
        let mut r = rng::stream(noise_seed, domain::GRAD_NOISE, t, i as u64);
        suite.stochastic_grad_into(i, x.row(i), noise, &mut r, g.row_mut(i));
        if let Some(m) = mask {
            let mut r = rng::stream(noise_seed, domain::ASYNC_MASK, t, i as u64);
            m.apply(i, g.row_mut(i), &mut r);
        }
    }
    g
}

/// Initial state for `config`, including momentum state when needed.
pub fn initial_state(config: &RunConfig, suite: &ObjectiveSuite) -> Result<AgentStates> {
    let x0 = config.init.materialize(suite.n(), suite.dim(), config.seeds.init)?;
    if config.algorithm != Algorithm::FspdaStorm {
        return Ok(AgentStates::new(x0));
    }
    let mut st = storm_init(&x0.mean(), suite, &config.hp, config.storm_init)?;
    st.x = x0;
    Ok(st)
}

/// Runs `config` with the seeded sampler.
pub fn run(config: &RunConfig, inc: &IncidenceMatrix, suite: &ObjectiveSuite) -> Result<RunResult> {
    let spec = SamplerSpec {
        seed: config.seeds.graph,
        ..config.sampler.clone()
    };
    let sampler = Sampler::new(spec, inc.edge_count(), suite.dim())?;
    run_with(config, inc, suite, &sampler, &mut |_, _, _| {})
}

/// Runs `config` drawing graphs from `source`. `observer` sees the state
/// after every iteration together with the gradients that step consumed
/// (the new-point gradients for momentum steps).
pub fn run_with(
    config: &RunConfig,
    inc: &IncidenceMatrix,
    suite: &ObjectiveSuite,
    source: &dyn SampleSource,
    observer: &mut dyn FnMut(u64, &AgentStates, &Blocks),
) -> Result<RunResult> {
    if inc.n() != suite.n() {
        return Err(Error::Dimension {
            expected: suite.n(),
            got: inc.n(),
            context: "topology agent count vs objective suite",
        });
    }
    config.validate(suite, inc.edge_count())?;
    let probe = MetricsProbe::new(config, suite, inc)?;
    let mut state = initial_state(config, suite)?;
    let mut bits = 0u64;
    let mut records = vec![probe.record(0, &state, 0)?];
    let (noise, mask, seed) = (&config.noise, config.async_mask.as_ref(), config.seeds.noise);

    for t in 0..config.iterations {
        let hp = config.hp.scaled(config.schedule.at(t), config.algorithm);
        let used = match config.algorithm {
            Algorithm::FspdaSa | Algorithm::Dsgd => {
                let sample = source.sample(t);
                sample.validate(inc.edge_count(), suite.dim())?;
                let g = draw_gradients(suite, &state.x, noise, mask, seed, t);
                if config.algorithm == Algorithm::FspdaSa {
                    fspda_sa_step(&mut state, inc, &sample, &g, &hp)?;
                } else {
                    dsgd_step(&mut state, inc, &sample, &g, &hp)?;
                }
                bits += account_bits(&sample, config.algorithm, config.bits);
                g
            }
            Algorithm::FspdaStorm => {
                let sample = source.sample(t + 1);
                sample.validate(inc.edge_count(), suite.dim())?;
                let mut last = None;
                let mut oracle = |x: &Blocks| {
                    let g = draw_gradients(suite, x, noise, mask, seed, t + 1);
                    last = Some(g.clone());
                    Ok(g)
                };
                fspda_storm_step(&mut state, inc, &sample, &mut oracle, &hp)?;
                bits += account_bits(&sample, config.algorithm, config.bits);
                last.expect("oracle called")
            }
        };
        if let Some((agent, field)) = state.first_non_finite() {
            return Err(Error::NonFinite { t: t + 1, agent, field });
        }
        observer(t + 1, &state, &used);
        if (t + 1) % config.metric_period == 0 || t + 1 == config.iterations {
            records.push(probe.record(t + 1, &state, bits)?);
        }
    }
    Ok(RunResult {
        records,
        final_state: state,
        bits_total: bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_incidence, ActiveEdge, EdgeLaw, Topology};

    fn ring_setup() -> (IncidenceMatrix, ObjectiveSuite) {
        (
            build_incidence(&Topology::ring(4).unwrap()),
            ObjectiveSuite::heterogeneous_quadratic(4, 3, 5.0, 3).unwrap(),
        )
    }

    fn base(algorithm: Algorithm, t: u64) -> RunConfig {
        let mut c = RunConfig::new(
            algorithm,
            t,
            HyperParams::new(0.02, 0.02, 0.3, 0.5).with_momentum(0.5, 0.5),
            SamplerSpec::new(EdgeLaw::OneEdgeUniform, 0.5, 0),
        );
        c.noise = NoiseModel::AdditiveGaussian { sigma: 1.0 };
        c.seeds = Seeds::from_master(4);
        c
    }

    #[test]
    fn zero_iterations_records_initial_state() {
        let (inc, suite) = ring_setup();
        let cfg = base(Algorithm::FspdaSa, 0);
        let r = run(&cfg, &inc, &suite).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].t, 0);
        assert_eq!(r.final_state, initial_state(&cfg, &suite).unwrap());
    }

    #[test]
    fn single_agent_matches_gradient_descent() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(1, 3, 0.0, 1).unwrap();
        let inc = build_incidence(&Topology::new(1, []).unwrap());
        let mut cfg = RunConfig::new(
            Algorithm::FspdaSa,
            300,
            HyperParams::new(0.1, 0.5, 0.5, 1.0),
            SamplerSpec::new(EdgeLaw::FullGraph, 1.0, 0),
        );
        cfg.init = Init::ConsensusAt { x: vec![1.0, 2.0, -3.0] };
        let r = run(&cfg, &inc, &suite).unwrap();
        let mut x = vec![1.0, 2.0, -3.0];
        for _ in 0..300 {
            let g = suite.grad(0, &x);
            x.iter_mut().zip(&g).for_each(|(a, b)| *a -= 0.1 * b);
        }
        assert!(crate::blocks::dist_sq(r.final_state.x.row(0), &x).sqrt() < 1e-12);
    }

    #[test]
    fn replay_is_byte_identical() {
        let (inc, suite) = ring_setup();
        for alg in [Algorithm::FspdaSa, Algorithm::FspdaStorm, Algorithm::Dsgd] {
            let mut cfg = base(alg, 200);
            cfg.metric_period = 7;
            let emit = || {
                let mut buf = Vec::new();
                write_jsonl(&run(&cfg, &inc, &suite).unwrap().records, &mut buf).unwrap();
                buf
            };
            let a = emit();
            assert_eq!(a, emit());
            let recs = read_jsonl(std::str::from_utf8(&a).unwrap()).unwrap();
            let ts: Vec<u64> = recs.iter().map(|r| r.t).collect();
            assert_eq!(ts.first(), Some(&0));
            assert_eq!(ts.last(), Some(&200));
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
            assert!(recs.windows(2).all(|w| w[0].bits_cum <= w[1].bits_cum));
        }
    }

    #[test]
    fn bits_rule() {
        let one = GraphSample {
            t: 0,
            active: vec![ActiveEdge {
                edge: 0,
                mask: (0..10).collect(),
            }],
        };
        let c = BitCosts::default();
        assert_eq!(account_bits(&GraphSample::empty(0), Algorithm::FspdaSa, c), 0);
        assert_eq!(account_bits(&one, Algorithm::FspdaSa, c), 1280);
        assert_eq!(account_bits(&one, Algorithm::Dsgd, c), 1280);
        assert_eq!(account_bits(&one, Algorithm::FspdaStorm, c), 2560);
    }

    #[test]
    fn recorded_consensus_matches_state() {
        let (inc, suite) = ring_setup();
        let cfg = base(Algorithm::FspdaSa, 50);
        let r = run(&cfg, &inc, &suite).unwrap();
        let last = r.records.last().unwrap();
        assert_eq!(last.consensus_err, k_seminorm_sq(&r.final_state.x));
        assert!(last.v_norm_sq.is_some() && last.suboptimality.is_some());
    }

    #[test]
    fn engine_path_preserves_mean_identity() {
        let (inc, suite) = ring_setup();
        let cfg = base(Algorithm::FspdaSa, 2000);
        let mut prev = initial_state(&cfg, &suite).unwrap().x.mean();
        let mut worst: f64 = 0.0;
        let spec = SamplerSpec {
            seed: cfg.seeds.graph,
            ..cfg.sampler.clone()
        };
        let sampler = Sampler::new(spec, 4, 3).unwrap();
        run_with(&cfg, &inc, &suite, &sampler, &mut |_, st, g| {
            let now = st.x.mean();
            let gm = g.mean();
            for k in 0..3 {
                worst = worst.max((now[k] - prev[k] + cfg.hp.alpha * gm[k]).abs());
            }
            prev = now;
        })
        .unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn divergence_is_reported() {
        let (inc, suite) = ring_setup();
        let mut cfg = base(Algorithm::FspdaSa, 5000);
        cfg.hp.alpha = 50.0;
        match run(&cfg, &inc, &suite) {
            Err(Error::NonFinite { field, .. }) => assert_eq!(field, "x"),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_jsonl_columns() {
        let (inc, suite) = ring_setup();
        let r = run(&base(Algorithm::Dsgd, 3), &inc, &suite).unwrap();
        let mut buf = Vec::new();
        write_csv(&r.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        let json = serde_json::to_value(&r.records[0]).unwrap();
        let keys: Vec<&str> = header.split(',').collect();
        assert_eq!(keys.len(), json.as_object().unwrap().len());
        for k in keys {
            assert!(json.get(k).is_some(), "{k}");
        }
        // DSGD has no dual, so v is empty in CSV and null in JSON
        assert!(json["v_norm_sq"].is_null());
        assert_eq!(text.lines().count(), 5);
    }
}
