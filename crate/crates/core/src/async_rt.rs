//! Discrete-event runtime for asynchronous primal-dual updates.
//!
//! Each agent owns a communication side (pairwise gossip that fills the
//! buffer `B_i`) and a computation side (stochastic gradients followed by a
//! local step or a gossip-with-gradient step that drains `B_i`). Agents never
//! read each other's state directly: a gossip commit copies the peer's masked
//! coordinates into the receiver's buffer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::algorithms::{AgentStates, HyperParams};
use crate::blocks::Blocks;
use crate::engine::{Init, MetricsProbe, MetricsRecord, RunConfig, Seeds};
use crate::error::{Error, Result};
use crate::graph::{EdgeLaw, IncidenceMatrix, Sampler, SamplerSpec};
use crate::objectives::{NoiseModel, ObjectiveSuite};
use crate::rng::{self, domain};

/// Peer coordinates received by a committed gossip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipMessage {
    pub sender: usize,
    pub sender_clock: u64,
    /// `(coordinate, value)` pairs, strictly increasing in the coordinate.
    pub payload: Vec<(usize, f64)>,
}

/// One agent's local state.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: usize,
    pub x: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    /// Local iteration counter `t_i`.
    pub clock: u64,
    /// Gradient counter `g_i`.
    pub grads: u64,
    /// Communication buffer `B_i`.
    pub buffer: Vec<GossipMessage>,
    /// Set while a gossip involving this agent is streaming.
    in_gossip: bool,
    /// Bumped whenever the in-flight gradient is abandoned.
    sg_generation: u64,
}

impl AgentRuntime {
    pub fn new(id: usize, x: Vec<f64>) -> Self {
        let d = x.len();
        Self {
            id,
            x,
            lambda_hat: vec![0.0; d],
            clock: 0,
            grads: 0,
            buffer: Vec::new(),
            in_gossip: false,
            sg_generation: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipOutcome {
    Success,
    /// Guard failed: a buffer was non-empty or an endpoint was already streaming.
    Skipped,
    /// Timed out or dropped.
    Failed,
    /// An endpoint's clock moved while streaming.
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    LocalSg,
    GossipSg,
}

fn check_guard(agents: &[AgentRuntime], i: usize, j: usize) -> bool {
    agents[i].buffer.is_empty() && agents[j].buffer.is_empty() && !agents[i].in_gossip && !agents[j].in_gossip
}

/// Brings the lagging agent's clock up to `target` with dual-only steps:
/// `x ← x − (target − t)·η·λ̂`.
fn catch_up(agent: &mut AgentRuntime, target: u64, eta: f64) -> bool {
    if agent.clock >= target {
        return false;
    }
    let k = (target - agent.clock) as f64;
    for (x, l) in agent.x.iter_mut().zip(&agent.lambda_hat) {
        *x -= k * eta * l;
    }
    agent.clock = target;
    agent.sg_generation += 1;
    true
}

/// Commits a gossip between the endpoints of `edge` over coordinates
/// `mask`: the lagging endpoint catches up, then each side buffers the
/// other's masked coordinates. Returns the outcome and the agent (if any)
/// whose gradient computation was interrupted by a catch-up.
pub fn commit_gossip(
    agents: &mut [AgentRuntime],
    inc: &IncidenceMatrix,
    edge: usize,
    mask: &[usize],
    hp: &HyperParams,
) -> (GossipOutcome, Option<usize>) {
    let (i, j) = inc.endpoints(edge);
    if !agents[i].buffer.is_empty() || !agents[j].buffer.is_empty() {
        return (GossipOutcome::Skipped, None);
    }
    let target = agents[i].clock.max(agents[j].clock);
    let mut interrupted = None;
    for a in [i, j] {
        if catch_up(&mut agents[a], target, hp.eta) {
            interrupted = Some(a);
        }
    }
    let message = |a: &AgentRuntime| GossipMessage {
        sender: a.id,
        sender_clock: a.clock,
        payload: mask.iter().map(|&k| (k, a.x[k])).collect(),
    };
    let (to_i, to_j) = (message(&agents[j]), message(&agents[i]));
    agents[i].buffer.push(to_i);
    agents[j].buffer.push(to_j);
    (GossipOutcome::Success, interrupted)
}

/// The computation side's step once a gradient is available (or abandoned,
/// when `grad` is `None`). Drains the buffer when it is non-empty.
pub fn compute_step(agent: &mut AgentRuntime, grad: Option<&[f64]>, hp: &HyperParams) -> StepKind {
    if grad.is_some() {
        agent.grads += 1;
    }
    if agent.buffer.is_empty() {
        let c = if grad.is_some() {
            agent.grads as f64 / (agent.clock + 1) as f64
        } else {
            0.0
        };
        for (k, x) in agent.x.iter_mut().enumerate() {
            let g = grad.map_or(0.0, |g| g[k]);
            *x -= hp.eta * agent.lambda_hat[k] + hp.alpha * c * g;
        }
        agent.clock += 1;
        return StepKind::LocalSg;
    }

    let t_new = agent
        .buffer
        .iter()
        .map(|m| m.sender_clock)
        .fold(agent.clock, u64::max);
    let d_i = (1 + t_new - agent.clock) as f64;
    let c = if grad.is_some() {
        agent.grads as f64 / (t_new + 1) as f64
    } else {
        0.0
    };
    // Σ_j C_ij (x_i − x_j) over received coordinates
    let mut diff = vec![0.0; agent.x.len()];
    for m in &agent.buffer {
        for &(k, v) in &m.payload {
            diff[k] += agent.x[k] - v;
        }
    }
    for k in 0..agent.x.len() {
        let g = grad.map_or(0.0, |g| g[k]);
        agent.x[k] += -hp.gamma * diff[k] - d_i * hp.eta * agent.lambda_hat[k] - hp.alpha * c * g;
        agent.lambda_hat[k] += hp.beta * diff[k];
    }
    agent.clock = t_new + 1;
    agent.buffer.clear();
    StepKind::GossipSg
}

/// Event durations and rates for the random scheduler. Times are in
/// arbitrary simulated units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Rate of the Poisson process that wakes a uniformly chosen edge.
    pub wake_rate: f64,
    /// Mean of the exponential gradient-computation time.
    pub sg_mean: f64,
    /// Mean of the exponential gossip streaming time.
    pub gossip_mean: f64,
    /// Gossips streaming longer than this fail.
    pub timeout: f64,
    #[serde(default)]
    pub drop_prob: f64,
    /// If set, a buffered gossip not consumed within this time is applied
    /// without a gradient.
    #[serde(default)]
    pub consume_deadline: Option<f64>,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            wake_rate: 4.0,
            sg_mean: 1.0,
            gossip_mean: 0.05,
            timeout: 0.2,
            drop_prob: 0.0,
            consume_deadline: None,
        }
    }
}

impl Timing {
    fn validate(&self) -> Result<()> {
        let pos = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::HyperParam {
                    field,
                    reason: format!("{v} must be finite and > 0"),
                })
            }
        };
        pos("timing.wake_rate", self.wake_rate)?;
        pos("timing.sg_mean", self.sg_mean)?;
        pos("timing.gossip_mean", self.gossip_mean)?;
        pos("timing.timeout", self.timeout)?;
        if let Some(d) = self.consume_deadline {
            pos("timing.consume_deadline", d)?;
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::HyperParam {
                field: "timing.drop_prob",
                reason: format!("{} outside [0, 1]", self.drop_prob),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptedAction {
    /// Successful gossip on `edge`; `mask` defaults to every coordinate.
    Gossip { edge: usize, mask: Option<Vec<usize>> },
    FailGossip { edge: usize },
    Compute { agent: usize, gradient_ready: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    Random(Timing),
    Scripted(Vec<ScriptedAction>),
}

/// Configuration of an asynchronous run (primal-dual updates only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsyncConfig {
    /// Stop once some agent's clock reaches this value.
    #[serde(rename = "T")]
    pub iterations: u64,
    pub hp: HyperParams,
    /// Fraction of coordinates exchanged per gossip.
    pub sparsity: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub seeds: Seeds,
    /// Record metrics whenever the largest clock crosses a multiple of this.
    #[serde(default = "one_u64")]
    pub metric_period: u64,
    #[serde(default)]
    pub max_events: Option<u64>,
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsyncStats {
    pub events: u64,
    pub gossip_success: u64,
    pub gossip_skipped: u64,
    pub gossip_failed: u64,
    pub gossip_interrupted: u64,
    pub local_steps: u64,
    pub gossip_steps: u64,
    pub catch_ups: u64,
}

#[derive(Debug, Clone)]
pub struct AsyncResult {
    pub records: Vec<MetricsRecord>,
    pub final_state: AgentStates,
    pub clocks: Vec<u64>,
    pub gradient_counts: Vec<u64>,
    pub stats: AsyncStats,
    pub sim_time: f64,
}

/// One line of the optional event trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent<'a> {
    pub time: f64,
    pub kind: &'a str,
    pub agents: Vec<usize>,
    pub clocks: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    EdgeWake,
    GossipEnd {
        edge: usize,
        wake: u64,
        start_clocks: (u64, u64),
        failed: bool,
    },
    SgDone {
        agent: usize,
        generation: u64,
    },
    ConsumeDeadline {
        agent: usize,
        clock: u64,
    },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Observer hook called after every processed event.
pub type AsyncObserver<'a> = dyn FnMut(&[AgentRuntime]) + 'a;

struct Runtime<'a> {
    config: &'a AsyncConfig,
    inc: &'a IncidenceMatrix,
    suite: &'a ObjectiveSuite,
    agents: Vec<AgentRuntime>,
    stats: AsyncStats,
    probe: MetricsProbe<'a>,
    records: Vec<MetricsRecord>,
    next_metric: u64,
    trace: Option<&'a mut dyn Write>,
    now: f64,
}

impl Runtime<'_> {
    fn gradient(&self, i: usize) -> Vec<f64> {
        let a = &self.agents[i];
        let mut r = rng::stream(self.config.seeds.noise, domain::GRAD_NOISE, a.clock, i as u64);
        self.suite.stochastic_grad(i, &a.x, &self.config.noise, &mut r)
    }

    fn states(&self) -> Result<AgentStates> {
        let x = Blocks::from_rows(self.agents.iter().map(|a| a.x.clone()).collect())?;
        let l = Blocks::from_rows(self.agents.iter().map(|a| a.lambda_hat.clone()).collect())?;
        Ok(AgentStates {
            x,
            lambda_hat: l,
            m_x: None,
            m_lambda: None,
        })
    }

    fn max_clock(&self) -> u64 {
        self.agents.iter().map(|a| a.clock).max().unwrap_or(0)
    }

    fn trace(&mut self, kind: &str, agents: &[usize]) -> Result<()> {
        if let Some(w) = self.trace.as_mut() {
            let ev = TraceEvent {
                time: self.now,
                kind,
                agents: agents.to_vec(),
                clocks: agents.iter().map(|&a| self.agents[a].clock).collect(),
            };
            serde_json::to_writer(&mut **w, &ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn after_step(&mut self, agent: usize) -> Result<()> {
        let a = &self.agents[agent];
        if let Some(k) = a.x.iter().chain(&a.lambda_hat).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: a.clock,
                agent,
                field: if k < a.x.len() { "x" } else { "lambda_hat" },
            });
        }
        let m = self.max_clock();
        let iterations = self.config.iterations;
        if m >= self.next_metric.min(iterations) {
            let t = m.min(iterations);
            let rec = self.probe.record(t, &self.states()?, 0)?;
            self.records.push(rec);
            while self.next_metric <= m {
                self.next_metric += self.config.metric_period;
            }
        }
        Ok(())
    }

    fn compute(&mut self, agent: usize, ready: bool) -> Result<StepKind> {
        let g = ready.then(|| self.gradient(agent));
        let kind = compute_step(&mut self.agents[agent], g.as_deref(), &self.config.hp);
        match kind {
            StepKind::LocalSg => self.stats.local_steps += 1,
            StepKind::GossipSg => self.stats.gossip_steps += 1,
        }
        self.trace(if ready { "compute" } else { "compute_without_gradient" }, &[agent])?;
        self.after_step(agent)?;
        Ok(kind)
    }

    fn gossip(&mut self, edge: usize, mask: &[usize]) -> Result<(GossipOutcome, Option<usize>)> {
        let (outcome, interrupted) = commit_gossip(&mut self.agents, self.inc, edge, mask, &self.config.hp);
        let (i, j) = self.inc.endpoints(edge);
        match outcome {
            GossipOutcome::Success => self.stats.gossip_success += 1,
            _ => self.stats.gossip_skipped += 1,
        }
        if interrupted.is_some() {
            self.stats.catch_ups += 1;
        }
        self.trace(
            if outcome == GossipOutcome::Success { "gossip_commit" } else { "gossip_skipped" },
            &[i, j],
        )?;
        Ok((outcome, interrupted))
    }
}

/// Runs the asynchronous protocol until some agent's clock reaches
/// `config.iterations`, the script is exhausted, or `max_events` is hit.
pub fn run_async<'a>(
    config: &'a AsyncConfig,
    inc: &'a IncidenceMatrix,
    suite: &'a ObjectiveSuite,
    scheduler: &Scheduler,
    trace: Option<&'a mut dyn Write>,
    observer: &mut AsyncObserver<'_>,
) -> Result<AsyncResult> {
    if inc.n() != suite.n() {
        return Err(Error::Dimension {
            expected: suite.n(),
            got: inc.n(),
            context: "topology agent count vs objective suite",
        });
    }
    config.hp.validate(crate::algorithms::Algorithm::FspdaSa)?;
    suite.check_noise(&config.noise)?;
    if config.metric_period == 0 {
        return Err(Error::HyperParam {
            field: "metric_period",
            reason: "must be at least 1".into(),
        });
    }
    let (n, d) = (suite.n(), suite.dim());
    let mask_sampler = Sampler::new(
        SamplerSpec::new(EdgeLaw::OneEdgeUniform, config.sparsity, config.seeds.graph),
        inc.edge_count(),
        d,
    )?;
    // metrics reuse the synchronous probe with the same step sizes
    let mut probe_cfg = RunConfig::new(
        crate::algorithms::Algorithm::FspdaSa,
        config.iterations,
        config.hp,
        SamplerSpec::new(EdgeLaw::FullGraph, 1.0, 0),
    );
    probe_cfg.noise = config.noise.clone();
    let x0 = config.init.materialize(n, d, config.seeds.init)?;
    let mut rt = Runtime {
        config,
        inc,
        suite,
        agents: (0..n).map(|i| AgentRuntime::new(i, x0.row(i).to_vec())).collect(),
        stats: AsyncStats::default(),
        probe: MetricsProbe::new(&probe_cfg, suite, inc)?,
        records: Vec::new(),
        next_metric: config.metric_period,
        trace,
        now: 0.0,
    };
    let first = rt.probe.record(0, &rt.states()?, 0)?;
    rt.records.push(first);
    let max_events = config.max_events.unwrap_or(u64::MAX);
    let done = |rt: &Runtime| rt.max_clock() >= config.iterations || rt.stats.events >= max_events;

    match scheduler {
        Scheduler::Scripted(actions) => {
            for action in actions {
                if done(&rt) {
                    break;
                }
                rt.stats.events += 1;
                match action {
                    ScriptedAction::Gossip { edge, mask } => {
                        if *edge >= inc.edge_count() {
                            return Err(Error::Sample(format!("scripted edge {edge} out of range")));
                        }
                        let full: Vec<usize> = (0..d).collect();
                        rt.gossip(*edge, mask.as_deref().unwrap_or(&full))?;
                    }
                    ScriptedAction::FailGossip { edge } => {
                        rt.stats.gossip_failed += 1;
                        let (i, j) = inc.endpoints(*edge);
                        rt.trace("gossip_failed", &[i, j])?;
                    }
                    ScriptedAction::Compute { agent, gradient_ready } => {
                        rt.compute(*agent, *gradient_ready)?;
                    }
                }
                observer(&rt.agents);
            }
        }
        Scheduler::Random(timing) => {
            timing.validate()?;
            if inc.edge_count() == 0 && n > 1 {
                return Err(Error::Topology("async runtime needs at least one edge".into()));
            }
            let mut r = rng::stream(config.seeds.graph, domain::SCHEDULER, 0, 0);
            let sg = Exp::new(1.0 / timing.sg_mean).expect("validated rate");
            let gossip_time = Exp::new(1.0 / timing.gossip_mean).expect("validated rate");
            let wake = Exp::new(timing.wake_rate).expect("validated rate");
            let mut queue = BinaryHeap::new();
            let mut seq = 0u64;
            let mut push = |queue: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
                seq += 1;
                queue.push(Event { time, seq, kind });
            };
            for i in 0..n {
                push(&mut queue, sg.sample(&mut r), EventKind::SgDone { agent: i, generation: 0 });
            }
            if inc.edge_count() > 0 {
                push(&mut queue, wake.sample(&mut r), EventKind::EdgeWake);
            }
            let mut wakes = 0u64;

            while !done(&rt) {
                let Some(ev) = queue.pop() else {
                    let blocked = (0..n).filter(|&i| rt.agents[i].clock < config.iterations).collect();
                    return Err(Error::Deadlock { blocked });
                };
                rt.now = ev.time;
                rt.stats.events += 1;
                match ev.kind {
                    EventKind::EdgeWake => {
                        let sample = mask_sampler.sample(wakes);
                        let active = &sample.active[0];
                        let (i, j) = inc.endpoints(active.edge);
                        if check_guard(&rt.agents, i, j) {
                            rt.agents[i].in_gossip = true;
                            rt.agents[j].in_gossip = true;
                            let dur: f64 = gossip_time.sample(&mut r);
                            let dropped = r.random::<f64>() < timing.drop_prob;
                            let failed = dropped || dur > timing.timeout;
                            push(
                                &mut queue,
                                ev.time + dur.min(timing.timeout),
                                EventKind::GossipEnd {
                                    edge: active.edge,
                                    wake: wakes,
                                    start_clocks: (rt.agents[i].clock, rt.agents[j].clock),
                                    failed,
                                },
                            );
                            rt.trace("gossip_start", &[i, j])?;
                        } else {
                            rt.stats.gossip_skipped += 1;
                        }
                        wakes += 1;
                        push(&mut queue, ev.time + wake.sample(&mut r), EventKind::EdgeWake);
                    }
                    EventKind::GossipEnd {
                        edge,
                        wake,
                        start_clocks,
                        failed,
                    } => {
                        let (i, j) = inc.endpoints(edge);
                        rt.agents[i].in_gossip = false;
                        rt.agents[j].in_gossip = false;
                        if failed {
                            rt.stats.gossip_failed += 1;
                            rt.trace("gossip_failed", &[i, j])?;
                        } else if (rt.agents[i].clock, rt.agents[j].clock) != start_clocks {
                            rt.stats.gossip_interrupted += 1;
                            rt.trace("gossip_interrupted", &[i, j])?;
                        } else {
                            let mask = mask_sampler.sample(wake).active[0].mask.clone();
                            let (outcome, caught_up) = rt.gossip(edge, &mask)?;
                            if let Some(a) = caught_up {
                                let generation = rt.agents[a].sg_generation;
                                push(
                                    &mut queue,
                                    ev.time + sg.sample(&mut r),
                                    EventKind::SgDone { agent: a, generation },
                                );
                            }
                            if outcome == GossipOutcome::Success {
                                if let Some(dl) = timing.consume_deadline {
                                    for a in [i, j] {
                                        let clock = rt.agents[a].clock;
                                        push(&mut queue, ev.time + dl, EventKind::ConsumeDeadline { agent: a, clock });
                                    }
                                }
                            }
                        }
                    }
                    EventKind::SgDone { agent, generation } => {
                        if generation == rt.agents[agent].sg_generation {
                            rt.compute(agent, true)?;
                            rt.agents[agent].sg_generation += 1;
                            let generation = rt.agents[agent].sg_generation;
                            push(&mut queue, ev.time + sg.sample(&mut r), EventKind::SgDone { agent, generation });
                        }
                    }
                    EventKind::ConsumeDeadline { agent, clock } => {
                        let a = &rt.agents[agent];
                        if a.clock == clock && !a.buffer.is_empty() {
                            rt.compute(agent, false)?;
                            rt.agents[agent].sg_generation += 1;
                            let generation = rt.agents[agent].sg_generation;
                            push(&mut queue, ev.time + sg.sample(&mut r), EventKind::SgDone { agent, generation });
                        }
                    }
                }
                observer(&rt.agents);
            }
        }
    }

    let final_state = rt.states()?;
    let t_end = rt.max_clock().min(config.iterations);
    if rt.records.last().map(|r| r.t) != Some(t_end) {
        let rec = rt.probe.record(t_end, &final_state, 0)?;
        rt.records.push(rec);
    }
    Ok(AsyncResult {
        records: rt.records,
        clocks: rt.agents.iter().map(|a| a.clock).collect(),
        gradient_counts: rt.agents.iter().map(|a| a.grads).collect(),
        final_state,
        stats: rt.stats,
        sim_time: rt.now,
    })
}
