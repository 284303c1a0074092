//! Update rules and the algebraic diagnostics built on them.
//!
//! Duals are held per agent as `λ̂ = Aᵀλ`; the edge-indexed multiplier never
//! exists at runtime. Step sizes are `(α, η, γ, β)` throughout.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::blocks::{dist_sq, Blocks};
use crate::error::{Error, Result};
use crate::graph::{aggregate, consensus_pinv, k_inner, k_seminorm_sq, ExpectedLaplacian, GraphSample, IncidenceMatrix};
use crate::objectives::ObjectiveSuite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FspdaSa,
    FspdaStorm,
    Dsgd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FspdaSa => "fspda_sa",
            Algorithm::FspdaStorm => "fspda_storm",
            Algorithm::Dsgd => "dsgd",
        }
    }

    /// Vectors exchanged per active edge and coordinate, per direction.
    pub fn exchanged_vectors(self) -> u64 {
        match self {
            Algorithm::FspdaStorm => 2,
            _ => 1,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Step sizes. DSGD uses `alpha` as its step and `gamma` as mixing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub alpha: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub a_x: f64,
    #[serde(default = "one")]
    pub a_lambda: f64,
}

impl HyperParams {
    pub fn new(alpha: f64, eta: f64, gamma: f64, beta: f64) -> Self {
        Self {
            alpha,
            eta,
            gamma,
            beta,
            a_x: 1.0,
            a_lambda: 1.0,
        }
    }

    pub fn with_momentum(mut self, a_x: f64, a_lambda: f64) -> Self {
        self.a_x = a_x;
        self.a_lambda = a_lambda;
        self
    }

    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        let check = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::HyperParam {
                    field,
                    reason: format!("{v} must be finite and >= 0"),
                })
            }
        };
        check("alpha", self.alpha)?;
        check("eta", self.eta)?;
        check("gamma", self.gamma)?;
        check("beta", self.beta)?;
        if algorithm == Algorithm::FspdaStorm {
            if self.alpha <= 0.0 {
                return Err(Error::HyperParam {
                    field: "alpha",
                    reason: "momentum updates divide by alpha; it must be > 0".into(),
                });
            }
            for (field, v) in [("a_x", self.a_x), ("a_lambda", self.a_lambda)] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::HyperParam {
                        field,
                        reason: format!("{v} must lie in (0, 1]"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Step sizes at schedule multiplier `m`. `α` and `η` always scale
    /// together; momentum updates also scale `γ` so that `η/α` and `γ/α`
    /// stay fixed.
    pub fn scaled(&self, m: f64, algorithm: Algorithm) -> Self {
        let mut hp = *self;
        hp.alpha *= m;
        hp.eta *= m;
        if algorithm == Algorithm::FspdaStorm {
            hp.gamma *= m;
        }
        hp
    }
}

/// Step-size multiplier over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear warmup over the first `warmup·total` iterations, then cosine
    /// decay to zero at `total`.
    CosineWithWarmup { warmup: f64, total: u64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if let Schedule::CosineWithWarmup { warmup, total } = self {
            if !(0.0..1.0).contains(warmup) {
                return Err(Error::HyperParam {
                    field: "schedule.warmup",
                    reason: format!("{warmup} must lie in [0, 1)"),
                });
            }
            if *total == 0 {
                return Err(Error::HyperParam {
                    field: "schedule.total",
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::CosineWithWarmup { warmup, total } => {
                let t = t.min(total) as f64;
                let total = total as f64;
                let w = warmup * total;
                if t < w {
                    t / w
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (t - w) / (total - w)).cos())
                }
            }
        }
    }
}

/// Per-agent primal, dual and (for momentum runs) momentum blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStates {
    pub x: Blocks,
    pub lambda_hat: Blocks,
    pub m_x: Option<Blocks>,
    pub m_lambda: Option<Blocks>,
}

impl AgentStates {
    /// Primal `x`, zero dual, no momenta.
    pub fn new(x: Blocks) -> Self {
        let lambda_hat = Blocks::zeros(x.n(), x.dim());
        Self {
            x,
            lambda_hat,
            m_x: None,
            m_lambda: None,
        }
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    fn check(&self, inc: &IncidenceMatrix) -> Result<()> {
        self.x.check_shape(inc.n(), self.dim(), "primal state")?;
        self.lambda_hat.check_shape(inc.n(), self.dim(), "dual state")
    }

    /// First non-finite entry over all held blocks.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        let fields = [
            ("x", Some(&self.x)),
            ("lambda_hat", Some(&self.lambda_hat)),
            ("m_x", self.m_x.as_ref()),
            ("m_lambda", self.m_lambda.as_ref()),
        ];
        fields
            .into_iter()
            .find_map(|(name, b)| b.and_then(Blocks::first_non_finite).map(|(i, _)| (i, name)))
    }
}

/// One primal-dual step with a shared aggregate `g = −AᵀA(ξ)x`:
/// `x ← x − α·∇ − η·λ̂ + γ·g`, `λ̂ ← λ̂ − β·g`.
pub fn fspda_sa_step(
    state: &mut AgentStates,
    inc: &IncidenceMatrix,
    sample: &GraphSample,
    sgrads: &Blocks,
    hp: &HyperParams,
) -> Result<()> {
    state.check(inc)?;
    sgrads.check_shape(state.n(), state.dim(), "stochastic gradients")?;
    let g = aggregate(inc, sample, &state.x)?;
    let x = state.x.as_mut_slice();
    let lam = state.lambda_hat.as_mut_slice();
    for ((xi, li), (gr, ag)) in x.iter_mut().zip(lam.iter_mut()).zip(sgrads.as_slice().iter().zip(g.as_slice())) {
        *xi += -hp.alpha * gr - hp.eta * *li + hp.gamma * ag;
        *li -= hp.beta * ag;
    }
    Ok(())
}

/// Gossip SGD: `x ← x − α·∇ + γ·g`.
pub fn dsgd_step(
    state: &mut AgentStates,
    inc: &IncidenceMatrix,
    sample: &GraphSample,
    sgrads: &Blocks,
    hp: &HyperParams,
) -> Result<()> {
    state.check(inc)?;
    sgrads.check_shape(state.n(), state.dim(), "stochastic gradients")?;
    let g = aggregate(inc, sample, &state.x)?;
    for ((xi, gr), ag) in state.x.as_mut_slice().iter_mut().zip(sgrads.as_slice()).zip(g.as_slice()) {
        *xi += -hp.alpha * gr + hp.gamma * ag;
    }
    Ok(())
}

/// Stochastic Lagrangian gradient in `x` with penalties `η/α`, `γ/α`:
/// `∇ + (η/α)λ̂ − (γ/α)g`.
fn lagrangian_grad(grads: &Blocks, lambda_hat: &Blocks, agg: &Blocks, hp: &HyperParams) -> Blocks {
    let (e, c) = (hp.eta / hp.alpha, hp.gamma / hp.alpha);
    let data = grads
        .as_slice()
        .iter()
        .zip(lambda_hat.as_slice())
        .zip(agg.as_slice())
        .map(|((g, l), a)| g + e * l - c * a)
        .collect();
    Blocks::from_flat(grads.n(), grads.dim(), data).expect("shapes checked by caller")
}

/// Sets both momenta to the plain (uncorrected) directions at the current
/// point under `sample`, as the first momentum step does with `a = 1`.
pub fn storm_warm_momenta(
    state: &mut AgentStates,
    inc: &IncidenceMatrix,
    sample: &GraphSample,
    sgrads: &Blocks,
    hp: &HyperParams,
) -> Result<()> {
    state.check(inc)?;
    let agg = aggregate(inc, sample, &state.x)?;
    state.m_x = Some(lagrangian_grad(sgrads, &state.lambda_hat, &agg, hp));
    let mut ml = agg;
    ml.scale(-1.0);
    state.m_lambda = Some(ml);
    Ok(())
}

/// One momentum step. `sample_next` is the fresh graph sample; `sgrad` must
/// return the fresh-sample stochastic gradients at any point it is given,
/// with the same noise on every call (it is evaluated at the old and the new
/// iterate).
pub fn fspda_storm_step(
    state: &mut AgentStates,
    inc: &IncidenceMatrix,
    sample_next: &GraphSample,
    sgrad: &mut dyn FnMut(&Blocks) -> Result<Blocks>,
    hp: &HyperParams,
) -> Result<()> {
    state.check(inc)?;
    let mx = state.m_x.as_ref().ok_or(Error::MissingState("primal momentum"))?;
    let ml = state.m_lambda.as_ref().ok_or(Error::MissingState("dual momentum"))?;

    let x_old = state.x.clone();
    let l_old = state.lambda_hat.clone();
    let mut x_new = x_old.clone();
    x_new.axpy(-hp.alpha, mx);
    let mut l_new = l_old.clone();
    l_new.axpy(hp.beta, ml);

    let g_old = sgrad(&x_old)?;
    let g_new = sgrad(&x_new)?;
    g_old.check_shape(state.n(), state.dim(), "stochastic gradients")?;
    g_new.check_shape(state.n(), state.dim(), "stochastic gradients")?;
    let agg_old = aggregate(inc, sample_next, &x_old)?;
    let agg_new = aggregate(inc, sample_next, &x_new)?;

    let lag_old = lagrangian_grad(&g_old, &l_old, &agg_old, hp);
    let lag_new = lagrangian_grad(&g_new, &l_new, &agg_new, hp);
    let (kx, kl) = (1.0 - hp.a_x, 1.0 - hp.a_lambda);
    let mx_data = lag_new
        .as_slice()
        .iter()
        .zip(mx.as_slice().iter().zip(lag_old.as_slice()))
        .map(|(n, (m, o))| n + kx * (m - o))
        .collect();
    let ml_data = agg_new
        .as_slice()
        .iter()
        .zip(ml.as_slice().iter().zip(agg_old.as_slice()))
        .map(|(n, (m, o))| -n + kl * (m + o))
        .collect();
    let (n, d) = (state.n(), state.dim());
    state.m_x = Some(Blocks::from_flat(n, d, mx_data)?);
    state.m_lambda = Some(Blocks::from_flat(n, d, ml_data)?);
    state.x = x_new;
    state.lambda_hat = l_new;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StormInit {
    #[default]
    Theoretical,
    Zero,
}

/// `∇F(x̄) − ∇f_i(x̄)` for every agent.
fn gradient_gaps(suite: &ObjectiveSuite, x_bar: &[f64]) -> (Vec<f64>, Blocks) {
    let gf = suite.global_grad(x_bar);
    let mut gaps = Blocks::zeros(suite.n(), suite.dim());
    for i in 0..suite.n() {
        let gi = suite.grad(i, x_bar);
        for ((o, a), b) in gaps.row_mut(i).iter_mut().zip(&gf).zip(&gi) {
            *o = a - b;
        }
    }
    (gf, gaps)
}

/// Consensus start at `x̄⁰` with momentum state. Theoretical mode sets
/// `λ̂_i = (α/η)n⁻¹(∇F − ∇f_i)`, `m_x = ∇F`, `m_λ = 0`; zero mode zeroes all
/// three.
pub fn storm_init(x_bar0: &[f64], suite: &ObjectiveSuite, hp: &HyperParams, mode: StormInit) -> Result<AgentStates> {
    let (n, d) = (suite.n(), suite.dim());
    if x_bar0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x_bar0.len(),
            context: "initial average",
        });
    }
    let mut st = AgentStates::new(Blocks::consensus(n, x_bar0));
    match mode {
        StormInit::Zero => {
            st.m_x = Some(Blocks::zeros(n, d));
        }
        StormInit::Theoretical => {
            if hp.eta <= 0.0 {
                return Err(Error::HyperParam {
                    field: "eta",
                    reason: "theoretical momentum initialization divides by eta".into(),
                });
            }
            let (gf, mut gaps) = gradient_gaps(suite, x_bar0);
            gaps.scale(hp.alpha / hp.eta / n as f64);
            st.lambda_hat = gaps;
            st.m_x = Some(Blocks::consensus(n, &gf));
        }
    }
    st.m_lambda = Some(Blocks::zeros(n, d));
    Ok(st)
}

/// The dual at which consensus at `x̄` is stationary for the expected update:
/// `λ̂_i = (α/η)(∇F(x̄) − ∇f_i(x̄))`.
pub fn fixed_point_dual(suite: &ObjectiveSuite, x_bar: &[f64], hp: &HyperParams) -> Result<Blocks> {
    if hp.eta <= 0.0 {
        return Err(Error::HyperParam {
            field: "eta",
            reason: "the stationary dual is (alpha/eta)-scaled; eta must be > 0".into(),
        });
    }
    let (_, mut gaps) = gradient_gaps(suite, x_bar);
    gaps.scale(hp.alpha / hp.eta);
    Ok(gaps)
}

/// `x^{t+2}` from two primal iterates alone:
/// `2x¹ + γg₁(x¹) − x⁰ − (γ − ηβ)g₀(x⁰) − α(∇¹ − ∇⁰)` with `g = −AᵀA(ξ)x`.
#[allow(clippy::too_many_arguments)]
pub fn primal_only_recursion(
    inc: &IncidenceMatrix,
    x_t: &Blocks,
    x_tp1: &Blocks,
    sample_t: &GraphSample,
    sample_tp1: &GraphSample,
    sgrad_t: &Blocks,
    sgrad_tp1: &Blocks,
    hp: &HyperParams,
) -> Result<Blocks> {
    x_tp1.check_shape(x_t.n(), x_t.dim(), "primal iterate")?;
    sgrad_t.check_shape(x_t.n(), x_t.dim(), "stochastic gradients")?;
    sgrad_tp1.check_shape(x_t.n(), x_t.dim(), "stochastic gradients")?;
    let g1 = aggregate(inc, sample_tp1, x_tp1)?;
    let g0 = aggregate(inc, sample_t, x_t)?;
    let c0 = hp.gamma - hp.eta * hp.beta;
    let data = (0..x_t.as_slice().len())
        .map(|k| {
            2.0 * x_tp1.as_slice()[k] + hp.gamma * g1.as_slice()[k]
                - x_t.as_slice()[k]
                - c0 * g0.as_slice()[k]
                - hp.alpha * (sgrad_tp1.as_slice()[k] - sgrad_t.as_slice()[k])
        })
        .collect();
    Blocks::from_flat(x_t.n(), x_t.dim(), data)
}

/// `v_i = λ̂_i + (α/η)∇f_i(x̄)` and `‖v‖_K²`.
pub fn compute_v(state: &AgentStates, suite: &ObjectiveSuite, hp: &HyperParams) -> Result<(Blocks, f64)> {
    if hp.eta == 0.0 {
        return Err(Error::HyperParam {
            field: "eta",
            reason: "v is (alpha/eta)-scaled; eta must be nonzero".into(),
        });
    }
    let x_bar = state.x.mean();
    let mut v = state.lambda_hat.clone();
    let r = hp.alpha / hp.eta;
    for i in 0..state.n() {
        let g = suite.grad(i, &x_bar);
        for (o, gi) in v.row_mut(i).iter_mut().zip(&g) {
            *o += r * gi;
        }
    }
    let k = k_seminorm_sq(&v);
    Ok((v, k))
}

/// `(‖Ax‖², Σ_i ‖ηλ̂_i − α(∇F(x̄) − ∇f_i(x̄))‖²)` over the static graph.
pub fn fixed_point_residuals(
    state: &AgentStates,
    inc: &IncidenceMatrix,
    suite: &ObjectiveSuite,
    hp: &HyperParams,
) -> (f64, f64) {
    let consensus = (0..inc.edge_count())
        .map(|e| {
            let (p, m) = inc.endpoints(e);
            dist_sq(state.x.row(p), state.x.row(m))
        })
        .sum();
    let (_, gaps) = gradient_gaps(suite, &state.x.mean());
    let dual = (0..state.n())
        .map(|i| {
            state
                .lambda_hat
                .row(i)
                .iter()
                .zip(gaps.row(i))
                .map(|(l, g)| (hp.eta * l - hp.alpha * g).powi(2))
                .sum::<f64>()
        })
        .sum();
    (consensus, dual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PotentialWeights {
    pub const DEFAULT_DELTA1: f64 = 8.0;

    /// `b = aη/β`, `d = δ₁ηa`, `c = ((ηβ + γ)d − 2ηγa) / (2βb)`.
    pub fn recipe(a: f64, hp: &HyperParams, delta1: f64) -> Result<Self> {
        if hp.beta <= 0.0 || hp.eta <= 0.0 {
            return Err(Error::HyperParam {
                field: "beta",
                reason: "potential weights need eta > 0 and beta > 0".into(),
            });
        }
        let b = a * hp.eta / hp.beta;
        let d = delta1 * hp.eta * a;
        let c = if b == 0.0 {
            0.0
        } else {
            ((hp.eta * hp.beta + hp.gamma) * d - 2.0 * hp.eta * hp.gamma * a) / (2.0 * hp.beta * b)
        };
        Ok(Self { a, b, c, d })
    }
}

/// The four summands of the Lyapunov potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerms {
    /// `F(x̄)`.
    pub objective: f64,
    /// `F(x̄) − f_⋆` when the optimum is known, computed without cancellation.
    pub objective_gap: Option<f64>,
    pub consensus: f64,
    pub dual: f64,
    pub cross: f64,
}

impl PotentialTerms {
    pub fn total(&self) -> f64 {
        self.objective + self.consensus + self.dual + self.cross
    }

    /// Potential shifted by `f_⋆`; falls back to [`total`](Self::total).
    pub fn total_gap(&self) -> f64 {
        self.objective_gap.unwrap_or(self.objective) + self.consensus + self.dual + self.cross
    }
}

/// Potential evaluator holding the pseudo-inverse of the expected Laplacian.
#[derive(Debug, Clone)]
pub struct Potential {
    pub weights: PotentialWeights,
    q: Vec<nalgebra::DMatrix<f64>>,
}

impl Potential {
    pub fn new(weights: PotentialWeights, expected: &ExpectedLaplacian) -> Result<Self> {
        let mut q: Vec<nalgebra::DMatrix<f64>> = Vec::with_capacity(expected.dim());
        for (k, block) in expected.blocks.iter().enumerate() {
            // identical blocks share one factorization
            if k > 0 && expected.blocks[k - 1] == *block {
                let prev = q[k - 1].clone();
                q.push(prev);
            } else {
                q.push(consensus_pinv(block)?);
            }
        }
        Ok(Self { weights, q })
    }

    /// `F(x̄) + a‖x‖_K² + b‖v‖²_{Q+cK} + d⟨x, v⟩_K`.
    pub fn evaluate(&self, state: &AgentStates, suite: &ObjectiveSuite, hp: &HyperParams) -> Result<PotentialTerms> {
        if self.q.len() != state.dim() {
            return Err(Error::Dimension {
                expected: self.q.len(),
                got: state.dim(),
                context: "potential coordinate blocks",
            });
        }
        let x_bar = state.x.mean();
        let w = &self.weights;
        let (v, v_k) = compute_v(state, suite, hp)?;
        let n = state.n();
        let mut v_q = 0.0;
        for (k, q) in self.q.iter().enumerate() {
            let col = DVector::from_iterator(n, v.rows().map(|r| r[k]));
            v_q += col.dot(&(q * &col));
        }
        Ok(PotentialTerms {
            objective: suite.global_value(&x_bar),
            objective_gap: suite.excess(&x_bar),
            consensus: w.a * k_seminorm_sq(&state.x),
            dual: w.b * (v_q + w.c * v_k),
            cross: w.d * k_inner(&state.x, &v),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_incidence, expected_laplacian, EdgeLaw, Sampler, SamplerSpec, Topology};
    use crate::objectives::NoiseModel;
    use crate::rng::{self, domain};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn blocks(rows: &[&[f64]]) -> Blocks {
        Blocks::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn exact_grads(suite: &ObjectiveSuite, x: &Blocks) -> Blocks {
        let mut g = Blocks::zeros(x.n(), x.dim());
        for i in 0..x.n() {
            suite.grad_into(i, x.row(i), g.row_mut(i));
        }
        g
    }

    fn noisy_grads(suite: &ObjectiveSuite, x: &Blocks, seed: u64, t: u64, sigma: f64) -> Blocks {
        let noise = NoiseModel::AdditiveGaussian { sigma };
        let mut g = Blocks::zeros(x.n(), x.dim());
        for i in 0..x.n() {
            let mut r = rng::stream(seed, domain::GRAD_NOISE, t, i as u64);
            suite.stochastic_grad_into(i, x.row(i), &noise, &mut r, g.row_mut(i));
        }
        g
    }

    #[test]
    fn sa_two_agent_example_matches_dense_oracle() {
        let inc = build_incidence(&Topology::new(2, [(0, 1)]).unwrap());
        let mut st = AgentStates::new(blocks(&[&[0.0], &[2.0]]));
        let hp = HyperParams::new(0.1, 0.3, 0.5, 1.0);
        fspda_sa_step(&mut st, &inc, &GraphSample::full(0, 1, 1), &Blocks::zeros(2, 1), &hp).unwrap();
        assert_eq!(st.x.as_slice(), &[1.0, 1.0]);
        assert_eq!(st.lambda_hat.as_slice(), &[-2.0, 2.0]);

        // dense: x⁺ = x − ηλ̂ − γLx, λ̂⁺ = λ̂ + βLx
        let l = inc.gram();
        let x = DVector::from_vec(vec![0.0, 2.0]);
        let x1 = &x - &l * &x * 0.5;
        let l1 = &l * &x;
        assert_eq!(st.x.as_slice(), x1.as_slice());
        assert_eq!(st.lambda_hat.as_slice(), l1.as_slice());
    }

    #[test]
    fn sa_empty_sample_only_dual_coupling() {
        let inc = build_incidence(&Topology::path(3).unwrap());
        let mut st = AgentStates::new(blocks(&[&[1.0], &[2.0], &[3.0]]));
        st.lambda_hat = blocks(&[&[1.0], &[-3.0], &[2.0]]);
        let hp = HyperParams::new(0.1, 0.5, 0.5, 1.0);
        fspda_sa_step(&mut st, &inc, &GraphSample::empty(0), &Blocks::zeros(3, 1), &hp).unwrap();
        assert_eq!(st.x.as_slice(), &[0.5, 3.5, 2.0]);
        assert_eq!(st.lambda_hat.as_slice(), &[1.0, -3.0, 2.0]);
    }

    #[test]
    fn sa_single_agent_is_sgd() {
        let inc = build_incidence(&Topology::new(1, []).unwrap());
        let mut st = AgentStates::new(blocks(&[&[1.0, -1.0]]));
        let hp = HyperParams::new(0.25, 0.5, 0.5, 1.0);
        fspda_sa_step(&mut st, &inc, &GraphSample::empty(0), &blocks(&[&[4.0, 8.0]]), &hp).unwrap();
        assert_eq!(st.x.as_slice(), &[0.0, -3.0]);
        assert_eq!(st.lambda_hat.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn dsgd_empty_sample_is_local_sgd() {
        let inc = build_incidence(&Topology::path(2).unwrap());
        let mut st = AgentStates::new(blocks(&[&[1.0], &[5.0]]));
        let hp = HyperParams::new(0.5, 0.0, 0.5, 0.0);
        dsgd_step(&mut st, &inc, &GraphSample::empty(0), &blocks(&[&[2.0], &[-2.0]]), &hp).unwrap();
        assert_eq!(st.x.as_slice(), &[0.0, 6.0]);
        dsgd_step(&mut st, &inc, &GraphSample::full(1, 1, 1), &Blocks::zeros(2, 1), &hp).unwrap();
        assert_eq!(st.x.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn dsgd_homogeneous_consensus_matches_centralized_gd() {
        let inc = build_incidence(&Topology::ring(4).unwrap());
        let x0 = vec![1.0, -2.0, 0.5];
        let hp = HyperParams::new(0.1, 0.0, 0.3, 0.0);
        let sampler = Sampler::new(SamplerSpec::new(EdgeLaw::OneEdgeUniform, 0.5, 1), 4, 3).unwrap();
        // every agent holds the same objective
        let same = ObjectiveSuite::heterogeneous_quadratic(1, 3, 0.0, 2).unwrap();
        let mut st = AgentStates::new(Blocks::consensus(4, &x0));
        let mut xc = x0.clone();
        for t in 0..50 {
            let mut g = Blocks::zeros(4, 3);
            for i in 0..4 {
                same.grad_into(0, st.x.row(i), g.row_mut(i));
            }
            dsgd_step(&mut st, &inc, &sampler.sample(t), &g, &hp).unwrap();
            let gc = same.grad(0, &xc);
            xc.iter_mut().zip(&gc).for_each(|(x, g)| *x -= 0.1 * g);
        }
        for i in 0..4 {
            assert!(dist_sq(st.x.row(i), &xc).sqrt() < 1e-13);
        }
    }

    #[test]
    fn storm_momentum_off_matches_sa() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(4, 3, 2.0, 5).unwrap();
        let inc = build_incidence(&Topology::ring(4).unwrap());
        let spec = SamplerSpec::new(EdgeLaw::OneEdgeUniform, 0.5, 9);
        let sampler = Sampler::new(spec, 4, 3).unwrap();
        let hp = HyperParams::new(0.05, 0.02, 0.4, 0.5);
        let x0 = Blocks::from_flat(4, 3, (0..12).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let sigma = 0.5;

        let mut sa = AgentStates::new(x0.clone());
        let mut storm = AgentStates::new(x0);
        // SA step t consumes ξ^t; momentum step t consumes ξ^{t+1}, and the
        // first momenta are the plain directions under ξ⁰.
        let g0 = noisy_grads(&suite, &storm.x, 3, 0, sigma);
        storm_warm_momenta(&mut storm, &inc, &sampler.sample(0), &g0, &hp).unwrap();
        for t in 0..100u64 {
            let g = noisy_grads(&suite, &sa.x, 3, t, sigma);
            fspda_sa_step(&mut sa, &inc, &sampler.sample(t), &g, &hp).unwrap();
            let mut oracle = |x: &Blocks| Ok(noisy_grads(&suite, x, 3, t + 1, sigma));
            fspda_storm_step(&mut storm, &inc, &sampler.sample(t + 1), &mut oracle, &hp).unwrap();
            assert!(sa.x.max_abs_diff(&storm.x) < 1e-12, "t={t}");
            assert!(sa.lambda_hat.max_abs_diff(&storm.lambda_hat) < 1e-12, "t={t}");
        }
    }

    /// Dense transcription of the momentum recursion for a single step.
    #[test]
    fn storm_one_step_matches_dense_oracle() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(2, 1, 1.0, 4).unwrap();
        let inc = build_incidence(&Topology::new(2, [(0, 1)]).unwrap());
        let hp = HyperParams::new(0.1, 0.05, 0.5, 0.3).with_momentum(0.2, 0.4);
        let mut st = storm_init(&[0.7], &suite, &hp, StormInit::Zero).unwrap();
        st.x = blocks(&[&[0.7], &[-0.2]]);
        st.m_x = Some(blocks(&[&[0.3], &[-0.1]]));
        st.m_lambda = Some(blocks(&[&[0.2], &[-0.2]]));
        st.lambda_hat = blocks(&[&[0.5], &[-0.5]]);
        let before = st.clone();
        let sample = GraphSample::full(1, 1, 1);
        let mut oracle = |x: &Blocks| Ok(exact_grads(&suite, x));
        fspda_storm_step(&mut st, &inc, &sample, &mut oracle, &hp).unwrap();

        let l = inc.gram();
        let col = |b: &Blocks| DVector::from_column_slice(b.as_slice());
        let (x, lam, mx, ml) = (
            col(&before.x),
            col(&before.lambda_hat),
            col(before.m_x.as_ref().unwrap()),
            col(before.m_lambda.as_ref().unwrap()),
        );
        let x1 = &x - &mx * hp.alpha;
        let lam1 = &lam + &ml * hp.beta;
        let grad = |v: &DVector<f64>| DVector::from_fn(2, |i, _| suite.grad(i, &[v[i]])[0]);
        let lag = |xv: &DVector<f64>, lv: &DVector<f64>| {
            grad(xv) + lv * (hp.eta / hp.alpha) + &l * xv * (hp.gamma / hp.alpha)
        };
        let mx1 = lag(&x1, &lam1) + (&mx - lag(&x, &lam)) * (1.0 - hp.a_x);
        let ml1 = &l * &x1 + (&ml - &l * &x) * (1.0 - hp.a_lambda);
        let close = |a: &Blocks, b: &DVector<f64>| (col(a) - b).amax() < 1e-12;
        assert!(close(&st.x, &x1));
        assert!(close(&st.lambda_hat, &lam1));
        assert!(close(st.m_x.as_ref().unwrap(), &mx1));
        assert!(close(st.m_lambda.as_ref().unwrap(), &ml1));
    }

    #[test]
    fn storm_requires_momenta() {
        let inc = build_incidence(&Topology::path(2).unwrap());
        let mut st = AgentStates::new(Blocks::zeros(2, 1));
        let mut oracle = |x: &Blocks| Ok(Blocks::zeros(x.n(), x.dim()));
        let err = fspda_storm_step(&mut st, &inc, &GraphSample::empty(0), &mut oracle, &HyperParams::new(0.1, 0.1, 0.1, 0.1));
        assert!(matches!(err, Err(Error::MissingState(_))));
    }

    #[test]
    fn storm_init_modes() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(2, 3, 4.0, 6).unwrap();
        let hp = HyperParams::new(0.1, 0.02, 0.5, 1.0);
        let xb = [0.3, -0.1, 2.0];
        let st = storm_init(&xb, &suite, &hp, StormInit::Theoretical).unwrap();
        let sum = st.lambda_hat.sum();
        assert!(sum.iter().all(|v| v.abs() < 1e-12));
        let gf = suite.global_grad(&xb);
        let g0 = suite.grad(0, &xb);
        for k in 0..3 {
            let expected = (0.1 / 0.02) * 0.5 * (gf[k] - g0[k]);
            assert!((st.lambda_hat.row(0)[k] - expected).abs() < 1e-12);
            assert!((st.lambda_hat.row(0)[k] + st.lambda_hat.row(1)[k]).abs() < 1e-12);
        }
        assert_eq!(st.m_x.as_ref().unwrap().row(1), gf.as_slice());

        let homo = ObjectiveSuite::heterogeneous_quadratic(1, 3, 0.0, 6).unwrap();
        let st = storm_init(&xb, &homo, &hp, StormInit::Theoretical).unwrap();
        assert_eq!(st.lambda_hat.norm_sq(), 0.0);

        let z = storm_init(&xb, &suite, &hp, StormInit::Zero).unwrap();
        assert_eq!(z.lambda_hat.norm_sq() + z.m_x.unwrap().norm_sq() + z.m_lambda.unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn fixed_point_is_stationary_for_both_algorithms() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(4, 2, 10.0, 8).unwrap();
        let topo = Topology::ring(4).unwrap();
        let inc = build_incidence(&topo);
        let xs = suite.constants().x_star.clone().unwrap();
        let hp = HyperParams::new(0.05, 0.1, 0.3, 0.5).with_momentum(0.3, 0.3);
        let full = GraphSample::full(0, 4, 2);

        let mut sa = AgentStates::new(Blocks::consensus(4, &xs));
        sa.lambda_hat = fixed_point_dual(&suite, &xs, &hp).unwrap();
        let (c, d) = fixed_point_residuals(&sa, &inc, &suite, &hp);
        assert!(c < 1e-24 && d < 1e-24);
        let (_, vk) = compute_v(&sa, &suite, &hp).unwrap();
        assert!(vk < 1e-12);
        let start = sa.clone();
        for _ in 0..200 {
            let g = exact_grads(&suite, &sa.x);
            fspda_sa_step(&mut sa, &inc, &full, &g, &hp).unwrap();
        }
        assert!(sa.x.max_abs_diff(&start.x) < 1e-12);
        assert!(sa.lambda_hat.max_abs_diff(&start.lambda_hat) < 1e-12);

        let mut storm = start.clone();
        storm.m_x = Some(Blocks::zeros(4, 2));
        storm.m_lambda = Some(Blocks::zeros(4, 2));
        for _ in 0..200 {
            let mut oracle = |x: &Blocks| Ok(exact_grads(&suite, x));
            fspda_storm_step(&mut storm, &inc, &full, &mut oracle, &hp).unwrap();
        }
        assert!(storm.x.max_abs_diff(&start.x) < 1e-12);
        assert!(storm.lambda_hat.max_abs_diff(&start.lambda_hat) < 1e-12);
    }

    #[test]
    fn dual_residual_at_zero_dual() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(3, 2, 5.0, 1).unwrap();
        let inc = build_incidence(&Topology::ring(3).unwrap());
        let xb = [0.4, -1.0];
        let st = AgentStates::new(Blocks::consensus(3, &xb));
        let hp = HyperParams::new(0.2, 0.1, 0.5, 1.0);
        let (c, d) = fixed_point_residuals(&st, &inc, &suite, &hp);
        let gf = suite.global_grad(&xb);
        let expected: f64 = (0..3).map(|i| 0.04 * dist_sq(&gf, &suite.grad(i, &xb))).sum();
        assert_eq!(c, 0.0);
        assert!((d - expected).abs() <= 1e-12 * expected);

        let mut off = st.clone();
        off.x.row_mut(0)[0] += 1.0;
        assert!(fixed_point_residuals(&off, &inc, &suite, &hp).0 > 0.0);
    }

    #[test]
    fn primal_recursion_matches_two_variable_trajectory() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(3, 2, 3.0, 2).unwrap();
        let inc = build_incidence(&Topology::complete(3).unwrap());
        let sampler = Sampler::new(SamplerSpec::new(EdgeLaw::bernoulli_uniform(0.5, 3), 0.5, 4), 3, 2).unwrap();
        let hp = HyperParams::new(0.05, 0.1, 0.4, 0.8);
        let mut st = AgentStates::new(Blocks::from_flat(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap());
        let mut xs = vec![st.x.clone()];
        let mut gs = Vec::new();
        for t in 0..101u64 {
            let g = noisy_grads(&suite, &st.x, 8, t, 1.0);
            fspda_sa_step(&mut st, &inc, &sampler.sample(t), &g, &hp).unwrap();
            gs.push(g);
            xs.push(st.x.clone());
        }
        for t in 0..100usize {
            let x2 = primal_only_recursion(
                &inc,
                &xs[t],
                &xs[t + 1],
                &sampler.sample(t as u64),
                &sampler.sample(t as u64 + 1),
                &gs[t],
                &gs[t + 1],
                &hp,
            )
            .unwrap();
            assert!(x2.max_abs_diff(&xs[t + 2]) < 1e-12, "t={t}");
        }
    }

    #[test]
    fn primal_recursion_reduces_to_extra() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(4, 2, 2.0, 3).unwrap();
        let topo = Topology::ring(4).unwrap();
        let inc = build_incidence(&topo);
        let (alpha, gamma) = (0.05, 0.3);
        // EXTRA's W̃ = (I + W)/2 corresponds to ηβ = γ/2
        let hp = HyperParams::new(alpha, 0.15, gamma, 1.0);
        let full = GraphSample::full(0, 4, 2);

        let w = DMatrix::identity(4, 4) - topo.laplacian() * gamma;
        let w_tilde = (DMatrix::identity(4, 4) + &w) * 0.5;
        let to_mat = |b: &Blocks| DMatrix::from_row_slice(4, 2, b.as_slice());
        let grad_mat = |x: &DMatrix<f64>| {
            DMatrix::from_fn(4, 2, |i, k| suite.grad(i, &[x[(i, 0)], x[(i, 1)]])[k])
        };
        let x0 = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 3.0, -1.0]);
        let x1 = &w * &x0 - grad_mat(&x0) * alpha;
        let mut extra = vec![x0.clone(), x1];
        for k in 0..10 {
            let (a, b) = (&extra[k], &extra[k + 1]);
            let next = (DMatrix::identity(4, 4) + &w) * b - &w_tilde * a - (grad_mat(b) - grad_mat(a)) * alpha;
            extra.push(next);
        }

        let as_blocks = |m: &DMatrix<f64>| {
            Blocks::from_rows((0..4).map(|i| vec![m[(i, 0)], m[(i, 1)]]).collect()).unwrap()
        };
        // the first step from λ̂ = 0 coincides with EXTRA's first step
        let mut st = AgentStates::new(as_blocks(&x0));
        let g = exact_grads(&suite, &st.x);
        fspda_sa_step(&mut st, &inc, &full, &g, &hp).unwrap();
        assert!((to_mat(&st.x) - &extra[1]).amax() < 1e-12);
        for k in 0..10 {
            let (a, b) = (as_blocks(&extra[k]), as_blocks(&extra[k + 1]));
            let next = primal_only_recursion(&inc, &a, &b, &full, &full, &exact_grads(&suite, &a), &exact_grads(&suite, &b), &hp)
                .unwrap();
            assert!((to_mat(&next) - &extra[k + 2]).amax() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn primal_recursion_without_coupling_is_linear_extrapolation() {
        let inc = build_incidence(&Topology::path(3).unwrap());
        let hp = HyperParams::new(0.1, 0.5, 0.5, 1.0);
        let (a, b) = (blocks(&[&[1.0], &[2.0], &[0.0]]), blocks(&[&[2.0], &[2.5], &[-1.0]]));
        let z = Blocks::zeros(3, 1);
        let out = primal_only_recursion(&inc, &a, &b, &GraphSample::empty(0), &GraphSample::empty(1), &z, &z, &hp).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 3.0, -2.0]);
    }

    #[test]
    fn compute_v_matches_dense_and_rejects_zero_eta() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(3, 2, 1.0, 9).unwrap();
        let mut st = AgentStates::new(Blocks::from_flat(3, 2, vec![0.1, 0.4, -0.3, 0.8, 1.2, -0.5]).unwrap());
        st.lambda_hat = Blocks::from_flat(3, 2, vec![0.2, -0.1, 0.3, 0.3, -0.5, -0.2]).unwrap();
        let hp = HyperParams::new(0.2, 0.05, 0.5, 1.0);
        let (v, vk) = compute_v(&st, &suite, &hp).unwrap();
        let xb = st.x.mean();
        let vd = DMatrix::from_fn(3, 2, |i, k| st.lambda_hat.row(i)[k] + 4.0 * suite.grad(i, &xb)[k]);
        let kmat = DMatrix::identity(3, 3) - DMatrix::from_element(3, 3, 1.0 / 3.0);
        let dense = (vd.transpose() * &kmat * &vd).trace();
        assert!((vk - dense).abs() < 1e-12 * dense.max(1.0));
        assert!((DMatrix::from_row_slice(3, 2, v.as_slice()) - vd).amax() < 1e-14);

        let homo = ObjectiveSuite::heterogeneous_quadratic(1, 2, 0.0, 9).unwrap();
        let same = AgentStates::new(Blocks::consensus(1, &[0.1, 0.2]));
        assert!(compute_v(&same, &homo, &hp).unwrap().1.abs() < 1e-24);
        assert!(compute_v(&st, &suite, &HyperParams::new(0.2, 0.0, 0.5, 1.0)).is_err());
    }

    #[test]
    fn potential_matches_dense_transcription() {
        let suite = ObjectiveSuite::heterogeneous_quadratic(3, 1, 2.0, 5).unwrap();
        let topo = Topology::path(3).unwrap();
        let inc = build_incidence(&topo);
        let spec = SamplerSpec::new(EdgeLaw::OneEdgeUniform, 1.0, 0);
        let el = expected_laplacian(&spec, &inc, 1).unwrap();
        let hp = HyperParams::new(0.05, 0.02, 0.3, 0.7);
        let weights = PotentialWeights::recipe(2.0, &hp, 8.0).unwrap();
        assert!((weights.c - (4.0 * hp.eta * hp.beta + 3.0 * hp.gamma)).abs() < 1e-14);
        let pot = Potential::new(weights, &el).unwrap();

        let mut st = AgentStates::new(blocks(&[&[0.3], &[-0.4], &[1.1]]));
        st.lambda_hat = blocks(&[&[0.5], &[-0.2], &[-0.3]]);
        let terms = pot.evaluate(&st, &suite, &hp).unwrap();

        // dense pseudo-inverse through the full eigendecomposition
        let l = topo.laplacian() / 2.0;
        let eig = l.clone().symmetric_eigen();
        let mut q = DMatrix::zeros(3, 3);
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev.abs() > 1e-10 {
                let u = eig.eigenvectors.column(k);
                q += u * u.transpose() / ev;
            }
        }
        let kmat = DMatrix::identity(3, 3) - DMatrix::from_element(3, 3, 1.0 / 3.0);
        let x = DVector::from_vec(vec![0.3, -0.4, 1.1]);
        let xb = x.mean();
        let v = DVector::from_fn(3, |i, _| st.lambda_hat.row(i)[0] + (hp.alpha / hp.eta) * suite.grad(i, &[xb])[0]);
        let w = weights;
        let total = suite.global_value(&[xb])
            + w.a * x.dot(&(&kmat * &x))
            + w.b * v.dot(&((&q + &kmat * w.c) * &v))
            + w.d * x.dot(&(&kmat * &v));
        assert!((terms.total() - total).abs() < 1e-10 * total.abs().max(1.0));

        // consensus with v = 0 leaves only F(x̄)
        let xs = suite.constants().x_star.clone().unwrap();
        let mut fp = AgentStates::new(Blocks::consensus(3, &xs));
        fp.lambda_hat = fixed_point_dual(&suite, &xs, &hp).unwrap();
        let mut fpv = fp.clone();
        let (v, _) = compute_v(&fp, &suite, &hp).unwrap();
        // shift λ̂ so v is exactly zero, not only in the K-seminorm
        fpv.lambda_hat.axpy(-1.0, &v);
        let t = pot.evaluate(&fpv, &suite, &hp).unwrap();
        assert!((t.total() - suite.global_value(&xs)).abs() < 1e-12);
        let zero = Potential::new(PotentialWeights { a: 0.0, b: 0.0, c: 0.0, d: 0.0 }, &el).unwrap();
        let t = zero.evaluate(&st, &suite, &hp).unwrap();
        assert_eq!(t.total(), suite.global_value(&st.x.mean()));
    }

    #[test]
    fn schedule_values() {
        assert_eq!(Schedule::Constant.at(123), 1.0);
        let s = Schedule::CosineWithWarmup { warmup: 0.1, total: 100 };
        assert_eq!(s.at(0), 0.0);
        assert!((s.at(5) - 0.5).abs() < 1e-15);
        assert_eq!(s.at(10), 1.0);
        assert!(s.at(100).abs() < 1e-15);
        let hp = HyperParams::new(0.3, 0.1, 0.5, 1.0);
        for t in [1, 7, 50, 99] {
            let h = hp.scaled(s.at(t), Algorithm::FspdaSa);
            assert!((h.alpha / h.eta - 3.0).abs() < 1e-12);
            assert_eq!(h.gamma, 0.5);
        }
    }

    #[test]
    fn hyperparameter_validation() {
        let hp = HyperParams::new(0.1, 0.1, 0.1, 0.1);
        assert!(hp.validate(Algorithm::FspdaSa).is_ok());
        assert!(HyperParams::new(-0.1, 0.1, 0.1, 0.1).validate(Algorithm::FspdaSa).is_err());
        assert!(hp.with_momentum(0.0, 0.5).validate(Algorithm::FspdaStorm).is_err());
        assert!(hp.with_momentum(0.5, 1.5).validate(Algorithm::FspdaStorm).is_err());
        assert!(HyperParams::new(0.0, 0.1, 0.1, 0.1).validate(Algorithm::FspdaStorm).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mean_moves_only_by_gradients(seed in 0u64..1000, s in 0.1f64..1.0) {
            let suite = ObjectiveSuite::heterogeneous_quadratic(5, 3, 4.0, seed).unwrap();
            let topo = Topology::erdos_renyi(5, 0.6, seed).unwrap();
            let inc = build_incidence(&topo);
            let sampler = Sampler::new(SamplerSpec::new(EdgeLaw::bernoulli_uniform(0.5, topo.edge_count()), s, seed), topo.edge_count(), 3).unwrap();
            let hp = HyperParams::new(0.01, 0.05, 0.3, 0.5);
            let mut st = AgentStates::new(Blocks::from_flat(5, 3, (0..15).map(|k| (k as f64 + seed as f64).cos()).collect()).unwrap());
            let sum0 = st.lambda_hat.sum();
            let mut drift = 0.0f64;
            for t in 0..200u64 {
                let g = noisy_grads(&suite, &st.x, seed, t, 1.0);
                let before = st.x.mean();
                let gm = g.mean();
                fspda_sa_step(&mut st, &inc, &sampler.sample(t), &g, &hp).unwrap();
                let after = st.x.mean();
                for k in 0..3 {
                    drift = drift.max((after[k] - before[k] + hp.alpha * gm[k]).abs());
                }
            }
            prop_assert!(drift < 1e-13, "drift {drift}");
            let sum = st.lambda_hat.sum();
            for k in 0..3 {
                prop_assert!((sum[k] - sum0[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn storm_dual_sum_conserved(seed in 0u64..1000) {
            let suite = ObjectiveSuite::heterogeneous_quadratic(4, 2, 4.0, seed).unwrap();
            let inc = build_incidence(&Topology::ring(4).unwrap());
            let sampler = Sampler::new(SamplerSpec::new(EdgeLaw::OneEdgeUniform, 0.5, seed), 4, 2).unwrap();
            let hp = HyperParams::new(0.01, 0.01, 0.3, 0.5).with_momentum(0.1, 0.1);
            let mut st = storm_init(&[1.0, -1.0], &suite, &hp, StormInit::Theoretical).unwrap();
            for t in 0..200u64 {
                let mut oracle = |x: &Blocks| Ok(noisy_grads(&suite, x, seed, t + 1, 1.0));
                fspda_storm_step(&mut st, &inc, &sampler.sample(t + 1), &mut oracle, &hp).unwrap();
            }
            for v in st.lambda_hat.sum() {
                prop_assert!(v.abs() < 1e-10);
            }
        }
    }
}
