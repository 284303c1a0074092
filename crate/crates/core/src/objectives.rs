//! Local objective suites with known constants and gradient oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::{dist_sq, norm_sq};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

/// How a stochastic gradient deviates from the deterministic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// Adds i.i.d. `N(0, σ²/d)` per coordinate, so `E‖noise‖² = σ²`.
    AdditiveGaussian { sigma: f64 },
    /// Unbiased subsample of the agent's rows/samples without replacement.
    Minibatch { batch: usize },
}

impl NoiseModel {
    pub const EXACT: NoiseModel = NoiseModel::AdditiveGaussian { sigma: 0.0 };

    pub fn is_exact(&self) -> bool {
        matches!(self, NoiseModel::AdditiveGaussian { sigma } if *sigma == 0.0)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::EXACT
    }
}

/// Random gradient participation: agent `i` reports `b̄_i·g` with
/// probability `1/b̄_i` and zero otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsyncGradientMask {
    pub b_bar: Vec<f64>,
}

impl AsyncGradientMask {
    pub fn uniform(n: usize, b_bar: f64) -> Self {
        Self { b_bar: vec![b_bar; n] }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.b_bar.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.b_bar.len(),
                context: "async gradient mask",
            });
        }
        if let Some(b) = self.b_bar.iter().find(|b| !(**b >= 1.0 && b.is_finite())) {
            return Err(Error::HyperParam {
                field: "b_bar",
                reason: format!("participation scale {b} must be >= 1"),
            });
        }
        Ok(())
    }

    /// Masks `g` in place; returns whether the agent participated.
    pub fn apply(&self, i: usize, g: &mut [f64], rng: &mut StreamRng) -> bool {
        let b = self.b_bar[i];
        if b <= 1.0 {
            return true;
        }
        if rng.random::<f64>() < 1.0 / b {
            g.iter_mut().for_each(|v| *v *= b);
            true
        } else {
            g.iter_mut().for_each(|v| *v = 0.0);
            false
        }
    }
}

/// Published problem constants; `None` where not available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConstants {
    /// Smoothness of every `f_i`.
    pub l: f64,
    /// PL constant of `F`.
    pub mu: Option<f64>,
    pub f_star: Option<f64>,
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    LabelSorted,
    Shuffled,
}

#[derive(Debug, Clone)]
struct QuadraticAgent {
    b: DMatrix<f64>,
    c: DVector<f64>,
    /// `B_iᵀB_i`, cached for the deterministic gradient.
    h: DMatrix<f64>,
    /// `B_iᵀc_i`.
    bc: DVector<f64>,
}

#[derive(Debug, Clone)]
struct LogisticAgent {
    /// One sample per row.
    x: DMatrix<f64>,
    /// Labels in `{−1, +1}`.
    y: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Family {
    Quadratic {
        agents: Vec<QuadraticAgent>,
        /// Mean Hessian `(1/n)Σ B_iᵀB_i`.
        h_bar: DMatrix<f64>,
    },
    Logistic {
        agents: Vec<LogisticAgent>,
        l2: f64,
    },
}

/// `n` local objectives over `R^d` with deterministic and stochastic oracles.
/// Immutable once built; all oracles are pure given the RNG they receive.
#[derive(Debug, Clone)]
pub struct ObjectiveSuite {
    n: usize,
    d: usize,
    family: Family,
    constants: SuiteConstants,
}

fn gaussian_matrix(r: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn random_orthogonal(r: &mut StreamRng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(r, d, d).qr();
    let (mut q, rr) = (qr.q(), qr.r());
    // sign fix makes the distribution Haar
    for j in 0..d {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{−z})` without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl ObjectiveSuite {
    /// `f_i(x) = ½‖B_i x − c_i‖²` with `B_i` square, singular values in
    /// `[0.5, 1.5]`, and `c_i = B_i(x_c + h·u_i)` where `Σ u_i = 0`.
    pub fn heterogeneous_quadratic(n: usize, d: usize, h: f64, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Objective("n and d must be at least 1".into()));
        }
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Objective(format!("heterogeneity {h} must be finite and >= 0")));
        }
        let mut r = rng::stream(seed, domain::SUITE, 1, 0);
        let center: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let mut u: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect())
            .collect();
        let mean_u: Vec<f64> = (0..d).map(|k| u.iter().map(|ui| ui[k]).sum::<f64>() / n as f64).collect();
        for ui in &mut u {
            for (v, m) in ui.iter_mut().zip(&mean_u) {
                *v -= m;
            }
        }

        let mut agents = Vec::with_capacity(n);
        for ui in &u {
            let left = random_orthogonal(&mut r, d);
            let right = random_orthogonal(&mut r, d);
            let s = DVector::from_fn(d, |_, _| r.random_range(0.5..=1.5));
            let b = &left * DMatrix::from_diagonal(&s) * right.transpose();
            let target = DVector::from_iterator(d, center.iter().zip(ui).map(|(c, v)| c + h * v));
            let c = &b * target;
            let hm = b.transpose() * &b;
            let bc = b.transpose() * &c;
            agents.push(QuadraticAgent { b, c, h: hm, bc });
        }

        let h_bar = agents.iter().fold(DMatrix::zeros(d, d), |acc, a| acc + &a.h) / n as f64;
        let rhs = agents.iter().fold(DVector::zeros(d), |acc, a| acc + &a.bc) / n as f64;
        let mu = lambda_min(&h_bar);
        if !(mu > 1e-12) {
            return Err(Error::Objective(format!("aggregate Hessian is singular (min eigenvalue {mu:e})")));
        }
        let x_star = h_bar
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Objective("aggregate Hessian is not positive definite".into()))?
            .solve(&rhs);
        let l = agents.iter().map(|a| lambda_max(&a.h)).fold(0.0, f64::max);

        let mut suite = Self {
            n,
            d,
            family: Family::Quadratic { agents, h_bar },
            constants: SuiteConstants {
                l,
                mu: Some(mu),
                f_star: None,
                x_star: Some(x_star.as_slice().to_vec()),
            },
        };
        let xs = x_star.as_slice().to_vec();
        suite.constants.f_star = Some(suite.global_value(&xs));
        let g = suite.global_grad(&xs);
        let scale = 1.0 + rhs.norm();
        if norm_sq(&g).sqrt() > 1e-10 * scale {
            return Err(Error::Objective(format!(
                "normal-equations solve left gradient norm {:e}",
                norm_sq(&g).sqrt()
            )));
        }
        Ok(suite)
    }

    /// Binary logistic regression on a balanced two-class Gaussian mixture.
    pub fn logistic(
        n: usize,
        samples_per_agent: usize,
        d: usize,
        partition: Partition,
        l2: f64,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Objective("n and d must be at least 1".into()));
        }
        if samples_per_agent < 1 {
            return Err(Error::Objective("samples_per_agent must be at least 1".into()));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::Objective(format!("l2 weight {l2} must be finite and >= 0")));
        }
        let mut r = rng::stream(seed, domain::SUITE, 2, 0);
        let total = n * samples_per_agent;
        let mut direction: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let norm = norm_sq(&direction).sqrt().max(1e-12);
        direction.iter_mut().for_each(|v| *v /= norm);

        let mut data: Vec<(Vec<f64>, f64)> = (0..total)
            .map(|s| {
                let y = if s < total / 2 { 1.0 } else { -1.0 };
                let x = direction
                    .iter()
                    .map(|m| y * m + r.sample::<f64, _>(StandardNormal))
                    .collect();
                (x, y)
            })
            .collect();
        match partition {
            Partition::LabelSorted => data.sort_by(|a, b| b.1.total_cmp(&a.1)),
            Partition::Shuffled => data.shuffle(&mut r),
        }

        let agents: Vec<LogisticAgent> = data
            .chunks(samples_per_agent)
            .map(|chunk| LogisticAgent {
                x: DMatrix::from_fn(chunk.len(), d, |s, k| chunk[s].0[k]),
                y: chunk.iter().map(|c| c.1).collect(),
            })
            .collect();
        let l = agents
            .iter()
            .map(|a| 0.25 * lambda_max(&(a.x.transpose() * &a.x / a.y.len() as f64)))
            .fold(0.0, f64::max)
            + l2;

        let mut suite = Self {
            n,
            d,
            family: Family::Logistic { agents, l2 },
            constants: SuiteConstants {
                l,
                mu: (l2 > 0.0).then_some(l2),
                f_star: None,
                x_star: None,
            },
        };
        if l2 > 0.0 {
            let xs = suite.newton_minimize(1e-10)?;
            suite.constants.f_star = Some(suite.global_value(&xs));
            suite.constants.x_star = Some(xs);
        }
        Ok(suite)
    }

    /// Damped Newton on `F` for the strongly convex logistic suite.
    fn newton_minimize(&self, tol: f64) -> Result<Vec<f64>> {
        let Family::Logistic { agents, l2 } = &self.family else {
            return Err(Error::Objective("newton oracle is only defined for logistic suites".into()));
        };
        let d = self.d;
        let mut w = vec![0.0; d];
        for _ in 0..200 {
            let g = self.global_grad(&w);
            if norm_sq(&g).sqrt() <= tol {
                return Ok(w);
            }
            let mut hess = DMatrix::identity(d, d) * *l2;
            for a in agents {
                let m = a.y.len() as f64;
                for (s, &y) in a.y.iter().enumerate() {
                    let row = a.x.row(s);
                    let z = y * row.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>();
                    let p = sigmoid(z);
                    let weight = p * (1.0 - p) / (m * self.n as f64);
                    hess += row.transpose() * row * weight;
                }
            }
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Objective("logistic Hessian lost definiteness".into()))?
                .solve(&DVector::from_vec(g.clone()));
            let f0 = self.global_value(&w);
            let slope = -step.dot(&DVector::from_vec(g));
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - t * si).collect();
                if self.global_value(&cand) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                    w = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        let g = norm_sq(&self.global_grad(&w)).sqrt();
        if g <= tol * 10.0 {
            Ok(w)
        } else {
            Err(Error::Objective(format!("optimum oracle stalled at gradient norm {g:e}")))
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn constants(&self) -> &SuiteConstants {
        &self.constants
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.family, Family::Quadratic { .. })
    }

    /// Number of rows (quadratic) or samples (logistic) held by agent `i`.
    pub fn local_size(&self, i: usize) -> usize {
        match &self.family {
            Family::Quadratic { agents, .. } => agents[i].b.nrows(),
            Family::Logistic { agents, .. } => agents[i].y.len(),
        }
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        match &self.family {
            Family::Quadratic { agents, .. } => {
                let a = &agents[i];
                let r = &a.b * DVector::from_column_slice(x) - &a.c;
                0.5 * r.norm_squared()
            }
            Family::Logistic { agents, l2 } => {
                let a = &agents[i];
                let z = &a.x * DVector::from_column_slice(x);
                let loss: f64 = z.iter().zip(&a.y).map(|(zi, y)| softplus_neg(y * zi)).sum();
                loss / a.y.len() as f64 + 0.5 * l2 * norm_sq(x)
            }
        }
    }

    /// Deterministic `∇f_i(x)` written into `out`.
    pub fn grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Quadratic { agents, .. } => {
                let a = &agents[i];
                let d = self.d;
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = -a.bc[r];
                    for k in 0..d {
                        acc += a.h[(r, k)] * x[k];
                    }
                    *o = acc;
                }
            }
            Family::Logistic { agents, l2 } => {
                let a = &agents[i];
                self.logistic_rows_grad(a, *l2, x, 0..a.y.len(), 1.0 / a.y.len() as f64, out);
            }
        }
    }

    pub fn grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        self.grad_into(i, x, &mut g);
        g
    }

    fn logistic_rows_grad(
        &self,
        a: &LogisticAgent,
        l2: f64,
        x: &[f64],
        rows: impl IntoIterator<Item = usize>,
        scale: f64,
        out: &mut [f64],
    ) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = l2 * xi;
        }
        for s in rows {
            let row = a.x.row(s);
            let y = a.y[s];
            let z: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
            let coef = -y * sigmoid(-y * z) * scale;
            for (o, p) in out.iter_mut().zip(row.iter()) {
                *o += coef * p;
            }
        }
    }

    pub fn check_noise(&self, noise: &NoiseModel) -> Result<()> {
        match noise {
            NoiseModel::AdditiveGaussian { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => Err(Error::HyperParam {
                field: "noise.sigma",
                reason: format!("{sigma} must be finite and >= 0"),
            }),
            NoiseModel::Minibatch { batch } => {
                let min = (0..self.n).map(|i| self.local_size(i)).min().unwrap_or(0);
                if *batch == 0 || *batch > min {
                    Err(Error::HyperParam {
                        field: "noise.batch",
                        reason: format!("batch {batch} must be in 1..={min}"),
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Unbiased stochastic gradient of `f_i` at `x`, written into `out`.
    /// Exact noise draws nothing from `rng`.
    pub fn stochastic_grad_into(&self, i: usize, x: &[f64], noise: &NoiseModel, rng: &mut StreamRng, out: &mut [f64]) {
        match noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                self.grad_into(i, x, out);
                if *sigma > 0.0 {
                    let s = sigma / (self.d as f64).sqrt();
                    for o in out.iter_mut() {
                        *o += s * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            NoiseModel::Minibatch { batch } => {
                let size = self.local_size(i);
                let b = (*batch).clamp(1, size);
                if b == size {
                    self.grad_into(i, x, out);
                    return;
                }
                let rows = index::sample(rng, size, b);
                match &self.family {
                    Family::Quadratic { agents, .. } => {
                        // (size/b) Σ_{r ∈ S} b_r (b_rᵀx − c_r)
                        let a = &agents[i];
                        out.iter_mut().for_each(|o| *o = 0.0);
                        let scale = size as f64 / b as f64;
                        for r in rows {
                            let row = a.b.row(r);
                            let resid = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - a.c[r];
                            for (o, p) in out.iter_mut().zip(row.iter()) {
                                *o += scale * resid * p;
                            }
                        }
                    }
                    Family::Logistic { agents, l2 } => {
                        self.logistic_rows_grad(&agents[i], *l2, x, rows, 1.0 / b as f64, out);
                    }
                }
            }
        }
    }

    pub fn stochastic_grad(&self, i: usize, x: &[f64], noise: &NoiseModel, rng: &mut StreamRng) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        self.stochastic_grad_into(i, x, noise, rng, &mut g);
        g
    }

    /// `F(x) = (1/n) Σ f_i(x)`.
    pub fn global_value(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.value(i, x)).sum::<f64>() / self.n as f64
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        let mut g = vec![0.0; self.d];
        for i in 0..self.n {
            self.grad_into(i, x, &mut g);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|v| *v /= self.n as f64);
        acc
    }

    /// `F(x) − f_⋆`. Quadratic suites evaluate `½(x − x_⋆)ᵀH̄(x − x_⋆)`
    /// directly, which avoids cancellation near the optimum.
    pub fn excess(&self, x: &[f64]) -> Option<f64> {
        match &self.family {
            Family::Quadratic { h_bar, .. } => {
                let xs = self.constants.x_star.as_ref()?;
                let e = DVector::from_iterator(self.d, x.iter().zip(xs).map(|(a, b)| a - b));
                Some(0.5 * e.dot(&(h_bar * &e)))
            }
            Family::Logistic { .. } => self.constants.f_star.map(|fs| self.global_value(x) - fs),
        }
    }

    /// Minimizer of `f_i` (quadratic suites only).
    pub fn local_minimizer(&self, i: usize) -> Option<Vec<f64>> {
        match &self.family {
            Family::Quadratic { agents, .. } => {
                let a = &agents[i];
                a.h.clone().cholesky().map(|c| c.solve(&a.bc).as_slice().to_vec())
            }
            Family::Logistic { .. } => None,
        }
    }

    /// Mean-square smoothness under `noise` when a bound is available.
    pub fn mean_square_smoothness(&self, noise: &NoiseModel) -> Option<f64> {
        match (noise, &self.family) {
            (NoiseModel::AdditiveGaussian { .. }, _) => Some(self.constants.l),
            (NoiseModel::Minibatch { .. }, Family::Quadratic { agents, .. }) => {
                // each sampled operator is bounded by size · max_r ‖b_r‖²
                agents
                    .iter()
                    .map(|a| a.b.nrows() as f64 * a.b.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max))
                    .reduce(f64::max)
            }
            (NoiseModel::Minibatch { .. }, Family::Logistic { agents, l2 }) => agents
                .iter()
                .map(|a| 0.25 * a.x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max) + l2)
                .reduce(f64::max),
        }
    }

    /// `σ_i²` under `noise`: exact for additive noise, otherwise the
    /// empirical mean of `‖∇f_i(x;ξ) − ∇f_i(x)‖²` over `draws` at `x`.
    pub fn sigma_sq(&self, i: usize, x: &[f64], noise: &NoiseModel, draws: usize, seed: u64) -> f64 {
        if let NoiseModel::AdditiveGaussian { sigma } = noise {
            return sigma * sigma;
        }
        let g = self.grad(i, x);
        let mut s = vec![0.0; self.d];
        let mut acc = 0.0;
        for k in 0..draws {
            let mut r = rng::stream(seed, domain::GRAD_NOISE, k as u64, i as u64);
            self.stochastic_grad_into(i, x, noise, &mut r, &mut s);
            acc += dist_sq(&s, &g);
        }
        acc / draws.max(1) as f64
    }

    /// Fraction of label `+1` in agent `i`'s shard (logistic suites only).
    pub fn positive_fraction(&self, i: usize) -> Option<f64> {
        match &self.family {
            Family::Logistic { agents, .. } => {
                let a = &agents[i];
                Some(a.y.iter().filter(|&&y| y > 0.0).count() as f64 / a.y.len() as f64)
            }
            Family::Quadratic { .. } => None,
        }
    }
}
