//! Transition kernels by uniformization, closed-form jump probabilities,
//! kernel-ratio constants and multi-time expectations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::{jump_unchecked, peak_time_from_rates, total_rate, Config, NetworkParams};
use crate::statespace::{RateMatrix, StateSpace};

/// Rates closer than this use the equal-rate branch of the single-spike formula.
pub const BRANCH_TOL: f64 = 1e-12;

const POISSON_TAIL: f64 = 1e-14;

/// Uniformization series are evaluated on steps with Λτ at most this large
/// and squared back up.
const MAX_STEP_MASS: f64 = 16.0;

/// The row-stochastic matrix π_t.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    t: f64,
    matrix: DMatrix<f64>,
}

impl Kernel {
    pub fn identity(dim: usize) -> Self {
        Kernel {
            t: 0.0,
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix[(x, y)]
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.matrix.row(x).iter().copied().collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.matrix.min()
    }

    /// π_s π_t, the kernel at time s + t.
    pub fn compose(&self, other: &Kernel) -> Kernel {
        let mut k = Kernel {
            t: self.t + other.t,
            matrix: &self.matrix * &other.matrix,
        };
        k.normalize();
        k
    }

    /// (P_t f)(x) = Σ_y π_t(x,y) f(y).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|x| self.matrix.row(x).iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn normalize(&mut self) {
        for mut row in self.matrix.row_iter_mut() {
            row.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = row.sum();
            row /= s;
        }
    }
}

/// π_t = e^{tQ} by uniformization.
pub fn kernel(q: &RateMatrix, t: f64) -> Result<Kernel> {
    if !(t >= 0.0) {
        return Err(PjmpError::NegativeTime(t));
    }
    let n = q.dim();
    let lambda = q.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(Kernel {
            t,
            matrix: DMatrix::identity(n, n),
        });
    }
    let mut tau = t;
    let mut squarings = 0;
    while lambda * tau > MAX_STEP_MASS {
        tau /= 2.0;
        squarings += 1;
    }
    let step = DMatrix::identity(n, n) + q.dense() / lambda;
    let mass = lambda * tau;
    let mut weight = (-mass).exp();
    let mut power = DMatrix::identity(n, n);
    let mut acc = &power * weight;
    let mut k = 0usize;
    loop {
        let next = (k + 1) as f64;
        // Poisson tail beyond k is at most w_k · (k+1)/(k+1-mass) once k+1 > mass.
        if next > mass && weight * next / (next - mass) < POISSON_TAIL {
            break;
        }
        k += 1;
        power = &power * &step;
        weight *= mass / k as f64;
        acc += &power * weight;
    }
    let mut out = Kernel { t: tau, matrix: acc };
    out.normalize();
    for _ in 0..squarings {
        out = out.compose(&out);
    }
    out.t = t;
    Ok(out)
}

pub fn semigroup_apply(k: &Kernel, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != k.dim() {
        return Err(PjmpError::DimensionMismatch {
            expected: k.dim(),
            got: f.len(),
        });
    }
    Ok(k.apply(f))
}

/// p_s(x) = e^{−s φ̄(x)}, the probability of no jump on [0, s].
pub fn no_jump_prob(x: &Config, s: f64, p: &NetworkParams) -> Result<f64> {
    Ok((-s * total_rate(x, p)?).exp())
}

/// Probability that on [0, s] neuron `i` spikes exactly once and nobody else
/// spikes, given φ(x^i), φ̄(x) and φ̄(Δ_i x).
pub fn single_spike_prob_from_rates(rate_i: f64, before: f64, after: f64, s: f64) -> f64 {
    let diff = before - after;
    if diff.abs() <= BRANCH_TOL {
        s * rate_i * (-s * before).exp()
    } else {
        // e^{-s·after} − e^{-s·before} = e^{-s·after}(1 − e^{-s·diff})
        rate_i * (-s * after).exp() * (-(-s * diff).exp_m1()) / diff
    }
}

pub fn single_spike_prob(x: &Config, i: usize, s: f64, p: &NetworkParams) -> Result<f64> {
    let y = crate::model::apply_jump(x, i, p)?;
    Ok(single_spike_prob_from_rates(
        p.phi_f64(x.get(i))?,
        total_rate(x, p)?,
        total_rate(&y, p)?,
        s,
    ))
}

/// t_0(i,x): the maximizer of the single-spike probability in `s`.
pub fn peak_time(x: &Config, i: usize, p: &NetworkParams) -> Result<f64> {
    let y = crate::model::apply_jump(x, i, p)?;
    Ok(peak_time_from_rates(total_rate(x, p)?, total_rate(&y, p)?))
}

/// Grid maxima of the kernel ratios bounded by the two ratio lemmas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioReport {
    /// max π_u(x,y) / π_t(x,y) over u ≤ t.
    pub c11_hat: f64,
    /// max π_u(Δ_i x,y)² / π_t(x,y) over u ≤ t on the admissible pairs.
    pub c12_hat: f64,
    pub t_grid: Vec<f64>,
    pub u_points: usize,
    pub t0_global: f64,
    pub argmax11: RatioWitness,
    pub argmax12: RatioWitness,
    /// Smallest grid time with min π_t > min μ / 2.
    pub t_hat: Option<f64>,
    pub rows: Vec<RatioRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioWitness {
    pub x: usize,
    pub y: usize,
    pub neuron: Option<usize>,
    pub u: f64,
    pub t: f64,
    pub ratio: f64,
}

/// Per-time maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub t: f64,
    pub c11: f64,
    pub c12: f64,
    pub min_entry: f64,
}

/// Default sweep: 0.05..1 in steps of 0.05, then 1.25..20 in steps of 0.25.
pub fn default_t_grid() -> Vec<f64> {
    let fine = (1..=20).map(|k| 0.05 * k as f64);
    let coarse = (1..=76).map(|k| 1.0 + 0.25 * k as f64);
    fine.chain(coarse).collect()
}

pub const DEFAULT_U_POINTS: usize = 64;

const NEGLIGIBLE: f64 = 1e-300;

fn ratio_at(num: f64, den: f64, what: &str) -> Result<Option<f64>> {
    if den > 0.0 {
        Ok(Some(num / den))
    } else if num < NEGLIGIBLE {
        Ok(None)
    } else {
        Err(PjmpError::RatioDivergence(format!(
            "{what}: positive numerator {num:e} over zero denominator"
        )))
    }
}

struct TimeScan {
    row: RatioRow,
    w11: RatioWitness,
    w12: RatioWitness,
}

fn scan_time(
    q: &RateMatrix,
    space: &StateSpace,
    t0_global: f64,
    t: f64,
    u_points: usize,
) -> Result<TimeScan> {
    let n = space.len();
    let kt = kernel(q, t)?;
    let mut w11 = RatioWitness {
        t,
        ratio: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut w12 = w11;
    let steps = u_points.max(2) - 1;
    for j in 0..=steps {
        let u = t * j as f64 / steps as f64;
        let ku = kernel(q, u)?;
        for x in 0..n {
            for y in 0..n {
                if let Some(r) = ratio_at(ku.get(x, y), kt.get(x, y), "lemma 1 ratio")? {
                    if r > w11.ratio {
                        w11 = RatioWitness { x, y, neuron: None, u, t, ratio: r };
                    }
                }
                for i in 0..space.n_neurons() {
                    let shifted = space.target(i, x);
                    if t < t0_global && y == shifted {
                        continue;
                    }
                    let num = ku.get(shifted, y).powi(2);
                    if let Some(r) = ratio_at(num, kt.get(x, y), "lemma 2 ratio")? {
                        if r > w12.ratio {
                            w12 = RatioWitness { x, y, neuron: Some(i), u, t, ratio: r };
                        }
                    }
                }
            }
        }
    }
    Ok(TimeScan {
        row: RatioRow {
            t,
            c11: w11.ratio,
            c12: w12.ratio,
            min_entry: kt.min_entry(),
        },
        w11,
        w12,
    })
}

/// Scans the kernel ratios over `t_grid × u-grid × D × D`.
pub fn kernel_ratios(
    q: &RateMatrix,
    space: &StateSpace,
    t0_global: f64,
    min_mass: f64,
    t_grid: &[f64],
    u_points: usize,
) -> Result<RatioReport> {
    if t_grid.is_empty() || u_points == 0 {
        return Err(PjmpError::InvalidSchedule("empty ratio grid".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0)) {
        return Err(PjmpError::InvalidSchedule(format!("grid time {t} must be positive")));
    }
    let scans: Vec<TimeScan> = t_grid
        .par_iter()
        .map(|t| scan_time(q, space, t0_global, *t, u_points))
        .collect::<Result<_>>()?;
    let mut best11 = scans[0].w11;
    let mut best12 = scans[0].w12;
    for s in &scans[1..] {
        if s.w11.ratio > best11.ratio {
            best11 = s.w11;
        }
        if s.w12.ratio > best12.ratio {
            best12 = s.w12;
        }
    }
    let t_hat = scans
        .iter()
        .filter(|s| s.row.min_entry > min_mass / 2.0)
        .map(|s| s.row.t)
        .reduce(f64::min);
    Ok(RatioReport {
        c11_hat: best11.ratio,
        c12_hat: best12.ratio,
        t_grid: t_grid.to_vec(),
        u_points,
        t0_global,
        argmax11: best11,
        argmax12: best12,
        t_hat,
        rows: scans.into_iter().map(|s| s.row).collect(),
    })
}

/// Observation times 0 = t_1 < t_2 < … < t_n, stored as the gaps
/// t_{k+1} − t_k so that gaps far below the resolution of the absolute
/// times stay exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    gaps: Vec<f64>,
}

impl Schedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        match times.first() {
            None => return Err(PjmpError::InvalidSchedule("schedule is empty".into())),
            Some(t) if *t != 0.0 => {
                return Err(PjmpError::InvalidSchedule("first time must be 0".into()))
            }
            _ => {}
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(PjmpError::InvalidSchedule(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Schedule {
            gaps: times.windows(2).map(|w| w[1] - w[0]).collect(),
        })
    }

    pub fn from_gaps(gaps: Vec<f64>) -> Result<Self> {
        if let Some(g) = gaps.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(PjmpError::InvalidSchedule(format!("gap {g} must be positive")));
        }
        Ok(Schedule { gaps })
    }

    /// Absolute times as prefix sums of the gaps.
    pub fn times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut t = 0.0;
        out.push(t);
        for g in &self.gaps {
            t += g;
            out.push(t);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.gaps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.gaps.iter().sum()
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// The first `n` times.
    pub fn prefix(&self, n: usize) -> Result<Schedule> {
        if n == 0 || n > self.len() {
            return Err(PjmpError::InvalidSchedule(format!("prefix {n} out of range")));
        }
        Ok(Schedule {
            gaps: self.gaps[..n - 1].to_vec(),
        })
    }
}

/// Functionals of (X_{t_1}, …, X_{t_n}) with polynomial-cost expectations.
#[derive(Debug, Clone, PartialEq)]
pub enum PathFunctional {
    /// Π_k g_k(X_{t_k})
    Product(Vec<Vec<f64>>),
    /// Σ_k h_k(X_{t_k})
    Sum(Vec<Vec<f64>>),
    /// exp(λ Σ_k h_k(X_{t_k}))
    ExpSum { lambda: f64, h: Vec<Vec<f64>> },
    /// exp(λ Σ_k h_k) · λ Σ_k h_k
    EntropyIntegrand { lambda: f64, h: Vec<Vec<f64>> },
}

fn gap_kernels(q: &RateMatrix, sched: &Schedule) -> Result<Vec<Kernel>> {
    sched.gaps().iter().map(|g| kernel(q, *g)).collect()
}

/// Backward recursion v_n = g_n, v_k = g_k · π_{gap} v_{k+1}.
fn product_recursion(kernels: &[Kernel], factors: &[&[f64]]) -> Vec<f64> {
    let n = factors.len();
    let mut v = factors[n - 1].to_vec();
    for k in (0..n - 1).rev() {
        let carried = kernels[k].apply(&v);
        v = carried.iter().zip(factors[k]).map(|(a, g)| a * g).collect();
    }
    v
}

/// E^x F(X_{t_1}, …, X_{t_n}) for every starting state x.
pub fn multi_time_expectation_all(
    q: &RateMatrix,
    sched: &Schedule,
    functional: &PathFunctional,
) -> Result<Vec<f64>> {
    let n = sched.len();
    let dim = q.dim();
    let check = |vs: &Vec<Vec<f64>>| -> Result<()> {
        if vs.len() != n {
            return Err(PjmpError::DimensionMismatch {
                expected: n,
                got: vs.len(),
            });
        }
        if let Some(v) = vs.iter().find(|v| v.len() != dim) {
            return Err(PjmpError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        Ok(())
    };
    let kernels = gap_kernels(q, sched)?;
    match functional {
        PathFunctional::Product(g) => {
            check(g)?;
            let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            Ok(product_recursion(&kernels, &refs))
        }
        PathFunctional::Sum(h) => {
            check(h)?;
            let mut v = h[n - 1].clone();
            for k in (0..n - 1).rev() {
                let carried = kernels[k].apply(&v);
                v = carried.iter().zip(&h[k]).map(|(a, b)| a + b).collect();
            }
            Ok(v)
        }
        PathFunctional::ExpSum { lambda, h } => {
            check(h)?;
            let g = exp_factors(*lambda, h);
            let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            Ok(product_recursion(&kernels, &refs))
        }
        PathFunctional::EntropyIntegrand { lambda, h } => {
            check(h)?;
            let g = exp_factors(*lambda, h);
            let mut total = vec![0.0; dim];
            for j in 0..n {
                let inserted: Vec<f64> = g[j].iter().zip(&h[j]).map(|(a, b)| a * b).collect();
                let refs: Vec<&[f64]> = (0..n)
                    .map(|k| if k == j { inserted.as_slice() } else { g[k].as_slice() })
                    .collect();
                let v = product_recursion(&kernels, &refs);
                total.iter_mut().zip(v).for_each(|(a, b)| *a += lambda * b);
            }
            Ok(total)
        }
    }
}

fn exp_factors(lambda: f64, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    h.iter()
        .map(|v| v.iter().map(|x| (lambda * x).exp()).collect())
        .collect()
}

pub fn multi_time_expectation(
    q: &RateMatrix,
    sched: &Schedule,
    x0: usize,
    functional: &PathFunctional,
) -> Result<f64> {
    if x0 >= q.dim() {
        return Err(PjmpError::DimensionMismatch {
            expected: q.dim(),
            got: x0,
        });
    }
    Ok(multi_time_expectation_all(q, sched, functional)?[x0])
}

/// Whether Δ_i(x) can also be reached from x by a single spike of another neuron.
pub fn shared_single_jump_target(space: &StateSpace, x: usize, i: usize, p: &NetworkParams) -> bool {
    let target = jump_unchecked(space.state(x), i, p);
    (0..space.n_neurons()).any(|j| j != i && jump_unchecked(space.state(x), j, p) == target)
}
