//! Reachable configurations, the invariant domain, the rate matrix and the
//! invariant measure.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::{jump_unchecked, rational_to_f64, Config, NetworkParams, Rational};

pub const DEFAULT_STATE_BUDGET: usize = 1_000_000;

/// Above this dimension the invariant measure is found by power iteration.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

/// An indexed finite set of configurations with its jump table.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n_neurons: usize,
    states: Vec<Config>,
    index: HashMap<Config, usize>,
    /// `jump_target[j][s]`: index of Δ_j(states[s]) if it lies in the space.
    jump_target: Vec<Vec<Option<usize>>>,
    /// `spike_rates[s][j]` = φ(x^j) at states[s].
    spike_rates: Vec<Vec<Rational>>,
    spike_rates_f64: Vec<Vec<f64>>,
}

impl StateSpace {
    fn from_states(p: &NetworkParams, states: Vec<Config>) -> Result<Self> {
        let index: HashMap<Config, usize> = states
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        let n = p.n_neurons();
        let jump_target = (0..n)
            .map(|j| {
                states
                    .iter()
                    .map(|s| index.get(&jump_unchecked(s, j, p)).copied())
                    .collect()
            })
            .collect();
        let spike_rates = states
            .iter()
            .map(|s| s.potentials().iter().map(|v| p.phi(*v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let spike_rates_f64 = spike_rates
            .iter()
            .map(|row: &Vec<Rational>| row.iter().map(rational_to_f64).collect())
            .collect();
        Ok(StateSpace {
            n_neurons: n,
            states,
            index,
            jump_target,
            spike_rates,
            spike_rates_f64,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn states(&self) -> &[Config] {
        &self.states
    }

    pub fn state(&self, s: usize) -> &Config {
        &self.states[s]
    }

    pub fn index_of(&self, x: &Config) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn jump_target(&self, j: usize, s: usize) -> Option<usize> {
        self.jump_target[j][s]
    }

    /// Target of Δ_j for a closed space.
    pub fn target(&self, j: usize, s: usize) -> usize {
        self.jump_target[j][s].expect("state space is closed under jumps")
    }

    pub fn spike_rate(&self, s: usize, j: usize) -> f64 {
        self.spike_rates_f64[s][j]
    }

    pub fn spike_rate_exact(&self, s: usize, j: usize) -> &Rational {
        &self.spike_rates[s][j]
    }

    pub fn spike_rates(&self, s: usize) -> &[f64] {
        &self.spike_rates_f64[s]
    }

    /// φ̄ at state `s`.
    pub fn total_rate(&self, s: usize) -> f64 {
        self.spike_rates_f64[s].iter().sum()
    }

    pub fn is_closed(&self) -> bool {
        self.jump_target.iter().flatten().all(Option::is_some)
    }

    /// Evaluates a function of the configuration on every state.
    pub fn tabulate<F: Fn(&Config) -> f64>(&self, f: F) -> Vec<f64> {
        self.states.iter().map(f).collect()
    }

    /// Composition `g ∘ Δ_j` as a state vector.
    pub fn shift(&self, g: &[f64], j: usize) -> Vec<f64> {
        (0..self.len()).map(|s| g[self.target(j, s)]).collect()
    }

    /// Ge f on every state.
    pub fn generator(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|s| {
                (0..self.n_neurons)
                    .map(|j| self.spike_rates_f64[s][j] * (f[self.target(j, s)] - f[s]))
                    .sum()
            })
            .collect()
    }

    /// Γ(f,f) on every state.
    pub fn carre_du_champ(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|s| {
                0.5 * (0..self.n_neurons)
                    .map(|j| {
                        let d = f[self.target(j, s)] - f[s];
                        self.spike_rates_f64[s][j] * d * d
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    fn restrict(&self, p: &NetworkParams, keep: &[usize]) -> Result<StateSpace> {
        let states = keep.iter().map(|k| self.states[*k].clone()).collect();
        StateSpace::from_states(p, states)
    }

    /// Writes the state list and jump edges as CSV.
    pub fn write_csv<W: Write>(&self, p: &NetworkParams, mut out: W) -> std::io::Result<()> {
        write!(out, "state_index,potentials")?;
        for j in 0..self.n_neurons {
            write!(out, ",target_{j},rate_{j}")?;
        }
        writeln!(out)?;
        for (s, x) in self.states.iter().enumerate() {
            write!(out, "{s},{}", p.format_config(x))?;
            for j in 0..self.n_neurons {
                match self.jump_target[j][s] {
                    Some(t) => write!(out, ",{t},{}", self.spike_rates_f64[s][j])?,
                    None => write!(out, ",,{}", self.spike_rates_f64[s][j])?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn enumerate_reachable(p: &NetworkParams, x0: &Config) -> Result<StateSpace> {
    enumerate_reachable_with_budget(p, x0, DEFAULT_STATE_BUDGET)
}

/// Breadth-first closure of `{x0}` under all jump maps.
pub fn enumerate_reachable_with_budget(
    p: &NetworkParams,
    x0: &Config,
    budget: usize,
) -> Result<StateSpace> {
    let mut seen: HashMap<Config, usize> = HashMap::from([(x0.clone(), 0)]);
    let mut order = vec![x0.clone()];
    let mut queue = VecDeque::from([x0.clone()]);
    while let Some(x) = queue.pop_front() {
        for j in 0..p.n_neurons() {
            let y = jump_unchecked(&x, j, p);
            if !seen.contains_key(&y) {
                if order.len() >= budget {
                    return Err(PjmpError::BudgetExceeded { budget });
                }
                seen.insert(y.clone(), order.len());
                order.push(y.clone());
                queue.push_back(y);
            }
        }
    }
    StateSpace::from_states(p, order)
}

pub fn invariant_domain(p: &NetworkParams, x0: &Config) -> Result<StateSpace> {
    let reachable = enumerate_reachable(p, x0)?;
    closed_class(p, &reachable)
}

/// The unique closed strongly connected component of a closed space.
pub fn closed_class(p: &NetworkParams, space: &StateSpace) -> Result<StateSpace> {
    let n = space.len();
    let mut graph = DiGraph::<usize, ()>::with_capacity(n, n * space.n_neurons());
    let nodes: Vec<_> = (0..n).map(|s| graph.add_node(s)).collect();
    for s in 0..n {
        for j in 0..space.n_neurons() {
            let t = space
                .jump_target(j, s)
                .ok_or(PjmpError::NotClosed { state: s, neuron: j })?;
            if t != s {
                graph.update_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            component[graph[*node]] = c;
        }
    }
    let closed: Vec<usize> = (0..sccs.len())
        .filter(|c| {
            sccs[*c].iter().all(|node| {
                let s = graph[*node];
                (0..space.n_neurons()).all(|j| component[space.target(j, s)] == *c)
            })
        })
        .collect();
    if closed.len() != 1 {
        return Err(PjmpError::MultipleClosedClasses {
            count: closed.len(),
        });
    }
    let keep: Vec<usize> = (0..n).filter(|s| component[*s] == closed[0]).collect();
    space.restrict(p, &keep)
}

/// Generator in matrix form, with exact rational entries.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    off_diagonal: Vec<BTreeMap<usize, Rational>>,
    diagonal: Vec<Rational>,
    dense: DMatrix<f64>,
}

impl RateMatrix {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.dense[(x, y)]
    }

    pub fn rate_exact(&self, x: usize, y: usize) -> Rational {
        if x == y {
            self.diagonal[x]
        } else {
            self.off_diagonal[x].get(&y).copied().unwrap_or_else(Rational::zero)
        }
    }

    pub fn row_sum_exact(&self, x: usize) -> Rational {
        self.off_diagonal[x].values().fold(self.diagonal[x], |a, b| a + b)
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    /// Largest total exit rate, the uniformization rate.
    pub fn max_exit_rate(&self) -> f64 {
        self.diagonal
            .iter()
            .map(|d| rational_to_f64(&d.abs()))
            .fold(0.0, f64::max)
    }

    /// (Qf)(x) = Σ_y q(x,y) f(y).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|x| {
                self.off_diagonal[x]
                    .iter()
                    .map(|(y, r)| rational_to_f64(r) * (f[*y] - f[x]))
                    .sum()
            })
            .collect()
    }

    /// ‖μQ‖_∞.
    pub fn left_residual(&self, mu: &[f64]) -> f64 {
        let v = DVector::from_row_slice(mu).transpose() * &self.dense;
        v.amax()
    }
}

pub fn build_rate_matrix(space: &StateSpace, _p: &NetworkParams) -> Result<RateMatrix> {
    let n = space.len();
    let mut off_diagonal = vec![BTreeMap::new(); n];
    let mut diagonal = vec![Rational::zero(); n];
    for s in 0..n {
        for j in 0..space.n_neurons() {
            let t = space
                .jump_target(j, s)
                .ok_or(PjmpError::NotClosed { state: s, neuron: j })?;
            if t == s {
                continue;
            }
            let r = *space.spike_rate_exact(s, j);
            *off_diagonal[s].entry(t).or_insert_with(Rational::zero) += r;
            diagonal[s] -= r;
        }
    }
    let mut dense = DMatrix::zeros(n, n);
    for s in 0..n {
        dense[(s, s)] = rational_to_f64(&diagonal[s]);
        for (t, r) in &off_diagonal[s] {
            dense[(s, *t)] = rational_to_f64(r);
        }
    }
    Ok(RateMatrix {
        off_diagonal,
        diagonal,
        dense,
    })
}

/// A probability vector indexed by a state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub weights: Vec<f64>,
}

impl Distribution {
    /// Smallest mass, the uniform lower bound `e` on the invariant measure.
    pub fn min_mass(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Total-variation distance to another distribution on the same space.
    pub fn tv_distance(&self, other: &[f64]) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

const STATIONARY_TOL: f64 = 1e-12;

pub fn invariant_measure(q: &RateMatrix) -> Result<Distribution> {
    if q.dim() == 0 {
        return Err(PjmpError::EmptyStateSpace);
    }
    let mut mu = if q.dim() <= DENSE_SOLVE_LIMIT {
        dense_stationary(q)?
    } else {
        power_stationary(q)?
    };
    if mu.iter().any(|v| *v < -1e-10) {
        return Err(PjmpError::SingularSolve(
            "stationary solution has negative mass; chain is not irreducible".into(),
        ));
    }
    for v in mu.iter_mut() {
        *v = v.max(0.0);
    }
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= total);
    let residual = q.left_residual(&mu);
    if residual > STATIONARY_TOL * q.max_exit_rate().max(1.0) {
        return Err(PjmpError::SingularSolve(format!(
            "residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(Distribution { weights: mu })
}

fn dense_stationary(q: &RateMatrix) -> Result<Vec<f64>> {
    let n = q.dim();
    let mut a = q.dense().transpose();
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().full_piv_lu();
    let mut mu = lu
        .solve(&b)
        .ok_or_else(|| PjmpError::SingularSolve("rate matrix is singular".into()))?;
    for _ in 0..2 {
        let r = &b - &a * &mu;
        if let Some(d) = lu.solve(&r) {
            mu += d;
        }
    }
    Ok(mu.iter().copied().collect())
}

fn power_stationary(q: &RateMatrix) -> Result<Vec<f64>> {
    let n = q.dim();
    // Slack in the uniformization rate keeps the chain aperiodic.
    let lambda = 1.05 * q.max_exit_rate();
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let mut next = mu.clone();
        for x in 0..n {
            if mu[x] == 0.0 {
                continue;
            }
            let m = mu[x] / lambda;
            for (y, r) in &q.off_diagonal[x] {
                let r = rational_to_f64(r);
                next[*y] += m * r;
                next[x] -= m * r;
            }
        }
        let diff = next
            .iter()
            .zip(&mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        mu = next;
        if diff < 1e-16 {
            return Ok(mu);
        }
    }
    Err(PjmpError::SingularSolve("power iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{apply_jump, generator_apply, IntensitySpec};

    fn set(space: &StateSpace) -> Vec<Vec<i64>> {
        let mut v: Vec<Vec<i64>> = space.states().iter().map(|c| c.potentials().to_vec()).collect();
        v.sort();
        v
    }

    #[test]
    fn benchmark_reachable_and_domain() {
        let p = benchmark();
        let x0 = cfg(&p, &[0, 0]);
        let reach = enumerate_reachable(&p, &x0).unwrap();
        assert_eq!(
            set(&reach),
            vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0], vec![2, 0]]
        );
        assert!(reach.is_closed());
        let d = invariant_domain(&p, &x0).unwrap();
        assert_eq!(set(&d), vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![2, 0]]);
        assert!(d.index_of(&x0).is_none());
        assert!(d.is_closed());
    }

    #[test]
    fn lone_neuron_only_resets() {
        let p = NetworkParams::new(
            1,
            ri(3),
            vec![vec![ri(0)]],
            IntensitySpec::Constant { rate: ri(1) },
            ri(1),
        )
        .unwrap();
        let reach = enumerate_reachable(&p, &cfg(&p, &[2])).unwrap();
        assert_eq!(set(&reach), vec![vec![0], vec![2]]);
        let reach = enumerate_reachable(&p, &cfg(&p, &[0])).unwrap();
        assert_eq!(reach.len(), 1);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let p = uniform(3, 4, 1, 1, 1);
        let x0 = cfg(&p, &[0, 0, 0]);
        let a = enumerate_reachable(&p, &x0).unwrap();
        let b = enumerate_reachable(&p, &x0).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn budget_error() {
        let p = uniform(3, 4, 1, 1, 1);
        let x0 = cfg(&p, &[0, 0, 0]);
        assert!(matches!(
            enumerate_reachable_with_budget(&p, &x0, 3),
            Err(PjmpError::BudgetExceeded { budget: 3 })
        ));
    }

    #[test]
    fn domain_is_strongly_connected() {
        let p = uniform(3, 3, 1, 1, 1);
        let d = invariant_domain(&p, &cfg(&p, &[0, 0, 0])).unwrap();
        for s in 0..d.len() {
            let mut seen = vec![false; d.len()];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for j in 0..3 {
                    let v = d.target(j, u);
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            assert!(seen.iter().all(|b| *b));
        }
    }

    #[test]
    fn rate_matrix_matches_generator() {
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        for s in 0..d.len() {
            assert!(q.row_sum_exact(s).is_zero());
        }
        let f: Vec<f64> = d.tabulate(|c| (c.get(0) as f64 + 1.0).ln() + 2.0 * c.get(1) as f64);
        let qf = q.apply(&f);
        for (s, x) in d.states().iter().enumerate() {
            let g = generator_apply(|y: &Config| d.index_of(y).map(|k| f[k]), x, &p).unwrap();
            assert!((qf[s] - g).abs() < 1e-12);
        }
        // (0,1) -> (1,0) through the spike of neuron 2 at rate φ(1) = 2
        let from = d.index_of(&cfg(&p, &[0, 1])).unwrap();
        let to = d.index_of(&cfg(&p, &[1, 0])).unwrap();
        assert_eq!(q.rate(from, to), 2.0);
    }

    #[test]
    fn constant_rate_benchmark_transition() {
        let p = uniform(2, 2, 1, 1, 0);
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        let from = d.index_of(&cfg(&p, &[0, 1])).unwrap();
        let to = d.index_of(&cfg(&p, &[1, 0])).unwrap();
        assert_eq!(q.rate(from, to), 1.0);
        // self-jump of neuron 1 at (0,2) leaves no trace
        let s = d.index_of(&cfg(&p, &[0, 2])).unwrap();
        assert_eq!(apply_jump(d.state(s), 0, &p).unwrap(), *d.state(s));
        assert_eq!(q.rate(s, s), -1.0);
    }

    #[test]
    fn non_closed_space_is_rejected() {
        let p = benchmark();
        let partial = StateSpace::from_states(&p, vec![cfg(&p, &[0, 1])]).unwrap();
        assert!(matches!(
            build_rate_matrix(&partial, &p),
            Err(PjmpError::NotClosed { .. })
        ));
    }

    #[test]
    fn symmetric_measure_and_jump_chain() {
        let p = uniform(2, 2, 1, 1, 0);
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        let mu = invariant_measure(&q).unwrap();
        let at = |v: &[i64]| mu.weights[d.index_of(&cfg(&p, v)).unwrap()];
        assert!((at(&[0, 1]) - at(&[1, 0])).abs() < 1e-14);
        assert!((at(&[0, 2]) - at(&[2, 0])).abs() < 1e-14);
        assert!(q.left_residual(&mu.weights) <= 1e-12);

        // μ(x)φ̄(x) is stationary for the embedded jump chain
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        let mu = invariant_measure(&q).unwrap();
        let nu: Vec<f64> = (0..d.len()).map(|s| mu.weights[s] * d.total_rate(s)).collect();
        let z: f64 = nu.iter().sum();
        let mut next = vec![0.0; d.len()];
        for s in 0..d.len() {
            for j in 0..2 {
                next[d.target(j, s)] += nu[s] / z * d.spike_rate(s, j) / d.total_rate(s);
            }
        }
        for s in 0..d.len() {
            assert!((next[s] - nu[s] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn benchmark_measure_values() {
        // (0,1),(1,0) carry 3/8 each and the capped states 1/8 each
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let mu = invariant_measure(&build_rate_matrix(&d, &p).unwrap()).unwrap();
        let at = |v: &[i64]| mu.weights[d.index_of(&cfg(&p, v)).unwrap()];
        assert!((at(&[0, 1]) - 0.375).abs() < 1e-14);
        assert!((at(&[2, 0]) - 0.125).abs() < 1e-14);
        assert!((mu.min_mass() - 0.125).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_agrees_with_dense_solve() {
        let p = uniform(3, 4, 1, 1, 1);
        let d = invariant_domain(&p, &cfg(&p, &[0, 0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        let dense = dense_stationary(&q).unwrap();
        let power = power_stationary(&q).unwrap();
        for (a, b) in dense.iter().zip(&power) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn spiking_in_order_reaches_one_state() {
        // spiking neurons 1..N in order erases the initial condition, so the
        // closed class is reachable from everywhere
        let p = uniform(3, 3, 1, 1, 1);
        let reach = enumerate_reachable(&p, &cfg(&p, &[3, 2, 1])).unwrap();
        let sink = |mut s: usize| {
            for j in 0..3 {
                s = reach.target(j, s);
            }
            s
        };
        let z = sink(0);
        assert!((0..reach.len()).all(|s| sink(s) == z));
        let d = closed_class(&p, &reach).unwrap();
        assert!(d.index_of(reach.state(z)).is_some());
    }

    #[test]
    fn csv_dump_layout() {
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "state_index,potentials,target_0,rate_0,target_1,rate_1");
        assert_eq!(lines.count(), 4);
    }
}
