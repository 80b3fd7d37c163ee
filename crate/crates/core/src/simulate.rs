//! Exact path sampling: competing clocks (Gillespie) and thinning of
//! per-neuron dominating Poisson streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::semigroup::{kernel, Schedule};
use crate::statespace::{RateMatrix, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    #[default]
    Gillespie,
    Thinning,
}

impl std::str::FromStr for Sampler {
    type Err = PjmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gillespie" => Ok(Sampler::Gillespie),
            "thinning" => Ok(Sampler::Thinning),
            other => Err(PjmpError::InvalidConfig(format!("unknown sampler '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    pub sampler: Sampler,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(PjmpError::InvalidConfig("n_paths must be at least 1".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(PjmpError::InvalidConfig(format!("bad horizon {}", self.horizon)));
        }
        Ok(())
    }
}

/// A sampled path: events (time, neuron) and the state index after each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub horizon: f64,
    pub events: Vec<(f64, usize)>,
    /// `states[0]` is the initial state; `states[k]` follows event k.
    pub states: Vec<usize>,
}

impl Trajectory {
    /// State at time t, counting an event at exactly t.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.events.partition_point(|(s, _)| *s <= t);
        self.states[k]
    }
}

/// Per-path generator: stream `path` of the master seed.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

struct Engine<'a> {
    space: &'a StateSpace,
    sampler: Sampler,
    phi_max: f64,
}

impl<'a> Engine<'a> {
    fn new(p: &NetworkParams, space: &'a StateSpace, sampler: Sampler) -> Result<Self> {
        if !space.is_closed() {
            return Err(PjmpError::InvalidConfig(
                "simulation needs a state space closed under the jumps".into(),
            ));
        }
        let mut phi_max: f64 = 0.0;
        for v in p.value_set() {
            phi_max = phi_max.max(p.phi_f64(v)?);
        }
        Ok(Engine {
            space,
            sampler,
            phi_max,
        })
    }

    /// Runs for `duration` from `state`, reporting (time, neuron, new state).
    fn segment<R: Rng>(
        &self,
        rng: &mut R,
        state: &mut usize,
        duration: f64,
        mut on_event: impl FnMut(f64, usize, usize),
    ) {
        if duration <= 0.0 {
            return;
        }
        match self.sampler {
            Sampler::Gillespie => {
                let mut t = 0.0;
                loop {
                    let rate = self.space.total_rate(*state);
                    t += Exp::new(rate).expect("positive total rate").sample(rng);
                    if t > duration {
                        break;
                    }
                    let mut u = rng.random::<f64>() * rate;
                    let rates = self.space.spike_rates(*state);
                    let mut j = rates.len() - 1;
                    for (i, r) in rates.iter().enumerate() {
                        if u < *r {
                            j = i;
                            break;
                        }
                        u -= r;
                    }
                    *state = self.space.target(j, *state);
                    on_event(t, j, *state);
                }
            }
            Sampler::Thinning => {
                let clock = Exp::new(self.phi_max).expect("positive dominating rate");
                let mut next: Vec<f64> = (0..self.space.n_neurons())
                    .map(|_| clock.sample(rng))
                    .collect();
                loop {
                    let (i, t) = next
                        .iter()
                        .copied()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .expect("at least one neuron");
                    if t > duration {
                        break;
                    }
                    if rng.random::<f64>() * self.phi_max <= self.space.spike_rate(*state, i) {
                        *state = self.space.target(i, *state);
                        on_event(t, i, *state);
                    }
                    next[i] += clock.sample(rng);
                }
            }
        }
    }
}

/// One path on [0, horizon] from state index `x0`, using stream `path_id`.
pub fn simulate_path(
    p: &NetworkParams,
    space: &StateSpace,
    x0: usize,
    sim: &SimConfig,
    path_id: u64,
) -> Result<Trajectory> {
    sim.validate()?;
    check_state(space, x0)?;
    let engine = Engine::new(p, space, sim.sampler)?;
    let mut rng = path_rng(sim.seed, path_id);
    Ok(run_path(&engine, &mut rng, x0, sim.horizon))
}

fn run_path<R: Rng>(engine: &Engine, rng: &mut R, x0: usize, horizon: f64) -> Trajectory {
    let mut state = x0;
    let mut traj = Trajectory {
        horizon,
        events: Vec::new(),
        states: vec![x0],
    };
    engine.segment(rng, &mut state, horizon, |t, j, s| {
        traj.events.push((t, j));
        traj.states.push(s);
    });
    traj
}

/// `sim.n_paths` paths in parallel, returned in path order.
pub fn simulate_paths(p: &NetworkParams, space: &StateSpace, x0: usize, sim: &SimConfig) -> Result<Vec<Trajectory>> {
    sim.validate()?;
    check_state(space, x0)?;
    let engine = Engine::new(p, space, sim.sampler)?;
    Ok((0..sim.n_paths as u64)
        .into_par_iter()
        .map(|id| run_path(&engine, &mut path_rng(sim.seed, id), x0, sim.horizon))
        .collect())
}

fn check_state(space: &StateSpace, x0: usize) -> Result<()> {
    if x0 >= space.len() {
        return Err(PjmpError::DimensionMismatch {
            expected: space.len(),
            got: x0,
        });
    }
    Ok(())
}

/// State indices at every schedule time, one row per path. Paths are
/// advanced gap by gap, which is exact by the Markov property.
pub fn sample_at_times(
    p: &NetworkParams,
    space: &StateSpace,
    x0: usize,
    sched: &Schedule,
    sim: &SimConfig,
) -> Result<Vec<Vec<usize>>> {
    sim.validate()?;
    check_state(space, x0)?;
    if sched.horizon() > sim.horizon {
        return Err(PjmpError::InvalidSchedule(format!(
            "schedule ends at {} beyond the horizon {}",
            sched.horizon(),
            sim.horizon
        )));
    }
    let engine = Engine::new(p, space, sim.sampler)?;
    Ok((0..sim.n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = path_rng(sim.seed, id);
            let mut state = x0;
            let mut row = Vec::with_capacity(sched.len());
            row.push(state);
            for gap in sched.gaps() {
                engine.segment(&mut rng, &mut state, *gap, |_, _, _| {});
                row.push(state);
            }
            row
        })
        .collect())
}

/// Empirical law of a list of state indices.
pub fn empirical_distribution(samples: impl IntoIterator<Item = usize>, dim: usize) -> Vec<f64> {
    let mut counts = vec![0usize; dim];
    let mut n = 0usize;
    for s in samples {
        counts[s] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n.max(1) as f64).collect()
}

pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Time-weighted occupation of one long path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub fractions: Vec<f64>,
    pub total_time: f64,
    pub n_events: usize,
    /// Σ_x fraction(x) φ̄(x), the event rate the fractions predict.
    pub predicted_rate: f64,
}

pub fn occupation_fractions(
    p: &NetworkParams,
    space: &StateSpace,
    x0: usize,
    n_events: usize,
    sampler: Sampler,
    seed: u64,
) -> Result<Occupation> {
    check_state(space, x0)?;
    let engine = Engine::new(p, space, sampler)?;
    let mut rng = path_rng(seed, 0);
    let mut time_in = vec![0.0; space.len()];
    let mut state = x0;
    let mut count = 0usize;
    // run in unit-length segments until enough events have occurred
    while count < n_events {
        let mut last = 0.0;
        let mut before = state;
        engine.segment(&mut rng, &mut state, 1.0, |t, _, s| {
            time_in[before] += t - last;
            last = t;
            before = s;
            count += 1;
        });
        time_in[before] += 1.0 - last;
    }
    let total_time: f64 = time_in.iter().sum();
    let fractions: Vec<f64> = time_in.iter().map(|t| t / total_time).collect();
    let predicted_rate = fractions
        .iter()
        .enumerate()
        .map(|(s, f)| f * space.total_rate(s))
        .sum();
    Ok(Occupation {
        fractions,
        total_time,
        n_events: count,
        predicted_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub t: f64,
    pub n_paths: usize,
    pub tv_samplers: f64,
    pub tv_gillespie_kernel: f64,
    pub tv_thinning_kernel: f64,
    /// 2 √(|D| / n_paths)
    pub threshold: f64,
}

impl CrossValidation {
    pub fn passes(&self) -> bool {
        self.tv_samplers <= self.threshold
    }
}

/// Compares the marginals at `t` of both samplers, run from independent
/// seeds, with each other and with the kernel row.
pub fn cross_validate_samplers(
    p: &NetworkParams,
    space: &StateSpace,
    q: &RateMatrix,
    x0: usize,
    seed: u64,
    n_paths: usize,
    t: f64,
) -> Result<CrossValidation> {
    let sched = Schedule::from_gaps(if t > 0.0 { vec![t] } else { vec![] })?;
    let marginal = |sampler, seed| -> Result<Vec<f64>> {
        let sim = SimConfig {
            seed,
            n_paths,
            horizon: t,
            sampler,
        };
        let rows = sample_at_times(p, space, x0, &sched, &sim)?;
        Ok(empirical_distribution(rows.iter().map(|r| *r.last().unwrap()), space.len()))
    };
    let g = marginal(Sampler::Gillespie, seed)?;
    let th = marginal(Sampler::Thinning, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let row = kernel(q, t)?.row(x0);
    Ok(CrossValidation {
        t,
        n_paths,
        tv_samplers: tv_distance(&g, &th),
        tv_gillespie_kernel: tv_distance(&g, &row),
        tv_thinning_kernel: tv_distance(&th, &row),
        threshold: 2.0 * (space.len() as f64 / n_paths as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{apply_jump, IntensitySpec};
    use crate::statespace::{build_rate_matrix, invariant_domain};

    fn bench_system() -> (NetworkParams, StateSpace, RateMatrix) {
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        (p, d, q)
    }

    fn sim(sampler: Sampler, n_paths: usize, horizon: f64) -> SimConfig {
        SimConfig {
            seed: 42,
            n_paths,
            horizon,
            sampler,
        }
    }

    #[test]
    fn zero_horizon_has_no_events() {
        let (p, d, _) = bench_system();
        for s in [Sampler::Gillespie, Sampler::Thinning] {
            let tr = simulate_path(&p, &d, 2, &sim(s, 1, 0.0), 0).unwrap();
            assert!(tr.events.is_empty());
            assert_eq!(tr.states, vec![2]);
        }
    }

    #[test]
    fn trajectories_follow_jump_map() {
        let (p, d, _) = bench_system();
        for s in [Sampler::Gillespie, Sampler::Thinning] {
            let tr = simulate_path(&p, &d, 0, &sim(s, 1, 50.0), 3).unwrap();
            assert!(!tr.events.is_empty());
            assert!(tr.events.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(tr.events.iter().all(|(t, _)| *t > 0.0 && *t <= 50.0));
            for (k, (_, j)) in tr.events.iter().enumerate() {
                let before = d.state(tr.states[k]);
                let after = d.state(tr.states[k + 1]);
                assert_eq!(&apply_jump(before, *j, &p).unwrap(), after);
                assert_eq!(after.get(*j), 0);
            }
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (p, d, _) = bench_system();
        let cfg = sim(Sampler::Thinning, 200, 3.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&p, &d, 1, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn schedule_at_zero_returns_start() {
        let (p, d, _) = bench_system();
        let sched = Schedule::new(vec![0.0]).unwrap();
        let rows = sample_at_times(&p, &d, 3, &sched, &sim(Sampler::Gillespie, 50, 1.0)).unwrap();
        assert!(rows.iter().all(|r| r == &vec![3]));
        let long = Schedule::new(vec![0.0, 2.0]).unwrap();
        assert!(sample_at_times(&p, &d, 3, &long, &sim(Sampler::Gillespie, 5, 1.0)).is_err());
    }

    #[test]
    fn state_at_is_right_continuous() {
        let tr = Trajectory {
            horizon: 2.0,
            events: vec![(0.5, 0), (1.0, 1)],
            states: vec![7, 8, 9],
        };
        assert_eq!(tr.state_at(0.0), 7);
        assert_eq!(tr.state_at(0.5), 8);
        assert_eq!(tr.state_at(0.99), 8);
        assert_eq!(tr.state_at(1.0), 9);
    }

    #[test]
    fn marginal_matches_kernel() {
        let (p, d, q) = bench_system();
        let cv = cross_validate_samplers(&p, &d, &q, 0, 5, 20_000, 1.0).unwrap();
        assert!(cv.passes(), "{cv:?}");
        assert!(cv.tv_gillespie_kernel < 0.03 && cv.tv_thinning_kernel < 0.03);
        let at_zero = cross_validate_samplers(&p, &d, &q, 0, 5, 100, 0.0).unwrap();
        assert_eq!(at_zero.tv_samplers, 0.0);
    }

    #[test]
    fn single_neuron_no_jump_probability() {
        let p = NetworkParams::new(
            1,
            ri(2),
            vec![vec![ri(0)]],
            IntensitySpec::Constant { rate: ri(2) },
            ri(1),
        )
        .unwrap();
        let d = invariant_domain(&p, &cfg(&p, &[0])).unwrap();
        let t: f64 = 0.4;
        let exact = (-2.0 * t).exp();
        for s in [Sampler::Gillespie, Sampler::Thinning] {
            let paths = simulate_paths(&p, &d, 0, &sim(s, 40_000, t)).unwrap();
            let none = paths.iter().filter(|tr| tr.events.is_empty()).count() as f64 / 40_000.0;
            assert!((none - exact).abs() < 0.01, "{s:?}: {none} vs {exact}");
        }
    }

    #[test]
    fn occupation_rate_is_consistent() {
        let (p, d, _) = bench_system();
        let occ = occupation_fractions(&p, &d, 0, 50_000, Sampler::Gillespie, 9).unwrap();
        let observed = occ.n_events as f64 / occ.total_time;
        assert!((observed / occ.predicted_rate - 1.0).abs() < 0.03);
        assert!((occ.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_parses() {
        assert_eq!("thinning".parse::<Sampler>().unwrap(), Sampler::Thinning);
        assert!("tau".parse::<Sampler>().is_err());
    }
}
