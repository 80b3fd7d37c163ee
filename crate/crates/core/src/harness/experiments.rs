use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{log_tail_slope, wilson_interval, TailCurve};
use super::{Analysis, System};
use crate::error::{PjmpError, Result};
use crate::inequalities::{schedule_builder, ConditionReport};
use crate::observable::{CoordinateFn, ObservableKind};
use crate::semigroup::{kernel, Kernel, Schedule};
use crate::simulate::{sample_at_times, SimConfig, Sampler};

/// Tolerance on the decay rate before the e^{−εn} form counts as reproduced.
pub const SLOPE_TOLERANCE: f64 = 0.2;

const SEED_SPREAD: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSpec {
    pub times: Vec<f64>,
    pub x0: Vec<usize>,
    pub observable: ObservableKind,
    pub neurons: Vec<usize>,
    pub r_grid: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub sampler: Sampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub curves: Vec<TailCurve>,
    pub pairs: Vec<(f64, usize)>,
    pub means: Vec<f64>,
    /// max_r tail(r) e^{r²} per (t, x0) pair.
    pub q_hat_pairs: Vec<f64>,
    pub q_hat: f64,
    /// max over pairs / min over pairs of the fitted prefactor.
    pub q_spread: f64,
    /// Every Wilson lower bound sits below q_hat e^{−r²}.
    pub covers_all: bool,
    /// Every exact tail sits inside its Wilson interval.
    pub exact_within_intervals: bool,
}

/// Sum of the observable over the chosen neurons, with Lipschitz checks.
fn additive_observable(sys: &System, kind: ObservableKind, neurons: &[usize]) -> Result<Vec<f64>> {
    let mut f = vec![0.0; sys.domain.len()];
    for &i in neurons {
        let fi = CoordinateFn::from_kind(kind, i, &sys.params);
        fi.check_lipschitz(&sys.params)?;
        for (acc, v) in f.iter_mut().zip(fi.tabulate(&sys.params, &sys.domain)?) {
            *acc += v;
        }
    }
    Ok(f)
}

/// Tails of |f(X_t) − E^x f(X_t)| over an r-grid, by Monte Carlo with the
/// exact atoms of the kernel row as reference.
pub fn concentration_experiment(sys: &System, spec: &ConcentrationSpec) -> Result<ConcentrationReport> {
    if spec.r_grid.is_empty() || spec.times.is_empty() || spec.x0.is_empty() {
        return Err(PjmpError::InvalidConfig("concentration grids must be nonempty".into()));
    }
    let f = additive_observable(sys, spec.observable, &spec.neurons)?;
    let mut report = ConcentrationReport {
        curves: Vec::new(),
        pairs: Vec::new(),
        means: Vec::new(),
        q_hat_pairs: Vec::new(),
        q_hat: 0.0,
        q_spread: 1.0,
        covers_all: true,
        exact_within_intervals: true,
    };
    let mut pair_id = 0u64;
    for &t in &spec.times {
        let row = kernel(&sys.q, t)?;
        let sched = Schedule::new(vec![0.0, t])?;
        for &x0 in &spec.x0 {
            pair_id += 1;
            let probs = row.row(x0);
            let mean: f64 = probs.iter().zip(&f).map(|(p, v)| p * v).sum();
            let sim = SimConfig {
                seed: spec.seed.wrapping_add(pair_id.wrapping_mul(SEED_SPREAD)),
                n_paths: spec.n_paths,
                horizon: t,
                sampler: spec.sampler,
            };
            let finals: Vec<usize> = sample_at_times(&sys.params, &sys.domain, x0, &sched, &sim)?
                .into_iter()
                .map(|r| r[1])
                .collect();
            let mut curve = TailCurve {
                label: format!("t={t};x0={x0}"),
                abscissa: spec.r_grid.clone(),
                tail: Vec::new(),
                wilson_lo: Vec::new(),
                wilson_hi: Vec::new(),
                reference: Vec::new(),
                prefactor: 0.0,
                exponent: "-r^2".into(),
            };
            for &r in &spec.r_grid {
                let hits = finals.iter().filter(|s| (f[**s] - mean).abs() >= r).count();
                let (lo, hi) = wilson_interval(hits, spec.n_paths);
                let tail = hits as f64 / spec.n_paths as f64;
                let exact: f64 = probs
                    .iter()
                    .zip(&f)
                    .filter(|(_, v)| (*v - mean).abs() >= r)
                    .fold(0.0, |acc, (p, _)| acc + p);
                curve.prefactor = curve.prefactor.max(tail * (r * r).exp());
                curve.tail.push(tail);
                curve.wilson_lo.push(lo);
                curve.wilson_hi.push(hi);
                curve.reference.push(exact);
            }
            report.exact_within_intervals &= curve.reference_within_intervals();
            report.q_hat_pairs.push(curve.prefactor);
            report.pairs.push((t, x0));
            report.means.push(mean);
            report.curves.push(curve);
        }
    }
    report.q_hat = report.q_hat_pairs.iter().copied().fold(0.0, f64::max);
    let q_min = report.q_hat_pairs.iter().copied().fold(f64::INFINITY, f64::min);
    report.q_spread = if q_min > 0.0 { report.q_hat / q_min } else { f64::INFINITY };
    report.covers_all = report.curves.iter().all(|c| {
        c.abscissa
            .iter()
            .zip(&c.wilson_lo)
            .all(|(r, lo)| *lo <= report.q_hat * (-r * r).exp() + 1e-12)
    });
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleSource {
    /// Gaps from the threshold rule with the given decay base.
    Built { base: f64 },
    /// Explicit observation times starting at 0.
    User(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpec {
    pub x0: usize,
    pub neuron: usize,
    pub observable: ObservableKind,
    pub epsilon: f64,
    pub n_max: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub sampler: Sampler,
    pub lambda: f64,
    pub laplace_a: f64,
    pub schedule: ScheduleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub gaps: Vec<f64>,
    pub condition: Option<ConditionReport>,
    pub d_total: f64,
    /// ln G = D(T) ∫₀¹ e^{a s} ds
    pub log_g_theory: f64,
    /// Abscissa n = 1..n_max; Monte Carlo tails with the exact DP tails as reference.
    pub curve: TailCurve,
    pub exact_means: Vec<f64>,
    pub slope_mc: Option<f64>,
    pub slope_exact: Option<f64>,
    /// −λ ε (1 − tolerance)
    pub target_slope: f64,
    pub reproduced: bool,
}

fn laplace_integral(a: f64) -> f64 {
    if a.abs() < 1e-12 {
        1.0
    } else {
        a.exp_m1() / a
    }
}

/// Tails of |n⁻¹ Σ_k f(X_{t_k}) − n⁻¹ Σ_k E f(X_{t_k})| for n = 1..n_max.
pub fn empirical_experiment(sys: &System, analysis: &Analysis, spec: &EmpiricalSpec) -> Result<EmpiricalReport> {
    if spec.n_max == 0 || spec.epsilon < 0.0 {
        return Err(PjmpError::InvalidConfig("need n_max >= 1 and epsilon >= 0".into()));
    }
    let fi = CoordinateFn::from_kind(spec.observable, spec.neuron, &sys.params);
    fi.check_lipschitz(&sys.params)?;
    let f = fi.tabulate(&sys.params, &sys.domain)?;
    let c = &analysis.constants;
    let (sched, condition) = match &spec.schedule {
        ScheduleSource::Built { base } => {
            let build = schedule_builder(c, &analysis.fit, spec.n_max, *base)?;
            (build.schedule, Some(build.condition))
        }
        ScheduleSource::User(times) => {
            let sched = Schedule::new(times.clone())?;
            if sched.len() < spec.n_max {
                return Err(PjmpError::InvalidSchedule(format!(
                    "schedule has {} times, n_max is {}",
                    sched.len(),
                    spec.n_max
                )));
            }
            (sched.prefix(spec.n_max)?, None)
        }
    };
    let d_total = c.d_total(&sched)?;
    let (means, exact) = exact_average_tails(sys, spec.x0, &sched, &f, spec.epsilon)?;

    let sim = SimConfig {
        seed: spec.seed,
        n_paths: spec.n_paths,
        horizon: sched.horizon(),
        sampler: spec.sampler,
    };
    let rows = sample_at_times(&sys.params, &sys.domain, spec.x0, &sched, &sim)?;
    let mut hits = vec![0usize; spec.n_max];
    for row in &rows {
        let mut sum = 0.0;
        for (k, s) in row.iter().enumerate() {
            sum += f[*s];
            let n = (k + 1) as f64;
            if (sum / n - means[k]).abs() >= spec.epsilon {
                hits[k] += 1;
            }
        }
    }
    let ns: Vec<f64> = (1..=spec.n_max).map(|n| n as f64).collect();
    let tails: Vec<f64> = hits.iter().map(|h| *h as f64 / spec.n_paths as f64).collect();
    let (wilson_lo, wilson_hi) = hits.iter().map(|h| wilson_interval(*h, spec.n_paths)).unzip();
    let rate = spec.lambda * spec.epsilon;
    let prefactor = tails
        .iter()
        .zip(&ns)
        .map(|(t, n)| t * (rate * n).exp())
        .fold(0.0, f64::max);
    let from_two = |v: &[f64]| v.get(1..).map(<[f64]>::to_vec).unwrap_or_default();
    let slope_mc = log_tail_slope(&from_two(&ns), &from_two(&tails));
    let slope_exact = log_tail_slope(&from_two(&ns), &from_two(&exact));
    let target_slope = -rate * (1.0 - SLOPE_TOLERANCE);
    Ok(EmpiricalReport {
        gaps: sched.gaps().to_vec(),
        condition,
        d_total,
        log_g_theory: d_total * laplace_integral(spec.laplace_a),
        curve: TailCurve {
            label: format!("x0={};neuron={};eps={}", spec.x0, spec.neuron, spec.epsilon),
            abscissa: ns,
            tail: tails,
            wilson_lo,
            wilson_hi,
            reference: exact,
            prefactor,
            exponent: format!("-{rate}*n"),
        },
        exact_means: means,
        slope_mc,
        slope_exact,
        target_slope,
        reproduced: slope_mc.is_some_and(|s| s <= target_slope),
    })
}

/// Exact means and tails of the running average by dynamic programming over
/// (state, how often each value of f has been observed).
pub fn exact_average_tails(
    sys: &System,
    x0: usize,
    sched: &Schedule,
    f: &[f64],
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut values: Vec<f64> = f.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() > u8::MAX as usize {
        return Err(PjmpError::Unsupported("observable takes too many values".into()));
    }
    let slot = |s: usize| values.iter().position(|v| *v == f[s]).unwrap();
    let kernels: Vec<Kernel> = sched.gaps().iter().map(|g| kernel(&sys.q, *g)).collect::<Result<_>>()?;

    let mut dist: BTreeMap<(usize, Vec<u8>), f64> = BTreeMap::new();
    let mut start = vec![0u8; values.len()];
    start[slot(x0)] = 1;
    dist.insert((x0, start), 1.0);
    let mut marginal = vec![0.0; sys.domain.len()];
    marginal[x0] = 1.0;
    let mut expect_sum = f[x0];

    let mut means = Vec::with_capacity(sched.len());
    let mut tails = Vec::with_capacity(sched.len());
    for k in 0..sched.len() {
        if k > 0 {
            let kern = &kernels[k - 1];
            let mut next: BTreeMap<(usize, Vec<u8>), f64> = BTreeMap::new();
            for ((s, counts), p) in &dist {
                for y in 0..sys.domain.len() {
                    let w = kern.get(*s, y);
                    if w <= 0.0 {
                        continue;
                    }
                    let mut c = counts.clone();
                    c[slot(y)] += 1;
                    *next.entry((y, c)).or_insert(0.0) += p * w;
                }
            }
            dist = next;
            marginal = (0..sys.domain.len())
                .map(|y| (0..sys.domain.len()).map(|s| marginal[s] * kern.get(s, y)).sum())
                .collect();
            expect_sum += marginal.iter().zip(f).map(|(p, v)| p * v).sum::<f64>();
        }
        let n = (k + 1) as f64;
        let mean = expect_sum / n;
        let tail = dist
            .iter()
            .filter(|((_, counts), _)| {
                let total: f64 = counts.iter().zip(&values).map(|(c, v)| *c as f64 * v).sum();
                (total / n - mean).abs() >= epsilon
            })
            .fold(0.0, |acc, (_, p)| acc + p);
        means.push(mean);
        tails.push(tail);
    }
    Ok((means, tails))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    fn sys() -> System {
        System::new(benchmark()).unwrap()
    }

    fn conc_spec(observable: ObservableKind, r_grid: Vec<f64>) -> ConcentrationSpec {
        ConcentrationSpec {
            times: vec![1.0],
            x0: vec![0],
            observable,
            neurons: vec![0, 1],
            r_grid,
            n_paths: 4000,
            seed: 3,
            sampler: Sampler::Gillespie,
        }
    }

    #[test]
    fn tail_at_zero_radius_is_one() {
        let s = sys();
        let rep = concentration_experiment(&s, &conc_spec(ObservableKind::Identity, vec![0.0, 0.5])).unwrap();
        assert_eq!(rep.curves[0].tail[0], 1.0);
        assert!(rep.q_hat >= 1.0);
        assert!(rep.covers_all);
    }

    #[test]
    fn exact_tails_match_direct_enumeration() {
        let s = sys();
        let f: Vec<f64> = s.domain.tabulate(|x| x.get(0) as f64);
        let sched = Schedule::new(vec![0.0, 0.3, 0.8]).unwrap();
        let eps = 0.4;
        let (means, tails) = exact_average_tails(&s, 1, &sched, &f, eps).unwrap();
        let k1 = kernel(&s.q, 0.3).unwrap();
        let k2 = kernel(&s.q, 0.5).unwrap();
        let m1 = (0..4).map(|y| k1.get(1, y) * f[y]).sum::<f64>();
        let m2 = (0..4)
            .flat_map(|y| (0..4).map(move |z| (y, z)))
            .map(|(y, z)| k1.get(1, y) * k2.get(y, z) * f[z])
            .sum::<f64>();
        let mean3 = (f[1] + m1 + m2) / 3.0;
        assert!((means[2] - mean3).abs() < 1e-12);
        let mut tail3 = 0.0;
        for y in 0..4 {
            for z in 0..4 {
                if ((f[1] + f[y] + f[z]) / 3.0 - mean3).abs() >= eps {
                    tail3 += k1.get(1, y) * k2.get(y, z);
                }
            }
        }
        assert!((tails[2] - tail3).abs() < 1e-12);
        assert_eq!(tails[0], 0.0);
    }

    #[test]
    fn zero_epsilon_gives_unit_tail() {
        let s = sys();
        let f: Vec<f64> = s.domain.tabulate(|x| x.get(1) as f64);
        let sched = Schedule::new(vec![0.0, 0.5, 1.0]).unwrap();
        let (_, tails) = exact_average_tails(&s, 0, &sched, &f, 0.0).unwrap();
        assert!(tails.iter().all(|t| (*t - 1.0).abs() < 1e-12));
        let (_, tails) = exact_average_tails(&s, 0, &sched, &f, 2.5).unwrap();
        assert!(tails.iter().all(|t| *t == 0.0));
    }
}
