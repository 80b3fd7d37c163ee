use serde::{Deserialize, Serialize};

use super::{CubicFit, InequalityReport, MlsiConstants, ReportMeta};
use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::observable::CoordinateFn;
use crate::semigroup::{multi_time_expectation, PathFunctional, Schedule};
use crate::statespace::{RateMatrix, StateSpace};

/// Per-step decay factor in the gap thresholds.
pub const DEFAULT_DECAY_BASE: f64 = 2.0 / 3.0;

const BISECTION_STEPS: usize = 200;

/// The summability condition on a schedule, evaluated term by term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// δ_fit(Δ_k) 3^k Σ_{r=1}^{k+1} (N d)^{r+4} for k = 1..n.
    pub terms_fit: Vec<f64>,
    pub partial_sum_fit: f64,
    /// The same sum with the theoretical δ(t).
    pub partial_sum_theory: f64,
    /// Growth factor 3·base of the term bound beyond n.
    pub tail_ratio: f64,
    /// Geometric bound on the remaining terms, absent when the ratio is ≥ 1.
    pub tail_bound: Option<f64>,
}

impl ConditionReport {
    pub fn convergent(&self) -> bool {
        self.tail_bound.is_some() && self.partial_sum_fit.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleBuild {
    pub schedule: Schedule,
    pub base: f64,
    /// Threshold on δ(Δ_k) for k = 2..n.
    pub thresholds: Vec<f64>,
    pub condition: ConditionReport,
}

fn threshold(c: &MlsiConstants, k: usize, base: f64) -> f64 {
    base.powi(k as i32) / c.chain_sum(k)
}

/// sup{t : fit(t) ≤ level} on the increasing branch through the origin.
fn invert_fit(fit: &CubicFit, level: f64) -> Result<f64> {
    let mut hi = 1.0;
    let mut grown = 0;
    while fit.eval(hi) <= level {
        hi *= 2.0;
        grown += 1;
        if grown > 1100 {
            return Err(PjmpError::InvalidSchedule(format!(
                "delta fit never exceeds the threshold {level:e}"
            )));
        }
    }
    while hi > f64::MIN_POSITIVE && fit.eval(hi / 2.0) > level {
        hi /= 2.0;
    }
    if (0..=64).any(|j| fit.derivative(hi * j as f64 / 64.0) <= 0.0) {
        return Err(PjmpError::InvalidSchedule(format!(
            "delta fit is not increasing on [0, {hi:e}]"
        )));
    }
    let mut lo = 0.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if fit.eval(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Gaps shrink so that δ_fit(t_k − t_{k−1}) ≤ base^k (Σ_{r=1}^{k+1}(N d)^{r+4})^{−1}.
pub fn schedule_builder(c: &MlsiConstants, fit: &CubicFit, n: usize, base: f64) -> Result<ScheduleBuild> {
    if n == 0 {
        return Err(PjmpError::InvalidSchedule("need at least one time".into()));
    }
    if !(base > 0.0 && base < 1.0) {
        return Err(PjmpError::InvalidSchedule(format!("decay base {base} outside (0, 1)")));
    }
    let mut gaps = Vec::new();
    let mut thresholds = Vec::new();
    for k in 2..=n {
        let level = threshold(c, k, base);
        let gap = invert_fit(fit, level)?;
        if !(gap > 0.0) {
            return Err(PjmpError::ScheduleCondition {
                k,
                reason: format!("threshold {level:e} gives an empty gap"),
            });
        }
        thresholds.push(level);
        gaps.push(gap);
    }
    let schedule = Schedule::from_gaps(gaps)?;
    let condition = condition_report(c, fit, &schedule, base);
    Ok(ScheduleBuild {
        schedule,
        base,
        thresholds,
        condition,
    })
}

pub fn condition_report(c: &MlsiConstants, fit: &CubicFit, sched: &Schedule, base: f64) -> ConditionReport {
    let gaps = super::schedule_gaps(sched);
    let weight = |k: usize| 3f64.powi(k as i32) * c.chain_sum(k);
    let terms_fit: Vec<f64> = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| fit.eval(*g) * weight(i + 1))
        .collect();
    let partial_sum_theory = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| c.delta(*g) * weight(i + 1))
        .sum();
    let tail_ratio = 3.0 * base;
    let n = gaps.len() as i32;
    let tail_bound = (tail_ratio < 1.0).then(|| tail_ratio.powi(n + 1) / (1.0 - tail_ratio));
    ConditionReport {
        partial_sum_fit: terms_fit.iter().sum(),
        terms_fit,
        partial_sum_theory,
        tail_ratio,
        tail_bound,
    }
}

/// Entropy of e^{λF}, F = Σ_k f_i(X^i_{t_k}), against λ² D(T) E[e^{λF}].
#[allow(clippy::too_many_arguments)]
pub fn cylindrical_mlsi_sides(
    p: &NetworkParams,
    space: &StateSpace,
    q: &RateMatrix,
    sched: &Schedule,
    fi: &CoordinateFn,
    lambda: f64,
    x0: usize,
    c: &MlsiConstants,
) -> Result<InequalityReport> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(PjmpError::InvalidConfig(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    fi.check_lipschitz(p)?;
    let d_total = c.d_total(sched)?;
    let h = vec![fi.tabulate(p, space)?; sched.len()];
    let moment = multi_time_expectation(q, sched, x0, &PathFunctional::ExpSum { lambda, h: h.clone() })?;
    let integrand = multi_time_expectation(q, sched, x0, &PathFunctional::EntropyIntegrand { lambda, h })?;
    let lhs = integrand - moment * moment.ln();
    let meta = ReportMeta {
        t: sched.horizon(),
        x_index: x0,
        function_id: fi.id().to_string(),
        lambda: Some(lambda),
        ..Default::default()
    };
    let rhs = lambda * lambda * d_total * moment;
    Ok(InequalityReport::new("cylindrical", lhs, rhs, meta, format!("D(T)={d_total:.6e};{}", c.summary()))
        .component("D_T", d_total)
        .component("exp_moment", moment))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::bench;
    use super::*;
    use crate::observable::ObservableKind;

    fn linear_fit(slope: f64) -> CubicFit {
        CubicFit {
            coeffs: [slope, 0.0, 0.0],
            rel_residual: 0.0,
        }
    }

    #[test]
    fn thresholds_decrease_and_gaps_invert_fit() {
        let b = bench();
        let fit = CubicFit {
            coeffs: [0.5, 0.2, 0.1],
            rel_residual: 0.0,
        };
        let build = schedule_builder(&b.c, &fit, 6, DEFAULT_DECAY_BASE).unwrap();
        assert!(build.thresholds.windows(2).all(|w| w[1] < w[0]));
        let gaps = build.schedule.gaps();
        for (g, level) in gaps.iter().zip(&build.thresholds) {
            assert!((fit.eval(*g) - level).abs() <= 1e-12 * level);
        }
        assert!(build.condition.partial_sum_fit.is_finite());
    }

    #[test]
    fn single_time_schedule() {
        let b = bench();
        let build = schedule_builder(&b.c, &linear_fit(1.0), 1, DEFAULT_DECAY_BASE).unwrap();
        assert_eq!(build.schedule.times(), vec![0.0]);
        assert!(build.thresholds.is_empty());
    }

    #[test]
    fn condition_terms_follow_thresholds() {
        let b = bench();
        let build = schedule_builder(&b.c, &linear_fit(2.0), 10, DEFAULT_DECAY_BASE).unwrap();
        let cond = &build.condition;
        assert_eq!(cond.terms_fit[0], 0.0);
        for (k, term) in cond.terms_fit.iter().enumerate().skip(1) {
            let bound = (DEFAULT_DECAY_BASE * 3.0).powi(k as i32 + 1);
            assert!(*term <= bound * (1.0 + 1e-9));
        }
        // with base 2/3 the term bound grows like 2^k
        assert!(!cond.convergent());
        let fast = schedule_builder(&b.c, &linear_fit(2.0), 10, 0.2).unwrap();
        assert!(fast.condition.convergent());
    }

    #[test]
    fn degenerate_fit_rejected() {
        let b = bench();
        let flat = linear_fit(0.0);
        assert!(schedule_builder(&b.c, &flat, 3, DEFAULT_DECAY_BASE).is_err());
        let falling = CubicFit {
            coeffs: [-1.0, 0.0, 1.0],
            rel_residual: 0.0,
        };
        assert!(schedule_builder(&b.c, &falling, 3, DEFAULT_DECAY_BASE).is_err());
        assert!(schedule_builder(&b.c, &linear_fit(1.0), 0, DEFAULT_DECAY_BASE).is_err());
    }

    #[test]
    fn cylindrical_trivial_cases() {
        let b = bench();
        let zero = CoordinateFn::new("zero", 0, |_| 0.0);
        let sched = Schedule::new(vec![0.0, 0.1, 0.3]).unwrap();
        let rep = cylindrical_mlsi_sides(&b.p, &b.d, &b.q, &sched, &zero, 1.0, 0, &b.c).unwrap();
        assert!(rep.lhs.abs() < 1e-14);
        let id = CoordinateFn::from_kind(ObservableKind::Identity, 0, &b.p);
        let single = Schedule::new(vec![0.0]).unwrap();
        let rep = cylindrical_mlsi_sides(&b.p, &b.d, &b.q, &single, &id, 1.0, 2, &b.c).unwrap();
        assert!(rep.lhs.abs() < 1e-12);
    }

    #[test]
    fn cylindrical_small_lambda_is_second_order() {
        let b = bench();
        let id = CoordinateFn::from_kind(ObservableKind::Identity, 0, &b.p);
        let sched = Schedule::new(vec![0.0, 0.2, 0.5]).unwrap();
        let lambda = 1e-4;
        let rep = cylindrical_mlsi_sides(&b.p, &b.d, &b.q, &sched, &id, lambda, 1, &b.c).unwrap();
        let d_total = rep.rhs_components[0].1;
        let moment = rep.rhs_components[1].1;
        assert!(rep.lhs <= 1e-8 * d_total * moment * 1.01);
        assert!(rep.holds());
    }

    #[test]
    fn cylindrical_matches_brute_force() {
        let b = bench();
        let id = CoordinateFn::from_kind(ObservableKind::Identity, 1, &b.p);
        let h = id.tabulate(&b.p, &b.d).unwrap();
        let sched = Schedule::new(vec![0.0, 0.4, 1.0]).unwrap();
        let k1 = crate::semigroup::kernel(&b.q, 0.4).unwrap();
        let k2 = crate::semigroup::kernel(&b.q, 0.6).unwrap();
        let lambda = 0.5;
        let x0 = 0;
        let (mut m, mut e) = (0.0, 0.0);
        for y in 0..4 {
            for z in 0..4 {
                let w = k1.get(x0, y) * k2.get(y, z);
                let s = lambda * (h[x0] + h[y] + h[z]);
                m += w * s.exp();
                e += w * s.exp() * s;
            }
        }
        let rep = cylindrical_mlsi_sides(&b.p, &b.d, &b.q, &sched, &id, lambda, x0, &b.c).unwrap();
        assert!((rep.lhs - (e - m * m.ln())).abs() < 1e-12);
    }
}
