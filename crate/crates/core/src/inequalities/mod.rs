//! Both sides of the modified log-Sobolev inequality and its supporting
//! bounds, evaluated exactly on the invariant domain.

mod constants;
mod cylindrical;
mod lemmas;

pub use constants::{proposition_constants, schedule_gaps, DVariant, MlsiConstants, PropositionConstants};
pub use cylindrical::{
    cylindrical_mlsi_sides, schedule_builder, ConditionReport, ScheduleBuild, DEFAULT_DECAY_BASE,
};
pub use lemmas::{
    corollary_sides, denominator_shift_check, lipschitz_exp_bounds, shift_ratios,
    sweeping_out_check, CorollaryReport, LipschitzReport, ShiftRatios,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::semigroup::{kernel, Kernel};
use crate::statespace::{RateMatrix, StateSpace};

/// Tolerance on slacks computed with fitted constants.
pub const FITTED_SLACK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub t: f64,
    pub s: Option<f64>,
    pub x_index: usize,
    pub function_id: String,
    pub lambda: Option<f64>,
}

/// One evaluated instance of an inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs_components: Vec<(String, f64)>,
    pub rhs: f64,
    pub slack: f64,
    pub constant_extracted: Option<f64>,
    pub meta: ReportMeta,
    pub constants_used: String,
}

impl InequalityReport {
    fn new(name: &str, lhs: f64, rhs: f64, meta: ReportMeta, constants_used: String) -> Self {
        InequalityReport {
            name: name.to_string(),
            lhs,
            rhs_components: Vec::new(),
            rhs,
            slack: rhs - lhs,
            constant_extracted: None,
            meta,
            constants_used,
        }
    }

    fn component(mut self, name: &str, value: f64) -> Self {
        self.rhs_components.push((name.to_string(), value));
        self
    }

    pub fn holds(&self) -> bool {
        self.slack >= 0.0
    }
}

/// A positive test function tabulated on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub values: Vec<f64>,
}

pub(crate) fn check_positive(f: &[f64]) -> Result<()> {
    match f.iter().position(|v| !(*v > 0.0)) {
        Some(state) => Err(PjmpError::NonPositive {
            state,
            value: f[state],
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_dim(space: &StateSpace, f: &[f64]) -> Result<()> {
    if f.len() != space.len() {
        return Err(PjmpError::DimensionMismatch {
            expected: space.len(),
            got: f.len(),
        });
    }
    Ok(())
}

pub(crate) fn row_dot(k: &Kernel, x: usize, v: &[f64]) -> f64 {
    k.matrix().row(x).iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Ent_{P_t}(f)(x) = P_t(f log f)(x) − P_t f(x) log P_t f(x).
pub fn entropy(k: &Kernel, f: &[f64], x: usize) -> Result<f64> {
    if f.len() != k.dim() {
        return Err(PjmpError::DimensionMismatch {
            expected: k.dim(),
            got: f.len(),
        });
    }
    check_positive(f)?;
    let flogf: Vec<f64> = f.iter().map(|v| v * v.ln()).collect();
    let pf = row_dot(k, x, f);
    Ok(row_dot(k, x, &flogf) - pf * pf.ln())
}

/// Γ(f,f)/f, Σ_j Γ(f,f)∘Δ_j / f and Σ_{i,j} Γ(f,f)∘Δ_i∘Δ_j / f as state vectors.
pub(crate) struct GammaTerms {
    pub own: Vec<f64>,
    pub one_jump: Vec<f64>,
    pub two_jumps: Vec<f64>,
}

pub(crate) fn gamma_terms(space: &StateSpace, f: &[f64]) -> GammaTerms {
    let gamma = space.carre_du_champ(f);
    let n = space.n_neurons();
    let mut one = vec![0.0; space.len()];
    let mut two = vec![0.0; space.len()];
    for s in 0..space.len() {
        for j in 0..n {
            let y = space.target(j, s);
            one[s] += gamma[y];
            for i in 0..n {
                two[s] += gamma[space.target(i, y)];
            }
        }
    }
    let div = |v: Vec<f64>| v.into_iter().zip(f).map(|(a, b)| a / b).collect();
    GammaTerms {
        own: div(gamma),
        one_jump: div(one),
        two_jumps: div(two),
    }
}

fn mlsi_brackets(k: &Kernel, terms: &GammaTerms, x: usize) -> [f64; 3] {
    [
        row_dot(k, x, &terms.own),
        row_dot(k, x, &terms.one_jump),
        row_dot(k, x, &terms.two_jumps),
    ]
}

/// Entropy against δ(t)[P_t(Γ/f) + Σ_j P_t(Γ∘Δ_j/f) + Σ_{i,j} P_t(Γ∘Δ_i∘Δ_j/f)].
pub fn mlsi_sides(
    space: &StateSpace,
    k: &Kernel,
    probe: &Probe,
    x: usize,
    c: &MlsiConstants,
) -> Result<InequalityReport> {
    mlsi_sides_with(space, k, probe, x, c.delta(k.t()), c.summary())
}

/// As [`mlsi_sides`] with an explicit multiplier in place of δ(t).
pub fn mlsi_sides_with(
    space: &StateSpace,
    k: &Kernel,
    probe: &Probe,
    x: usize,
    delta: f64,
    constants_used: String,
) -> Result<InequalityReport> {
    check_dim(space, &probe.values)?;
    let lhs = entropy(k, &probe.values, x)?;
    let terms = gamma_terms(space, &probe.values);
    let [b0, b1, b2] = mlsi_brackets(k, &terms, x);
    let meta = ReportMeta {
        t: k.t(),
        x_index: x,
        function_id: probe.id.clone(),
        ..Default::default()
    };
    let bracket = b0 + b1 + b2;
    let mut report = InequalityReport::new("mlsi", lhs, delta * bracket, meta, constants_used)
        .component("delta", delta)
        .component("gamma", b0)
        .component("gamma_one_jump", b1)
        .component("gamma_two_jumps", b2);
    report.constant_extracted = Some(ratio_or_zero(lhs, bracket, "mlsi")?);
    Ok(report)
}

/// lhs / rhs with 0/0 → 0; a positive numerator over a zero bracket is a form violation.
pub(crate) fn ratio_or_zero(lhs: f64, bracket: f64, what: &str) -> Result<f64> {
    const ZERO: f64 = 1e-14;
    if bracket > ZERO {
        Ok((lhs / bracket).max(0.0))
    } else if lhs <= ZERO {
        Ok(0.0)
    } else {
        Err(PjmpError::FormViolation(format!(
            "{what}: left side {lhs:e} is positive while the right bracket vanishes"
        )))
    }
}

/// Sharp constant over a probe family with its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinConstant {
    pub t: f64,
    pub value: f64,
    pub function_id: Option<String>,
    pub x_index: Option<usize>,
}

/// δ*(t) = max over the family and x ∈ D of entropy / bracket.
pub fn mlsi_min_constant(space: &StateSpace, k: &Kernel, family: &[Probe]) -> Result<MinConstant> {
    if family.is_empty() {
        return Err(PjmpError::InvalidConfig("probe family is empty".into()));
    }
    let mut best = MinConstant {
        t: k.t(),
        value: 0.0,
        function_id: None,
        x_index: None,
    };
    for probe in family {
        check_dim(space, &probe.values)?;
        let terms = gamma_terms(space, &probe.values);
        for x in 0..space.len() {
            let lhs = entropy(k, &probe.values, x)?;
            let bracket: f64 = mlsi_brackets(k, &terms, x).iter().sum();
            let r = ratio_or_zero(lhs, bracket, &probe.id)?;
            if r > best.value {
                best.value = r;
                best.function_id = Some(probe.id.clone());
                best.x_index = Some(x);
            }
        }
    }
    Ok(best)
}

/// δ*(t) over a time grid, evaluated in parallel and returned in grid order.
pub fn delta_star_curve(
    space: &StateSpace,
    q: &RateMatrix,
    family: &[Probe],
    t_grid: &[f64],
) -> Result<Vec<MinConstant>> {
    t_grid
        .par_iter()
        .map(|t| mlsi_min_constant(space, &kernel(q, *t)?, family))
        .collect()
}

pub const PROBE_LAMBDAS: [f64; 6] = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0];
pub const RANDOM_PROBES: usize = 50;

/// exp(λ x^i) for each neuron and λ in [`PROBE_LAMBDAS`], 1 + Σ_i x^i, and
/// [`RANDOM_PROBES`] seeded vectors uniform on [0.1, 10].
pub fn probe_family(p: &NetworkParams, space: &StateSpace, seed: u64) -> Vec<Probe> {
    let mut out = Vec::new();
    for i in 0..p.n_neurons() {
        for lambda in PROBE_LAMBDAS {
            out.push(Probe {
                id: format!("exp({lambda}*x{i})"),
                values: space.tabulate(|x| (lambda * p.potential_f64(x.get(i))).exp()),
            });
        }
    }
    out.push(Probe {
        id: "1+sum".into(),
        values: space.tabulate(|x| {
            1.0 + x.potentials().iter().map(|v| p.potential_f64(*v)).sum::<f64>()
        }),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..RANDOM_PROBES {
        out.push(Probe {
            id: format!("random{r}"),
            values: (0..space.len()).map(|_| 0.1 + 9.9 * rng.random::<f64>()).collect(),
        });
    }
    out
}

/// Least-squares fit y ≈ a₁t + a₂t² + a₃t³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicFit {
    pub coeffs: [f64; 3],
    /// ‖residual‖₂ / ‖y‖₂
    pub rel_residual: f64,
}

impl CubicFit {
    pub fn eval(&self, t: f64) -> f64 {
        let [a1, a2, a3] = self.coeffs;
        t * (a1 + t * (a2 + t * a3))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let [a1, a2, a3] = self.coeffs;
        a1 + t * (2.0 * a2 + 3.0 * t * a3)
    }
}

pub fn fit_cubic_through_origin(ts: &[f64], ys: &[f64]) -> Result<CubicFit> {
    if ts.len() != ys.len() || ts.len() < 3 {
        return Err(PjmpError::InvalidConfig(
            "cubic fit needs at least three paired points".into(),
        ));
    }
    let a = DMatrix::from_fn(ts.len(), 3, |r, c| ts[r].powi(c as i32 + 1));
    let b = DVector::from_column_slice(ys);
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| PjmpError::SingularSolve(e.to_string()))?;
    let resid = (&a * &sol - &b).norm();
    let scale = b.norm();
    Ok(CubicFit {
        coeffs: [sol[0], sol[1], sol[2]],
        rel_residual: if scale > 0.0 { resid / scale } else { resid },
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::model::fixtures::*;
    use crate::model::{model_constants, ModelConstants, NetworkParams};
    use crate::semigroup::{kernel_ratios, RatioReport};
    use crate::statespace::{build_rate_matrix, invariant_domain, invariant_measure, RateMatrix, StateSpace};

    use super::MlsiConstants;

    pub struct Bench {
        pub p: NetworkParams,
        pub d: StateSpace,
        pub q: RateMatrix,
        pub mc: ModelConstants,
        pub ratios: RatioReport,
        pub c: MlsiConstants,
    }

    pub fn bench() -> Bench {
        let p = benchmark();
        let d = invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = build_rate_matrix(&d, &p).unwrap();
        let mu = invariant_measure(&q).unwrap();
        let mc = model_constants(&p, &d).unwrap();
        let grid = [0.05, 0.25, 0.5, 1.0, 2.0, 5.0];
        let ratios = kernel_ratios(&q, &d, mc.t0_global, mu.min_mass(), &grid, 16).unwrap();
        let c = MlsiConstants::new(&mc, &ratios, d.len(), 2);
        Bench { p, d, q, mc, ratios, c }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::bench;
    use super::*;

    #[test]
    fn constants_follow_ratio_report() {
        let b = bench();
        assert!(b.ratios.c11_hat.is_finite() && b.ratios.c12_hat.is_finite());
        assert_eq!(b.c.c11, b.ratios.c11_hat);
        assert_eq!(b.c.c12, b.ratios.c12_hat);
        assert_eq!(b.c.c1(), 16.0 * (b.c.c11 * b.c.c11 + b.c.c12 * b.c.c12));
    }

    fn exp_probe(b: &testutil::Bench, lambda: f64) -> Probe {
        Probe {
            id: "exp".into(),
            values: b.d.tabulate(|x| (lambda * x.get(0) as f64).exp()),
        }
    }

    #[test]
    fn entropy_of_constant_vanishes() {
        let b = bench();
        let k = kernel(&b.q, 0.8).unwrap();
        for x in 0..b.d.len() {
            assert!(entropy(&k, &[2.5; 4], x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_is_homogeneous_and_nonnegative() {
        let b = bench();
        let k = kernel(&b.q, 0.5).unwrap();
        let f = exp_probe(&b, 1.0).values;
        let scaled: Vec<f64> = f.iter().map(|v| 3.0 * v).collect();
        for x in 0..b.d.len() {
            let e = entropy(&k, &f, x).unwrap();
            assert!(e >= 0.0);
            assert!((entropy(&k, &scaled, x).unwrap() - 3.0 * e).abs() < 1e-12);
        }
        assert!(matches!(
            entropy(&k, &[1.0, 0.0, 1.0, 1.0], 0),
            Err(PjmpError::NonPositive { state: 1, .. })
        ));
    }

    #[test]
    fn entropy_matches_direct_sum() {
        let b = bench();
        let k = kernel(&b.q, 1.0).unwrap();
        let f = exp_probe(&b, 1.0).values;
        let x = b.d.index_of(&crate::model::fixtures::cfg(&b.p, &[0, 1])).unwrap();
        let row = k.row(x);
        let mean: f64 = row.iter().zip(&f).map(|(a, v)| a * v).sum();
        let direct: f64 = row
            .iter()
            .zip(&f)
            .map(|(a, v)| a * v * (v / mean).ln())
            .sum();
        assert!((entropy(&k, &f, x).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn mlsi_trivial_cases() {
        let b = bench();
        let constant = Probe {
            id: "c".into(),
            values: vec![2.0; 4],
        };
        let k = kernel(&b.q, 1.0).unwrap();
        let r = mlsi_sides(&b.d, &k, &constant, 0, &b.c).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs == 0.0);
        let k0 = kernel(&b.q, 0.0).unwrap();
        let r = mlsi_sides(&b.d, &k0, &exp_probe(&b, 0.5), 1, &b.c).unwrap();
        assert!(r.lhs.abs() < 1e-15 && r.rhs == 0.0);
    }

    #[test]
    fn mlsi_holds_with_fitted_constant() {
        let b = bench();
        let probe = exp_probe(&b, 0.5);
        for t in [0.25, 0.5, 1.0, 2.0] {
            let k = kernel(&b.q, t).unwrap();
            let star = mlsi_min_constant(&b.d, &k, std::slice::from_ref(&probe)).unwrap();
            for x in 0..b.d.len() {
                let r = mlsi_sides_with(&b.d, &k, &probe, x, star.value, "fitted".into()).unwrap();
                assert!(r.slack >= -FITTED_SLACK_TOL);
                assert!(mlsi_sides(&b.d, &k, &probe, x, &b.c).unwrap().holds());
            }
        }
    }

    #[test]
    fn min_constant_trivial_cases() {
        let b = bench();
        let constants = vec![Probe {
            id: "c".into(),
            values: vec![1.0; 4],
        }];
        let k = kernel(&b.q, 1.0).unwrap();
        assert_eq!(mlsi_min_constant(&b.d, &k, &constants).unwrap().value, 0.0);
        let family = probe_family(&b.p, &b.d, 7);
        let k0 = kernel(&b.q, 0.0).unwrap();
        assert_eq!(mlsi_min_constant(&b.d, &k0, &family).unwrap().value, 0.0);
        assert!(mlsi_min_constant(&b.d, &k, &[]).is_err());
    }

    #[test]
    fn probe_family_shape() {
        let b = bench();
        let fam = probe_family(&b.p, &b.d, 11);
        assert_eq!(fam.len(), 2 * PROBE_LAMBDAS.len() + 1 + RANDOM_PROBES);
        assert!(fam.iter().all(|p| p.values.iter().all(|v| *v > 0.0)));
        assert_eq!(fam, probe_family(&b.p, &b.d, 11));
        assert_ne!(fam, probe_family(&b.p, &b.d, 12));
    }

    #[test]
    fn cubic_fit_recovers_polynomial() {
        let ts: Vec<f64> = (1..=30).map(|k| 0.1 * k as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t - 0.5 * t * t + 0.25 * t * t * t).collect();
        let fit = fit_cubic_through_origin(&ts, &ys).unwrap();
        for (a, b) in fit.coeffs.iter().zip([2.0, -0.5, 0.25]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(fit.rel_residual < 1e-12);
        assert_eq!(fit.eval(0.0), 0.0);
        assert!((fit.derivative(0.0) - 2.0).abs() < 1e-10);
        assert!(fit_cubic_through_origin(&ts[..2], &ys[..2]).is_err());
    }

    #[test]
    fn ratio_zero_over_zero() {
        assert_eq!(ratio_or_zero(0.0, 0.0, "x").unwrap(), 0.0);
        assert!(ratio_or_zero(1.0, 0.0, "x").is_err());
        assert_eq!(ratio_or_zero(1.0, 4.0, "x").unwrap(), 0.25);
    }
}
