use serde::{Deserialize, Serialize};

use super::{
    check_dim, check_positive, entropy, ratio_or_zero, row_dot, InequalityReport, MlsiConstants,
    ReportMeta,
};
use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::observable::{CoordinateFn, Shape};
use crate::semigroup::kernel;
use crate::statespace::{RateMatrix, StateSpace};

fn check_times(t: f64, s: f64) -> Result<()> {
    if !(s >= 0.0 && s <= t) {
        return Err(PjmpError::InvalidSchedule(format!("need 0 <= s <= t, got s={s}, t={t}")));
    }
    Ok(())
}

/// Γ(P_{t−s}f)(x) against
/// 2Γ(f)(x) + 2c Σ_i φ(x^i) Γ(f)(Δ_i x) + 2M c(t−s) P_{t−s}(Γ(f)/f)(x) P_{t−s}f(x),
/// one report per x ∈ D. The extracted constant is the smallest θ with
/// LHS ≤ 2Γ(f)(x) + θ (Σ_i φ(x^i) Γ(f)(Δ_i x) + P_{t−s}(Γ(f)/f)(x) P_{t−s}f(x)).
pub fn sweeping_out_check(
    space: &StateSpace,
    q: &RateMatrix,
    f: &[f64],
    t: f64,
    s: f64,
    c: &MlsiConstants,
) -> Result<Vec<InequalityReport>> {
    check_times(t, s)?;
    check_dim(space, f)?;
    check_positive(f)?;
    let r = t - s;
    let k = kernel(q, r)?;
    let pf = k.apply(f);
    let gamma_pf = space.carre_du_champ(&pf);
    let gamma = space.carre_du_champ(f);
    let gamma_over_f: Vec<f64> = gamma.iter().zip(f).map(|(a, b)| a / b).collect();
    let c0 = c.c();
    let ct = c.c_of_t(r);
    (0..space.len())
        .map(|x| {
            let lhs = gamma_pf[x];
            let own = 2.0 * gamma[x];
            let shifted: f64 = (0..space.n_neurons())
                .map(|i| space.spike_rate(x, i) * gamma[space.target(i, x)])
                .sum();
            let carried = row_dot(&k, x, &gamma_over_f) * pf[x];
            let rhs = own + 2.0 * c0 * shifted + 2.0 * c.big_m * ct * carried;
            let meta = ReportMeta {
                t,
                s: Some(s),
                x_index: x,
                ..Default::default()
            };
            let mut rep = InequalityReport::new("sweep", lhs, rhs, meta, c.summary())
                .component("two_gamma", own)
                .component("shifted_gamma", shifted)
                .component("carried", carried);
            rep.constant_extracted =
                Some(ratio_or_zero((lhs - own).max(0.0), shifted + carried, "sweep")?);
            Ok(rep)
        })
        .collect()
}

/// P_s(g/P_{t−s}f)(x) against d(t−s)[P_t(g/f)(x) + Σ_j P_t(g∘Δ_j/f)(x)], one
/// report per x ∈ D; the extracted constant is the minimal d.
pub fn denominator_shift_check(
    space: &StateSpace,
    q: &RateMatrix,
    g: &[f64],
    f: &[f64],
    t: f64,
    s: f64,
    c: &MlsiConstants,
) -> Result<Vec<InequalityReport>> {
    check_times(t, s)?;
    check_dim(space, f)?;
    check_dim(space, g)?;
    check_positive(f)?;
    if let Some(state) = g.iter().position(|v| *v < 0.0) {
        return Err(PjmpError::NonPositive {
            state,
            value: g[state],
        });
    }
    let ks = kernel(q, s)?;
    let kr = kernel(q, t - s)?;
    let kt = kernel(q, t)?;
    let pf = kr.apply(f);
    let inner: Vec<f64> = g.iter().zip(&pf).map(|(a, b)| a / b).collect();
    let g_over_f: Vec<f64> = g.iter().zip(f).map(|(a, b)| a / b).collect();
    let mut shifted = vec![0.0; space.len()];
    for j in 0..space.n_neurons() {
        for (y, acc) in shifted.iter_mut().enumerate() {
            *acc += g[space.target(j, y)] / f[y];
        }
    }
    let d = c.d_of_t(t - s);
    (0..space.len())
        .map(|x| {
            let lhs = row_dot(&ks, x, &inner);
            let direct = row_dot(&kt, x, &g_over_f);
            let moved = row_dot(&kt, x, &shifted);
            let meta = ReportMeta {
                t,
                s: Some(s),
                x_index: x,
                ..Default::default()
            };
            let mut rep = InequalityReport::new("denom", lhs, d * (direct + moved), meta, c.summary())
                .component("d", d)
                .component("direct", direct)
                .component("shifted", moved);
            rep.constant_extracted = Some(ratio_or_zero(lhs, direct + moved, "denom")?);
            Ok(rep)
        })
        .collect()
}

/// How much Γ(f,f) can grow along one or two jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftRatios {
    /// max over x, j of Γ(f)(Δ_j x) / Γ(f)(x), with 0/0 → 0.
    pub r_hat: f64,
    pub argmax: (usize, usize),
    /// max over x, i, j of Γ(f)(Δ_i Δ_j x) / Γ(f)(x).
    pub two_jump: f64,
}

fn quotient(num: f64, den: f64) -> f64 {
    const ZERO: f64 = 1e-300;
    if den > ZERO {
        num / den
    } else if num <= ZERO {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn shift_ratios(space: &StateSpace, f: &[f64]) -> Result<ShiftRatios> {
    check_dim(space, f)?;
    let gamma = space.carre_du_champ(f);
    let n = space.n_neurons();
    let mut out = ShiftRatios {
        r_hat: 0.0,
        argmax: (0, 0),
        two_jump: 0.0,
    };
    for x in 0..space.len() {
        for j in 0..n {
            let y = space.target(j, x);
            let r = quotient(gamma[y], gamma[x]);
            if r > out.r_hat {
                out.r_hat = r;
                out.argmax = (x, j);
            }
            for i in 0..n {
                out.two_jump = out.two_jump.max(quotient(gamma[space.target(i, y)], gamma[x]));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub t: f64,
    pub function_id: String,
    pub shape: Shape,
    /// Smallest ζ with entropy ≤ ζ P_t(Γ(f)/f) at every x.
    pub zeta_hat: f64,
    /// δ(t)(1 + N R + N² R²) with R = R_hat.
    pub zeta_theory: f64,
    pub ratios: ShiftRatios,
    pub reports: Vec<InequalityReport>,
}

/// Single-bracket form of the inequality for f(x) = f_i(x^i).
pub fn corollary_sides(
    p: &NetworkParams,
    space: &StateSpace,
    q: &RateMatrix,
    fi: &CoordinateFn,
    t: f64,
    c: &MlsiConstants,
) -> Result<CorollaryReport> {
    if p.equal_weights().is_none() {
        return Err(PjmpError::Unsupported(
            "the single-bracket form needs equal off-diagonal weights".into(),
        ));
    }
    let shape = fi.shape(p);
    if shape == Shape::Other {
        return Err(PjmpError::Observable(format!(
            "{} is neither decreasing-convex nor increasing-concave on the value set",
            fi.id()
        )));
    }
    let f = fi.tabulate(p, space)?;
    check_positive(&f)?;
    let k = kernel(q, t)?;
    let gamma = space.carre_du_champ(&f);
    let gamma_over_f: Vec<f64> = gamma.iter().zip(&f).map(|(a, b)| a / b).collect();
    let ratios = shift_ratios(space, &f)?;
    let n = p.n_neurons() as f64;
    let r = ratios.r_hat;
    let zeta_theory = c.delta(t) * (1.0 + n * r + n * n * r * r);

    let mut sides = Vec::with_capacity(space.len());
    let mut zeta_hat: f64 = 0.0;
    for x in 0..space.len() {
        let lhs = entropy(&k, &f, x)?;
        let bracket = row_dot(&k, x, &gamma_over_f);
        zeta_hat = zeta_hat.max(ratio_or_zero(lhs, bracket, fi.id())?);
        sides.push((lhs, bracket));
    }
    let reports = sides
        .into_iter()
        .enumerate()
        .map(|(x, (lhs, bracket))| {
            let meta = ReportMeta {
                t,
                x_index: x,
                function_id: fi.id().to_string(),
                ..Default::default()
            };
            let mut rep = InequalityReport::new("corollary", lhs, zeta_hat * bracket, meta, format!("zeta_hat={zeta_hat:.6e}"))
                .component("zeta_hat", zeta_hat)
                .component("bracket", bracket)
                .component("zeta_theory_rhs", zeta_theory * bracket);
            rep.constant_extracted = Some(zeta_hat);
            rep
        })
        .collect();
    Ok(CorollaryReport {
        t,
        function_id: fi.id().to_string(),
        shape,
        zeta_hat,
        zeta_theory,
        ratios,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lambda: f64,
    pub d: f64,
    pub max_chain_len: usize,
    pub reports: Vec<InequalityReport>,
    /// Human-readable witnesses of every failed instance.
    pub violations: Vec<String>,
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// e^{λf(Δ_{j_1}⋯Δ_{j_k}x)} ≤ d^k e^{λf(x)} for chains up to `max_chain_len`,
/// and Γ(e^{λf})(Δ_j x) ≤ λ² d e^{2λf(x)}, over all x ∈ D.
pub fn lipschitz_exp_bounds(
    p: &NetworkParams,
    space: &StateSpace,
    fi: &CoordinateFn,
    lambda: f64,
    d: f64,
    max_chain_len: usize,
) -> Result<LipschitzReport> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(PjmpError::InvalidConfig(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    fi.check_lipschitz(p)?;
    let f = fi.tabulate(p, space)?;
    let ef: Vec<f64> = f.iter().map(|v| (lambda * v).exp()).collect();
    let gamma_ef = space.carre_du_champ(&ef);
    let n = space.n_neurons();
    let mut reports = Vec::new();
    let mut violations = Vec::new();
    let meta = |x: usize| ReportMeta {
        x_index: x,
        function_id: fi.id().to_string(),
        lambda: Some(lambda),
        ..Default::default()
    };
    for x in 0..space.len() {
        let mut frontier = vec![x];
        for k in 0..=max_chain_len {
            if k > 0 {
                frontier = frontier
                    .iter()
                    .flat_map(|&y| (0..n).map(move |j| (y, j)))
                    .map(|(y, j)| space.target(j, y))
                    .collect();
                frontier.sort_unstable();
                frontier.dedup();
            }
            let lhs = frontier.iter().map(|&y| ef[y]).fold(f64::NEG_INFINITY, f64::max);
            let rhs = d.powi(k as i32) * ef[x];
            let rep = InequalityReport::new(&format!("lemma31_chain{k}"), lhs, rhs, meta(x), format!("d={d:.6e}"));
            if !rep.holds() {
                violations.push(format!("chain k={k} from state {x}: {lhs:e} > {rhs:e}"));
            }
            reports.push(rep);
        }
        for j in 0..n {
            let lhs = gamma_ef[space.target(j, x)];
            let rhs = lambda * lambda * d * ef[x] * ef[x];
            let rep = InequalityReport::new(&format!("lemma31_gamma_j{j}"), lhs, rhs, meta(x), format!("d={d:.6e}"));
            if !rep.holds() {
                violations.push(format!("gamma bound, state {x}, neuron {j}: {lhs:e} > {rhs:e}"));
            }
            reports.push(rep);
        }
    }
    Ok(LipschitzReport {
        lambda,
        d,
        max_chain_len,
        reports,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::bench;
    use super::*;
    use crate::model::fixtures::*;
    use crate::observable::ObservableKind;

    #[test]
    fn sweep_trivial_and_benchmark() {
        let b = bench();
        let constant = vec![3.0; 4];
        for rep in sweeping_out_check(&b.d, &b.q, &constant, 1.0, 0.5, &b.c).unwrap() {
            assert!(rep.lhs.abs() < 1e-24 && rep.rhs.abs() < 1e-24);
        }
        let f = b.d.tabulate(|x| (0.5 * x.get(0) as f64).exp());
        let gamma = b.d.carre_du_champ(&f);
        for rep in sweeping_out_check(&b.d, &b.q, &f, 1.0, 1.0, &b.c).unwrap() {
            assert!((rep.lhs - gamma[rep.meta.x_index]).abs() < 1e-15);
            assert!(rep.slack >= gamma[rep.meta.x_index] - 1e-12);
        }
        for rep in sweeping_out_check(&b.d, &b.q, &f, 1.0, 0.5, &b.c).unwrap() {
            assert!(rep.holds(), "{rep:?}");
        }
        assert!(sweeping_out_check(&b.d, &b.q, &f, 1.0, 2.0, &b.c).is_err());
    }

    #[test]
    fn denominator_shift_trivial_and_benchmark() {
        let b = bench();
        let ones = vec![1.0; 4];
        for rep in denominator_shift_check(&b.d, &b.q, &ones, &ones, 1.0, 0.3, &b.c).unwrap() {
            assert!((rep.lhs - 1.0).abs() < 1e-12);
            assert!((rep.rhs - b.c.d_of_t(0.7) * 3.0).abs() < 1e-9);
        }
        let zeros = vec![0.0; 4];
        for rep in denominator_shift_check(&b.d, &b.q, &zeros, &ones, 1.0, 0.3, &b.c).unwrap() {
            assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));
        }
        let f = b.d.tabulate(|x| (0.5 * x.get(0) as f64).exp());
        let g = b.d.carre_du_champ(&f);
        for rep in denominator_shift_check(&b.d, &b.q, &g, &f, 1.0, 0.3, &b.c).unwrap() {
            assert!(rep.holds());
        }
    }

    #[test]
    fn corollary_exp_neg_ratios() {
        let b = bench();
        let fi = CoordinateFn::from_kind(ObservableKind::ExpNeg, 0, &b.p);
        let rep = corollary_sides(&b.p, &b.d, &b.q, &fi, 0.5, &b.c).unwrap();
        assert_eq!(rep.shape, Shape::DecreasingConvex);
        assert!(rep.ratios.r_hat.is_finite());
        assert!(rep.ratios.two_jump <= rep.ratios.r_hat.powi(2) + 1e-9);
        assert!(rep.reports.iter().all(|r| r.slack >= -1e-10));
    }

    #[test]
    fn corollary_constant_and_rejections() {
        let b = bench();
        let fi = CoordinateFn::new("two", 0, |_| 2.0);
        let rep = corollary_sides(&b.p, &b.d, &b.q, &fi, 1.0, &b.c).unwrap();
        assert!(rep.reports.iter().all(|r| r.lhs.abs() < 1e-12 && r.rhs == 0.0));
        let sq = CoordinateFn::new("sq", 0, |v| 1.0 + v * v);
        assert!(corollary_sides(&b.p, &b.d, &b.q, &sq, 1.0, &b.c).is_err());

        let weights = vec![vec![ri(0), ri(1)], vec![ri(2), ri(0)]];
        let p = NetworkParams::new(
            2,
            ri(3),
            weights,
            crate::model::IntensitySpec::Affine { a: ri(1), b: ri(1) },
            ri(1),
        )
        .unwrap();
        let d = crate::statespace::invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let q = crate::statespace::build_rate_matrix(&d, &p).unwrap();
        let fi = CoordinateFn::from_kind(ObservableKind::ExpNeg, 0, &p);
        assert!(matches!(
            corollary_sides(&p, &d, &q, &fi, 1.0, &b.c),
            Err(PjmpError::Unsupported(_))
        ));
    }

    #[test]
    fn lipschitz_bounds_on_benchmark() {
        let b = bench();
        let fi = CoordinateFn::from_kind(ObservableKind::Identity, 0, &b.p);
        for lambda in [0.25, 0.5, 1.0] {
            let rep = lipschitz_exp_bounds(&b.p, &b.d, &fi, lambda, b.mc.d_lip, 3).unwrap();
            assert!(rep.holds(), "{:?}", rep.violations);
            // the empty chain is an identity
            for r in rep.reports.iter().filter(|r| r.name == "lemma31_chain0") {
                assert_eq!(r.lhs, r.rhs);
            }
        }
        let constant = CoordinateFn::new("c", 1, |_| 0.5);
        assert!(lipschitz_exp_bounds(&b.p, &b.d, &constant, 1.0, b.mc.d_lip, 3).unwrap().holds());
        let steep = CoordinateFn::new("steep", 0, |v| 3.0 * v);
        assert!(lipschitz_exp_bounds(&b.p, &b.d, &steep, 1.0, b.mc.d_lip, 3).is_err());
        assert!(lipschitz_exp_bounds(&b.p, &b.d, &fi, 1.5, b.mc.d_lip, 3).is_err());
    }

    #[test]
    fn lipschitz_violation_is_reported() {
        let b = bench();
        let fi = CoordinateFn::from_kind(ObservableKind::Identity, 0, &b.p);
        let rep = lipschitz_exp_bounds(&b.p, &b.d, &fi, 1.0, 1.0, 2).unwrap();
        assert!(!rep.holds());
    }
}
