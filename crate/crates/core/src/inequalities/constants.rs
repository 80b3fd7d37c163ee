use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::{ModelConstants, NetworkParams};
use crate::semigroup::{RatioReport, Schedule};

/// Which form of the denominator-shift coefficient d(t) to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DVariant {
    /// 2 + 8t²M²C₁₁
    #[default]
    Statement,
    /// 2 + 4t²M²C₁₁²
    ProofFinal,
}

/// Theoretical constants of the modified log-Sobolev inequality and its
/// cylindrical extension, built from model constants and empirical kernel ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsiConstants {
    pub n_neurons: usize,
    pub big_m: f64,
    pub t0: f64,
    pub c11: f64,
    pub c12: f64,
    pub d_vis: f64,
    pub d_lip: f64,
    pub variant: DVariant,
}

impl MlsiConstants {
    pub fn new(model: &ModelConstants, ratios: &RatioReport, domain_size: usize, n_neurons: usize) -> Self {
        Self::from_parts(model, ratios.c11_hat, ratios.c12_hat, domain_size as f64, n_neurons)
    }

    pub fn from_parts(model: &ModelConstants, c11: f64, c12: f64, d_vis: f64, n_neurons: usize) -> Self {
        MlsiConstants {
            n_neurons,
            big_m: model.big_m,
            t0: model.t0_global,
            c11,
            c12,
            d_vis,
            d_lip: model.d_lip,
            variant: DVariant::Statement,
        }
    }

    pub fn with_variant(mut self, variant: DVariant) -> Self {
        self.variant = variant;
        self
    }

    /// c = 8 t₀² M
    pub fn c(&self) -> f64 {
        8.0 * self.t0 * self.t0 * self.big_m
    }

    /// C₁ = d_vis² (C₁₁² + C₁₂²)
    pub fn c1(&self) -> f64 {
        self.d_vis * self.d_vis * (self.c11 * self.c11 + self.c12 * self.c12)
    }

    pub fn c_of_t(&self, t: f64) -> f64 {
        let c1 = self.c1();
        4.0 * self.t0 * self.t0 * self.big_m * c1 + 2.0 * t * t * self.big_m * c1
    }

    pub fn d_statement(&self, t: f64) -> f64 {
        2.0 + 8.0 * t * t * self.big_m * self.big_m * self.c11
    }

    pub fn d_proof_final(&self, t: f64) -> f64 {
        2.0 + 4.0 * t * t * self.big_m * self.big_m * self.c11 * self.c11
    }

    pub fn d_of_t(&self, t: f64) -> f64 {
        match self.variant {
            DVariant::Statement => self.d_statement(t),
            DVariant::ProofFinal => self.d_proof_final(t),
        }
    }

    pub fn alpha_prime(&self, t: f64) -> f64 {
        2.0 * self.big_m * self.c_of_t(t) + 2.0 * self.d_of_t(t)
    }

    pub fn beta_prime(&self, t: f64) -> f64 {
        2.0 * (self.c() * self.big_m + 1.0) * self.d_of_t(t)
    }

    pub fn gamma_prime(&self, t: f64) -> f64 {
        2.0 * self.c() * self.big_m * self.d_of_t(t)
    }

    pub fn alpha(&self, t: f64) -> f64 {
        t * self.alpha_prime(t)
    }

    pub fn beta(&self, t: f64) -> f64 {
        t * self.beta_prime(t)
    }

    pub fn gamma(&self, t: f64) -> f64 {
        t * self.gamma_prime(t)
    }

    pub fn delta(&self, t: f64) -> f64 {
        self.alpha(t).max(self.beta(t)).max(self.gamma(t))
    }

    /// b₀ evaluated at gap `gap`.
    pub fn b0(&self, gap: f64) -> f64 {
        let c = self.c();
        let m = self.big_m;
        let d = self.d_of_t(gap);
        (2.0 + 2.0 * self.d_lip * self.d_lip * m * self.c_of_t(gap))
            .max(2.0 * c * m + 2.0 * d)
            .max(2.0 * c * m * d)
    }

    /// b_k = 3^k b₀(k)
    pub fn b(&self, k: usize, gap: f64) -> f64 {
        3f64.powi(k as i32) * self.b0(gap)
    }

    /// Σ_{r=1}^{k+1} (N d)^{r+4}
    pub fn chain_sum(&self, k: usize) -> f64 {
        let nd = self.n_neurons as f64 * self.d_lip;
        (1..=k + 1).map(|r| nd.powi(r as i32 + 4)).sum()
    }

    /// D(T) for a schedule, with t₀ := 0 so the first gap is zero.
    pub fn d_total(&self, sched: &Schedule) -> Result<f64> {
        let gaps = schedule_gaps(sched);
        let mut total = 0.0;
        for k in 1..=gaps.len() {
            let prev_gap = if k >= 2 { gaps[k - 2] } else { 0.0 };
            let term = 3.0 * self.delta(gaps[k - 1]) * self.b(k - 1, prev_gap) * self.chain_sum(k);
            if !term.is_finite() {
                return Err(PjmpError::ScheduleCondition {
                    k,
                    reason: format!("term of D(T) is not finite ({term})"),
                });
            }
            total += term;
        }
        if !total.is_finite() {
            return Err(PjmpError::ScheduleCondition {
                k: gaps.len(),
                reason: "D(T) overflows".into(),
            });
        }
        Ok(total)
    }

    pub fn summary(&self) -> String {
        format!(
            "M={:.6e};t0={:.6e};C11={:.6e};C12={:.6e};d_vis={};d={:.6e};d_form={}",
            self.big_m,
            self.t0,
            self.c11,
            self.c12,
            self.d_vis,
            self.d_lip,
            match self.variant {
                DVariant::Statement => "statement",
                DVariant::ProofFinal => "proof_final",
            }
        )
    }
}

/// Gaps Δ_k = t_k − t_{k−1} for k = 1..n with t₀ := 0.
pub fn schedule_gaps(sched: &Schedule) -> Vec<f64> {
    let mut gaps = vec![0.0];
    gaps.extend_from_slice(sched.gaps());
    gaps
}

/// Constants of the single-time concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropositionConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// δ(t)(D₁ + N D₂ + N² D₃)
    pub multiplier: f64,
}

pub fn proposition_constants(
    p: &NetworkParams,
    model: &ModelConstants,
    c: &MlsiConstants,
    t: f64,
) -> PropositionConstants {
    let n = p.n_neurons() as f64;
    let m = p.cap_f64();
    let w = p.max_weight();
    let pre = 2f64.powi(p.n_neurons() as i32 - 1) * model.big_m;
    let d1 = pre * n * (m + w).powi(2) * (2.0 * n * (m + w)).exp();
    let d2 = pre * (m + w).powi(2) * (2.0 * n * (m + 2.0 * w)).exp();
    let d3 = pre * (m + 2.0 * w).powi(2) * (2.0 * n * (m + 3.0 * w)).exp();
    PropositionConstants {
        d1,
        d2,
        d3,
        multiplier: c.delta(t) * (d1 + n * d2 + n * n * d3),
    }
}
