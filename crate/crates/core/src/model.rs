//! Network parameters, configurations, the jump maps, the generator and
//! the carré du champ.
//!
//! Potentials, weights and the cap are rationals that share one common
//! denominator. Configurations store potentials as integers over that
//! denominator so that state identity is exact.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::statespace::StateSpace;

pub type Rational = Ratio<i128>;

/// Parses `"p/q"`, `"p"` or a decimal such as `"0.25"`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || PjmpError::InvalidParams(format!("cannot parse rational {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: i128 = p.trim().parse().map_err(|_| bad())?;
        let q: i128 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(PjmpError::InvalidParams(format!("zero denominator in {s:?}")));
        }
        return Ok(Ratio::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.starts_with('-');
        let int_part: i128 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let den = 10i128.pow(frac.len() as u32);
        let num: i128 = frac.parse().map_err(|_| bad())?;
        let frac_part = Ratio::new(num, den);
        let whole = Ratio::from_integer(int_part.abs()) + frac_part;
        return Ok(if neg { -whole } else { whole });
    }
    s.parse::<i128>().map(Ratio::from_integer).map_err(|_| bad())
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

/// JSON value for a rational: either an integer or a string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RationalRepr {
    Int(i64),
    Str(String),
}

impl RationalRepr {
    fn parse(&self) -> Result<Rational> {
        match self {
            RationalRepr::Int(v) => Ok(Ratio::from_integer(*v as i128)),
            RationalRepr::Str(s) => parse_rational(s),
        }
    }

    fn from_rational(r: &Rational) -> Self {
        match (r.is_integer(), r.numer().to_i64()) {
            (true, Some(v)) => RationalRepr::Int(v),
            _ => RationalRepr::Str(format_rational(r)),
        }
    }
}

/// Intensity function φ of a single coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensitySpec {
    Constant { rate: Rational },
    /// φ(v) = a + b·v
    Affine { a: Rational, b: Rational },
    /// Explicit rates at potential values.
    Table { rates: BTreeMap<Rational, Rational> },
}

impl IntensitySpec {
    pub fn eval(&self, v: &Rational) -> Option<Rational> {
        match self {
            IntensitySpec::Constant { rate } => Some(*rate),
            IntensitySpec::Affine { a, b } => Some(a + b * v),
            IntensitySpec::Table { rates } => rates.get(v).copied(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum IntensityRepr {
    Constant {
        rate: RationalRepr,
    },
    Affine {
        a: RationalRepr,
        b: RationalRepr,
    },
    Table {
        rates: BTreeMap<String, RationalRepr>,
    },
}

/// Serialized form of [`NetworkParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n_neurons: usize,
    pub cap: RationalRepr,
    pub weights: Vec<Vec<RationalRepr>>,
    intensity: IntensityRepr,
    pub delta: RationalRepr,
}

/// Validated parameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec", into = "NetworkSpec")]
pub struct NetworkParams {
    n_neurons: usize,
    cap: Rational,
    weights: Vec<Vec<Rational>>,
    intensity: IntensitySpec,
    delta: Rational,
    scale: i64,
    cap_scaled: i64,
    weights_scaled: Vec<Vec<i64>>,
}

impl TryFrom<NetworkSpec> for NetworkParams {
    type Error = PjmpError;

    fn try_from(spec: NetworkSpec) -> Result<Self> {
        let cap = spec.cap.parse()?;
        let delta = spec.delta.parse()?;
        let weights = spec
            .weights
            .iter()
            .map(|row| row.iter().map(RationalRepr::parse).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let intensity = match &spec.intensity {
            IntensityRepr::Constant { rate } => IntensitySpec::Constant { rate: rate.parse()? },
            IntensityRepr::Affine { a, b } => IntensitySpec::Affine {
                a: a.parse()?,
                b: b.parse()?,
            },
            IntensityRepr::Table { rates } => {
                let mut table = BTreeMap::new();
                for (k, v) in rates {
                    table.insert(parse_rational(k)?, v.parse()?);
                }
                IntensitySpec::Table { rates: table }
            }
        };
        NetworkParams::new(spec.n_neurons, cap, weights, intensity, delta)
    }
}

impl From<NetworkParams> for NetworkSpec {
    fn from(p: NetworkParams) -> Self {
        let intensity = match &p.intensity {
            IntensitySpec::Constant { rate } => IntensityRepr::Constant {
                rate: RationalRepr::from_rational(rate),
            },
            IntensitySpec::Affine { a, b } => IntensityRepr::Affine {
                a: RationalRepr::from_rational(a),
                b: RationalRepr::from_rational(b),
            },
            IntensitySpec::Table { rates } => IntensityRepr::Table {
                rates: rates
                    .iter()
                    .map(|(k, v)| (format_rational(k), RationalRepr::from_rational(v)))
                    .collect(),
            },
        };
        NetworkSpec {
            n_neurons: p.n_neurons,
            cap: RationalRepr::from_rational(&p.cap),
            weights: p
                .weights
                .iter()
                .map(|row| row.iter().map(RationalRepr::from_rational).collect())
                .collect(),
            intensity,
            delta: RationalRepr::from_rational(&p.delta),
        }
    }
}

impl NetworkParams {
    pub fn new(
        n_neurons: usize,
        cap: Rational,
        weights: Vec<Vec<Rational>>,
        intensity: IntensitySpec,
        delta: Rational,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(PjmpError::InvalidParams(msg));
        if n_neurons == 0 {
            return invalid("n_neurons must be at least 1".into());
        }
        if cap <= Rational::zero() {
            return invalid("cap must be positive".into());
        }
        if delta <= Rational::zero() {
            return invalid("delta must be positive".into());
        }
        if weights.len() != n_neurons || weights.iter().any(|r| r.len() != n_neurons) {
            return invalid(format!("weights must be a {n_neurons}x{n_neurons} matrix"));
        }
        let mut any_positive = false;
        for (j, row) in weights.iter().enumerate() {
            for (i, w) in row.iter().enumerate() {
                if *w < Rational::zero() {
                    return invalid(format!("weight W[{j}][{i}] is negative"));
                }
                if i == j && !w.is_zero() {
                    return invalid(format!("diagonal weight W[{j}][{j}] must be zero"));
                }
                any_positive |= *w > Rational::zero();
            }
        }
        if n_neurons > 1 && !any_positive {
            return invalid("at least one weight must be positive".into());
        }

        let mut den: i128 = *cap.denom();
        for w in weights.iter().flatten() {
            den = den.lcm(w.denom());
        }
        let scale = i64::try_from(den)
            .map_err(|_| PjmpError::InvalidParams("common denominator too large".into()))?;
        let to_scaled = |r: &Rational| -> Result<i64> {
            let v = r * Ratio::from_integer(den);
            debug_assert!(v.is_integer());
            i64::try_from(v.to_integer())
                .map_err(|_| PjmpError::InvalidParams("scaled value overflows".into()))
        };
        let cap_scaled = to_scaled(&cap)?;
        let weights_scaled = weights
            .iter()
            .map(|row| row.iter().map(to_scaled).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;

        match &intensity {
            IntensitySpec::Constant { rate } if *rate < delta => {
                return invalid("constant rate is below delta".into());
            }
            IntensitySpec::Affine { a, b } if *a < delta || *b < Rational::zero() => {
                return invalid("affine intensity needs a >= delta and b >= 0".into());
            }
            _ => {}
        }

        let params = NetworkParams {
            n_neurons,
            cap,
            weights,
            intensity,
            delta,
            scale,
            cap_scaled,
            weights_scaled,
        };
        for v in params.value_set() {
            let r = params.phi(v)?;
            if r < params.delta {
                return invalid(format!(
                    "intensity {} at potential {} is below delta",
                    format_rational(&r),
                    format_rational(&params.potential(v))
                ));
            }
        }
        Ok(params)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn cap(&self) -> &Rational {
        &self.cap
    }

    pub fn delta(&self) -> &Rational {
        &self.delta
    }

    pub fn intensity(&self) -> &IntensitySpec {
        &self.intensity
    }

    pub fn weight(&self, from: usize, to: usize) -> &Rational {
        &self.weights[from][to]
    }

    /// Common denominator of all potentials.
    pub fn scale(&self) -> i64 {
        self.scale
    }

    pub fn cap_scaled(&self) -> i64 {
        self.cap_scaled
    }

    pub fn weight_scaled(&self, from: usize, to: usize) -> i64 {
        self.weights_scaled[from][to]
    }

    pub fn max_weight(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .map(rational_to_f64)
            .fold(0.0, f64::max)
    }

    pub fn cap_f64(&self) -> f64 {
        rational_to_f64(&self.cap)
    }

    pub fn delta_f64(&self) -> f64 {
        rational_to_f64(&self.delta)
    }

    /// Whether all off-diagonal weights share one value.
    pub fn equal_weights(&self) -> Option<Rational> {
        let mut common = None;
        for j in 0..self.n_neurons {
            for i in 0..self.n_neurons {
                if i == j {
                    continue;
                }
                match common {
                    None => common = Some(self.weights[j][i]),
                    Some(w) if w != self.weights[j][i] => return None,
                    _ => {}
                }
            }
        }
        common
    }

    /// Rational potential of a scaled value.
    pub fn potential(&self, scaled: i64) -> Rational {
        Ratio::new(scaled as i128, self.scale as i128)
    }

    pub fn potential_f64(&self, scaled: i64) -> f64 {
        scaled as f64 / self.scale as f64
    }

    /// Scaled representation of a rational potential, if it lies on the lattice.
    pub fn to_scaled(&self, r: &Rational) -> Option<i64> {
        let v = r * Ratio::from_integer(self.scale as i128);
        if v.is_integer() {
            i64::try_from(v.to_integer()).ok()
        } else {
            None
        }
    }

    pub fn phi(&self, scaled: i64) -> Result<Rational> {
        let v = self.potential(scaled);
        self.intensity
            .eval(&v)
            .ok_or_else(|| PjmpError::IntensityUndefined(format_rational(&v)))
    }

    pub fn phi_f64(&self, scaled: i64) -> Result<f64> {
        self.phi(scaled).map(|r| rational_to_f64(&r))
    }

    /// Values a single coordinate can take after it has been reset at least once.
    pub fn value_set(&self) -> BTreeSet<i64> {
        let mut seen = BTreeSet::from([0i64]);
        let mut queue = VecDeque::from([0i64]);
        let increments: BTreeSet<i64> = self
            .weights_scaled
            .iter()
            .flatten()
            .copied()
            .filter(|w| *w > 0)
            .collect();
        while let Some(v) = queue.pop_front() {
            for w in &increments {
                let next = v + w;
                if next <= self.cap_scaled && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    pub fn format_config(&self, x: &Config) -> String {
        x.0.iter()
            .map(|v| format_rational(&self.potential(*v)))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Parses a configuration written as rationals, e.g. `"0,1"` or `"1/2;0"`.
    pub fn parse_config(&self, text: &str) -> Result<Config> {
        let values = text
            .split([',', ';'])
            .map(parse_rational)
            .collect::<Result<Vec<_>>>()
            .map_err(|_| PjmpError::InvalidConfig(format!("cannot parse {text:?}")))?;
        Config::from_rationals(self, &values)
    }
}

/// A vector of membrane potentials, scaled by the network's common denominator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Config(Vec<i64>);

impl Config {
    pub fn new(p: &NetworkParams, potentials: Vec<i64>) -> Result<Self> {
        if potentials.len() != p.n_neurons {
            return Err(PjmpError::InvalidConfig(format!(
                "expected {} potentials, got {}",
                p.n_neurons,
                potentials.len()
            )));
        }
        if let Some(v) = potentials.iter().find(|v| **v < 0 || **v > p.cap_scaled) {
            return Err(PjmpError::InvalidConfig(format!(
                "potential {} outside [0, cap]",
                format_rational(&p.potential(*v))
            )));
        }
        Ok(Config(potentials))
    }

    pub fn from_rationals(p: &NetworkParams, values: &[Rational]) -> Result<Self> {
        let scaled = values
            .iter()
            .map(|r| {
                p.to_scaled(r).ok_or_else(|| {
                    PjmpError::InvalidConfig(format!(
                        "potential {} is not on the lattice of the weights",
                        format_rational(r)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Config::new(p, scaled)
    }

    /// Builds a configuration from integer potentials (valid when the scale is 1
    /// or the integers are already scaled).
    pub fn from_ints(p: &NetworkParams, values: &[i64]) -> Result<Self> {
        let rs: Vec<Rational> = values.iter().map(|v| Ratio::from_integer(*v as i128)).collect();
        Config::from_rationals(p, &rs)
    }

    pub fn zeros(p: &NetworkParams) -> Self {
        Config(vec![0; p.n_neurons])
    }

    pub fn potentials(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> i64 {
        self.0[i]
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

fn check_neuron(j: usize, p: &NetworkParams) -> Result<()> {
    if j >= p.n_neurons {
        Err(PjmpError::NeuronOutOfRange {
            index: j,
            n: p.n_neurons,
        })
    } else {
        Ok(())
    }
}

/// The jump map: neuron `j` resets to zero, every other neuron `i` gains
/// `W[j][i]` unless that would exceed the cap.
pub fn apply_jump(x: &Config, j: usize, p: &NetworkParams) -> Result<Config> {
    check_neuron(j, p)?;
    Ok(jump_unchecked(x, j, p))
}

pub(crate) fn jump_unchecked(x: &Config, j: usize, p: &NetworkParams) -> Config {
    let mut out = x.0.clone();
    for (i, v) in out.iter_mut().enumerate() {
        if i == j {
            *v = 0;
        } else {
            let next = *v + p.weights_scaled[j][i];
            if next <= p.cap_scaled {
                *v = next;
            }
        }
    }
    Config(out)
}

/// φ̄(x) = Σ_j φ(x^j), exactly.
pub fn total_rate_exact(x: &Config, p: &NetworkParams) -> Result<Rational> {
    x.0.iter()
        .try_fold(Rational::zero(), |acc, v| Ok(acc + p.phi(*v)?))
}

pub fn total_rate(x: &Config, p: &NetworkParams) -> Result<f64> {
    total_rate_exact(x, p).map(|r| rational_to_f64(&r))
}

fn eval_at<F>(f: &F, x: &Config) -> Result<f64>
where
    F: Fn(&Config) -> Option<f64>,
{
    f(x).ok_or_else(|| PjmpError::FunctionUndefined(x.to_string()))
}

/// Ge f(x) = Σ_j φ(x^j) [f(Δ_j x) − f(x)].
pub fn generator_apply<F>(f: F, x: &Config, p: &NetworkParams) -> Result<f64>
where
    F: Fn(&Config) -> Option<f64>,
{
    let fx = eval_at(&f, x)?;
    let mut acc = 0.0;
    for j in 0..p.n_neurons {
        let y = jump_unchecked(x, j, p);
        acc += p.phi_f64(x.0[j])? * (eval_at(&f, &y)? - fx);
    }
    Ok(acc)
}

/// Γ(f,f)(x) = ½ Σ_j φ(x^j) [f(Δ_j x) − f(x)]².
pub fn carre_du_champ<F>(f: F, x: &Config, p: &NetworkParams) -> Result<f64>
where
    F: Fn(&Config) -> Option<f64>,
{
    let fx = eval_at(&f, x)?;
    let mut acc = 0.0;
    for j in 0..p.n_neurons {
        let y = jump_unchecked(x, j, p);
        let diff = eval_at(&f, &y)? - fx;
        acc += p.phi_f64(x.0[j])? * diff * diff;
    }
    Ok(0.5 * acc)
}

/// Time at which the single-spike probability of neuron `i` peaks, given the
/// total rate before and after its spike.
pub fn peak_time_from_rates(before: f64, after: f64) -> f64 {
    if (before - after).abs() <= crate::semigroup::BRANCH_TOL {
        1.0 / before
    } else {
        (before.ln() - after.ln()) / (before - after)
    }
}

/// Model-wide constants evaluated over an invariant domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    /// sup over the domain of (φ̄(x) + 1)².
    pub big_m: f64,
    /// M · (max W)² / 2 · e^{2m}.
    pub d_lip: f64,
    pub phi_bar_max: f64,
    /// Minimum peak time of the single-spike probability over neurons and states.
    pub t0_global: f64,
    pub max_weight: f64,
    pub cap: f64,
}

pub fn model_constants(p: &NetworkParams, space: &StateSpace) -> Result<ModelConstants> {
    if space.is_empty() {
        return Err(PjmpError::EmptyStateSpace);
    }
    let mut phi_bar_max: f64 = 0.0;
    let mut t0_global = f64::INFINITY;
    for x in space.states() {
        let before = total_rate(x, p)?;
        phi_bar_max = phi_bar_max.max(before);
        for i in 0..p.n_neurons {
            let after = total_rate(&jump_unchecked(x, i, p), p)?;
            t0_global = t0_global.min(peak_time_from_rates(before, after));
        }
    }
    let big_m = (phi_bar_max + 1.0).powi(2);
    let max_weight = p.max_weight();
    let cap = p.cap_f64();
    Ok(ModelConstants {
        big_m,
        d_lip: big_m * max_weight * max_weight / 2.0 * (2.0 * cap).exp(),
        phi_bar_max,
        t0_global,
        max_weight,
        cap,
    })
}
