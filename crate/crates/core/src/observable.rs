//! One-coordinate observables f(x) = g(x^i) and their shape checks.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{PjmpError, Result};
use crate::model::NetworkParams;
use crate::statespace::StateSpace;

const SHAPE_TOL: f64 = 1e-12;

/// The built-in library; all are 1-Lipschitz on [0, m].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Identity,
    /// v + 1, a strictly positive version of the identity.
    ShiftedIdentity,
    ExpNeg,
    MinHalfCap,
    ClippedLinear,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 5] = [
        ObservableKind::Identity,
        ObservableKind::ShiftedIdentity,
        ObservableKind::ExpNeg,
        ObservableKind::MinHalfCap,
        ObservableKind::ClippedLinear,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ObservableKind::Identity => "identity",
            ObservableKind::ShiftedIdentity => "shifted_identity",
            ObservableKind::ExpNeg => "exp_neg",
            ObservableKind::MinHalfCap => "min_half_cap",
            ObservableKind::ClippedLinear => "clipped_linear",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| PjmpError::Observable(format!("unknown observable '{id}'")))
    }

    pub fn eval(self, v: f64, cap: f64) -> f64 {
        match self {
            ObservableKind::Identity => v,
            ObservableKind::ShiftedIdentity => v + 1.0,
            ObservableKind::ExpNeg => (-v).exp(),
            ObservableKind::MinHalfCap => v.min(cap / 2.0),
            ObservableKind::ClippedLinear => (v - cap / 4.0).clamp(0.0, cap / 2.0),
        }
    }
}

/// Monotonicity and curvature class of a function on a finite value set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Constant,
    DecreasingConvex,
    IncreasingConcave,
    Other,
}

/// x ↦ g(x^i).
#[derive(Clone)]
pub struct CoordinateFn {
    id: String,
    neuron: usize,
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for CoordinateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoordinateFn({}, neuron {})", self.id, self.neuron)
    }
}

impl CoordinateFn {
    pub fn new<G>(id: impl Into<String>, neuron: usize, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        CoordinateFn {
            id: id.into(),
            neuron,
            g: Arc::new(g),
        }
    }

    pub fn from_kind(kind: ObservableKind, neuron: usize, p: &NetworkParams) -> Self {
        let cap = p.cap_f64();
        Self::new(kind.id(), neuron, move |v| kind.eval(v, cap))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn neuron(&self) -> usize {
        self.neuron
    }

    pub fn eval(&self, v: f64) -> f64 {
        (self.g)(v)
    }

    pub fn tabulate(&self, p: &NetworkParams, space: &StateSpace) -> Result<Vec<f64>> {
        self.check_neuron(p)?;
        Ok(space.tabulate(|x| self.eval(p.potential_f64(x.get(self.neuron)))))
    }

    fn check_neuron(&self, p: &NetworkParams) -> Result<()> {
        if self.neuron >= p.n_neurons() {
            return Err(PjmpError::NeuronOutOfRange {
                index: self.neuron,
                n: p.n_neurons(),
            });
        }
        Ok(())
    }

    fn points(&self, p: &NetworkParams) -> Vec<(f64, f64)> {
        p.value_set()
            .into_iter()
            .map(|s| {
                let v = p.potential_f64(s);
                (v, self.eval(v))
            })
            .collect()
    }

    /// Largest finite-difference slope over the reachable value set.
    pub fn lipschitz_constant(&self, p: &NetworkParams) -> f64 {
        let pts = self.points(p);
        let mut best: f64 = 0.0;
        for (a, pa) in pts.iter().enumerate() {
            for pb in &pts[a + 1..] {
                best = best.max((pb.1 - pa.1).abs() / (pb.0 - pa.0));
            }
        }
        best
    }

    pub fn check_lipschitz(&self, p: &NetworkParams) -> Result<()> {
        self.check_neuron(p)?;
        let l = self.lipschitz_constant(p);
        if l > 1.0 + 1e-12 {
            return Err(PjmpError::Observable(format!(
                "{} has Lipschitz constant {l} > 1 on the value set",
                self.id
            )));
        }
        Ok(())
    }

    pub fn shape(&self, p: &NetworkParams) -> Shape {
        let pts = self.points(p);
        let slopes: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        let flat = slopes.iter().all(|s| s.abs() <= SHAPE_TOL);
        if flat {
            return Shape::Constant;
        }
        let nonincreasing = slopes.iter().all(|s| *s <= SHAPE_TOL);
        let nondecreasing = slopes.iter().all(|s| *s >= -SHAPE_TOL);
        let convex = slopes.windows(2).all(|w| w[1] >= w[0] - SHAPE_TOL);
        let concave = slopes.windows(2).all(|w| w[1] <= w[0] + SHAPE_TOL);
        match (nonincreasing && convex, nondecreasing && concave) {
            (true, _) => Shape::DecreasingConvex,
            (_, true) => Shape::IncreasingConcave,
            _ => Shape::Other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    #[test]
    fn library_is_lipschitz() {
        let p = uniform(2, 4, 1, 1, 1);
        for kind in ObservableKind::ALL {
            let f = CoordinateFn::from_kind(kind, 0, &p);
            f.check_lipschitz(&p).unwrap();
        }
    }

    #[test]
    fn ids_round_trip() {
        for kind in ObservableKind::ALL {
            assert_eq!(ObservableKind::from_id(kind.id()).unwrap(), kind);
        }
        assert!(ObservableKind::from_id("square").is_err());
    }

    #[test]
    fn steep_function_rejected() {
        let p = benchmark();
        let f = CoordinateFn::new("double", 0, |v| 2.0 * v);
        assert!(f.check_lipschitz(&p).is_err());
        let f = CoordinateFn::new("id", 5, |v| v);
        assert!(f.check_lipschitz(&p).is_err());
    }

    #[test]
    fn shapes() {
        let p = benchmark();
        let shape = |k| CoordinateFn::from_kind(k, 0, &p).shape(&p);
        assert_eq!(shape(ObservableKind::ExpNeg), Shape::DecreasingConvex);
        assert_eq!(shape(ObservableKind::Identity), Shape::IncreasingConcave);
        assert_eq!(CoordinateFn::new("c", 0, |_| 3.0).shape(&p), Shape::Constant);
        assert_eq!(CoordinateFn::new("sq", 0, |v| v * v).shape(&p), Shape::Other);
    }

    #[test]
    fn tabulates_on_domain() {
        let p = benchmark();
        let d = crate::statespace::invariant_domain(&p, &cfg(&p, &[0, 0])).unwrap();
        let f = CoordinateFn::from_kind(ObservableKind::ShiftedIdentity, 1, &p);
        let v = f.tabulate(&p, &d).unwrap();
        for (x, fx) in d.states().iter().zip(v) {
            assert_eq!(fx, x.get(1) as f64 + 1.0);
        }
    }
}
