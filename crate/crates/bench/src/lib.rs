//! Fixtures shared by the benchmarks.

use pjmp_core::harness::System;
use pjmp_core::{IntensitySpec, NetworkParams, Rational};

/// Fully connected network of `n` neurons with cap `m`, unit weights and φ(v) = 1 + v.
pub fn uniform_network(n: usize, m: i128) -> NetworkParams {
    let one = Rational::from_integer(1);
    let weights = (0..n)
        .map(|j| (0..n).map(|i| if i == j { Rational::from_integer(0) } else { one }).collect())
        .collect();
    NetworkParams::new(n, Rational::from_integer(m), weights, IntensitySpec::Affine { a: one, b: one }, one)
        .expect("valid uniform network")
}

pub fn uniform_system(n: usize, m: i128) -> System {
    System::new(uniform_network(n, m)).expect("uniform network has an invariant domain")
}
