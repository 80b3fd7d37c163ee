use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `hits` successes out of `n` trials.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Tail probabilities against an abscissa (r or n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub label: String,
    pub abscissa: Vec<f64>,
    pub tail: Vec<f64>,
    pub wilson_lo: Vec<f64>,
    pub wilson_hi: Vec<f64>,
    /// Exact tail at each abscissa value.
    pub reference: Vec<f64>,
    /// Fitted prefactor (Q or G).
    pub prefactor: f64,
    /// Exponent of the fitted form, as a function of the abscissa.
    pub exponent: String,
}

impl TailCurve {
    /// Whether every exact value lies inside its Wilson interval.
    pub fn reference_within_intervals(&self) -> bool {
        self.reference
            .iter()
            .zip(self.wilson_lo.iter().zip(&self.wilson_hi))
            .all(|(r, (lo, hi))| *lo <= r + 1e-12 && *r <= hi + 1e-12)
    }
}

/// Least-squares slope of y on x.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Slope of ln(tail) against n over the points with positive tail.
pub fn log_tail_slope(ns: &[f64], tails: &[f64]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(tails)
        .filter(|(_, t)| **t > 0.0)
        .map(|(n, t)| (*n, t.ln()))
        .unzip();
    ls_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // p̂ = 0.5, n = 100: 0.4038 .. 0.5962
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5);
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.004);
        let (lo, hi) = wilson_interval(1000, 1000);
        assert!(lo > 0.996 && hi == 1.0);
    }

    #[test]
    fn slopes() {
        let xs = [1.0f64, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| (-0.3 * x).exp() * 2.0).collect();
        assert!((log_tail_slope(&xs, &ys).unwrap() + 0.3).abs() < 1e-12);
        assert_eq!(log_tail_slope(&xs, &[0.0, 0.0, 0.1, 0.0]), None);
        assert_eq!(ls_slope(&[1.0], &[2.0]), None);
    }
}
