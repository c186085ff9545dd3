//! Composite quadrature on uniformly spaced samples.

use serde::{Deserialize, Serialize};

/// Rule used to integrate sampled signals over a uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeQuadrature {
    Trapezoid,
    #[default]
    Simpson,
}

impl TimeQuadrature {
    /// Quadrature weights for `n` samples spaced `h` apart.
    pub fn weights(self, n: usize, h: f64) -> Vec<f64> {
        match self {
            TimeQuadrature::Trapezoid => trapezoid_weights(n, h),
            TimeQuadrature::Simpson => simpson_weights(n, h),
        }
    }

    pub fn integrate(self, values: &[f64], h: f64) -> f64 {
        dot(&self.weights(values.len(), h), values)
    }
}

pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            w
        }
    }
}

/// Composite Simpson weights. An odd number of intervals closes with the
/// 3/8 rule over the last three intervals; two samples fall back to the
/// trapezoid.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    if n < 3 {
        return trapezoid_weights(n, h);
    }
    let intervals = n - 1;
    let mut w = vec![0.0; n];
    let simpson_intervals = if intervals % 2 == 0 {
        intervals
    } else if intervals >= 3 {
        intervals - 3
    } else {
        0
    };
    if simpson_intervals > 0 {
        for pair in 0..simpson_intervals / 2 {
            let i = 2 * pair;
            w[i] += h / 3.0;
            w[i + 1] += 4.0 * h / 3.0;
            w[i + 2] += h / 3.0;
        }
    }
    if simpson_intervals < intervals {
        let i = simpson_intervals;
        let c = 3.0 * h / 8.0;
        w[i] += c;
        w[i + 1] += 3.0 * c;
        w[i + 2] += 3.0 * c;
        w[i + 3] += c;
    }
    w
}

pub fn simpson(values: &[f64], h: f64) -> f64 {
    dot(&simpson_weights(values.len(), h), values)
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    dot(&trapezoid_weights(values.len(), h), values)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, f: impl Fn(f64) -> f64) -> (Vec<f64>, f64) {
        let h = 1.0 / (n - 1) as f64;
        ((0..n).map(|i| f(i as f64 * h)).collect(), h)
    }

    #[test]
    fn simpson_exact_for_cubics_even_and_odd_intervals() {
        for n in [3, 4, 5, 8, 11, 12] {
            let (v, h) = samples(n, |x| 1.0 + x - 2.0 * x * x + 3.0 * x * x * x);
            let exact = 1.0 + 0.5 - 2.0 / 3.0 + 0.75;
            assert!((simpson(&v, h) - exact).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn trapezoid_exact_for_lines() {
        let (v, h) = samples(7, |x| 2.0 - 3.0 * x);
        assert!((trapezoid(&v, h) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_lengths() {
        assert_eq!(simpson(&[], 0.1), 0.0);
        assert_eq!(simpson(&[3.0], 0.1), 0.0);
        assert!((simpson(&[1.0, 3.0], 0.5) - 1.0).abs() < 1e-15);
    }
}
