//! Interpolating and penalized spline helpers shared by several stages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Natural cubic interpolating spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct NaturalCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InvalidInput(format!(
                "spline needs matching sample vectors of length >= 2, got {}/{}",
                n,
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(NaturalCubic {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// Values on the lattice `lo, lo + step, ...` up to `hi` (inclusive within
    /// rounding), paired with their abscissae.
    pub fn lattice(&self, lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| {
                let t = lo + i as f64 * step;
                (t, self.eval(t))
            })
            .collect()
    }
}

/// The four non-zero uniform cubic B-spline weights at local coordinate `u`
/// in [0, 1).
#[inline]
pub fn cubic_bspline_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Uniform cubic B-spline basis on `[lo, hi]` with `intervals` segments.
/// Arguments outside the interval are clamped.
#[derive(Debug, Clone, Copy)]
pub struct BSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
}

impl BSplineBasis {
    pub fn len(&self) -> usize {
        self.intervals + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// First basis index and the four weights for `t`.
    #[inline]
    pub fn eval(&self, t: f64) -> (usize, [f64; 4]) {
        let h = (self.hi - self.lo) / self.intervals as f64;
        let s = ((t.clamp(self.lo, self.hi) - self.lo) / h).max(0.0);
        let i = (s.floor() as usize).min(self.intervals - 1);
        (i, cubic_bspline_weights(s - i as f64))
    }
}

/// Periodic uniform cubic B-spline basis with `n` functions over `period`.
/// Function `c` peaks at `c * period / n`.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicBasis {
    pub n: usize,
    pub period: f64,
}

impl PeriodicBasis {
    #[inline]
    pub fn eval(&self, t: f64) -> [(usize, f64); 4] {
        let h = self.period / self.n as f64;
        let s = t.rem_euclid(self.period) / h;
        let i = s.floor() as usize;
        let w = cubic_bspline_weights(s - i as f64);
        let n = self.n;
        [
            ((i + n - 1) % n, w[0]),
            (i % n, w[1]),
            ((i + 1) % n, w[2]),
            ((i + 2) % n, w[3]),
        ]
    }
}

/// `DᵀD` for the `order`-th difference operator on `p` coefficients.
pub fn difference_penalty(p: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(p, p);
    for _ in 0..order {
        let r = d.nrows();
        if r < 2 {
            break;
        }
        let mut next = DMatrix::<f64>::zeros(r - 1, p);
        for i in 0..r - 1 {
            let row = d.row(i + 1) - d.row(i);
            next.set_row(i, &row);
        }
        d = next;
    }
    d.transpose() * d
}

/// Penalized weighted least squares for a given basis design, with the
/// smoothing parameter picked by GCV over a log grid.
pub struct PenalizedFit {
    pub coef: DVector<f64>,
    pub lambda: f64,
    pub edf: f64,
    pub gcv: f64,
}

/// Solves `(XᵀWX + λS) β = XᵀWz` for every `λ` in `lambdas`, keeping the GCV
/// minimizer. `xtwx`, `xtwz`, `ztwz` are the weighted cross products and `n`
/// the number of observations with positive weight.
pub fn gcv_select(
    xtwx: &DMatrix<f64>,
    xtwz: &DVector<f64>,
    ztwz: f64,
    n: f64,
    penalty: &DMatrix<f64>,
    lambdas: &[f64],
) -> Result<PenalizedFit> {
    let mut best: Option<PenalizedFit> = None;
    for &lambda in lambdas {
        let a = xtwx + penalty * lambda;
        let Some(chol) = a.clone().cholesky() else {
            continue;
        };
        let coef = chol.solve(xtwz);
        // weighted RSS = zᵀWz − 2βᵀXᵀWz + βᵀXᵀWXβ
        let rss = (ztwz - 2.0 * coef.dot(xtwz) + coef.dot(&(xtwx * &coef))).max(0.0);
        let edf = chol.solve(xtwx).trace();
        let denom = (n - edf).max(1e-9);
        let gcv = n * rss / (denom * denom);
        if best.as_ref().is_none_or(|b| gcv < b.gcv) {
            best = Some(PenalizedFit { coef, lambda, edf, gcv });
        }
    }
    best.ok_or(Error::IllConditioned)
}

/// `count` log-spaced values from `10^lo` to `10^hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_spline_interpolates_and_is_linear_on_lines() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y = [1.0, 3.0, 6.0, 9.0];
        let s = NaturalCubic::new(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert!((s.eval(*xi) - yi).abs() < 1e-12);
        }
        assert!((s.eval(3.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn natural_spline_second_derivative_vanishes_at_ends() {
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7).sin()).collect();
        let s = NaturalCubic::new(&x, &y).unwrap();
        let h = 1e-4;
        let d2 = (s.eval(2.0 * h) - 2.0 * s.eval(h) + s.eval(0.0)) / (h * h);
        assert!(d2.abs() < 1e-2, "{d2}");
    }

    #[test]
    fn bspline_weights_partition_unity() {
        for u in [0.0, 0.25, 0.5, 0.99] {
            let w = cubic_bspline_weights(u);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        let pb = PeriodicBasis { n: 12, period: 360.0 };
        let w = pb.eval(30.0);
        assert_eq!(w[1].0, 1);
        assert!((w[1].1 - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(pb.eval(-1.0)[1].0, 11);
    }

    #[test]
    fn difference_penalty_kills_polynomials() {
        let p = difference_penalty(7, 2);
        let line = DVector::from_iterator(7, (0..7).map(|i| 3.0 - 0.5 * i as f64));
        assert!((p * line).norm() < 1e-12);
    }
}
