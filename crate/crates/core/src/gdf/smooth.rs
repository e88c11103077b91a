//! Log-link penalized spherical-harmonic surface, fitted by iterated
//! reweighted least squares with the smoothing parameter chosen by GCV at
//! every iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis;
use crate::error::{Error, Result};
use crate::mask::RibbonMask;
use crate::skygrid::{SkyMap, UnitVec};
use crate::spline::{gcv_select, log_grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Maximum harmonic degree. Lowered automatically when fewer than ten
    /// included pixels per basis function are available, unless `strict`.
    pub degree: usize,
    pub strict_degree: bool,
    /// Orders of the Laplacian-power penalties, summed with equal weight.
    pub penalty_orders: Vec<u32>,
    /// log10 range and count of the λ search grid.
    pub log10_lambda: (f64, f64),
    pub n_lambda: usize,
    /// Relative deviance change that ends the IRLS loop.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            degree: 12,
            strict_degree: false,
            penalty_orders: vec![1, 2, 3, 4],
            log10_lambda: (-12.0, 2.0),
            n_lambda: 29,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    /// Harmonic degree actually used.
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub penalty_orders: Vec<u32>,
    pub lambda: f64,
    pub edf: f64,
    /// `exp(η)` at every pixel, strictly positive.
    pub fitted: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ETA_MIN: f64 = -700.0;
const ETA_MAX: f64 = 700.0;

/// Fits the log-link surface to `values` at `positions`, using only points
/// with positive weight, and predicts at every position.
pub fn fit_smooth_values(
    positions: &[UnitVec],
    values: &[f64],
    weights: &[f64],
    cfg: &SmoothConfig,
) -> Result<SmoothFit> {
    let n_all = positions.len();
    if values.len() != n_all || weights.len() != n_all {
        return Err(Error::InvalidInput("smooth fit inputs have different lengths".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }
    let included: Vec<usize> = (0..n_all).filter(|i| weights[*i] > 0.0).collect();
    let n_in = included.len();

    let mut degree = cfg.degree;
    while basis::n_harmonics(degree) * 10 > n_in {
        if cfg.strict_degree || degree == 0 {
            return Err(Error::TooFewPixels {
                included: n_in,
                required: basis::n_harmonics(degree) * 10,
            });
        }
        degree -= 1;
    }
    let x_all = basis::design_matrix(positions, degree);
    let x = x_all.select_rows(included.iter());
    let y: Vec<f64> = included.iter().map(|i| values[*i]).collect();
    let w: Vec<f64> = included.iter().map(|i| weights[*i]).collect();
    let penalty = DMatrix::from_diagonal(&DVector::from_vec(basis::laplacian_penalty(
        degree,
        &cfg.penalty_orders,
    )));
    let lambdas = log_grid(cfg.log10_lambda.0, cfg.log10_lambda.1, cfg.n_lambda);

    let w_sum: f64 = w.iter().sum();
    let y_mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w_sum;
    let scale = if y_mean > 0.0 {
        y_mean
    } else {
        y.iter().cloned().fold(0.0, f64::max).max(1e-300)
    };
    let floor = 1e-6 * scale;
    // deviance at rounding-noise level counts as an exact fit
    let dev_floor = 1e-14 * y.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().max(1e-300);

    // one penalized weighted least-squares solve at working weights `ww`
    let solve = |ww: &[f64], z: &[f64]| -> Result<(DVector<f64>, f64, f64)> {
        let mean_w = ww.iter().sum::<f64>() / n_in as f64;
        let mut xw = x.clone();
        let mut zw = DVector::<f64>::zeros(n_in);
        for i in 0..n_in {
            let s = (ww[i] / mean_w).sqrt();
            xw.row_mut(i).scale_mut(s);
            zw[i] = z[i] * s;
        }
        let xtwx = xw.tr_mul(&xw);
        let xtwz = xw.tr_mul(&zw);
        let fit = gcv_select(&xtwx, &xtwz, zw.dot(&zw), n_in as f64, &penalty, &lambdas)?;
        Ok((fit.coef, fit.lambda, fit.edf))
    };

    let deviance = |eta: &DVector<f64>| -> f64 {
        (0..n_in)
            .map(|i| {
                let r = y[i] - eta[i].exp();
                w[i] * r * r
            })
            .sum()
    };

    let z0: Vec<f64> = y.iter().map(|v| v.max(floor).ln()).collect();
    let (mut beta, mut lambda, mut edf) = solve(&w, &z0)?;
    let mut eta = (&x * &beta).map(|v| v.clamp(ETA_MIN, ETA_MAX));
    let mut dev = deviance(&eta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let ww: Vec<f64> = (0..n_in).map(|i| w[i] * mu[i] * mu[i]).collect();
        if ww.iter().all(|v| *v <= 0.0) {
            break;
        }
        let z: Vec<f64> = (0..n_in).map(|i| eta[i] + (y[i] - mu[i]) / mu[i]).collect();
        let (b_new, l_new, e_new) = solve(&ww, &z)?;
        let mut eta_new = (&x * &b_new).map(|v| v.clamp(ETA_MIN, ETA_MAX));
        let mut dev_new = deviance(&eta_new);
        let mut b_step = b_new;
        // halve the step while the deviance blows up
        let mut halvings = 0;
        while !(dev_new <= dev * 1.5 + 1e-300) && halvings < 20 {
            b_step = (&beta + &b_step) * 0.5;
            eta_new = (&x * &b_step).map(|v| v.clamp(ETA_MIN, ETA_MAX));
            dev_new = deviance(&eta_new);
            halvings += 1;
        }
        let rel = (dev - dev_new).abs() / dev.max(dev_floor);
        beta = b_step;
        eta = eta_new;
        lambda = l_new;
        edf = e_new;
        let done = rel < cfg.tol;
        dev = dev_new;
        if done {
            converged = true;
            break;
        }
    }

    let fitted: Vec<f64> = (&x_all * &beta)
        .iter()
        .map(|e| e.clamp(ETA_MIN, ETA_MAX).exp().max(f64::MIN_POSITIVE))
        .collect();
    Ok(SmoothFit {
        degree,
        coefficients: beta.iter().cloned().collect(),
        penalty_orders: cfg.penalty_orders.clone(),
        lambda,
        edf,
        fitted,
        iterations,
        converged,
    })
}

/// Log-link smooth of the map's rates over pixels outside `exclude`, with
/// predictions on the whole grid.
pub fn fit_smooth_surface(
    map: &SkyMap,
    exclude: Option<&RibbonMask>,
    weights: &[f64],
    cfg: &SmoothConfig,
) -> Result<SmoothFit> {
    let g = map.grid;
    if weights.len() != g.len() {
        return Err(Error::InvalidInput("weights do not match the grid".into()));
    }
    let mut w = weights.to_vec();
    if let Some(mask) = exclude {
        for (i, inside) in mask.pixels(&g).into_iter().enumerate() {
            if inside {
                w[i] = 0.0;
            }
        }
    }
    fit_smooth_values(&g.pixel_vectors(), &map.rate, &w, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skygrid::{FrameSpec, GridSpec};

    fn map_from(f: impl Fn(f64, f64) -> f64, deg: f64) -> SkyMap {
        let g = GridSpec::from_pixel_deg(deg).unwrap();
        let rate = (0..g.len())
            .map(|i| {
                let (j, k) = g.unindex(i);
                f(g.lon_center(j), g.polar_center(k))
            })
            .collect();
        SkyMap::new(g, FrameSpec::ECLIPTIC, rate, vec![0.0; g.len()]).unwrap()
    }

    #[test]
    fn constant_map_is_reproduced() {
        let map = map_from(|_, _| 0.07, 6.0);
        let fit = fit_smooth_surface(&map, None, &vec![1.0; map.grid.len()], &SmoothConfig::default()).unwrap();
        for v in &fit.fitted {
            assert!((v / 0.07 - 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn smooth_exponential_surface_recovered() {
        let f = |_: f64, polar: f64| (-2.5 + 0.8 * polar.to_radians().cos()).exp();
        let map = map_from(f, 4.0);
        let fit = fit_smooth_surface(&map, None, &vec![1.0; map.grid.len()], &SmoothConfig::default()).unwrap();
        let (lo, hi) = map
            .rate
            .iter()
            .fold((f64::INFINITY, 0.0f64), |a, r| (a.0.min(*r), a.1.max(*r)));
        let rmse = (map
            .rate
            .iter()
            .zip(&fit.fitted)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / map.rate.len() as f64)
            .sqrt();
        assert!(rmse <= 0.01 * (hi - lo), "rmse {rmse} range {}", hi - lo);
        assert!(fit.converged);
    }

    #[test]
    fn fitted_values_positive_even_for_zeros() {
        let map = map_from(|lon, _| if lon < 180.0 { 0.0 } else { 0.2 }, 6.0);
        let fit = fit_smooth_surface(&map, None, &vec![1.0; map.grid.len()], &SmoothConfig::default()).unwrap();
        assert!(fit.fitted.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn degree_lowered_for_small_grids_unless_strict() {
        let map = map_from(|_, _| 0.1, 12.0);
        let n = map.grid.len();
        let fit = fit_smooth_surface(&map, None, &vec![1.0; n], &SmoothConfig::default()).unwrap();
        assert!(basis::n_harmonics(fit.degree) * 10 <= n);
        let strict = SmoothConfig {
            strict_degree: true,
            ..SmoothConfig::default()
        };
        assert!(matches!(
            fit_smooth_surface(&map, None, &vec![1.0; n], &strict),
            Err(Error::TooFewPixels { .. })
        ));
    }
}
