//! Component variances of the separated maps and their joint variance
//! conditional on the observed rates.
//!
//! With signal variances `g = σ²_G`, `r = σ²_R` and observation variance
//! `y = σ²_Y`, the conditional covariance of `(G, R)` given the data is
//!
//! ```text
//!             1        [ g(r + y)    −g r     ]
//!   ─────────────── ·  [                      ]
//!    g + r + y         [  −g r      r(g + y)  ]
//! ```

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skygrid::SkyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    InputColumn,
    ConfiguredModel,
}

/// Per-pixel variance of the observed rate given the true map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2_y: Vec<f64>,
    pub source: VarianceSource,
}

impl NoiseModel {
    /// Uses the map's `var_y` column when present, otherwise
    /// `factor · var`.
    pub fn from_map(map: &SkyMap, factor: f64) -> Result<Self> {
        if let Some(vy) = &map.var_y {
            return Self::new(vy.clone(), VarianceSource::InputColumn);
        }
        if !(factor > 1.0) {
            return Err(Error::InvalidInput(format!(
                "observation variance factor must exceed 1, got {factor}"
            )));
        }
        Self::new(
            map.var.iter().map(|v| v * factor).collect(),
            VarianceSource::ConfiguredModel,
        )
    }

    pub fn new(sigma2_y: Vec<f64>, source: VarianceSource) -> Result<Self> {
        if sigma2_y.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "observation variances must be finite and nonnegative".into(),
            ));
        }
        Ok(NoiseModel { sigma2_y, source })
    }
}

/// Total signal variance `S` solving `σ²_M = S·σ²_Y / (S + σ²_Y)`.
pub fn signal_variance(pixel: usize, sigma2_m: f64, sigma2_y: f64) -> Result<f64> {
    if sigma2_m == 0.0 {
        return Ok(0.0);
    }
    if sigma2_m >= sigma2_y {
        return Err(Error::VarianceInversionPole {
            pixel,
            sigma2_m,
            sigma2_y,
        });
    }
    Ok(sigma2_m * sigma2_y / (sigma2_y - sigma2_m))
}

/// Splits the recovered signal variance between the components in
/// proportion to the ribbon fraction `f`.
pub fn recover_components(sigma2_m: &[f64], noise: &NoiseModel, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sigma2_m.len();
    if noise.sigma2_y.len() != n || f.len() != n {
        return Err(Error::InvalidInput("variance inputs have different lengths".into()));
    }
    let mut g = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        if !(0.0..=1.0).contains(&f[i]) {
            return Err(Error::InvalidInput(format!("ribbon fraction {} outside [0, 1]", f[i])));
        }
        let s = signal_variance(i, sigma2_m[i], noise.sigma2_y[i])?;
        r.push(f[i] * s);
        g.push((1.0 - f[i]) * s);
    }
    Ok((g, r))
}

/// `R / (R + G)`, zero where both vanish.
pub fn ribbon_fraction(gdf: &[f64], ribbon: &[f64]) -> Vec<f64> {
    gdf.iter()
        .zip(ribbon)
        .map(|(g, r)| {
            let t = g.max(0.0) + r.max(0.0);
            if t > 0.0 {
                r.max(0.0) / t
            } else {
                0.0
            }
        })
        .collect()
}

fn check(g: f64, r: f64, y: f64) -> Result<f64> {
    if !(g >= 0.0 && r >= 0.0 && y >= 0.0) {
        return Err(Error::InvalidInput("variances must be nonnegative".into()));
    }
    let t = g + r + y;
    if t == 0.0 {
        return Err(Error::AllZeroVariances);
    }
    Ok(t)
}

/// Covariance of `(G, R)` conditional on the observation.
pub fn conditional_variance(sigma2_g: f64, sigma2_r: f64, sigma2_y: f64) -> Result<Matrix2<f64>> {
    let t = check(sigma2_g, sigma2_r, sigma2_y)?;
    let (g, r, y) = (sigma2_g, sigma2_r, sigma2_y);
    let c = -g * r / t;
    Ok(Matrix2::new(g * (r + y) / t, c, c, r * (g + y) / t))
}

/// Conditional variance of `G + R`, `S·σ²_Y / (S + σ²_Y)` with `S = σ²_G + σ²_R`.
pub fn sum_variance(sigma2_g: f64, sigma2_r: f64, sigma2_y: f64) -> Result<f64> {
    let t = check(sigma2_g, sigma2_r, sigma2_y)?;
    Ok((sigma2_g + sigma2_r) * sigma2_y / t)
}

/// Extra variance from splitting the sum: `2σ²_Gσ²_R / (σ²_G + σ²_R + σ²_Y)`.
pub fn inflation(sigma2_g: f64, sigma2_r: f64, sigma2_y: f64) -> Result<f64> {
    let t = check(sigma2_g, sigma2_r, sigma2_y)?;
    Ok(2.0 * sigma2_g * sigma2_r / t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSplit {
    pub sigma2_g: Vec<f64>,
    pub sigma2_r: Vec<f64>,
    pub var_g_given_y: Vec<f64>,
    pub var_r_given_y: Vec<f64>,
    pub cov_gr_given_y: Vec<f64>,
    pub inflation: Vec<f64>,
}

/// Full per-pixel split. Pixels where every variance is zero get zeros.
pub fn split_variances(sigma2_m: &[f64], noise: &NoiseModel, f: &[f64]) -> Result<VarianceSplit> {
    let (sigma2_g, sigma2_r) = recover_components(sigma2_m, noise, f)?;
    let per_pixel: Vec<(f64, f64, f64, f64)> = (0..sigma2_m.len())
        .into_par_iter()
        .map(|i| {
            let (g, r, y) = (sigma2_g[i], sigma2_r[i], noise.sigma2_y[i]);
            if g + r + y == 0.0 {
                return (0.0, 0.0, 0.0, 0.0);
            }
            let m = conditional_variance(g, r, y).expect("checked nonnegative and nonzero");
            let inf = inflation(g, r, y).expect("checked nonnegative and nonzero");
            (m[(0, 0)], m[(1, 1)], m[(0, 1)], inf)
        })
        .collect();
    Ok(VarianceSplit {
        sigma2_g,
        sigma2_r,
        var_g_given_y: per_pixel.iter().map(|p| p.0).collect(),
        var_r_given_y: per_pixel.iter().map(|p| p.1).collect(),
        cov_gr_given_y: per_pixel.iter().map(|p| p.2).collect(),
        inflation: per_pixel.iter().map(|p| p.3).collect(),
    })
}
