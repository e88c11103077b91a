//! GDF surface estimation: a very smooth log-link spherical fit refined by
//! two projection-pursuit passes on its residuals.

pub mod basis;
pub mod ppr;
pub mod smooth;

use serde::{Deserialize, Serialize};

pub use ppr::{fit_ppr_residuals, PPRFit, PprConfig, RidgeTerm};
pub use smooth::{fit_smooth_surface, fit_smooth_values, SmoothConfig, SmoothFit};

use crate::error::Result;
use crate::mask::RibbonMask;
use crate::skygrid::{SkyMap, UnitVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GdfConfig {
    pub smooth: SmoothConfig,
    pub ppr: PprConfig,
}

/// Cap on the second-pass PPR weights `|r| / mean|r|`.
pub const PASS2_WEIGHT_CAP: f64 = 5.0;

/// The three additive components and their truncated sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GdfSurface {
    pub smooth: SmoothFit,
    pub ppr1: Vec<f64>,
    pub ppr2: Vec<f64>,
    /// `max(smooth + ppr1 + ppr2, 0)` at every position.
    pub total: Vec<f64>,
}

/// Smooth fit on points with `include[i]`, then PPR on its residuals, then a
/// second PPR pass with weights proportional to the remaining |residual|.
pub fn gdf_surface(positions: &[UnitVec], values: &[f64], include: &[bool], cfg: &GdfConfig) -> Result<GdfSurface> {
    let n = positions.len();
    let w: Vec<f64> = include.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
    let smooth = fit_smooth_values(positions, values, &w, &cfg.smooth)?;
    let n_in = include.iter().filter(|b| **b).count();

    let mut ppr1 = vec![0.0; n];
    let mut ppr2 = vec![0.0; n];
    if n_in >= 50 {
        let r1: Vec<f64> = (0..n)
            .map(|i| if include[i] { values[i] - smooth.fitted[i] } else { 0.0 })
            .collect();
        ppr1 = fit_ppr_residuals(&r1, positions, &w, &cfg.ppr)?.fitted;

        let r2: Vec<f64> = (0..n).map(|i| if include[i] { r1[i] - ppr1[i] } else { 0.0 }).collect();
        let mean_abs = r2.iter().map(|r| r.abs()).sum::<f64>() / n_in as f64;
        if mean_abs > 0.0 {
            let w2: Vec<f64> = (0..n)
                .map(|i| {
                    if include[i] {
                        (r2[i].abs() / mean_abs).min(PASS2_WEIGHT_CAP)
                    } else {
                        0.0
                    }
                })
                .collect();
            if w2.iter().filter(|v| **v > 0.0).count() >= 50 {
                ppr2 = fit_ppr_residuals(&r2, positions, &w2, &cfg.ppr)?.fitted;
            }
        }
    }
    let total = (0..n)
        .map(|i| (smooth.fitted[i] + ppr1[i] + ppr2[i]).max(0.0))
        .collect();
    Ok(GdfSurface {
        smooth,
        ppr1,
        ppr2,
        total,
    })
}

/// Initial GDF: the input outside the mask, the truncated smooth + PPR
/// prediction inside it.
pub fn initial_gdf(map: &SkyMap, mask: &RibbonMask, cfg: &GdfConfig) -> Result<SkyMap> {
    if mask.is_empty() {
        return Ok(map.clone());
    }
    let g = map.grid;
    let inside = mask.pixels(&g);
    let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
    let surface = gdf_surface(&g.pixel_vectors(), &map.rate, &outside, cfg)?;
    let mut out = map.clone();
    for i in 0..g.len() {
        if inside[i] {
            out.rate[i] = surface.total[i];
        }
    }
    Ok(out)
}
