//! Ribbon profile modelling and the full GDF/ribbon separation.
//!
//! The initial ribbon (input minus the masked GDF fit) is scaled by its
//! per-sector maximum, smoothed across azimuth row by row in peak-relative
//! offset, projected to be non-increasing away from the peak, and rescaled.
//! The GDF is then re-fitted to the input minus that ribbon.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdf::{gdf_surface, initial_gdf, GdfConfig};
use crate::mask::{build_mask, selection_score, tie_break_order, MaskParams, RibbonMask, SelectionScore};
use crate::peaks::{estimate_peaks_cubic, smooth_peaks, PolarBand, RibbonPeaks, SmoothPeaksConfig};
use crate::skygrid::SkyMap;
use crate::spline::{difference_penalty, PeriodicBasis};
use crate::uncertainty::{ribbon_fraction, split_variances, NoiseModel, VarianceSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub band: PolarBand,
    pub smooth_peaks: SmoothPeaksConfig,
    pub gdf: GdfConfig,
    /// Cyclic basis functions across azimuth, between 4 and 12.
    pub azimuth_basis: usize,
    /// Observation variance as a multiple of the map variance when the map
    /// carries no `var_y` column.
    pub var_y_factor: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            band: PolarBand::default(),
            smooth_peaks: SmoothPeaksConfig::default(),
            gdf: GdfConfig::default(),
            azimuth_basis: 12,
            var_y_factor: 2.0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(4..=12).contains(&self.azimuth_basis) {
            return Err(Error::InvalidInput(format!(
                "azimuth_basis must be in 4..=12, got {}",
                self.azimuth_basis
            )));
        }
        if !(self.var_y_factor > 1.0) {
            return Err(Error::InvalidInput("var_y_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Per-sector scaled ribbon values, sector-major over offsets
/// `offset_lo..=offset_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledRibbon {
    pub offset_lo: i32,
    pub offset_hi: i32,
    pub n_sectors: usize,
    /// `None` where the offset falls off the grid.
    pub values: Vec<Option<f64>>,
    pub heights: Vec<f64>,
    /// Sectors with no positive ribbon; excluded from the profile fit.
    pub flagged: Vec<bool>,
}

impl ScaledRibbon {
    fn n_offsets(&self) -> usize {
        (self.offset_hi - self.offset_lo + 1).max(0) as usize
    }

    pub fn get(&self, sector: usize, offset: i32) -> Option<f64> {
        if offset < self.offset_lo || offset > self.offset_hi {
            return None;
        }
        self.values[sector * self.n_offsets() + (offset - self.offset_lo) as usize]
    }
}

/// Divides the initial ribbon by its per-sector maximum inside the mask.
pub fn scale_ribbon(init_ribbon: &SkyMap, mask: &RibbonMask) -> ScaledRibbon {
    let g = init_ribbon.grid;
    let (lo, hi) = (mask.offset_lo, mask.offset_hi);
    let n_off = (hi - lo + 1).max(0) as usize;
    let mut values = vec![None; g.n_lon * n_off];
    let mut heights = vec![0.0; g.n_lon];
    for j in 0..g.n_lon {
        for k in 0..g.n_lat {
            if mask.contains(&g, j, k) {
                heights[j] = f64::max(heights[j], init_ribbon.at(j, k));
            }
        }
    }
    let flagged: Vec<bool> = heights.iter().map(|h| !(*h > 0.0)).collect();
    for j in 0..g.n_lon {
        for k in 0..g.n_lat {
            let o = mask.offset(&g, j, k);
            if o < lo || o > hi {
                continue;
            }
            let v = if flagged[j] {
                0.0
            } else {
                init_ribbon.at(j, k) / heights[j]
            };
            values[j * n_off + (o - lo) as usize] = Some(v);
        }
    }
    ScaledRibbon {
        offset_lo: lo,
        offset_hi: hi,
        n_sectors: g.n_lon,
        values,
        heights,
        flagged,
    }
}

/// Weighted-free pool-adjacent-violators projection onto non-increasing
/// sequences.
pub fn pava_nonincreasing(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for v in y {
        blocks.push((*v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat_n(s / c as f64, c));
    }
    out
}

/// Makes one sector's profile (indexed by offset `lo..=hi`, containing 0)
/// non-increasing in |offset| and nonnegative.
pub fn monotone_sector(profile: &[f64], offset_lo: i32) -> Vec<f64> {
    let zero = (-offset_lo) as usize;
    let right = pava_nonincreasing(&profile[zero..]);
    let left_in: Vec<f64> = profile[..=zero].iter().rev().cloned().collect();
    let left = pava_nonincreasing(&left_in);
    let mut out = profile.to_vec();
    for (i, v) in right.iter().enumerate() {
        out[zero + i] = *v;
    }
    for (i, v) in left.iter().enumerate() {
        out[zero - i] = *v;
    }
    out[zero] = right[0].max(left[0]);
    out.iter().map(|v| v.max(0.0)).collect()
}

/// Fitted scaled ribbon surface over (sector, offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibbonProfileModel {
    pub offset_lo: i32,
    pub offset_hi: i32,
    pub n_sectors: usize,
    pub azimuth_basis: usize,
    /// Azimuth-smoothed surface before the monotone projection.
    pub smooth: Vec<f64>,
    /// Final surface, sector-major.
    pub values: Vec<f64>,
    pub heights: Vec<f64>,
}

impl RibbonProfileModel {
    pub fn n_offsets(&self) -> usize {
        (self.offset_hi - self.offset_lo + 1) as usize
    }

    pub fn at(&self, sector: usize, offset: i32) -> f64 {
        if offset < self.offset_lo || offset > self.offset_hi {
            return 0.0;
        }
        self.values[sector * self.n_offsets() + (offset - self.offset_lo) as usize]
    }

    pub fn sector(&self, sector: usize) -> &[f64] {
        let n = self.n_offsets();
        &self.values[sector * n..(sector + 1) * n]
    }
}

/// Least-squares periodic B-spline fit across azimuth of `(azimuth, value)`
/// pairs, evaluated at `at`.
fn periodic_smooth(points: &[(f64, f64)], n_basis: usize, at: &[f64]) -> Vec<f64> {
    if points.is_empty() {
        return vec![0.0; at.len()];
    }
    let basis = PeriodicBasis {
        n: n_basis,
        period: 360.0,
    };
    let mut xtx = DMatrix::<f64>::zeros(n_basis, n_basis);
    let mut xty = DVector::<f64>::zeros(n_basis);
    for (t, y) in points {
        let w = basis.eval(*t);
        for (a, wa) in w {
            xty[a] += wa * y;
            for (b, wb) in w {
                xtx[(a, b)] += wa * wb;
            }
        }
    }
    // light curvature penalty keeps gaps from going singular
    let scale = (0..n_basis).map(|d| xtx[(d, d)]).sum::<f64>() / n_basis as f64;
    let a =
        &xtx + difference_penalty(n_basis, 2) * (1e-6 * scale) + DMatrix::identity(n_basis, n_basis) * (1e-10 * scale);
    let coef = match a.cholesky() {
        Some(c) => c.solve(&xty),
        None => return vec![0.0; at.len()],
    };
    at.iter()
        .map(|t| basis.eval(*t).iter().map(|(i, w)| w * coef[*i]).sum())
        .collect()
}

/// Smooths every offset row across azimuth, then projects each sector to
/// be non-increasing in |offset| and nonnegative.
pub fn fit_ribbon_profile(scaled: &ScaledRibbon, azimuth: &[f64], azimuth_basis: usize) -> Result<RibbonProfileModel> {
    if scaled.offset_lo > scaled.offset_hi {
        return Err(Error::InvalidInput("ribbon profile fit needs a nonempty mask".into()));
    }
    if scaled.offset_lo > 0 || scaled.offset_hi < 0 {
        return Err(Error::InvalidInput("mask window must contain the peak row".into()));
    }
    let n_sec = scaled.n_sectors;
    let n_off = scaled.n_offsets();
    let n_basis = azimuth_basis.min(n_sec).max(4);
    let rows: Vec<Vec<f64>> = (scaled.offset_lo..=scaled.offset_hi)
        .into_par_iter()
        .map(|o| {
            let pts: Vec<(f64, f64)> = (0..n_sec)
                .filter(|j| !scaled.flagged[*j])
                .filter_map(|j| scaled.get(j, o).map(|v| (azimuth[j], v)))
                .collect();
            periodic_smooth(&pts, n_basis, azimuth)
        })
        .collect();

    let mut smooth = vec![0.0; n_sec * n_off];
    for j in 0..n_sec {
        for (r, row) in rows.iter().enumerate() {
            smooth[j * n_off + r] = row[j];
        }
    }
    let values: Vec<f64> = (0..n_sec)
        .into_par_iter()
        .flat_map_iter(|j| monotone_sector(&smooth[j * n_off..(j + 1) * n_off], scaled.offset_lo))
        .collect();
    Ok(RibbonProfileModel {
        offset_lo: scaled.offset_lo,
        offset_hi: scaled.offset_hi,
        n_sectors: n_sec,
        azimuth_basis: n_basis,
        smooth,
        values,
        heights: scaled.heights.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    /// Estimated GDF; `var` holds the conditional variance.
    pub gdf: SkyMap,
    /// Estimated ribbon; `var` holds the conditional variance.
    pub ribbon: SkyMap,
    pub var_g: Vec<f64>,
    pub var_r: Vec<f64>,
    pub cov_gr: Vec<f64>,
    pub variances: VarianceSplit,
    pub mask: RibbonMask,
    pub peaks: RibbonPeaks,
    pub params: MaskParams,
    pub profile: Option<RibbonProfileModel>,
    pub score: SelectionScore,
    /// Score of every candidate, in tie-break order.
    pub candidate_scores: Vec<(MaskParams, SelectionScore)>,
}

/// Separation for one fixed set of mask parameters.
pub fn separate_with(
    input: &SkyMap,
    peaks: &RibbonPeaks,
    params: &MaskParams,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    let g = input.grid;
    let mask = build_mask(input, peaks, params)?;
    let inside = mask.pixels(&g);

    let (gdf_rate, profile) = if mask.is_empty() {
        (input.rate.clone(), None)
    } else {
        let g0 = initial_gdf(input, &mask, &cfg.gdf)?;
        let mut r0 = input.clone();
        for i in 0..g.len() {
            r0.rate[i] = if inside[i] {
                (input.rate[i] - g0.rate[i]).max(0.0)
            } else {
                0.0
            };
        }
        let scaled = scale_ribbon(&r0, &mask);
        let profile = fit_ribbon_profile(&scaled, &peaks.sector_azimuth, cfg.azimuth_basis)?;

        let fitted_ribbon: Vec<f64> = (0..g.len())
            .map(|i| {
                let (j, k) = g.unindex(i);
                profile.heights[j] * profile.at(j, mask.offset(&g, j, k))
            })
            .collect();
        let residual: Vec<f64> = (0..g.len()).map(|i| input.rate[i] - fitted_ribbon[i]).collect();
        let refit = gdf_surface(&g.pixel_vectors(), &residual, &vec![true; g.len()], &cfg.gdf)?;
        let rate = (0..g.len())
            .map(|i| if inside[i] { refit.total[i] } else { input.rate[i] })
            .collect();
        (rate, Some(profile))
    };
    let ribbon_rate: Vec<f64> = (0..g.len())
        .map(|i| {
            if inside[i] {
                (input.rate[i] - gdf_rate[i]).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let score = selection_score(input, &gdf_rate, &mask);

    let noise = NoiseModel::from_map(input, cfg.var_y_factor)?;
    let f = ribbon_fraction(&gdf_rate, &ribbon_rate);
    let variances = split_variances(&input.var, &noise, &f)?;

    let mut gdf = SkyMap::new(g, input.frame, gdf_rate, variances.var_g_given_y.clone())?;
    let mut ribbon = SkyMap::new(g, input.frame, ribbon_rate, variances.var_r_given_y.clone())?;
    gdf.var_y = None;
    ribbon.var_y = None;
    Ok(SeparationResult {
        gdf,
        ribbon,
        var_g: variances.var_g_given_y.clone(),
        var_r: variances.var_r_given_y.clone(),
        cov_gr: variances.cov_gr_given_y.clone(),
        variances,
        mask,
        peaks: peaks.clone(),
        params: *params,
        profile,
        score,
        candidate_scores: Vec::new(),
    })
}

/// Runs the separation for every candidate in parallel and keeps the one
/// with the lowest selection score; ties go to smaller `v`, then smaller `u`.
pub fn select_and_separate(
    input: &SkyMap,
    peaks: &RibbonPeaks,
    candidates: &[MaskParams],
    cfg: &SeparationConfig,
) -> Result<(MaskParams, SeparationResult)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no mask candidates".into()));
    }
    let ordered = tie_break_order(candidates);
    let runs: Vec<Result<SeparationResult>> = ordered
        .par_iter()
        .map(|p| separate_with(input, peaks, p, cfg))
        .collect();
    let mut candidate_scores = Vec::new();
    let mut best: Option<SeparationResult> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                candidate_scores.push((r.params, r.score));
                if best.as_ref().is_none_or(|b| r.score.total < b.score.total) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let mut best = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one candidate ran")),
    };
    best.candidate_scores = candidate_scores;
    Ok((best.params, best))
}

/// Peaks of the input in the ribbon-centric frame, screened for outliers.
pub fn find_peaks(input: &SkyMap, cfg: &SeparationConfig) -> Result<RibbonPeaks> {
    let raw = estimate_peaks_cubic(input, cfg.band)?;
    smooth_peaks(&raw, &cfg.smooth_peaks)
}

/// Full separation of a map already in the ribbon-centric frame.
pub fn separate(input: &SkyMap, candidates: &[MaskParams], cfg: &SeparationConfig) -> Result<SeparationResult> {
    let peaks = find_peaks(input, cfg)?;
    Ok(select_and_separate(input, &peaks, candidates, cfg)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_examples() {
        assert_eq!(pava_nonincreasing(&[3.0, 2.0, 1.0]), vec![3.0, 2.0, 1.0]);
        assert_eq!(pava_nonincreasing(&[1.0, 3.0]), vec![2.0, 2.0]);
        assert_eq!(pava_nonincreasing(&[4.0, 1.0, 3.0, 0.0]), vec![4.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn monotone_sector_triangle_unchanged() {
        let p = [0.2, 0.6, 1.0, 0.5, 0.1];
        assert_eq!(monotone_sector(&p, -2), p.to_vec());
    }

    #[test]
    fn monotone_sector_peak_takes_larger_side() {
        // right side pools (0.5, 1.0) to 0.75, left side keeps 0.5
        let out = monotone_sector(&[0.25, 0.5, 1.0, 0.125], -1);
        assert_eq!(out, vec![0.25, 0.75, 0.75, 0.125]);
    }

    #[test]
    fn periodic_smooth_reproduces_constants() {
        let pts: Vec<(f64, f64)> = (0..36).map(|j| (j as f64 * 10.0 + 5.0, 0.4)).collect();
        let at: Vec<f64> = pts.iter().map(|p| p.0).collect();
        for v in periodic_smooth(&pts, 12, &at) {
            assert!((v - 0.4).abs() < 1e-9);
        }
    }
}
