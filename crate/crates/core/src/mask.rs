//! Ribbon mask: the polar window around each sector's peak where ribbon
//! ENAs may be present, located with Sobel gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peaks::RibbonPeaks;
use crate::skygrid::{GridSpec, SkyMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Gradient percentile in (50, 100).
    pub u: f64,
    /// Half-window around the peak searched for gradients, degrees.
    pub v: f64,
    pub pad_pixels: usize,
}

impl MaskParams {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        let p = MaskParams { u, v, pad_pixels: 2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 50.0 && self.u < 100.0) {
            return Err(Error::InvalidInput(format!(
                "mask percentile u = {} outside (50, 100)",
                self.u
            )));
        }
        if !(self.v > 0.0 && self.v <= 45.0) {
            return Err(Error::InvalidInput(format!(
                "mask window v = {} outside (0, 45]",
                self.v
            )));
        }
        Ok(())
    }
}

/// Default `(u, v)` candidate grid.
pub fn default_candidates() -> Vec<MaskParams> {
    let mut out = Vec::new();
    for v in [10.0, 15.0, 20.0] {
        for u in [90.0, 95.0, 97.5] {
            out.push(MaskParams { u, v, pad_pixels: 2 });
        }
    }
    out
}

/// A global polar-offset window `[offset_lo, offset_hi]` (pixels) recentered
/// on every sector's peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibbonMask {
    pub azimuth: Vec<f64>,
    pub peak_polar: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub offset_lo: i32,
    pub offset_hi: i32,
    pub pixel_deg: f64,
}

impl RibbonMask {
    pub fn from_window(peaks: &RibbonPeaks, offset_lo: i32, offset_hi: i32, pixel_deg: f64) -> Self {
        let lower = peaks
            .peak_polar
            .iter()
            .map(|p| (p + offset_lo as f64 * pixel_deg).clamp(0.0, 180.0))
            .collect();
        let upper = peaks
            .peak_polar
            .iter()
            .map(|p| (p + offset_hi as f64 * pixel_deg).clamp(0.0, 180.0))
            .collect();
        RibbonMask {
            azimuth: peaks.sector_azimuth.clone(),
            peak_polar: peaks.peak_polar.clone(),
            lower,
            upper,
            offset_lo,
            offset_hi,
            pixel_deg,
        }
    }

    /// A mask containing no pixels.
    pub fn empty(peaks: &RibbonPeaks, pixel_deg: f64) -> Self {
        let mut m = Self::from_window(peaks, 0, 0, pixel_deg);
        m.offset_lo = 1;
        m.offset_hi = 0;
        m.lower = m.peak_polar.clone();
        m.upper = m.peak_polar.clone();
        m
    }

    pub fn is_empty(&self) -> bool {
        self.offset_lo > self.offset_hi
    }

    /// Pixel offset of row `k` from the peak of sector `j`.
    pub fn offset(&self, grid: &GridSpec, j: usize, k: usize) -> i32 {
        offset_from_peak(grid, self.peak_polar[j], k)
    }

    pub fn contains(&self, grid: &GridSpec, j: usize, k: usize) -> bool {
        let o = self.offset(grid, j, k);
        o >= self.offset_lo && o <= self.offset_hi
    }

    /// Per-pixel inclusion in map order.
    pub fn pixels(&self, grid: &GridSpec) -> Vec<bool> {
        (0..grid.len())
            .map(|i| {
                let (j, k) = grid.unindex(i);
                self.contains(grid, j, k)
            })
            .collect()
    }
}

/// Peak-relative offset of a row, rounded to whole pixels.
#[inline]
pub fn offset_from_peak(grid: &GridSpec, peak_polar: f64, k: usize) -> i32 {
    ((grid.polar_center(k) - peak_polar) / grid.pixel_deg).round() as i32
}

/// Row-major 2-D image, `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Image { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Sobel gradient magnitude. Columns wrap periodically when `wrap_cols` is
/// set; otherwise, and always for rows, the border is replicated.
pub fn sobel(image: &Image, wrap_cols: bool) -> Result<Image> {
    let (rows, cols) = (image.rows, image.cols);
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidInput(format!(
            "sobel needs at least 3x3, got {rows}x{cols}"
        )));
    }
    let row_at = |r: isize| r.clamp(0, rows as isize - 1) as usize;
    let col_at = |c: isize| {
        if wrap_cols {
            c.rem_euclid(cols as isize) as usize
        } else {
            c.clamp(0, cols as isize - 1) as usize
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let p = |dr: isize, dc: isize| image.get(row_at(r + dr), col_at(c + dc));
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            out[r as usize * cols + c as usize] = gx.hypot(gy);
        }
    }
    Ok(Image::new(rows, cols, out))
}

/// Map reorganized with sectors on the columns and peak-relative offsets
/// `-max_offset..=max_offset` on the rows. Offsets that fall off the sphere
/// replicate the nearest available row of the same sector.
pub fn offset_image(map: &SkyMap, peaks: &RibbonPeaks, max_offset: i32) -> Image {
    let g = map.grid;
    let rows = (2 * max_offset + 1) as usize;
    let mut data = vec![0.0; rows * g.n_lon];
    for j in 0..g.n_lon {
        let col = map.column(j);
        // row index k whose offset from this sector's peak is 0
        let k0 = (0..g.n_lat)
            .min_by(|a, b| {
                let da = (g.polar_center(*a) - peaks.peak_polar[j]).abs();
                let db = (g.polar_center(*b) - peaks.peak_polar[j]).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        for (r, o) in (-max_offset..=max_offset).enumerate() {
            // polar increases as k decreases
            let k = (k0 as i64 - o as i64).clamp(0, g.n_lat as i64 - 1) as usize;
            data[r * g.n_lon + j] = col[k];
        }
    }
    Image::new(rows, g.n_lon, data)
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Narrowest offset window containing every gradient in the top `u` percent
/// among rows within `v` degrees of the peak, widened by the pad. Gradients
/// must exceed the `(100 - u)`-th percentile strictly, so flat regions never
/// widen the window.
/// `offsets[r]` is the peak offset of image row `r`.
pub fn window_from_gradients(grad: &Image, offsets: &[i32], params: &MaskParams, pixel_deg: f64) -> Result<(i32, i32)> {
    let strip: Vec<(i32, f64)> = (0..grad.rows)
        .filter(|r| (offsets[*r] as f64 * pixel_deg).abs() <= params.v + 1e-9)
        .flat_map(|r| (0..grad.cols).map(move |c| (offsets[r], grad.get(r, c))))
        .collect();
    if strip.is_empty() {
        return Err(Error::EmptyGradientSet);
    }
    let values: Vec<f64> = strip.iter().map(|s| s.1).collect();
    let threshold = percentile(&values, 100.0 - params.u);
    let (mut lo, mut hi) = (0i32, 0i32);
    for (o, g) in &strip {
        if *g > threshold {
            lo = lo.min(*o);
            hi = hi.max(*o);
        }
    }
    let pad = params.pad_pixels as i32;
    Ok((lo - pad, hi + pad))
}

/// Builds the ribbon mask from Sobel gradients of the peak-aligned map.
pub fn build_mask(map: &SkyMap, peaks: &RibbonPeaks, params: &MaskParams) -> Result<RibbonMask> {
    params.validate()?;
    let pd = map.grid.pixel_deg;
    if peaks.len() != map.grid.n_lon {
        return Err(Error::InvalidInput("peaks do not match the map sectors".into()));
    }
    let max_offset = (params.v / pd).ceil() as i32 + 1;
    let image = offset_image(map, peaks, max_offset);
    let grad = sobel(&image, true)?;
    let offsets: Vec<i32> = (-max_offset..=max_offset).collect();
    let (lo, hi) = window_from_gradients(&grad, &offsets, params, pd)?;
    Ok(RibbonMask::from_window(peaks, lo, hi, pd))
}

/// Squared 5-point Laplacian at each pixel (longitude wraps).
fn laplacian_sq(grid: &GridSpec, values: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let (j, k) = grid.unindex(i);
            let jl = (j + grid.n_lon - 1) % grid.n_lon;
            let jr = (j + 1) % grid.n_lon;
            let kd = k.saturating_sub(1);
            let ku = (k + 1).min(grid.n_lat - 1);
            let lap = values[grid.index(jl, k)]
                + values[grid.index(jr, k)]
                + values[grid.index(j, kd)]
                + values[grid.index(j, ku)]
                - 4.0 * values[i];
            lap * lap
        })
        .collect()
}

/// Components of the `(u, v)` selection score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    /// Fraction of mask pixels where `input − gdf < 0` before truncation.
    pub negative_fraction: f64,
    /// Mean squared Laplacian of the GDF inside the mask over the same
    /// quantity in the surrounding polar band outside it.
    pub roughness_ratio: f64,
    pub total: f64,
}

pub fn selection_score(input: &SkyMap, gdf: &[f64], mask: &RibbonMask) -> SelectionScore {
    let g = input.grid;
    let inside = mask.pixels(&g);
    let n_in = inside.iter().filter(|b| **b).count();
    if n_in == 0 {
        return SelectionScore {
            negative_fraction: 0.0,
            roughness_ratio: 0.0,
            total: 0.0,
        };
    }
    let negative = (0..g.len())
        .filter(|i| inside[*i] && input.rate[*i] - gdf[*i] < 0.0)
        .count();
    let negative_fraction = negative as f64 / n_in as f64;

    let lo = mask.lower.iter().cloned().fold(f64::INFINITY, f64::min) - 20.0;
    let hi = mask.upper.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 20.0;
    let lap = laplacian_sq(&g, gdf);
    let (mut sum_in, mut sum_out, mut n_out) = (0.0, 0.0, 0usize);
    for i in 0..g.len() {
        let (_, k) = g.unindex(i);
        if inside[i] {
            sum_in += lap[i];
        } else {
            let p = g.polar_center(k);
            if p >= lo && p <= hi {
                sum_out += lap[i];
                n_out += 1;
            }
        }
    }
    let rough_in = sum_in / n_in as f64;
    let rough_out = if n_out > 0 { sum_out / n_out as f64 } else { 0.0 };
    let roughness_ratio = if rough_out > 0.0 {
        rough_in / rough_out
    } else if rough_in > 0.0 {
        1e6
    } else {
        0.0
    };
    SelectionScore {
        negative_fraction,
        roughness_ratio,
        total: negative_fraction + roughness_ratio,
    }
}

/// Candidates in tie-break order: smaller `v` first, then smaller `u`.
pub fn tie_break_order(candidates: &[MaskParams]) -> Vec<MaskParams> {
    let mut c = candidates.to_vec();
    c.sort_by(|a, b| a.v.partial_cmp(&b.v).unwrap().then(a.u.partial_cmp(&b.u).unwrap()));
    c
}

/// Index of the lowest score, first in order on ties.
pub fn argmin_score(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Runs the full separation for each candidate and returns the parameters
/// with the lowest selection score.
pub fn select_mask_params(
    map: &SkyMap,
    peaks: &RibbonPeaks,
    candidates: &[MaskParams],
    cfg: &crate::ribbonfit::SeparationConfig,
) -> Result<MaskParams> {
    let (best, _) = crate::ribbonfit::select_and_separate(map, peaks, candidates, cfg)?;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobel_constant_is_zero() {
        let img = Image::new(5, 6, vec![3.0; 30]);
        assert!(sobel(&img, true).unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobel_step_edge_peaks_on_edge() {
        let cols = 8;
        let data: Vec<f64> = (0..5 * cols).map(|i| if i % cols >= 4 { 1.0 } else { 0.0 }).collect();
        let g = sobel(&Image::new(5, cols, data), false).unwrap();
        for r in 0..5 {
            let row: Vec<f64> = (0..cols).map(|c| g.get(r, c)).collect();
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(row[3], max);
            assert_eq!(row[4], max);
            assert_eq!(row[0], 0.0);
            assert_eq!(row[7], 0.0);
        }
    }

    #[test]
    fn sobel_ramp_magnitude_is_eight() {
        let (rows, cols) = (6, 7);
        let data: Vec<f64> = (0..rows * cols).map(|i| (i % cols) as f64).collect();
        let g = sobel(&Image::new(rows, cols, data), false).unwrap();
        for r in 1..rows - 1 {
            for c in 1..cols - 1 {
                assert_eq!(g.get(r, c), 8.0);
            }
        }
    }

    #[test]
    fn sobel_rejects_tiny_image() {
        assert!(sobel(&Image::new(2, 5, vec![0.0; 10]), true).is_err());
    }

    fn grad_with(rows_on: &[(i32, f64)], max_offset: i32, cols: usize) -> (Image, Vec<i32>) {
        let offsets: Vec<i32> = (-max_offset..=max_offset).collect();
        let mut data = vec![0.0; offsets.len() * cols];
        for (r, o) in offsets.iter().enumerate() {
            if let Some((_, v)) = rows_on.iter().find(|(oo, _)| oo == o) {
                for c in 0..cols {
                    data[r * cols + c] = *v;
                }
            }
        }
        (Image::new(offsets.len(), cols, data), offsets)
    }

    #[test]
    fn window_from_near_peak_gradients() {
        let (img, offs) = grad_with(&[(-1, 1.0), (0, 1.0), (1, 1.0)], 6, 30);
        let p = MaskParams {
            u: 90.0,
            v: 10.0,
            pad_pixels: 2,
        };
        let (lo, hi) = window_from_gradients(&img, &offs, &p, 2.0).unwrap();
        // ±(2° + 2 pixels) at 2° per pixel
        assert_eq!((lo as f64 * 2.0, hi as f64 * 2.0), (-6.0, 6.0));
    }

    #[test]
    fn window_catches_spike_inside_v_only() {
        let (img, offs) = grad_with(&[(-1, 1.0), (0, 1.0), (1, 1.0), (3, 50.0)], 6, 30);
        let p = MaskParams {
            u: 99.0,
            v: 10.0,
            pad_pixels: 2,
        };
        let (_, hi) = window_from_gradients(&img, &offs, &p, 2.0).unwrap();
        assert!(hi as f64 * 2.0 >= 6.0 + 4.0);
        let p4 = MaskParams {
            u: 99.0,
            v: 4.0,
            pad_pixels: 2,
        };
        let (lo, hi) = window_from_gradients(&img, &offs, &p4, 2.0).unwrap();
        assert_eq!((lo, hi), (-3, 3));
    }

    #[test]
    fn window_without_gradients_is_pad_only() {
        let (img, offs) = grad_with(&[], 6, 30);
        let p = MaskParams {
            u: 99.99,
            v: 10.0,
            pad_pixels: 2,
        };
        assert_eq!(window_from_gradients(&img, &offs, &p, 2.0).unwrap(), (-2, 2));
    }

    #[test]
    fn window_needs_rows_within_v() {
        let img = Image::new(2, 4, vec![1.0; 8]);
        let p = MaskParams {
            u: 90.0,
            v: 1.0,
            pad_pixels: 2,
        };
        assert_eq!(
            window_from_gradients(&img, &[5, 6], &p, 2.0),
            Err(Error::EmptyGradientSet)
        );
    }

    #[test]
    fn params_validated() {
        assert!(MaskParams::new(95.0, 15.0).is_ok());
        assert!(MaskParams::new(40.0, 15.0).is_err());
        assert!(MaskParams::new(95.0, 50.0).is_err());
    }

    #[test]
    fn tie_break_prefers_small_v_then_u() {
        let c = vec![
            MaskParams {
                u: 95.0,
                v: 15.0,
                pad_pixels: 2,
            },
            MaskParams {
                u: 97.5,
                v: 10.0,
                pad_pixels: 2,
            },
            MaskParams {
                u: 90.0,
                v: 10.0,
                pad_pixels: 2,
            },
        ];
        let o = tie_break_order(&c);
        assert_eq!((o[0].u, o[0].v), (90.0, 10.0));
        assert_eq!((o[2].u, o[2].v), (95.0, 15.0));
        assert_eq!(argmin_score(&[1.0, 0.5, 0.5]), Some(1));
    }

    #[test]
    fn negative_ribbon_raises_score() {
        let g = GridSpec::from_pixel_deg(6.0).unwrap();
        let input = SkyMap::new(
            g,
            crate::skygrid::FrameSpec::ECLIPTIC,
            vec![1.0; g.len()],
            vec![0.0; g.len()],
        )
        .unwrap();
        let peaks = RibbonPeaks::constant(g.n_lon, 93.0, 1.0);
        let mask = RibbonMask::from_window(&peaks, -2, 2, 6.0);
        let inside = mask.pixels(&g);
        let clean = vec![0.9; g.len()];
        let mut leaky = clean.clone();
        for i in 0..g.len() {
            if inside[i] {
                leaky[i] = 1.1;
            }
        }
        let s_clean = selection_score(&input, &clean, &mask);
        let s_leaky = selection_score(&input, &leaky, &mask);
        assert_eq!(s_clean.negative_fraction, 0.0);
        assert_eq!(s_leaky.negative_fraction, 1.0);
        assert!(s_clean.total < s_leaky.total);
    }
}
