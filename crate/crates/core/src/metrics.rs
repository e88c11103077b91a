//! Accuracy metrics against truth maps and ribbon morphology summaries.
//!
//! The interval penalty in [`wis`] is the usual additive one:
//! `(l − y)·1{y < l} + (y − u)·1{y > u}`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::peaks::{PolarBand, DENSE_STEP_DEG};
use crate::skygrid::SkyMap;
use crate::spline::NaturalCubic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WisConfig {
    pub alphas: Vec<f64>,
    pub band: PolarBand,
}

impl Default for WisConfig {
    fn default() -> Self {
        WisConfig {
            alphas: vec![0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            band: PolarBand::default(),
        }
    }
}

impl WisConfig {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for a in &self.alphas {
            if !(*a > prev && *a < 1.0) {
                return Err(Error::InvalidInput(
                    "alphas must be strictly increasing in (0, 1)".into(),
                ));
            }
            prev = *a;
        }
        if !(self.band.lo < self.band.hi) {
            return Err(Error::InvalidInput("empty evaluation band".into()));
        }
        Ok(())
    }
}

/// Weighted interval score of one point estimate with central intervals
/// `intervals[m]` at levels `alphas[m]`.
pub fn wis(est: f64, truth: f64, intervals: &[(f64, f64)], alphas: &[f64]) -> f64 {
    let m = intervals.len().min(alphas.len());
    let mut s = (est - truth).abs();
    for (&(l, u), &a) in intervals.iter().zip(alphas).take(m) {
        s += 0.5 * a * (u - l).abs();
        if truth < l {
            s += l - truth;
        }
        if truth > u {
            s += truth - u;
        }
    }
    s / (m as f64 + 0.5)
}

/// Normal central intervals `est ± z_{1−α/2}·sd` for every α.
pub fn normal_intervals(est: f64, var: f64, alphas: &[f64]) -> Vec<(f64, f64)> {
    let sd = var.max(0.0).sqrt();
    let n = Normal::standard();
    alphas
        .iter()
        .map(|a| {
            let z = n.inverse_cdf(1.0 - a / 2.0);
            (est - z * sd, est + z * sd)
        })
        .collect()
}

/// Fraction of `truth` values inside `est ± z·sqrt(var)`.
pub fn coverage(est: &[f64], truth: &[f64], var: &[f64], z: f64) -> f64 {
    let n = est.len().min(truth.len()).min(var.len());
    if n == 0 {
        return f64::NAN;
    }
    let hit = (0..n)
        .filter(|i| {
            let h = z * var[*i].max(0.0).sqrt();
            truth[*i] >= est[*i] - h && truth[*i] <= est[*i] + h
        })
        .count();
    hit as f64 / n as f64
}

/// Average ranks, ties sharing the mean of their positions (1-based).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].partial_cmp(&x[*b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for t in i..=j {
            r[idx[t]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Width of the region where the cubic interpolant is at least half its
/// maximum, on a 0.01° lattice.
pub fn profile_fwhm(rates: &[f64], polar: &[f64]) -> Result<f64> {
    if rates.len() != polar.len() || rates.len() < 2 {
        return Err(Error::InvalidInput("profile needs matching rates and angles".into()));
    }
    if !(rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > 0.0) {
        return Err(Error::ZeroProfile);
    }
    let spline = NaturalCubic::new(polar, rates)?;
    let (lo, hi) = spline.domain();
    let lattice = spline.lattice(lo, hi, DENSE_STEP_DEG);
    let max = lattice.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let half = 0.5 * max;
    let above: Vec<f64> = lattice.iter().filter(|p| p.1 >= half).map(|p| p.0).collect();
    let first = above.first().copied().unwrap_or(lo);
    let last = above.last().copied().unwrap_or(lo);
    Ok(last - first)
}

/// Third standardized moment of the offsets weighted by the (nonnegative
/// part of the) rates.
pub fn profile_skewness(rates: &[f64], offsets: &[f64]) -> Result<f64> {
    if rates.len() != offsets.len() {
        return Err(Error::InvalidInput("profile needs matching rates and offsets".into()));
    }
    let w: Vec<f64> = rates.iter().map(|r| r.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroProfile);
    }
    let mean = w.iter().zip(offsets).map(|(w, x)| w * x).sum::<f64>() / total;
    let m2 = w.iter().zip(offsets).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() / total;
    let m3 = w.iter().zip(offsets).map(|(w, x)| w * (x - mean).powi(3)).sum::<f64>() / total;
    if !(m2 > 1e-300) {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_pixels: usize,
    pub mean_abs_pct_error: f64,
    pub spearman: f64,
    pub mean_wis: f64,
    pub coverage_95: f64,
    /// Set when coverage falls below one half.
    pub coverage_regression: bool,
    pub per_sector_skewness: Vec<Option<f64>>,
    pub per_sector_fwhm: Vec<Option<f64>>,
}

/// Coverage below this is flagged in [`EvalReport::coverage_regression`].
pub const COVERAGE_FLOOR: f64 = 0.5;

/// Compares an estimated GDF (with conditional variances in `var`) to the
/// truth over the band rows. Morphology is taken from `ribbon` if given.
pub fn eval_gdf_report(est: &SkyMap, truth: &SkyMap, ribbon: Option<&SkyMap>, cfg: &WisConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if !est.same_layout(truth) || ribbon.is_some_and(|r| !r.same_layout(truth)) {
        return Err(Error::GridMismatch);
    }
    let g = est.grid;
    let pixels: Vec<usize> = (0..g.len())
        .filter(|i| cfg.band.contains(g.polar_center(g.unindex(*i).1)))
        .collect();
    if pixels.is_empty() {
        return Err(Error::EmptyBand);
    }
    let e: Vec<f64> = pixels.iter().map(|i| est.rate[*i]).collect();
    let t: Vec<f64> = pixels.iter().map(|i| truth.rate[*i]).collect();

    let pct: Vec<f64> = e
        .iter()
        .zip(&t)
        .filter(|(_, t)| **t > 0.0)
        .map(|(e, t)| (e - t).abs() / t)
        .collect();
    let mean_abs_pct_error = if pct.is_empty() {
        f64::NAN
    } else {
        pct.iter().sum::<f64>() / pct.len() as f64
    };

    let v: Vec<f64> = pixels.iter().map(|i| est.var[*i]).collect();
    let wis_sum: f64 = (0..pixels.len())
        .map(|n| wis(e[n], t[n], &normal_intervals(e[n], v[n], &cfg.alphas), &cfg.alphas))
        .sum();
    let coverage_95 = coverage(&e, &t, &v, Normal::standard().inverse_cdf(0.975));

    let (skew, fwhm) = match ribbon {
        Some(r) => sector_morphology(r, cfg.band),
        None => (Vec::new(), Vec::new()),
    };
    Ok(EvalReport {
        n_pixels: pixels.len(),
        mean_abs_pct_error,
        spearman: spearman(&e, &t),
        mean_wis: wis_sum / pixels.len() as f64,
        coverage_95,
        coverage_regression: coverage_95 < COVERAGE_FLOOR,
        per_sector_skewness: skew,
        per_sector_fwhm: fwhm,
    })
}

/// Skewness and FWHM of every sector's profile, offsets measured from the
/// sample maximum inside `band`.
pub fn sector_morphology(ribbon: &SkyMap, band: PolarBand) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let g = ribbon.grid;
    let rows: Vec<usize> = (0..g.n_lat).rev().collect();
    let polar: Vec<f64> = rows.iter().map(|k| g.polar_center(*k)).collect();
    let mut skew = Vec::with_capacity(g.n_lon);
    let mut fwhm = Vec::with_capacity(g.n_lon);
    for j in 0..g.n_lon {
        let rates: Vec<f64> = rows.iter().map(|k| ribbon.at(j, *k)).collect();
        let peak = polar
            .iter()
            .zip(&rates)
            .filter(|(p, _)| band.contains(**p))
            .fold(
                (f64::NAN, f64::NEG_INFINITY),
                |a, (p, r)| if *r > a.1 { (*p, *r) } else { a },
            )
            .0;
        let offsets: Vec<f64> = polar.iter().map(|p| p - peak).collect();
        skew.push(profile_skewness(&rates, &offsets).ok().filter(|_| peak.is_finite()));
        fwhm.push(profile_fwhm(&rates, &polar).ok().filter(|w| *w > 0.0));
    }
    (skew, fwhm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wis_examples() {
        assert_eq!(wis(1.0, 1.0, &[(1.0, 1.0)], &[0.5]), 0.0);
        assert_eq!(wis(3.0, 1.5, &[], &[]), 3.0);
        assert!((wis(1.0, 1.0, &[(0.5, 1.5)], &[0.5]) - 1.0 / 6.0).abs() < 1e-12);
        // truth below the interval
        let s = wis(1.0, 0.0, &[(0.5, 1.5)], &[0.5]);
        assert!((s - (1.0 + 0.25 + 0.5) / 1.5).abs() < 1e-12);
    }

    #[test]
    fn intervals_are_symmetric_and_nested() {
        let iv = normal_intervals(2.0, 0.25, &[0.05, 0.5]);
        assert!((iv[0].1 - 2.0 - 1.959963984540054 * 0.5).abs() < 1e-9);
        assert!(iv[0].0 < iv[1].0 && iv[1].1 < iv[0].1);
    }

    #[test]
    fn spearman_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&a, &[10.0, 20.0, 25.0, 100.0]), 1.0);
        assert_eq!(spearman(&a, &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn gaussian_fwhm() {
        let polar: Vec<f64> = (0..=40).map(|i| 60.0 + 2.0 * i as f64).collect();
        let rates: Vec<f64> = polar
            .iter()
            .map(|p| (-0.5 * ((p - 100.0) / 8.0).powi(2)).exp())
            .collect();
        let w = profile_fwhm(&rates, &polar).unwrap();
        assert!((w - 18.84).abs() <= 0.05, "{w}");
    }

    #[test]
    fn rectangular_fwhm() {
        let polar: Vec<f64> = (0..=3000).map(|i| 70.0 + 0.01 * i as f64).collect();
        let rates: Vec<f64> = polar
            .iter()
            .map(|p| if (p - 85.0).abs() <= 6.0 { 1.0 } else { 0.0 })
            .collect();
        let w = profile_fwhm(&rates, &polar).unwrap();
        assert!((w - 12.0).abs() <= 0.01 + 1e-9, "{w}");
    }

    #[test]
    fn zero_profile() {
        assert_eq!(
            profile_fwhm(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            Err(Error::ZeroProfile)
        );
        assert_eq!(profile_skewness(&[0.0; 3], &[1.0, 2.0, 3.0]), Err(Error::ZeroProfile));
    }

    #[test]
    fn skewness_cases() {
        let s = profile_skewness(&[0.75, 0.25], &[-1.0, 3.0]).unwrap();
        assert!((s - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let sym = profile_skewness(&[1.0, 2.0, 3.0, 2.0, 1.0], &[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(sym.abs() < 1e-12);
        assert_eq!(profile_skewness(&[0.0, 4.0, 0.0], &[-1.0, 0.0, 1.0]).unwrap(), 0.0);
    }
}
