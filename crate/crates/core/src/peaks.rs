//! Per-sector ribbon peak estimation in the ribbon-centric frame.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skygrid::SkyMap;
use crate::spline::NaturalCubic;

/// Lattice spacing, in degrees, for dense evaluation of interpolants.
pub const DENSE_STEP_DEG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakQuality {
    Ok,
    /// Replaced by the cross-sector smooth fit.
    Interpolated,
    /// Sector rates constant; the peak is unidentifiable.
    Flat,
    /// Interpolant maximum sits on the edge of the search band.
    Edge,
}

impl PeakQuality {
    pub fn is_valid(self) -> bool {
        matches!(self, PeakQuality::Ok | PeakQuality::Interpolated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibbonPeaks {
    pub sector_azimuth: Vec<f64>,
    pub peak_polar: Vec<f64>,
    pub peak_height: Vec<f64>,
    pub quality: Vec<PeakQuality>,
}

impl RibbonPeaks {
    pub fn len(&self) -> usize {
        self.peak_polar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak_polar.is_empty()
    }

    /// Peaks with every sector at the same polar angle and height.
    pub fn constant(n_sectors: usize, polar: f64, height: f64) -> Self {
        let pd = 360.0 / n_sectors as f64;
        RibbonPeaks {
            sector_azimuth: (0..n_sectors).map(|j| (j as f64 + 0.5) * pd).collect(),
            peak_polar: vec![polar; n_sectors],
            peak_height: vec![height; n_sectors],
            quality: vec![PeakQuality::Ok; n_sectors],
        }
    }
}

/// Polar interval searched for the peak, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarBand {
    pub lo: f64,
    pub hi: f64,
}

impl PolarBand {
    pub const fn new(lo: f64, hi: f64) -> Self {
        PolarBand { lo, hi }
    }

    pub fn contains(&self, polar: f64) -> bool {
        polar >= self.lo && polar <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

impl Default for PolarBand {
    fn default() -> Self {
        PolarBand::new(80.0, 130.0)
    }
}

/// Peak of one sector profile given as `(polar, rate)` samples in increasing
/// polar order.
pub fn cubic_peak(polar: &[f64], rate: &[f64], fallback: f64) -> Result<(f64, f64, PeakQuality)> {
    let (lo, hi) = rate
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
    if hi - lo <= 1e-12 {
        return Ok((fallback, lo.max(0.0), PeakQuality::Flat));
    }
    let spline = NaturalCubic::new(polar, rate)?;
    let (x0, x1) = spline.domain();
    let lattice = spline.lattice(x0, x1, DENSE_STEP_DEG);
    let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
    for (i, (_, v)) in lattice.iter().enumerate() {
        if *v > best {
            best = *v;
            best_i = i;
        }
    }
    let quality = if best_i == 0 || best_i + 1 == lattice.len() {
        PeakQuality::Edge
    } else {
        PeakQuality::Ok
    };
    Ok((lattice[best_i].0, best.max(0.0), quality))
}

/// Argmax of a natural cubic interpolant through each sector's samples inside
/// `band`, evaluated on a 0.01° lattice. Sectors are longitude columns.
pub fn estimate_peaks_cubic(map: &SkyMap, band: PolarBand) -> Result<RibbonPeaks> {
    let g = map.grid;
    if band.lo < 0.0 || band.hi > 180.0 || band.lo >= band.hi {
        return Err(Error::InvalidInput(format!("bad search band {:?}", band)));
    }
    // rows inside the band, ordered by increasing polar angle
    let rows: Vec<usize> = (0..g.n_lat)
        .rev()
        .filter(|k| band.contains(g.polar_center(*k)))
        .collect();
    if rows.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "search band {}..{} covers only {} pixel rows",
            band.lo,
            band.hi,
            rows.len()
        )));
    }
    let polar: Vec<f64> = rows.iter().map(|k| g.polar_center(*k)).collect();

    let per_sector: Vec<(f64, f64, PeakQuality)> = (0..g.n_lon)
        .into_par_iter()
        .map(|j| {
            let col = map.column(j);
            let rate: Vec<f64> = rows.iter().map(|k| col[*k]).collect();
            cubic_peak(&polar, &rate, band.mid())
        })
        .collect::<Result<_>>()?;

    Ok(RibbonPeaks {
        sector_azimuth: (0..g.n_lon).map(|j| g.lon_center(j)).collect(),
        peak_polar: per_sector.iter().map(|p| p.0).collect(),
        peak_height: per_sector.iter().map(|p| p.1).collect(),
        quality: per_sector.iter().map(|p| p.2).collect(),
    })
}

/// `A + B·exp(−(x − x_p)² / (2σ²))` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfileFit {
    pub a: f64,
    pub b: f64,
    pub x_p: f64,
    pub sigma: f64,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GaussianProfileFit {
    pub fn eval(&self, x: f64) -> f64 {
        let d = (x - self.x_p) / self.sigma;
        self.a + self.b * (-0.5 * d * d).exp()
    }

    /// Errors with `NoConvergence` unless the fit converged.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
            })
        }
    }
}

fn gaussian_rss(p: &Vector4<f64>, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let d = (xi - p[2]) / p[3];
            let r = yi - (p[0] + p[1] * (-0.5 * d * d).exp());
            r * r
        })
        .sum()
}

/// Levenberg–Marquardt fit of the Gaussian-type profile. A flat profile
/// returns `b = 0` with `converged = false`.
pub fn fit_gaussian_profile(rates: &[f64], polar: &[f64]) -> Result<GaussianProfileFit> {
    const MAX_ITER: usize = 500;
    let n = rates.len();
    if n != polar.len() || n < 5 {
        return Err(Error::InvalidInput(format!(
            "gaussian profile fit needs >= 5 matched samples, got {}/{}",
            n,
            polar.len()
        )));
    }
    let (imin, imax) = (0..n).fold((0, 0), |(lo, hi), i| {
        (
            if rates[i] < rates[lo] { i } else { lo },
            if rates[i] > rates[hi] { i } else { hi },
        )
    });
    let (ymin, ymax) = (rates[imin], rates[imax]);
    let xmin = polar.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = polar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ymax - ymin <= 1e-12 {
        return Ok(GaussianProfileFit {
            a: ymin,
            b: 0.0,
            x_p: 0.5 * (xmin + xmax),
            sigma: 0.25 * (xmax - xmin).max(1e-6),
            rss: 0.0,
            iterations: 0,
            converged: false,
        });
    }

    let half = ymin + 0.5 * (ymax - ymin);
    let above: Vec<f64> = (0..n).filter(|i| rates[*i] >= half).map(|i| polar[i]).collect();
    let span =
        above.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - above.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma0 = if span > 0.0 {
        span / 2.3548
    } else {
        0.25 * (xmax - xmin)
    };

    let mut p = Vector4::new(ymin, ymax - ymin, polar[imax], sigma0.max(1e-3));
    let mut rss = gaussian_rss(&p, polar, rates);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (xi, yi) in polar.iter().zip(rates) {
            let d = (xi - p[2]) / p[3];
            let e = (-0.5 * d * d).exp();
            let r = yi - (p[0] + p[1] * e);
            let jac = Vector4::new(1.0, e, p[1] * e * d / p[3], p[1] * e * d * d / p[3]);
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        let mut improved = false;
        for _ in 0..60 {
            let mut damped = jtj;
            for d in 0..4 {
                damped[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                mu *= 10.0;
                continue;
            };
            let mut trial = p + step;
            trial[1] = trial[1].max(0.0);
            trial[3] = trial[3].abs().max(1e-6);
            let trial_rss = gaussian_rss(&trial, polar, rates);
            if trial_rss <= rss {
                let rel = (rss - trial_rss) / rss.max(1e-300);
                let small_step = step.norm() <= 1e-12 * (1.0 + p.norm());
                p = trial;
                rss = trial_rss;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                if rel < 1e-14 || small_step || rss < 1e-28 {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if converged {
            break;
        }
        if !improved {
            // no downhill step exists at any damping: a stationary point
            converged = jtr.norm() <= 1e-8 * (1.0 + rss.sqrt());
            break;
        }
    }
    Ok(GaussianProfileFit {
        a: p[0],
        b: p[1],
        x_p: p[2],
        sigma: p[3],
        rss,
        iterations,
        converged,
    })
}

/// Parameters of the cross-sector outlier screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothPeaksConfig {
    /// Running-median window, in sectors (odd).
    pub window: usize,
    /// Outlier threshold in robust standard deviations.
    pub n_sd: f64,
    /// Floor on the robust standard deviation, in degrees.
    pub min_sd: f64,
    /// Harmonics in the periodic fit used to fill flagged sectors.
    pub harmonics: usize,
    /// Largest tolerated fraction of flagged sectors.
    pub max_flagged: f64,
}

impl Default for SmoothPeaksConfig {
    fn default() -> Self {
        SmoothPeaksConfig {
            window: 15,
            n_sd: 3.0,
            min_sd: 0.25,
            harmonics: 4,
            max_flagged: 0.5,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares Fourier series through `(angle_deg, value)` pairs.
fn fourier_fit(angles: &[f64], values: &[f64], harmonics: usize) -> impl Fn(f64) -> f64 {
    let p = 1 + 2 * harmonics;
    let row = move |t: f64| {
        let r = t.to_radians();
        let mut out = Vec::with_capacity(p);
        out.push(1.0);
        for h in 1..=harmonics {
            let (s, c) = (h as f64 * r).sin_cos();
            out.push(c);
            out.push(s);
        }
        out
    };
    let mut ata = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut atb = nalgebra::DVector::<f64>::zeros(p);
    for (t, v) in angles.iter().zip(values) {
        let r = row(*t);
        for a in 0..p {
            atb[a] += r[a] * v;
            for b in 0..p {
                ata[(a, b)] += r[a] * r[b];
            }
        }
    }
    for d in 0..p {
        ata[(d, d)] += 1e-10;
    }
    let coef = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .unwrap_or_else(|| nalgebra::DVector::zeros(p));
    move |t: f64| row(t).iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
}

/// Screens peak locations against a periodic running median and refills
/// flagged or unidentifiable sectors from a periodic smooth fit.
pub fn smooth_peaks(peaks: &RibbonPeaks, cfg: &SmoothPeaksConfig) -> Result<RibbonPeaks> {
    let n = peaks.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!("need at least 8 sectors, got {n}")));
    }
    let half = (cfg.window.max(1) / 2).min((n - 1) / 2);
    let valid: Vec<bool> = peaks.quality.iter().map(|q| q.is_valid()).collect();

    let med: Vec<Option<f64>> = (0..n)
        .map(|s| {
            let mut win: Vec<f64> = (0..=2 * half)
                .map(|o| (s + n + o - half) % n)
                .filter(|i| valid[*i])
                .map(|i| peaks.peak_polar[i])
                .collect();
            (!win.is_empty()).then(|| median(&mut win))
        })
        .collect();

    let mut dev: Vec<f64> = (0..n)
        .filter_map(|s| match (valid[s], med[s]) {
            (true, Some(m)) => Some((peaks.peak_polar[s] - m).abs()),
            _ => None,
        })
        .collect();
    let robust_sd = if dev.is_empty() {
        cfg.min_sd
    } else {
        (1.4826 * median(&mut dev)).max(cfg.min_sd)
    };

    let flagged: Vec<bool> = (0..n)
        .map(|s| match (valid[s], med[s]) {
            (true, Some(m)) => (peaks.peak_polar[s] - m).abs() > cfg.n_sd * robust_sd,
            _ => true,
        })
        .collect();
    let n_flagged = flagged.iter().filter(|f| **f).count();
    if n_flagged == 0 {
        return Ok(peaks.clone());
    }
    if n_flagged as f64 > cfg.max_flagged * n as f64 {
        return Err(Error::TooFewValid {
            valid: n - n_flagged,
            total: n,
        });
    }

    let keep: Vec<usize> = (0..n).filter(|s| !flagged[*s]).collect();
    let harmonics = cfg.harmonics.min((keep.len() - 1) / 2);
    let angles: Vec<f64> = keep.iter().map(|s| peaks.sector_azimuth[*s]).collect();
    let values: Vec<f64> = keep.iter().map(|s| peaks.peak_polar[*s]).collect();
    let fit = fourier_fit(&angles, &values, harmonics);

    let mut out = peaks.clone();
    for s in (0..n).filter(|s| flagged[*s]) {
        out.peak_polar[s] = fit(peaks.sector_azimuth[s]).clamp(0.0, 180.0);
        out.quality[s] = PeakQuality::Interpolated;
        // heights: periodic linear interpolation between nearest kept sectors
        let prev = (1..n).map(|o| (s + n - o) % n).find(|i| !flagged[*i]).unwrap();
        let next = (1..n).map(|o| (s + o) % n).find(|i| !flagged[*i]).unwrap();
        let dp = (s + n - prev) % n;
        let dn = (next + n - s) % n;
        let w = dp as f64 / (dp + dn) as f64;
        out.peak_height[s] = (1.0 - w) * peaks.peak_height[prev] + w * peaks.peak_height[next];
    }
    Ok(out)
}
