//! Projection pursuit regression of residual surfaces on pixel positions.
//!
//! Terms are added greedily. For each term the projection direction is picked
//! from a Fibonacci lattice on the hemisphere and refined by local search; the
//! ridge function is a penalized cubic B-spline in the projection with the
//! penalty weight chosen by GCV.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skygrid::UnitVec;
use crate::spline::{difference_penalty, gcv_select, log_grid, BSplineBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    pub n_terms: usize,
    /// Size of the initial direction lattice.
    pub n_directions: usize,
    /// B-spline intervals of each ridge function.
    pub ridge_intervals: usize,
    /// Smallest relative drop in weighted RSS worth another term.
    pub min_gain: f64,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            n_terms: 4,
            n_directions: 160,
            ridge_intervals: 20,
            min_gain: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeTerm {
    pub direction: [f64; 3],
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub coef: Vec<f64>,
}

impl RidgeTerm {
    fn basis(&self) -> BSplineBasis {
        BSplineBasis {
            lo: self.lo,
            hi: self.hi,
            intervals: self.intervals,
        }
    }

    pub fn eval(&self, p: &UnitVec) -> f64 {
        let t = self.direction[0] * p.x + self.direction[1] * p.y + self.direction[2] * p.z;
        let (i, w) = self.basis().eval(t);
        (0..4).map(|c| w[c] * self.coef[i + c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPRFit {
    pub terms: Vec<RidgeTerm>,
    /// Sum of all ridge terms at every input position.
    pub fitted: Vec<f64>,
}

impl PPRFit {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn predict(&self, p: &UnitVec) -> f64 {
        self.terms.iter().map(|t| t.eval(p)).sum()
    }
}

/// Quasi-uniform directions on the upper hemisphere (z ≥ 0).
pub fn hemisphere_lattice(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

struct RidgeSolve {
    term: RidgeTerm,
    rss: f64,
}

fn fit_ridge(
    dir: &Vector3<f64>,
    positions: &[UnitVec],
    target: &[f64],
    weights: &[f64],
    intervals: usize,
    lambdas: &[f64],
) -> Option<RidgeSolve> {
    let proj: Vec<f64> = positions
        .iter()
        .map(|p| dir.x * p.x + dir.y * p.y + dir.z * p.z)
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, w) in proj.iter().zip(weights) {
        if *w > 0.0 {
            lo = lo.min(*t);
            hi = hi.max(*t);
        }
    }
    if !(hi - lo > 1e-9) {
        return None;
    }
    let basis = BSplineBasis { lo, hi, intervals };
    let p = basis.len();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwz = DVector::<f64>::zeros(p);
    let mut ztwz = 0.0;
    let mut n_pos = 0.0;
    for ((t, z), w) in proj.iter().zip(target).zip(weights) {
        if *w <= 0.0 {
            continue;
        }
        n_pos += 1.0;
        let (i, b) = basis.eval(*t);
        for a in 0..4 {
            xtwz[i + a] += w * b[a] * z;
            for c in 0..4 {
                xtwx[(i + a, i + c)] += w * b[a] * b[c];
            }
        }
        ztwz += w * z * z;
    }
    // keep λ commensurate with the data scale
    let scale = (0..p).map(|d| xtwx[(d, d)]).sum::<f64>() / p as f64;
    let penalty = difference_penalty(p, 2) * scale.max(1e-300);
    let fit = gcv_select(&xtwx, &xtwz, ztwz, n_pos, &penalty, lambdas).ok()?;
    let rss = (ztwz - 2.0 * fit.coef.dot(&xtwz) + fit.coef.dot(&(&xtwx * &fit.coef))).max(0.0);
    Some(RidgeSolve {
        term: RidgeTerm {
            direction: [dir.x, dir.y, dir.z],
            lo,
            hi,
            intervals,
            coef: fit.coef.iter().cloned().collect(),
        },
        rss,
    })
}

fn tangent_basis(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - a * a.dot(&helper)).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

/// Greedy forward fit of up to `n_terms` ridge functions to `residuals`.
pub fn fit_ppr_residuals(residuals: &[f64], positions: &[UnitVec], weights: &[f64], cfg: &PprConfig) -> Result<PPRFit> {
    let n = positions.len();
    if residuals.len() != n || weights.len() != n {
        return Err(Error::InvalidInput("PPR inputs have different lengths".into()));
    }
    if cfg.n_terms == 0 {
        return Err(Error::InvalidInput("PPR needs at least one term".into()));
    }
    let n_pos = weights.iter().filter(|w| **w > 0.0).count();
    if n_pos < 50 {
        return Err(Error::InvalidInput(format!(
            "PPR needs at least 50 weighted pixels, got {n_pos}"
        )));
    }
    let lambdas = log_grid(-6.0, 3.0, 10);
    let mut current: Vec<f64> = residuals.to_vec();
    let mut rss: f64 = current.iter().zip(weights).map(|(r, w)| w * r * r).sum();
    let mut terms = Vec::new();
    let lattice = hemisphere_lattice(cfg.n_directions.max(1));

    for _ in 0..cfg.n_terms {
        if rss <= 1e-300 {
            break;
        }
        let mut best: Option<RidgeSolve> = None;
        let mut best_dir = Vector3::z();
        for d in &lattice {
            if let Some(s) = fit_ridge(d, positions, &current, weights, cfg.ridge_intervals, &lambdas) {
                if best.as_ref().is_none_or(|b| s.rss < b.rss) {
                    best_dir = *d;
                    best = Some(s);
                }
            }
        }
        let Some(mut best) = best else { break };

        let mut step = 4f64.to_radians();
        while step > 0.1f64.to_radians() {
            let mut moved = true;
            let mut rounds = 0;
            while moved && rounds < 10 {
                moved = false;
                rounds += 1;
                let (e1, e2) = tangent_basis(&best_dir);
                for delta in [e1, -e1, e2, -e2] {
                    let cand = (best_dir + delta * step.tan()).normalize();
                    if let Some(s) = fit_ridge(&cand, positions, &current, weights, cfg.ridge_intervals, &lambdas) {
                        if s.rss < best.rss {
                            best_dir = cand;
                            best = s;
                            moved = true;
                        }
                    }
                }
            }
            step *= 0.5;
        }

        if rss - best.rss < cfg.min_gain * rss {
            break;
        }
        for (i, p) in positions.iter().enumerate() {
            current[i] -= best.term.eval(p);
        }
        rss = current.iter().zip(weights).map(|(r, w)| w * r * r).sum();
        terms.push(best.term);
    }

    let fitted = positions
        .iter()
        .map(|p| terms.iter().map(|t| t.eval(p)).sum())
        .collect();
    Ok(PPRFit { terms, fitted })
}
