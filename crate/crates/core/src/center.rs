//! Ribbon-center estimation.
//!
//! Each pseudo-posterior draw resamples the input map with a Kronecker
//! correlated Gaussian field, finds the ribbon peaks in a working frame, fits
//! a plane through them and an ellipse to their in-plane projection, samples
//! the ellipse center from its jackknife covariance, and intersects the
//! plane normal through that center with the unit sphere.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdf::{fit_smooth_values, SmoothConfig};
use crate::peaks::{estimate_peaks_cubic, smooth_peaks, PolarBand, RibbonPeaks, SmoothPeaksConfig};
use crate::skygrid::{latlon_to_vec, make_rotation, vec_to_latlon, FrameSpec, ReframePlan, SkyMap, UnitVec};

/// Correlation factors along latitude rows and longitude columns.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerCorr {
    /// `K × K`.
    pub lat: DMatrix<f64>,
    /// `J × J`, circular in longitude.
    pub lon: DMatrix<f64>,
    /// Fitted decay lengths in pixels.
    pub lat_length: f64,
    pub lon_length: f64,
}

/// Diagonal jitter added to each factor.
pub const CORR_JITTER: f64 = 1e-6;
const MAX_LAG: usize = 10;

impl KroneckerCorr {
    pub fn identity(n_lon: usize, n_lat: usize) -> Self {
        KroneckerCorr {
            lat: DMatrix::identity(n_lat, n_lat),
            lon: DMatrix::identity(n_lon, n_lon),
            lat_length: 0.0,
            lon_length: 0.0,
        }
    }

    /// Full correlation, `lon ⊗ lat`, indexed like map pixels.
    pub fn full(&self) -> DMatrix<f64> {
        self.lon.kronecker(&self.lat)
    }
}

/// Exponential correlation `exp(−d/L)`, shrunk toward the identity.
fn exp_corr(n: usize, length: f64, circular: bool) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            return 1.0;
        }
        let mut d = a.abs_diff(b) as f64;
        if circular {
            d = d.min(n as f64 - d);
        }
        let rho = if length > 0.0 { (-d / length).exp() } else { 0.0 };
        rho * (1.0 - CORR_JITTER)
    })
}

/// Least-squares decay length for lag correlations `rho[h-1]`, h = 1..
pub fn fit_decay_length(rho: &[f64]) -> f64 {
    let sse = |l: f64| -> f64 {
        rho.iter()
            .enumerate()
            .map(|(i, r)| (r - (-((i + 1) as f64) / l).exp()).powi(2))
            .sum()
    };
    // log-spaced scan then golden refinement in log space
    let grid: Vec<f64> = (0..=200).map(|i| -2.0 + 5.0 * i as f64 / 200.0).collect();
    let mut best = grid[0];
    for g in &grid {
        if sse(10f64.powf(*g)) < sse(10f64.powf(best)) {
            best = *g;
        }
    }
    let (mut a, mut b) = (best - 0.025, best + 0.025);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if sse(10f64.powf(c)) < sse(10f64.powf(d)) {
            b = d;
        } else {
            a = c;
        }
    }
    10f64.powf(0.5 * (a + b))
}

/// Empirical lag correlations of a `J × K` residual field (pixel `j*K + k`).
pub fn lag_correlations(resid: &[f64], n_lon: usize, n_lat: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |j: usize, k: usize| resid[j * n_lat + k];
    let total: f64 = resid.iter().map(|e| e * e).sum();
    let lon: Vec<f64> = (1..=MAX_LAG.min(n_lon - 1))
        .map(|h| {
            let mut s = 0.0;
            for j in 0..n_lon {
                for k in 0..n_lat {
                    s += at(j, k) * at((j + h) % n_lon, k);
                }
            }
            if total > 0.0 {
                s / total
            } else {
                0.0
            }
        })
        .collect();
    let lat: Vec<f64> = (1..=MAX_LAG.min(n_lat - 1))
        .map(|h| {
            let (mut s, mut a2, mut b2) = (0.0, 0.0, 0.0);
            for j in 0..n_lon {
                for k in 0..n_lat - h {
                    s += at(j, k) * at(j, k + h);
                    a2 += at(j, k).powi(2);
                    b2 += at(j, k + h).powi(2);
                }
            }
            if a2 > 0.0 && b2 > 0.0 {
                s / (a2 * b2).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    (lon, lat)
}

/// Kronecker factors from residuals of a residual field directly.
pub fn kron_corr_from_residuals(resid: &[f64], n_lon: usize, n_lat: usize) -> Result<KroneckerCorr> {
    if n_lon < 8 || n_lat < 8 {
        return Err(Error::InvalidInput(
            "Kronecker correlation needs at least 8 rows and columns".into(),
        ));
    }
    if resid.len() != n_lon * n_lat {
        return Err(Error::InvalidInput("residual field does not match the grid".into()));
    }
    let (rho_lon, rho_lat) = lag_correlations(resid, n_lon, n_lat);
    let lon_length = fit_decay_length(&rho_lon);
    let lat_length = fit_decay_length(&rho_lat);
    Ok(KroneckerCorr {
        lat: exp_corr(n_lat, lat_length, false),
        lon: exp_corr(n_lon, lon_length, true),
        lat_length,
        lon_length,
    })
}

/// Factors fitted to the residuals of a smooth spherical fit of the map.
pub fn estimate_kron_corr(map: &SkyMap) -> Result<KroneckerCorr> {
    let g = map.grid;
    let cfg = SmoothConfig {
        degree: 8,
        ..SmoothConfig::default()
    };
    let fit = fit_smooth_values(&g.pixel_vectors(), &map.rate, &vec![1.0; g.len()], &cfg)?;
    let resid: Vec<f64> = map.rate.iter().zip(&fit.fitted).map(|(r, f)| r - f).collect();
    kron_corr_from_residuals(&resid, g.n_lon, g.n_lat)
}

/// Lower Cholesky factor, with growing jitter if needed.
fn chol_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut jitter = 0.0;
    for _ in 0..12 {
        let a = m + DMatrix::identity(m.nrows(), m.nrows()) * jitter;
        if let Some(c) = a.cholesky() {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
    Err(Error::IllConditioned)
}

/// Square-root factors for repeated sampling.
#[derive(Debug, Clone)]
pub struct KronSampler {
    l_lon: DMatrix<f64>,
    l_lat: DMatrix<f64>,
}

impl KronSampler {
    pub fn new(corr: &KroneckerCorr) -> Result<Self> {
        Ok(KronSampler {
            l_lon: chol_factor(&corr.lon)?,
            l_lat: chol_factor(&corr.lat)?,
        })
    }

    /// Draw `index` of the stream seeded by `seed`, truncated at 0.
    pub fn draw(&self, map: &SkyMap, seed: u64, index: u64) -> SkyMap {
        let (nj, nk) = (self.l_lon.nrows(), self.l_lat.nrows());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let z = DMatrix::<f64>::from_fn(nj, nk, |_, _| StandardNormal.sample(&mut rng));
        let x = &self.l_lon * z * self.l_lat.transpose();
        let mut out = map.clone();
        for j in 0..nj {
            for k in 0..nk {
                let i = j * nk + k;
                out.rate[i] = (map.rate[i] + map.var[i].sqrt() * x[(j, k)]).max(0.0);
            }
        }
        out
    }
}

/// `n` correlated resamples of `map`, deterministic given `seed`.
pub fn draw_maps(map: &SkyMap, corr: &KroneckerCorr, n: usize, seed: u64) -> Result<Vec<SkyMap>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let g = map.grid;
    if corr.lon.nrows() != g.n_lon || corr.lat.nrows() != g.n_lat {
        return Err(Error::GridMismatch);
    }
    let sampler = KronSampler::new(corr)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| sampler.draw(map, seed, i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub normal: [f64; 3],
    pub offset: f64,
    pub rms: f64,
}

impl PlaneFit {
    pub fn normal_vec(&self) -> Vector3<f64> {
        Vector3::from(self.normal)
    }

    /// In-plane axes: `x` is ecliptic x projected onto the plane (ecliptic y
    /// when nearly parallel to the normal), `y = n × x`.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal_vec();
        let mut e1 = Vector3::x() - n * n.x;
        if e1.norm() < 1e-6 {
            e1 = Vector3::y() - n * n.y;
        }
        let e1 = e1.normalize();
        (e1, n.cross(&e1))
    }

    /// 3-D point on the plane with in-plane coordinates `xy`.
    pub fn lift(&self, xy: Vector2<f64>) -> Vector3<f64> {
        let (e1, e2) = self.axes();
        self.normal_vec() * self.offset + e1 * xy.x + e2 * xy.y
    }
}

/// Orthogonal-regression plane through `points`.
pub fn fit_plane_svd(points: &[Vector3<f64>]) -> Result<PlaneFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!("plane fit needs 3 points, got {n}")));
    }
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let m = DMatrix::from_fn(n, 3, |i, c| points[i][c] - centroid[c]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::IllConditioned)?;
    let sv = &svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| sv[*a].partial_cmp(&sv[*b]).unwrap());
    let smax = sv[order[2]];
    if !(smax > 0.0) || sv[order[1]] <= 1e-10 * smax {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    let row = v_t.row(order[0]);
    let mut normal = Vector3::new(row[0], row[1], row[2]).normalize();
    if normal.dot(&centroid) < 0.0 {
        normal = -normal;
    }
    let offset = normal.dot(&centroid);
    let rms = (points.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(PlaneFit {
        normal: [normal.x, normal.y, normal.z],
        offset,
        rms,
    })
}

/// Rotation taking unit vector `a` onto unit vector `b` (Rodrigues).
pub fn rodrigues(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let v = a.cross(b);
    let s = v.norm();
    let c = a.dot(b);
    if s < 1e-15 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // half turn about any axis perpendicular to a
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let k = a.cross(&helper).normalize();
        return Matrix3::identity() * -1.0 + k * k.transpose() * 2.0;
    }
    let k = v / s;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

/// Projects onto the plane, rotates the plane normal to +z, and returns the
/// in-plane coordinates on the axes of [`PlaneFit::axes`].
pub fn project_to_plane(points: &[Vector3<f64>], plane: &PlaneFit) -> Vec<Vector2<f64>> {
    let n = plane.normal_vec();
    let r = rodrigues(&n, &Vector3::z());
    let (e1, _) = plane.axes();
    let a = r * e1;
    let psi = a.y.atan2(a.x);
    let (s, c) = psi.sin_cos();
    points
        .iter()
        .map(|p| {
            let on_plane = p - n * (n.dot(p) - plane.offset);
            let q = r * on_plane;
            Vector2::new(c * q.x + s * q.y, -s * q.x + c * q.y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub center: [f64; 2],
    /// Semi-major and semi-minor axes.
    pub a: f64,
    pub b: f64,
    /// Direction of the major axis, radians in (−π/2, π/2].
    pub angle: f64,
    /// `A x² + B xy + C y² + D x + E y + F`.
    pub conic: [f64; 6],
}

fn null_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let cands = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let mut best = cands[0];
    for c in &cands[1..] {
        if c.norm() > best.norm() {
            best = *c;
        }
    }
    best
}

/// Direct least-squares ellipse fit (numerically stable variant).
pub fn fit_ellipse(points: &[Vector2<f64>]) -> Result<EllipseFit> {
    let n = points.len();
    if n < 6 {
        return Err(Error::DegenerateGeometry(format!(
            "ellipse fit needs 6 points, got {n}"
        )));
    }
    // normalize for conditioning
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n as f64;
    let scale = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n as f64).sqrt();
    if !(scale > 0.0) {
        return Err(Error::NotAnEllipse);
    }
    let pts: Vec<Vector2<f64>> = points.iter().map(|p| (p - mean) / scale).collect();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in &pts {
        let d1 = Vector3::new(p.x * p.x, p.x * p.y, p.y * p.y);
        let d2 = Vector3::new(p.x, p.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let eig = s3.symmetric_eigenvalues();
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |a, e| (a.0.min(*e), a.1.max(*e)));
    if !(emin > 1e-12 * emax) {
        return Err(Error::NotAnEllipse);
    }
    let s3_inv = s3.try_inverse().ok_or(Error::NotAnEllipse)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    let m = Matrix3::new(
        m[(2, 0)] / 2.0,
        m[(2, 1)] / 2.0,
        m[(2, 2)] / 2.0,
        -m[(1, 0)],
        -m[(1, 1)],
        -m[(1, 2)],
        m[(0, 0)] / 2.0,
        m[(0, 1)] / 2.0,
        m[(0, 2)] / 2.0,
    );

    let mut chosen: Option<Vector3<f64>> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let v = null_vector(&(m - Matrix3::identity() * ev.re));
        if v.norm() == 0.0 {
            continue;
        }
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            chosen = Some(v);
        }
    }
    let a1 = chosen.ok_or(Error::NotAnEllipse)?;
    let a2 = t * a1;
    let (an, bn, cn, dn, en, fn_) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);

    // back to the original coordinates: x' = (x − m)/s
    let (mx, my, s) = (mean.x, mean.y, scale);
    let a = an / (s * s);
    let b = bn / (s * s);
    let c = cn / (s * s);
    let d = dn / s - 2.0 * a * mx - b * my;
    let e = en / s - 2.0 * c * my - b * mx;
    let f = fn_ + an * mx * mx / (s * s) + bn * mx * my / (s * s) + cn * my * my / (s * s) - dn * mx / s - en * my / s;
    conic_to_ellipse([a, b, c, d, e, f])
}

/// Geometric parameters of an ellipse given as a conic.
pub fn conic_to_ellipse(conic: [f64; 6]) -> Result<EllipseFit> {
    let [a, b, c, d, e, f] = conic;
    if !(b * b - 4.0 * a * c < 0.0) {
        return Err(Error::NotAnEllipse);
    }
    let q = Matrix2::new(2.0 * a, b, b, 2.0 * c);
    let center = q.try_inverse().ok_or(Error::NotAnEllipse)? * Vector2::new(-d, -e);
    let (x0, y0) = (center.x, center.y);
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    let sym = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let eig = sym.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let r0 = -f0 / l0;
    let r1 = -f0 / l1;
    if !(r0 > 0.0 && r1 > 0.0) {
        return Err(Error::NotAnEllipse);
    }
    // the smaller eigenvalue belongs to the major axis
    let (major, ax_a, ax_b) = if r0 >= r1 {
        (0, r0.sqrt(), r1.sqrt())
    } else {
        (1, r1.sqrt(), r0.sqrt())
    };
    let v = eig.eigenvectors.column(major);
    let mut angle = v[1].atan2(v[0]);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    } else if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    Ok(EllipseFit {
        center: [x0, y0],
        a: ax_a,
        b: ax_b,
        angle,
        conic,
    })
}

/// Leave-one-out jackknife covariance of the fitted ellipse center.
pub fn jackknife_center_cov(points: &[Vector2<f64>]) -> Result<Matrix2<f64>> {
    let n = points.len();
    if n < 7 {
        return Err(Error::InvalidInput(format!(
            "jackknife needs at least 7 points, got {n}"
        )));
    }
    let centers: Vec<Result<Vector2<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sub: Vec<Vector2<f64>> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| *p)
                .collect();
            fit_ellipse(&sub).map(|e| Vector2::from(e.center))
        })
        .collect();
    let centers: Vec<Vector2<f64>> = centers.into_iter().collect::<Result<_>>()?;
    Ok(jackknife_cov(&centers))
}

/// `(n−1)/n · Σ (θᵢ − θ̄)(θᵢ − θ̄)ᵀ` over leave-one-out estimates.
pub fn jackknife_cov(estimates: &[Vector2<f64>]) -> Matrix2<f64> {
    let n = estimates.len() as f64;
    // deviations from the first estimate keep identical inputs exactly zero
    let origin = estimates[0];
    let mean = estimates.iter().fold(Vector2::zeros(), |a, c| a + (c - origin)) / n;
    let mut cov = Matrix2::zeros();
    for c in estimates {
        let d = (c - origin) - mean;
        cov += d * d.transpose();
    }
    cov * ((n - 1.0) / n)
}

/// Mean great-circle distance in degrees from `v` to `points`.
fn mean_angle(v: &Vector3<f64>, points: &[Vector3<f64>]) -> f64 {
    points.iter().map(|p| v.cross(p).norm().atan2(v.dot(p))).sum::<f64>() / points.len() as f64
}

/// Intersection of the line `p0 + t·n` with the unit sphere closest, in mean
/// angular distance, to `peaks`.
pub fn line_sphere_intersection(p0: &Vector3<f64>, n: &Vector3<f64>, peaks: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    let b = p0.dot(n);
    let disc = b * b - (p0.norm_squared() - 1.0);
    if !(disc >= 0.0) {
        return Err(Error::DegenerateGeometry("center line misses the unit sphere".into()));
    }
    let r = disc.sqrt();
    let cands = [p0 + n * (-b + r), p0 + n * (-b - r)];
    let best = if mean_angle(&cands[0], peaks) <= mean_angle(&cands[1], peaks) {
        cands[0]
    } else {
        cands[1]
    };
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterConfig {
    pub n_draws: usize,
    pub seed: u64,
    /// Peak search band in the working frame.
    pub band: PolarBand,
    pub micro: usize,
    pub smooth_peaks: SmoothPeaksConfig,
    /// Largest tolerated fraction of failed draws.
    pub max_failed: f64,
    pub max_iter: usize,
    pub tol_deg: f64,
}

impl Default for CenterConfig {
    fn default() -> Self {
        CenterConfig {
            n_draws: 100,
            seed: 0,
            band: PolarBand::new(55.0, 125.0),
            micro: 3,
            smooth_peaks: SmoothPeaksConfig::default(),
            max_failed: 0.2,
            max_iter: 10,
            tol_deg: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterEstimate {
    /// Ecliptic `(lon, lat)` of every successful draw, in draw order.
    pub draws: Vec<(f64, f64)>,
    pub mean_lon: f64,
    pub mean_lat: f64,
    /// Covariance of `(lon, lat)` in degrees², longitude unwrapped about the mean.
    pub covariance: [[f64; 2]; 2],
    pub n_map_draws: usize,
    pub n_failed: usize,
    pub n_iterations: usize,
    pub converged: bool,
    /// Working center used at each iteration followed by the final mean.
    pub trace: Vec<(f64, f64)>,
}

/// Circular mean longitude and arithmetic mean latitude.
pub fn mean_lonlat(draws: &[(f64, f64)]) -> (f64, f64) {
    let (s, c) = draws.iter().fold((0.0, 0.0), |(s, c), (lon, _)| {
        (s + lon.to_radians().sin(), c + lon.to_radians().cos())
    });
    let lon = s.atan2(c).to_degrees().rem_euclid(360.0);
    let lat = draws.iter().map(|d| d.1).sum::<f64>() / draws.len() as f64;
    (lon, lat)
}

fn lonlat_cov(draws: &[(f64, f64)], mean: (f64, f64)) -> [[f64; 2]; 2] {
    let n = draws.len() as f64;
    if draws.len() < 2 {
        return [[0.0; 2]; 2];
    }
    let mut m = [[0.0; 2]; 2];
    for (lon, lat) in draws {
        let dl = (lon - mean.0 + 180.0).rem_euclid(360.0) - 180.0;
        let db = lat - mean.1;
        m[0][0] += dl * dl;
        m[0][1] += dl * db;
        m[1][1] += db * db;
    }
    for r in m.iter_mut() {
        for v in r.iter_mut() {
            *v /= n - 1.0;
        }
    }
    m[1][0] = m[0][1];
    m
}

/// Peak positions as ecliptic unit vectors.
pub fn peak_vectors(peaks: &RibbonPeaks, frame: &FrameSpec) -> Vec<Vector3<f64>> {
    (0..peaks.len())
        .map(|j| {
            let v = latlon_to_vec(peaks.sector_azimuth[j], 90.0 - peaks.peak_polar[j]);
            frame.from_frame(v).to_vector()
        })
        .collect()
}

/// One center draw from peak points, using `rng` for the ellipse-center
/// sample. Returns an ecliptic unit vector.
pub fn center_from_points<R: rand::Rng>(points: &[Vector3<f64>], rng: &mut R) -> Result<Vector3<f64>> {
    let plane = fit_plane_svd(points)?;
    let xy = project_to_plane(points, &plane);
    let ellipse = fit_ellipse(&xy)?;
    let cov = jackknife_center_cov(&xy)?;
    let eig = cov.symmetric_eigen();
    let sqrt = eig.eigenvectors
        * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let z = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    let c = Vector2::from(ellipse.center) + sqrt * z;
    line_sphere_intersection(&plane.lift(c), &plane.normal_vec(), points)
}

/// Pseudo-posterior draws of the ribbon center with one working frame.
pub fn estimate_center(map: &SkyMap, working_center: (f64, f64), cfg: &CenterConfig) -> Result<CenterEstimate> {
    if cfg.n_draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let corr = estimate_kron_corr(map)?;
    estimate_center_with(map, &corr, working_center, cfg)
}

/// As [`estimate_center`] with precomputed correlation factors.
pub fn estimate_center_with(
    map: &SkyMap,
    corr: &KroneckerCorr,
    working_center: (f64, f64),
    cfg: &CenterConfig,
) -> Result<CenterEstimate> {
    if cfg.n_draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let frame = make_rotation(working_center.0, working_center.1, 0.0);
    let plan = ReframePlan::new(map.grid, map.frame, frame, cfg.micro.max(1))?;
    let sampler = KronSampler::new(corr)?;
    let results: Vec<Result<(f64, f64)>> = (0..cfg.n_draws as u64)
        .into_par_iter()
        .map(|i| {
            let drawn = sampler.draw(map, cfg.seed, i);
            let framed = plan.apply(&drawn)?;
            let raw = estimate_peaks_cubic(&framed, cfg.band)?;
            let peaks = smooth_peaks(&raw, &cfg.smooth_peaks)?;
            let pts = peak_vectors(&peaks, &frame);
            // separate stream for the ellipse-center sample
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(i);
            let v = center_from_points(&pts, &mut rng)?;
            Ok(vec_to_latlon(UnitVec::from_vector(v).ok_or(Error::IllConditioned)?))
        })
        .collect();
    let draws: Vec<(f64, f64)> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = cfg.n_draws - draws.len();
    if draws.is_empty() || n_failed as f64 > cfg.max_failed * cfg.n_draws as f64 {
        return Err(Error::TooManyFailedDraws {
            failed: n_failed,
            total: cfg.n_draws,
        });
    }
    let mean = mean_lonlat(&draws);
    Ok(CenterEstimate {
        covariance: lonlat_cov(&draws, mean),
        draws,
        mean_lon: mean.0,
        mean_lat: mean.1,
        n_map_draws: cfg.n_draws,
        n_failed,
        n_iterations: 1,
        converged: true,
        trace: vec![working_center, mean],
    })
}

/// Repeats [`estimate_center`], re-centering the working frame on the last
/// mean, until it moves less than `cfg.tol_deg` or `cfg.max_iter` is reached.
pub fn iterate_center(map: &SkyMap, initial_center: (f64, f64), cfg: &CenterConfig) -> Result<CenterEstimate> {
    if cfg.max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be at least 1".into()));
    }
    let corr = estimate_kron_corr(map)?;
    let mut working = initial_center;
    let mut trace = vec![initial_center];
    let mut last = None;
    for it in 1..=cfg.max_iter {
        let mut est = estimate_center_with(map, &corr, working, cfg)?;
        let next = (est.mean_lon, est.mean_lat);
        trace.push(next);
        let moved = latlon_to_vec(working.0, working.1).angle_to(&latlon_to_vec(next.0, next.1));
        est.n_iterations = it;
        est.converged = moved < cfg.tol_deg;
        est.trace = trace.clone();
        let done = est.converged;
        last = Some(est);
        if done {
            break;
        }
        working = next;
    }
    Ok(last.expect("at least one iteration"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize, cx: f64, cy: f64, r: f64) -> Vec<Vector2<f64>> {
        (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Vector2::new(cx + r * t.cos(), cy + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn exact_circle_center() {
        let e = fit_ellipse(&circle(180, 0.2, -0.1, 0.7)).unwrap();
        assert!((e.center[0] - 0.2).abs() < 1e-8 && (e.center[1] + 0.1).abs() < 1e-8);
        assert!((e.a - 0.7).abs() < 1e-8 && (e.b - 0.7).abs() < 1e-8);
    }

    #[test]
    fn rotated_ellipse_round_trip() {
        let (a, b, th) = (0.7, 0.6, 30f64.to_radians());
        let pts: Vec<Vector2<f64>> = (0..60)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 60.0;
                let (x, y) = (a * t.cos(), b * t.sin());
                Vector2::new(0.1 + x * th.cos() - y * th.sin(), -0.3 + x * th.sin() + y * th.cos())
            })
            .collect();
        let e = fit_ellipse(&pts).unwrap();
        assert!((e.center[0] - 0.1).abs() < 1e-6 && (e.center[1] + 0.3).abs() < 1e-6);
        assert!((e.a - a).abs() < 1e-6 && (e.b - b).abs() < 1e-6);
        assert!((e.angle - th).abs() < 1e-6);
        let [ca, cb, cc, ..] = e.conic;
        assert!(cb * cb - 4.0 * ca * cc < 0.0);
    }

    #[test]
    fn collinear_is_not_an_ellipse() {
        let pts: Vec<Vector2<f64>> = (0..10).map(|i| Vector2::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert_eq!(fit_ellipse(&pts), Err(Error::NotAnEllipse));
    }

    #[test]
    fn plane_through_circle_of_latitude() {
        let pts: Vec<Vector3<f64>> = (0..36)
            .map(|i| latlon_to_vec(i as f64 * 10.0, 30.0).to_vector())
            .collect();
        let p = fit_plane_svd(&pts).unwrap();
        assert!((p.normal_vec() - Vector3::z()).norm() < 1e-12);
        assert!((p.offset - 0.5).abs() < 1e-12);
        assert!(p.rms < 1e-12);
        assert!(matches!(fit_plane_svd(&pts[..2]), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn in_plane_points_unchanged() {
        let plane = PlaneFit {
            normal: [0.0, 0.0, 1.0],
            offset: 0.3,
            rms: 0.0,
        };
        let pts = vec![Vector3::new(0.2, -0.4, 0.3), Vector3::new(-0.7, 0.1, 0.3)];
        let xy = project_to_plane(&pts, &plane);
        for (p, q) in pts.iter().zip(&xy) {
            assert!((p.x - q.x).abs() < 1e-15 && (p.y - q.y).abs() < 1e-15);
        }
    }

    #[test]
    fn lift_inverts_projection() {
        let pts: Vec<Vector3<f64>> = (0..20)
            .map(|i| latlon_to_vec(i as f64 * 18.0, 20.0 + 3.0 * (i as f64).sin()).to_vector())
            .collect();
        let plane = fit_plane_svd(&pts).unwrap();
        let xy = project_to_plane(&pts, &plane);
        let n = plane.normal_vec();
        for (p, q) in pts.iter().zip(&xy) {
            let on = p - n * (n.dot(p) - plane.offset);
            assert!((plane.lift(*q) - on).norm() < 1e-12);
        }
    }

    #[test]
    fn jackknife_of_identical_estimates_is_zero() {
        let c = vec![Vector2::new(0.3, 0.2); 9];
        assert_eq!(jackknife_cov(&c), Matrix2::zeros());
        assert!(jackknife_center_cov(&circle(6, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn intersection_prefers_ribbon_side() {
        let pts: Vec<Vector3<f64>> = (0..36)
            .map(|i| latlon_to_vec(i as f64 * 10.0, 5.0).to_vector())
            .collect();
        let v = line_sphere_intersection(&Vector3::new(0.0, 0.0, 0.087), &Vector3::z(), &pts).unwrap();
        assert!((v - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn decay_fit_limits() {
        let white = vec![0.0; 10];
        assert!(fit_decay_length(&white) < 0.1);
        let ones = vec![1.0; 10];
        assert!(fit_decay_length(&ones) > 100.0);
        let rho: Vec<f64> = (1..=10).map(|h| (-(h as f64) / 3.0).exp()).collect();
        assert!((fit_decay_length(&rho) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn circular_mean_wraps() {
        let (lon, lat) = mean_lonlat(&[(359.0, 10.0), (1.0, 20.0)]);
        assert!(lon.min(360.0 - lon) < 1e-9);
        assert!((lat - 15.0).abs() < 1e-12);
    }
}
