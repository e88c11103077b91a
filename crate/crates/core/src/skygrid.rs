//! Lat/lon sky grids, rotational frames and micropixel reframing.
//!
//! Pixels are stored longitude-major: pixel `(j, k)` lives at index
//! `j * n_lat + k`, where `j` counts longitude bins eastward from 0° and `k`
//! counts latitude bins northward from −90°. Pixel centers sit at half-pixel
//! offsets. Within a frame, the polar angle of a pixel is `90° − lat`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular lat/lon pixelization of the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lon: usize,
    pub n_lat: usize,
    pub pixel_deg: f64,
}

impl GridSpec {
    /// Grid with square pixels of the given size. `360 / pixel_deg` must be
    /// an even integer of at least 4.
    pub fn from_pixel_deg(pixel_deg: f64) -> Result<Self> {
        if !(pixel_deg > 0.0) {
            return Err(Error::InvalidGrid(format!("pixel size {pixel_deg} must be positive")));
        }
        let n_lon = (360.0 / pixel_deg).round() as usize;
        Self::new(n_lon, n_lon / 2, pixel_deg)
    }

    pub fn new(n_lon: usize, n_lat: usize, pixel_deg: f64) -> Result<Self> {
        let grid = GridSpec {
            n_lon,
            n_lat,
            pixel_deg,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lon < 4 || self.n_lat < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4x4 bins, got {}x{}",
                self.n_lon, self.n_lat
            )));
        }
        let lon_span = self.n_lon as f64 * self.pixel_deg;
        let lat_span = self.n_lat as f64 * self.pixel_deg;
        if (lon_span - 360.0).abs() > 1e-9 || (lat_span - 180.0).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "{}x{} bins of {}° do not tile the sphere",
                self.n_lon, self.n_lat, self.pixel_deg
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_lon * self.n_lat
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n_lat + k
    }

    /// Inverse of [`GridSpec::index`].
    #[inline]
    pub fn unindex(&self, i: usize) -> (usize, usize) {
        (i / self.n_lat, i % self.n_lat)
    }

    #[inline]
    pub fn lon_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.pixel_deg
    }

    #[inline]
    pub fn lat_center(&self, k: usize) -> f64 {
        -90.0 + (k as f64 + 0.5) * self.pixel_deg
    }

    #[inline]
    pub fn polar_center(&self, k: usize) -> f64 {
        90.0 - self.lat_center(k)
    }

    /// Latitude row whose center is at the given polar angle, if any.
    pub fn row_for_polar(&self, polar: f64) -> Option<usize> {
        self.pixel_of(0.0, 90.0 - polar).map(|(_, k)| k)
    }

    /// Pixel containing the point, with longitude wrapped and latitude
    /// clamped onto the grid. Returns `None` only for non-finite input.
    pub fn pixel_of(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        if !lon.is_finite() || !lat.is_finite() {
            return None;
        }
        let j = (lon.rem_euclid(360.0) / self.pixel_deg).floor() as isize;
        let j = j.rem_euclid(self.n_lon as isize) as usize;
        let k = ((lat + 90.0) / self.pixel_deg).floor();
        let k = k.clamp(0.0, (self.n_lat - 1) as f64) as usize;
        Some((j, k))
    }

    /// Unit vector of every pixel center, in pixel order.
    pub fn pixel_vectors(&self) -> Vec<UnitVec> {
        (0..self.len())
            .map(|i| {
                let (j, k) = self.unindex(i);
                latlon_to_vec(self.lon_center(j), self.lat_center(k))
            })
            .collect()
    }
}

/// Cartesian point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVec {
    /// Normalizes `v`; `None` for the zero vector.
    pub fn from_vector(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let u = v / n;
        Some(UnitVec { x: u.x, y: u.y, z: u.z })
    }

    #[inline]
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Great-circle distance in degrees.
    pub fn angle_to(&self, other: &UnitVec) -> f64 {
        let a = self.to_vector();
        let b = other.to_vector();
        a.cross(&b).norm().atan2(a.dot(&b)).to_degrees()
    }
}

pub fn latlon_to_vec(lon: f64, lat: f64) -> UnitVec {
    let (slon, clon) = lon.to_radians().sin_cos();
    let (slat, clat) = lat.to_radians().sin_cos();
    UnitVec {
        x: clat * clon,
        y: clat * slon,
        z: slat,
    }
}

/// Longitude in [0, 360) and latitude in [−90, 90]. Longitude is 0 at the poles.
pub fn vec_to_latlon(v: UnitVec) -> (f64, f64) {
    let rho = v.x.hypot(v.y);
    let lat = v.z.atan2(rho).to_degrees();
    if rho < 1e-15 {
        return (0.0, lat);
    }
    let mut lon = v.y.atan2(v.x).to_degrees();
    if lon < 0.0 {
        lon += 360.0;
    }
    if lon >= 360.0 {
        lon -= 360.0;
    }
    (lon, lat)
}

/// A rotational frame, identified by where its north pole points in the
/// ecliptic frame and by a roll fixing the azimuthal origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub center_lon: f64,
    pub center_lat: f64,
    pub roll: f64,
}

impl FrameSpec {
    /// The ecliptic frame itself.
    pub const ECLIPTIC: FrameSpec = FrameSpec {
        center_lon: 0.0,
        center_lat: 90.0,
        roll: 0.0,
    };

    /// Rotation taking ecliptic vectors into this frame:
    /// `Rz(-roll) · Ry(-(90° - lat)) · Rz(-lon)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let rz = |deg: f64| {
            let (s, c) = deg.to_radians().sin_cos();
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
        };
        let ry = |deg: f64| {
            let (s, c) = deg.to_radians().sin_cos();
            Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
        };
        rz(-self.roll) * ry(-(90.0 - self.center_lat)) * rz(-self.center_lon)
    }

    /// Ecliptic vector → frame vector.
    pub fn to_frame(&self, v: UnitVec) -> UnitVec {
        let w = self.rotation() * v.to_vector();
        UnitVec { x: w.x, y: w.y, z: w.z }
    }

    /// Frame vector → ecliptic vector.
    pub fn from_frame(&self, v: UnitVec) -> UnitVec {
        let w = self.rotation().transpose() * v.to_vector();
        UnitVec { x: w.x, y: w.y, z: w.z }
    }

    pub fn center(&self) -> UnitVec {
        latlon_to_vec(self.center_lon, self.center_lat)
    }
}

pub fn make_rotation(center_lon: f64, center_lat: f64, roll: f64) -> FrameSpec {
    FrameSpec {
        center_lon: center_lon.rem_euclid(360.0),
        center_lat: center_lat.clamp(-90.0, 90.0),
        roll: roll.rem_euclid(360.0),
    }
}

/// Gridded rates and variances in a named frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyMap {
    pub grid: GridSpec,
    pub frame: FrameSpec,
    pub rate: Vec<f64>,
    pub var: Vec<f64>,
    /// Optional per-pixel observation variance of the raw rate.
    pub var_y: Option<Vec<f64>>,
}

impl SkyMap {
    pub fn new(grid: GridSpec, frame: FrameSpec, rate: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let map = SkyMap {
            grid,
            frame,
            rate,
            var,
            var_y: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn zeros(grid: GridSpec, frame: FrameSpec) -> Self {
        SkyMap {
            grid,
            frame,
            rate: vec![0.0; grid.len()],
            var: vec![0.0; grid.len()],
            var_y: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.len();
        if self.rate.len() != n || self.var.len() != n {
            return Err(Error::InvalidInput(format!(
                "map vectors have lengths {}/{}, expected {n}",
                self.rate.len(),
                self.var.len()
            )));
        }
        if let Some(vy) = &self.var_y {
            if vy.len() != n {
                return Err(Error::InvalidInput("var_y length mismatch".into()));
            }
            if vy.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidInput("negative or non-finite var_y".into()));
            }
        }
        if let Some(i) = self.rate.iter().position(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput(format!("rate at pixel {i} is {}", self.rate[i])));
        }
        if let Some(i) = self.var.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("variance at pixel {i} is {}", self.var[i])));
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &SkyMap) -> bool {
        self.grid == other.grid && self.frame == other.frame
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.rate[self.grid.index(j, k)]
    }

    /// Rates of one longitude column (azimuthal sector) ordered by latitude row.
    pub fn column(&self, j: usize) -> &[f64] {
        let k = self.grid.n_lat;
        &self.rate[j * k..(j + 1) * k]
    }

    /// Unit vectors of the pixel centers expressed in the ecliptic frame.
    pub fn ecliptic_positions(&self) -> Vec<UnitVec> {
        let rt = self.frame.rotation().transpose();
        self.grid
            .pixel_vectors()
            .into_iter()
            .map(|v| {
                let w = rt * v.to_vector();
                UnitVec { x: w.x, y: w.y, z: w.z }
            })
            .collect()
    }
}

/// Precomputed micropixel lookup between two frames on the same grid.
///
/// Each target pixel stores the source pixels hit by its micropixel midpoints
/// together with hit counts; applying the plan to a map is a sparse average.
#[derive(Debug, Clone)]
pub struct ReframePlan {
    grid: GridSpec,
    source: FrameSpec,
    target: FrameSpec,
    micro: usize,
    offsets: Vec<usize>,
    sources: Vec<u32>,
    counts: Vec<u32>,
}

impl ReframePlan {
    pub fn new(grid: GridSpec, source: FrameSpec, target: FrameSpec, micro: usize) -> Result<Self> {
        grid.validate()?;
        if micro == 0 {
            return Err(Error::InvalidInput("micropixel count must be at least 1".into()));
        }
        let pd = grid.pixel_deg;
        let step = pd / micro as f64;
        // target frame vector -> source frame vector
        let m = source.rotation() * target.rotation().transpose();

        let lon_trig: Vec<(f64, f64)> = (0..grid.n_lon * micro)
            .map(|a| ((a as f64 + 0.5) * step).to_radians().sin_cos())
            .collect();
        let lat_trig: Vec<(f64, f64)> = (0..grid.n_lat * micro)
            .map(|b| (-90.0 + (b as f64 + 0.5) * step).to_radians().sin_cos())
            .collect();

        let per_pixel: Vec<Vec<(u32, u32)>> = (0..grid.len())
            .into_par_iter()
            .map(|t| {
                let (j, k) = grid.unindex(t);
                let mut hits: Vec<(u32, u32)> = Vec::with_capacity(8);
                for a in 0..micro {
                    let (slon, clon) = lon_trig[j * micro + a];
                    for b in 0..micro {
                        let (slat, clat) = lat_trig[k * micro + b];
                        let v = Vector3::new(clat * clon, clat * slon, slat);
                        let w = m * v;
                        let (lon, lat) = vec_to_latlon(UnitVec { x: w.x, y: w.y, z: w.z });
                        let (sj, sk) = grid.pixel_of(lon, lat).expect("finite rotation");
                        let s = grid.index(sj, sk) as u32;
                        match hits.iter_mut().find(|(idx, _)| *idx == s) {
                            Some(h) => h.1 += 1,
                            None => hits.push((s, 1)),
                        }
                    }
                }
                hits.sort_unstable_by_key(|h| h.0);
                hits
            })
            .collect();

        let mut offsets = Vec::with_capacity(grid.len() + 1);
        let mut sources = Vec::new();
        let mut counts = Vec::new();
        offsets.push(0);
        for hits in per_pixel {
            for (s, c) in hits {
                sources.push(s);
                counts.push(c);
            }
            offsets.push(sources.len());
        }
        Ok(ReframePlan {
            grid,
            source,
            target,
            micro,
            offsets,
            sources,
            counts,
        })
    }

    pub fn micro(&self) -> usize {
        self.micro
    }

    pub fn target(&self) -> FrameSpec {
        self.target
    }

    /// Sparse average of `values` for every target pixel.
    pub fn resample(&self, values: &[f64]) -> Vec<f64> {
        let total = (self.micro * self.micro) as f64;
        (0..self.grid.len())
            .map(|t| {
                let lo = self.offsets[t];
                let hi = self.offsets[t + 1];
                let base = values[self.sources[lo] as usize];
                // mean written as base + weighted deviations so that equal
                // samples reproduce the sample exactly
                let dev: f64 = (lo..hi)
                    .map(|e| self.counts[e] as f64 * (values[self.sources[e] as usize] - base))
                    .sum();
                base + dev / total
            })
            .collect()
    }

    pub fn apply(&self, map: &SkyMap) -> Result<SkyMap> {
        if map.grid != self.grid || map.frame != self.source {
            return Err(Error::GridMismatch);
        }
        let clip = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        Ok(SkyMap {
            grid: self.grid,
            frame: self.target,
            rate: clip(self.resample(&map.rate)),
            var: clip(self.resample(&map.var)),
            var_y: map.var_y.as_ref().map(|vy| clip(self.resample(vy))),
        })
    }
}

/// Recasts `map` into `target` by averaging nearest-pixel source values over
/// `micro × micro` micropixel midpoints of every target pixel.
pub fn reframe_map(map: &SkyMap, target: FrameSpec, micro: usize) -> Result<SkyMap> {
    if micro == 0 {
        return Err(Error::InvalidInput("micropixel count must be at least 1".into()));
    }
    if map.frame == target {
        return Ok(map.clone());
    }
    ReframePlan::new(map.grid, map.frame, target, micro)?.apply(map)
}
