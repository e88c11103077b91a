//! Synthetic truth maps: a smooth GDF plus a circular ribbon with a chosen
//! cross-section, summed and optionally perturbed with Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::skygrid::{latlon_to_vec, make_rotation, vec_to_latlon, FrameSpec, GridSpec, SkyMap, UnitVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    /// Weak scattering: skewed cross-section.
    S1,
    /// Spatial retention: Gaussian core with an outward shoulder.
    S2,
    /// Cross-section varying with azimuth, with knots and a GDF disc.
    S3,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioId::S1),
            "s2" => Ok(ScenarioId::S2),
            "s3" => Ok(ScenarioId::S3),
            _ => Err(Error::InvalidInput(format!("unknown scenario '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Ideal,
    Noisy,
    /// Noise variance divided by three.
    Noisy3x,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(NoiseMode::Ideal),
            "noisy" => Ok(NoiseMode::Noisy),
            "noisy3x" | "noisy_3x" => Ok(NoiseMode::Noisy3x),
            _ => Err(Error::InvalidInput(format!("unknown noise mode '{s}'"))),
        }
    }
}

/// Localized additive bump, in the sense of [`ProfileParams::knots`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub azimuth: f64,
    /// Relative amplitude added at the knot center.
    pub strength: f64,
    /// Gaussian width along the ribbon, degrees.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub lon: f64,
    pub lat: f64,
    pub radius: f64,
    /// Rate added inside the disc.
    pub enhancement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Skew-normal scale, degrees.
    pub skew_scale: f64,
    /// Skew-normal shape; negative puts the long tail toward the center.
    pub skew_shape: f64,
    /// Gaussian core width, degrees.
    pub core_sigma: f64,
    pub shoulder_height: f64,
    pub shoulder_width: f64,
    pub shoulder_edge: f64,
    /// Ribbon is exactly zero beyond this polar distance from its peak.
    pub half_extent: f64,
    pub knots: Vec<Knot>,
    /// Azimuth where the varying profile is purely skewed.
    pub mix_azimuth: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            skew_scale: 7.0,
            skew_shape: -4.0,
            core_sigma: 6.0,
            shoulder_height: 0.35,
            shoulder_width: 12.0,
            shoulder_edge: 2.0,
            half_extent: 24.0,
            knots: Vec::new(),
            mix_azimuth: 90.0,
        }
    }
}

/// `floor + amplitude · (exp(κ(cos d₁ − 1)) + tail_ratio · exp(κ(cos d₂ − 1)))`,
/// with `d₁`, `d₂` the distances to two directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdfParams {
    pub floor: f64,
    pub amplitude: f64,
    pub nose: (f64, f64),
    pub tail: (f64, f64),
    pub tail_ratio: f64,
    pub concentration: f64,
    pub disc: Option<Disc>,
}

impl Default for GdfParams {
    fn default() -> Self {
        GdfParams {
            floor: 0.04,
            amplitude: 0.08,
            nose: (255.0, 5.0),
            tail: (75.0, -5.0),
            tail_ratio: 0.4,
            concentration: 1.5,
            disc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub id: ScenarioId,
    pub ribbon_center: (f64, f64),
    pub ribbon_radius: f64,
    /// Peak rates at equally spaced azimuths starting at 0°, interpolated
    /// linearly and periodically in between.
    pub amplitude_by_azimuth: Vec<f64>,
    pub profile_params: ProfileParams,
    pub gdf_params: GdfParams,
    /// Baseline variance `var = a + b · rate`.
    pub var_a: f64,
    pub var_b: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

/// Amplitude multiplier for dimmed sections of the default scenarios.
pub const DEFAULT_DIMMING: f64 = 0.5;

impl SimScenario {
    /// The standard scenario: ribbon centered at (221.5°, 39°), two dimmed
    /// sections, S3 adding knots and a GDF disc.
    pub fn standard(id: ScenarioId, seed: u64) -> Self {
        let mut amp: Vec<f64> = (0..36)
            .map(|c| 0.10 + 0.02 * (c as f64 * 10.0).to_radians().cos())
            .collect();
        for c in [13, 14, 15, 29] {
            amp[c] *= DEFAULT_DIMMING;
        }
        let mut profile = ProfileParams::default();
        let mut gdf = GdfParams::default();
        if id == ScenarioId::S3 {
            profile.knots = vec![
                Knot {
                    azimuth: 60.0,
                    strength: 0.8,
                    width: 6.0,
                },
                Knot {
                    azimuth: 200.0,
                    strength: 0.6,
                    width: 8.0,
                },
            ];
            gdf.disc = Some(Disc {
                lon: 300.0,
                lat: -30.0,
                radius: 10.0,
                enhancement: 0.05,
            });
        }
        SimScenario {
            id,
            ribbon_center: (221.5, 39.0),
            ribbon_radius: 85.0,
            amplitude_by_azimuth: amp,
            profile_params: profile,
            gdf_params: gdf,
            var_a: 1e-6,
            var_b: 2e-4,
            noise_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ribbon_radius > 0.0 && self.ribbon_radius < 90.0) {
            return Err(Error::InvalidInput(format!(
                "ribbon radius {} outside (0, 90)",
                self.ribbon_radius
            )));
        }
        if self.amplitude_by_azimuth.is_empty() || self.amplitude_by_azimuth.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidInput(
                "amplitudes must be nonempty and nonnegative".into(),
            ));
        }
        if !(self.var_a >= 0.0 && self.var_b >= 0.0 && self.noise_scale >= 0.0) {
            return Err(Error::InvalidInput("variance parameters must be nonnegative".into()));
        }
        let p = &self.profile_params;
        if !(p.skew_scale > 0.0 && p.core_sigma > 0.0 && p.shoulder_edge > 0.0 && p.half_extent > 0.0) {
            return Err(Error::InvalidInput("profile widths must be positive".into()));
        }
        if !(self.gdf_params.floor > 0.0 && self.gdf_params.amplitude >= 0.0) {
            return Err(Error::InvalidInput(
                "GDF floor must be positive and amplitude nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Frame with the ribbon center at the north pole.
    pub fn ribbon_frame(&self) -> FrameSpec {
        make_rotation(self.ribbon_center.0, self.ribbon_center.1, 0.0)
    }

    /// Peak rate at `azimuth` before knots.
    pub fn amplitude_at(&self, azimuth: f64) -> f64 {
        let a = &self.amplitude_by_azimuth;
        let n = a.len();
        let s = azimuth.rem_euclid(360.0) / (360.0 / n as f64);
        let i = (s.floor() as usize) % n;
        let t = s - s.floor();
        a[i] * (1.0 - t) + a[(i + 1) % n] * t
    }

    fn knot_factor(&self, azimuth: f64) -> f64 {
        1.0 + self
            .profile_params
            .knots
            .iter()
            .map(|k| {
                let d = (azimuth - k.azimuth + 180.0).rem_euclid(360.0) - 180.0;
                k.strength * (-0.5 * (d / k.width).powi(2)).exp()
            })
            .sum::<f64>()
    }

    /// Weight of the skewed shape in the azimuth-varying profile.
    fn mix_weight(&self, azimuth: f64) -> f64 {
        match self.id {
            ScenarioId::S1 => 1.0,
            ScenarioId::S2 => 0.0,
            ScenarioId::S3 => 0.5 * (1.0 + (azimuth - self.profile_params.mix_azimuth).to_radians().cos()),
        }
    }
}

fn skew_shape(x: f64, p: &ProfileParams) -> f64 {
    let z = x / p.skew_scale;
    (-0.5 * z * z).exp() * 0.5 * erfc(-p.skew_shape * z / std::f64::consts::SQRT_2)
}

fn shoulder_shape(x: f64, p: &ProfileParams) -> f64 {
    let e = p.shoulder_edge * std::f64::consts::SQRT_2;
    let core = (-0.5 * (x / p.core_sigma).powi(2)).exp();
    let plateau = 0.5 * erfc(-x / e) * 0.5 * erfc((x - p.shoulder_width) / e);
    core + p.shoulder_height * plateau
}

/// Cross-section with its maximum moved to offset 0 and scaled to 1.
#[derive(Debug, Clone)]
pub struct CrossSection {
    weight: f64,
    params: ProfileParams,
    mode: f64,
    peak: f64,
}

impl CrossSection {
    fn raw(&self, x: f64) -> f64 {
        self.weight * skew_shape(x, &self.params) + (1.0 - self.weight) * shoulder_shape(x, &self.params)
    }

    pub fn new(weight: f64, params: &ProfileParams) -> Self {
        let mut cs = CrossSection {
            weight,
            params: params.clone(),
            mode: 0.0,
            peak: 1.0,
        };
        // coarse scan then golden-section refinement
        let span = 3.0 * params.skew_scale.max(params.core_sigma + params.shoulder_width);
        let (mut best, mut best_x) = (f64::NEG_INFINITY, 0.0);
        let steps = 4000;
        for i in 0..=steps {
            let x = -span + 2.0 * span * i as f64 / steps as f64;
            let v = cs.raw(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        let h = 2.0 * span / steps as f64;
        let (mut a, mut b) = (best_x - h, best_x + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if cs.raw(c) > cs.raw(d) {
                b = d;
            } else {
                a = c;
            }
        }
        cs.mode = 0.5 * (a + b);
        cs.peak = cs.raw(cs.mode);
        cs
    }

    /// Normalized intensity at polar offset `x` from the peak.
    pub fn eval(&self, x: f64) -> f64 {
        if x.abs() > self.params.half_extent {
            return 0.0;
        }
        (self.raw(x + self.mode) / self.peak).max(0.0)
    }
}

/// Evaluates `f(polar, azimuth)` in the ribbon frame at every pixel of
/// an ecliptic-frame grid.
fn in_ribbon_frame(grid: GridSpec, frame: FrameSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    grid.pixel_vectors()
        .into_iter()
        .map(|v| {
            let (az, lat) = vec_to_latlon(frame.to_frame(v));
            f(90.0 - lat, az)
        })
        .collect()
}

pub fn gen_gdf(scenario: &SimScenario, grid: GridSpec) -> Result<SkyMap> {
    grid.validate()?;
    scenario.validate()?;
    let p = &scenario.gdf_params;
    let nose = latlon_to_vec(p.nose.0, p.nose.1);
    let tail = latlon_to_vec(p.tail.0, p.tail.1);
    let disc = p.disc.map(|d| (latlon_to_vec(d.lon, d.lat), d));
    let cosd = |a: &UnitVec, b: &UnitVec| a.x * b.x + a.y * b.y + a.z * b.z;
    let rate: Vec<f64> = grid
        .pixel_vectors()
        .into_iter()
        .map(|v| {
            let mut r = p.floor
                + p.amplitude
                    * ((p.concentration * (cosd(&v, &nose) - 1.0)).exp()
                        + p.tail_ratio * (p.concentration * (cosd(&v, &tail) - 1.0)).exp());
            if let Some((c, d)) = &disc {
                if v.angle_to(c) <= d.radius {
                    r += d.enhancement;
                }
            }
            r
        })
        .collect();
    let var = baseline_variance(scenario, &rate);
    SkyMap::new(grid, FrameSpec::ECLIPTIC, rate, var)
}

pub fn gen_ribbon(scenario: &SimScenario, grid: GridSpec) -> Result<SkyMap> {
    grid.validate()?;
    scenario.validate()?;
    let frame = scenario.ribbon_frame();
    let shapes: Vec<CrossSection> = match scenario.id {
        ScenarioId::S3 => Vec::new(),
        _ => vec![CrossSection::new(scenario.mix_weight(0.0), &scenario.profile_params)],
    };
    // S3 shapes are tabulated per degree of azimuth
    let varying: Vec<CrossSection> = if scenario.id == ScenarioId::S3 {
        (0..360)
            .map(|d| CrossSection::new(scenario.mix_weight(d as f64 + 0.5), &scenario.profile_params))
            .collect()
    } else {
        Vec::new()
    };
    let rate = in_ribbon_frame(grid, frame, |polar, az| {
        let shape = if varying.is_empty() {
            &shapes[0]
        } else {
            &varying[(az.rem_euclid(360.0).floor() as usize).min(359)]
        };
        let a = scenario.amplitude_at(az) * scenario.knot_factor(az);
        a * shape.eval(polar - scenario.ribbon_radius)
    });
    let var = baseline_variance(scenario, &rate);
    SkyMap::new(grid, FrameSpec::ECLIPTIC, rate, var)
}

fn baseline_variance(s: &SimScenario, rate: &[f64]) -> Vec<f64> {
    rate.iter().map(|r| s.var_a + s.var_b * r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPair {
    pub gdf_truth: SkyMap,
    pub ribbon_truth: SkyMap,
    pub observed: SkyMap,
    pub scenario: SimScenario,
    pub noise: NoiseMode,
}

pub fn gen_truth_pair(scenario: &SimScenario, grid: GridSpec, noise: NoiseMode) -> Result<TruthPair> {
    let gdf = gen_gdf(scenario, grid)?;
    let ribbon = gen_ribbon(scenario, grid)?;
    let total: Vec<f64> = gdf.rate.iter().zip(&ribbon.rate).map(|(a, b)| a + b).collect();
    let mut var = baseline_variance(scenario, &total);
    for v in var.iter_mut() {
        *v *= scenario.noise_scale;
        if noise == NoiseMode::Noisy3x {
            *v /= 3.0;
        }
    }
    let rate = match noise {
        NoiseMode::Ideal => total,
        NoiseMode::Noisy | NoiseMode::Noisy3x => {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            total
                .iter()
                .zip(&var)
                .map(|(t, v)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (t + v.sqrt() * z).max(0.0)
                })
                .collect()
        }
    };
    let observed = SkyMap::new(grid, FrameSpec::ECLIPTIC, rate, var)?;
    Ok(TruthPair {
        gdf_truth: gdf,
        ribbon_truth: ribbon,
        observed,
        scenario: scenario.clone(),
        noise,
    })
}
