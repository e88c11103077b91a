//! Flat JSON run configuration. Every key has a default; unknown keys are
//! rejected. Command-line flags are applied on top of a loaded config.

use std::path::Path;

use enasep::gdf::{GdfConfig, PprConfig, SmoothConfig};
use enasep::{CenterConfig, MaskParams, NoiseMode, PolarBand, ScenarioId, SeparationConfig, WisConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    pub noise: NoiseMode,
    pub seed: u64,
    pub grid_deg: f64,
    pub out_prefix: String,
    /// Observed map to separate instead of a simulated one.
    pub input: Option<String>,
    /// Prefix of `_gdf.csv` / `_ribbon.csv` truth maps for evaluation.
    pub truth_prefix: Option<String>,
    pub working_center: [f64; 2],
    pub reframe_micro: usize,
    pub mask_grid: Vec<[f64; 2]>,
    pub pad_pixels: usize,
    pub peak_band: [f64; 2],
    pub smooth_degree: usize,
    pub ppr_terms: usize,
    pub azimuth_basis: usize,
    pub var_y_factor: f64,
    pub draws: usize,
    pub center_seed: u64,
    pub center_iters: usize,
    pub center_tol_deg: f64,
    pub center_band: [f64; 2],
    pub center_micro: usize,
    pub max_failed_draws: f64,
    pub eval_band: [f64; 2],
    pub render_lo: f64,
    pub render_hi: f64,
    pub png: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sep = SeparationConfig::default();
        let cen = CenterConfig::default();
        let wis = WisConfig::default();
        RunConfig {
            scenario: ScenarioId::S1,
            noise: NoiseMode::Ideal,
            seed: 7,
            grid_deg: 2.0,
            out_prefix: "enasep_out/run".into(),
            input: None,
            truth_prefix: None,
            working_center: [221.5, 39.0],
            reframe_micro: 15,
            mask_grid: enasep::default_candidates().iter().map(|p| [p.u, p.v]).collect(),
            pad_pixels: 2,
            peak_band: [sep.band.lo, sep.band.hi],
            smooth_degree: sep.gdf.smooth.degree,
            ppr_terms: sep.gdf.ppr.n_terms,
            azimuth_basis: sep.azimuth_basis,
            var_y_factor: sep.var_y_factor,
            draws: cen.n_draws,
            center_seed: cen.seed,
            center_iters: cen.max_iter,
            center_tol_deg: cen.tol_deg,
            center_band: [cen.band.lo, cen.band.hi],
            center_micro: cen.micro,
            max_failed_draws: cen.max_failed,
            eval_band: [wis.band.lo, wis.band.hi],
            render_lo: 0.0,
            render_hi: 0.3,
            png: false,
        }
    }
}

fn band(name: &str, b: [f64; 2]) -> Result<PolarBand> {
    if !(b[0] >= 0.0 && b[0] < b[1] && b[1] <= 180.0) {
        return Err(CliError::Config(format!(
            "{name} must satisfy 0 <= lo < hi <= 180, got {b:?}"
        )));
    }
    Ok(PolarBand::new(b[0], b[1]))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.grid_deg > 0.0) || (180.0 / self.grid_deg).fract().abs() > 1e-9 {
            return bad(format!("grid_deg must divide 180, got {}", self.grid_deg));
        }
        if !(-90.0..=90.0).contains(&self.working_center[1]) || !self.working_center[0].is_finite() {
            return bad(format!("working_center out of range: {:?}", self.working_center));
        }
        if self.reframe_micro == 0 || self.center_micro == 0 {
            return bad("micropixel counts must be positive".into());
        }
        if self.draws == 0 || self.center_iters == 0 {
            return bad("draws and center_iters must be positive".into());
        }
        if !(self.center_tol_deg > 0.0) {
            return bad("center_tol_deg must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_failed_draws) {
            return bad("max_failed_draws must be in [0, 1]".into());
        }
        if !(self.render_lo < self.render_hi) {
            return bad("render_lo must be below render_hi".into());
        }
        if self.smooth_degree == 0 {
            return bad("smooth_degree must be positive".into());
        }
        band("peak_band", self.peak_band)?;
        band("center_band", self.center_band)?;
        band("eval_band", self.eval_band)?;
        self.mask_candidates()?;
        self.separation_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.wis_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn mask_candidates(&self) -> Result<Vec<MaskParams>> {
        if self.mask_grid.is_empty() {
            return Err(CliError::Config("mask_grid is empty".into()));
        }
        self.mask_grid
            .iter()
            .map(|[u, v]| {
                let p = MaskParams {
                    u: *u,
                    v: *v,
                    pad_pixels: self.pad_pixels,
                };
                p.validate().map(|_| p).map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }

    pub fn separation_config(&self) -> SeparationConfig {
        let d = SeparationConfig::default();
        SeparationConfig {
            band: PolarBand::new(self.peak_band[0], self.peak_band[1]),
            gdf: GdfConfig {
                smooth: SmoothConfig {
                    degree: self.smooth_degree,
                    ..d.gdf.smooth
                },
                ppr: PprConfig {
                    n_terms: self.ppr_terms,
                    ..d.gdf.ppr
                },
            },
            azimuth_basis: self.azimuth_basis,
            var_y_factor: self.var_y_factor,
            ..d
        }
    }

    pub fn center_config(&self) -> CenterConfig {
        CenterConfig {
            n_draws: self.draws,
            seed: self.center_seed,
            band: PolarBand::new(self.center_band[0], self.center_band[1]),
            micro: self.center_micro,
            max_failed: self.max_failed_draws,
            max_iter: self.center_iters,
            tol_deg: self.center_tol_deg,
            ..CenterConfig::default()
        }
    }

    pub fn wis_config(&self) -> WisConfig {
        WisConfig {
            band: PolarBand::new(self.eval_band[0], self.eval_band[1]),
            ..WisConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON encoding, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `"u1,v1;u2,v2;..."`.
pub fn parse_mask_grid(s: &str) -> Result<Vec<[f64; 2]>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|pair| {
            let (u, v) = parse_pair(pair)?;
            Ok([u, v])
        })
        .collect()
}

/// Parses `"a,b"` into two floats.
pub fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| CliError::Config(format!("{s:?}: {e}")));
    match parts.as_slice() {
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(CliError::Config(format!(
            "expected two comma-separated numbers, got {s:?}"
        ))),
    }
}
