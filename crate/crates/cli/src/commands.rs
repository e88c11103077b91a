//! Subcommand bodies. Each reads and writes files under a path prefix and
//! returns the in-memory results for callers that chain stages.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use enasep::io::{save_map, write_mask, write_peaks};
use enasep::skygrid::latlon_to_vec;
use enasep::{
    eval_gdf_report, gen_truth_pair, iterate_center, load_map, make_rotation, reframe_map, CenterEstimate, EvalReport,
    FrameSpec, GridSpec, SeparationResult, SimScenario, SkyMap, TruthPair,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::render::render_heatmap;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `{prefix}{suffix}` as a path.
pub fn with_suffix(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(CliError::io(dir)),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

fn write_map_file(map: &SkyMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_map(map, path).map_err(CliError::stage("write"))
}

pub fn read_map_file(path: impl AsRef<Path>) -> Result<SkyMap> {
    load_map(path).map_err(CliError::stage("read"))
}

/// Wall-clock stage timings, kept out of the JSON outputs so that those stay
/// byte-identical across runs.
#[derive(Debug, Default)]
pub struct Timings(Vec<(String, f64)>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.0.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        for (stage, secs) in &self.0 {
            writeln!(w, "{stage}\t{secs:.3}s").map_err(CliError::io(path))?;
        }
        w.flush().map_err(CliError::io(path))
    }
}

#[derive(Debug, Serialize)]
struct ScenarioSidecar<'a> {
    version: &'static str,
    config_hash: String,
    noise: enasep::NoiseMode,
    grid_deg: f64,
    scenario: &'a SimScenario,
}

/// Writes `_gdf.csv`, `_ribbon.csv`, `_observed.csv` and `_scenario.json`.
pub fn simulate(cfg: &RunConfig, out_prefix: &str) -> Result<TruthPair> {
    let grid = GridSpec::from_pixel_deg(cfg.grid_deg).map_err(CliError::stage("simulate"))?;
    let scenario = SimScenario::standard(cfg.scenario, cfg.seed);
    let truth = gen_truth_pair(&scenario, grid, cfg.noise).map_err(CliError::stage("simulate"))?;
    write_map_file(&truth.gdf_truth, &with_suffix(out_prefix, "_gdf.csv"))?;
    write_map_file(&truth.ribbon_truth, &with_suffix(out_prefix, "_ribbon.csv"))?;
    write_map_file(&truth.observed, &with_suffix(out_prefix, "_observed.csv"))?;
    let sidecar = ScenarioSidecar {
        version: VERSION,
        config_hash: cfg.hash(),
        noise: cfg.noise,
        grid_deg: cfg.grid_deg,
        scenario: &truth.scenario,
    };
    write_json(&sidecar, &with_suffix(out_prefix, "_scenario.json"))?;
    Ok(truth)
}

pub fn reframe(input: &Path, frame: FrameSpec, micro: usize, out: &Path) -> Result<SkyMap> {
    let map = read_map_file(input)?;
    let out_map = reframe_map(&map, frame, micro).map_err(CliError::stage("reframe"))?;
    write_map_file(&out_map, out)?;
    Ok(out_map)
}

#[derive(Debug, Serialize)]
pub struct SeparationSummary {
    pub version: &'static str,
    pub config_hash: String,
    pub frame: FrameSpec,
    pub mask_u: f64,
    pub mask_v: f64,
    pub mask_offsets: (i32, i32),
    pub score: enasep::mask::SelectionScore,
    pub candidate_scores: Vec<(enasep::MaskParams, enasep::mask::SelectionScore)>,
    pub n_mask_pixels: usize,
    pub n_flagged_peaks: usize,
}

fn write_separation_csv(input: &SkyMap, res: &SeparationResult, path: &Path) -> Result<()> {
    let g = input.grid;
    let f = input.frame;
    let mut w = create(path)?;
    let io = CliError::io(path);
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "{}", enasep::io::GRID_HEADER)?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g.n_lon, g.n_lat, g.pixel_deg, f.center_lon, f.center_lat, f.roll
        )?;
        writeln!(w, "lon_center,lat_center,input,gdf,ribbon,var_g,var_r,cov_gr")?;
        for i in 0..g.len() {
            let (j, k) = g.unindex(i);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                g.lon_center(j),
                g.lat_center(k),
                input.rate[i],
                res.gdf.rate[i],
                res.ribbon.rate[i],
                res.var_g[i],
                res.var_r[i],
                res.cov_gr[i]
            )?;
        }
        w.flush()
    })();
    body.map_err(io)
}

/// Reframes `input` to the frame centered on `center`, separates it, and
/// writes the component maps, the combined separation table, mask, peaks and
/// a JSON summary. Returns the reframed input with the result.
pub fn separate(
    cfg: &RunConfig,
    input: &SkyMap,
    center: (f64, f64),
    out_prefix: &str,
) -> Result<(SkyMap, SeparationResult)> {
    let frame = make_rotation(center.0, center.1, 0.0);
    let framed = if input.frame == frame {
        input.clone()
    } else {
        reframe_map(input, frame, cfg.reframe_micro).map_err(CliError::stage("reframe"))?
    };
    let candidates = cfg.mask_candidates()?;
    let res = enasep::separate(&framed, &candidates, &cfg.separation_config()).map_err(CliError::stage("separate"))?;

    write_map_file(&res.gdf, &with_suffix(out_prefix, "_gdf.csv"))?;
    write_map_file(&res.ribbon, &with_suffix(out_prefix, "_ribbon.csv"))?;
    write_separation_csv(&framed, &res, &with_suffix(out_prefix, "_separation.csv"))?;
    let mask_path = with_suffix(out_prefix, "_mask.csv");
    let mut w = create(&mask_path)?;
    write_mask(&res.mask, &mut w).map_err(CliError::stage("write"))?;
    w.flush().map_err(CliError::io(&mask_path))?;
    let peaks_path = with_suffix(out_prefix, "_peaks.csv");
    let mut w = create(&peaks_path)?;
    write_peaks(&res.peaks, &mut w).map_err(CliError::stage("write"))?;
    w.flush().map_err(CliError::io(&peaks_path))?;

    let summary = SeparationSummary {
        version: VERSION,
        config_hash: cfg.hash(),
        frame,
        mask_u: res.params.u,
        mask_v: res.params.v,
        mask_offsets: (res.mask.offset_lo, res.mask.offset_hi),
        score: res.score,
        candidate_scores: res.candidate_scores.clone(),
        n_mask_pixels: res.mask.pixels(&framed.grid).iter().filter(|b| **b).count(),
        n_flagged_peaks: res
            .peaks
            .quality
            .iter()
            .filter(|q| **q != enasep::PeakQuality::Ok)
            .count(),
    };
    write_json(&summary, &with_suffix(out_prefix, "_separate.json"))?;
    Ok((framed, res))
}

#[derive(Debug, Serialize)]
pub struct CenterOutput<'a> {
    pub version: &'static str,
    pub config_hash: String,
    pub working_center: (f64, f64),
    #[serde(flatten)]
    pub estimate: &'a CenterEstimate,
}

pub fn center(cfg: &RunConfig, input: &SkyMap, working: (f64, f64), out: &Path) -> Result<CenterEstimate> {
    let est = iterate_center(input, working, &cfg.center_config()).map_err(CliError::stage("center"))?;
    let output = CenterOutput {
        version: VERSION,
        config_hash: cfg.hash(),
        working_center: working,
        estimate: &est,
    };
    write_json(&output, out)?;
    Ok(est)
}

#[derive(Debug, Serialize)]
pub struct EvaluationOutput<'a> {
    pub version: &'static str,
    pub config_hash: String,
    pub mean_skewness: Option<f64>,
    pub mean_fwhm: Option<f64>,
    #[serde(flatten)]
    pub report: &'a EvalReport,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Compares `{est_prefix}_gdf.csv` with `{truth_prefix}_gdf.csv`, taking
/// morphology from `{est_prefix}_ribbon.csv` when present. Truth maps in
/// another frame are reframed to the estimate's frame first.
pub fn evaluate(cfg: &RunConfig, est_prefix: &str, truth_prefix: &str, out: &Path) -> Result<EvalReport> {
    let est = read_map_file(with_suffix(est_prefix, "_gdf.csv"))?;
    let mut truth = read_map_file(with_suffix(truth_prefix, "_gdf.csv"))?;
    if truth.frame != est.frame {
        truth = reframe_map(&truth, est.frame, cfg.reframe_micro).map_err(CliError::stage("reframe"))?;
    }
    let ribbon_path = with_suffix(est_prefix, "_ribbon.csv");
    let ribbon = if ribbon_path.exists() {
        Some(read_map_file(&ribbon_path)?)
    } else {
        None
    };
    let report =
        eval_gdf_report(&est, &truth, ribbon.as_ref(), &cfg.wis_config()).map_err(CliError::stage("evaluate"))?;
    write_evaluation(cfg, &report, out)?;
    Ok(report)
}

fn write_evaluation(cfg: &RunConfig, report: &EvalReport, out: &Path) -> Result<()> {
    let output = EvaluationOutput {
        version: VERSION,
        config_hash: cfg.hash(),
        mean_skewness: mean_defined(&report.per_sector_skewness),
        mean_fwhm: mean_defined(&report.per_sector_fwhm),
        report,
    };
    write_json(&output, out)
}

pub fn render(input: &Path, lo: f64, hi: f64, out: &Path, png: Option<&Path>) -> Result<()> {
    let map = read_map_file(input)?;
    ensure_parent(out)?;
    render_heatmap(&map, lo, hi, out, png)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterSummary {
    pub mean_lon: f64,
    pub mean_lat: f64,
    pub covariance: [[f64; 2]; 2],
    pub n_draws: usize,
    pub n_failed: usize,
    pub n_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean_abs_pct_error: f64,
    pub spearman: f64,
    pub mean_wis: f64,
    pub coverage_95: f64,
    pub coverage_regression: bool,
    pub mean_skewness: Option<f64>,
    pub mean_fwhm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub version: &'static str,
    pub config_hash: String,
    pub scenario: Option<enasep::ScenarioId>,
    pub noise: Option<enasep::NoiseMode>,
    pub seed: u64,
    pub center_seed: u64,
    pub working_center: (f64, f64),
    pub mask_u: f64,
    pub mask_v: f64,
    pub center: CenterSummary,
    /// Angle between the estimated and true centers, when the truth is known.
    pub center_error_deg: Option<f64>,
    pub metrics: Option<MetricSummary>,
    /// Shortcut to `metrics.spearman`.
    pub spearman: Option<f64>,
    pub outputs: Vec<String>,
}

/// Simulate (or read `cfg.input`), separate in the working frame, estimate
/// the center, evaluate against truth when available, render, and write a
/// JSON report plus a separate timing log.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let prefix = cfg.out_prefix.as_str();
    let mut t = Timings::default();
    let working = (cfg.working_center[0], cfg.working_center[1]);

    let (observed, truth_prefix, truth_center) = match &cfg.input {
        Some(path) => (t.time("read", || read_map_file(path))?, cfg.truth_prefix.clone(), None),
        None => {
            let truth_prefix = format!("{prefix}_truth");
            let tp = t.time("simulate", || simulate(cfg, &truth_prefix))?;
            (tp.observed, Some(truth_prefix), Some(tp.scenario.ribbon_center))
        }
    };

    let sep_prefix = format!("{prefix}_sep");
    let (framed, res) = t.time("separate", || separate(cfg, &observed, working, &sep_prefix))?;

    let center_path = with_suffix(prefix, "_center.json");
    let est = t.time("center", || center(cfg, &observed, working, &center_path))?;
    let center_error_deg =
        truth_center.map(|(lon, lat)| latlon_to_vec(est.mean_lon, est.mean_lat).angle_to(&latlon_to_vec(lon, lat)));

    let eval_path = with_suffix(prefix, "_evaluation.json");
    let metrics = match &truth_prefix {
        Some(tp) => {
            let r = t.time("evaluate", || evaluate(cfg, &sep_prefix, tp, &eval_path))?;
            Some(MetricSummary {
                mean_abs_pct_error: r.mean_abs_pct_error,
                spearman: r.spearman,
                mean_wis: r.mean_wis,
                coverage_95: r.coverage_95,
                coverage_regression: r.coverage_regression,
                mean_skewness: mean_defined(&r.per_sector_skewness),
                mean_fwhm: mean_defined(&r.per_sector_fwhm),
            })
        }
        None => None,
    };

    let mut images = Vec::new();
    t.time("render", || {
        for (name, map) in [("observed", &framed), ("gdf", &res.gdf), ("ribbon", &res.ribbon)] {
            let pgm = with_suffix(prefix, &format!("_{name}.pgm"));
            let png = cfg.png.then(|| with_suffix(prefix, &format!("_{name}.png")));
            ensure_parent(&pgm)?;
            render_heatmap(map, cfg.render_lo, cfg.render_hi, &pgm, png.as_deref())?;
            images.push(pgm);
            images.extend(png);
        }
        Ok(())
    })?;

    let mut outputs: Vec<String> = Vec::new();
    if let Some(tp) = truth_prefix.as_ref().filter(|_| cfg.input.is_none()) {
        for s in ["_gdf.csv", "_ribbon.csv", "_observed.csv", "_scenario.json"] {
            outputs.push(format!("{tp}{s}"));
        }
    }
    for s in [
        "_gdf.csv",
        "_ribbon.csv",
        "_separation.csv",
        "_mask.csv",
        "_peaks.csv",
        "_separate.json",
    ] {
        outputs.push(format!("{sep_prefix}{s}"));
    }
    outputs.push(center_path.display().to_string());
    if metrics.is_some() {
        outputs.push(eval_path.display().to_string());
    }
    outputs.extend(images.iter().map(|p| p.display().to_string()));

    let report = PipelineReport {
        version: VERSION,
        config_hash: cfg.hash(),
        scenario: cfg.input.is_none().then_some(cfg.scenario),
        noise: cfg.input.is_none().then_some(cfg.noise),
        seed: cfg.seed,
        center_seed: cfg.center_seed,
        working_center: working,
        mask_u: res.params.u,
        mask_v: res.params.v,
        center: CenterSummary {
            mean_lon: est.mean_lon,
            mean_lat: est.mean_lat,
            covariance: est.covariance,
            n_draws: est.draws.len(),
            n_failed: est.n_failed,
            n_iterations: est.n_iterations,
            converged: est.converged,
        },
        center_error_deg,
        spearman: metrics.as_ref().map(|m| m.spearman),
        metrics,
        outputs,
    };
    write_json(&report, &with_suffix(prefix, "_report.json"))?;
    t.write(&with_suffix(prefix, "_timings.log"))?;
    Ok(report)
}
