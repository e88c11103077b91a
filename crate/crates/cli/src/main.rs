use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use enasep::{make_rotation, NoiseMode, ScenarioId};
use enasep_cli::commands::{self, with_suffix};
use enasep_cli::config::{parse_mask_grid, parse_pair};
use enasep_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "enasep",
    version,
    about = "Separate ENA sky maps into ribbon and GDF components"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate truth and observed maps for a scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<ScenarioId>,
        #[arg(long)]
        grid_deg: Option<f64>,
        #[arg(long)]
        noise: Option<NoiseMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_prefix: Option<String>,
    },
    /// Resample a map into the frame centered on LON,LAT.
    Reframe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_name = "LON,LAT")]
        center: String,
        #[arg(long, default_value_t = 0.0)]
        roll: f64,
        #[arg(long)]
        micro: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a map into ribbon and GDF components.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_name = "LON,LAT")]
        center: Option<String>,
        #[arg(long, value_name = "u1,v1;u2,v2;...")]
        mask_grid: Option<String>,
        #[arg(long)]
        out_prefix: Option<String>,
    },
    /// Estimate the ribbon center with resampled maps.
    Center {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_name = "LON,LAT")]
        working_center: Option<String>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a separated GDF map against truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        est_prefix: String,
        #[arg(long)]
        truth_prefix: String,
        #[arg(long, value_name = "LO,HI")]
        band: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a map as a grayscale PGM (and optionally PNG).
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Simulate, separate, estimate the center, evaluate and render.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<ScenarioId>,
        #[arg(long)]
        noise: Option<NoiseMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        out_prefix: Option<String>,
    },
}

fn pair(s: &str) -> Result<(f64, f64)> {
    parse_pair(s)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            scenario,
            grid_deg,
            noise,
            seed,
            out_prefix,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            set(&mut cfg.scenario, scenario);
            set(&mut cfg.grid_deg, grid_deg);
            set(&mut cfg.noise, noise);
            set(&mut cfg.seed, seed);
            set(&mut cfg.out_prefix, out_prefix);
            cfg.validate()?;
            commands::simulate(&cfg, &cfg.out_prefix)?;
        }
        Command::Reframe {
            common,
            input,
            center,
            roll,
            micro,
            out,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            set(&mut cfg.reframe_micro, micro);
            cfg.validate()?;
            let (lon, lat) = pair(&center)?;
            commands::reframe(&input, make_rotation(lon, lat, roll), cfg.reframe_micro, &out)?;
        }
        Command::Separate {
            common,
            input,
            center,
            mask_grid,
            out_prefix,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            if let Some(c) = center {
                let (lon, lat) = pair(&c)?;
                cfg.working_center = [lon, lat];
            }
            set(
                &mut cfg.mask_grid,
                mask_grid.as_deref().map(parse_mask_grid).transpose()?,
            );
            set(&mut cfg.out_prefix, out_prefix);
            cfg.validate()?;
            let map = commands::read_map_file(&input)?;
            let c = (cfg.working_center[0], cfg.working_center[1]);
            commands::separate(&cfg, &map, c, &cfg.out_prefix)?;
        }
        Command::Center {
            common,
            input,
            working_center,
            draws,
            iters,
            tol,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            if let Some(c) = working_center {
                let (lon, lat) = pair(&c)?;
                cfg.working_center = [lon, lat];
            }
            set(&mut cfg.draws, draws);
            set(&mut cfg.center_iters, iters);
            set(&mut cfg.center_tol_deg, tol);
            set(&mut cfg.center_seed, seed);
            cfg.validate()?;
            let map = commands::read_map_file(&input)?;
            let c = (cfg.working_center[0], cfg.working_center[1]);
            let est = commands::center(&cfg, &map, c, &out)?;
            println!("{:.4},{:.4}", est.mean_lon, est.mean_lat);
        }
        Command::Evaluate {
            common,
            est_prefix,
            truth_prefix,
            band,
            out,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            if let Some(b) = band {
                let (lo, hi) = pair(&b)?;
                cfg.eval_band = [lo, hi];
            }
            cfg.validate()?;
            let r = commands::evaluate(&cfg, &est_prefix, &truth_prefix, &out)?;
            println!(
                "spearman {:.4} mape {:.4} wis {:.6} coverage_95 {:.3}{}",
                r.spearman,
                r.mean_abs_pct_error,
                r.mean_wis,
                r.coverage_95,
                if r.coverage_regression {
                    " (coverage regression)"
                } else {
                    ""
                }
            );
        }
        Command::Render {
            common,
            input,
            lo,
            hi,
            out,
            png,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            set(&mut cfg.render_lo, lo);
            set(&mut cfg.render_hi, hi);
            cfg.validate()?;
            commands::render(&input, cfg.render_lo, cfg.render_hi, &out, png.as_deref())?;
        }
        Command::Pipeline {
            common,
            scenario,
            noise,
            seed,
            input,
            out_prefix,
        } => {
            let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
            set(&mut cfg.scenario, scenario);
            set(&mut cfg.noise, noise);
            set(&mut cfg.seed, seed);
            if input.is_some() {
                cfg.input = input;
            }
            set(&mut cfg.out_prefix, out_prefix);
            let report = commands::run_pipeline(&cfg)?;
            println!("{}", with_suffix(&cfg.out_prefix, "_report.json").display());
            if let Some(e) = report.center_error_deg {
                println!("center error {e:.3} deg");
            }
            if let Some(m) = &report.metrics {
                println!(
                    "spearman {:.4} mape {:.4} coverage_95 {:.3}",
                    m.spearman, m.mean_abs_pct_error, m.coverage_95
                );
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ENASEP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("ENASEP_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Config("ENASEP_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.stage_name());
            ExitCode::FAILURE
        }
    }
}
