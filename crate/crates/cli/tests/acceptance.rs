//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
//! measured quantities; run with `--nocapture` to see them on success.

use std::sync::OnceLock;

use enasep::center::{jackknife_cov, rodrigues};
use enasep::metrics::sector_morphology;
use enasep::skygrid::latlon_to_vec;
use enasep::uncertainty::sum_variance;
use enasep::*;
use enasep_cli::{run_pipeline, RunConfig};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRUE_CENTER: (f64, f64) = (221.5, 39.0);
const MICRO: usize = 15;

fn report(name: &str, ok: bool, detail: String) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name} failed: {detail}");
}

fn grid2() -> GridSpec {
    GridSpec::from_pixel_deg(2.0).unwrap()
}

fn center_error(est: &CenterEstimate) -> f64 {
    latlon_to_vec(est.mean_lon, est.mean_lat).angle_to(&latlon_to_vec(TRUE_CENTER.0, TRUE_CENTER.1))
}

/// Truth and observed maps in the frame centered on the true ribbon center.
struct Framed {
    observed: SkyMap,
    gdf: SkyMap,
    ribbon: SkyMap,
}

fn framed(id: ScenarioId, noise: NoiseMode) -> Framed {
    let s = SimScenario::standard(id, 7);
    let tp = gen_truth_pair(&s, grid2(), noise).unwrap();
    let plan = ReframePlan::new(grid2(), FrameSpec::ECLIPTIC, s.ribbon_frame(), MICRO).unwrap();
    Framed {
        observed: plan.apply(&tp.observed).unwrap(),
        gdf: plan.apply(&tp.gdf_truth).unwrap(),
        ribbon: plan.apply(&tp.ribbon_truth).unwrap(),
    }
}

struct Separated {
    input: Framed,
    result: SeparationResult,
    eval: EvalReport,
}

fn separated(noise: NoiseMode) -> &'static Separated {
    static IDEAL: OnceLock<Separated> = OnceLock::new();
    static NOISY: OnceLock<Separated> = OnceLock::new();
    let cell = match noise {
        NoiseMode::Ideal => &IDEAL,
        _ => &NOISY,
    };
    cell.get_or_init(|| {
        let input = framed(ScenarioId::S1, noise);
        let result = separate(&input.observed, &default_candidates(), &SeparationConfig::default()).unwrap();
        let eval = eval_gdf_report(&result.gdf, &input.gdf, Some(&result.ribbon), &WisConfig::default()).unwrap();
        Separated { input, result, eval }
    })
}

#[test]
fn center_accuracy() {
    let cfg = CenterConfig::default();
    // 10 degrees due north of the true center
    let offset = (TRUE_CENTER.0, TRUE_CENTER.1 + 10.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for id in [ScenarioId::S1, ScenarioId::S2] {
        let s = SimScenario::standard(id, 7);
        let tp = gen_truth_pair(&s, grid2(), NoiseMode::Ideal).unwrap();
        let at_truth = center_error(&iterate_center(&tp.observed, TRUE_CENTER, &cfg).unwrap());
        let from_offset = center_error(&iterate_center(&tp.observed, offset, &cfg).unwrap());
        ok &= at_truth < 0.5 && from_offset < 1.0;
        lines.push(format!(
            "{id:?} truth-frame {at_truth:.3} deg, offset-frame {from_offset:.3} deg"
        ));
    }
    report("center accuracy", ok, lines.join("; "));
}

#[test]
fn separation_fidelity() {
    let ideal = &separated(NoiseMode::Ideal).eval;
    let noisy = &separated(NoiseMode::Noisy).eval;
    let ok = ideal.spearman >= 0.95 && ideal.mean_abs_pct_error <= 0.10 && noisy.spearman >= 0.85;
    report(
        "separation fidelity",
        ok,
        format!(
            "ideal spearman {:.4} mape {:.4}; noisy spearman {:.4}",
            ideal.spearman, ideal.mean_abs_pct_error, noisy.spearman
        ),
    );
}

#[test]
fn variance_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for n in 0..10_000 {
        let mut draw = |k: usize| -> f64 {
            // mix exact zeros and wide magnitudes into the triples
            if (n + k).is_multiple_of(17) {
                0.0
            } else {
                10f64.powf(rng.random_range(-6.0..3.0))
            }
        };
        let (g, r, y) = (draw(0), draw(1), draw(2));
        let m = conditional_variance(g, r, y).unwrap();
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let scale = g.max(r).max(y);
        ok &= m[(0, 1)] == m[(1, 0)] && m[(0, 1)] <= 0.0 && m[(0, 0)] >= 0.0 && m[(1, 1)] >= 0.0;
        ok &= det >= -1e-12 * scale * scale;
        let lhs = m[(0, 0)] + m[(1, 1)] - sum_variance(g, r, y).unwrap();
        let oracle = 2.0 * g * r / (g + r + y);
        let err = (lhs - oracle).abs() / scale.max(1.0);
        worst = worst.max(err);
        ok &= err <= 1e-12;
    }
    let unit = conditional_variance(1.0, 1.0, 1.0).unwrap();
    let exact = unit[(0, 0)] == 2.0 / 3.0 && unit[(1, 1)] == 2.0 / 3.0 && unit[(0, 1)] == -1.0 / 3.0;
    report(
        "variance algebra",
        ok && exact,
        format!("10000 triples, worst identity error {worst:.2e}, unit case exact {exact}"),
    );
}

#[test]
fn wis_correctness() {
    let m0 = wis(3.0, 1.5, &[], &[]);
    let sixth = wis(1.0, 1.0, &[(0.5, 1.5)], &[0.5]);
    let alphas = WisConfig::default().alphas;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut monotone = true;
    for _ in 0..10_000 {
        let est = rng.random_range(-2.0..2.0);
        let sd: f64 = rng.random_range(0.01..1.0);
        let iv = normal_intervals(est, sd * sd, &alphas);
        let truth = rng.random_range(-4.0..4.0);
        // push the truth further from the point estimate
        let push = rng.random_range(0.0..2.0) * if truth >= est { 1.0 } else { -1.0 };
        monotone &= wis(est, truth + push, &iv, &alphas) >= wis(est, truth, &iv, &alphas) - 1e-12;
        // widen the worst-violated interval's violation by shrinking it
        let mut shrunk = iv.clone();
        let f = rng.random_range(0.0..1.0);
        for (l, u) in shrunk.iter_mut() {
            let mid = 0.5 * (*l + *u);
            *l = mid - f * (mid - *l);
            *u = mid + f * (*u - mid);
        }
        let outside_all = iv.iter().all(|(l, u)| truth < *l || truth > *u);
        if outside_all {
            // narrower intervals only move endpoints away from an outside truth
            let sharp = wis(est, truth, &shrunk, &alphas);
            let base = wis(est, truth, &iv, &alphas);
            let width_gain: f64 = iv
                .iter()
                .zip(&shrunk)
                .zip(&alphas)
                .map(|(((l, u), (sl, su)), a)| 0.5 * a * ((u - l) - (su - sl)))
                .sum::<f64>()
                / (alphas.len() as f64 + 0.5);
            monotone &= sharp + width_gain >= base - 1e-12;
        }
    }
    let ok = m0 == 3.0 && (sixth - 1.0 / 6.0).abs() < 1e-12 && monotone;
    report(
        "wis correctness",
        ok,
        format!("M=0 gives {m0}, worked case {sixth:.15}, violation monotone {monotone}"),
    );
}

#[test]
fn geometry_suite() {
    let (cx, cy, r) = (0.3, -0.2, 0.8);
    let circle: Vec<Vector2<f64>> = (0..36)
        .map(|i| {
            let t = i as f64 * std::f64::consts::TAU / 36.0;
            Vector2::new(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect();
    let e = fit_ellipse(&circle).unwrap();
    let ellipse_err = ((e.center[0] - cx).powi(2) + (e.center[1] - cy).powi(2)).sqrt();

    let n = Vector3::new(0.2, -0.5, 0.8).normalize();
    let plane = PlaneFit {
        normal: [n.x, n.y, n.z],
        offset: 0.4,
        rms: 0.0,
    };
    let pts: Vec<Vector3<f64>> = (0..40)
        .map(|i| {
            let t = i as f64 * 0.37;
            plane.lift(Vector2::new(t.cos() * (1.0 + 0.1 * t), t.sin() * 0.7))
        })
        .collect();
    let fit = fit_plane_svd(&pts).unwrap();
    let normal_err = (fit.normal_vec() - n).norm().min((fit.normal_vec() + n).norm());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut unit = || {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
    };
    let mut iso_err: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b, p, q) = (unit(), unit(), unit(), unit());
        let rot = rodrigues(&a, &b);
        iso_err = iso_err.max(((rot * p - rot * q).norm() - (p - q).norm()).abs());
    }
    let proj = project_to_plane(&pts, &fit);
    let mut proj_err: f64 = 0.0;
    for i in 0..pts.len() {
        for j in 0..i {
            proj_err = proj_err.max(((proj[i] - proj[j]).norm() - (pts[i] - pts[j]).norm()).abs());
        }
    }
    let jk = jackknife_cov(&[Vector2::new(0.4, -1.3); 12]);
    let jk_zero = jk.iter().all(|v| *v == 0.0);

    let ok = ellipse_err < 1e-8 && normal_err < 1e-12 && iso_err < 1e-12 && proj_err < 1e-12 && jk_zero;
    report(
        "geometry suite",
        ok,
        format!(
            "ellipse center {ellipse_err:.1e}, plane normal {normal_err:.1e}, rodrigues {iso_err:.1e}, projection {proj_err:.1e}, jackknife zero {jk_zero}"
        ),
    );
}

#[test]
fn reframing_suite() {
    let g = grid2();
    let smooth: Vec<f64> = g
        .pixel_vectors()
        .iter()
        .map(|p| 0.1 + 0.05 * p.x + 0.03 * p.y * p.z)
        .collect();
    let map = SkyMap::new(g, FrameSpec::ECLIPTIC, smooth.clone(), vec![1e-4; g.len()]).unwrap();

    let same = reframe_map(&map, FrameSpec::ECLIPTIC, MICRO).unwrap();
    let identical = same.rate.iter().zip(&map.rate).all(|(a, b)| a.to_bits() == b.to_bits());

    let target = make_rotation(TRUE_CENTER.0, TRUE_CENTER.1, 0.0);
    let there = reframe_map(&map, target, MICRO).unwrap();
    let back = reframe_map(&there, FrameSpec::ECLIPTIC, MICRO).unwrap();
    let mae = back.rate.iter().zip(&map.rate).map(|(a, b)| (a - b).abs()).sum::<f64>() / g.len() as f64;
    let mut adj: f64 = 0.0;
    for j in 0..g.n_lon {
        for k in 0..g.n_lat {
            let v = map.at(j, k);
            adj = adj.max((v - map.at((j + 1) % g.n_lon, k)).abs());
            if k + 1 < g.n_lat {
                adj = adj.max((v - map.at(j, k + 1)).abs());
            }
        }
    }

    let flat = SkyMap::new(g, FrameSpec::ECLIPTIC, vec![0.125; g.len()], vec![1e-4; g.len()]).unwrap();
    let mut constant_ok = true;
    for (lon, lat, roll) in [(221.5, 39.0, 0.0), (10.0, -60.0, 33.0), (300.0, 5.0, 180.0)] {
        let out = reframe_map(&flat, make_rotation(lon, lat, roll), MICRO).unwrap();
        constant_ok &= out.rate.iter().all(|v| *v == 0.125);
    }

    let ok = identical && mae <= adj && constant_ok;
    report(
        "reframing suite",
        ok,
        format!("identity bit-exact {identical}, round-trip MAE {mae:.2e} <= adjacent bound {adj:.2e}, constant invariant {constant_ok}"),
    );
}

#[test]
fn morphology() {
    let polar: Vec<f64> = (0..90).map(|k| 1.0 + 2.0 * k as f64).collect();
    let gauss: Vec<f64> = polar
        .iter()
        .map(|p| (-0.5 * ((p - 95.0) / 8.0f64).powi(2)).exp())
        .collect();
    let fwhm = profile_fwhm(&gauss, &polar).unwrap();

    let offsets: Vec<f64> = polar.iter().map(|p| p - 90.0).collect();
    let sym: Vec<f64> = offsets.iter().map(|o| 1.0 / (1.0 + (o / 9.0).powi(2))).collect();
    let sym_skew = profile_skewness(&sym, &offsets).unwrap();

    let truth = framed(ScenarioId::S1, NoiseMode::Ideal).ribbon;
    let (skew, _) = sector_morphology(&truth, PolarBand::default());
    let skews: Vec<f64> = skew.iter().flatten().copied().collect();
    let mean_skew = skews.iter().sum::<f64>() / skews.len() as f64;
    let all_negative = skews.iter().all(|s| *s < 0.0);

    let ok = (fwhm - 18.84).abs() <= 0.05 && sym_skew.abs() <= 1e-12 && mean_skew < 0.0 && all_negative;
    report(
        "morphology",
        ok,
        format!(
            "gaussian FWHM {fwhm:.3}, symmetric skewness {sym_skew:.1e}, skewed-ribbon mean skewness {mean_skew:.3}"
        ),
    );
}

fn structural_violations(input: &SkyMap, res: &SeparationResult) -> Vec<String> {
    let mut bad = Vec::new();
    if res.ribbon.rate.iter().any(|v| *v < 0.0) {
        bad.push("negative ribbon".to_string());
    }
    if res.gdf.rate.iter().any(|v| *v < 0.0) {
        bad.push("negative gdf".to_string());
    }
    let sum_ok = (0..input.rate.len())
        .filter(|i| res.ribbon.rate[*i] > 0.0)
        .all(|i| (res.gdf.rate[i] + res.ribbon.rate[i] - input.rate[i]).abs() <= 1e-12 * input.rate[i].abs().max(1.0));
    if !sum_ok {
        bad.push("gdf + ribbon differs from input".to_string());
    }
    if let Some(p) = &res.profile {
        for s in 0..p.n_sectors {
            let v = p.sector(s);
            let zero = (-p.offset_lo) as usize;
            let inward = v[..=zero].windows(2).all(|w| w[0] <= w[1]);
            let outward = v[zero..].windows(2).all(|w| w[0] >= w[1]);
            if !(inward && outward) {
                bad.push(format!("sector {s} profile not monotone"));
                break;
            }
        }
    } else {
        bad.push("no profile model".to_string());
    }
    bad
}

#[test]
fn structural_invariants() {
    let mut lines = Vec::new();
    let mut ok = true;
    for noise in [NoiseMode::Ideal, NoiseMode::Noisy] {
        let s = separated(noise);
        let bad = structural_violations(&s.input.observed, &s.result);
        ok &= bad.is_empty();
        lines.push(format!(
            "S1 {noise:?}: {}",
            if bad.is_empty() { "ok".into() } else { bad.join(", ") }
        ));
    }
    let one = [MaskParams::new(90.0, 20.0).unwrap()];
    for id in [ScenarioId::S2, ScenarioId::S3] {
        let f = framed(id, NoiseMode::Ideal);
        let res = separate(&f.observed, &one, &SeparationConfig::default()).unwrap();
        let bad = structural_violations(&f.observed, &res);
        ok &= bad.is_empty();
        lines.push(format!(
            "{id:?}: {}",
            if bad.is_empty() { "ok".into() } else { bad.join(", ") }
        ));
    }
    report("structural invariants", ok, lines.join("; "));
}

#[test]
fn pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        grid_deg: 6.0,
        draws: 20,
        png: false,
        out_prefix: dir.path().join("run").display().to_string(),
        ..RunConfig::default()
    };
    let snapshot = |report: &enasep_cli::PipelineReport| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<String> = report.outputs.clone();
        files.push(format!("{}_report.json", cfg.out_prefix));
        files.iter().map(|f| (f.clone(), std::fs::read(f).unwrap())).collect()
    };
    let first = snapshot(&run_pipeline(&cfg).unwrap());
    let second = snapshot(&run_pipeline(&cfg).unwrap());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let kinds = ["csv", "json", "pgm"]
        .iter()
        .all(|ext| first.iter().any(|(f, _)| f.ends_with(ext)));
    let ok = first.len() == second.len() && differing.is_empty() && kinds;
    report(
        "pipeline determinism",
        ok,
        format!(
            "{} files compared, {} differ {:?}",
            first.len(),
            differing.len(),
            differing
        ),
    );
}

#[test]
fn coverage_diagnostic() {
    let mut lines = Vec::new();
    let mut ok = true;
    for noise in [NoiseMode::Ideal, NoiseMode::Noisy] {
        let e = &separated(noise).eval;
        ok &= (0.0..=1.0).contains(&e.coverage_95) && e.coverage_regression == (e.coverage_95 < 0.5);
        lines.push(format!(
            "S1 {noise:?} coverage {:.3}{}",
            e.coverage_95,
            if e.coverage_regression { " REGRESSION" } else { "" }
        ));
    }
    report("coverage diagnostic", ok, lines.join("; "));
}
