//! Separation of full-sky ENA rate maps into a ribbon component and a
//! globally distributed flux (GDF) component, ribbon-center estimation, and
//! evaluation against synthetic truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod center;
pub mod error;
pub mod gdf;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod peaks;
pub mod ribbonfit;
pub mod simgen;
pub mod skygrid;
pub mod spline;
pub mod uncertainty;

pub use center::{
    draw_maps, estimate_center, estimate_kron_corr, fit_ellipse, fit_plane_svd, iterate_center, jackknife_center_cov,
    project_to_plane, CenterConfig, CenterEstimate, EllipseFit, KroneckerCorr, PlaneFit,
};
pub use error::{Error, Result};
pub use gdf::{initial_gdf, GdfConfig, PPRFit, SmoothConfig, SmoothFit};
pub use io::{load_map, read_map, save_map, write_map};
pub use mask::{build_mask, default_candidates, select_mask_params, MaskParams, RibbonMask};
pub use metrics::{
    coverage, eval_gdf_report, normal_intervals, profile_fwhm, profile_skewness, spearman, wis, EvalReport, WisConfig,
};
pub use peaks::{
    estimate_peaks_cubic, fit_gaussian_profile, smooth_peaks, GaussianProfileFit, PeakQuality, PolarBand, RibbonPeaks,
};
pub use ribbonfit::{
    fit_ribbon_profile, scale_ribbon, separate, RibbonProfileModel, SeparationConfig, SeparationResult,
};
pub use simgen::{gen_gdf, gen_ribbon, gen_truth_pair, NoiseMode, ScenarioId, SimScenario, TruthPair};
pub use skygrid::{make_rotation, reframe_map, FrameSpec, GridSpec, ReframePlan, SkyMap, UnitVec};
pub use uncertainty::{conditional_variance, inflation, recover_components, NoiseModel, VarianceSplit};
