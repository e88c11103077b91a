//! Fixed-scale grayscale rendering of maps.
//!
//! Rates are clamped to `[lo, hi]` and mapped linearly onto 0..=255, rounding
//! half away from zero, so the midpoint of the range renders as 128. The
//! image has one pixel per map pixel with azimuth increasing to the right and
//! the frame's north pole on the top row.

use std::io::Write;
use std::path::Path;

use enasep::SkyMap;

use crate::error::{CliError, Result};

pub fn gray_level(rate: f64, lo: f64, hi: f64) -> u8 {
    let t = ((rate - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

/// Row-major gray levels, top row first.
pub fn gray_levels(map: &SkyMap, lo: f64, hi: f64) -> Vec<u8> {
    let g = map.grid;
    let mut out = Vec::with_capacity(g.len());
    for k in (0..g.n_lat).rev() {
        for j in 0..g.n_lon {
            out.push(gray_level(map.at(j, k), lo, hi));
        }
    }
    out
}

/// Binary PGM (P5) encoding with the grid, frame and scale in a comment.
pub fn pgm_bytes(map: &SkyMap, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !(lo < hi) {
        return Err(CliError::Config(format!(
            "render range must have lo < hi, got [{lo}, {hi}]"
        )));
    }
    let g = map.grid;
    let f = map.frame;
    let mut out = Vec::with_capacity(g.len() + 128);
    write!(
        out,
        "P5\n# pixel_deg={} frame={},{},{} scale={},{}\n{} {}\n255\n",
        g.pixel_deg, f.center_lon, f.center_lat, f.roll, lo, hi, g.n_lon, g.n_lat
    )
    .expect("write to vec");
    out.extend(gray_levels(map, lo, hi));
    Ok(out)
}

/// Writes `path` as PGM, and `png` as PNG when given.
pub fn render_heatmap(map: &SkyMap, lo: f64, hi: f64, path: impl AsRef<Path>, png: Option<&Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = pgm_bytes(map, lo, hi)?;
    std::fs::write(path, bytes).map_err(CliError::io(path))?;
    if let Some(p) = png {
        let g = map.grid;
        let img = image::GrayImage::from_raw(g.n_lon as u32, g.n_lat as u32, gray_levels(map, lo, hi))
            .expect("buffer matches dimensions");
        img.save(p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use enasep::{FrameSpec, GridSpec};

    fn const_map(v: f64) -> SkyMap {
        let g = GridSpec::from_pixel_deg(30.0).unwrap();
        SkyMap::new(g, FrameSpec::ECLIPTIC, vec![v; g.len()], vec![0.0; g.len()]).unwrap()
    }

    #[test]
    fn extremes_are_black_and_white() {
        assert!(gray_levels(&const_map(0.0), 0.0, 0.3).iter().all(|v| *v == 0));
        assert!(gray_levels(&const_map(0.3), 0.0, 0.3).iter().all(|v| *v == 255));
        assert!(gray_levels(&const_map(5.0), 0.0, 0.3).iter().all(|v| *v == 255));
        assert!(gray_levels(&const_map(0.0), 0.1, 0.3).iter().all(|v| *v == 0));
    }

    #[test]
    fn midpoint_rounds_up() {
        assert_eq!(gray_level(0.5, 0.0, 1.0), 128);
        assert_eq!(gray_level(0.0, 0.0, 1.0), 0);
    }

    #[test]
    fn pgm_layout() {
        let map = const_map(0.15);
        let bytes = pgm_bytes(&map, 0.0, 0.3).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("P5\n# pixel_deg=30"));
        assert!(text.contains("\n12 6\n255\n"));
        assert_eq!(&bytes[bytes.len() - 72..], &[128u8; 72][..]);
    }

    #[test]
    fn top_row_is_north() {
        let g = GridSpec::from_pixel_deg(30.0).unwrap();
        let rate: Vec<f64> = (0..g.len()).map(|i| g.lat_center(g.unindex(i).1) + 90.0).collect();
        let map = SkyMap::new(g, FrameSpec::ECLIPTIC, rate, vec![0.0; g.len()]).unwrap();
        let px = gray_levels(&map, 0.0, 180.0);
        assert!(px[0] > px[px.len() - 1]);
    }

    #[test]
    fn empty_range_rejected() {
        assert!(pgm_bytes(&const_map(0.0), 1.0, 1.0).is_err());
    }
}
