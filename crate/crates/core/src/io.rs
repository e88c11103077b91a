//! CSV encodings for maps, peaks and masks.
//!
//! Map files start with a grid/frame descriptor and then list every pixel in
//! longitude-major order:
//!
//! ```text
//! lon_bins,lat_bins,pixel_deg,frame_lon,frame_lat,frame_roll
//! 180,90,2,221.5,39,0
//! lon_center,lat_center,rate,var
//! 1,-89,0.0123,1e-6
//! ...
//! ```
//!
//! A fifth `var_y` column is written when the map carries observation
//! variances. Floats use the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::RibbonMask;
use crate::peaks::{PeakQuality, RibbonPeaks};
use crate::skygrid::{FrameSpec, GridSpec, SkyMap};

pub const GRID_HEADER: &str = "lon_bins,lat_bins,pixel_deg,frame_lon,frame_lat,frame_roll";
pub const PIXEL_HEADER: &str = "lon_center,lat_center,rate,var";
pub const PIXEL_HEADER_VAR_Y: &str = "lon_center,lat_center,rate,var,var_y";

pub fn write_map<W: Write>(map: &SkyMap, mut out: W) -> Result<()> {
    let g = &map.grid;
    let f = &map.frame;
    writeln!(out, "{GRID_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        g.n_lon, g.n_lat, g.pixel_deg, f.center_lon, f.center_lat, f.roll
    )?;
    match &map.var_y {
        None => writeln!(out, "{PIXEL_HEADER}")?,
        Some(_) => writeln!(out, "{PIXEL_HEADER_VAR_Y}")?,
    }
    for i in 0..g.len() {
        let (j, k) = g.unindex(i);
        write!(
            out,
            "{},{},{},{}",
            g.lon_center(j),
            g.lat_center(k),
            map.rate[i],
            map.var[i]
        )?;
        if let Some(vy) = &map.var_y {
            write!(out, ",{}", vy[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("{field:?}: {e}"),
    })
}

fn parse_usize(field: &str, line: usize) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|e| Error::Parse {
        line,
        msg: format!("{field:?}: {e}"),
    })
}

pub fn read_map<R: BufRead>(input: R) -> Result<SkyMap> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n + 1, l)),
            Some((n, Err(e))) => Err(Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            }),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (n, header) = next("grid header")?;
    if header.trim_end() != GRID_HEADER {
        return Err(Error::Parse {
            line: n,
            msg: format!("expected header {GRID_HEADER:?}"),
        });
    }
    let (n, desc) = next("grid descriptor")?;
    let fields: Vec<&str> = desc.trim_end().split(',').collect();
    if fields.len() != 6 {
        return Err(Error::Parse {
            line: n,
            msg: format!("grid descriptor has {} fields, expected 6", fields.len()),
        });
    }
    let grid = GridSpec::new(
        parse_usize(fields[0], n)?,
        parse_usize(fields[1], n)?,
        parse_f64(fields[2], n)?,
    )?;
    let frame = FrameSpec {
        center_lon: parse_f64(fields[3], n)?,
        center_lat: parse_f64(fields[4], n)?,
        roll: parse_f64(fields[5], n)?,
    };

    let (n, cols) = next("pixel header")?;
    let with_var_y = match cols.trim_end() {
        PIXEL_HEADER => false,
        PIXEL_HEADER_VAR_Y => true,
        _ => {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected pixel header {PIXEL_HEADER:?}"),
            })
        }
    };
    let width = if with_var_y { 5 } else { 4 };

    let total = grid.len();
    let mut rate = Vec::with_capacity(total);
    let mut var = Vec::with_capacity(total);
    let mut var_y = Vec::new();
    for i in 0..total {
        let (n, row) = next("pixel row")?;
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: n,
                msg: format!("row has {} fields, expected {width}", fields.len()),
            });
        }
        let (j, k) = grid.unindex(i);
        let lon = parse_f64(fields[0], n)?;
        let lat = parse_f64(fields[1], n)?;
        if (lon - grid.lon_center(j)).abs() > 1e-9 || (lat - grid.lat_center(k)).abs() > 1e-9 {
            return Err(Error::Parse {
                line: n,
                msg: format!(
                    "pixel ({lon}, {lat}) out of order, expected ({}, {})",
                    grid.lon_center(j),
                    grid.lat_center(k)
                ),
            });
        }
        rate.push(parse_f64(fields[2], n)?);
        var.push(parse_f64(fields[3], n)?);
        if with_var_y {
            var_y.push(parse_f64(fields[4], n)?);
        }
    }
    for (n, rest) in lines {
        let rest = rest.map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        if !rest.trim().is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                msg: "trailing rows after the last pixel".into(),
            });
        }
    }

    let map = SkyMap {
        grid,
        frame,
        rate,
        var,
        var_y: with_var_y.then_some(var_y),
    };
    map.validate()?;
    Ok(map)
}

pub fn save_map(map: &SkyMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<SkyMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_map(BufReader::new(file))
}

pub fn write_peaks<W: Write>(peaks: &RibbonPeaks, mut out: W) -> Result<()> {
    writeln!(out, "azimuth,peak_polar,peak_height,quality")?;
    for s in 0..peaks.len() {
        let q = match peaks.quality[s] {
            PeakQuality::Ok => "ok",
            PeakQuality::Interpolated => "interpolated",
            PeakQuality::Flat => "flat",
            PeakQuality::Edge => "edge",
        };
        writeln!(
            out,
            "{},{},{},{}",
            peaks.sector_azimuth[s], peaks.peak_polar[s], peaks.peak_height[s], q
        )?;
    }
    Ok(())
}

pub fn write_mask<W: Write>(mask: &RibbonMask, mut out: W) -> Result<()> {
    writeln!(out, "azimuth,lower_polar,upper_polar")?;
    for s in 0..mask.lower.len() {
        writeln!(out, "{},{},{}", mask.azimuth[s], mask.lower[s], mask.upper[s])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_map() -> SkyMap {
        let g = GridSpec::from_pixel_deg(30.0).unwrap();
        let rate: Vec<f64> = (0..g.len()).map(|i| 0.1 + i as f64 / 7.0).collect();
        let var: Vec<f64> = (0..g.len()).map(|i| 1e-6 * (i as f64 + 1.0) / 3.0).collect();
        SkyMap::new(g, crate::skygrid::make_rotation(221.5, 39.0, 0.0), rate, var).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let map = small_map();
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        let back = read_map(buf.as_slice()).unwrap();
        assert_eq!(back, map);
        let mut again = Vec::new();
        write_map(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_map(&small_map(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(GRID_HEADER));
        assert_eq!(lines.next(), Some("12,6,30,221.5,39,0"));
        assert_eq!(lines.next(), Some(PIXEL_HEADER));
        assert!(lines.next().unwrap().starts_with("15,-75,"));
    }

    #[test]
    fn missing_pixel_rejected() {
        let mut buf = Vec::new();
        write_map(&small_map(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_map(truncated.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn var_y_column_round_trips() {
        let mut map = small_map();
        map.var_y = Some(map.var.iter().map(|v| 2.0 * v).collect());
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        assert_eq!(read_map(buf.as_slice()).unwrap(), map);
    }

    #[test]
    fn negative_rate_rejected() {
        let mut buf = Vec::new();
        write_map(&small_map(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen(",0.1,", ",-0.1,", 1);
        assert!(read_map(text.as_bytes()).is_err());
    }
}
