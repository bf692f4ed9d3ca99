//! ESRI ASCII grid reader/writer. Cell registration uses the lower-left
//! corner convention of the format; rows run north to south.

use super::{Crs, HeightGrid, LengthUnit};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn load_ascii_grid(path: &Path, crs: Crs, unit: LengthUnit) -> Result<HeightGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut cellsize = None;
    let mut nodata = -9999.0f32;
    // Header: KEY VALUE pairs until the first bare number.
    let mut pending: Vec<f32> = Vec::new();
    while let Some(tok) = tokens.next() {
        let key = tok.to_ascii_lowercase();
        match key.as_str() {
            "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" | "nodata_value" => {
                let val: f64 = tokens
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(path, format!("bad value for {key}")))?;
                match key.as_str() {
                    "ncols" => ncols = Some(val as usize),
                    "nrows" => nrows = Some(val as usize),
                    "xllcorner" => xll = Some(val),
                    "yllcorner" => yll = Some(val),
                    "cellsize" => cellsize = Some(val),
                    _ => nodata = val as f32,
                }
            }
            _ => {
                let v: f32 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, format!("unexpected token {tok}")))?;
                pending.push(v);
                break;
            }
        }
    }
    let (Some(w), Some(h), Some(xll), Some(yll), Some(cell)) = (ncols, nrows, xll, yll, cellsize)
    else {
        return Err(Error::parse(path, "incomplete ESRI ASCII header"));
    };
    let mut values = pending;
    values.reserve(w * h);
    for tok in tokens {
        values.push(
            tok.parse()
                .map_err(|_| Error::parse(path, format!("bad cell value {tok}")))?,
        );
    }
    if values.len() != w * h {
        return Err(Error::parse(
            path,
            format!("expected {} cells, found {}", w * h, values.len()),
        ));
    }
    Ok(HeightGrid {
        width: w,
        height: h,
        transform: [xll, cell, 0.0, yll + h as f64 * cell, 0.0, -cell],
        crs,
        nodata,
        unit,
        values,
    })
}

pub fn save_ascii_grid(path: &Path, grid: &HeightGrid) -> Result<()> {
    if grid.transform[2] != 0.0 || grid.transform[4] != 0.0 {
        return Err(Error::UnsupportedRaster(
            "rotated geotransform cannot be written as ESRI ASCII".into(),
        ));
    }
    let cell = grid.transform[1];
    if (grid.transform[5] + cell).abs() > 1e-12 * cell.abs().max(1.0) {
        return Err(Error::UnsupportedRaster(
            "ESRI ASCII needs square cells".into(),
        ));
    }
    let mut out = String::new();
    let _ = writeln!(out, "NCOLS {}", grid.width);
    let _ = writeln!(out, "NROWS {}", grid.height);
    let _ = writeln!(out, "XLLCORNER {}", grid.transform[0]);
    let _ = writeln!(
        out,
        "YLLCORNER {}",
        grid.transform[3] - grid.height as f64 * cell
    );
    let _ = writeln!(out, "CELLSIZE {cell}");
    let _ = writeln!(out, "NODATA_VALUE {}", grid.nodata);
    for row in 0..grid.height {
        let mut line = String::new();
        for col in 0..grid.width {
            if col > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", grid.values[row * grid.width + col]);
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
