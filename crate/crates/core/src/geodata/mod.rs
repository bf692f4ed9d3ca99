//! Digital-surface-model ground-truth preparation: footprint estimation
//! from (lat, lon, zoom), a tile spatial index, bilinear reprojection onto
//! the satellite pixel grid, best-coverage selection, feet-to-meters
//! conversion, and NaN quality control, plus the raster I/O behind it.

pub mod ascii;
pub mod mercator;
pub mod tiff;

use crate::error::{Error, Result};
use mercator::{check_latitude, lonlat_to_mercator, mercator_to_lonlat, GSD_EQUATOR_Z0};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crs {
    Wgs84,
    WebMercator,
    /// Scene-frame meters (rendered height maps); not georeferenced.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    Meters,
    Feet,
}

/// WGS84 bounding box in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoBBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl GeoBBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<GeoBBox> {
        if !(min_lon < max_lon && min_lat < max_lat) {
            return Err(Error::InvalidConfig(format!(
                "degenerate bbox [{min_lon}, {min_lat}, {max_lon}, {max_lat}]"
            )));
        }
        check_latitude(min_lat)?;
        check_latitude(max_lat)?;
        Ok(GeoBBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        })
    }

    /// Closed-box intersection test.
    pub fn intersects(&self, other: &GeoBBox) -> bool {
        self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
            && self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
    }
}

/// Georeferenced single-band elevation raster. `transform` follows the
/// usual six-coefficient convention mapping pixel (col, row) corners to
/// CRS coordinates: X = t0 + col*t1 + row*t2, Y = t3 + col*t4 + row*t5;
/// row 0 is the northernmost.
#[derive(Clone, Debug)]
pub struct HeightGrid {
    pub width: usize,
    pub height: usize,
    pub transform: [f64; 6],
    pub crs: Crs,
    pub nodata: f32,
    pub unit: LengthUnit,
    /// Row-major from the top row.
    pub values: Vec<f32>,
}

impl HeightGrid {
    pub fn filled(
        width: usize,
        height: usize,
        transform: [f64; 6],
        crs: Crs,
        value: f32,
    ) -> HeightGrid {
        HeightGrid {
            width,
            height,
            transform,
            crs,
            nodata: f32::NAN,
            unit: LengthUnit::Meters,
            values: vec![value; width * height],
        }
    }

    #[inline]
    pub fn is_nodata(&self, v: f32) -> bool {
        if self.nodata.is_nan() {
            v.is_nan()
        } else {
            v == self.nodata
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.values[row * self.width + col] = v;
    }

    /// CRS coordinates of a pixel center.
    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        let t = &self.transform;
        let (c, r) = (col + 0.5, row + 0.5);
        (t[0] + c * t[1] + r * t[2], t[3] + c * t[4] + r * t[5])
    }

    /// Continuous pixel coordinates (corner-based) of a CRS point.
    pub fn crs_to_pixel(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let t = &self.transform;
        let det = t[1] * t[5] - t[2] * t[4];
        if det.abs() < 1e-18 {
            return Err(Error::Degenerate("singular geotransform".into()));
        }
        let dx = x - t[0];
        let dy = y - t[3];
        Ok(((dx * t[5] - dy * t[2]) / det, (dy * t[1] - dx * t[4]) / det))
    }

    /// Fraction of non-nodata pixels.
    pub fn coverage(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let valid = self.values.iter().filter(|v| !self.is_nodata(**v)).count();
        valid as f64 / self.values.len() as f64
    }

    /// WGS84 footprint of the raster (converting from Web Mercator when
    /// needed).
    pub fn wgs84_bbox(&self) -> Result<GeoBBox> {
        let corners = [
            (0.0, 0.0),
            (self.width as f64, 0.0),
            (0.0, self.height as f64),
            (self.width as f64, self.height as f64),
        ];
        let mut min_lon = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        let mut min_lat = f64::INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        for (c, r) in corners {
            let t = &self.transform;
            let x = t[0] + c * t[1] + r * t[2];
            let y = t[3] + c * t[4] + r * t[5];
            let (lon, lat) = match self.crs {
                Crs::Wgs84 => (x, y),
                Crs::WebMercator => mercator_to_lonlat(x, y),
                Crs::Local => {
                    return Err(Error::CrsMismatch(
                        "local-frame grid has no geographic footprint".into(),
                    ))
                }
            };
            min_lon = min_lon.min(lon);
            max_lon = max_lon.max(lon);
            min_lat = min_lat.min(lat);
            max_lat = max_lat.max(lat);
        }
        GeoBBox::new(min_lon, min_lat, max_lon, max_lat)
    }
}

/// WGS84 footprint of a satellite crop centered at (lat, lon): the
/// half-extents follow the Web Mercator tile scheme's ground sample
/// distance at that latitude and zoom, converted through exact spherical
/// Web Mercator.
pub fn estimate_bbox(lat: f64, lon: f64, zoom: u32, px_w: usize, px_h: usize) -> Result<GeoBBox> {
    check_latitude(lat)?;
    // Ground GSD carries cos(lat); mapping to projected meters divides it
    // back out, so the projected half-extent is the equatorial scale.
    let gsd_projected = GSD_EQUATOR_Z0 / (1u64 << zoom) as f64;
    let half_w = gsd_projected * px_w as f64 / 2.0;
    let half_h = gsd_projected * px_h as f64 / 2.0;
    let (mx, my) = lonlat_to_mercator(lon, lat);
    let (min_lon, min_lat) = mercator_to_lonlat(mx - half_w, my - half_h);
    let (max_lon, max_lat) = mercator_to_lonlat(mx + half_w, my + half_h);
    GeoBBox::new(min_lon, min_lat, max_lon, max_lat)
}

/// Uniform-grid spatial index over tile footprints in WGS84.
#[derive(Debug)]
pub struct TileIndex {
    boxes: Vec<GeoBBox>,
    bounds: GeoBBox,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl TileIndex {
    pub fn build(boxes: Vec<GeoBBox>) -> Result<TileIndex> {
        if boxes.is_empty() {
            return Err(Error::InvalidConfig("cannot index zero tiles".into()));
        }
        let bounds = GeoBBox::new(
            boxes.iter().map(|b| b.min_lon).fold(f64::INFINITY, f64::min),
            boxes.iter().map(|b| b.min_lat).fold(f64::INFINITY, f64::min),
            boxes
                .iter()
                .map(|b| b.max_lon)
                .fold(f64::NEG_INFINITY, f64::max),
            boxes
                .iter()
                .map(|b| b.max_lat)
                .fold(f64::NEG_INFINITY, f64::max),
        )?;
        let n = (boxes.len() as f64).sqrt().ceil() as usize + 1;
        let (nx, ny) = (n, n);
        let mut cells = vec![Vec::new(); nx * ny];
        let span_lon = bounds.max_lon - bounds.min_lon;
        let span_lat = bounds.max_lat - bounds.min_lat;
        for (i, b) in boxes.iter().enumerate() {
            let c0 = (((b.min_lon - bounds.min_lon) / span_lon * nx as f64) as usize).min(nx - 1);
            let c1 = (((b.max_lon - bounds.min_lon) / span_lon * nx as f64) as usize).min(nx - 1);
            let r0 = (((b.min_lat - bounds.min_lat) / span_lat * ny as f64) as usize).min(ny - 1);
            let r1 = (((b.max_lat - bounds.min_lat) / span_lat * ny as f64) as usize).min(ny - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells[r * nx + c].push(i);
                }
            }
        }
        Ok(TileIndex {
            boxes,
            bounds,
            nx,
            ny,
            cells,
        })
    }

    /// Indices of tiles whose boxes intersect the query, ascending.
    pub fn query(&self, query: &GeoBBox) -> Vec<usize> {
        if !self.bounds.intersects(query) {
            return Vec::new();
        }
        let span_lon = self.bounds.max_lon - self.bounds.min_lon;
        let span_lat = self.bounds.max_lat - self.bounds.min_lat;
        let clampc = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let c0 = clampc(
            (query.min_lon - self.bounds.min_lon) / span_lon * self.nx as f64,
            self.nx,
        );
        let c1 = clampc(
            (query.max_lon - self.bounds.min_lon) / span_lon * self.nx as f64,
            self.nx,
        );
        let r0 = clampc(
            (query.min_lat - self.bounds.min_lat) / span_lat * self.ny as f64,
            self.ny,
        );
        let r1 = clampc(
            (query.max_lat - self.bounds.min_lat) / span_lat * self.ny as f64,
            self.ny,
        );
        let mut hits = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in &self.cells[r * self.nx + c] {
                    if self.boxes[i].intersects(query) {
                        hits.push(i);
                    }
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits
    }
}

/// Bilinear reprojection of a source raster onto the satellite pixel
/// lattice over `target_bbox` (WGS84). Source taps with nonzero weight
/// that are out of bounds or nodata make the target pixel nodata.
pub fn reproject_bilinear(
    tile: &HeightGrid,
    target_bbox: &GeoBBox,
    out_w: usize,
    out_h: usize,
) -> Result<HeightGrid> {
    if tile.crs == Crs::Local {
        return Err(Error::CrsMismatch(
            "cannot reproject from a local-frame grid".into(),
        ));
    }
    let span_lon = target_bbox.max_lon - target_bbox.min_lon;
    let span_lat = target_bbox.max_lat - target_bbox.min_lat;
    let transform = [
        target_bbox.min_lon,
        span_lon / out_w as f64,
        0.0,
        target_bbox.max_lat,
        0.0,
        -span_lat / out_h as f64,
    ];
    let mut out = HeightGrid {
        width: out_w,
        height: out_h,
        transform,
        crs: Crs::Wgs84,
        nodata: f32::NAN,
        unit: tile.unit,
        values: vec![f32::NAN; out_w * out_h],
    };
    for row in 0..out_h {
        for col in 0..out_w {
            let (lon, lat) = out.pixel_center(col as f64, row as f64);
            let (sx, sy) = match tile.crs {
                Crs::Wgs84 => (lon, lat),
                Crs::WebMercator => lonlat_to_mercator(lon, lat),
                Crs::Local => unreachable!(),
            };
            let (pc, pr) = tile.crs_to_pixel(sx, sy)?;
            // Center-based continuous coordinates.
            let (gc, gr) = (pc - 0.5, pr - 0.5);
            let c0 = gc.floor();
            let r0 = gr.floor();
            let (fc, fr) = (gc - c0, gr - r0);
            let mut acc = 0.0f64;
            let mut ok = true;
            for (dc, dr, w) in [
                (0i64, 0i64, (1.0 - fc) * (1.0 - fr)),
                (1, 0, fc * (1.0 - fr)),
                (0, 1, (1.0 - fc) * fr),
                (1, 1, fc * fr),
            ] {
                if w == 0.0 {
                    continue;
                }
                let c = c0 as i64 + dc;
                let r = r0 as i64 + dr;
                if c < 0 || r < 0 || c >= tile.width as i64 || r >= tile.height as i64 {
                    ok = false;
                    break;
                }
                let v = tile.get(c as usize, r as usize);
                if tile.is_nodata(v) {
                    ok = false;
                    break;
                }
                acc += w * v as f64;
            }
            if ok {
                out.set(col, row, acc as f32);
            }
        }
    }
    Ok(out)
}

/// The candidate with the highest coverage, ties broken by first-seen
/// order. `None` when no candidate has any coverage.
pub fn select_best_coverage(
    candidates: Vec<HeightGrid>,
) -> Result<Option<(usize, HeightGrid)>> {
    if candidates.is_empty() {
        return Err(Error::Degenerate("no reprojection candidates".into()));
    }
    let mut best: Option<(usize, HeightGrid)> = None;
    let mut max_coverage = 0.0;
    for (i, grid) in candidates.into_iter().enumerate() {
        let coverage = grid.coverage();
        if coverage > max_coverage {
            max_coverage = coverage;
            best = Some((i, grid));
        }
    }
    Ok(best)
}

pub const FEET_TO_METERS: f64 = 0.3048;

/// Convert a feet grid to meters in place; converting a grid already in
/// meters is an error so the conversion cannot be applied twice.
pub fn feet_to_meters(grid: &mut HeightGrid) -> Result<()> {
    if grid.unit == LengthUnit::Meters {
        return Err(Error::InvalidConfig(
            "grid is already in meters; feet conversion refused".into(),
        ));
    }
    for v in grid.values.iter_mut() {
        if !(grid.nodata.is_nan() && v.is_nan()) && *v != grid.nodata {
            *v = (*v as f64 * FEET_TO_METERS) as f32;
        }
    }
    grid.unit = LengthUnit::Meters;
    Ok(())
}

/// Accept when the nodata percentage is at or below the threshold. The
/// percentage is computed from the raw count so an exact 5.0% stays 5.0.
pub fn qc_nan(grid: &HeightGrid, threshold_pct: f64) -> (bool, f64) {
    let bad = grid
        .values
        .iter()
        .filter(|v| grid.is_nodata(**v))
        .count();
    let nan_percent = bad as f64 * 100.0 / grid.values.len().max(1) as f64;
    (nan_percent <= threshold_pct, nan_percent)
}

/// Per-tile length unit keyed on the filename: a `_ft` stem suffix marks
/// feet.
pub fn unit_from_path(path: &Path) -> LengthUnit {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) if stem.ends_with("_ft") => LengthUnit::Feet,
        _ => LengthUnit::Meters,
    }
}

/// Load a raster by extension: `.asc` (ESRI ASCII, WGS84 assumed) or
/// `.tif`/`.tiff` (the GeoTIFF subset).
pub fn load_grid(path: &Path) -> Result<HeightGrid> {
    let unit = unit_from_path(path);
    match path.extension().and_then(|e| e.to_str()) {
        Some("asc") => ascii::load_ascii_grid(path, Crs::Wgs84, unit),
        Some("tif") | Some("tiff") => tiff::load_geotiff(path, unit),
        other => Err(Error::UnsupportedRaster(format!(
            "unknown raster extension {other:?}"
        ))),
    }
}

pub fn save_grid(path: &Path, grid: &HeightGrid) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("asc") => ascii::save_ascii_grid(path, grid),
        Some("tif") | Some("tiff") => tiff::save_geotiff(path, grid),
        other => Err(Error::UnsupportedRaster(format!(
            "unknown raster extension {other:?}"
        ))),
    }
}

/// Parse `<lat>_<lon>_z<zoom>` from a satellite image filename.
pub fn parse_image_filename(path: &Path) -> Result<(f64, f64, u32)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::parse(path, "no file stem"))?;
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() != 3 || !parts[2].starts_with('z') {
        return Err(Error::parse(
            path,
            "expected `<lat>_<lon>_z<zoom>` filename convention",
        ));
    }
    let lat: f64 = parts[0]
        .parse()
        .map_err(|_| Error::parse(path, format!("bad latitude `{}`", parts[0])))?;
    let lon: f64 = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, format!("bad longitude `{}`", parts[1])))?;
    let zoom: u32 = parts[2][1..]
        .parse()
        .map_err(|_| Error::parse(path, format!("bad zoom `{}`", parts[2])))?;
    Ok((lat, lon, zoom))
}

#[derive(Clone, Debug)]
pub struct SatImageMeta {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub zoom: u32,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Default)]
pub struct PrepareConfig {
    /// Reject when the nodata percentage exceeds this (5.0 per the
    /// preparation pipeline).
    pub nan_threshold_pct: f64,
    /// Treat every tile as feet regardless of filename (the pipeline's
    /// original single-source behavior).
    pub assume_feet: bool,
    /// Beyond the single-best-tile pipeline: fill nodata pixels by
    /// averaging every candidate's coverage. Off by default.
    pub mosaic: bool,
}

impl PrepareConfig {
    pub fn new() -> Self {
        PrepareConfig {
            nan_threshold_pct: 5.0,
            assume_feet: false,
            mosaic: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrepareOutcome {
    pub image: String,
    pub accepted: bool,
    pub reason: String,
    pub coverage: f64,
    pub nan_percent: f64,
    pub grid: Option<HeightGrid>,
}

/// The full preparation pipeline for one image against an indexed tile
/// set: estimate the footprint, reproject every overlapping tile onto the
/// image lattice, keep the best coverage, convert units, and apply the
/// nodata quality gate.
pub fn prepare_one(
    meta: &SatImageMeta,
    index: &TileIndex,
    tiles: &[HeightGrid],
    cfg: &PrepareConfig,
) -> Result<PrepareOutcome> {
    let reject = |reason: &str| PrepareOutcome {
        image: meta.name.clone(),
        accepted: false,
        reason: reason.to_string(),
        coverage: 0.0,
        nan_percent: 100.0,
        grid: None,
    };
    let target = estimate_bbox(meta.lat, meta.lon, meta.zoom, meta.width, meta.height)?;
    let candidates = index.query(&target);
    if candidates.is_empty() {
        return Ok(reject("no overlapping tile"));
    }
    let mut reprojected = Vec::with_capacity(candidates.len());
    for &t in &candidates {
        reprojected.push(reproject_bilinear(
            &tiles[t],
            &target,
            meta.width,
            meta.height,
        )?);
    }
    let mut best = if cfg.mosaic {
        mosaic_candidates(&reprojected)
    } else {
        match select_best_coverage(reprojected)? {
            Some((_, grid)) => grid,
            None => return Ok(reject("no candidate with coverage")),
        }
    };
    if cfg.assume_feet {
        best.unit = LengthUnit::Feet;
    }
    if best.unit == LengthUnit::Feet {
        feet_to_meters(&mut best)?;
    }
    let (accepted, nan_percent) = qc_nan(&best, cfg.nan_threshold_pct);
    let coverage = best.coverage();
    Ok(PrepareOutcome {
        image: meta.name.clone(),
        accepted,
        reason: if accepted {
            "ok".into()
        } else {
            format!("insufficient DSM coverage ({nan_percent:.2}% nodata)")
        },
        coverage,
        nan_percent,
        grid: accepted.then_some(best),
    })
}

/// Average the non-nodata candidate values per pixel. Units must agree.
fn mosaic_candidates(candidates: &[HeightGrid]) -> HeightGrid {
    let mut out = candidates[0].clone();
    let n = out.values.len();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u32; n];
    for cand in candidates {
        for i in 0..n {
            let v = cand.values[i];
            if !cand.is_nodata(v) {
                sums[i] += v as f64;
                counts[i] += 1;
            }
        }
    }
    for i in 0..n {
        out.values[i] = if counts[i] > 0 {
            (sums[i] / counts[i] as f64) as f32
        } else {
            f32::NAN
        };
    }
    out.nodata = f32::NAN;
    out
}

/// Prepare every image in a directory; returns per-image outcomes in
/// filename order and writes `<name>.dsm.tif` plus a manifest into
/// `out_dir`.
pub fn prepare_dsm(
    image_dir: &Path,
    tile_dir: &Path,
    out_dir: &Path,
    cfg: &PrepareConfig,
) -> Result<Vec<PrepareOutcome>> {
    let mut tile_paths: Vec<PathBuf> = std::fs::read_dir(tile_dir)
        .map_err(|e| Error::io(tile_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("tif") | Some("tiff") | Some("asc")
            )
        })
        .collect();
    tile_paths.sort();
    if tile_paths.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no raster tiles found in {}",
            tile_dir.display()
        )));
    }
    let mut tiles = Vec::with_capacity(tile_paths.len());
    let mut boxes = Vec::with_capacity(tile_paths.len());
    for p in &tile_paths {
        let grid = load_grid(p)?;
        boxes.push(grid.wgs84_bbox()?);
        tiles.push(grid);
    }
    let index = TileIndex::build(boxes)?;

    let mut image_paths: Vec<PathBuf> = std::fs::read_dir(image_dir)
        .map_err(|e| Error::io(image_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    image_paths.sort();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outcomes = Vec::new();
    let mut manifest = String::new();
    for path in &image_paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let outcome = match parse_image_filename(path) {
            Ok((lat, lon, zoom)) => {
                let (width, height) = crate::imgio::png_dimensions(path)?;
                let meta = SatImageMeta {
                    name: name.clone(),
                    lat,
                    lon,
                    zoom,
                    width,
                    height,
                };
                match prepare_one(&meta, &index, &tiles, cfg) {
                    Ok(o) => o,
                    Err(e) => PrepareOutcome {
                        image: name.clone(),
                        accepted: false,
                        reason: format!("error: {e}"),
                        coverage: 0.0,
                        nan_percent: 100.0,
                        grid: None,
                    },
                }
            }
            Err(e) => PrepareOutcome {
                image: name.clone(),
                accepted: false,
                reason: format!("bad filename: {e}"),
                coverage: 0.0,
                nan_percent: 100.0,
                grid: None,
            },
        };
        if let Some(grid) = &outcome.grid {
            let out_path = out_dir.join(format!("{name}.dsm.tif"));
            save_grid(&out_path, grid)?;
            manifest.push_str(&format!(
                "{name} ACCEPT coverage={:.4} nan={:.2}% -> {}\n",
                outcome.coverage,
                outcome.nan_percent,
                out_path.display()
            ));
        } else {
            manifest.push_str(&format!("{name} REJECT reason={}\n", outcome.reason));
        }
        outcomes.push(outcome);
    }
    std::fs::write(out_dir.join("prep_manifest.txt"), manifest)
        .map_err(|e| Error::io(out_dir, e))?;
    Ok(outcomes)
}
