//! Minimal GeoTIFF subset: classic little-endian TIFF, one 32-bit float
//! band, uncompressed, strip- or tile-organized, georeferenced through
//! ModelPixelScale + ModelTiepoint with a GeoKeyDirectory naming either
//! geographic WGS84 or Web Mercator. Anything else fails loudly with the
//! offending tag so callers know to pre-convert.

use super::{Crs, HeightGrid, LengthUnit};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_LENGTH: u16 = 323;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_TILE_BYTE_COUNTS: u16 = 325;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;

const GEOKEY_MODEL_TYPE: u16 = 1024;
const GEOKEY_RASTER_TYPE: u16 = 1025;
const GEOKEY_GEOGRAPHIC_TYPE: u16 = 2048;
const GEOKEY_PROJECTED_TYPE: u16 = 3072;

#[derive(Clone, Debug)]
enum TagValue {
    Shorts(Vec<u16>),
    Longs(Vec<u32>),
    Doubles(Vec<f64>),
    Ascii(String),
}

impl TagValue {
    fn as_u32(&self) -> Option<u32> {
        match self {
            TagValue::Shorts(v) => v.first().map(|x| *x as u32),
            TagValue::Longs(v) => v.first().copied(),
            _ => None,
        }
    }

    fn as_u32_vec(&self) -> Option<Vec<u32>> {
        match self {
            TagValue::Shorts(v) => Some(v.iter().map(|x| *x as u32).collect()),
            TagValue::Longs(v) => Some(v.clone()),
            _ => None,
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn u16_at(&self, off: usize) -> Result<u16> {
        self.data
            .get(off..off + 2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::parse(self.path, format!("truncated at offset {off}")))
    }

    fn u32_at(&self, off: usize) -> Result<u32> {
        self.data
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::parse(self.path, format!("truncated at offset {off}")))
    }

    fn f64_at(&self, off: usize) -> Result<f64> {
        self.data
            .get(off..off + 8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::parse(self.path, format!("truncated at offset {off}")))
    }
}

pub fn load_geotiff(path: &Path, unit: LengthUnit) -> Result<HeightGrid> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let r = Reader { data: &data, path };
    if data.len() < 8 {
        return Err(Error::parse(path, "file shorter than a TIFF header"));
    }
    match &data[0..2] {
        b"II" => {}
        b"MM" => {
            return Err(Error::UnsupportedRaster(
                "big-endian TIFF (byte order MM)".into(),
            ))
        }
        _ => return Err(Error::parse(path, "not a TIFF file")),
    }
    if r.u16_at(2)? != 42 {
        return Err(Error::parse(path, "bad TIFF magic number"));
    }
    let ifd_off = r.u32_at(4)? as usize;
    let n_entries = r.u16_at(ifd_off)? as usize;
    let mut tags: HashMap<u16, TagValue> = HashMap::new();
    for e in 0..n_entries {
        let off = ifd_off + 2 + e * 12;
        let tag = r.u16_at(off)?;
        let field_type = r.u16_at(off + 2)?;
        let count = r.u32_at(off + 4)? as usize;
        let value_size = match field_type {
            1 | 2 | 6 | 7 => 1,
            3 => 2,
            4 | 9 | 11 => 4,
            5 | 10 | 12 => 8,
            _ => {
                return Err(Error::UnsupportedRaster(format!(
                    "tag {tag} has unsupported field type {field_type}"
                )))
            }
        };
        let total = value_size * count;
        let data_off = if total <= 4 {
            off + 8
        } else {
            r.u32_at(off + 8)? as usize
        };
        let value = match field_type {
            2 => {
                let bytes = data
                    .get(data_off..data_off + count)
                    .ok_or_else(|| Error::parse(path, format!("tag {tag} data truncated")))?;
                let end = bytes.iter().position(|&b| b == 0).unwrap_or(count);
                TagValue::Ascii(String::from_utf8_lossy(&bytes[..end]).into_owned())
            }
            3 => TagValue::Shorts(
                (0..count)
                    .map(|i| r.u16_at(data_off + i * 2))
                    .collect::<Result<_>>()?,
            ),
            4 => TagValue::Longs(
                (0..count)
                    .map(|i| r.u32_at(data_off + i * 4))
                    .collect::<Result<_>>()?,
            ),
            12 => TagValue::Doubles(
                (0..count)
                    .map(|i| r.f64_at(data_off + i * 8))
                    .collect::<Result<_>>()?,
            ),
            _ => continue,
        };
        tags.insert(tag, value);
    }

    let width = tags
        .get(&TAG_IMAGE_WIDTH)
        .and_then(TagValue::as_u32)
        .ok_or_else(|| Error::parse(path, "missing ImageWidth (tag 256)"))? as usize;
    let height = tags
        .get(&TAG_IMAGE_LENGTH)
        .and_then(TagValue::as_u32)
        .ok_or_else(|| Error::parse(path, "missing ImageLength (tag 257)"))? as usize;

    let bits = tags
        .get(&TAG_BITS_PER_SAMPLE)
        .and_then(TagValue::as_u32)
        .unwrap_or(1);
    if bits != 32 {
        return Err(Error::UnsupportedRaster(format!(
            "BitsPerSample (tag 258) = {bits}, need 32-bit float"
        )));
    }
    let compression = tags
        .get(&TAG_COMPRESSION)
        .and_then(TagValue::as_u32)
        .unwrap_or(1);
    if compression != 1 {
        return Err(Error::UnsupportedRaster(format!(
            "Compression (tag 259) = {compression}, only uncompressed supported"
        )));
    }
    let spp = tags
        .get(&TAG_SAMPLES_PER_PIXEL)
        .and_then(TagValue::as_u32)
        .unwrap_or(1);
    if spp != 1 {
        return Err(Error::UnsupportedRaster(format!(
            "SamplesPerPixel (tag 277) = {spp}, only single band supported"
        )));
    }
    let sample_format = tags
        .get(&TAG_SAMPLE_FORMAT)
        .and_then(TagValue::as_u32)
        .unwrap_or(1);
    if sample_format != 3 {
        return Err(Error::UnsupportedRaster(format!(
            "SampleFormat (tag 339) = {sample_format}, need IEEE float (3)"
        )));
    }

    let mut values = vec![f32::NAN; width * height];
    if let Some(tile_offsets) = tags.get(&TAG_TILE_OFFSETS) {
        let tw = tags
            .get(&TAG_TILE_WIDTH)
            .and_then(TagValue::as_u32)
            .ok_or_else(|| Error::parse(path, "missing TileWidth (tag 322)"))?
            as usize;
        let th = tags
            .get(&TAG_TILE_LENGTH)
            .and_then(TagValue::as_u32)
            .ok_or_else(|| Error::parse(path, "missing TileLength (tag 323)"))?
            as usize;
        let offsets = tile_offsets
            .as_u32_vec()
            .ok_or_else(|| Error::parse(path, "bad TileOffsets (tag 324)"))?;
        let counts = tags
            .get(&TAG_TILE_BYTE_COUNTS)
            .and_then(TagValue::as_u32_vec)
            .ok_or_else(|| Error::parse(path, "missing TileByteCounts (tag 325)"))?;
        let tiles_across = width.div_ceil(tw);
        for (t, (&off, &cnt)) in offsets.iter().zip(&counts).enumerate() {
            let (toff, tcnt) = (off as usize, cnt as usize);
            if tcnt != tw * th * 4 {
                return Err(Error::parse(path, format!("tile {t} byte count {tcnt}")));
            }
            let bytes = data
                .get(toff..toff + tcnt)
                .ok_or_else(|| Error::parse(path, format!("tile {t} data truncated")))?;
            let (tile_row, tile_col) = (t / tiles_across, t % tiles_across);
            for row in 0..th {
                let y = tile_row * th + row;
                if y >= height {
                    break;
                }
                for col in 0..tw {
                    let x = tile_col * tw + col;
                    if x >= width {
                        continue;
                    }
                    let b = (row * tw + col) * 4;
                    values[y * width + x] =
                        f32::from_le_bytes(bytes[b..b + 4].try_into().unwrap());
                }
            }
        }
    } else if let Some(strip_offsets) = tags.get(&TAG_STRIP_OFFSETS) {
        let rows_per_strip = tags
            .get(&TAG_ROWS_PER_STRIP)
            .and_then(TagValue::as_u32)
            .unwrap_or(height as u32) as usize;
        let offsets = strip_offsets
            .as_u32_vec()
            .ok_or_else(|| Error::parse(path, "bad StripOffsets (tag 273)"))?;
        let counts = tags
            .get(&TAG_STRIP_BYTE_COUNTS)
            .and_then(TagValue::as_u32_vec)
            .ok_or_else(|| Error::parse(path, "missing StripByteCounts (tag 279)"))?;
        for (s, (&off, &cnt)) in offsets.iter().zip(&counts).enumerate() {
            let start_row = s * rows_per_strip;
            let rows = rows_per_strip.min(height - start_row);
            let expect = rows * width * 4;
            if cnt as usize != expect {
                return Err(Error::parse(
                    path,
                    format!("strip {s} byte count {cnt}, expected {expect}"),
                ));
            }
            let bytes = data
                .get(off as usize..off as usize + expect)
                .ok_or_else(|| Error::parse(path, format!("strip {s} data truncated")))?;
            for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                values[start_row * width + i] = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    } else {
        return Err(Error::parse(
            path,
            "no StripOffsets (tag 273) or TileOffsets (tag 324)",
        ));
    }

    let scale = match tags.get(&TAG_MODEL_PIXEL_SCALE) {
        Some(TagValue::Doubles(v)) if v.len() >= 2 => (v[0], v[1]),
        _ => {
            return Err(Error::UnsupportedRaster(
                "missing ModelPixelScale (tag 33550)".into(),
            ))
        }
    };
    let tie = match tags.get(&TAG_MODEL_TIEPOINT) {
        Some(TagValue::Doubles(v)) if v.len() >= 6 => (v[0], v[1], v[3], v[4]),
        _ => {
            return Err(Error::UnsupportedRaster(
                "missing ModelTiepoint (tag 33922)".into(),
            ))
        }
    };
    let transform = [
        tie.2 - tie.0 * scale.0,
        scale.0,
        0.0,
        tie.3 + tie.1 * scale.1,
        0.0,
        -scale.1,
    ];

    let crs = match tags.get(&TAG_GEO_KEY_DIRECTORY) {
        Some(TagValue::Shorts(keys)) => parse_geokeys(path, keys)?,
        _ => Crs::Wgs84,
    };

    let nodata = match tags.get(&TAG_GDAL_NODATA) {
        Some(TagValue::Ascii(s)) => s
            .trim()
            .parse::<f32>()
            .map_err(|_| Error::parse(path, format!("bad GDAL_NODATA value '{s}'")))?,
        _ => f32::NAN,
    };

    Ok(HeightGrid {
        width,
        height,
        transform,
        crs,
        nodata,
        unit,
        values,
    })
}

fn parse_geokeys(path: &Path, keys: &[u16]) -> Result<Crs> {
    if keys.len() < 4 {
        return Err(Error::parse(path, "short GeoKeyDirectory"));
    }
    let n_keys = keys[3] as usize;
    let mut model_type = None;
    let mut geographic = None;
    let mut projected = None;
    for k in 0..n_keys {
        let base = 4 + k * 4;
        if base + 3 >= keys.len() {
            break;
        }
        let (key, location, value) = (keys[base], keys[base + 1], keys[base + 3]);
        if location != 0 {
            continue;
        }
        match key {
            GEOKEY_MODEL_TYPE => model_type = Some(value),
            GEOKEY_GEOGRAPHIC_TYPE => geographic = Some(value),
            GEOKEY_PROJECTED_TYPE => projected = Some(value),
            _ => {}
        }
    }
    match model_type {
        Some(2) => {
            if let Some(g) = geographic {
                if g != 4326 {
                    return Err(Error::UnsupportedRaster(format!(
                        "GeographicTypeGeoKey {g}, only WGS84 (4326) supported"
                    )));
                }
            }
            Ok(Crs::Wgs84)
        }
        Some(1) => match projected {
            Some(3857) => Ok(Crs::WebMercator),
            Some(other) => Err(Error::UnsupportedRaster(format!(
                "ProjectedCSTypeGeoKey {other}, only Web Mercator (3857) supported"
            ))),
            None => Err(Error::UnsupportedRaster(
                "projected CRS without ProjectedCSTypeGeoKey (3072)".into(),
            )),
        },
        Some(32767) => Ok(Crs::Local),
        Some(other) => Err(Error::UnsupportedRaster(format!(
            "GTModelTypeGeoKey {other} unsupported"
        ))),
        None => Ok(Crs::Wgs84),
    }
}

/// Write the subset this module reads: single strip, float32, LE.
pub fn save_geotiff(path: &Path, grid: &HeightGrid) -> Result<()> {
    if grid.transform[2] != 0.0 || grid.transform[4] != 0.0 {
        return Err(Error::UnsupportedRaster(
            "rotated geotransform cannot be written".into(),
        ));
    }
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&8u32.to_le_bytes()); // IFD at byte 8

    let nodata_ascii = {
        let mut s = format!("{}", grid.nodata);
        s.push('\0');
        s.into_bytes()
    };

    struct Entry {
        tag: u16,
        field_type: u16,
        count: u32,
        payload: Vec<u8>,
    }
    let short = |tag: u16, v: u16| Entry {
        tag,
        field_type: 3,
        count: 1,
        payload: v.to_le_bytes().to_vec(),
    };
    let long = |tag: u16, v: u32| Entry {
        tag,
        field_type: 4,
        count: 1,
        payload: v.to_le_bytes().to_vec(),
    };
    let doubles = |tag: u16, vs: &[f64]| Entry {
        tag,
        field_type: 12,
        count: vs.len() as u32,
        payload: vs.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };

    let pixel_data: Vec<u8> = grid
        .values
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();

    let geo_keys: Vec<u16> = match grid.crs {
        Crs::Wgs84 => vec![
            1, 1, 0, 3, //
            GEOKEY_MODEL_TYPE, 0, 1, 2, //
            GEOKEY_RASTER_TYPE, 0, 1, 1, //
            GEOKEY_GEOGRAPHIC_TYPE, 0, 1, 4326,
        ],
        Crs::WebMercator => vec![
            1, 1, 0, 3, //
            GEOKEY_MODEL_TYPE, 0, 1, 1, //
            GEOKEY_RASTER_TYPE, 0, 1, 1, //
            GEOKEY_PROJECTED_TYPE, 0, 1, 3857,
        ],
        // Local scene-frame grids use the user-defined model type.
        Crs::Local => vec![
            1, 1, 0, 2, //
            GEOKEY_MODEL_TYPE, 0, 1, 32767, //
            GEOKEY_RASTER_TYPE, 0, 1, 1,
        ],
    };
    let geo_entry = Entry {
        tag: TAG_GEO_KEY_DIRECTORY,
        field_type: 3,
        count: geo_keys.len() as u32,
        payload: geo_keys.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };

    // Pixel origin (top-left corner) from the geotransform.
    let scale = [grid.transform[1], -grid.transform[5], 0.0];
    let tiepoint = [0.0, 0.0, 0.0, grid.transform[0], grid.transform[3], 0.0];

    let mut entries = vec![
        long(TAG_IMAGE_WIDTH, grid.width as u32),
        long(TAG_IMAGE_LENGTH, grid.height as u32),
        short(TAG_BITS_PER_SAMPLE, 32),
        short(TAG_COMPRESSION, 1),
        short(262, 1), // PhotometricInterpretation: BlackIsZero
        long(TAG_STRIP_OFFSETS, 0), // patched below
        short(TAG_SAMPLES_PER_PIXEL, 1),
        long(TAG_ROWS_PER_STRIP, grid.height as u32),
        long(TAG_STRIP_BYTE_COUNTS, pixel_data.len() as u32),
        short(TAG_SAMPLE_FORMAT, 3),
        doubles(TAG_MODEL_PIXEL_SCALE, &scale),
        doubles(TAG_MODEL_TIEPOINT, &tiepoint),
        geo_entry,
        Entry {
            tag: TAG_GDAL_NODATA,
            field_type: 2,
            count: nodata_ascii.len() as u32,
            payload: nodata_ascii,
        },
    ];
    entries.sort_by_key(|e| e.tag);

    let ifd_off = 8usize;
    let ifd_size = 2 + entries.len() * 12 + 4;
    let mut extra_off = ifd_off + ifd_size;
    // Lay out overflow payloads, then pixel data.
    let mut extra: Vec<u8> = Vec::new();
    let mut locations: Vec<(usize, Option<usize>)> = Vec::new(); // (inline len, extra offset)
    for e in &entries {
        if e.payload.len() <= 4 {
            locations.push((e.payload.len(), None));
        } else {
            if extra_off % 2 == 1 {
                extra.push(0);
                extra_off += 1;
            }
            locations.push((e.payload.len(), Some(extra_off)));
            extra.extend_from_slice(&e.payload);
            extra_off += e.payload.len();
        }
    }
    let pixel_off = extra_off + extra_off % 2;

    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for (e, (len, loc)) in entries.iter().zip(&locations) {
        out.extend_from_slice(&e.tag.to_le_bytes());
        out.extend_from_slice(&e.field_type.to_le_bytes());
        out.extend_from_slice(&e.count.to_le_bytes());
        let payload = if e.tag == TAG_STRIP_OFFSETS {
            (pixel_off as u32).to_le_bytes().to_vec()
        } else {
            match loc {
                Some(off) => (*off as u32).to_le_bytes().to_vec(),
                None => {
                    let mut p = e.payload.clone();
                    p.resize(4, 0);
                    p[..*len].copy_from_slice(&e.payload);
                    p
                }
            }
        };
        out.extend_from_slice(&payload);
    }
    out.extend_from_slice(&0u32.to_le_bytes()); // no next IFD
    out.extend_from_slice(&extra);
    while out.len() < pixel_off {
        out.push(0);
    }
    out.extend_from_slice(&pixel_data);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
