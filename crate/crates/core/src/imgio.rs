//! Image and float-grid file I/O. Color images and masks travel as 8-bit
//! PNG; scalar maps (depth, opacity) use a small text header followed by
//! raw little-endian f32 values ("FG32"), with NaN marking invalid pixels.

use crate::error::{Error, Result};
use crate::img::{ColorImage, MaskImage, ScalarImage};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub fn save_png_rgb(path: &Path, img: &ColorImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let c = img.get(x, y);
            let px = [
                (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_png_rgb(path: &Path) -> Result<ColorImage> {
    let dyn_img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = dyn_img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = ColorImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            out.set(
                x,
                y,
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(out)
}

pub fn save_png_mask(path: &Path, mask: &MaskImage) -> Result<()> {
    let mut buf = image::GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Luma([if mask.get(x, y) { 255 } else { 0 }]),
            );
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_png_mask(path: &Path) -> Result<MaskImage> {
    let dyn_img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = dyn_img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut out = MaskImage::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, gray.get_pixel(x as u32, y as u32)[0] >= 128);
        }
    }
    Ok(out)
}

/// Image dimensions without decoding the full pixel data.
pub fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((w as usize, h as usize))
}

pub fn save_fgrid(path: &Path, grid: &ScalarImage) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "FG32 {} {}\n", grid.width, grid.height).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(grid.values.len() * 4);
    for (v, ok) in grid.values.iter().zip(&grid.valid) {
        let out = if *ok { *v as f32 } else { f32::NAN };
        bytes.extend_from_slice(&out.to_le_bytes());
    }
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_fgrid(path: &Path) -> Result<ScalarImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_end = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, "missing FG32 header line"))?;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::parse(path, "non-utf8 header"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("FG32") {
        return Err(Error::parse(path, "expected FG32 magic"));
    }
    let w: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, "bad width"))?;
    let h: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, "bad height"))?;
    let body = &data[header_end + 1..];
    if body.len() != w * h * 4 {
        return Err(Error::parse(
            path,
            format!("expected {} payload bytes, found {}", w * h * 4, body.len()),
        ));
    }
    let mut grid = ScalarImage::new(w, h);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        grid.values[i] = v as f64;
        grid.valid[i] = v.is_finite();
    }
    Ok(grid)
}

/// Volume dump: "FG32V nx ny nz" header, then f32 values with x fastest.
pub fn save_fgrid_volume(path: &Path, dims: [usize; 3], values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), dims[0] * dims[1] * dims[2]);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "FG32V {} {} {}\n", dims[0], dims[1], dims[2]).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_fgrid_volume(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let mut data = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    let header_end = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, "missing FG32V header line"))?;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::parse(path, "non-utf8 header"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("FG32V") {
        return Err(Error::parse(path, "expected FG32V magic"));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, "bad dimension"))?;
    }
    let body = &data[header_end + 1..];
    let n = dims[0] * dims[1] * dims[2];
    if body.len() != n * 4 {
        return Err(Error::parse(path, "payload size mismatch"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_quantization_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = ColorImage::new(8, 5);
        for y in 0..5 {
            for x in 0..8 {
                img.set(x, y, [x as f64 / 7.0, y as f64 / 4.0, 0.5]);
            }
        }
        save_png_rgb(&path, &img).unwrap();
        let back = load_png_rgb(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn fgrid_roundtrip_preserves_values_and_validity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.fg32");
        let mut grid = ScalarImage::new(4, 3);
        for i in 0..12 {
            grid.values[i] = i as f64 * 1.25;
            grid.valid[i] = i % 3 != 0;
        }
        save_fgrid(&path, &grid).unwrap();
        let back = load_fgrid(&path).unwrap();
        assert_eq!(back.width, 4);
        for i in 0..12 {
            assert_eq!(back.valid[i], grid.valid[i]);
            if grid.valid[i] {
                assert!((back.values[i] - grid.values[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncated_fgrid_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fg32");
        fs::write(&path, b"FG32 4 4\n\x00\x00").unwrap();
        assert!(load_fgrid(&path).is_err());
    }
}
