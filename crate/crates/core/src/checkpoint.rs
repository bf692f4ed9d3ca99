//! Scene checkpoint file: "TPF1" magic, little-endian header, then all
//! parameter groups as 32-bit floats in row-major order (planes XY/XZ/YZ,
//! decoder trunk and heads, sky grid, illumination codes).

use crate::error::{Error, Result};
use crate::field::{Decoder, SceneExtent, SceneModel, SkyMap, TriPlaneField};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TPF1";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s_as_f32(&mut self, vs: &[f64]) {
        for v in vs {
            self.f32(*v as f32);
        }
    }
}

pub fn save_checkpoint(path: &Path, model: &SceneModel) -> Result<()> {
    let f = &model.field;
    let d = &f.decoder;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(f.res as u32);
    w.u32(f.channels as u32);
    w.u32(d.hidden as u32);
    w.u32(d.d_w as u32);
    w.u32(f.extent.pad_tokens as u32);
    w.u32(f.extent.tokens_per_side as u32);
    w.f32(f.extent.l_base as f32);
    w.u32(model.sky.height as u32);
    w.u32(model.sky.width as u32);
    w.u32(model.codes.len() as u32);
    for plane in &f.planes {
        w.f64s_as_f32(plane);
    }
    w.f64s_as_f32(&d.trunk_w);
    w.f64s_as_f32(&d.trunk_b);
    w.f64s_as_f32(&d.density_w);
    w.f32(d.density_b as f32);
    w.f64s_as_f32(&d.color_w);
    w.f64s_as_f32(&d.color_b);
    w.f64s_as_f32(&model.sky.data);
    for code in &model.codes {
        w.f64s_as_f32(code);
    }
    std::fs::File::create(path)
        .and_then(|mut file| file.write_all(&w.buf))
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    off: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let v = self
            .data
            .get(self.off..self.off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated", self.path.display())))?;
        self.off += 4;
        Ok(v)
    }
    fn f32(&mut self) -> Result<f32> {
        let v = self
            .data
            .get(self.off..self.off + 4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated", self.path.display())))?;
        self.off += 4;
        Ok(v)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f32()? as f64);
        }
        Ok(out)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<SceneModel> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    if data.len() < 4 || &data[..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: missing TPF1 magic",
            path.display()
        )));
    }
    let mut c = Cursor {
        data: &data,
        off: 4,
        path,
    };
    let res = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let hidden = c.u32()? as usize;
    let d_w = c.u32()? as usize;
    let pad_tokens = c.u32()? as usize;
    let tokens_per_side = c.u32()? as usize;
    let l_base = c.f32()? as f64;
    let sky_h = c.u32()? as usize;
    let sky_w = c.u32()? as usize;
    let n_codes = c.u32()? as usize;
    if res == 0 || channels == 0 || hidden == 0 || tokens_per_side == 0 {
        return Err(Error::Checkpoint(format!(
            "{}: degenerate header",
            path.display()
        )));
    }
    let extent = SceneExtent::new(l_base, tokens_per_side, pad_tokens)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let plane_len = res * res * channels;
    let planes = [c.f32s(plane_len)?, c.f32s(plane_len)?, c.f32s(plane_len)?];
    let decoder = Decoder {
        channels,
        hidden,
        d_w,
        trunk_w: c.f32s(hidden * channels)?,
        trunk_b: c.f32s(hidden)?,
        density_w: c.f32s(hidden)?,
        density_b: c.f32()? as f64,
        color_w: c.f32s(3 * (hidden + d_w))?,
        color_b: {
            let v = c.f32s(3)?;
            [v[0], v[1], v[2]]
        },
    };
    let sky = SkyMap {
        height: sky_h,
        width: sky_w,
        data: c.f32s(sky_h * sky_w * 3)?,
    };
    let mut codes = Vec::with_capacity(n_codes);
    for _ in 0..n_codes {
        codes.push(c.f32s(d_w)?);
    }
    if c.off != data.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            data.len() - c.off
        )));
    }
    let mut field = TriPlaneField::new(res, channels, decoder, extent);
    field.planes = planes;
    Ok(SceneModel { field, sky, codes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_everything_to_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let extent = SceneExtent::new(50.0, 16, 2).unwrap();
        let mut field = TriPlaneField::new(10, 3, Decoder::init(3, 6, 2, &mut rng), extent);
        for plane in field.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut sky = SkyMap::new(6, 12, [0.5; 3]);
        for v in sky.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let model = SceneModel {
            field,
            sky,
            codes: vec![vec![0.1, -0.4], vec![0.7, 0.2]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.tpf");
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.field.res, 10);
        assert_eq!(back.field.extent, model.field.extent);
        assert_eq!(back.codes.len(), 2);
        for (a, b) in model.field.planes[1].iter().zip(&back.field.planes[1]) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-7 + 1e-9);
        }
        for (a, b) in model.sky.data.iter().zip(&back.sky.data) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!((model.field.decoder.density_b - back.field.decoder.density_b).abs() < 1e-7);
        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("scene2.tpf");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tpf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"TPF1\x01\x00").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
