//! In-memory image buffers. Color is kept as f64 in [0,1]; masks are
//! boolean; PNG conversion happens at the I/O boundary (see `imgio`).

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, one `[r, g, b]` per pixel.
    pub data: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        ColorImage {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        ColorImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = rgb;
    }

    pub fn same_shape(&self, other: &ColorImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions of this function's argument, i.e. pass `x - 0.5`
    /// style coordinates already converted by the caller). Columns wrap
    /// when `wrap_x` is set; rows clamp.
    pub fn sample_bilinear(&self, x: f64, y: f64, wrap_x: bool) -> [f64; 3] {
        let (w, h) = (self.width as isize, self.height as isize);
        let x0 = x.floor() as isize;
        let y0 = y.floor() as isize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let fetch = |xi: isize, yi: isize| -> [f64; 3] {
            let xi = if wrap_x {
                xi.rem_euclid(w)
            } else {
                xi.clamp(0, w - 1)
            };
            let yi = yi.clamp(0, h - 1);
            self.data[yi as usize * self.width + xi as usize]
        };
        let c00 = fetch(x0, y0);
        let c10 = fetch(x0 + 1, y0);
        let c01 = fetch(x0, y0 + 1);
        let c11 = fetch(x0 + 1, y0 + 1);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = c00[ch] * (1.0 - fx) + c10[ch] * fx;
            let bot = c01[ch] * (1.0 - fx) + c11[ch] * fx;
            out[ch] = top * (1.0 - fy) + bot * fy;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        MaskImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Scalar map with per-pixel validity (rendered depth, pseudo-labels).
#[derive(Clone, Debug)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarImage {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        ScalarImage {
            width,
            height,
            valid: vec![true; values.len()],
            values,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}
