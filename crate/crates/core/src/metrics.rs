//! Geometric accuracy metrics against prepared surface models, plus PSNR.

use crate::error::{Error, Result};
use crate::geodata::HeightGrid;
use crate::img::ColorImage;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    /// Subtract the median prediction-minus-truth offset before scoring.
    Median,
}

/// Elevation error statistics over jointly valid pixels: mean absolute
/// error, root mean square error, and the fraction of pixels within
/// 2.5 m and 7.5 m.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub pct_lt_2_5: f64,
    pub pct_lt_7_5: f64,
    pub valid_fraction: f64,
}

impl DepthMetrics {
    pub fn report_line(&self) -> String {
        format!(
            "mae={:.4} rmse={:.4} pct_lt_2.5m={:.2} pct_lt_7.5m={:.2} valid_fraction={:.4}",
            self.mae, self.rmse, self.pct_lt_2_5, self.pct_lt_7_5, self.valid_fraction
        )
    }
}

/// Compare predicted and ground-truth elevation grids on the same lattice.
pub fn depth_metrics(
    pred: &HeightGrid,
    gt: &HeightGrid,
    align: Alignment,
) -> Result<DepthMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut errors: Vec<f64> = Vec::new();
    for i in 0..pred.values.len() {
        let p = pred.values[i];
        let g = gt.values[i];
        if pred.is_nodata(p) || gt.is_nodata(g) {
            continue;
        }
        errors.push(p as f64 - g as f64);
    }
    if errors.is_empty() {
        return Err(Error::Degenerate(
            "no jointly valid pixels for depth metrics".into(),
        ));
    }
    if align == Alignment::Median {
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
        };
        for e in errors.iter_mut() {
            *e -= median;
        }
    }
    let n = errors.len() as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let lt = |cut: f64| errors.iter().filter(|e| e.abs() < cut).count() as f64 / n * 100.0;
    Ok(DepthMetrics {
        mae,
        rmse,
        pct_lt_2_5: lt(2.5),
        pct_lt_7_5: lt(7.5),
        valid_fraction: n / pred.values.len() as f64,
    })
}

/// Peak signal-to-noise ratio in dB for images in [0, 1]; identical
/// images report +infinity.
pub fn psnr(pred: &ColorImage, gt: &ColorImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let mut acc = 0.0;
    for (a, b) in pred.data.iter().zip(&gt.data) {
        for ch in 0..3 {
            let d = a[ch] - b[ch];
            acc += d * d;
        }
    }
    let mse = acc / (pred.data.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::Crs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(values: Vec<f32>, w: usize, h: usize) -> HeightGrid {
        HeightGrid {
            width: w,
            height: h,
            transform: [0.0, 1.0, 0.0, 0.0, 0.0, -1.0],
            crs: Crs::Local,
            nodata: f32::NAN,
            unit: crate::geodata::LengthUnit::Meters,
            values,
        }
    }

    #[test]
    fn identical_grids_are_perfect() {
        let g = grid((0..16).map(|i| i as f32).collect(), 4, 4);
        let m = depth_metrics(&g, &g, Alignment::None).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.pct_lt_2_5, 100.0);
        assert_eq!(m.pct_lt_7_5, 100.0);
    }

    #[test]
    fn constant_three_meter_offset() {
        let gt = grid(vec![10.0; 25], 5, 5);
        let pred = grid(vec![13.0; 25], 5, 5);
        let m = depth_metrics(&pred, &gt, Alignment::None).unwrap();
        assert_eq!(m.mae, 3.0);
        assert_eq!(m.rmse, 3.0);
        assert_eq!(m.pct_lt_2_5, 0.0);
        assert_eq!(m.pct_lt_7_5, 100.0);
        // Median alignment removes the offset entirely.
        let m = depth_metrics(&pred, &gt, Alignment::Median).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.pct_lt_2_5, 100.0);
    }

    #[test]
    fn matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 200;
        let mut pred = grid(vec![0.0; n], 20, 10);
        let mut gt = grid(vec![0.0; n], 20, 10);
        for i in 0..n {
            pred.values[i] = rng.gen_range(-5.0..40.0);
            gt.values[i] = rng.gen_range(-5.0..40.0);
            if rng.gen_bool(0.1) {
                pred.values[i] = f32::NAN;
            }
            if rng.gen_bool(0.1) {
                gt.values[i] = f32::NAN;
            }
        }
        let m = depth_metrics(&pred, &gt, Alignment::None).unwrap();
        let mut abs = 0.0f64;
        let mut sq = 0.0f64;
        let mut c25 = 0usize;
        let mut c75 = 0usize;
        let mut count = 0usize;
        for i in 0..n {
            if pred.values[i].is_nan() || gt.values[i].is_nan() {
                continue;
            }
            let e = pred.values[i] as f64 - gt.values[i] as f64;
            abs += e.abs();
            sq += e * e;
            if e.abs() < 2.5 {
                c25 += 1;
            }
            if e.abs() < 7.5 {
                c75 += 1;
            }
            count += 1;
        }
        assert!((m.mae - abs / count as f64).abs() < 1e-12);
        assert!((m.rmse - (sq / count as f64).sqrt()).abs() < 1e-12);
        assert!((m.pct_lt_2_5 - c25 as f64 / count as f64 * 100.0).abs() < 1e-12);
        assert!((m.pct_lt_7_5 - c75 as f64 / count as f64 * 100.0).abs() < 1e-12);
        assert!(m.mae <= m.rmse, "Jensen");
        assert!(m.pct_lt_2_5 <= m.pct_lt_7_5);
    }

    #[test]
    fn zero_overlap_is_an_error() {
        let pred = grid(vec![f32::NAN; 4], 2, 2);
        let gt = grid(vec![1.0; 4], 2, 2);
        assert!(depth_metrics(&pred, &gt, Alignment::None).is_err());
    }

    #[test]
    fn psnr_values() {
        let a = ColorImage::filled(10, 10, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // MSE = 0.01 -> 20 dB.
        let mut b = a.clone();
        for px in b.data.iter_mut() {
            px[0] += 0.1;
            px[1] += 0.1;
            px[2] += 0.1;
        }
        let db = psnr(&b, &a).unwrap();
        assert!((db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut a = ColorImage::new(9, 7);
        let mut b = ColorImage::new(9, 7);
        for i in 0..63 {
            a.data[i] = [rng.gen(), rng.gen(), rng.gen()];
            b.data[i] = [rng.gen(), rng.gen(), rng.gen()];
        }
        let db = psnr(&a, &b).unwrap();
        let mut acc = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                for ch in 0..3 {
                    let d = a.get(x, y)[ch] - b.get(x, y)[ch];
                    acc += d * d;
                }
            }
        }
        let expect = 10.0 * (1.0 / (acc / 189.0)).log10();
        assert!((db - expect).abs() < 1e-9);
    }
}
