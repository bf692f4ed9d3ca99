//! The optimizable scene representation: three orthogonal feature planes
//! with bilinear sampling and elementwise-sum fusion, a small decoder with
//! density and color heads, per-view illumination codes, and a spherical
//! sky map.

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, Vec3};
use rand::Rng;

/// Scene footprint arithmetic. The base cube of side `l_base` corresponds
/// to the satellite crop; `pad_tokens` border tokens on each side of the
/// `tokens_per_side` grid enlarge the field's effective footprint.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneExtent {
    pub l_base: f64,
    pub tokens_per_side: usize,
    pub pad_tokens: usize,
}

impl SceneExtent {
    pub fn new(l_base: f64, tokens_per_side: usize, pad_tokens: usize) -> Result<Self> {
        if l_base <= 0.0 || tokens_per_side == 0 {
            return Err(Error::InvalidConfig(format!(
                "scene extent needs positive side and token count, got {l_base}, {tokens_per_side}"
            )));
        }
        Ok(SceneExtent {
            l_base,
            tokens_per_side,
            pad_tokens,
        })
    }

    /// Side of the effective (padded) cube in meters.
    pub fn effective(&self) -> f64 {
        effective_extent(self.l_base, self.tokens_per_side, self.pad_tokens)
    }

    pub fn half(&self) -> f64 {
        self.effective() / 2.0
    }
}

/// L_eff = L * (1 + 2N / H_t).
pub fn effective_extent(l_base: f64, tokens_per_side: usize, pad_tokens: usize) -> f64 {
    l_base * (1.0 + 2.0 * pad_tokens as f64 / tokens_per_side as f64)
}

/// Bilinear footprint of one plane sample: four cell indices (row-major,
/// channel-free) and their weights. Taps are clamped at plane borders.
#[derive(Clone, Copy, Debug)]
pub struct PlaneTaps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

impl PlaneTaps {
    fn at(res: usize, u: f64, v: f64) -> PlaneTaps {
        // u, v are continuous cell coordinates (cell centers at integers).
        let clamp = |i: isize| i.clamp(0, res as isize - 1) as usize;
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let (u0, v0) = (u0 as isize, v0 as isize);
        let (c0, c1) = (clamp(u0), clamp(u0 + 1));
        let (r0, r1) = (clamp(v0), clamp(v0 + 1));
        PlaneTaps {
            idx: [r0 * res + c0, r0 * res + c1, r1 * res + c0, r1 * res + c1],
            w: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }
}

/// Shared-trunk decoder: one hidden layer reads the fused plane feature,
/// the density head is a scalar, and the color head additionally sees the
/// illumination code.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub channels: usize,
    pub hidden: usize,
    pub d_w: usize,
    /// hidden x channels, row-major.
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    pub density_w: Vec<f64>,
    pub density_b: f64,
    /// 3 x (hidden + d_w), row-major.
    pub color_w: Vec<f64>,
    pub color_b: [f64; 3],
}

/// Density-head bias init: softplus(-4) ~ 0.018 keeps free space
/// near-transparent at the start of fitting.
pub const DENSITY_BIAS_INIT: f64 = -4.0;

impl Decoder {
    pub fn zeros(channels: usize, hidden: usize, d_w: usize) -> Decoder {
        Decoder {
            channels,
            hidden,
            d_w,
            trunk_w: vec![0.0; hidden * channels],
            trunk_b: vec![0.0; hidden],
            density_w: vec![0.0; hidden],
            density_b: 0.0,
            color_w: vec![0.0; 3 * (hidden + d_w)],
            color_b: [0.0; 3],
        }
    }

    pub fn init(channels: usize, hidden: usize, d_w: usize, rng: &mut impl Rng) -> Decoder {
        let mut d = Decoder::zeros(channels, hidden, d_w);
        let s_trunk = (1.0 / channels as f64).sqrt();
        for w in d.trunk_w.iter_mut() {
            *w = rng.gen_range(-s_trunk..s_trunk);
        }
        let s_head = (1.0 / hidden as f64).sqrt();
        for w in d.density_w.iter_mut() {
            *w = rng.gen_range(-s_head..s_head);
        }
        let s_color = (1.0 / (hidden + d_w) as f64).sqrt();
        for w in d.color_w.iter_mut() {
            *w = rng.gen_range(-s_color..s_color);
        }
        d.density_b = DENSITY_BIAS_INIT;
        d
    }

    pub fn param_count(&self) -> usize {
        self.trunk_w.len() + self.trunk_b.len() + self.density_w.len() + 1 + self.color_w.len() + 3
    }
}

/// Forward-pass state of one decoder evaluation, retained for backprop.
#[derive(Clone, Debug, Default)]
pub struct DecodeCache {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub sigma_pre: f64,
    pub rgb: [f64; 3],
}

impl Decoder {
    /// Full decode: density and illumination-conditioned color.
    pub fn decode(&self, h: &[f64], code: &[f64], cache: &mut DecodeCache) -> (f64, [f64; 3]) {
        debug_assert_eq!(h.len(), self.channels);
        debug_assert_eq!(code.len(), self.d_w);
        let hdim = self.hidden;
        cache.z1.resize(hdim, 0.0);
        cache.a1.resize(hdim, 0.0);
        for r in 0..hdim {
            let row = &self.trunk_w[r * self.channels..(r + 1) * self.channels];
            let mut z = self.trunk_b[r];
            for (w, hv) in row.iter().zip(h) {
                z += w * hv;
            }
            cache.z1[r] = z;
            cache.a1[r] = softplus(z);
        }
        let mut sigma_pre = self.density_b;
        for (w, a) in self.density_w.iter().zip(&cache.a1) {
            sigma_pre += w * a;
        }
        cache.sigma_pre = sigma_pre;
        let sigma = softplus(sigma_pre);

        let u_len = hdim + self.d_w;
        let mut rgb = [0.0; 3];
        for (i, out) in rgb.iter_mut().enumerate() {
            let row = &self.color_w[i * u_len..(i + 1) * u_len];
            let mut c = self.color_b[i];
            for (w, a) in row[..hdim].iter().zip(&cache.a1) {
                c += w * a;
            }
            for (w, cv) in row[hdim..].iter().zip(code) {
                c += w * cv;
            }
            *out = sigmoid(c);
        }
        cache.rgb = rgb;
        (sigma, rgb)
    }

    /// Density-only decode (color head skipped); used by the gravity
    /// regularizer and density-grid evaluation.
    pub fn decode_density(&self, h: &[f64], cache: &mut DecodeCache) -> f64 {
        debug_assert_eq!(h.len(), self.channels);
        let hdim = self.hidden;
        cache.z1.resize(hdim, 0.0);
        cache.a1.resize(hdim, 0.0);
        for r in 0..hdim {
            let row = &self.trunk_w[r * self.channels..(r + 1) * self.channels];
            let mut z = self.trunk_b[r];
            for (w, hv) in row.iter().zip(h) {
                z += w * hv;
            }
            cache.z1[r] = z;
            cache.a1[r] = softplus(z);
        }
        let mut sigma_pre = self.density_b;
        for (w, a) in self.density_w.iter().zip(&cache.a1) {
            sigma_pre += w * a;
        }
        cache.sigma_pre = sigma_pre;
        softplus(sigma_pre)
    }
}

/// The tri-plane field. Planes are `res x res x channels` row-major arrays;
/// plane 0 spans (x, y), plane 1 (x, z), plane 2 (y, z). A query point is
/// normalized into the effective cube; points outside return the zero
/// feature so the padded border owns the periphery.
#[derive(Clone, Debug)]
pub struct TriPlaneField {
    pub res: usize,
    pub channels: usize,
    pub planes: [Vec<f64>; 3],
    pub decoder: Decoder,
    pub extent: SceneExtent,
}

impl TriPlaneField {
    pub fn new(res: usize, channels: usize, decoder: Decoder, extent: SceneExtent) -> Self {
        assert_eq!(decoder.channels, channels);
        let plane = vec![0.0; res * res * channels];
        TriPlaneField {
            res,
            channels,
            planes: [plane.clone(), plane.clone(), plane],
            decoder,
            extent,
        }
    }

    /// Continuous cell coordinate for a scene coordinate along one axis.
    #[inline]
    fn cell_coord(&self, a: f64) -> f64 {
        let half = self.extent.half();
        (a + half) / (2.0 * half) * self.res as f64 - 0.5
    }

    /// Bilinear taps for the three plane projections of `p`, or `None`
    /// when `p` lies outside the effective cube.
    pub fn taps(&self, p: Vec3) -> Option<[PlaneTaps; 3]> {
        let half = self.extent.half();
        if p.x.abs() > half || p.y.abs() > half || p.z.abs() > half {
            return None;
        }
        let (u, v, w) = (
            self.cell_coord(p.x),
            self.cell_coord(p.y),
            self.cell_coord(p.z),
        );
        Some([
            PlaneTaps::at(self.res, u, v),
            PlaneTaps::at(self.res, u, w),
            PlaneTaps::at(self.res, v, w),
        ])
    }

    /// Fused feature h(p): sum of the three bilinear plane samples.
    /// Writes into `h` (length `channels`) and returns the tap cache.
    pub fn sample_into(&self, p: Vec3, h: &mut [f64]) -> Option<[PlaneTaps; 3]> {
        debug_assert_eq!(h.len(), self.channels);
        h.fill(0.0);
        let taps = self.taps(p)?;
        for (plane, t) in self.planes.iter().zip(&taps) {
            for m in 0..4 {
                let base = t.idx[m] * self.channels;
                let w = t.w[m];
                for (ch, hv) in h.iter_mut().enumerate() {
                    *hv += w * plane[base + ch];
                }
            }
        }
        Some(taps)
    }

    /// Allocating convenience wrapper around [`Self::sample_into`].
    pub fn sample(&self, p: Vec3) -> Vec<f64> {
        let mut h = vec![0.0; self.channels];
        self.sample_into(p, &mut h);
        h
    }

    pub fn density_at(&self, p: Vec3) -> f64 {
        let mut h = vec![0.0; self.channels];
        self.sample_into(p, &mut h);
        let mut cache = DecodeCache::default();
        self.decoder.decode_density(&h, &mut cache)
    }

    pub fn density_color_at(&self, p: Vec3, code: &[f64]) -> (f64, [f64; 3]) {
        let mut h = vec![0.0; self.channels];
        self.sample_into(p, &mut h);
        let mut cache = DecodeCache::default();
        self.decoder.decode(&h, code, &mut cache)
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, plane) in self.planes.iter().enumerate() {
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParams(format!("planes[{i}]")));
            }
        }
        let d = &self.decoder;
        let all = d
            .trunk_w
            .iter()
            .chain(&d.trunk_b)
            .chain(&d.density_w)
            .chain(std::iter::once(&d.density_b))
            .chain(&d.color_w)
            .chain(d.color_b.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParams("decoder".into()));
        }
        Ok(())
    }
}

/// Bilinear footprint of one sky lookup plus the pre-clamp color, kept so
/// backprop can gate gradients at the clamp.
#[derive(Clone, Copy, Debug)]
pub struct SkyTaps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub pre_clamp: [f64; 3],
}

/// Directly optimized RGB grid over the sphere: rows span the polar angle
/// (row 0 at +z), columns the azimuth with wrap-around.
#[derive(Clone, Debug)]
pub struct SkyMap {
    pub height: usize,
    pub width: usize,
    /// height x width x 3, row-major.
    pub data: Vec<f64>,
}

impl SkyMap {
    pub fn new(height: usize, width: usize, rgb: [f64; 3]) -> SkyMap {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        SkyMap {
            height,
            width,
            data,
        }
    }

    /// Bilinear sample for a unit direction; the result is clamped to
    /// [0, 1] per channel.
    pub fn sample(&self, d: Vec3) -> ([f64; 3], SkyTaps) {
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        let gv = theta / std::f64::consts::PI * self.height as f64 - 0.5;
        let gu = (phi + std::f64::consts::PI) / std::f64::consts::TAU * self.width as f64 - 0.5;
        let (w, h) = (self.width as isize, self.height as isize);
        let u0 = gu.floor();
        let v0 = gv.floor();
        let fu = gu - u0;
        let fv = gv - v0;
        let (u0, v0) = (u0 as isize, v0 as isize);
        let col = |u: isize| u.rem_euclid(w) as usize;
        let row = |v: isize| v.clamp(0, h - 1) as usize;
        let idx = [
            row(v0) * self.width + col(u0),
            row(v0) * self.width + col(u0 + 1),
            row(v0 + 1) * self.width + col(u0),
            row(v0 + 1) * self.width + col(u0 + 1),
        ];
        let weights = [
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        ];
        let mut pre = [0.0; 3];
        for m in 0..4 {
            let base = idx[m] * 3;
            for (ch, p) in pre.iter_mut().enumerate() {
                *p += weights[m] * self.data[base + ch];
            }
        }
        let rgb = [
            pre[0].clamp(0.0, 1.0),
            pre[1].clamp(0.0, 1.0),
            pre[2].clamp(0.0, 1.0),
        ];
        (
            rgb,
            SkyTaps {
                idx,
                w: weights,
                pre_clamp: pre,
            },
        )
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParams("sky".into()));
        }
        Ok(())
    }
}

/// The complete parameter set fitted per scene.
#[derive(Clone, Debug)]
pub struct SceneModel {
    pub field: TriPlaneField,
    pub sky: SkyMap,
    /// One illumination code per supervised view.
    pub codes: Vec<Vec<f64>>,
}

impl SceneModel {
    pub fn assert_finite(&self) -> Result<()> {
        self.field.assert_finite()?;
        self.sky.assert_finite()?;
        if self.codes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParams("illumination".into()));
        }
        Ok(())
    }

    /// Mean of the per-view illumination codes; used when rendering views
    /// that were not supervised (held-out evaluation, mesh colors).
    pub fn mean_code(&self) -> Vec<f64> {
        let d_w = self.field.decoder.d_w;
        let mut mean = vec![0.0; d_w];
        if self.codes.is_empty() {
            return mean;
        }
        for code in &self.codes {
            for (m, c) in mean.iter_mut().zip(code) {
                *m += c;
            }
        }
        for m in mean.iter_mut() {
            *m /= self.codes.len() as f64;
        }
        mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_extent() -> SceneExtent {
        SceneExtent::new(50.0, 16, 2).unwrap()
    }

    #[test]
    fn effective_extent_matches_formula() {
        assert_eq!(effective_extent(50.0, 16, 2), 62.5);
        assert_eq!(effective_extent(100.0, 16, 0), 100.0);
        assert_eq!(effective_extent(40.0, 20, 2), 48.0);
    }

    #[test]
    fn constant_planes_sum_to_three() {
        let mut f = TriPlaneField::new(8, 4, Decoder::zeros(4, 8, 2), test_extent());
        for plane in f.planes.iter_mut() {
            plane.fill(0.7);
        }
        let h = f.sample(vec3(3.0, -11.0, 8.5));
        for v in h {
            assert!((v - 2.1).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_point_sample_equals_direct_lookup() {
        let res = 8;
        let c = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = TriPlaneField::new(res, c, Decoder::zeros(c, 8, 2), test_extent());
        for plane in f.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let e = f.extent.effective();
        // Cell centers: a = ((k + 0.5) / res) * E - E/2.
        let coord = |k: usize| ((k as f64 + 0.5) / res as f64) * e - e / 2.0;
        let (i, j, k) = (2, 5, 1);
        let p = vec3(coord(i), coord(j), coord(k));
        let h = f.sample(p);
        for ch in 0..c {
            let direct = f.planes[0][(j * res + i) * c + ch]
                + f.planes[1][(k * res + i) * c + ch]
                + f.planes[2][(k * res + j) * c + ch];
            assert!((h[ch] - direct).abs() < 1e-12);
        }
    }

    /// Independent brute-force bilinear interpolation over a plane.
    fn brute_force_plane(plane: &[f64], res: usize, c: usize, u: f64, v: f64, ch: usize) -> f64 {
        let clampi = |i: isize| i.clamp(0, res as isize - 1) as usize;
        let u0 = u.floor() as isize;
        let v0 = v.floor() as isize;
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let val = |uu: isize, vv: isize| plane[(clampi(vv) * res + clampi(uu)) * c + ch];
        val(u0, v0) * (1.0 - fu) * (1.0 - fv)
            + val(u0 + 1, v0) * fu * (1.0 - fv)
            + val(u0, v0 + 1) * (1.0 - fu) * fv
            + val(u0 + 1, v0 + 1) * fu * fv
    }

    #[test]
    fn random_samples_match_brute_force_bilinear() {
        let res = 12;
        let c = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = TriPlaneField::new(res, c, Decoder::zeros(c, 8, 2), test_extent());
        for plane in f.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        let half = f.extent.half();
        for _ in 0..200 {
            let p = vec3(
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            );
            let h = f.sample(p);
            let cc = |a: f64| (a + half) / (2.0 * half) * res as f64 - 0.5;
            for ch in 0..c {
                let expect = brute_force_plane(&f.planes[0], res, c, cc(p.x), cc(p.y), ch)
                    + brute_force_plane(&f.planes[1], res, c, cc(p.x), cc(p.z), ch)
                    + brute_force_plane(&f.planes[2], res, c, cc(p.y), cc(p.z), ch);
                assert!((h[ch] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outside_cube_returns_zero_feature() {
        let mut f = TriPlaneField::new(8, 4, Decoder::zeros(4, 8, 2), test_extent());
        for plane in f.planes.iter_mut() {
            plane.fill(5.0);
        }
        let h = f.sample(vec3(0.0, 0.0, f.extent.half() + 0.001));
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampling_is_linear_in_plane_parameters() {
        let res = 10;
        let c = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fa = TriPlaneField::new(res, c, Decoder::zeros(c, 8, 2), test_extent());
        let mut fb = fa.clone();
        let mut fsum = fa.clone();
        for i in 0..3 {
            for j in 0..fa.planes[i].len() {
                let a = rng.gen_range(-1.0..1.0);
                let b = rng.gen_range(-1.0..1.0);
                fa.planes[i][j] = a;
                fb.planes[i][j] = b;
                fsum.planes[i][j] = a + b;
            }
        }
        let half = fa.extent.half();
        for _ in 0..100 {
            let p = vec3(
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            );
            let ha = fa.sample(p);
            let hb = fb.sample(p);
            let hs = fsum.sample(p);
            for ch in 0..c {
                assert!((hs[ch] - (ha[ch] + hb[ch])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_invariance_inside_inner_cube() {
        // N = 0 field on the 50 m cube vs N = 2 field whose central cells
        // copy it; both share the 0.78125 m cell and aligned lattices.
        let c = 2;
        let inner_res = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ext0 = SceneExtent::new(50.0, 16, 0).unwrap();
        let ext2 = SceneExtent::new(50.0, 16, 2).unwrap();
        let mut f0 = TriPlaneField::new(inner_res, c, Decoder::zeros(c, 8, 2), ext0);
        for plane in f0.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let padded_res = inner_res * (16 + 2 * 2) / 16; // 80
        let offset = (padded_res - inner_res) / 2;
        let mut f2 = TriPlaneField::new(padded_res, c, Decoder::zeros(c, 8, 2), ext2);
        for pi in 0..3 {
            for row in 0..inner_res {
                for col in 0..inner_res {
                    for ch in 0..c {
                        f2.planes[pi][(((row + offset) * padded_res) + col + offset) * c + ch] =
                            f0.planes[pi][(row * inner_res + col) * c + ch];
                    }
                }
            }
        }
        // Stay one cell away from the seam where bilinear support crosses.
        let margin = 25.0 - 2.0 * (50.0 / 64.0);
        for _ in 0..200 {
            let p = vec3(
                rng.gen_range(-margin..margin),
                rng.gen_range(-margin..margin),
                rng.gen_range(-margin..margin),
            );
            let h0 = f0.sample(p);
            let h2 = f2.sample(p);
            for ch in 0..c {
                assert!(
                    (h0[ch] - h2[ch]).abs() < 1e-12,
                    "mismatch at {p:?}: {} vs {}",
                    h0[ch],
                    h2[ch]
                );
            }
        }
    }

    #[test]
    fn zero_decoder_outputs_ln2_and_mid_gray() {
        let dec = Decoder::zeros(4, 8, 2);
        let mut cache = DecodeCache::default();
        let (sigma, rgb) = dec.decode(&[0.0; 4], &[0.0; 2], &mut cache);
        assert!((sigma - std::f64::consts::LN_2).abs() < 1e-12);
        for c in rgb {
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn density_is_independent_of_illumination_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::init(4, 8, 3, &mut rng);
        let h = [0.3, -0.7, 1.1, 0.05];
        let mut cache = DecodeCache::default();
        let (s1, _) = dec.decode(&h, &[0.0, 0.0, 0.0], &mut cache);
        let (s2, _) = dec.decode(&h, &[5.0, -2.0, 0.4], &mut cache);
        assert_eq!(s1, s2);
    }

    #[test]
    fn hand_set_decoder_matches_manual_forward_pass() {
        // 2 channels, 2 hidden units, 1 code dim; every weight chosen by hand.
        let dec = Decoder {
            channels: 2,
            hidden: 2,
            d_w: 1,
            trunk_w: vec![0.5, -0.25, 1.0, 0.75],
            trunk_b: vec![0.1, -0.2],
            density_w: vec![2.0, -1.0],
            density_b: 0.3,
            color_w: vec![
                0.2, -0.4, 0.6, //
                -0.1, 0.3, -0.5, //
                0.7, 0.05, 0.9,
            ],
            color_b: [0.0, 0.1, -0.3],
        };
        let h = [0.4, -0.8];
        let code = [0.25];
        let z1 = [
            0.5 * 0.4 + (-0.25) * (-0.8) + 0.1,
            1.0 * 0.4 + 0.75 * (-0.8) - 0.2,
        ];
        let a1 = [softplus(z1[0]), softplus(z1[1])];
        let sigma_pre = 2.0 * a1[0] - 1.0 * a1[1] + 0.3;
        let expect_sigma = softplus(sigma_pre);
        let expect_rgb = [
            sigmoid(0.2 * a1[0] - 0.4 * a1[1] + 0.6 * 0.25),
            sigmoid(-0.1 * a1[0] + 0.3 * a1[1] - 0.5 * 0.25 + 0.1),
            sigmoid(0.7 * a1[0] + 0.05 * a1[1] + 0.9 * 0.25 - 0.3),
        ];
        let mut cache = DecodeCache::default();
        let (sigma, rgb) = dec.decode(&h, &code, &mut cache);
        assert!((sigma - expect_sigma).abs() < 1e-12);
        for ch in 0..3 {
            assert!((rgb[ch] - expect_rgb[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_range_holds_under_adversarial_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dec = Decoder::init(4, 8, 2, &mut rng);
        let mut cache = DecodeCache::default();
        for h in [[1e6; 4], [-1e6; 4], [1e6, -1e6, 1e6, -1e6]] {
            let (sigma, rgb) = dec.decode(&h, &[1e6, -1e6], &mut cache);
            assert!(sigma >= 0.0 && sigma.is_finite());
            for c in rgb {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn outside_cube_density_is_softplus_of_bias_path() {
        let dec = Decoder::zeros(4, 8, 2);
        let f = TriPlaneField::new(8, 4, dec, test_extent());
        let sigma = f.density_at(vec3(1000.0, 0.0, 0.0));
        // Zero feature, zero weights: sigma = softplus(0) = ln 2.
        assert!((sigma - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn composition_matches_manual_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut f = TriPlaneField::new(8, 4, Decoder::init(4, 8, 2, &mut rng), test_extent());
        for plane in f.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let code = vec![0.3, -0.6];
        let p = vec3(4.0, -9.0, 2.0);
        let h = f.sample(p);
        let mut cache = DecodeCache::default();
        let (es, ec) = f.decoder.decode(&h, &code, &mut cache);
        let (s, c) = f.density_color_at(p, &code);
        assert_eq!(s, es);
        assert_eq!(c, ec);
    }

    #[test]
    fn sky_pole_hits_top_row_and_constant_grid_is_constant() {
        let mut sky = SkyMap::new(8, 16, [0.0; 3]);
        // Distinct color in the top row.
        for col in 0..16 {
            let base = col * 3;
            sky.data[base] = 1.0;
        }
        let (rgb, _) = sky.sample(vec3(0.0, 0.0, 1.0));
        assert!(rgb[0] > 0.99);

        let sky_c = SkyMap::new(8, 16, [0.2, 0.5, 0.8]);
        for d in [
            vec3(0.0, 1.0, 0.0),
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, -0.3, 0.95).normalized(),
            vec3(0.0, 0.0, -1.0),
        ] {
            let (rgb, _) = sky_c.sample(d);
            assert!((rgb[0] - 0.2).abs() < 1e-12);
            assert!((rgb[1] - 0.5).abs() < 1e-12);
            assert!((rgb[2] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn sky_matches_analytic_function_within_bilinear_bound() {
        let f = |theta: f64, phi: f64| -> [f64; 3] {
            [
                0.5 + 0.3 * theta.cos(),
                0.5 + 0.2 * phi.sin(),
                0.5 + 0.25 * (theta + phi).cos() * 0.5,
            ]
        };
        let (h, w) = (64, 128);
        let mut sky = SkyMap::new(h, w, [0.0; 3]);
        for row in 0..h {
            for col in 0..w {
                let theta = (row as f64 + 0.5) / h as f64 * std::f64::consts::PI;
                let phi =
                    (col as f64 + 0.5) / w as f64 * std::f64::consts::TAU - std::f64::consts::PI;
                let rgb = f(theta, phi);
                let base = (row * w + col) * 3;
                sky.data[base..base + 3].copy_from_slice(&rgb);
            }
        }
        let cell = std::f64::consts::TAU / w as f64;
        let bound = 2.0 * cell * cell + 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let d = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.9..0.9),
            )
            .normalized();
            if d.length() == 0.0 {
                continue;
            }
            let theta = d.z.clamp(-1.0, 1.0).acos();
            // Keep away from the polar rows where row clamping flattens.
            if !(0.2..=std::f64::consts::PI - 0.2).contains(&theta) {
                continue;
            }
            let phi = d.y.atan2(d.x);
            let expect = f(theta, phi);
            let (got, _) = sky.sample(d);
            for ch in 0..3 {
                assert!(
                    (got[ch] - expect[ch]).abs() < bound,
                    "dir {d:?} ch {ch}: {} vs {}",
                    got[ch],
                    expect[ch]
                );
            }
        }
    }
}
