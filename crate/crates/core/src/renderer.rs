//! Ray marching with alpha compositing over any density/color source,
//! producing color, expected depth, opacity, and the residual
//! transmittance used by the sky losses.

use crate::cameras::{make_rays, CameraSpec, Ray};
use crate::error::Result;
use crate::field::{SkyMap, TriPlaneField};
use crate::img::{ColorImage, MaskImage, ScalarImage};
use crate::math::Vec3;
use rayon::prelude::*;

/// Anything the renderer can march: a fitted field or an analytic scene.
pub trait SceneSource: Sync {
    fn density_color(&self, p: Vec3) -> (f64, [f64; 3]);
    fn sky_color(&self, d: Vec3) -> [f64; 3];
    /// Half-side of the axis-aligned cube that bounds the volume.
    fn bounds_half(&self) -> f64;
}

/// A fitted tri-plane field viewed under one illumination code.
pub struct FieldSource<'a> {
    pub field: &'a TriPlaneField,
    pub sky: &'a SkyMap,
    pub code: &'a [f64],
}

impl<'a> FieldSource<'a> {
    /// Fails on non-finite parameters; marching NaN fields is never valid.
    pub fn new(field: &'a TriPlaneField, sky: &'a SkyMap, code: &'a [f64]) -> Result<Self> {
        field.assert_finite()?;
        sky.assert_finite()?;
        Ok(FieldSource { field, sky, code })
    }
}

impl SceneSource for FieldSource<'_> {
    fn density_color(&self, p: Vec3) -> (f64, [f64; 3]) {
        self.field.density_color_at(p, self.code)
    }

    fn sky_color(&self, d: Vec3) -> [f64; 3] {
        self.sky.sample(d).0
    }

    fn bounds_half(&self) -> f64 {
        self.field.extent.half()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchConfig {
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    /// Stratified sample offsets during fitting; midpoint sampling when off.
    pub jitter: bool,
    /// Expected depth is reported only where accumulated opacity reaches this.
    pub depth_valid_threshold: f64,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig {
            n_samples: 96,
            t_near: 0.0,
            t_far: f64::INFINITY,
            jitter: false,
            depth_valid_threshold: 0.5,
        }
    }
}

impl MarchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(crate::error::Error::InvalidConfig(format!(
                "n_samples {} < 2",
                self.n_samples
            )));
        }
        if !(self.t_far > self.t_near && self.t_near >= 0.0) {
            return Err(crate::error::Error::InvalidConfig(format!(
                "march range [{}, {}] invalid",
                self.t_near, self.t_far
            )));
        }
        Ok(())
    }
}

/// Slab intersection of a ray with the cube [-half, half]^3. Returns entry
/// and exit distances with t >= 0, or None when the ray misses.
pub fn intersect_cube(origin: Vec3, dir: Vec3, half: f64) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1: f64 = f64::INFINITY;
    let o = origin.to_array();
    let d = dir.to_array();
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > half {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut ta = (-half - o[axis]) * inv;
        let mut tb = (half - o[axis]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// splitmix64; used to derive reproducible per-ray stratified offsets.
#[inline]
pub fn hash_u64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Offset in [0, 1) for sample `k` of the ray seeded with `seed`.
#[inline]
pub fn stratified_offset(seed: u64, k: usize) -> f64 {
    (hash_u64(seed ^ (k as u64).wrapping_mul(0xa076_1d64_78bd_642f)) >> 11) as f64
        / (1u64 << 53) as f64
}

#[derive(Clone, Copy, Debug)]
pub struct PixelRender {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub depth_valid: bool,
    /// 1 - t_out.
    pub opacity: f64,
    /// Accumulated compositing weights; weight_sum + t_out = 1 up to
    /// rounding (the conservation identity).
    pub weight_sum: f64,
    pub t_out: f64,
}

/// March one ray. `jitter_seed` enables stratified offsets; `None` uses
/// midpoints. Rays that miss the volume composite pure sky.
pub fn march_ray(
    src: &impl SceneSource,
    ray: Ray,
    cfg: &MarchConfig,
    jitter_seed: Option<u64>,
) -> PixelRender {
    let sky = src.sky_color(ray.dir);
    let span = intersect_cube(ray.origin, ray.dir, src.bounds_half())
        .map(|(t0, t1)| (t0.max(cfg.t_near), t1.min(cfg.t_far)));
    let (t0, t1) = match span {
        Some((t0, t1)) if t1 > t0 => (t0, t1),
        _ => {
            return PixelRender {
                rgb: sky,
                depth: f64::NAN,
                depth_valid: false,
                opacity: 0.0,
                weight_sum: 0.0,
                t_out: 1.0,
            }
        }
    };
    let n = cfg.n_samples;
    let delta = (t1 - t0) / n as f64;
    let mut transmittance = 1.0;
    let mut rgb = [0.0; 3];
    let mut sum_w = 0.0;
    let mut sum_wt = 0.0;
    for k in 0..n {
        let u = match jitter_seed {
            Some(seed) => stratified_offset(seed, k),
            None => 0.5,
        };
        let t = t0 + (k as f64 + u) * delta;
        let p = ray.origin + ray.dir * t;
        let (sigma, color) = src.density_color(p);
        let att = (-sigma * delta).exp();
        let alpha = 1.0 - att;
        let w = transmittance * alpha;
        for (acc, c) in rgb.iter_mut().zip(color) {
            *acc += w * c;
        }
        sum_w += w;
        sum_wt += w * t;
        transmittance *= att;
    }
    let t_out = transmittance;
    for (acc, c) in rgb.iter_mut().zip(sky) {
        *acc += t_out * c;
    }
    let depth_valid = sum_w >= cfg.depth_valid_threshold;
    PixelRender {
        rgb,
        depth: if depth_valid { sum_wt / sum_w } else { f64::NAN },
        depth_valid,
        opacity: 1.0 - t_out,
        weight_sum: sum_w,
        t_out,
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub t_out: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RenderOutput {
    pub fn color_image(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            data: self.rgb.clone(),
        }
    }

    pub fn depth_image(&self) -> ScalarImage {
        ScalarImage {
            width: self.width,
            height: self.height,
            values: self.depth.clone(),
            valid: self.valid.clone(),
        }
    }

    pub fn valid_mask(&self) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.valid.clone(),
        }
    }
}

/// Render a full view; parallel over rows, deterministic for a fixed seed
/// regardless of thread count.
pub fn render_view(
    src: &impl SceneSource,
    camera: &CameraSpec,
    cfg: &MarchConfig,
    jitter_seed: Option<u64>,
) -> Result<RenderOutput> {
    cfg.validate()?;
    let rays = make_rays(camera)?;
    let (w, h) = (rays.width, rays.height);
    let rows: Vec<Vec<PixelRender>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ray = rays.ray(x, y);
                    let seed = jitter_seed.map(|s| hash_u64(s ^ ((y * w + x) as u64)));
                    march_ray(src, ray, cfg, seed)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput {
        width: w,
        height: h,
        rgb: Vec::with_capacity(w * h),
        depth: Vec::with_capacity(w * h),
        opacity: Vec::with_capacity(w * h),
        t_out: Vec::with_capacity(w * h),
        valid: Vec::with_capacity(w * h),
    };
    for row in rows {
        for px in row {
            out.rgb.push(px.rgb);
            out.depth.push(px.depth);
            out.opacity.push(px.opacity);
            out.t_out.push(px.t_out);
            out.valid.push(px.depth_valid);
        }
    }
    Ok(out)
}

/// Render an orthographic view and convert expected ray distance into
/// height above the scene datum: h = altitude - depth. Invalid pixels get
/// the grid's nodata value; the geotransform is scene-frame meters.
pub fn render_height(
    src: &impl SceneSource,
    camera: &CameraSpec,
    cfg: &MarchConfig,
) -> Result<crate::geodata::HeightGrid> {
    let CameraSpec::Orthographic {
        center,
        extent,
        altitude,
        width,
        height,
    } = camera
    else {
        return Err(crate::error::Error::InvalidCamera(
            "height rendering needs an orthographic camera".into(),
        ));
    };
    let out = render_view(src, camera, cfg, None)?;
    let step_x = extent / *width as f64;
    let ey = extent * *height as f64 / *width as f64;
    let transform = [
        center[0] - extent / 2.0,
        step_x,
        0.0,
        center[1] + ey / 2.0,
        0.0,
        -ey / *height as f64,
    ];
    let mut grid = crate::geodata::HeightGrid {
        width: *width,
        height: *height,
        transform,
        crs: crate::geodata::Crs::Local,
        nodata: f32::NAN,
        unit: crate::geodata::LengthUnit::Meters,
        values: vec![f32::NAN; width * height],
    };
    for i in 0..out.depth.len() {
        if out.valid[i] {
            grid.values[i] = (altitude - out.depth[i]) as f32;
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameras::Pose;
    use crate::math::vec3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn height_is_altitude_minus_depth_with_nodata_elsewhere() {
        let src = SlabSource {
            z_top: 3.0,
            z_bottom: -10.0,
            sigma: 100.0,
            color: [0.5; 3],
            half: 25.0,
        };
        let cam = CameraSpec::Orthographic {
            center: [0.0, 0.0],
            extent: 30.0,
            altitude: 60.0,
            width: 8,
            height: 8,
        };
        let cfg = MarchConfig::default();
        let grid = render_height(&src, &cam, &cfg).unwrap();
        let out = render_view(&src, &cam, &cfg, None).unwrap();
        let spacing = (60.0 + 25.0) / cfg.n_samples as f64;
        for i in 0..64 {
            assert!(!grid.is_nodata(grid.values[i]));
            assert!((grid.values[i] as f64 - 3.0).abs() <= spacing);
            // h + depth = altitude exactly on valid pixels.
            assert!((grid.values[i] as f64 + out.depth[i] - 60.0).abs() < 1e-6);
        }

        // Empty volume: all nodata.
        let empty = ConstSource {
            sigma: 0.0,
            color: [0.0; 3],
            sky: [0.0; 3],
            half: 25.0,
        };
        let grid = render_height(&empty, &cam, &cfg).unwrap();
        assert!(grid.values.iter().all(|v| grid.is_nodata(*v)));
    }

    /// Constant-density source over the cube with a fixed sky.
    struct ConstSource {
        sigma: f64,
        color: [f64; 3],
        sky: [f64; 3],
        half: f64,
    }

    impl SceneSource for ConstSource {
        fn density_color(&self, _p: Vec3) -> (f64, [f64; 3]) {
            (self.sigma, self.color)
        }
        fn sky_color(&self, _d: Vec3) -> [f64; 3] {
            self.sky
        }
        fn bounds_half(&self) -> f64 {
            self.half
        }
    }

    /// Horizontal slab of constant density between two heights.
    struct SlabSource {
        z_top: f64,
        z_bottom: f64,
        sigma: f64,
        color: [f64; 3],
        half: f64,
    }

    impl SceneSource for SlabSource {
        fn density_color(&self, p: Vec3) -> (f64, [f64; 3]) {
            if p.z <= self.z_top && p.z >= self.z_bottom {
                (self.sigma, self.color)
            } else {
                (0.0, [0.0; 3])
            }
        }
        fn sky_color(&self, _d: Vec3) -> [f64; 3] {
            [1.0, 0.0, 0.0]
        }
        fn bounds_half(&self) -> f64 {
            self.half
        }
    }

    #[test]
    fn empty_volume_composites_pure_sky() {
        let src = ConstSource {
            sigma: 0.0,
            color: [0.9; 3],
            sky: [0.1, 0.4, 0.7],
            half: 25.0,
        };
        let ray = Ray {
            origin: vec3(0.0, 0.0, 60.0),
            dir: vec3(0.0, 0.0, -1.0),
        };
        let px = march_ray(&src, ray, &MarchConfig::default(), None);
        assert_eq!(px.rgb, [0.1, 0.4, 0.7]);
        assert_eq!(px.t_out, 1.0);
        assert!(!px.depth_valid && px.depth.is_nan());
    }

    #[test]
    fn constant_sigma_gives_closed_form_transmittance() {
        // sigma = 0.1 over the 50 m cube: piecewise-constant density makes
        // the discrete sum equal the integral, t_out = e^-5 exactly.
        let src = ConstSource {
            sigma: 0.1,
            color: [0.5; 3],
            sky: [0.0; 3],
            half: 25.0,
        };
        let ray = Ray {
            origin: vec3(0.0, 0.0, 60.0),
            dir: vec3(0.0, 0.0, -1.0),
        };
        let px = march_ray(&src, ray, &MarchConfig::default(), None);
        assert!((px.t_out - (-5.0f64).exp()).abs() < 1e-12);
        // Jitter does not change the result for constant sigma.
        let pxj = march_ray(&src, ray, &MarchConfig::default(), Some(42));
        assert!((pxj.t_out - (-5.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn opaque_slab_depth_within_one_sample_spacing() {
        let src = SlabSource {
            z_top: 0.0,
            z_bottom: -1.0,
            sigma: 1e3,
            color: [0.2, 0.6, 0.4],
            half: 25.0,
        };
        let ray = Ray {
            origin: vec3(0.0, 0.0, 60.0),
            dir: vec3(0.0, 0.0, -1.0),
        };
        let cfg = MarchConfig::default();
        let px = march_ray(&src, ray, &cfg, None);
        // Cube entry at t = 35, exit 85; sample spacing 50/96.
        let spacing = 50.0 / cfg.n_samples as f64;
        assert!(px.opacity >= 0.999);
        assert!(px.depth_valid);
        assert!((px.depth - 60.0).abs() <= spacing, "depth {}", px.depth);
        for ch in 0..3 {
            assert!((px.rgb[ch] - src.color[ch]).abs() < 1e-3);
        }
        // Doubling the sample count moves rgb by less than 1e-3.
        let cfg2 = MarchConfig {
            n_samples: 192,
            ..cfg
        };
        let px2 = march_ray(&src, ray, &cfg2, None);
        for ch in 0..3 {
            assert!((px.rgb[ch] - px2.rgb[ch]).abs() < 1e-3);
        }
    }

    #[test]
    fn conservation_and_monotonicity_on_random_rays() {
        // Direct check of the compositing identity sum(w) + t_out = 1 via
        // opacity, plus non-increasing transmittance, on a lumpy source.
        struct Lumpy {
            half: f64,
        }
        impl SceneSource for Lumpy {
            fn density_color(&self, p: Vec3) -> (f64, [f64; 3]) {
                let s = 0.3 * (1.0 + (0.3 * p.x).sin() * (0.2 * p.y).cos() + (0.1 * p.z).sin());
                (s.max(0.0), [0.5, 0.5, 0.5])
            }
            fn sky_color(&self, _d: Vec3) -> [f64; 3] {
                [0.0; 3]
            }
            fn bounds_half(&self) -> f64 {
                self.half
            }
        }
        let src = Lumpy { half: 25.0 };
        let cfg = MarchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..500 {
            let origin = vec3(
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
            );
            let dir = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized();
            if dir.length() == 0.0 {
                continue;
            }
            let px = march_ray(&src, Ray { origin, dir }, &cfg, Some(i));
            // opacity was accumulated as sum of weights via 1 - t_out.
            assert!((px.opacity + px.t_out - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_density_by_1e3_saturates_opacity() {
        let thin = ConstSource {
            sigma: 0.02,
            color: [0.5; 3],
            sky: [0.0; 3],
            half: 25.0,
        };
        let dense = ConstSource {
            sigma: 20.0,
            color: [0.5; 3],
            sky: [0.0; 3],
            half: 25.0,
        };
        let ray = Ray {
            origin: vec3(0.0, 0.0, 60.0),
            dir: vec3(0.0, 0.0, -1.0),
        };
        let cfg = MarchConfig::default();
        let a = march_ray(&thin, ray, &cfg, None);
        let b = march_ray(&dense, ray, &cfg, None);
        assert!(a.opacity < 0.7);
        assert!(b.opacity > 0.999);
    }

    #[test]
    fn panorama_render_of_empty_field_resamples_sky() {
        struct SkyOnly;
        impl SceneSource for SkyOnly {
            fn density_color(&self, _p: Vec3) -> (f64, [f64; 3]) {
                (0.0, [0.0; 3])
            }
            fn sky_color(&self, d: Vec3) -> [f64; 3] {
                [0.5 + 0.5 * d.z, 0.3, 0.5 - 0.25 * d.x]
            }
            fn bounds_half(&self) -> f64 {
                25.0
            }
        }
        let cam = CameraSpec::Panorama {
            pose: Pose::level(vec3(0.0, 0.0, 2.0), 0.0),
            yaw_span: std::f64::consts::TAU,
            pitch_span: std::f64::consts::FRAC_PI_2,
            width: 32,
            height: 8,
        };
        let out = render_view(&SkyOnly, &cam, &MarchConfig::default(), None).unwrap();
        let rays = make_rays(&cam).unwrap();
        for (i, rgb) in out.rgb.iter().enumerate() {
            let d = rays.directions[i];
            let expect = [0.5 + 0.5 * d.z, 0.3, 0.5 - 0.25 * d.x];
            for ch in 0..3 {
                assert!((rgb[ch] - expect[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthographic_depth_of_ground_slab() {
        let src = SlabSource {
            z_top: 0.0,
            z_bottom: -25.0,
            sigma: 50.0,
            color: [0.4, 0.4, 0.4],
            half: 25.0,
        };
        let cam = CameraSpec::Orthographic {
            center: [0.0, 0.0],
            extent: 40.0,
            altitude: 60.0,
            width: 16,
            height: 16,
        };
        let cfg = MarchConfig::default();
        let out = render_view(&src, &cam, &cfg, None).unwrap();
        let spacing = 50.0 / cfg.n_samples as f64;
        for i in 0..out.depth.len() {
            assert!(out.valid[i]);
            assert!((out.depth[i] - 60.0).abs() <= spacing);
        }
    }

    #[test]
    fn rays_missing_cube_entirely_are_sky() {
        let src = ConstSource {
            sigma: 5.0,
            color: [1.0; 3],
            sky: [0.25, 0.5, 0.75],
            half: 10.0,
        };
        let ray = Ray {
            origin: vec3(50.0, 0.0, 0.0),
            dir: vec3(0.0, 1.0, 0.0),
        };
        let px = march_ray(&src, ray, &MarchConfig::default(), None);
        assert_eq!(px.rgb, [0.25, 0.5, 0.75]);
        assert_eq!(px.t_out, 1.0);
    }
}
