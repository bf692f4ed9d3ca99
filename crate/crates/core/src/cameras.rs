//! Ray generation for the three supported camera types and the
//! panorama-to-perspective projection used for supervision crops.
//!
//! Conventions: the scene frame has +x east, +y north, +z up. A pose with
//! yaw = pitch = roll = 0 looks along +y; yaw is compass-style (positive
//! turns toward +x), pitch positive looks up. Pixel centers sit at
//! half-integer offsets and panoramas are equirectangular with the pose
//! heading at the center column.

use crate::error::{Error, Result};
use crate::img::{ColorImage, MaskImage};
use crate::math::{vec3, Mat3, Vec3};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose {
            position,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn level(position: Vec3, yaw: f64) -> Self {
        Pose::new(position, yaw, 0.0, 0.0)
    }

    /// World-from-camera rotation, composed yaw -> pitch -> roll.
    /// Camera axes: x right, y forward, z up.
    pub fn rotation(&self) -> Mat3 {
        Mat3::rot_z(-self.yaw)
            .mul_mat(&Mat3::rot_x(self.pitch))
            .mul_mat(&Mat3::rot_y(self.roll))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CameraSpec {
    /// Nadir-looking parallel projection, north-up. `extent` is the west-east
    /// footprint side in meters; the north-south side scales with the aspect
    /// ratio.
    Orthographic {
        center: [f64; 2],
        extent: f64,
        altitude: f64,
        width: usize,
        height: usize,
    },
    /// Pinhole camera; `fov_deg` is the horizontal field of view.
    Perspective {
        pose: Pose,
        fov_deg: f64,
        width: usize,
        height: usize,
    },
    /// Equirectangular panorama centered on the pose heading and the horizon.
    Panorama {
        pose: Pose,
        yaw_span: f64,
        pitch_span: f64,
        width: usize,
        height: usize,
    },
}

impl CameraSpec {
    pub fn width(&self) -> usize {
        match self {
            CameraSpec::Orthographic { width, .. }
            | CameraSpec::Perspective { width, .. }
            | CameraSpec::Panorama { width, .. } => *width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            CameraSpec::Orthographic { height, .. }
            | CameraSpec::Perspective { height, .. }
            | CameraSpec::Panorama { height, .. } => *height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width() == 0 || self.height() == 0 {
            return Err(Error::InvalidCamera(format!(
                "zero-size image {}x{}",
                self.width(),
                self.height()
            )));
        }
        match self {
            CameraSpec::Orthographic { extent, .. } => {
                if *extent <= 0.0 {
                    return Err(Error::InvalidCamera(format!("extent {extent} <= 0")));
                }
            }
            CameraSpec::Perspective { fov_deg, .. } => {
                if !(*fov_deg > 0.0 && *fov_deg < 180.0) {
                    return Err(Error::InvalidCamera(format!(
                        "fov {fov_deg} outside (0, 180)"
                    )));
                }
            }
            CameraSpec::Panorama {
                yaw_span,
                pitch_span,
                ..
            } => {
                if !(*yaw_span > 0.0 && *yaw_span <= std::f64::consts::TAU) {
                    return Err(Error::InvalidCamera(format!(
                        "yaw span {yaw_span} outside (0, 2pi]"
                    )));
                }
                if !(*pitch_span > 0.0 && *pitch_span <= std::f64::consts::PI) {
                    return Err(Error::InvalidCamera(format!(
                        "pitch span {pitch_span} outside (0, pi]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// One ray per pixel, row-major; `ray(x, y)` indexes the pixel map.
#[derive(Clone, Debug)]
pub struct RayBatch {
    pub width: usize,
    pub height: usize,
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
}

impl RayBatch {
    #[inline]
    pub fn ray(&self, x: usize, y: usize) -> Ray {
        let i = y * self.width + x;
        Ray {
            origin: self.origins[i],
            dir: self.directions[i],
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Direction through continuous pano coordinates (u, v) in pixel units,
/// pixel centers at half-integers. u = W/2, v = H/2 is the exact image
/// center (pose heading, horizon).
pub fn pano_direction(
    pose: &Pose,
    yaw_span: f64,
    pitch_span: f64,
    width: usize,
    height: usize,
    u: f64,
    v: f64,
) -> Vec3 {
    let yaw_rel = (u / width as f64 - 0.5) * yaw_span;
    let pitch = (0.5 - v / height as f64) * pitch_span;
    let (sy, cy) = yaw_rel.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let local = vec3(sy * cp, cy * cp, sp);
    pose.rotation().mul_vec(local)
}

/// Inverse of [`pano_direction`]: continuous pano coordinates for a world
/// direction. The yaw coordinate is reduced into (-span/2, span/2].
pub fn pano_pixel_for_direction(
    pose: &Pose,
    yaw_span: f64,
    pitch_span: f64,
    width: usize,
    height: usize,
    dir: Vec3,
) -> (f64, f64) {
    let local = pose.rotation().transposed().mul_vec(dir).normalized();
    let yaw_rel = local.x.atan2(local.y);
    let pitch = local.z.clamp(-1.0, 1.0).asin();
    let u = (yaw_rel / yaw_span + 0.5) * width as f64;
    let v = (0.5 - pitch / pitch_span) * height as f64;
    (u, v)
}

/// Ray through the center of pixel (x, y).
pub fn pixel_ray(camera: &CameraSpec, x: usize, y: usize) -> Ray {
    match camera {
        CameraSpec::Orthographic {
            center,
            extent,
            altitude,
            width,
            height,
        } => {
            let ex = *extent;
            let ey = ex * *height as f64 / *width as f64;
            let ox = center[0] - ex / 2.0 + (x as f64 + 0.5) * ex / *width as f64;
            let oy = center[1] + ey / 2.0 - (y as f64 + 0.5) * ey / *height as f64;
            Ray {
                origin: vec3(ox, oy, *altitude),
                dir: vec3(0.0, 0.0, -1.0),
            }
        }
        CameraSpec::Perspective {
            pose,
            fov_deg,
            width,
            height,
        } => {
            let w = *width as f64;
            let h = *height as f64;
            let focal = (w / 2.0) / (fov_deg.to_radians() / 2.0).tan();
            let px = x as f64 + 0.5 - w / 2.0;
            let py = h / 2.0 - (y as f64 + 0.5);
            let local = vec3(px / focal, 1.0, py / focal).normalized();
            Ray {
                origin: pose.position,
                dir: pose.rotation().mul_vec(local),
            }
        }
        CameraSpec::Panorama {
            pose,
            yaw_span,
            pitch_span,
            width,
            height,
        } => Ray {
            origin: pose.position,
            dir: pano_direction(
                pose,
                *yaw_span,
                *pitch_span,
                *width,
                *height,
                x as f64 + 0.5,
                y as f64 + 0.5,
            ),
        },
    }
}

/// Build the full per-pixel ray batch for a camera.
pub fn make_rays(camera: &CameraSpec) -> Result<RayBatch> {
    camera.validate()?;
    let (w, h) = (camera.width(), camera.height());
    let mut origins = Vec::with_capacity(w * h);
    let mut directions = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let ray = pixel_ray(camera, x, y);
            origins.push(ray.origin);
            directions.push(ray.dir);
        }
    }
    Ok(RayBatch {
        width: w,
        height: h,
        origins,
        directions,
    })
}

/// Geometry of an equirectangular panorama image used as a resampling
/// source; spans default to a full turn horizontally and a horizon-centered
/// quarter turn vertically (4:1 street panoramas).
#[derive(Clone, Copy, Debug)]
pub struct PanoLayout {
    pub yaw_span: f64,
    pub pitch_span: f64,
}

impl Default for PanoLayout {
    fn default() -> Self {
        PanoLayout {
            yaw_span: std::f64::consts::TAU,
            pitch_span: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Gnomonic crop of an equirectangular panorama. `yaw`/`pitch` orient the
/// crop relative to the panorama heading. Output pixels whose direction
/// falls outside the panorama's angular coverage are flagged invalid and
/// must be excluded from losses.
pub fn pano_to_perspective(
    pano: &ColorImage,
    layout: PanoLayout,
    yaw: f64,
    pitch: f64,
    fov_deg: f64,
    out_w: usize,
    out_h: usize,
) -> Result<(ColorImage, MaskImage)> {
    let crop_cam = CameraSpec::Perspective {
        pose: Pose::new(Vec3::ZERO, yaw, pitch, 0.0),
        fov_deg,
        width: out_w,
        height: out_h,
    };
    crop_cam.validate()?;
    if pano.width == 0 || pano.height == 0 {
        return Err(Error::InvalidCamera("empty panorama".into()));
    }
    let identity = Pose::level(Vec3::ZERO, 0.0);
    let full_wrap = (layout.yaw_span - std::f64::consts::TAU).abs() < 1e-12;
    let mut out = ColorImage::new(out_w, out_h);
    let mut mask = MaskImage::new(out_w, out_h, false);
    for y in 0..out_h {
        for x in 0..out_w {
            let dir = pixel_ray(&crop_cam, x, y).dir;
            let (u, v) = pano_pixel_for_direction(
                &identity,
                layout.yaw_span,
                layout.pitch_span,
                pano.width,
                pano.height,
                dir,
            );
            let pitch_dir = dir.z.clamp(-1.0, 1.0).asin();
            let mut ok = pitch_dir.abs() <= layout.pitch_span / 2.0 + 1e-12;
            if !full_wrap {
                let yaw_dir = dir.x.atan2(dir.y);
                ok &= yaw_dir.abs() <= layout.yaw_span / 2.0 + 1e-12;
            }
            if ok {
                out.set(x, y, pano.sample_bilinear(u - 0.5, v - 0.5, full_wrap));
                mask.set(x, y, true);
            }
        }
    }
    Ok((out, mask))
}

/// Perspective training-view sampler configuration. Yaw bounds default to
/// the widest symmetric range; pitch stays within [-30, 30] degrees, roll
/// is fixed at zero, and the field of view is drawn from a discrete set.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSamplerConfig {
    pub yaw_range_deg: [f64; 2],
    pub pitch_range_deg: [f64; 2],
    pub fovs_deg: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl Default for ViewSamplerConfig {
    fn default() -> Self {
        ViewSamplerConfig {
            yaw_range_deg: [-179.0, 179.0],
            pitch_range_deg: [-30.0, 30.0],
            fovs_deg: vec![90.0, 105.0, 120.0],
            width: 256,
            height: 256,
        }
    }
}

/// A sampled training view: angles in radians, roll always zero.
#[derive(Clone, Copy, Debug)]
pub struct SampledView {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub fov_deg: f64,
}

pub fn sample_training_view(cfg: &ViewSamplerConfig, rng: &mut impl Rng) -> SampledView {
    let yaw = rng
        .gen_range(cfg.yaw_range_deg[0]..=cfg.yaw_range_deg[1])
        .to_radians();
    let pitch = rng
        .gen_range(cfg.pitch_range_deg[0]..=cfg.pitch_range_deg[1])
        .to_radians();
    let fov_deg = cfg.fovs_deg[rng.gen_range(0..cfg.fovs_deg.len())];
    SampledView {
        yaw,
        pitch,
        roll: 0.0,
        fov_deg,
    }
}
