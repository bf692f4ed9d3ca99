//! Analytic ground-truth scenes: closed-form density/color primitives with
//! exact ray intersections, plus supervision-set generation for fitting
//! experiments. Everything here is deterministic given a seed.

use crate::cameras::CameraSpec;
use crate::error::{Error, Result};
use crate::img::{MaskImage, ScalarImage};
use crate::math::{vec3, Vec3};
use crate::renderer::{self, MarchConfig, SceneSource};
use crate::supervision::{PanoView, SatView, SupervisionSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Solid below `z_top`, spanning the whole domain footprint.
    Slab { z_top: f64 },
    Box { center: [f64; 3], size: [f64; 3] },
    /// Vertical capped cylinder.
    Cylinder {
        center_xy: [f64; 2],
        radius: f64,
        z_range: [f64; 2],
    },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenePrimitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub sigma: f64,
    pub rgb: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkySpec {
    Uniform { rgb: [f64; 3] },
    /// Blend from horizon color at z = 0 to zenith color at z = 1.
    Gradient {
        zenith: [f64; 3],
        horizon: [f64; 3],
    },
}

impl SkySpec {
    pub fn color(&self, d: Vec3) -> [f64; 3] {
        match self {
            SkySpec::Uniform { rgb } => *rgb,
            SkySpec::Gradient { zenith, horizon } => {
                let t = d.z.clamp(0.0, 1.0);
                [
                    horizon[0] + (zenith[0] - horizon[0]) * t,
                    horizon[1] + (zenith[1] - horizon[1]) * t,
                    horizon[2] + (zenith[2] - horizon[2]) * t,
                ]
            }
        }
    }
}

fn default_softness() -> f64 {
    0.75
}

/// An analytic scene over the cube [-domain/2, domain/2]^3.
///
/// `edge_softness` linearly ramps each primitive's density across a band
/// centered on its exact surface (full density half a band inside, zero
/// half a band outside). This keeps rendered images convergent in the
/// sample count at silhouettes; `analytic_depth` still reports the exact
/// hard surface. Zero gives hard edges.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub domain: f64,
    pub primitives: Vec<ScenePrimitive>,
    pub sky: SkySpec,
    pub background: [f64; 3],
    #[serde(default = "default_softness")]
    pub edge_softness: f64,
}

impl SceneSpec {
    pub fn half(&self) -> f64 {
        self.domain / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain <= 0.0 {
            return Err(Error::InvalidConfig("scene domain must be positive".into()));
        }
        let half = self.half();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.sigma <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "primitive {i} has non-positive density"
                )));
            }
            let inside = match &p.shape {
                Shape::Slab { z_top } => z_top.abs() <= half,
                Shape::Box { center, size } => (0..3).all(|a| {
                    center[a] - size[a] / 2.0 >= -half && center[a] + size[a] / 2.0 <= half
                }),
                Shape::Cylinder {
                    center_xy,
                    radius,
                    z_range,
                } => {
                    center_xy[0].abs() + radius <= half
                        && center_xy[1].abs() + radius <= half
                        && z_range[0] >= -half
                        && z_range[1] <= half
                        && z_range[0] < z_range[1]
                }
                Shape::Sphere { center, radius } => {
                    (0..3).all(|a| center[a] - radius >= -half && center[a] + radius <= half)
                }
            };
            if !inside {
                return Err(Error::InvalidConfig(format!(
                    "primitive {i} extends outside the scene domain"
                )));
            }
        }
        Ok(())
    }

    /// Signed distance to a shape's surface, negative inside.
    fn sdf(shape: &Shape, p: Vec3) -> f64 {
        match shape {
            Shape::Slab { z_top } => p.z - z_top,
            // Chebyshev-style box/cylinder distances: the density ramp then
            // has piecewise-linear profiles along rays, which keeps the
            // ray-march integral rapidly convergent even near corners.
            Shape::Box { center, size } => {
                let q = [
                    (p.x - center[0]).abs() - size[0] / 2.0,
                    (p.y - center[1]).abs() - size[1] / 2.0,
                    (p.z - center[2]).abs() - size[2] / 2.0,
                ];
                q[0].max(q[1]).max(q[2])
            }
            Shape::Cylinder {
                center_xy,
                radius,
                z_range,
            } => {
                let dx = p.x - center_xy[0];
                let dy = p.y - center_xy[1];
                let d_radial = (dx * dx + dy * dy).sqrt() - radius;
                let zc = (z_range[0] + z_range[1]) / 2.0;
                let d_z = (p.z - zc).abs() - (z_range[1] - z_range[0]) / 2.0;
                d_radial.max(d_z)
            }
            Shape::Sphere { center, radius } => (p - Vec3::from_array(*center)).length() - radius,
        }
    }

    /// A primitive's density contribution at a point: full inside, zero
    /// outside, with a linear ramp across the softness band.
    fn primitive_density(&self, prim: &ScenePrimitive, p: Vec3) -> f64 {
        let sdf = Self::sdf(&prim.shape, p);
        if self.edge_softness <= 0.0 {
            if sdf <= 0.0 {
                prim.sigma
            } else {
                0.0
            }
        } else {
            // C1 smoothstep across the band: no curvature impulses at the
            // band ends, so the march integral converges quadratically.
            let x = (0.5 - sdf / self.edge_softness).clamp(0.0, 1.0);
            prim.sigma * x * x * (3.0 - 2.0 * x)
        }
    }

    /// Density at a point: the maximum over primitive contributions, zero
    /// in free space or outside the domain.
    pub fn analytic_density(&self, p: Vec3) -> f64 {
        let half = self.half();
        if p.x.abs() > half || p.y.abs() > half || p.z.abs() > half {
            return 0.0;
        }
        let mut best = 0.0f64;
        for prim in &self.primitives {
            best = best.max(self.primitive_density(prim, p));
        }
        best
    }

    /// Color at a point: primitive colors blended by their density
    /// contributions. Away from halo overlaps this is exactly the
    /// containing primitive's color; the blend keeps the color field
    /// continuous so rendered images converge in the sample count.
    pub fn analytic_color(&self, p: Vec3) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for prim in &self.primitives {
            let d = self.primitive_density(prim, p);
            if d > 0.0 {
                total += d;
                for (a, c) in acc.iter_mut().zip(prim.rgb) {
                    *a += d * c;
                }
            }
        }
        if total > 0.0 {
            [acc[0] / total, acc[1] / total, acc[2] / total]
        } else {
            self.background
        }
    }

    /// Exact first-hit distance of a ray against the scene's primitives;
    /// `None` when the ray escapes to the sky. A ray starting inside a
    /// primitive reports distance zero.
    pub fn analytic_depth(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let half = self.half();
        let mut best: Option<f64> = None;
        for prim in &self.primitives {
            let span = match &prim.shape {
                Shape::Slab { z_top } => ray_aabb(
                    origin,
                    dir,
                    vec3(-half, -half, -half),
                    vec3(half, half, *z_top),
                ),
                Shape::Box { center, size } => {
                    let c = Vec3::from_array(*center);
                    let h = Vec3::from_array(*size) * 0.5;
                    ray_aabb(origin, dir, c - h, c + h)
                }
                Shape::Cylinder {
                    center_xy,
                    radius,
                    z_range,
                } => ray_capped_cylinder(origin, dir, *center_xy, *radius, *z_range),
                Shape::Sphere { center, radius } => {
                    ray_sphere(origin, dir, Vec3::from_array(*center), *radius)
                }
            };
            if let Some((t0, t1)) = span {
                if t1 >= 0.0 {
                    let entry = t0.max(0.0);
                    if best.map_or(true, |b| entry < b) {
                        best = Some(entry);
                    }
                }
            }
        }
        best
    }
}

impl SceneSource for SceneSpec {
    fn density_color(&self, p: Vec3) -> (f64, [f64; 3]) {
        (self.analytic_density(p), self.analytic_color(p))
    }

    fn sky_color(&self, d: Vec3) -> [f64; 3] {
        self.sky.color(d)
    }

    fn bounds_half(&self) -> f64 {
        self.half()
    }
}

fn ray_aabb(origin: Vec3, dir: Vec3, min: Vec3, max: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let o = origin.to_array();
    let d = dir.to_array();
    let mn = min.to_array();
    let mx = max.to_array();
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < mn[a] || o[a] > mx[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let mut ta = (mn[a] - o[a]) * inv;
        let mut tb = (mx[a] - o[a]) * inv;
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

fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<(f64, f64)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

fn ray_capped_cylinder(
    origin: Vec3,
    dir: Vec3,
    center_xy: [f64; 2],
    radius: f64,
    z_range: [f64; 2],
) -> Option<(f64, f64)> {
    // Intersect the infinite lateral surface in the xy plane, then clip
    // against the z slab.
    let ox = origin.x - center_xy[0];
    let oy = origin.y - center_xy[1];
    let a = dir.x * dir.x + dir.y * dir.y;
    let (mut t0, mut t1);
    if a < 1e-15 {
        if ox * ox + oy * oy > radius * radius {
            return None;
        }
        t0 = f64::NEG_INFINITY;
        t1 = f64::INFINITY;
    } else {
        let b = ox * dir.x + oy * dir.y;
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        t0 = (-b - s) / a;
        t1 = (-b + s) / a;
    }
    // z slab clip.
    if dir.z.abs() < 1e-15 {
        if origin.z < z_range[0] || origin.z > z_range[1] {
            return None;
        }
    } else {
        let inv = 1.0 / dir.z;
        let mut za = (z_range[0] - origin.z) * inv;
        let mut zb = (z_range[1] - origin.z) * inv;
        if za > zb {
            std::mem::swap(&mut za, &mut zb);
        }
        t0 = t0.max(za);
        t1 = t1.min(zb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Camera set for one supervision bundle. The held-out panorama is never
/// written into the fitted set; it exists for evaluation.
#[derive(Clone, Debug)]
pub struct SupervisionCameras {
    pub satellite: CameraSpec,
    pub panoramas: Vec<CameraSpec>,
    pub holdout_pano: Option<CameraSpec>,
}

/// The default "city block": ground slab, crossing roads, three buildings,
/// a kiosk, and a tree whose canopy overhangs a genuine void beside its
/// trunk. The canopy density steps up by exactly 1.0 above the void, so a
/// gravity slack of 1 tolerates the true field while zero slack does not.
pub fn city_block() -> SceneSpec {
    SceneSpec {
        domain: 80.0,
        primitives: vec![
            ScenePrimitive {
                shape: Shape::Slab { z_top: 0.0 },
                sigma: 8.0,
                rgb: [0.42, 0.42, 0.38],
            },
            ScenePrimitive {
                shape: Shape::Box {
                    center: [0.0, 0.0, -0.35],
                    size: [80.0, 7.0, 1.5],
                },
                sigma: 8.0,
                rgb: [0.20, 0.20, 0.22],
            },
            ScenePrimitive {
                shape: Shape::Box {
                    center: [0.0, 0.0, -0.35],
                    size: [7.0, 80.0, 1.5],
                },
                sigma: 8.0,
                rgb: [0.20, 0.20, 0.22],
            },
            ScenePrimitive {
                shape: Shape::Box {
                    center: [-12.0, -10.0, 6.0],
                    size: [14.0, 12.0, 12.0],
                },
                sigma: 8.0,
                rgb: [0.55, 0.33, 0.28],
            },
            ScenePrimitive {
                shape: Shape::Box {
                    center: [13.0, 9.0, 4.0],
                    size: [12.0, 10.0, 8.0],
                },
                sigma: 8.0,
                rgb: [0.58, 0.58, 0.62],
            },
            ScenePrimitive {
                shape: Shape::Cylinder {
                    center_xy: [-10.0, 13.0],
                    radius: 4.0,
                    z_range: [0.0, 10.0],
                },
                sigma: 8.0,
                rgb: [0.45, 0.50, 0.58],
            },
            ScenePrimitive {
                shape: Shape::Box {
                    center: [12.0, -13.0, 1.5],
                    size: [6.0, 5.0, 3.0],
                },
                sigma: 8.0,
                rgb: [0.60, 0.50, 0.30],
            },
            ScenePrimitive {
                shape: Shape::Cylinder {
                    center_xy: [5.0, -14.0],
                    radius: 0.8,
                    z_range: [0.0, 5.5],
                },
                sigma: 8.0,
                rgb: [0.35, 0.25, 0.15],
            },
            ScenePrimitive {
                shape: Shape::Sphere {
                    center: [5.0, -14.0, 7.5],
                    radius: 3.2,
                },
                sigma: 1.0,
                rgb: [0.20, 0.45, 0.18],
            },
        ],
        sky: SkySpec::Gradient {
            zenith: [0.35, 0.55, 0.85],
            horizon: [0.75, 0.80, 0.90],
        },
        background: [0.0, 0.0, 0.0],
        edge_softness: default_softness(),
    }
}

/// Default camera bundle for [`city_block`]: one satellite crop over the
/// inner 50 m, four street-level panoramas on the roads, and a held-out
/// panorama near the crossing.
pub fn city_block_cameras(pano_width: usize, pano_height: usize) -> SupervisionCameras {
    use crate::cameras::Pose;
    use std::f64::consts::{FRAC_PI_2, TAU};
    let pano = |x: f64, y: f64, yaw_deg: f64| CameraSpec::Panorama {
        pose: Pose::level(vec3(x, y, 1.8), yaw_deg.to_radians()),
        yaw_span: TAU,
        pitch_span: FRAC_PI_2,
        width: pano_width,
        height: pano_height,
    };
    SupervisionCameras {
        satellite: CameraSpec::Orthographic {
            center: [0.0, 0.0],
            extent: 50.0,
            altitude: 60.0,
            width: 128,
            height: 128,
        },
        panoramas: vec![
            pano(0.0, -20.0, 0.0),
            pano(20.0, 0.0, -90.0),
            pano(0.0, 20.0, 180.0),
            pano(-20.0, 0.0, 90.0),
        ],
        holdout_pano: Some(pano(2.5, 2.5, 45.0)),
    }
}

/// March settings for ground-truth supervision rendering: converged to
/// better than 1e-3 rgb against sample-count doubling on the bundled
/// scenes (soft-edged primitives, rays up to ~110 m).
pub fn gt_march() -> MarchConfig {
    MarchConfig {
        n_samples: 1024,
        ..MarchConfig::default()
    }
}

/// Render ground-truth supervision for a scene: images by marching the
/// analytic field, sky masks from exact ray misses, and a relative-depth
/// pseudo-label for each satellite view obtained by passing the analytic
/// depth through a random affine (monotone) distortion.
pub fn generate_supervision(
    spec: &SceneSpec,
    cameras: &SupervisionCameras,
    seed: u64,
    march: &MarchConfig,
) -> Result<SupervisionSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SupervisionSet::default();
    let mut code = 0usize;

    {
        let cam = &cameras.satellite;
        let out = renderer::render_view(spec, cam, march, None)?;
        let rays = crate::cameras::make_rays(cam)?;
        let scale = rng.gen_range(0.5..3.0);
        let shift = rng.gen_range(0.0..10.0);
        let mut label = ScalarImage::new(rays.width, rays.height);
        for i in 0..rays.len() {
            match spec.analytic_depth(rays.origins[i], rays.directions[i]) {
                Some(t) => {
                    label.values[i] = scale * t + shift;
                    label.valid[i] = true;
                }
                None => label.valid[i] = false,
            }
        }
        set.satellites.push(SatView {
            camera: cam.clone(),
            image: out.color_image(),
            depth_label: Some(label),
            code,
        });
        code += 1;
    }

    for cam in &cameras.panoramas {
        let out = renderer::render_view(spec, cam, march, None)?;
        let rays = crate::cameras::make_rays(cam)?;
        let mut sky_mask = MaskImage::new(rays.width, rays.height, false);
        for i in 0..rays.len() {
            if spec
                .analytic_depth(rays.origins[i], rays.directions[i])
                .is_none()
            {
                sky_mask.data[i] = true;
            }
        }
        set.panoramas.push(PanoView {
            camera: cam.clone(),
            image: out.color_image(),
            sky_mask: Some(sky_mask),
            code,
        });
        code += 1;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameras::Ray;
    use crate::renderer::march_ray;

    #[test]
    fn density_rules() {
        let spec = SceneSpec {
            domain: 40.0,
            primitives: vec![
                ScenePrimitive {
                    shape: Shape::Box {
                        center: [0.0, 0.0, 2.0],
                        size: [4.0, 4.0, 4.0],
                    },
                    sigma: 2.0,
                    rgb: [1.0, 0.0, 0.0],
                },
                ScenePrimitive {
                    shape: Shape::Sphere {
                        center: [0.0, 0.0, 2.0],
                        radius: 3.0,
                    },
                    sigma: 5.0,
                    rgb: [0.0, 1.0, 0.0],
                },
            ],
            sky: SkySpec::Uniform { rgb: [0.5; 3] },
            background: [0.0; 3],
            edge_softness: 0.0,
        };
        // Above everything.
        assert_eq!(spec.analytic_density(vec3(0.0, 0.0, 15.0)), 0.0);
        // Inside only the box corner region (outside sphere radius).
        assert_eq!(spec.analytic_density(vec3(1.9, 1.9, 3.9)), 2.0);
        // Overlap region takes the max density; colors blend by density.
        assert_eq!(spec.analytic_density(vec3(0.0, 0.0, 2.0)), 5.0);
        let blend = spec.analytic_color(vec3(0.0, 0.0, 2.0));
        assert!((blend[0] - 2.0 / 7.0).abs() < 1e-12);
        assert!((blend[1] - 5.0 / 7.0).abs() < 1e-12);
        // A point inside only one primitive gets that primitive's color.
        assert_eq!(spec.analytic_color(vec3(1.9, 1.9, 3.9)), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn slab_depth_from_above() {
        let spec = SceneSpec {
            domain: 80.0,
            primitives: vec![ScenePrimitive {
                shape: Shape::Slab { z_top: 0.0 },
                sigma: 8.0,
                rgb: [0.5; 3],
            }],
            sky: SkySpec::Uniform { rgb: [0.5; 3] },
            background: [0.0; 3],
            edge_softness: 0.0,
        };
        let t = spec
            .analytic_depth(vec3(3.0, -4.0, 60.0), vec3(0.0, 0.0, -1.0))
            .unwrap();
        assert!((t - 60.0).abs() < 1e-12);
        assert!(spec
            .analytic_depth(vec3(0.0, 0.0, 5.0), vec3(0.0, 0.0, 1.0))
            .is_none());
    }

    #[test]
    fn analytic_depth_matches_dense_march() {
        // The depth oracle reports the exact hard surface, so march the
        // hard-edged field.
        let mut spec = city_block();
        spec.edge_softness = 0.0;
        spec.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let steps = 100_000;
        for _ in 0..40 {
            let origin = vec3(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(1.0..50.0),
            );
            let dir = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..0.2),
            )
            .normalized();
            if dir.length() == 0.0 {
                continue;
            }
            if spec.analytic_density(origin) > 0.0 {
                continue;
            }
            let t_max = 120.0;
            let step = t_max / steps as f64;
            let mut marched = None;
            for k in 0..steps {
                let t = (k as f64 + 0.5) * step;
                if spec.analytic_density(origin + dir * t) > 0.0 {
                    marched = Some(t);
                    break;
                }
            }
            let analytic = spec.analytic_depth(origin, dir);
            match (analytic, marched) {
                (Some(a), Some(m)) => {
                    assert!((a - m).abs() <= step, "analytic {a} vs marched {m}");
                }
                (None, None) => {}
                (Some(a), None) => {
                    // Entry beyond the march horizon is fine.
                    assert!(a > t_max - step, "analytic {a} but march missed");
                }
                (None, Some(m)) => panic!("march hit at {m} but analytic missed"),
            }
        }
    }

    #[test]
    fn supervision_sky_mask_matches_misses_and_is_deterministic() {
        let spec = city_block();
        let mut cams = city_block_cameras(64, 16);
        cams.panoramas.truncate(1);
        cams.holdout_pano = None;
        let march = MarchConfig {
            n_samples: 64,
            ..Default::default()
        };
        let a = generate_supervision(&spec, &cams, 5, &march).unwrap();
        let b = generate_supervision(&spec, &cams, 5, &march).unwrap();
        let pa = &a.panoramas[0];
        let rays = crate::cameras::make_rays(&pa.camera).unwrap();
        for i in 0..rays.len() {
            let miss = spec
                .analytic_depth(rays.origins[i], rays.directions[i])
                .is_none();
            assert_eq!(pa.sky_mask.as_ref().unwrap().data[i], miss);
        }
        for (x, y) in a.panoramas[0].image.data.iter().zip(&b.panoramas[0].image.data) {
            assert_eq!(x, y);
        }
        let la = a.satellites[0].depth_label.as_ref().unwrap();
        let lb = b.satellites[0].depth_label.as_ref().unwrap();
        assert_eq!(la.values, lb.values);
    }

    #[test]
    fn true_field_gravity_has_slack_but_not_zero_slack() {
        // Sampled directly here with a simple grid; the loss-level test
        // lives in the losses module.
        let spec = city_block();
        let canopy_bottom_ok = spec.analytic_density(vec3(5.0, -12.0, 6.5));
        assert_eq!(canopy_bottom_ok, 1.0);
        // Below the canopy, beside the trunk: genuine void.
        assert_eq!(spec.analytic_density(vec3(6.5, -14.0, 3.0)), 0.0);
    }

// temporary probe appended as test
    #[test]
    fn rendered_supervision_is_converged_in_sample_count() {
        let spec = city_block();
        let cam = CameraSpec::Orthographic {
            center: [0.0, 0.0],
            extent: 50.0,
            altitude: 60.0,
            width: 48,
            height: 48,
        };
        let base = gt_march();
        let double = MarchConfig {
            n_samples: 2 * base.n_samples,
            ..base
        };
        let a = renderer::render_view(&spec, &cam, &base, None).unwrap();
        let b = renderer::render_view(&spec, &cam, &double, None).unwrap();
        for (ca, cb) in a.rgb.iter().zip(&b.rgb) {
            for ch in 0..3 {
                assert!((ca[ch] - cb[ch]).abs() < 1e-3);
            }
        }
        let pano_cam = city_block_cameras(128, 32).panoramas[0].clone();
        let a = renderer::render_view(&spec, &pano_cam, &base, None).unwrap();
        let b = renderer::render_view(&spec, &pano_cam, &double, None).unwrap();
        for (ca, cb) in a.rgb.iter().zip(&b.rgb) {
            for ch in 0..3 {
                assert!((ca[ch] - cb[ch]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn marching_city_block_hits_ground_at_expected_depth() {
        let spec = city_block();
        let px = march_ray(
            &spec,
            Ray {
                origin: vec3(-20.0, -20.0, 60.0),
                dir: vec3(0.0, 0.0, -1.0),
            },
            &MarchConfig::default(),
            None,
        );
        assert!(px.depth_valid);
        // Ground top sits at z = 0 under this pixel.
        assert!((px.depth - 60.0).abs() < 1.0);
    }
}
