//! Supervised view bundles: images, sky masks, and relative-depth
//! pseudo-labels together with their cameras, plus the on-disk layout
//! (PNG / FG32 files referenced from a TOML manifest).

use crate::cameras::{CameraSpec, Pose};
use crate::error::{Error, Result};
use crate::img::{ColorImage, MaskImage, ScalarImage};
use crate::imgio;
use crate::math::vec3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct SatView {
    pub camera: CameraSpec,
    pub image: ColorImage,
    /// Relative depth pseudo-label; valid only up to scale and shift.
    pub depth_label: Option<ScalarImage>,
    /// Index of this view's illumination code.
    pub code: usize,
}

#[derive(Clone, Debug)]
pub struct PanoView {
    pub camera: CameraSpec,
    pub image: ColorImage,
    pub sky_mask: Option<MaskImage>,
    pub code: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SupervisionSet {
    pub satellites: Vec<SatView>,
    pub panoramas: Vec<PanoView>,
}

impl SupervisionSet {
    pub fn n_codes(&self) -> usize {
        self.satellites.len() + self.panoramas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.satellites.is_empty() || self.panoramas.is_empty() {
            return Err(Error::InvalidConfig(
                "supervision needs at least one satellite view and one panorama".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SatRecord {
    image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
    center: [f64; 2],
    extent: f64,
    altitude: f64,
}

#[derive(Serialize, Deserialize)]
struct PanoRecord {
    image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    sky_mask: Option<String>,
    position: [f64; 3],
    yaw_deg: f64,
    yaw_span_deg: f64,
    pitch_span_deg: f64,
}

#[derive(Serialize, Deserialize, Default)]
struct Manifest {
    #[serde(default)]
    satellite: Vec<SatRecord>,
    #[serde(default)]
    panorama: Vec<PanoRecord>,
}

impl SupervisionSet {
    /// Write images/masks/labels plus `manifest.toml` into `dir`.
    pub fn save_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest::default();
        for (i, sat) in self.satellites.iter().enumerate() {
            let CameraSpec::Orthographic {
                center,
                extent,
                altitude,
                ..
            } = &sat.camera
            else {
                return Err(Error::Manifest("satellite view must be orthographic".into()));
            };
            let image = format!("sat_{i:03}.png");
            imgio::save_png_rgb(&dir.join(&image), &sat.image)?;
            let depth = match &sat.depth_label {
                Some(label) => {
                    let name = format!("sat_{i:03}_depth.fg32");
                    imgio::save_fgrid(&dir.join(&name), label)?;
                    Some(name)
                }
                None => None,
            };
            manifest.satellite.push(SatRecord {
                image,
                depth,
                center: *center,
                extent: *extent,
                altitude: *altitude,
            });
        }
        for (i, pano) in self.panoramas.iter().enumerate() {
            let CameraSpec::Panorama {
                pose,
                yaw_span,
                pitch_span,
                ..
            } = &pano.camera
            else {
                return Err(Error::Manifest("panorama view must be a panorama".into()));
            };
            let image = format!("pano_{i:03}.png");
            imgio::save_png_rgb(&dir.join(&image), &pano.image)?;
            let sky = match &pano.sky_mask {
                Some(mask) => {
                    let name = format!("pano_{i:03}_sky.png");
                    imgio::save_png_mask(&dir.join(&name), mask)?;
                    Some(name)
                }
                None => None,
            };
            manifest.panorama.push(PanoRecord {
                image,
                sky_mask: sky,
                position: pose.position.to_array(),
                yaw_deg: pose.yaw.to_degrees(),
                yaw_span_deg: yaw_span.to_degrees(),
                pitch_span_deg: pitch_span.to_degrees(),
            });
        }
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| Error::Manifest(format!("serialize: {e}")))?;
        fs::write(dir.join("manifest.toml"), text).map_err(|e| Error::io(dir, e))
    }

    /// Load a supervision bundle written by [`Self::save_to_dir`].
    /// Illumination codes are assigned satellites-first in manifest order.
    pub fn load_from_dir(dir: &Path) -> Result<SupervisionSet> {
        let manifest_path = dir.join("manifest.toml");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::parse(&manifest_path, e.to_string()))?;
        let mut set = SupervisionSet::default();
        let mut code = 0usize;
        for rec in &manifest.satellite {
            let image = imgio::load_png_rgb(&dir.join(&rec.image))?;
            let depth_label = match &rec.depth {
                Some(name) => Some(imgio::load_fgrid(&dir.join(name))?),
                None => None,
            };
            if let Some(label) = &depth_label {
                if label.width != image.width || label.height != image.height {
                    return Err(Error::ShapeMismatch(format!(
                        "depth label {}x{} vs image {}x{}",
                        label.width, label.height, image.width, image.height
                    )));
                }
            }
            set.satellites.push(SatView {
                camera: CameraSpec::Orthographic {
                    center: rec.center,
                    extent: rec.extent,
                    altitude: rec.altitude,
                    width: image.width,
                    height: image.height,
                },
                image,
                depth_label,
                code,
            });
            code += 1;
        }
        for rec in &manifest.panorama {
            let image = imgio::load_png_rgb(&dir.join(&rec.image))?;
            let sky_mask = match &rec.sky_mask {
                Some(name) => Some(imgio::load_png_mask(&dir.join(name))?),
                None => None,
            };
            if let Some(mask) = &sky_mask {
                if mask.width != image.width || mask.height != image.height {
                    return Err(Error::ShapeMismatch("sky mask vs pano image".into()));
                }
            }
            set.panoramas.push(PanoView {
                camera: CameraSpec::Panorama {
                    pose: Pose::level(
                        vec3(rec.position[0], rec.position[1], rec.position[2]),
                        rec.yaw_deg.to_radians(),
                    ),
                    yaw_span: rec.yaw_span_deg.to_radians(),
                    pitch_span: rec.pitch_span_deg.to_radians(),
                    width: image.width,
                    height: image.height,
                },
                image,
                sky_mask,
                code,
            });
            code += 1;
        }
        Ok(set)
    }
}
