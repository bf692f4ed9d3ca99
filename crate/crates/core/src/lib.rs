//! Tri-plane volumetric scene toolkit: fields fitted by gradient descent
//! from satellite and street-level views, rendered through satellite,
//! perspective, and panoramic cameras with a spherical sky model, exported
//! as meshes, and evaluated against prepared digital surface models.

pub mod autodiff;
pub mod cameras;
pub mod checkpoint;
pub mod error;
pub mod field;
pub mod fit;
pub mod geodata;
pub mod img;
pub mod losses;
pub mod math;
pub mod metrics;
mod mc_tables;
pub mod meshing;
pub mod imgio;
pub mod renderer;
pub mod supervision;
pub mod synth;

pub use error::{Error, Result};
