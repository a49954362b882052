//! Line-image preprocessing: illumination compensation, Sauvola binarization,
//! deslanting and size normalization.

mod config;
mod deslant;
mod illumination;
mod image;
mod normalize;
mod sauvola;

pub use config::PreprocConfig;
pub use deslant::{continuity_score, deslant, foreground_shape, shear};
pub use illumination::illumination_compensate;
pub use image::{BinaryImage, GrayImage};
pub use normalize::{fit, normalize_size, resize, Placement};
pub use sauvola::{sauvola_binarize, sauvola_threshold};

use crate::error::Result;
use crate::nn::Tensor;

/// Every intermediate image of [`preprocess`].
#[derive(Clone, Debug, PartialEq)]
pub struct Stages {
    pub illuminated: GrayImage,
    pub binary: BinaryImage,
    pub deslanted: BinaryImage,
    pub shear_angle: f64,
}

impl Stages {
    /// Cleaned line as a black-on-white grayscale image.
    pub fn cleaned(&self) -> GrayImage {
        self.deslanted.to_gray()
    }
}

/// Illumination compensation, binarization and deslanting.
pub fn preprocess_stages(img: &GrayImage, cfg: &PreprocConfig) -> Result<Stages> {
    let illuminated = illumination_compensate(img)?;
    let binary = sauvola_binarize(&illuminated, cfg)?;
    let (deslanted, shear_angle) = deslant(&binary, cfg)?;
    Ok(Stages {
        illuminated,
        binary,
        deslanted,
        shear_angle,
    })
}

/// Full pipeline from a raw scan to the `[target_h, target_w, 1]` network input.
pub fn preprocess(img: &GrayImage, cfg: &PreprocConfig) -> Result<Tensor> {
    normalize_size(&preprocess_stages(img, cfg)?.cleaned(), cfg)
}
