//! Fetal head biometry from ultrasound-like images: ellipse geometry, mask
//! processing, annotation extraction, a small segmentation network,
//! synthetic phantoms and agreement statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod annotation;
pub mod geometry;
pub mod image;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod segnet;
pub mod study;

use thiserror::Error;

pub use annotation::AnnotationError;
pub use geometry::{Biometrics, BpdConvention, ConicCoefficients, Ellipse, GeometryError};
pub use image::{GrayImage, ImageError, RgbImage, Sidecar};
pub use phantom::{PhantomError, PhantomParams};
pub use raster::{Contour, Mask, RasterError};
pub use segnet::{ArchitectureConfig, NetworkParams, SegnetError, TrainConfig};
pub use study::{AgreementReport, StudyError, StudyRecord};

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Segnet(#[from] SegnetError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Study(#[from] StudyError),
}

impl Error {
    /// Name of the underlying error variant, e.g. `EmptyMask`.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Geometry(e) => e.name(),
            Self::Image(e) => e.name(),
            Self::Raster(e) => e.name(),
            Self::Annotation(e) => e.name(),
            Self::Segnet(e) => e.name(),
            Self::Phantom(e) => e.name(),
            Self::Study(e) => e.name(),
        }
    }
}
