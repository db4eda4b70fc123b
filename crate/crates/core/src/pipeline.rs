//! The measurement chain: segmentation mask → contour → ellipse → HC, BPD.

use serde::{Deserialize, Serialize};

use crate::geometry::{fit_ellipse, measure_with, Biometrics, BpdConvention, Ellipse};
use crate::image::GrayImage;
use crate::raster::{boundary_edge_points, extract_contour, Contour, Mask};
use crate::segnet::{predict, NetworkParams, Prediction};
use crate::Error;

/// Ellipse fitted to the outline of the mask's largest component.
pub fn fit_mask(mask: &Mask) -> Result<(Ellipse, Contour), Error> {
    let contour = extract_contour(mask)?;
    let ellipse = fit_ellipse(&boundary_edge_points(mask, &contour))?;
    Ok((ellipse, contour))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub ellipse: Ellipse,
    pub biometrics: Biometrics,
    pub contour_points: usize,
}

pub fn measure_mask(mask: &Mask, s_xy: f64, convention: BpdConvention) -> Result<Measurement, Error> {
    let (ellipse, contour) = fit_mask(mask)?;
    let biometrics = measure_with(&ellipse, s_xy, convention)?;
    Ok(Measurement { ellipse, biometrics, contour_points: contour.len() })
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub prediction: Prediction,
    pub measurement: Measurement,
}

/// Segments `img` and measures the head in it, using the image's pixel
/// size.
pub fn infer_image(params: &NetworkParams, img: &GrayImage, convention: BpdConvention) -> Result<Inference, Error> {
    let prediction = predict(params, img)?;
    let measurement = measure_mask(&prediction.mask, img.s_xy(), convention)?;
    Ok(Inference { prediction, measurement })
}
