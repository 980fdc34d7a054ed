//! Butterworth attention around a localization center.

use crate::error::{Error, Result};
use crate::image::MaskPlane;

/// Order `n` and cutoff radius `f` (pixels) of the Butterworth attention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterworthParams {
    pub n: u32,
    pub f: f64,
}

impl Default for ButterworthParams {
    fn default() -> Self {
        Self { n: 2, f: 4.0 }
    }
}

impl ButterworthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidValue {
                what: "butterworth order",
                reason: "n must be at least 1".into(),
            });
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::InvalidValue {
                what: "butterworth cutoff",
                reason: format!("{} must be positive", self.f),
            });
        }
        Ok(())
    }
}

/// `1 / sqrt(1 + (r/f)^(2n))`.
pub fn butterworth_1d(r: f64, p: &ButterworthParams) -> f64 {
    let ratio = (r / p.f).powi(2 * p.n as i32);
    1.0 / (1.0 + ratio).sqrt()
}

/// Separable attention `G(i,j) = B(|i - i_c|) * B(|j - j_c|)`.
pub fn butterworth_mask(
    height: usize,
    width: usize,
    center: (usize, usize),
    p: &ButterworthParams,
) -> Result<MaskPlane> {
    let (ci, cj) = center;
    if ci >= height || cj >= width {
        return Err(Error::OutOfBounds {
            row: ci,
            col: cj,
            height,
            width,
        });
    }
    let rows: Vec<f64> = (0..height).map(|i| butterworth_1d(i.abs_diff(ci) as f64, p)).collect();
    let cols: Vec<f64> = (0..width).map(|j| butterworth_1d(j.abs_diff(cj) as f64, p)).collect();
    let data = rows.iter().flat_map(|r| cols.iter().map(move |c| r * c)).collect();
    Ok(MaskPlane::from_raw_unchecked(height, width, data))
}

/// Binary weights: 1 where `G > 0.5` (strict), else 0.
pub fn hard_weights(g: &MaskPlane) -> MaskPlane {
    let data = g.as_slice().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    MaskPlane::from_raw_unchecked(g.height(), g.width(), data)
}
