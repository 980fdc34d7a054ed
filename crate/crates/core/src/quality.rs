//! Reconstruction quality `Q`, its box-filtered area quality `Q'` and the
//! localization center.

use crate::error::{check_dims, Error, Result};
use crate::image::{Image, MaskPlane, Plane};

/// Bandwidth of the quality mask and side length of the all-ones kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityParams {
    /// Treated as a variance: the exponent is divided by `2 * sigma1`.
    pub sigma1: f64,
    pub kernel_size: usize,
}

impl Default for QualityParams {
    fn default() -> Self {
        Self {
            sigma1: 0.01,
            kernel_size: 5,
        }
    }
}

impl QualityParams {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::InvalidValue {
                what: "sigma1",
                reason: format!("{} must be positive", self.sigma1),
            });
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 || self.kernel_size > height.min(width) {
            return Err(Error::InvalidValue {
                what: "kernel_size",
                reason: format!("{} must be odd and within 1..={}", self.kernel_size, height.min(width)),
            });
        }
        Ok(())
    }
}

/// `Q(i,j) = exp(-s(i,j) * sum_c (x_re - x)^2 / (2 * sigma1))`.
pub fn compute_quality(x: &Image, x_re: &Image, s: &MaskPlane, p: &QualityParams) -> Result<MaskPlane> {
    check_dims(x.dims(), x_re.dims())?;
    check_dims(x.dims(), s.dims())?;
    let (h, w) = x.dims();
    let q = x
        .as_slice()
        .chunks_exact(3)
        .zip(x_re.as_slice().chunks_exact(3))
        .zip(s.as_slice())
        .map(|((a, b), &sv)| {
            let err: f64 = a.iter().zip(b).map(|(u, v)| (v - u) * (v - u)).sum();
            (-sv * err / (2.0 * p.sigma1)).exp()
        })
        .collect();
    Ok(MaskPlane::from_raw_unchecked(h, w, q))
}

/// Sum of `masked_q` over the `kernel_size`-square window centered at each
/// cell, with zeros outside the image (stride 1, SAME padding).
pub fn area_quality(masked_q: &MaskPlane, p: &QualityParams) -> Plane {
    let (h, w) = masked_q.dims();
    let r = p.kernel_size / 2;
    // separable: horizontal window sums, then vertical sums of those
    let mut rows = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let (lo, hi) = (j.saturating_sub(r), (j + r).min(w - 1));
            rows[i * w + j] = (lo..=hi).map(|c| masked_q.get(i, c)).sum();
        }
    }
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        let (lo, hi) = (i.saturating_sub(r), (i + r).min(h - 1));
        for j in 0..w {
            out[i * w + j] = (lo..=hi).map(|a| rows[a * w + j]).sum();
        }
    }
    Plane::new(h, w, out).expect("non-empty plane")
}

/// Coordinates of the maximum; ties go to the smallest row, then column.
pub fn find_center(q_area: &Plane) -> (usize, usize) {
    let w = q_area.width();
    let mut best = 0;
    for (idx, &v) in q_area.as_slice().iter().enumerate() {
        if v > q_area.as_slice()[best] {
            best = idx;
        }
    }
    (best / w, best % w)
}
