//! Value types shared by every stage: RGB images, real-valued planes and
//! the 5-d pixel features the local GMM clusters on.
//!
//! Indexing is row-major with `(0, 0)` at the top-left corner.

use crate::error::{check_dims, Error, Result};

/// An `H×W×3` image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB data (`data[(i * W + j) * 3 + c]`).
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue {
                what: "image size",
                reason: format!("{height}x{width} has no pixels"),
            });
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidValue {
                what: "image data",
                reason: format!("expected {} values, got {}", height * width * 3, data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue {
                what: "channel value",
                reason: format!("{v} is outside [0, 1]"),
            });
        }
        Ok(Self { height, width, data })
    }

    /// A constant-color image.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Builds an image pixel by pixel; values are clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for i in 0..height {
            for j in 0..width {
                data.extend(f(i, j).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f64; 3] {
        let o = (i * self.width + j) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Interleaved RGB values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A real-valued `H×W` plane without range restrictions (area-quality output).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidValue {
                what: "plane",
                reason: format!("{height}x{width} with {} values", data.len()),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// An `H×W` plane with every value in `[0, 1]`.
///
/// Holds the remaining mask `s`, component masks `m`, the quality mask `Q`,
/// the location mask `L`, Butterworth attention `G` and the hard weights `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskPlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidValue {
                what: "mask plane",
                reason: format!("{height}x{width} with {} values", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue {
                what: "mask value",
                reason: format!("{v} is outside [0, 1]"),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Builds a mask pixel by pixel, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j).clamp(0.0, 1.0));
            }
        }
        Self::new(height, width, data)
    }

    /// Caller guarantees every value already lies in `[0, 1]`.
    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)), "mask value out of range");
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise product; both planes must share dimensions.
    pub fn mul(&self, other: &MaskPlane) -> Result<MaskPlane> {
        check_dims(self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self::from_raw_unchecked(self.height, self.width, data))
    }
}

/// The 5-d clustering feature of one pixel: RGB plus normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFeature {
    pub rgb: [f64; 3],
    pub row_norm: f64,
    pub col_norm: f64,
}

impl PixelFeature {
    pub fn to_array(&self) -> [f64; 5] {
        [self.rgb[0], self.rgb[1], self.rgb[2], self.row_norm, self.col_norm]
    }
}

/// Row-major grid of feature vectors, one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    features: Vec<[f64; 5]>,
}

impl FeatureGrid {
    /// Wraps arbitrary 5-d points laid out row-major on an `H×W` grid.
    pub fn from_points(height: usize, width: usize, features: Vec<[f64; 5]>) -> Result<Self> {
        if height == 0 || width == 0 || features.len() != height * width {
            return Err(Error::InvalidValue {
                what: "feature grid",
                reason: format!("{height}x{width} with {} points", features.len()),
            });
        }
        Ok(Self {
            height,
            width,
            features,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> PixelFeature {
        let f = self.features[i * self.width + j];
        PixelFeature {
            rgb: [f[0], f[1], f[2]],
            row_norm: f[3],
            col_norm: f[4],
        }
    }

    pub fn as_slice(&self) -> &[[f64; 5]] {
        &self.features
    }
}

fn normalized(index: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        index as f64 / (extent - 1) as f64
    }
}

/// Maps every pixel to `(r, g, b, i/(H-1), j/(W-1))`.
pub fn build_features(img: &Image) -> FeatureGrid {
    let (h, w) = img.dims();
    let mut features = Vec::with_capacity(h * w);
    for i in 0..h {
        let row = normalized(i, h);
        for j in 0..w {
            let [r, g, b] = img.pixel(i, j);
            features.push([r, g, b, row, normalized(j, w)]);
        }
    }
    FeatureGrid {
        height: h,
        width: w,
        features,
    }
}
