//! Weighted two-component GMM that refines a Butterworth window into a
//! location mask.
//!
//! Features are `(r, g, b, row, col)` vectors. Each component has a mean and
//! a per-coordinate (diagonal) variance; the mixing weights are fixed and
//! equal, so a responsibility is the ratio of one component's density to the
//! sum of both. Pixels whose weight is zero take no part in either step and
//! keep responsibility `0.5`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::image::{build_features, FeatureGrid, Image, MaskPlane};
use crate::localization::{butterworth_mask, hard_weights, ButterworthParams};

pub const FEATURE_DIM: usize = 5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    /// Number of EM iterations.
    pub em_iters: usize,
    pub variance_floor: f64,
    /// Seeds the random initial mean of the second component.
    pub seed: u64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            em_iters: 20,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.em_iters == 0 {
            return Err(Error::InvalidValue {
                what: "em_iters",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::InvalidValue {
                what: "variance_floor",
                reason: format!("{} must be positive", self.variance_floor),
            });
        }
        Ok(())
    }
}

/// Means, diagonal variances and per-pixel responsibilities of both components.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    pub means: [[f64; FEATURE_DIM]; 2],
    pub variances: [[f64; FEATURE_DIM]; 2],
    /// Row-major, `[z_1, z_2]` per pixel.
    pub responsibilities: Vec<[f64; 2]>,
    height: usize,
    width: usize,
}

impl GmmState {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Responsibility of component 2 (the object component) at `(i, j)`.
    pub fn object_responsibility(&self, i: usize, j: usize) -> f64 {
        self.responsibilities[i * self.width + j][1]
    }
}

/// `z = 0.5` everywhere, `mu_1 = 0`, `mu_2 ~ Unif(0,1)^5`, unit variances.
pub fn init_gmm(features: &FeatureGrid, seed: u64) -> GmmState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu2 = [0.0; FEATURE_DIM];
    for v in mu2.iter_mut() {
        *v = rng.random::<f64>();
    }
    GmmState {
        means: [[0.0; FEATURE_DIM], mu2],
        variances: [[1.0; FEATURE_DIM]; 2],
        responsibilities: vec![[0.5, 0.5]; features.len()],
        height: features.height(),
        width: features.width(),
    }
}

fn log_density(y: &[f64; FEATURE_DIM], mean: &[f64; FEATURE_DIM], var: &[f64; FEATURE_DIM]) -> f64 {
    let mut acc = 0.0;
    for d in 0..FEATURE_DIM {
        let diff = y[d] - mean[d];
        acc += LN_2PI + var[d].ln() + diff * diff / var[d];
    }
    -0.5 * acc
}

fn active_pixels(weights: &MaskPlane) -> Result<Vec<usize>> {
    let active: Vec<usize> = weights
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, _)| k)
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateWindow("all weights are zero".into()));
    }
    Ok(active)
}

/// Recomputes responsibilities from the current means and variances.
pub fn e_step(state: &GmmState, features: &FeatureGrid, weights: &MaskPlane) -> Result<GmmState> {
    check_dims(features.dims(), weights.dims())?;
    check_dims(features.dims(), state.dims())?;
    let active = active_pixels(weights)?;
    let mut next = state.clone();
    next.responsibilities.iter_mut().for_each(|z| *z = [0.5, 0.5]);
    let ys = features.as_slice();
    for &k in &active {
        let l1 = log_density(&ys[k], &state.means[0], &state.variances[0]);
        let l2 = log_density(&ys[k], &state.means[1], &state.variances[1]);
        let top = l1.max(l2);
        let (e1, e2) = ((l1 - top).exp(), (l2 - top).exp());
        let total = e1 + e2;
        next.responsibilities[k] = [e1 / total, e2 / total];
    }
    Ok(next)
}

/// First responsibilities, from the initial means' color coordinates with
/// unit variance. Position is left out so a window of one color keeps
/// `z = 0.5` while windows with two colors start out split by color.
pub fn seed_responsibilities(state: &GmmState, features: &FeatureGrid, weights: &MaskPlane) -> Result<GmmState> {
    check_dims(features.dims(), weights.dims())?;
    check_dims(features.dims(), state.dims())?;
    let active = active_pixels(weights)?;
    let mut next = state.clone();
    next.responsibilities.iter_mut().for_each(|z| *z = [0.5, 0.5]);
    let ys = features.as_slice();
    for &k in &active {
        let sq = |mean: &[f64; FEATURE_DIM]| (0..3).map(|d| (ys[k][d] - mean[d]).powi(2)).sum::<f64>();
        let (l1, l2) = (-0.5 * sq(&state.means[0]), -0.5 * sq(&state.means[1]));
        let top = l1.max(l2);
        let (e1, e2) = ((l1 - top).exp(), (l2 - top).exp());
        next.responsibilities[k] = [e1 / (e1 + e2), e2 / (e1 + e2)];
    }
    Ok(next)
}

/// One iteration: weighted means, floored per-coordinate variances, then
/// responsibilities from the updated parameters.
pub fn em_step(state: &GmmState, features: &FeatureGrid, weights: &MaskPlane, params: &GmmParams) -> Result<GmmState> {
    check_dims(features.dims(), weights.dims())?;
    check_dims(features.dims(), state.dims())?;
    let active = active_pixels(weights)?;
    let ys = features.as_slice();
    let wv = weights.as_slice();
    let mut next = state.clone();
    for c in 0..2 {
        let mut mass = 0.0;
        let mut sum = [0.0; FEATURE_DIM];
        for &k in &active {
            let a = state.responsibilities[k][c] * wv[k];
            mass += a;
            for d in 0..FEATURE_DIM {
                sum[d] += a * ys[k][d];
            }
        }
        if !(mass > 0.0) {
            return Err(Error::DegenerateWindow(format!(
                "component {} has no responsibility mass",
                c + 1
            )));
        }
        let mean = sum.map(|s| s / mass);
        let mut second = [0.0; FEATURE_DIM];
        for &k in &active {
            let a = state.responsibilities[k][c] * wv[k];
            for d in 0..FEATURE_DIM {
                let diff = ys[k][d] - mean[d];
                second[d] += a * diff * diff;
            }
        }
        next.means[c] = mean;
        next.variances[c] = second.map(|s| (s / mass).max(params.variance_floor));
    }
    e_step(&next, features, weights)
}

/// `sum_{w>0} w * ln(0.5 K_1 + 0.5 K_2)` under the current parameters.
pub fn log_likelihood(state: &GmmState, features: &FeatureGrid, weights: &MaskPlane) -> f64 {
    let ys = features.as_slice();
    weights
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, &w)| {
            let l1 = log_density(&ys[k], &state.means[0], &state.variances[0]);
            let l2 = log_density(&ys[k], &state.means[1], &state.variances[1]);
            let top = l1.max(l2);
            w * (top + (0.5 * (l1 - top).exp() + 0.5 * (l2 - top).exp()).ln())
        })
        .sum()
}

/// Output of [`run_lgmm`]: the location mask and the fitted mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGmm {
    pub location: MaskPlane,
    pub state: GmmState,
}

/// Location mask `L` around `center`: the object-component responsibility
/// inside the hard-thresholded Butterworth window, zero outside it.
pub fn run_lgmm(x: &Image, center: (usize, usize), butter: &ButterworthParams, gmm: &GmmParams) -> Result<LocalGmm> {
    butter.validate()?;
    gmm.validate()?;
    let (h, w) = x.dims();
    let weights = hard_weights(&butterworth_mask(h, w, center, butter)?);
    let features = build_features(x);
    let init = init_gmm(&features, gmm.seed);
    // with z = 0.5 everywhere the first M-step would give both components the
    // same mean, so responsibilities are first derived from the initial means
    let mut state = seed_responsibilities(&init, &features, &weights)?;
    for _ in 0..gmm.em_iters {
        state = em_step(&state, &features, &weights, gmm)?;
    }
    let location = weights
        .as_slice()
        .iter()
        .zip(&state.responsibilities)
        .map(|(&wt, z)| if wt > 0.0 { z[1] } else { 0.0 })
        .collect();
    Ok(LocalGmm {
        location: MaskPlane::from_raw_unchecked(h, w, location),
        state,
    })
}
