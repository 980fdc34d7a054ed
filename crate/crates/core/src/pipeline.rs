//! Slot-by-slot decomposition: reconstruct what is still unexplained, score
//! the reconstruction, localize the best-explained region, refine it with the
//! local GMM and peel it off the remaining mask.

use crate::error::{check_dims, Error, Result};
use crate::image::{Image, MaskPlane};
use crate::local_gmm::{run_lgmm, GmmParams, FEATURE_DIM};
use crate::localization::ButterworthParams;
use crate::optim::{Optimizer, Trainer};
use crate::quality::{area_quality, compute_quality, find_center, QualityParams};
use crate::recon::{LatentStats, LossWeights, ReconModel, Reconstructor};

/// Which of the two masks take part in the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Location mask removed: `L = 1` for every slot.
    QOnly,
    /// Quality mask removed: `Q = 1` for every slot.
    LOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Number of slots, background included.
    pub slots: usize,
    pub quality: QualityParams,
    pub butterworth: ButterworthParams,
    pub gmm: GmmParams,
    pub loss: LossWeights,
    pub ablation: Ablation,
    /// Replace the background mask by the complement of the object masks.
    pub adjust_background: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            slots: 4,
            quality: QualityParams::default(),
            butterworth: ButterworthParams::default(),
            gmm: GmmParams::default(),
            loss: LossWeights::default(),
            ablation: Ablation::Full,
            adjust_background: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::InvalidValue {
                what: "slots",
                reason: format!("{} < 2", self.slots),
            });
        }
        self.quality.validate(height, width)?;
        self.butterworth.validate()?;
        self.gmm.validate()?;
        self.loss.validate()
    }
}

/// One decomposition step.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Component mask `m`.
    pub mask: MaskPlane,
    pub recon: Image,
    pub latent: LatentStats,
    /// Localization center, absent for the background slot.
    pub center: Option<(usize, usize)>,
    /// Fitted means of both GMM components, absent for the background slot.
    pub gmm_means: Option<[[f64; FEATURE_DIM]; 2]>,
    pub quality: MaskPlane,
    pub location: MaskPlane,
    /// Remaining mask before this slot, `s^(k-1)`.
    pub remaining_before: MaskPlane,
}

impl Slot {
    /// Normalized `(row, col)` of the object component's coordinate mean.
    pub fn object_location(&self) -> Option<(f64, f64)> {
        self.gmm_means.map(|m| (m[1][3], m[1][4]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecomposition {
    pub slots: Vec<Slot>,
    /// `s^(K)`.
    pub final_remaining: MaskPlane,
    /// Quality bandwidth the masks were built with.
    pub sigma1: f64,
    /// True when `Q` was pinned to one rather than computed from the reconstruction.
    pub quality_fixed: bool,
    pub background_adjusted: bool,
    pub warnings: Vec<String>,
}

impl SlotDecomposition {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.final_remaining.dims()
    }
}

/// The remaining/component mask bookkeeping on its own:
/// `m = s Q L`, `s <- s (1 - Q L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecursion {
    remaining: MaskPlane,
}

impl MaskRecursion {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            remaining: MaskPlane::ones(height, width),
        }
    }

    pub fn remaining(&self) -> &MaskPlane {
        &self.remaining
    }

    /// Applies one slot and returns its component mask.
    pub fn step(&mut self, quality: &MaskPlane, location: &MaskPlane) -> Result<MaskPlane> {
        check_dims(self.remaining.dims(), quality.dims())?;
        check_dims(self.remaining.dims(), location.dims())?;
        let (h, w) = self.remaining.dims();
        let mut mask = Vec::with_capacity(h * w);
        let mut next = Vec::with_capacity(h * w);
        for ((s, q), l) in self
            .remaining
            .as_slice()
            .iter()
            .zip(quality.as_slice())
            .zip(location.as_slice())
        {
            let ql = q * l;
            mask.push(s * ql);
            next.push(s * (1.0 - ql));
        }
        self.remaining = MaskPlane::from_raw_unchecked(h, w, next);
        Ok(MaskPlane::from_raw_unchecked(h, w, mask))
    }
}

/// SplitMix64 finalizer, used to derive independent per-slot seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs all `cfg.slots` steps on `x`. Slot 1 is the background and uses no
/// location mask. The background adjustment is not applied here.
pub fn decompose<R: Reconstructor + ?Sized>(
    model: &R,
    x: &Image,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SlotDecomposition> {
    let (h, w) = x.dims();
    cfg.validate(h, w)?;
    let mut recursion = MaskRecursion::new(h, w);
    let mut slots = Vec::with_capacity(cfg.slots);
    let mut warnings = Vec::new();
    for k in 0..cfg.slots {
        let s_prev = recursion.remaining().clone();
        let (recon, latent) = model.reconstruct(x, &s_prev, mix_seed(seed, 2 * k as u64))?;
        check_dims(x.dims(), recon.dims())?;
        let quality = match cfg.ablation {
            Ablation::LOnly => MaskPlane::ones(h, w),
            _ => compute_quality(x, &recon, &s_prev, &cfg.quality)?,
        };
        let (location, center, gmm_means) = if k == 0 || cfg.ablation == Ablation::QOnly {
            (MaskPlane::ones(h, w), None, None)
        } else {
            let q_area = area_quality(&s_prev.mul(&quality)?, &cfg.quality);
            let center = find_center(&q_area);
            let gmm = GmmParams {
                seed: mix_seed(seed ^ cfg.gmm.seed, 2 * k as u64 + 1),
                ..cfg.gmm
            };
            match run_lgmm(x, center, &cfg.butterworth, &gmm) {
                Ok(out) => (out.location, Some(center), Some(out.state.means)),
                Err(e @ Error::DegenerateWindow(_)) => {
                    warnings.push(format!("slot {}: {e}; mask left empty", k + 1));
                    (MaskPlane::zeros(h, w), Some(center), None)
                }
                Err(e) => return Err(e),
            }
        };
        let mask = recursion.step(&quality, &location)?;
        slots.push(Slot {
            mask,
            recon,
            latent,
            center,
            gmm_means,
            quality,
            location,
            remaining_before: s_prev,
        });
    }
    Ok(SlotDecomposition {
        slots,
        final_remaining: recursion.remaining().clone(),
        sigma1: cfg.quality.sigma1,
        quality_fixed: cfg.ablation == Ablation::LOnly,
        background_adjusted: false,
        warnings,
    })
}

/// Replaces the background mask by `1 - sum_{k>=2} m_k`, clamped to `[0, 1]`.
pub fn adjust_background(d: &SlotDecomposition) -> SlotDecomposition {
    let mut out = d.clone();
    let (h, w) = d.dims();
    let data = (0..h * w)
        .map(|p| {
            let objects: f64 = d.slots[1..].iter().map(|s| s.mask.as_slice()[p]).sum();
            (1.0 - objects).clamp(0.0, 1.0)
        })
        .collect();
    out.slots[0].mask = MaskPlane::from_raw_unchecked(h, w, data);
    out.background_adjusted = true;
    out
}

/// Per-pixel slot label (1-based) of the largest mask; ties go to the lower slot.
pub fn hard_assignment(d: &SlotDecomposition) -> Vec<usize> {
    let (h, w) = d.dims();
    (0..h * w)
        .map(|p| {
            let mut best = 0;
            for (k, s) in d.slots.iter().enumerate() {
                if s.mask.as_slice()[p] > d.slots[best].mask.as_slice()[p] {
                    best = k;
                }
            }
            best + 1
        })
        .collect()
}

/// Decomposition followed by the background adjustment when enabled.
pub fn segment<R: Reconstructor + ?Sized>(
    model: &R,
    x: &Image,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SlotDecomposition> {
    let d = decompose(model, x, cfg, seed)?;
    Ok(if cfg.adjust_background {
        adjust_background(&d)
    } else {
        d
    })
}

/// One seeded-shuffled pass of per-image SGD. Returns the updated model and
/// the mean loss.
pub fn train_epoch(
    model: &ReconModel,
    dataset: &[Image],
    cfg: &PipelineConfig,
    lr: f64,
    seed: u64,
) -> Result<(ReconModel, f64)> {
    let mut trainer = Trainer::new(model.clone(), Optimizer::Sgd);
    let mean = trainer.epoch(dataset, cfg, lr, seed)?;
    Ok((trainer.into_model(), mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns the input unchanged.
    struct Oracle;

    impl Reconstructor for Oracle {
        fn reconstruct(&self, x: &Image, _s: &MaskPlane, _seed: u64) -> Result<(Image, LatentStats)> {
            Ok((
                x.clone(),
                LatentStats {
                    mean: vec![],
                    log_var: None,
                    noise: None,
                },
            ))
        }
    }

    /// Returns the color farthest from the input in every channel.
    struct Opposite;

    impl Reconstructor for Opposite {
        fn reconstruct(&self, x: &Image, _s: &MaskPlane, _seed: u64) -> Result<(Image, LatentStats)> {
            let img = Image::from_fn(x.height(), x.width(), |i, j| {
                x.pixel(i, j).map(|v| if v < 0.5 { 1.0 } else { 0.0 })
            })?;
            Ok((
                img,
                LatentStats {
                    mean: vec![],
                    log_var: None,
                    noise: None,
                },
            ))
        }
    }

    fn scene() -> Image {
        Image::from_fn(8, 8, |i, j| {
            if (2..5).contains(&i) && (3..6).contains(&j) {
                [0.9, 0.1, 0.1]
            } else {
                [0.1, 0.2, 0.7]
            }
        })
        .unwrap()
    }

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            slots: 3,
            quality: QualityParams {
                sigma1: 1e-6,
                kernel_size: 3,
            },
            butterworth: ButterworthParams { n: 2, f: 2.5 },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn perfect_first_slot_absorbs_everything() {
        let d = decompose(&Oracle, &scene(), &cfg(), 1).unwrap();
        assert!(d.slots[0].mask.as_slice().iter().all(|&v| v == 1.0));
        assert!(d.final_remaining.as_slice().iter().all(|&v| v == 0.0));
        for s in &d.slots[1..] {
            assert!(s.mask.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(d.slots[0].center.is_none() && d.slots[0].gmm_means.is_none());
        assert!(d.slots[1].center.is_some());
    }

    #[test]
    fn zero_quality_leaves_everything_unexplained() {
        let d = decompose(&Opposite, &scene(), &cfg(), 1).unwrap();
        for s in &d.slots {
            assert!(s.mask.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(d.final_remaining.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn background_complement() {
        let mut d = decompose(&Opposite, &scene(), &PipelineConfig { slots: 3, ..cfg() }, 1).unwrap();
        d.slots[1].mask = MaskPlane::filled(8, 8, 0.3).unwrap();
        d.slots[2].mask = MaskPlane::filled(8, 8, 0.2).unwrap();
        let a = adjust_background(&d);
        assert!(a.slots[0].mask.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        d.slots[1].mask = MaskPlane::filled(8, 8, 0.7).unwrap();
        d.slots[2].mask = MaskPlane::filled(8, 8, 0.5).unwrap();
        assert!(adjust_background(&d).slots[0].mask.as_slice().iter().all(|&v| v == 0.0));
        d.slots[1].mask = MaskPlane::zeros(8, 8);
        d.slots[2].mask = MaskPlane::zeros(8, 8);
        assert!(adjust_background(&d).slots[0].mask.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn assignment_tie_breaks_to_lower_slot() {
        let mut d = decompose(&Opposite, &scene(), &cfg(), 1).unwrap();
        let set = |d: &mut SlotDecomposition, vals: [f64; 3]| {
            for (k, v) in vals.iter().enumerate() {
                d.slots[k].mask = MaskPlane::filled(8, 8, *v).unwrap();
            }
        };
        set(&mut d, [1.0, 0.0, 0.0]);
        assert!(hard_assignment(&d).iter().all(|&l| l == 1));
        set(&mut d, [0.2, 0.5, 0.3]);
        assert!(hard_assignment(&d).iter().all(|&l| l == 2));
        set(&mut d, [0.4, 0.4, 0.2]);
        assert!(hard_assignment(&d).iter().all(|&l| l == 1));
    }

    #[test]
    fn q_only_skips_localization() {
        let d = decompose(
            &Opposite,
            &scene(),
            &PipelineConfig {
                ablation: Ablation::QOnly,
                ..cfg()
            },
            1,
        )
        .unwrap();
        assert!(d.slots.iter().all(|s| s.center.is_none()));
        let d = decompose(
            &Opposite,
            &scene(),
            &PipelineConfig {
                ablation: Ablation::LOnly,
                ..cfg()
            },
            1,
        )
        .unwrap();
        assert!(d.quality_fixed);
        assert!(d.slots[0].mask.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_single_slot() {
        assert!(decompose(&Oracle, &scene(), &PipelineConfig { slots: 1, ..cfg() }, 0).is_err());
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(0, 0));
    }
}
