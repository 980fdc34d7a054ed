//! Unsupervised scene decomposition guided by reconstruction quality.
//!
//! An image is explained one slot at a time. The first slot reconstructs the
//! whole scene and keeps whatever it reconstructs well as background. Each
//! later slot reconstructs the still-unexplained part, finds the region that
//! is reconstructed best, and cuts the object boundary out of that region
//! with a small two-component Gaussian mixture over color and position.
//!
//! ```
//! use irgs::{Architecture, PipelineConfig, ReconMode, ReconModel, SceneSpec};
//!
//! let scene = &irgs::synth::generate(&SceneSpec { height: 16, width: 16, max_size: 5, min_size: 3, ..SceneSpec::default() }, 1)?[0];
//! let model = ReconModel::new(Architecture { height: 16, width: 16, hidden: 8, latent_dim: 4 }, ReconMode::Vae, 0)?;
//! let cfg = PipelineConfig { slots: 3, ..PipelineConfig::default() };
//! let d = irgs::segment(&model, &scene.image, &cfg, 0)?;
//! assert_eq!(d.len(), 3);
//! # Ok::<(), irgs::Error>(())
//! ```

pub mod error;
pub mod image;
pub mod local_gmm;
pub mod localization;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod quality;
pub mod recon;
pub mod synth;

pub use error::{Error, Result};
pub use image::{build_features, FeatureGrid, Image, MaskPlane, PixelFeature, Plane};
pub use local_gmm::{em_step, init_gmm, run_lgmm, GmmParams, GmmState};
pub use localization::{butterworth_1d, butterworth_mask, hard_weights, ButterworthParams};
pub use metrics::{ami, ari, ContingencyTable};
pub use optim::{Optimizer, Trainer};
pub use pipeline::{
    adjust_background, decompose, hard_assignment, segment, train_epoch, Ablation, MaskRecursion, PipelineConfig, Slot,
    SlotDecomposition,
};
pub use quality::{area_quality, compute_quality, find_center, QualityParams};
pub use recon::{
    backward, kl_term, loss, objective, sgd_step, Architecture, Gradients, LatentStats, LossBreakdown, LossWeights,
    ReconMode, ReconModel, Reconstructor,
};
pub use synth::{LabeledScene, SceneSpec, Shape};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quality.md")]
    mod quality {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/local-gmm.md")]
    mod local_gmm {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
