#![allow(dead_code)]

use irgs::{
    backward, objective, Architecture, ButterworthParams, Image, LossWeights, PipelineConfig, QualityParams, ReconMode,
    ReconModel, SceneSpec, SlotDecomposition,
};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of vanishing gradients.
pub const REL_FLOOR: f64 = 1e-6;

/// A 6x6 scene, a tiny model and a two-slot configuration.
pub fn small_setup(mode: ReconMode, through_q: bool, seed: u64) -> (ReconModel, Image, PipelineConfig) {
    let spec = SceneSpec {
        height: 6,
        width: 6,
        min_objects: 1,
        max_objects: 1,
        min_size: 2,
        max_size: 3,
        seed,
        ..SceneSpec::default()
    };
    let x = irgs::synth::generate_one(&spec, 0).unwrap().image;
    let arch = Architecture {
        height: 6,
        width: 6,
        hidden: 5,
        latent_dim: 3,
    };
    let model = ReconModel::new(arch, mode, seed + 100).unwrap();
    let cfg = PipelineConfig {
        slots: 2,
        quality: QualityParams {
            sigma1: 0.2,
            kernel_size: 3,
        },
        butterworth: ButterworthParams { n: 2, f: 2.0 },
        loss: LossWeights {
            beta: 0.3,
            gamma: if mode == ReconMode::Vae { 0.5 } else { 0.0 },
            zeta: 0.1,
            grad_through_q: through_q,
            mask_weighted_recon: true,
        },
        ..PipelineConfig::default()
    };
    (model, x, cfg)
}

/// Worst relative error between `backward` and central differences of `objective`.
pub fn fd_check(model: &ReconModel, x: &Image, d: &SlotDecomposition, w: &LossWeights) -> f64 {
    let analytic = backward(model, x, d, w).unwrap();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..model.num_params() {
        let base = model.params()[i];
        probe.params_mut()[i] = base + FD_STEP;
        let up = objective(&probe, x, d, w).unwrap().total;
        probe.params_mut()[i] = base - FD_STEP;
        let down = objective(&probe, x, d, w).unwrap().total;
        probe.params_mut()[i] = base;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.0[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    worst
}
