//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use irgs::{
    Ablation, Architecture, ButterworthParams, GmmParams, LossWeights, Optimizer, PipelineConfig, QualityParams,
    ReconMode, SceneSpec, Shape,
};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Every tunable of a run. Field names double as config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub slots: usize,
    pub ablation: Ablation,
    pub adjust_background: bool,
    pub sigma1: f64,
    pub kernel_size: usize,
    pub butterworth_n: u32,
    pub butterworth_f: f64,
    pub em_iters: usize,
    pub variance_floor: f64,
    pub gmm_seed: u64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub grad_through_q: bool,
    pub mask_weighted_recon: bool,
    pub mode: ReconMode,
    pub hidden: usize,
    pub latent_dim: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<Shape>,
    pub min_size: usize,
    pub max_size: usize,
    pub color_delta: f64,
    pub allow_occlusion: bool,
    pub data: Option<String>,
    pub out: Option<String>,
    pub checkpoint: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let s = SceneSpec::default();
        Self {
            slots: p.slots,
            ablation: p.ablation,
            adjust_background: p.adjust_background,
            sigma1: p.quality.sigma1,
            kernel_size: p.quality.kernel_size,
            butterworth_n: p.butterworth.n,
            butterworth_f: p.butterworth.f,
            em_iters: p.gmm.em_iters,
            variance_floor: p.gmm.variance_floor,
            gmm_seed: p.gmm.seed,
            beta: p.loss.beta,
            gamma: p.loss.gamma,
            zeta: p.loss.zeta,
            grad_through_q: p.loss.grad_through_q,
            mask_weighted_recon: p.loss.mask_weighted_recon,
            mode: ReconMode::Vae,
            hidden: 64,
            latent_dim: 8,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-2,
            epochs: 200,
            seed: 0,
            min_objects: s.min_objects,
            max_objects: s.max_objects,
            shapes: s.shapes,
            min_size: s.min_size,
            max_size: s.max_size,
            color_delta: s.color_delta,
            allow_occlusion: s.allow_occlusion,
            data: None,
            out: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config {
        key: key.to_string(),
        reason: format!("cannot parse {value:?}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config {
            key: key.to_string(),
            reason: format!("expected true or false, got {value:?}"),
        }),
    }
}

fn ablation_name(a: Ablation) -> &'static str {
    match a {
        Ablation::Full => "full",
        Ablation::QOnly => "q_only",
        Ablation::LOnly => "l_only",
    }
}

fn mode_name(m: ReconMode) -> &'static str {
    match m {
        ReconMode::Autoencoder => "ae",
        ReconMode::Vae => "vae",
    }
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                key: line.to_string(),
                reason: format!("line {}: expected key = value", n + 1),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "slots" => self.slots = parse(key, value)?,
            "ablation" => {
                self.ablation = match value {
                    "full" => Ablation::Full,
                    "q_only" => Ablation::QOnly,
                    "l_only" => Ablation::LOnly,
                    _ => {
                        return Err(CliError::Config {
                            key: key.into(),
                            reason: format!("expected full, q_only or l_only, got {value:?}"),
                        })
                    }
                }
            }
            "adjust_background" => self.adjust_background = parse_bool(key, value)?,
            "sigma1" => self.sigma1 = parse(key, value)?,
            "kernel_size" => self.kernel_size = parse(key, value)?,
            "butterworth_n" => self.butterworth_n = parse(key, value)?,
            // the cutoff also goes by sigma2
            "butterworth_f" | "sigma2" => self.butterworth_f = parse(key, value)?,
            "em_iters" => self.em_iters = parse(key, value)?,
            "variance_floor" => self.variance_floor = parse(key, value)?,
            "gmm_seed" => self.gmm_seed = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "zeta" => self.zeta = parse(key, value)?,
            "grad_through_q" => self.grad_through_q = parse_bool(key, value)?,
            "mask_weighted_recon" => self.mask_weighted_recon = parse_bool(key, value)?,
            "mode" => {
                self.mode = match value {
                    "ae" | "autoencoder" => ReconMode::Autoencoder,
                    "vae" => ReconMode::Vae,
                    _ => {
                        return Err(CliError::Config {
                            key: key.into(),
                            reason: format!("expected ae or vae, got {value:?}"),
                        })
                    }
                }
            }
            "hidden" => self.hidden = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => {
                        return Err(CliError::Config {
                            key: key.into(),
                            reason: format!("expected sgd or adam, got {value:?}"),
                        })
                    }
                }
            }
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_objects" => self.min_objects = parse(key, value)?,
            "max_objects" => self.max_objects = parse(key, value)?,
            "shapes" => {
                self.shapes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        Shape::parse(s).ok_or_else(|| CliError::Config {
                            key: key.into(),
                            reason: format!("unknown shape {s:?}"),
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "min_size" => self.min_size = parse(key, value)?,
            "max_size" => self.max_size = parse(key, value)?,
            "color_delta" => self.color_delta = parse(key, value)?,
            "allow_occlusion" => self.allow_occlusion = parse_bool(key, value)?,
            "data" => self.data = Some(value.to_string()),
            "out" => self.out = Some(value.to_string()),
            "checkpoint" => self.checkpoint = Some(value.to_string()),
            _ => {
                return Err(CliError::Config {
                    key: key.to_string(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Serializes every key; loading the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("slots", self.slots.to_string());
        kv("ablation", ablation_name(self.ablation).into());
        kv("adjust_background", self.adjust_background.to_string());
        kv("sigma1", self.sigma1.to_string());
        kv("kernel_size", self.kernel_size.to_string());
        kv("butterworth_n", self.butterworth_n.to_string());
        kv("butterworth_f", self.butterworth_f.to_string());
        kv("em_iters", self.em_iters.to_string());
        kv("variance_floor", self.variance_floor.to_string());
        kv("gmm_seed", self.gmm_seed.to_string());
        kv("beta", self.beta.to_string());
        kv("gamma", self.gamma.to_string());
        kv("zeta", self.zeta.to_string());
        kv("grad_through_q", self.grad_through_q.to_string());
        kv("mask_weighted_recon", self.mask_weighted_recon.to_string());
        kv("mode", mode_name(self.mode).into());
        kv("hidden", self.hidden.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Sgd => "sgd".into(),
                OptimizerKind::Adam => "adam".into(),
            },
        );
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("min_objects", self.min_objects.to_string());
        kv("max_objects", self.max_objects.to_string());
        kv(
            "shapes",
            self.shapes.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
        );
        kv("min_size", self.min_size.to_string());
        kv("max_size", self.max_size.to_string());
        kv("color_delta", self.color_delta.to_string());
        kv("allow_occlusion", self.allow_occlusion.to_string());
        if let Some(v) = &self.data {
            kv("data", v.clone());
        }
        if let Some(v) = &self.out {
            kv("out", v.clone());
        }
        if let Some(v) = &self.checkpoint {
            kv("checkpoint", v.clone());
        }
        s
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            slots: self.slots,
            quality: QualityParams {
                sigma1: self.sigma1,
                kernel_size: self.kernel_size,
            },
            butterworth: ButterworthParams {
                n: self.butterworth_n,
                f: self.butterworth_f,
            },
            gmm: GmmParams {
                em_iters: self.em_iters,
                variance_floor: self.variance_floor,
                seed: self.gmm_seed,
            },
            loss: LossWeights {
                beta: self.beta,
                gamma: if self.mode == ReconMode::Autoencoder {
                    0.0
                } else {
                    self.gamma
                },
                zeta: self.zeta,
                grad_through_q: self.grad_through_q,
                mask_weighted_recon: self.mask_weighted_recon,
            },
            ablation: self.ablation,
            adjust_background: self.adjust_background,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::adam(),
        }
    }

    pub fn architecture(&self, height: usize, width: usize) -> Architecture {
        Architecture {
            height,
            width,
            hidden: self.hidden,
            latent_dim: self.latent_dim,
        }
    }

    pub fn scene_spec(&self, size: usize) -> SceneSpec {
        SceneSpec {
            height: size,
            width: size,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            shapes: self.shapes.clone(),
            min_size: self.min_size,
            max_size: self.max_size,
            color_delta: self.color_delta,
            allow_occlusion: self.allow_occlusion,
            seed: self.seed,
        }
    }

    /// Range checks that do not depend on the image size.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, reason: String| {
            Err(CliError::Config {
                key: key.into(),
                reason,
            })
        };
        if self.slots < 2 {
            return bad("slots", format!("{} < 2", self.slots));
        }
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return bad("sigma1", "must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size", "must be odd".into());
        }
        if self.butterworth_n == 0 {
            return bad("butterworth_n", "must be at least 1".into());
        }
        if !(self.butterworth_f > 0.0 && self.butterworth_f.is_finite()) {
            return bad("butterworth_f", "must be positive".into());
        }
        if self.em_iters == 0 {
            return bad("em_iters", "must be at least 1".into());
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor", "must be positive".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be nonnegative".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad("zeta", "must lie in [0, 1]".into());
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return bad(
                if self.hidden == 0 { "hidden" } else { "latent_dim" },
                "must be positive".into(),
            );
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be nonnegative".into());
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects", "exceeds max_objects".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad(
                "min_size",
                format!("[{}, {}] is not a valid range", self.min_size, self.max_size),
            );
        }
        if !(0.0..=0.85).contains(&self.color_delta) {
            return bad("color_delta", "must lie in [0, 0.85]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("slots = 3\nablation = q_only # comment\n\n sigma2 = 2.5\nshapes = circle\ndata = d")
            .unwrap();
        assert_eq!(cfg.slots, 3);
        assert_eq!(cfg.butterworth_f, 2.5);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::default().apply_text("slotz = 3").unwrap_err();
        assert!(matches!(err, CliError::Config { ref key, .. } if key == "slotz"));
    }

    #[test]
    fn bad_values() {
        assert!(RunConfig::default().apply_text("grad_through_q = maybe").is_err());
        assert!(RunConfig::default().apply_text("slots three").is_err());
        let mut cfg = RunConfig::default();
        cfg.apply_text("zeta = 2").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shipped_desk_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
        let cfg = RunConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!((cfg.slots, cfg.beta, cfg.sigma1), (3, 0.0, 0.05));
    }
}
