use std::fs;
use std::path::{Path, PathBuf};

use irgs::pipeline::mix_seed;
use irgs::{ami, ari, hard_assignment, segment as run_segment, synth, Image, ReconModel, SlotDecomposition};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset;
use crate::error::CliError;
use crate::{Common, Predictor};

/// Config file (or defaults) with command-line overrides applied.
fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.display().to_string());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(value: &Option<String>, flag: &str) -> Result<PathBuf, CliError> {
    value
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn gen(common: &Common, count: usize, size: usize) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let out = required(&cfg.out, "out")?;
    let spec = cfg.scene_spec(size);
    spec.validate()?;
    let scenes = synth::generate(&spec, count)?;
    for (k, s) in scenes.iter().enumerate() {
        if let Some(w) = &s.warning {
            eprintln!("scene {k}: {w}");
        }
    }
    dataset::write(&out, &spec, &scenes)
}

pub fn train(common: &Common, epochs: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let images = dataset::load_images(&data)?;
    let first = images
        .first()
        .ok_or_else(|| CliError::Usage(format!("{}: dataset is empty", data.display())))?;
    let (h, w) = first.dims();
    if let Some(bad) = images.iter().position(|x| x.dims() != (h, w)) {
        return Err(CliError::Usage(format!(
            "image {bad} is {:?}, expected {h}x{w}",
            images[bad].dims()
        )));
    }
    let pipeline = cfg.pipeline();
    pipeline.validate(h, w)?;
    let mut trainer = irgs::Trainer::new(
        ReconModel::new(cfg.architecture(h, w), cfg.mode, cfg.seed)?,
        cfg.optimizer(),
    );
    let mut log = String::from("epoch,mean_loss\n");
    for epoch in 0..cfg.epochs {
        let mean = trainer.epoch(&images, &pipeline, cfg.lr, mix_seed(cfg.seed, epoch as u64))?;
        log.push_str(&format!("{},{mean}\n", epoch + 1));
    }
    write_file(&out, trainer.model().to_bytes())?;
    write_file(&out.with_extension("losses.csv"), log)?;
    write_file(&out.with_extension("cfg"), cfg.to_text())
}

fn load_model(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<ReconModel, CliError> {
    let path = match checkpoint {
        Some(p) => p,
        None => required(&cfg.checkpoint, "checkpoint")?,
    };
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    ReconModel::from_bytes(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn check_dims(model: &ReconModel, x: &Image, name: &str) -> Result<(), CliError> {
    let arch = model.architecture();
    if (arch.height, arch.width) != x.dims() {
        return Err(CliError::Usage(format!(
            "{name} is {}x{} but the checkpoint expects {}x{}",
            x.height(),
            x.width(),
            arch.height,
            arch.width
        )));
    }
    Ok(())
}

/// `slot,y,x` rows; the background slot has no coordinates.
pub fn locations_report(d: &SlotDecomposition) -> String {
    let mut s = String::from("slot,y,x\n");
    for (k, slot) in d.slots.iter().enumerate() {
        match slot.object_location() {
            Some((y, x)) if k > 0 => s.push_str(&format!("{},{y:.4},{x:.4}\n", k + 1)),
            _ => s.push_str(&format!("{},---,---\n", k + 1)),
        }
    }
    s
}

fn write_decomposition(d: &SlotDecomposition, out: &Path, stem: &str) -> Result<(), CliError> {
    let (h, w) = d.dims();
    for (k, slot) in d.slots.iter().enumerate() {
        dataset::save_mask(&slot.mask, &out.join(format!("{stem}.mask{}.png", k + 1)))?;
        dataset::save_rgb(&slot.recon, &out.join(format!("{stem}.recon{}.png", k + 1)))?;
    }
    dataset::save_labels(&hard_assignment(d), h, w, &out.join(format!("{stem}.assign.png")))?;
    write_file(&out.join(format!("{stem}.locations.txt")), locations_report(d))
}

pub fn segment(common: &Common, checkpoint: Option<PathBuf>, image: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let model = load_model(&cfg, checkpoint)?;
    let out = required(&cfg.out, "out")?;
    let inputs: Vec<(String, Image)> = match image {
        Some(p) => {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            vec![(stem, dataset::load_rgb(&p)?)]
        }
        None => {
            let data = required(&cfg.data, "data")?;
            dataset::load_images(&data)?
                .into_iter()
                .enumerate()
                .map(|(k, x)| (format!("{k:05}"), x))
                .collect()
        }
    };
    for (name, x) in &inputs {
        check_dims(&model, x, name)?;
    }
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let pipeline = cfg.pipeline();
    inputs.par_iter().enumerate().try_for_each(|(k, (stem, x))| {
        let d = run_segment(&model, x, &pipeline, mix_seed(cfg.seed, k as u64))?;
        write_decomposition(&d, &out, stem)
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Scores {
    ari_fg: Option<f64>,
    ari_all: f64,
    ami_all: f64,
    ami_fg: Option<f64>,
}

fn optional(r: irgs::Result<f64>) -> Result<Option<f64>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(irgs::Error::EmptyPixelSet) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn eval(common: &Common, checkpoint: Option<PathBuf>, predictor: Predictor) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let data = required(&cfg.data, "data")?;
    let scenes = dataset::load_labeled(&data)?;
    let model = match predictor {
        Predictor::Model => {
            let m = load_model(&cfg, checkpoint)?;
            for (k, (x, _)) in scenes.iter().enumerate() {
                check_dims(&m, x, &format!("image {k}"))?;
            }
            Some(m)
        }
        _ => None,
    };
    let pipeline = cfg.pipeline();
    let scores: Vec<Scores> = scenes
        .par_iter()
        .enumerate()
        .map(|(k, (x, truth))| {
            let pred = match (&model, predictor) {
                (Some(m), _) => hard_assignment(&run_segment(m, x, &pipeline, mix_seed(cfg.seed, k as u64))?),
                (None, Predictor::Truth) => truth.clone(),
                (None, _) => vec![1; truth.len()],
            };
            Ok(Scores {
                ari_fg: optional(ari(&pred, truth, true))?,
                ari_all: ari(&pred, truth, false)?,
                ami_all: ami(&pred, truth, false)?,
                ami_fg: optional(ami(&pred, truth, true))?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let column = |f: &dyn Fn(&Scores) -> Option<f64>| mean_std(&scores.iter().filter_map(f).collect::<Vec<_>>());
    let rows = [
        ("ari_fg", column(&|s| s.ari_fg)),
        ("ari_all", column(&|s| Some(s.ari_all))),
        ("ami_all", column(&|s| Some(s.ami_all))),
        ("ami_fg", column(&|s| s.ami_fg)),
    ];
    let mut report = String::from("metric,mean,std\n");
    for (name, (mean, std)) in rows {
        report.push_str(&format!("{name},{mean:.6},{std:.6}\n"));
    }
    print!("{report}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread() {
        assert_eq!(mean_std(&[1.0, 1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[0.0, 2.0]);
        assert_eq!((m, s), (1.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
