//! Dataset directories: `NNNNN.png`, `NNNNN.labels.png` and a `manifest`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use irgs::{Image, LabeledScene, MaskPlane, SceneSpec};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest";

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:05}.png"))
}

pub fn labels_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:05}.labels.png"))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(img: &Image, path: &Path) -> Result<(), CliError> {
    let (h, w) = img.dims();
    let bytes = img.as_slice().iter().map(|&v| to_byte(v)).collect();
    let buf = RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn save_mask(mask: &MaskPlane, path: &Path) -> Result<(), CliError> {
    let (h, w) = mask.dims();
    let bytes = mask.as_slice().iter().map(|&v| to_byte(v)).collect();
    save_gray(w, h, bytes, path)
}

pub fn save_labels(labels: &[usize], height: usize, width: usize, path: &Path) -> Result<(), CliError> {
    let bytes = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| CliError::Usage(format!("label {l} does not fit in 8 bits"))))
        .collect::<Result<Vec<u8>, _>>()?;
    save_gray(width, height, bytes, path)
}

fn save_gray(width: usize, height: usize, bytes: Vec<u8>, path: &Path) -> Result<(), CliError> {
    let buf = GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_rgb(path: &Path) -> Result<Image, CliError> {
    let img = image::open(path).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::new(h as usize, w as usize, data)?)
}

pub fn load_labels(path: &Path) -> Result<(Vec<usize>, usize, usize), CliError> {
    let img = image::open(path).map_err(|e| CliError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok((
        gray.as_raw().iter().map(|&b| b as usize).collect(),
        h as usize,
        w as usize,
    ))
}

/// Writes every scene plus the manifest into `dir`, creating it if needed.
pub fn write(dir: &Path, spec: &SceneSpec, scenes: &[LabeledScene]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (k, scene) in scenes.iter().enumerate() {
        save_rgb(&scene.image, &image_path(dir, k))?;
        let (h, w) = scene.image.dims();
        save_labels(&scene.labels, h, w, &labels_path(dir, k))?;
    }
    let shapes: Vec<&str> = spec.shapes.iter().map(|s| s.name()).collect();
    let warnings = scenes.iter().filter(|s| s.warning.is_some()).count();
    let manifest = format!(
        "count = {}\nheight = {}\nwidth = {}\nmin_objects = {}\nmax_objects = {}\nshapes = {}\nmin_size = {}\n\
         max_size = {}\ncolor_delta = {}\nallow_occlusion = {}\nseed = {}\nreduced_scenes = {}\n",
        scenes.len(),
        spec.height,
        spec.width,
        spec.min_objects,
        spec.max_objects,
        shapes.join(","),
        spec.min_size,
        spec.max_size,
        spec.color_delta,
        spec.allow_occlusion,
        spec.seed,
        warnings,
    );
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))
}

/// Scene count recorded in the manifest.
pub fn count(dir: &Path) -> Result<usize, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "count")
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| CliError::Usage(format!("{}: no count entry", path.display())))
}

pub fn load_images(dir: &Path) -> Result<Vec<Image>, CliError> {
    (0..count(dir)?).map(|k| load_rgb(&image_path(dir, k))).collect()
}

/// Images with their label planes; a missing label file is a usage error.
pub fn load_labeled(dir: &Path) -> Result<Vec<(Image, Vec<usize>)>, CliError> {
    (0..count(dir)?)
        .map(|k| {
            let img = load_rgb(&image_path(dir, k))?;
            let lp = labels_path(dir, k);
            if !lp.exists() {
                return Err(CliError::Usage(format!("missing labels {}", lp.display())));
            }
            let (labels, h, w) = load_labels(&lp)?;
            if (h, w) != img.dims() {
                return Err(CliError::Usage(format!(
                    "{}: labels are {h}x{w}, image is {:?}",
                    lp.display(),
                    img.dims()
                )));
            }
            Ok((img, labels))
        })
        .collect()
}
