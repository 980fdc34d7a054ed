//! Sprite scenes on a solid background with instance labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pipeline::mix_seed;

const PLACEMENT_RETRIES: usize = 200;
const COLOR_RETRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "square" => Some(Shape::Square),
            "circle" => Some(Shape::Circle),
            _ => None,
        }
    }

    /// Whether pixel `(i, j)` belongs to a sprite with bounding box at `(top, left)`.
    pub fn covers(self, top: usize, left: usize, size: usize, i: usize, j: usize) -> bool {
        let inside_box = i >= top && j >= left && i < top + size && j < left + size;
        match self {
            Shape::Square => inside_box,
            Shape::Circle => {
                let r = size as f64 / 2.0;
                let di = i as f64 + 0.5 - (top as f64 + r);
                let dj = j as f64 + 0.5 - (left as f64 + r);
                inside_box && di * di + dj * dj <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<Shape>,
    /// Bounding-box side length range in pixels, inclusive.
    pub min_size: usize,
    pub max_size: usize,
    /// Minimum L2 distance between an object color and the background color.
    pub color_delta: f64,
    pub allow_occlusion: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            min_objects: 1,
            max_objects: 2,
            shapes: vec![Shape::Square, Shape::Circle],
            min_size: 6,
            max_size: 9,
            color_delta: 0.25,
            allow_occlusion: false,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, reason: String| Err(Error::InvalidValue { what, reason });
        if self.height == 0 || self.width == 0 {
            return bad("scene size", format!("{}x{}", self.height, self.width));
        }
        if self.min_objects > self.max_objects || self.max_objects > 255 {
            return bad("object count", format!("[{}, {}]", self.min_objects, self.max_objects));
        }
        if self.shapes.is_empty() && self.max_objects > 0 {
            return bad("shapes", "no shapes to draw".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size || self.max_size > self.height.min(self.width) {
            return bad("object size", format!("[{}, {}]", self.min_size, self.max_size));
        }
        // any background has a cube corner at least sqrt(3)/2 away
        if !(0.0..=0.85).contains(&self.color_delta) {
            return bad("color_delta", format!("{} outside [0, 0.85]", self.color_delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub image: Image,
    /// Row-major instance labels: 0 background, `1..=n` objects.
    pub labels: Vec<usize>,
    /// Visible objects; `objects[n - 1]` carries label `n`.
    pub objects: Vec<SceneObject>,
    pub warning: Option<String>,
}

impl LabeledScene {
    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    /// Normalized `(row, col)` centroid of the pixels labeled `label`.
    pub fn centroid(&self, label: usize) -> Option<(f64, f64)> {
        let (h, w) = self.image.dims();
        let (mut si, mut sj, mut n) = (0.0, 0.0, 0usize);
        for (p, &l) in self.labels.iter().enumerate() {
            if l == label {
                si += (p / w) as f64;
                sj += (p % w) as f64;
                n += 1;
            }
        }
        let norm = |v: f64, extent: usize| if extent > 1 { v / (extent - 1) as f64 } else { 0.0 };
        (n > 0).then(|| (norm(si / n as f64, h), norm(sj / n as f64, w)))
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn boxes_overlap(a: &SceneObject, b: &SceneObject) -> bool {
    a.top < b.top + b.size && b.top < a.top + a.size && a.left < b.left + b.size && b.left < a.left + a.size
}

/// Scene `index` of the dataset described by `spec`.
pub fn generate_one(spec: &SceneSpec, index: u64) -> Result<LabeledScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index));
    let (h, w) = (spec.height, spec.width);
    let background = random_color(&mut rng);
    let wanted = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut placed: Vec<SceneObject> = Vec::with_capacity(wanted);
    let mut warning = None;
    for _ in 0..wanted {
        let shape = spec.shapes[rng.random_range(0..spec.shapes.len())];
        let size = rng.random_range(spec.min_size..=spec.max_size);
        let mut color = random_color(&mut rng);
        let mut tries = 0;
        while distance(&color, &background) < spec.color_delta {
            color = random_color(&mut rng);
            tries += 1;
            if tries > COLOR_RETRIES {
                return Err(Error::InvalidValue {
                    what: "color_delta",
                    reason: "no admissible color found".into(),
                });
            }
        }
        let mut candidate = None;
        for _ in 0..PLACEMENT_RETRIES {
            let obj = SceneObject {
                shape,
                top: rng.random_range(0..=h - size),
                left: rng.random_range(0..=w - size),
                size,
                color,
            };
            if spec.allow_occlusion || placed.iter().all(|o| !boxes_overlap(o, &obj)) {
                candidate = Some(obj);
                break;
            }
        }
        match candidate {
            Some(obj) => placed.push(obj),
            None => {
                warning = Some(format!("scene {index}: placed {} of {wanted} objects", placed.len()));
                break;
            }
        }
    }

    // paint in order so later objects occlude earlier ones
    let mut owner = vec![0usize; h * w];
    for (n, obj) in placed.iter().enumerate() {
        for i in obj.top..obj.top + obj.size {
            for j in obj.left..obj.left + obj.size {
                if obj.shape.covers(obj.top, obj.left, obj.size, i, j) {
                    owner[i * w + j] = n + 1;
                }
            }
        }
    }
    let mut remap = vec![0usize; placed.len() + 1];
    let mut objects = Vec::new();
    for (n, obj) in placed.into_iter().enumerate() {
        if owner.contains(&(n + 1)) {
            objects.push(obj);
            remap[n + 1] = objects.len();
        }
    }
    let labels: Vec<usize> = owner.iter().map(|&o| remap[o]).collect();
    let image = Image::from_fn(h, w, |i, j| match labels[i * w + j] {
        0 => background,
        l => objects[l - 1].color,
    })?;
    Ok(LabeledScene {
        image,
        labels,
        objects,
        warning,
    })
}

/// `count` deterministic scenes; scene `k` depends only on `(spec, k)`.
pub fn generate(spec: &SceneSpec, count: usize) -> Result<Vec<LabeledScene>> {
    (0..count as u64).map(|k| generate_one(spec, k)).collect()
}
