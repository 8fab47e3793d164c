use super::{LabeledSample, TaskSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Maximum absolute rotation in degrees; `None` disables rotation.
    pub rotation_deg: Option<f64>,
    /// Per-channel additive jitter drawn from `[-m, m]`.
    pub color_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            vertical_flip: true,
            rotation_deg: Some(30.0),
            color_jitter: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            horizontal_flip: false,
            vertical_flip: false,
            rotation_deg: None,
            color_jitter: 0.0,
        }
    }

    /// This config as used for `task`: rotation is dropped when the task forbids it.
    pub fn for_task(&self, task: &TaskSpec) -> Self {
        let mut c = self.clone();
        if !task.rotation_allowed {
            c.rotation_deg = None;
        }
        c
    }
}

/// How often each transform actually fired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentCounters {
    pub horizontal_flips: u64,
    pub vertical_flips: u64,
    pub rotations: u64,
    pub jitters: u64,
}

pub fn hflip(img: &Tensor) -> Tensor {
    let (c, h, w) = dims3(img);
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for plane in 0..c * h {
        for x in 0..w {
            out[plane * w + x] = src[plane * w + (w - 1 - x)];
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

pub fn vflip(img: &Tensor) -> Tensor {
    let (c, h, w) = dims3(img);
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let (d, s) = ((ch * h + y) * w, (ch * h + (h - 1 - y)) * w);
            out[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Bilinear rotation about the image centre; samples outside the source are
/// clamped to the nearest edge pixel.
pub fn rotate(img: &Tensor, degrees: f64) -> Tensor {
    let (c, h, w) = dims3(img);
    let src = img.data();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; src.len()];
    let at = |ch: usize, y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[(ch * h + y) * w + x]
    };
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = at(ch, y0, x0) * (1.0 - fx) + at(ch, y0, x0 + 1) * fx;
                let bottom = at(ch, y0 + 1, x0) * (1.0 - fx) + at(ch, y0 + 1, x0 + 1) * fx;
                out[(ch * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

fn dims3(img: &Tensor) -> (usize, usize, usize) {
    match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => panic!("augment expects a C×H×W image, got {s:?}"),
    }
}

/// Applies each enabled transform with probability 1/2 (jitter always),
/// then clamps to `[0, 1]`.
pub fn augment(
    sample: &LabeledSample,
    config: &AugmentConfig,
    rng: &mut SeededRng,
    counters: &mut AugmentCounters,
) -> LabeledSample {
    let mut img = sample.image.clone();
    if config.horizontal_flip && rng.bernoulli(0.5) {
        img = hflip(&img);
        counters.horizontal_flips += 1;
    }
    if config.vertical_flip && rng.bernoulli(0.5) {
        img = vflip(&img);
        counters.vertical_flips += 1;
    }
    if let Some(max) = config.rotation_deg.filter(|&m| m > 0.0) {
        if rng.bernoulli(0.5) {
            img = rotate(&img, rng.range(-max, max));
            counters.rotations += 1;
        }
    }
    if config.color_jitter > 0.0 {
        let (c, h, w) = dims3(&img);
        let data = img.data_mut();
        for ch in 0..c {
            let shift = rng.range(-config.color_jitter, config.color_jitter);
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v += shift;
            }
        }
        counters.jitters += 1;
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    LabeledSample {
        image: img,
        labels: sample.labels,
    }
}
