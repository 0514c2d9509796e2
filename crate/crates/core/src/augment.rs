//! Image transforms: the random augmentation policy used for contrastive
//! training and the fixed transforms measured by the invariance probe.
//!
//! Every function works on one `(channels, height, width)` image stored as a
//! flat slice in `[-1, 1]` and returns a new buffer of the same size.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::Rng;

type Plane = ImageBuffer<Luma<f32>, Vec<f32>>;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// `(channels, height, width)`
pub type Shape = [usize; 3];

fn to_plane(img: &[f32], w: usize, h: usize) -> Plane {
    // The resampler clamps floats to [0, 1].
    let data = img.iter().map(|v| (v + 1.0) * 0.5).collect();
    Plane::from_raw(w as u32, h as u32, data).expect("plane size")
}

fn from_plane(p: &Plane, out: &mut Vec<f32>) {
    out.extend(p.as_raw().iter().map(|v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)));
}

/// Resamples the window `(top, left, height, width)` of every channel to
/// `(out_h, out_w)` with bilinear filtering.
pub fn crop_resize(img: &[f32], s: Shape, window: [usize; 4], out_h: usize, out_w: usize) -> Vec<f32> {
    let [c, h, w] = s;
    let [top, left, wh, ww] = window;
    assert!(top + wh <= h && left + ww <= w && wh > 0 && ww > 0, "crop window out of bounds");
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = to_plane(&img[ch * h * w..(ch + 1) * h * w], w, h);
        let cropped = imageops::crop_imm(&plane, left as u32, top as u32, ww as u32, wh as u32).to_image();
        let resized = imageops::resize(&cropped, out_w as u32, out_h as u32, FilterType::Triangle);
        from_plane(&resized, &mut out);
    }
    out
}

pub fn hflip(img: &[f32], s: Shape) -> Vec<f32> {
    let [_, _, w] = s;
    img.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Luma conversion replicated across channels. Pixels whose channels are
/// already equal are left untouched, so grayscale is an exact fixed point.
pub fn grayscale(img: &[f32], s: Shape) -> Vec<f32> {
    let [c, h, w] = s;
    if c != 3 {
        return img.to_vec();
    }
    let hw = h * w;
    let mut out = img.to_vec();
    for i in 0..hw {
        let (r, g, b) = (img[i], img[hw + i], img[2 * hw + i]);
        if r == g && g == b {
            continue;
        }
        let y = LUMA[0] * r + LUMA[1] * g + LUMA[2] * b;
        out[i] = y;
        out[hw + i] = y;
        out[2 * hw + i] = y;
    }
    out
}

/// Brightness shift, contrast scaling about the image mean, and saturation
/// scaling about the per-pixel luma; the result is clamped.
pub fn color_jitter(img: &[f32], s: Shape, brightness: f32, contrast: f32, saturation: f32) -> Vec<f32> {
    let [c, h, w] = s;
    let hw = h * w;
    let mean = img.iter().sum::<f32>() / img.len() as f32;
    let mut out: Vec<f32> = img.iter().map(|&v| (v - mean) * contrast + mean + brightness).collect();
    if c == 3 {
        for i in 0..hw {
            let y = LUMA[0] * out[i] + LUMA[1] * out[hw + i] + LUMA[2] * out[2 * hw + i];
            for ch in 0..3 {
                let v = &mut out[ch * hw + i];
                *v = y + (*v - y) * saturation;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    out
}

/// Moves content down by `dy` rows (up when negative), replicating the edge row.
pub fn vertical_shift(img: &[f32], s: Shape, dy: i32) -> Vec<f32> {
    let [c, h, w] = s;
    let mut out = Vec::with_capacity(img.len());
    for ch in 0..c {
        for y in 0..h as i32 {
            let src = (y - dy).clamp(0, h as i32 - 1) as usize;
            let base = ch * h * w + src * w;
            out.extend_from_slice(&img[base..base + w]);
        }
    }
    out
}

/// `factor > 1` crops the centre and enlarges it; `factor < 1` shrinks the
/// image and pads it with the per-channel mean of the border pixels.
pub fn zoom(img: &[f32], s: Shape, factor: f64) -> Vec<f32> {
    let [c, h, w] = s;
    if factor >= 1.0 {
        let ch = ((h as f64 / factor).round() as usize).clamp(1, h);
        let cw = ((w as f64 / factor).round() as usize).clamp(1, w);
        return crop_resize(img, s, [(h - ch) / 2, (w - cw) / 2, ch, cw], h, w);
    }
    let nh = ((h as f64 * factor).round() as usize).max(1);
    let nw = ((w as f64 * factor).round() as usize).max(1);
    let small = crop_resize(img, s, [0, 0, h, w], nh, nw);
    let (top, left) = ((h - nh) / 2, (w - nw) / 2);
    let mut out = Vec::with_capacity(img.len());
    for chn in 0..c {
        let plane = &img[chn * h * w..(chn + 1) * h * w];
        let fill = border_mean(plane, h, w);
        for y in 0..h {
            for x in 0..w {
                let inside = (top..top + nh).contains(&y) && (left..left + nw).contains(&x);
                out.push(if inside {
                    small[chn * nh * nw + (y - top) * nw + (x - left)]
                } else {
                    fill
                });
            }
        }
    }
    out
}

fn border_mean(plane: &[f32], h: usize, w: usize) -> f32 {
    let mut sum = 0.0;
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                sum += plane[y * w + x];
                n += 1;
            }
        }
    }
    sum / n as f32
}

/// Random augmentation used to build contrastive views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Smallest crop area as a fraction of the image.
    pub crop_min_area: f64,
    pub flip_prob: f64,
    pub grayscale_prob: f64,
    pub jitter_prob: f64,
    /// Maximum brightness shift; contrast and saturation vary by `±2·strength`.
    pub jitter_strength: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            crop_min_area: 0.5,
            flip_prob: 0.5,
            grayscale_prob: 0.2,
            jitter_prob: 0.8,
            jitter_strength: 0.2,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.flip_prob, self.grayscale_prob, self.jitter_prob];
        if !(self.crop_min_area > 0.0 && self.crop_min_area <= 1.0)
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || !(self.jitter_strength >= 0.0)
        {
            return Err(Error::Config(format!("invalid augmentation policy {self:?}")));
        }
        Ok(())
    }

    pub fn apply(&self, img: &[f32], s: Shape, rng: &mut Rng) -> Vec<f32> {
        let [_, h, w] = s;
        let area: f64 = rng.random_range(self.crop_min_area..=1.0);
        let aspect: f64 = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln()).exp();
        let ch = ((h as f64 * (area / aspect).sqrt()).round() as usize).clamp(1, h);
        let cw = ((w as f64 * (area * aspect).sqrt()).round() as usize).clamp(1, w);
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        let mut out = crop_resize(img, s, [top, left, ch, cw], h, w);
        if rng.random_bool(self.flip_prob) {
            out = hflip(&out, s);
        }
        if rng.random_bool(self.jitter_prob) {
            let j = self.jitter_strength as f32;
            let b = rng.random_range(-j..=j);
            let c = rng.random_range(1.0 - 2.0 * j..=1.0 + 2.0 * j).max(0.0);
            let sat = rng.random_range(1.0 - 2.0 * j..=1.0 + 2.0 * j).max(0.0);
            out = color_jitter(&out, s, b, c, sat);
        }
        if rng.random_bool(self.grayscale_prob) {
            out = grayscale(&out, s);
        }
        out
    }

    pub fn apply_batch(&self, batch: &ImageBatch, rng: &mut Rng) -> ImageBatch {
        let s = batch.image_shape();
        let images: Vec<Vec<f32>> = (0..batch.count()).map(|i| self.apply(batch.image(i), s, rng)).collect();
        ImageBatch::from_images(s, &images).expect("augmentations stay in range")
    }
}

/// Deterministic transforms measured by the invariance probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    VerticalShift { pixels: i32 },
    ZoomIn { factor: f64 },
    ZoomOut { factor: f64 },
    Grayscale,
    ColorJitter { brightness: f32, contrast: f32, saturation: f32 },
    HorizontalFlip,
}

impl Transform {
    /// The six probed transforms with their default strengths.
    pub fn probe_set() -> Vec<Transform> {
        ["vertical-shift", "zoom-in", "zoom-out", "grayscale", "color-jitter", "horizontal-flip"]
            .iter()
            .map(|n| Transform::parse(n).expect("known transform"))
            .collect()
    }

    pub fn parse(name: &str) -> Result<Transform> {
        Ok(match name {
            "identity" => Transform::Identity,
            "vertical-shift" => Transform::VerticalShift { pixels: 4 },
            "zoom-in" => Transform::ZoomIn { factor: 1.5 },
            "zoom-out" => Transform::ZoomOut { factor: 0.6 },
            "grayscale" => Transform::Grayscale,
            "color-jitter" => Transform::ColorJitter {
                brightness: 0.2,
                contrast: 0.7,
                saturation: 1.5,
            },
            "horizontal-flip" => Transform::HorizontalFlip,
            other => return Err(Error::Unsupported(format!("transform {other}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::VerticalShift { .. } => "vertical-shift",
            Transform::ZoomIn { .. } => "zoom-in",
            Transform::ZoomOut { .. } => "zoom-out",
            Transform::Grayscale => "grayscale",
            Transform::ColorJitter { .. } => "color-jitter",
            Transform::HorizontalFlip => "horizontal-flip",
        }
    }

    pub fn apply(&self, img: &[f32], s: Shape) -> Vec<f32> {
        match *self {
            Transform::Identity => img.to_vec(),
            Transform::VerticalShift { pixels } => vertical_shift(img, s, pixels),
            Transform::ZoomIn { factor } => zoom(img, s, factor.max(1.0)),
            Transform::ZoomOut { factor } => zoom(img, s, factor.min(1.0)),
            Transform::Grayscale => grayscale(img, s),
            Transform::ColorJitter {
                brightness,
                contrast,
                saturation,
            } => color_jitter(img, s, brightness, contrast, saturation),
            Transform::HorizontalFlip => hflip(img, s),
        }
    }

    pub fn apply_batch(&self, batch: &ImageBatch) -> ImageBatch {
        let s = batch.image_shape();
        let images: Vec<Vec<f32>> = (0..batch.count()).map(|i| self.apply(batch.image(i), s)).collect();
        ImageBatch::from_images(s, &images).expect("transforms stay in range")
    }
}
