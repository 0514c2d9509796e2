//! Datasets: the bundled procedural shapes generator and class-per-directory
//! image folders, with deterministic hash-based splitting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::seeded;

pub const SHAPE_CLASSES: [&str; 3] = ["circle", "square", "triangle"];

/// Eight saturated RGB colours, 0..=255.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

pub const SHAPE_SCALES: [u32; 3] = [5, 7, 9];
/// Shape centres on the 32-pixel reference grid.
pub const SHAPE_CENTERS: [u32; 7] = [10, 12, 14, 16, 18, 20, 22];

/// Ground-truth generative factors of one shapes image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeFactors {
    pub class: usize,
    pub foreground: usize,
    pub background: usize,
    /// Half-extent in reference pixels.
    pub scale: u32,
    pub center_x: u32,
    pub center_y: u32,
}

impl ShapeFactors {
    pub fn random(rng: &mut impl rand::Rng) -> Self {
        let foreground = rng.random_range(0..PALETTE.len());
        let background = (foreground + 1 + rng.random_range(0..PALETTE.len() - 1)) % PALETTE.len();
        Self {
            class: rng.random_range(0..SHAPE_CLASSES.len()),
            foreground,
            background,
            scale: SHAPE_SCALES[rng.random_range(0..SHAPE_SCALES.len())],
            center_x: SHAPE_CENTERS[rng.random_range(0..SHAPE_CENTERS.len())],
            center_y: SHAPE_CENTERS[rng.random_range(0..SHAPE_CENTERS.len())],
        }
    }

    /// Renders a `(3, size, size)` image in `[-1, 1]`.
    pub fn render(&self, size: usize) -> Vec<f32> {
        let k = size as f64 / 32.0;
        let r = self.scale as f64 * k;
        let (cx, cy) = (self.center_x as f64 * k, self.center_y as f64 * k);
        let colour = |c: [u8; 3], ch: usize| c[ch] as f32 / 127.5 - 1.0;
        let mut out = vec![0.0; 3 * size * size];
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = match self.class {
                    0 => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
                    1 => (px - cx).abs() <= r * 0.85 && (py - cy).abs() <= r * 0.85,
                    _ => py >= cy - r && py <= cy + r * 0.8 && (px - cx).abs() <= (py - (cy - r)) * 0.6,
                };
                let c = if inside { PALETTE[self.foreground] } else { PALETTE[self.background] };
                for ch in 0..3 {
                    out[ch * size * size + y * size + x] = colour(c, ch);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: ImageBatch,
    pub labels: Option<Vec<usize>>,
    pub class_names: Vec<String>,
    /// Stable per-item keys; splitting hashes these.
    pub keys: Vec<String>,
    pub factors: Option<Vec<ShapeFactors>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            factors: self.factors.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Splits into `(train, held_out)`; an item is held out when the hash of
    /// its key falls below `fraction`.
    pub fn split(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        let (train, held) = self.split_indices(fraction)?;
        Ok((self.subset(&train), self.subset(&held)))
    }

    /// Indices of the `(train, held_out)` parts of [`Dataset::split`].
    pub fn split_indices(&self, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidRange(format!("split fraction {fraction}")));
        }
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (i, key) in self.keys.iter().enumerate() {
            if key_unit(key) < fraction {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, held))
    }

    /// Content hash over pixels and labels (16 hex digits).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for &d in self.images.tensor().shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.images.tensor().data() {
            h.update(v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            for &v in l {
                h.update((v as u64).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn key_unit(key: &str) -> f64 {
    let d = Sha256::digest(key.as_bytes());
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    v as f64 / (u64::MAX as f64 + 1.0)
}

/// The bundled procedural dataset: `count` images drawn from `seed`.
pub fn generate_shapes(count: usize, seed: u64, size: usize) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Empty("shapes dataset with zero images".into()));
    }
    if size < 8 {
        return Err(Error::Config(format!("shapes image size {size} below 8")));
    }
    let mut rng = seeded(seed);
    let factors: Vec<ShapeFactors> = (0..count).map(|_| ShapeFactors::random(&mut rng)).collect();
    let images: Vec<Vec<f32>> = factors.iter().map(|f| f.render(size)).collect();
    Ok(Dataset {
        images: ImageBatch::from_images([3, size, size], &images)?,
        labels: Some(factors.iter().map(|f| f.class).collect()),
        class_names: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
        keys: (0..count).map(|i| format!("shapes/{seed}/{i}")).collect(),
        factors: Some(factors),
    })
}

/// Reads one image file as `(3, size, size)` RGB in `[-1, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .resize_exact(size as u32, size as u32, image::imageops::FilterType::Triangle)
        .to_rgb8();
    let mut chw = vec![0.0; 3 * size * size];
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            chw[ch * size * size + y as usize * size + x as usize] = p[ch] as f32 / 127.5 - 1.0;
        }
    }
    Ok(chw)
}

/// Loads `root/<class>/<image>` files; classes are numbered by sorted
/// directory name and every image is resized to `size × size` RGB.
pub fn load_image_folder(root: &Path, size: usize) -> Result<Dataset> {
    let mut classes: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    let (mut images, mut labels, mut keys) = (Vec::new(), Vec::new(), Vec::new());
    for (label, class) in classes.iter().enumerate() {
        let mut files: Vec<_> = std::fs::read_dir(root.join(class))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for path in files {
            images.push(load_image(&path, size)?);
            labels.push(label);
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            keys.push(format!("{class}/{name}"));
        }
    }
    if images.is_empty() {
        return Err(Error::Empty(format!("no images under {}", root.display())));
    }
    Ok(Dataset {
        images: ImageBatch::from_images([3, size, size], &images)?,
        labels: Some(labels),
        class_names: classes,
        keys,
        factors: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_reproducible() {
        let a = generate_shapes(20, 7, 32).unwrap();
        let b = generate_shapes(20, 7, 32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.content_hash(), generate_shapes(20, 8, 32).unwrap().content_hash());
        let f = a.factors.as_ref().unwrap();
        assert!(f.iter().all(|f| f.foreground != f.background));
    }

    #[test]
    fn split_is_stable_and_disjoint() {
        let d = generate_shapes(200, 1, 16).unwrap();
        let (tr, te) = d.split(0.25).unwrap();
        assert_eq!(tr.len() + te.len(), 200);
        assert!(te.len() > 25 && te.len() < 80);
        assert!(tr.keys.iter().all(|k| !te.keys.contains(k)));
        let (tr2, _) = d.split(0.25).unwrap();
        assert_eq!(tr.keys, tr2.keys);
    }

    #[test]
    fn rendered_image_has_two_colours() {
        let f = ShapeFactors {
            class: 1,
            foreground: 0,
            background: 3,
            scale: 7,
            center_x: 16,
            center_y: 16,
        };
        let img = f.render(32);
        let fg = PALETTE[0][0] as f32 / 127.5 - 1.0;
        let bg = PALETTE[3][0] as f32 / 127.5 - 1.0;
        assert_eq!(img[0], bg);
        assert_eq!(img[16 * 32 + 16], fg);
    }
}
