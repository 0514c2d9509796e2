//! PNG grids of image batches.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use rcdm_core::{Error, ImageBatch, Result};

use crate::checkpoint::write_atomic;

/// `round((x + 1)·127.5)` with halves rounded up, clamped to `0..=255`.
pub fn to_byte(x: f32) -> u8 {
    ((x as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Row and column counts for `count` tiles, as close to square as possible.
pub fn auto_layout(count: usize) -> (usize, usize) {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    (count.div_ceil(cols).max(1), cols)
}

/// Tiles the batch row-major into a `rows × cols` grid without padding;
/// unused cells are black.
pub fn render_grid(images: &ImageBatch, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols < images.count() {
        return Err(Error::Config(format!(
            "layout {rows}x{cols} cannot hold {} images",
            images.count()
        )));
    }
    let [c, h, w] = images.image_shape();
    if c != 1 && c != 3 {
        return Err(Error::Unsupported(format!("{c}-channel images")));
    }
    let (gw, gh) = (cols * w, rows * h);
    let mut buf = vec![0u8; gw * gh * c];
    for i in 0..images.count() {
        let img = images.image(i);
        let (oy, ox) = ((i / cols) * h, (i % cols) * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    buf[((oy + y) * gw + ox + x) * c + ch] = to_byte(img[ch * h * w + y * w + x]);
                }
            }
        }
    }
    let mut png = Vec::new();
    let mut cursor = std::io::Cursor::new(&mut png);
    if c == 3 {
        ImageBuffer::<Rgb<u8>, _>::from_raw(gw as u32, gh as u32, buf)
            .expect("buffer sized to grid")
            .write_to(&mut cursor, image::ImageFormat::Png)?;
    } else {
        ImageBuffer::<Luma<u8>, _>::from_raw(gw as u32, gh as u32, buf)
            .expect("buffer sized to grid")
            .write_to(&mut cursor, image::ImageFormat::Png)?;
    }
    Ok(png)
}

pub fn emit_grid(images: &ImageBatch, rows: usize, cols: usize, path: &Path) -> Result<()> {
    write_atomic(path, &render_grid(images, rows, cols)?)
}
