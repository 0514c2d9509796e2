use rcdm_tensor::Tensor;

use crate::error::{Error, Result};

/// Rank-4 `(count, channels, height, width)` batch in the canonical `[-1, 1]` range.
///
/// The range is enforced on construction and by [`ImageBatch::clamped`]; the
/// diffusion state between those points lives in a plain [`Tensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor<f32>);

impl ImageBatch {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        check_rank4(t.shape())?;
        if let Some(v) = t.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRange(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self(t))
    }

    /// Clamps every element into `[-1, 1]`; NaN is rejected.
    pub fn clamped(t: Tensor<f32>) -> Result<Self> {
        check_rank4(t.shape())?;
        if !t.all_finite() {
            return Err(Error::NonFinite("image batch".into()));
        }
        Ok(Self(t.map(|v| v.clamp(-1.0, 1.0))))
    }

    pub fn count(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    /// `(channels, height, width)`
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels(), self.height(), self.width()]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.0.row(i)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self(self.0.select_rows(idx))
    }

    pub fn concat(parts: &[&ImageBatch]) -> Self {
        let ts: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.0).collect();
        Self(Tensor::stack_rows(&ts))
    }

    pub fn from_images(shape: [usize; 3], images: &[Vec<f32>]) -> Result<Self> {
        let per: usize = shape.iter().product();
        let mut data = Vec::with_capacity(images.len() * per);
        for im in images {
            if im.len() != per {
                return Err(Error::ShapeMismatch(format!(
                    "image has {} values, expected {per}",
                    im.len()
                )));
            }
            data.extend_from_slice(im);
        }
        Self::new(Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data))
    }
}

fn check_rank4(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!("image batch must be rank 4, got {shape:?}")));
    }
    Ok(())
}
