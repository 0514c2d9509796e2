//! Linear noise schedule, closed-form forward corruption and the
//! noise-prediction objective.

use rand::Rng as _;
use rcdm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::{randn, Rng};

/// Per-step diffusion coefficients, indexed from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly spaced betas from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidRange(format!("step count {steps} < 2")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidRange(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let span = beta_max - beta_min;
    let beta: Vec<f64> = (0..steps)
        .map(|t| beta_min + span * t as f64 / (steps - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar: Vec<f64> = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    if alpha_bar[steps - 1] <= 0.0 {
        return Err(Error::InvalidRange("cumulative alpha underflows to zero".into()));
    }
    Ok(NoiseSchedule {
        beta_min,
        beta_max,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::IndexOutOfRange(format!("step {t} >= {}", self.steps())));
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar)·x0 + sqrt(1 − alpha_bar)·eps`, unclamped.
pub fn diffuse_with_alpha_bar(x0: &Tensor<f32>, alpha_bar: f64, eps: &Tensor<f32>) -> Result<Tensor<f32>> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs images {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    let a = alpha_bar.sqrt() as f32;
    let s = (1.0 - alpha_bar).sqrt() as f32;
    Ok(x0.zip_map(eps, |x, e| a * x + s * e))
}

/// Closed-form sample of `q(x_t | x_0)` for a single step index.
pub fn forward_diffuse(x0: &Tensor<f32>, t: usize, eps: &Tensor<f32>, schedule: &NoiseSchedule) -> Result<Tensor<f32>> {
    schedule.check_step(t)?;
    diffuse_with_alpha_bar(x0, schedule.alpha_bar[t], eps)
}

/// Closed-form corruption with one step index per leading-axis entry.
pub fn forward_diffuse_per_sample(
    x0: &Tensor<f32>,
    steps: &[usize],
    eps: &Tensor<f32>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<f32>> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs images {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    if steps.len() != x0.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} step indices for {} samples",
            steps.len(),
            x0.rows()
        )));
    }
    let mut out = x0.clone();
    for (i, &t) in steps.iter().enumerate() {
        schedule.check_step(t)?;
        let a = schedule.alpha_bar[t].sqrt() as f32;
        let s = (1.0 - schedule.alpha_bar[t]).sqrt() as f32;
        for (o, &e) in out.row_mut(i).iter_mut().zip(eps.row(i)) {
            *o = a * *o + s * e;
        }
    }
    Ok(out)
}

/// Anything that predicts the injected noise from `(x_t, t, h)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: &[usize], h: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// One draw of training inputs: uniform step indices, then standard-normal noise.
#[derive(Clone, Debug)]
pub struct NoisedBatch {
    pub steps: Vec<usize>,
    pub eps: Tensor<f32>,
    pub x_t: Tensor<f32>,
}

pub fn draw_noised_batch(x0: &ImageBatch, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<NoisedBatch> {
    let steps: Vec<usize> = (0..x0.count()).map(|_| rng.random_range(0..schedule.steps())).collect();
    let eps = randn(x0.tensor().shape(), rng);
    let x_t = forward_diffuse_per_sample(x0.tensor(), &steps, &eps, schedule)?;
    Ok(NoisedBatch { steps, eps, x_t })
}

/// Mean squared error between the drawn noise and its prediction.
pub fn noise_prediction_loss(
    denoiser: &impl NoisePredictor,
    x0: &ImageBatch,
    h: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    if h.rank() != 2 || h.rows() != x0.count() {
        return Err(Error::ShapeMismatch(format!(
            "representation batch {:?} for {} images",
            h.shape(),
            x0.count()
        )));
    }
    let batch = draw_noised_batch(x0, schedule, rng)?;
    let pred = denoiser.predict_noise(&batch.x_t, &batch.steps, h)?;
    if pred.shape() != batch.eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs noise {:?}",
            pred.shape(),
            batch.eps.shape()
        )));
    }
    let n = pred.numel() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(batch.eps.data())
        .map(|(&p, &e)| {
            let d = (p - e) as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("noise prediction loss".into()));
    }
    Ok(loss)
}
