//! Reverse-diffusion sampling conditioned on representations, linear
//! interpolation between representations and kernel-density sampling of
//! new representations.

use rand::Rng as _;
use rcdm_tensor::Tensor;

use crate::denoiser::DenoiserNetwork;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::{normal, randn, Rng};
use crate::schedule::NoiseSchedule;

/// Rows denoised per network call; bounds peak memory without affecting results.
pub const SAMPLE_CHUNK: usize = 32;

/// Draws one image per row of `h` by running the full reverse chain from
/// standard-normal noise.
pub fn sample_batch(net: &DenoiserNetwork, h: &Tensor<f32>, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<ImageBatch> {
    let cfg = net.config();
    if h.rank() != 2 || h.shape()[1] != cfg.rep_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.rep_dim,
            got: h.shape().last().copied().unwrap_or(0),
        });
    }
    let n = h.rows();
    if n == 0 {
        return Err(Error::Empty("no conditioning rows".into()));
    }
    net.check_schedule(schedule)?;
    let c = net.project_representation(h)?;
    let shape = [n, cfg.image_channels, cfg.image_size, cfg.image_size];
    let mut x: Tensor<f32> = randn(&shape, rng);
    for t in (0..schedule.steps()).rev() {
        let beta = schedule.beta()[t];
        let alpha = schedule.alpha()[t];
        let coef = beta / (1.0 - schedule.alpha_bar()[t]).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        let mut next = Vec::with_capacity(x.numel());
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + SAMPLE_CHUNK).min(n)).collect();
            let xc = x.select_rows(&idx);
            let eps = net.denoise(&xc, &vec![t; idx.len()], &c.select_rows(&idx))?;
            next.extend(
                xc.data()
                    .iter()
                    .zip(eps.data())
                    .map(|(&xv, &e)| (inv_sqrt_alpha * (xv as f64 - coef * e as f64)) as f32),
            );
            start += SAMPLE_CHUNK;
        }
        if t > 0 {
            for v in next.iter_mut() {
                *v += (sigma * normal(rng)) as f32;
            }
        }
        x = Tensor::new(shape.to_vec(), next);
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at step {t}")));
        }
    }
    ImageBatch::clamped(x)
}

/// `count` samples conditioned on a single representation.
pub fn sample_conditional(
    net: &DenoiserNetwork,
    h: &[f32],
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    count: usize,
) -> Result<ImageBatch> {
    if count == 0 {
        return Err(Error::InvalidRange("sample count must be at least 1".into()));
    }
    if h.len() != net.config().rep_dim {
        return Err(Error::DimensionMismatch {
            expected: net.config().rep_dim,
            got: h.len(),
        });
    }
    let rows = Tensor::new(vec![count, h.len()], h.repeat(count));
    sample_batch(net, &rows, schedule, rng)
}

/// `(1 − λ)·h1 + λ·h2`
pub fn interpolate(h1: &[f32], h2: &[f32], lam: f64) -> Result<Vec<f32>> {
    if h1.len() != h2.len() {
        return Err(Error::DimensionMismatch {
            expected: h1.len(),
            got: h2.len(),
        });
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidRange(format!("interpolation weight {lam}")));
    }
    Ok(h1
        .iter()
        .zip(h2)
        .map(|(&a, &b)| ((1.0 - lam) * a as f64 + lam * b as f64) as f32)
        .collect())
}

/// Isotropic Gaussian kernel density over a bank of representations;
/// `sigma` is the per-dimension standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    bank: Tensor<f32>,
    sigma: f64,
}

pub const DEFAULT_KDE_SIGMA: f64 = 0.01;

pub fn kde_fit(bank: &Tensor<f32>, sigma: f64) -> Result<KdeModel> {
    if bank.rank() != 2 || bank.rows() == 0 || bank.shape()[1] == 0 {
        return Err(Error::Empty("KDE bank needs at least one non-empty row".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidRange(format!("KDE bandwidth {sigma}")));
    }
    Ok(KdeModel {
        bank: bank.clone(),
        sigma,
    })
}

impl KdeModel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn bank(&self) -> &Tensor<f32> {
        &self.bank
    }

    pub fn dim(&self) -> usize {
        self.bank.shape()[1]
    }

    /// Log density, evaluated with log-sum-exp so large `K` does not overflow.
    pub fn log_density(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: h.len(),
            });
        }
        let var = self.sigma * self.sigma;
        let k = self.dim() as f64;
        let log_norm = -0.5 * k * (2.0 * std::f64::consts::PI * var).ln();
        let terms: Vec<f64> = (0..self.bank.rows())
            .map(|i| {
                let d2: f64 = self.bank.row(i).iter().zip(h).map(|(&b, &x)| (x - b as f64).powi(2)).sum();
                -d2 / (2.0 * var)
            })
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        Ok(log_norm + lse - (self.bank.rows() as f64).ln())
    }

    pub fn density(&self, h: &[f64]) -> Result<f64> {
        Ok(self.log_density(h)?.exp())
    }
}

/// Each row is a uniformly chosen bank row plus `sigma`-scaled Gaussian noise.
pub fn kde_sample(model: &KdeModel, rng: &mut Rng, count: usize) -> Result<Tensor<f32>> {
    if count == 0 {
        return Err(Error::InvalidRange("sample count must be at least 1".into()));
    }
    let k = model.dim();
    let mut out = Vec::with_capacity(count * k);
    for _ in 0..count {
        let i = rng.random_range(0..model.bank.rows());
        for &b in model.bank.row(i) {
            out.push((b as f64 + model.sigma * normal(rng)) as f32);
        }
    }
    Ok(Tensor::new(vec![count, k], out))
}
