//! Representation banks, nearest neighbours and dimension-level edits.

use rcdm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::encoders::Source;
use crate::error::{Error, Result};
use crate::nn::Fingerprint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SquaredL2,
    /// `1 − cos`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "squared-l2" | "l2" => Ok(Metric::SquaredL2),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::Config(format!("unknown metric {s}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::SquaredL2 => "squared-l2",
            Metric::Cosine => "cosine",
        }
    }

    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::SquaredL2 => a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }
}

/// Immutable set of representations with unique integer ids.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationBank {
    reps: Tensor<f32>,
    ids: Vec<u64>,
    labels: Option<Vec<usize>>,
    pub source: Option<Source>,
    pub encoder: Option<Fingerprint>,
}

impl RepresentationBank {
    pub fn new(reps: Tensor<f32>, ids: Vec<u64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if reps.rank() != 2 {
            return Err(Error::ShapeMismatch(format!("bank must be rank 2, got {:?}", reps.shape())));
        }
        if ids.len() != reps.rows() || labels.as_ref().is_some_and(|l| l.len() != reps.rows()) {
            return Err(Error::ShapeMismatch(format!(
                "{} rows, {} ids, {:?} labels",
                reps.rows(),
                ids.len(),
                labels.as_ref().map(Vec::len)
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("bank ids must be unique".into()));
        }
        Ok(Self {
            reps,
            ids,
            labels,
            source: None,
            encoder: None,
        })
    }

    /// Bank with ids `0..n`.
    pub fn from_rows(reps: Tensor<f32>) -> Result<Self> {
        let ids = (0..reps.rows() as u64).collect();
        Self::new(reps, ids, None)
    }

    pub fn with_origin(mut self, source: Source, encoder: Fingerprint) -> Self {
        self.source = Some(source);
        self.encoder = Some(encoder);
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reps.shape()[1]
    }

    pub fn reps(&self) -> &Tensor<f32> {
        &self.reps
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn position(&self, id: u64) -> Result<usize> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn get(&self, id: u64) -> Result<&[f32]> {
        Ok(self.reps.row(self.position(id)?))
    }

    fn check_query(&self, h: &[f32]) -> Result<()> {
        if h.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: h.len(),
            });
        }
        Ok(())
    }

    /// Distance from `h` to every row, in bank order.
    pub fn distances(&self, h: &[f32], metric: Metric) -> Result<Vec<f64>> {
        self.check_query(h)?;
        Ok((0..self.len()).map(|i| metric.distance(h, self.reps.row(i))).collect())
    }
}

/// Ids of the `k` nearest rows by ascending distance; ties go to the lower id.
pub fn knn(h: &[f32], bank: &RepresentationBank, k: usize, metric: Metric) -> Result<Vec<u64>> {
    if k == 0 || k > bank.len() {
        return Err(Error::InvalidRange(format!("k = {k} for a bank of {}", bank.len())));
    }
    let d = bank.distances(h, metric)?;
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(bank.ids[a].cmp(&bank.ids[b])));
    Ok(order[..k].iter().map(|&i| bank.ids[i]).collect())
}

/// Per-dimension count of rows with `|value| > zero_tol`.
pub fn nonzero_counts(reps: &Tensor<f32>, zero_tol: f64) -> Result<Vec<usize>> {
    if reps.rank() != 2 {
        return Err(Error::ShapeMismatch(format!("expected (k, K), got {:?}", reps.shape())));
    }
    if !(zero_tol >= 0.0) {
        return Err(Error::InvalidRange(format!("zero tolerance {zero_tol}")));
    }
    let k = reps.shape()[1];
    let mut counts = vec![0; k];
    for i in 0..reps.rows() {
        for (c, &v) in counts.iter_mut().zip(reps.row(i)) {
            if (v as f64).abs() > zero_tol {
                *c += 1;
            }
        }
    }
    Ok(counts)
}

fn ranked_dims(reps: &Tensor<f32>, top_m: usize, zero_tol: f64, most: bool) -> Result<Vec<usize>> {
    let counts = nonzero_counts(reps, zero_tol)?;
    if top_m == 0 || top_m > counts.len() {
        return Err(Error::InvalidRange(format!("top_m = {top_m} for {} dimensions", counts.len())));
    }
    let mut dims: Vec<usize> = (0..counts.len()).collect();
    dims.sort_by(|&a, &b| {
        let by_count = if most { counts[b].cmp(&counts[a]) } else { counts[a].cmp(&counts[b]) };
        by_count.then(a.cmp(&b))
    });
    dims.truncate(top_m);
    Ok(dims)
}

/// The `top_m` dimensions most often non-zero across the rows.
pub fn common_nonzero_dims(reps: &Tensor<f32>, top_m: usize, zero_tol: f64) -> Result<Vec<usize>> {
    ranked_dims(reps, top_m, zero_tol, true)
}

/// The `top_m` dimensions least often non-zero across the rows.
pub fn least_common_nonzero_dims(reps: &Tensor<f32>, top_m: usize, zero_tol: f64) -> Result<Vec<usize>> {
    ranked_dims(reps, top_m, zero_tol, false)
}

/// Default mask size: 10% of the dimensions, at least one.
pub fn default_top_m(k: usize) -> usize {
    (k / 10).max(1)
}

fn check_dims(dims: &[usize], k: usize) -> Result<()> {
    match dims.iter().find(|&&d| d >= k) {
        Some(d) => Err(Error::IndexOutOfRange(format!("dimension {d} of {k}"))),
        None => Ok(()),
    }
}

pub fn zero_dims(h: &[f32], dims: &[usize]) -> Result<Vec<f32>> {
    check_dims(dims, h.len())?;
    let mut out = h.to_vec();
    for &d in dims {
        out[d] = 0.0;
    }
    Ok(out)
}

pub fn swap_dims(h: &[f32], donor: &[f32], dims: &[usize]) -> Result<Vec<f32>> {
    if h.len() != donor.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: donor.len(),
        });
    }
    check_dims(dims, h.len())?;
    let mut out = h.to_vec();
    for &d in dims {
        out[d] = donor[d];
    }
    Ok(out)
}

/// `h_base + (h_plus − h_minus)`; the difference is formed first so equal
/// operands cancel exactly.
pub fn rep_algebra(h_base: &[f32], h_plus: &[f32], h_minus: &[f32]) -> Result<Vec<f32>> {
    for other in [h_plus, h_minus] {
        if other.len() != h_base.len() {
            return Err(Error::DimensionMismatch {
                expected: h_base.len(),
                got: other.len(),
            });
        }
    }
    Ok(h_base
        .iter()
        .zip(h_plus.iter().zip(h_minus))
        .map(|(&b, (&p, &m))| b + (p - m))
        .collect())
}
