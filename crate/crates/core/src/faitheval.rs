//! Evaluation: retrieval rank and MRR of conditioning items, distance
//! reference suites, augmentation-invariance probes and Fréchet / entropy
//! scores over pluggable features.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rcdm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPolicy, Transform};
use crate::data::{Dataset, ShapeFactors, PALETTE, SHAPE_CENTERS, SHAPE_CLASSES, SHAPE_SCALES};
use crate::encoders::{Encoder, Source};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::Fingerprint;
use crate::repops::{Metric, RepresentationBank};
use crate::rng::Rng;

/// `1 +` the number of bank entries strictly closer to `h` than the
/// conditioning entry.
pub fn rank_of_conditioning(h: &[f32], conditioning_id: u64, bank: &RepresentationBank, metric: Metric) -> Result<usize> {
    let pos = bank.position(conditioning_id)?;
    let d = bank.distances(h, metric)?;
    let own = d[pos];
    Ok(1 + d.iter().filter(|&&v| v < own).count())
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("no ranks".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidRange("ranks start at 1".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub ranks: Vec<usize>,
    pub mean_rank: f64,
    pub mrr: f64,
    pub bank_size: usize,
    pub metric: Metric,
}

impl FaithfulnessReport {
    pub fn from_ranks(ranks: Vec<usize>, bank_size: usize, metric: Metric) -> Result<Self> {
        if let Some(r) = ranks.iter().find(|&&r| r > bank_size) {
            return Err(Error::InvalidRange(format!("rank {r} exceeds bank size {bank_size}")));
        }
        let m = mrr(&ranks)?;
        let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
        Ok(Self {
            ranks,
            mean_rank,
            mrr: m,
            bank_size,
            metric,
        })
    }
}

impl fmt::Display for FaithfulnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>6}", "Rank", "MRR")?;
        write!(f, "{:<10.2} {:>6.2}", self.mean_rank, self.mrr)
    }
}

/// Ranks each generated representation against the conditioning id it was
/// produced from.
pub fn faithfulness(
    generated: &Tensor<f32>,
    conditioning_ids: &[u64],
    bank: &RepresentationBank,
    metric: Metric,
) -> Result<FaithfulnessReport> {
    if generated.rank() != 2 || generated.rows() != conditioning_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} generated rows for {} conditionings",
            generated.shape(),
            conditioning_ids.len()
        )));
    }
    let ranks = conditioning_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| rank_of_conditioning(generated.row(i), id, bank, metric))
        .collect::<Result<Vec<_>>>()?;
    FaithfulnessReport::from_ranks(ranks, bank.len(), metric)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceRow {
    RandomBank,
    SameClass,
    NearestTrain,
    SingleAugmentation,
    CompositeAugmentation,
    GeneratedSamples,
}

impl ReferenceRow {
    pub const ALL: [ReferenceRow; 6] = [
        ReferenceRow::RandomBank,
        ReferenceRow::SameClass,
        ReferenceRow::NearestTrain,
        ReferenceRow::SingleAugmentation,
        ReferenceRow::CompositeAugmentation,
        ReferenceRow::GeneratedSamples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReferenceRow::RandomBank => "random-bank",
            ReferenceRow::SameClass => "same-class",
            ReferenceRow::NearestTrain => "nearest-train",
            ReferenceRow::SingleAugmentation => "single-augmentation",
            ReferenceRow::CompositeAugmentation => "composite-augmentation",
            ReferenceRow::GeneratedSamples => "generated-samples",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reference row {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl DistanceStats {
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Empty("no distances".into()));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            count: v.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReferenceReport {
    pub rows: Vec<(ReferenceRow, DistanceStats)>,
    pub source: Source,
    pub encoder: Fingerprint,
}

impl DistanceReferenceReport {
    pub fn get(&self, row: ReferenceRow) -> Option<&DistanceStats> {
        self.rows.iter().find(|(r, _)| *r == row).map(|(_, s)| s)
    }
}

impl fmt::Display for DistanceReferenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:>12} {:>12} {:>6}", "reference", "mean", "std", "count")?;
        for (r, s) in &self.rows {
            write!(f, "\n{:<24} {:>12.4} {:>12.4} {:>6}", r.name(), s.mean, s.std, s.count)?;
        }
        Ok(())
    }
}

/// Images the reference suite compares against the conditioning image.
pub struct ReferenceInputs<'a> {
    /// A single conditioning image.
    pub conditioning: &'a ImageBatch,
    pub conditioning_label: Option<usize>,
    pub validation: &'a Dataset,
    pub train: &'a ImageBatch,
    pub generated: &'a ImageBatch,
    pub policy: &'a AugmentPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub random_count: usize,
    pub nearest_count: usize,
    pub composite_count: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            random_count: 100,
            nearest_count: 10,
            composite_count: 32,
        }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    Metric::SquaredL2.distance(a, b)
}

fn distances_to(h: &[f32], reps: &Tensor<f32>) -> Vec<f64> {
    (0..reps.rows()).map(|i| sq_dist(h, reps.row(i))).collect()
}

/// Squared-L2 distances from `f(conditioning)` to each requested reference set.
pub fn distance_reference_suite(
    inputs: &ReferenceInputs<'_>,
    encoder: &Encoder,
    source: Source,
    rows: &[ReferenceRow],
    cfg: &ReferenceConfig,
    rng: &mut Rng,
) -> Result<DistanceReferenceReport> {
    if inputs.conditioning.count() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected one conditioning image, got {}",
            inputs.conditioning.count()
        )));
    }
    let h = encoder.encode_source(inputs.conditioning, source)?.values;
    let h = h.row(0);
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let d = match row {
            ReferenceRow::RandomBank => {
                let n = inputs.validation.len();
                if n == 0 {
                    return Err(Error::Empty("validation set".into()));
                }
                let idx: Vec<usize> = (0..cfg.random_count.max(1)).map(|_| rng.random_range(0..n)).collect();
                let reps = encoder.encode_source(&inputs.validation.images.select(&idx), source)?.values;
                distances_to(h, &reps)
            }
            ReferenceRow::SameClass => {
                let (Some(labels), Some(c)) = (&inputs.validation.labels, inputs.conditioning_label) else {
                    return Err(Error::MissingLabels("same-class row needs labelled data".into()));
                };
                let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                if idx.is_empty() {
                    return Err(Error::MissingLabels(format!("no validation images of class {c}")));
                }
                let reps = encoder.encode_source(&inputs.validation.images.select(&idx), source)?.values;
                distances_to(h, &reps)
            }
            ReferenceRow::NearestTrain => {
                let reps = encoder.encode_source(inputs.train, source)?.values;
                let mut d = distances_to(h, &reps);
                d.sort_by(f64::total_cmp);
                d.truncate(cfg.nearest_count.max(1));
                d
            }
            ReferenceRow::SingleAugmentation => {
                let views: Vec<ImageBatch> = Transform::probe_set()
                    .iter()
                    .map(|t| t.apply_batch(inputs.conditioning))
                    .collect();
                let views = ImageBatch::concat(&views.iter().collect::<Vec<_>>());
                distances_to(h, &encoder.encode_source(&views, source)?.values)
            }
            ReferenceRow::CompositeAugmentation => {
                let idx = vec![0; cfg.composite_count.max(1)];
                let views = inputs.policy.apply_batch(&inputs.conditioning.select(&idx), rng);
                distances_to(h, &encoder.encode_source(&views, source)?.values)
            }
            ReferenceRow::GeneratedSamples => {
                if inputs.generated.count() == 0 {
                    return Err(Error::MissingArtifact("generated samples".into()));
                }
                distances_to(h, &encoder.encode_source(inputs.generated, source)?.values)
            }
        };
        out.push((row, DistanceStats::from_values(&d)?));
    }
    Ok(DistanceReferenceReport {
        rows: out,
        source,
        encoder: encoder.fingerprint(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub transform: String,
    pub source: Source,
    /// Squared-L2 distance between `f(x)` and `f(τ(x))`, averaged over images.
    pub distance: DistanceStats,
    /// `distance.mean` over the mean distance between distinct images; `None`
    /// for a single image.
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub rows: Vec<InvarianceRow>,
    pub encoder: Fingerprint,
}

impl InvarianceReport {
    pub fn get(&self, transform: &str, source: Source) -> Option<&InvarianceRow> {
        self.rows.iter().find(|r| r.transform == transform && r.source == source)
    }
}

impl fmt::Display for InvarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16} {:>14} {:>14} {:>10} {:>10}", "transform", "backbone", "projector", "bb rel", "proj rel")?;
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if seen.contains(&r.transform.as_str()) {
                continue;
            }
            seen.push(&r.transform);
            let cell = |s| self.get(&r.transform, s);
            let mean = |s| cell(s).map_or(f64::NAN, |r: &InvarianceRow| r.distance.mean);
            let rel = |s| cell(s).and_then(|r: &InvarianceRow| r.relative).unwrap_or(f64::NAN);
            write!(
                f,
                "\n{:<16} {:>14.6} {:>14.6} {:>10.4} {:>10.4}",
                r.transform,
                mean(Source::Backbone),
                mean(Source::Projector),
                rel(Source::Backbone),
                rel(Source::Projector)
            )?;
        }
        Ok(())
    }
}

fn mean_pairwise(reps: &Tensor<f32>) -> Option<f64> {
    let n = reps.rows();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sq_dist(reps.row(i), reps.row(j));
        }
    }
    Some(total / (n * (n - 1) / 2) as f64)
}

/// For every transform and both encoder outputs, the representation distance
/// between each image and its transformed copy; two rows per transform.
pub fn invariance_probe(images: &ImageBatch, transforms: &[Transform], encoder: &Encoder) -> Result<InvarianceReport> {
    if images.count() == 0 {
        return Err(Error::Empty("no probe images".into()));
    }
    let clean = [
        encoder.encode_source(images, Source::Backbone)?.values,
        encoder.encode_source(images, Source::Projector)?.values,
    ];
    let scale = [mean_pairwise(&clean[0]), mean_pairwise(&clean[1])];
    let mut rows = Vec::with_capacity(2 * transforms.len());
    for t in transforms {
        let moved = t.apply_batch(images);
        for (k, source) in [Source::Backbone, Source::Projector].into_iter().enumerate() {
            let reps = encoder.encode_source(&moved, source)?.values;
            let d: Vec<f64> = (0..images.count()).map(|i| sq_dist(clean[k].row(i), reps.row(i))).collect();
            let distance = DistanceStats::from_values(&d)?;
            let relative = scale[k].filter(|&s| s > 0.0).map(|s| distance.mean / s);
            rows.push(InvarianceRow {
                transform: t.name().to_string(),
                source,
                distance,
                relative,
            });
        }
    }
    Ok(InvarianceReport {
        rows,
        encoder: encoder.fingerprint(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFactor {
    Class,
    Foreground,
    Background,
    Scale,
    Position,
}

impl ShapeFactor {
    pub const ALL: [ShapeFactor; 5] = [
        ShapeFactor::Class,
        ShapeFactor::Foreground,
        ShapeFactor::Background,
        ShapeFactor::Scale,
        ShapeFactor::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFactor::Class => "class",
            ShapeFactor::Foreground => "foreground",
            ShapeFactor::Background => "background",
            ShapeFactor::Scale => "scale",
            ShapeFactor::Position => "position",
        }
    }

    /// A copy of `f` with this factor resampled to a different value.
    pub fn perturb(self, f: &ShapeFactors, rng: &mut Rng) -> ShapeFactors {
        let mut out = *f;
        let other = |cur: usize, n: usize, rng: &mut Rng| (cur + 1 + rng.random_range(0..n - 1)) % n;
        match self {
            ShapeFactor::Class => out.class = other(f.class, SHAPE_CLASSES.len(), rng),
            ShapeFactor::Foreground => loop {
                out.foreground = other(f.foreground, PALETTE.len(), rng);
                if out.foreground != f.background {
                    break;
                }
            },
            ShapeFactor::Background => loop {
                out.background = other(f.background, PALETTE.len(), rng);
                if out.background != f.foreground {
                    break;
                }
            },
            ShapeFactor::Scale => {
                let i = SHAPE_SCALES.iter().position(|&s| s == f.scale).unwrap_or(0);
                out.scale = SHAPE_SCALES[other(i, SHAPE_SCALES.len(), rng)];
            }
            ShapeFactor::Position => {
                let i = SHAPE_CENTERS.iter().position(|&c| c == f.center_x).unwrap_or(0);
                out.center_x = SHAPE_CENTERS[other(i, SHAPE_CENTERS.len(), rng)];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: ShapeFactor,
    pub source: Source,
    pub distance: DistanceStats,
}

/// Representation distance caused by changing one ground-truth factor of a
/// shapes image while holding the others fixed.
pub fn factor_sensitivity(encoder: &Encoder, base: &[ShapeFactors], rng: &mut Rng) -> Result<Vec<FactorRow>> {
    if base.is_empty() {
        return Err(Error::Empty("no base factors".into()));
    }
    let shape = encoder.input_shape();
    if shape[0] != 3 || shape[1] != shape[2] {
        return Err(Error::Unsupported(format!("shapes images are square RGB, encoder expects {shape:?}")));
    }
    let size = shape[1];
    let render = |fs: &[ShapeFactors]| {
        let imgs: Vec<Vec<f32>> = fs.iter().map(|f| f.render(size)).collect();
        ImageBatch::from_images(shape, &imgs)
    };
    let clean = render(base)?;
    let mut rows = Vec::new();
    for factor in ShapeFactor::ALL {
        let moved: Vec<ShapeFactors> = base.iter().map(|f| factor.perturb(f, rng)).collect();
        let moved = render(&moved)?;
        for source in [Source::Backbone, Source::Projector] {
            let a = encoder.encode_source(&clean, source)?.values;
            let b = encoder.encode_source(&moved, source)?.values;
            let d: Vec<f64> = (0..base.len()).map(|i| sq_dist(a.row(i), b.row(i))).collect();
            rows.push(FactorRow {
                factor,
                source,
                distance: DistanceStats::from_values(&d)?,
            });
        }
    }
    Ok(rows)
}

fn mean_and_cov(x: &Tensor<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.rank() != 2 || x.shape()[1] == 0 {
        return Err(Error::ShapeMismatch(format!("features must be (N, F), got {:?}", x.shape())));
    }
    let (n, f) = (x.rows(), x.shape()[1]);
    if n < 2 {
        return Err(Error::Empty("covariance needs at least two samples".into()));
    }
    let m = DMatrix::from_row_slice(n, f, x.data());
    let mean = DVector::from_iterator(f, (0..f).map(|j| m.column(j).mean()));
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

const PSD_TOL: f64 = 1e-8;

/// Eigenvalues of a symmetric matrix with small negatives (relative to the
/// largest magnitude) clipped to zero.
fn psd_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOL * scale {
                return Err(Error::NotPsd(*v));
            }
            *v = 0.0;
        }
    }
    Ok((vals, eig.eigenvectors))
}

fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = psd_eigen(m)?;
    let d = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    Ok(&vecs * d * vecs.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})` with unbiased covariances.
/// The trace term uses `(Σa^{1/2} Σb Σa^{1/2})^{1/2}`, which has the same
/// trace and stays symmetric.
pub fn frechet_distance(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (ma, ca) = mean_and_cov(a)?;
    let (mb, cb) = mean_and_cov(b)?;
    if ma.len() != mb.len() {
        return Err(Error::DimensionMismatch {
            expected: ma.len(),
            got: mb.len(),
        });
    }
    let sa = sqrtm(&ca)?;
    let inner = &sa * &cb * &sa;
    let (vals, _) = psd_eigen(&inner)?;
    let cross: f64 = vals.iter().map(|v| v.sqrt()).sum();
    let d = (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

const DISTRIBUTION_TOL: f64 = 1e-6;

/// `exp(mean_n KL(p(y|x_n) ‖ p(y)))` with `p(y)` the row mean.
pub fn inception_style_score(p: &Tensor<f64>) -> Result<f64> {
    if p.rank() != 2 || p.rows() == 0 || p.shape()[1] == 0 {
        return Err(Error::ShapeMismatch(format!("probabilities must be (N, C), got {:?}", p.shape())));
    }
    let (n, c) = (p.rows(), p.shape()[1]);
    for i in 0..n {
        let row = p.row(i);
        let s: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(Error::InvalidDistribution { row: i });
        }
    }
    let marginal: Vec<f64> = (0..c).map(|j| (0..n).map(|i| p.row(i)[j]).sum::<f64>() / n as f64).collect();
    let kl: f64 = (0..n)
        .map(|i| {
            p.row(i)
                .iter()
                .zip(&marginal)
                .filter(|(&v, _)| v > 0.0)
                .map(|(&v, &m)| v * (v / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    Ok(kl.max(0.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_bank() -> RepresentationBank {
        let reps = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        RepresentationBank::new(reps, vec![0, 1, 2], None).unwrap()
    }

    #[test]
    fn rank_examples() {
        let b = line_bank();
        assert_eq!(rank_of_conditioning(&[0.0, 0.0], 0, &b, Metric::SquaredL2).unwrap(), 1);
        assert_eq!(rank_of_conditioning(&[0.9, 0.0], 0, &b, Metric::SquaredL2).unwrap(), 2);
        let same = RepresentationBank::new(Tensor::ones(&[4, 2]), vec![0, 1, 2, 3], None).unwrap();
        assert_eq!(rank_of_conditioning(&[5.0, 5.0], 2, &same, Metric::SquaredL2).unwrap(), 1);
        assert!(matches!(
            rank_of_conditioning(&[0.0, 0.0], 9, &b, Metric::SquaredL2),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 0.583_333_333_333_333_4).abs() < 1e-15);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn report_renders_two_decimals() {
        let r = FaithfulnessReport {
            ranks: vec![],
            mean_rank: 5.654,
            mrr: 0.6871,
            bank_size: 10,
            metric: Metric::SquaredL2,
        };
        assert!(r.to_string().ends_with("5.65         0.69"));
        let r = FaithfulnessReport::from_ranks(vec![1, 1], 10, Metric::SquaredL2).unwrap();
        assert!(r.to_string().contains("1.00"));
        assert!(FaithfulnessReport::from_ranks(vec![11], 10, Metric::SquaredL2).is_err());
    }

    fn column(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len(), 1], v.to_vec())
    }

    #[test]
    fn frechet_one_dimensional() {
        let a = column(&[-1.0, 1.0]);
        let b = column(&[0.0, 2.0]);
        // Unbiased variance of {-1, 1} is 2.
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = column(&[-2.0, 2.0]);
        let expect = (2f64.sqrt() - 8f64.sqrt()).powi(2);
        assert!((frechet_distance(&a, &c).unwrap() - expect).abs() < 1e-12);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);
        assert!(frechet_distance(&column(&[1.0]), &a).is_err());
    }

    #[test]
    fn inception_examples() {
        let onehot = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((inception_style_score(&onehot).unwrap() - 2.0).abs() < 1e-12);
        let uniform = Tensor::full(&[3, 4], 0.25);
        assert!((inception_style_score(&uniform).unwrap() - 1.0).abs() < 1e-12);
        let bad = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.7, 0.7]);
        assert!(matches!(inception_style_score(&bad), Err(Error::InvalidDistribution { row: 1 })));
    }

    #[test]
    fn reference_row_names_roundtrip() {
        for r in ReferenceRow::ALL {
            assert_eq!(ReferenceRow::parse(r.name()).unwrap(), r);
        }
    }
}
