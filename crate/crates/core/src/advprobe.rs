//! Linear probes on frozen representations and fast-gradient-sign attacks
//! against them.

use rand::seq::SliceRandom;
use rcdm_tensor::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::denoiser::DenoiserNetwork;
use crate::diffmap::{DiffMap, EncoderMap};
use crate::encoders::{argmax, Encoder, Source};
use crate::error::{Error, Result};
use crate::faitheval::rank_of_conditioning;
use crate::generation::sample_batch;
use crate::image::ImageBatch;
use crate::nn::{Adam, AdamConfig, Fingerprint, ParamStore, TrainLog, TrainLogEntry};
use crate::repops::{Metric, RepresentationBank};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `(classes, K)`
    pub weight: Tensor<f32>,
    pub bias: Vec<f32>,
    pub encoder: Fingerprint,
    pub source: Source,
    pub train_accuracy: f64,
}

impl LinearProbe {
    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `(n, classes)` affine scores.
    pub fn scores(&self, reps: &Tensor<f32>) -> Result<Tensor<f32>> {
        if reps.rank() != 2 || reps.shape()[1] != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: reps.shape().last().copied().unwrap_or(0),
            });
        }
        let c = self.num_classes();
        let mut out = Vec::with_capacity(reps.rows() * c);
        for i in 0..reps.rows() {
            let r = reps.row(i);
            for k in 0..c {
                let s: f64 = self.weight.row(k).iter().zip(r).map(|(&w, &x)| w as f64 * x as f64).sum();
                out.push((s + self.bias[k] as f64) as f32);
            }
        }
        Ok(Tensor::new(vec![reps.rows(), c], out))
    }

    pub fn predict_reps(&self, reps: &Tensor<f32>) -> Result<Vec<usize>> {
        let s = self.scores(reps)?;
        Ok((0..s.rows()).map(|i| argmax(s.row(i))).collect())
    }

    pub fn check_encoder(&self, encoder: &Encoder) -> Result<()> {
        let fp = encoder.fingerprint();
        if fp != self.encoder {
            return Err(Error::FingerprintMismatch(format!(
                "probe trained on encoder {}, given {}",
                self.encoder, fp
            )));
        }
        Ok(())
    }

    pub fn predict(&self, encoder: &Encoder, x: &ImageBatch) -> Result<Vec<usize>> {
        self.check_encoder(encoder)?;
        self.predict_reps(&encoder.encode_source(x, self.source)?.values)
    }

    /// `∂ NLL(label_i) / ∂ rep_i` for every row, in f64.
    fn nll_grad(&self, reps: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>> {
        let s = self.scores(reps)?;
        let (c, k) = (self.num_classes(), self.dim());
        let mut out = vec![0.0f32; reps.rows() * k];
        for i in 0..reps.rows() {
            let row = s.row(i);
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut g = vec![0.0f64; k];
            for (j, &ej) in e.iter().enumerate().take(c) {
                let dl = ej / z - if j == labels[i] { 1.0 } else { 0.0 };
                for (gk, &w) in g.iter_mut().zip(self.weight.row(j)) {
                    *gk += dl * w as f64;
                }
            }
            for (o, v) in out[i * k..(i + 1) * k].iter_mut().zip(g) {
                *o = v as f32;
            }
        }
        Ok(Tensor::new(vec![reps.rows(), k], out))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    pub log_every: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            log_every: 50,
        }
    }
}

/// Full-batch cross-entropy training of an affine classifier on fixed
/// representations.
pub fn train_probe_on_reps(
    reps: &Tensor<f32>,
    labels: &[usize],
    encoder: Fingerprint,
    source: Source,
    cfg: &ProbeConfig,
    rng: &mut Rng,
) -> Result<(LinearProbe, TrainLog)> {
    if reps.rank() != 2 || reps.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} representations for {} labels",
            reps.shape(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config("a probe needs at least two classes".into()));
    }
    let k = reps.shape()[1];
    let mut store = ParamStore::new();
    let w = store.add("weight", crate::nn::uniform_init(&[classes, k], k, rng));
    let b = store.add("bias", Tensor::zeros(&[classes]));
    let mut adam = Adam::for_store(cfg.adam, &store);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let x_all = reps.select_rows(&order);
    let y_all: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let x = g.constant(x_all.clone());
        let logits = g.linear(x, p.var(w), Some(p.var(b)));
        let loss = g.cross_entropy(logits, &y_all);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("probe loss {lv} at step {step}")));
        }
        let grads = g.backward(loss);
        adam.update(&mut store, &p.collect(&g, &grads));
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log.entries.push(TrainLogEntry { step, loss: lv });
        }
    }
    let mut probe = LinearProbe {
        weight: store.get(w).clone(),
        bias: store.get(b).data().to_vec(),
        encoder,
        source,
        train_accuracy: 0.0,
    };
    let pred = probe.predict_reps(reps)?;
    probe.train_accuracy = pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
    log.summary.push(("train_accuracy".into(), probe.train_accuracy));
    Ok((probe, log))
}

pub fn train_probe(
    encoder: &Encoder,
    data: &Dataset,
    source: Source,
    cfg: &ProbeConfig,
    rng: &mut Rng,
) -> Result<(LinearProbe, TrainLog)> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingLabels("probe training needs labels".into()))?;
    let reps = encoder.encode_source(&data.images, source)?.values;
    train_probe_on_reps(&reps, labels, encoder.fingerprint(), source, cfg, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackGoal {
    /// Ascend the loss of the given labels.
    Untargeted,
    /// Descend the loss of the given labels.
    Targeted,
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One fast-gradient-sign step against `probe ∘ f`, clamped to `[-1, 1]`.
/// `labels` are the true labels, or the target classes when `goal` is
/// targeted.
pub fn fgsm_map<M: DiffMap<f32>>(
    x: &ImageBatch,
    labels: &[usize],
    f: &M,
    probe: &LinearProbe,
    epsilon: f64,
    goal: AttackGoal,
) -> Result<ImageBatch> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidRange(format!("epsilon {epsilon}")));
    }
    if labels.len() != x.count() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} images", labels.len(), x.count())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= probe.num_classes()) {
        return Err(Error::IndexOutOfRange(format!("class {l} of {}", probe.num_classes())));
    }
    if f.output_dim() != probe.dim() {
        return Err(Error::DimensionMismatch {
            expected: probe.dim(),
            got: f.output_dim(),
        });
    }
    if epsilon == 0.0 {
        return Ok(x.clone());
    }
    let mut err = None;
    let (_, grad) = f.value_and_vjp(x.tensor(), &mut |reps| match probe.nll_grad(reps, labels) {
        Ok(g) => g,
        Err(e) => {
            err = Some(e);
            Tensor::zeros(reps.shape())
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("attack gradient".into()));
    }
    let dir = match goal {
        AttackGoal::Untargeted => 1.0,
        AttackGoal::Targeted => -1.0,
    };
    let eps = epsilon as f32;
    let out = x.tensor().zip_map(&grad, |v, g| (v + dir * eps * sign(g)).clamp(-1.0, 1.0));
    ImageBatch::new(out)
}

pub fn fgsm(
    x: &ImageBatch,
    labels: &[usize],
    encoder: &Encoder,
    probe: &LinearProbe,
    epsilon: f64,
    goal: AttackGoal,
) -> Result<ImageBatch> {
    probe.check_encoder(encoder)?;
    fgsm_map(x, labels, &EncoderMap::new(encoder, probe.source), probe, epsilon, goal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub predictions: Vec<usize>,
    /// Fraction of attacked images the probe still labels correctly.
    pub accuracy: f64,
    /// Mean `‖f(x_adv) − f(x)‖₂` over the batch.
    pub rep_distance: f64,
    /// Rank of each clean image among bank neighbours of its attacked
    /// representation; empty without a bank.
    pub ranks: Vec<usize>,
    /// Probe predictions on samples conditioned on the attacked representations.
    pub sample_predictions: Vec<usize>,
    #[serde(skip)]
    pub samples: Option<ImageBatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub clean_accuracy: f64,
    pub rows: Vec<SweepRow>,
    pub encoder: Fingerprint,
    pub goal: AttackGoal,
}

impl SweepReport {
    /// Whether accuracy never increases with epsilon.
    pub fn degradation_is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].accuracy <= w[0].accuracy)
    }
}

/// Conditional sampler used to visualise attacked representations.
pub struct SweepSampler<'a> {
    pub denoiser: &'a DenoiserNetwork,
    pub schedule: &'a NoiseSchedule,
}

/// Clean images identified in a bank, for neighbour ranks.
pub struct SweepBank<'a> {
    pub bank: &'a RepresentationBank,
    pub ids: &'a [u64],
    pub metric: Metric,
}

#[allow(clippy::too_many_arguments)]
pub fn attack_sweep(
    x: &ImageBatch,
    labels: &[usize],
    encoder: &Encoder,
    probe: &LinearProbe,
    epsilons: &[f64],
    goal: AttackGoal,
    bank: Option<&SweepBank<'_>>,
    sampler: Option<&SweepSampler<'_>>,
    rng: &mut Rng,
) -> Result<SweepReport> {
    if epsilons.is_empty() {
        return Err(Error::Empty("no epsilons".into()));
    }
    if epsilons.iter().any(|&e| !(e >= 0.0)) || epsilons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidRange("epsilons must be non-negative and ascending".into()));
    }
    probe.check_encoder(encoder)?;
    if let Some(b) = bank {
        if b.ids.len() != x.count() {
            return Err(Error::ShapeMismatch(format!("{} bank ids for {} images", b.ids.len(), x.count())));
        }
    }
    let correct = |pred: &[usize]| pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64;
    let clean = encoder.encode_source(x, probe.source)?.values;
    let clean_accuracy = correct(&probe.predict_reps(&clean)?);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let adv = fgsm(x, labels, encoder, probe, eps, goal)?;
        let reps = encoder.encode_source(&adv, probe.source)?.values;
        let predictions = probe.predict_reps(&reps)?;
        let rep_distance = (0..x.count())
            .map(|i| Metric::SquaredL2.distance(clean.row(i), reps.row(i)).sqrt())
            .sum::<f64>()
            / x.count().max(1) as f64;
        let ranks = match bank {
            Some(b) => (0..x.count())
                .map(|i| rank_of_conditioning(reps.row(i), b.ids[i], b.bank, b.metric))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let (samples, sample_predictions) = match sampler {
            Some(s) => {
                let imgs = sample_batch(s.denoiser, &reps, s.schedule, rng)?;
                let p = probe.predict(encoder, &imgs)?;
                (Some(imgs), p)
            }
            None => (None, Vec::new()),
        };
        rows.push(SweepRow {
            epsilon: eps,
            accuracy: correct(&predictions),
            predictions,
            rep_distance,
            ranks,
            sample_predictions,
            samples,
        });
    }
    Ok(SweepReport {
        clean_accuracy,
        rows,
        encoder: encoder.fingerprint(),
        goal,
    })
}
