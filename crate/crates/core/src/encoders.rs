//! Toy image encoders with a convolutional backbone and an MLP projector,
//! in random-init, supervised and contrastive flavours.

use rand::seq::SliceRandom;
use rcdm_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::data::Dataset;
use crate::denoiser::check_same_layout;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::{uniform_init, Adam, AdamConfig, Bound, Fingerprint, ParamId, ParamStore, TrainLog, TrainLogEntry};
use crate::rng::{seeded, Rng};

/// Which encoder output a representation was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Backbone,
    Projector,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Backbone => "backbone",
            Source::Projector => "projector",
        }
    }

    pub fn parse(s: &str) -> Result<Source> {
        match s {
            "backbone" => Ok(Source::Backbone),
            "projector" => Ok(Source::Projector),
            _ => Err(Error::Config(format!("unknown representation source {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Random,
    Supervised,
    Ssl,
}

impl Provenance {
    pub fn parse(s: &str) -> Result<Provenance> {
        match s {
            "random" => Ok(Provenance::Random),
            "supervised" => Ok(Provenance::Supervised),
            "ssl" => Ok(Provenance::Ssl),
            _ => Err(Error::Config(format!("unknown encoder flavour {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_channels: usize,
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    /// L2-normalise projector rows.
    pub normalize_projector: bool,
    /// Size of the classification head on the backbone; 0 for none.
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            image_size: 32,
            widths: vec![16, 32, 64, 128],
            strides: vec![1, 2, 2, 2],
            projector_hidden: 128,
            projector_dim: 32,
            normalize_projector: false,
            num_classes: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::Config("encoder widths and strides must be non-empty and aligned".into()));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::Config("encoder widths and strides must be positive".into()));
        }
        if self.projector_hidden == 0 || self.projector_dim == 0 || self.image_size == 0 {
            return Err(Error::Config("projector sizes and image size must be positive".into()));
        }
        Ok(())
    }

    pub fn backbone_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Clone, Debug)]
struct Layout {
    convs: Vec<(ParamId, ParamId)>,
    proj1: (ParamId, ParamId),
    proj2: (ParamId, ParamId),
    head: Option<(ParamId, ParamId)>,
}

fn build_layout<T: Real>(cfg: &EncoderConfig, rng: &mut Rng) -> (Layout, ParamStore<T>) {
    let mut store = ParamStore::new();
    let linear = |store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut Rng| {
        let w = store.add(format!("{name}.w"), uniform_init(&[cout, cin], cin, rng));
        let b = store.add(format!("{name}.b"), uniform_init(&[cout], cin, rng));
        (w, b)
    };
    let mut convs = Vec::new();
    let mut cin = cfg.image_channels;
    for (i, &w) in cfg.widths.iter().enumerate() {
        let fan = cin * 9;
        let wid = store.add(format!("conv{i}.w"), uniform_init(&[w, cin, 3, 3], fan, rng));
        let bid = store.add(format!("conv{i}.b"), uniform_init(&[w], fan, rng));
        convs.push((wid, bid));
        cin = w;
    }
    let proj1 = linear(&mut store, "proj1", cin, cfg.projector_hidden, rng);
    let proj2 = linear(&mut store, "proj2", cfg.projector_hidden, cfg.projector_dim, rng);
    let head = (cfg.num_classes > 0).then(|| linear(&mut store, "head", cin, cfg.num_classes, rng));
    (
        Layout {
            convs,
            proj1,
            proj2,
            head,
        },
        store,
    )
}

/// A batch of representations tagged with where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RepBatch {
    pub values: Tensor<f32>,
    pub source: Source,
    pub encoder: Fingerprint,
}

impl RepBatch {
    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn count(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<T = f32> {
    cfg: EncoderConfig,
    provenance: Provenance,
    augment: Option<AugmentPolicy>,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Encoder<T> {
    /// Randomly initialised encoder.
    pub fn new(cfg: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (layout, params) = build_layout(&cfg, rng);
        Ok(Self {
            cfg,
            provenance: Provenance::Random,
            augment: None,
            params,
            layout,
        })
    }

    pub fn from_params(
        cfg: EncoderConfig,
        provenance: Provenance,
        augment: Option<AugmentPolicy>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (layout, template) = build_layout::<T>(&cfg, &mut seeded(0));
        check_same_layout(&template, &params)?;
        Ok(Self {
            cfg,
            provenance,
            augment,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn augment_policy(&self) -> Option<&AugmentPolicy> {
        self.augment.as_ref()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.params.fingerprint()
    }

    pub fn backbone_dim(&self) -> usize {
        self.cfg.backbone_dim()
    }

    pub fn projector_dim(&self) -> usize {
        self.cfg.projector_dim
    }

    pub fn dim(&self, source: Source) -> usize {
        match source {
            Source::Backbone => self.backbone_dim(),
            Source::Projector => self.projector_dim(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.cfg.image_channels, self.cfg.image_size, self.cfg.image_size]
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            cfg: self.cfg.clone(),
            provenance: self.provenance,
            augment: self.augment.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1..] != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects (n, {:?}), got {shape:?}",
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub fn backbone_graph(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for (&(w, b), &s) in self.layout.convs.iter().zip(&self.cfg.strides) {
            h = g.conv2d(h, p.var(w), Some(p.var(b)), s, 1);
            h = g.relu(h);
        }
        g.global_avg_pool(h)
    }

    pub fn projector_graph(&self, g: &mut Graph<T>, p: &Bound, b: Var) -> Var {
        let (w1, b1) = self.layout.proj1;
        let (w2, b2) = self.layout.proj2;
        let h = g.linear(b, p.var(w1), Some(p.var(b1)));
        let h = g.relu(h);
        let z = g.linear(h, p.var(w2), Some(p.var(b2)));
        if self.cfg.normalize_projector {
            g.l2_normalize_rows(z)
        } else {
            z
        }
    }

    pub fn head_graph(&self, g: &mut Graph<T>, p: &Bound, b: Var) -> Option<Var> {
        self.layout
            .head
            .map(|(w, bias)| g.linear(b, p.var(w), Some(p.var(bias))))
    }

    /// Representation of the requested source on a graph.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var, source: Source) -> Var {
        let b = self.backbone_graph(g, p, x);
        match source {
            Source::Backbone => b,
            Source::Projector => self.projector_graph(g, p, b),
        }
    }

    /// Encodes a raw tensor batch in chunks.
    pub fn encode_tensor(&self, x: &Tensor<T>, source: Source) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let chunk = 256;
        let mut parts = Vec::new();
        let n = x.rows();
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant(x.select_rows(&idx));
            let out = self.forward(&mut g, &p, xv, source);
            parts.push(g.value(out).clone());
            start += chunk;
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.dim(source)]));
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(Tensor::stack_rows(&refs))
    }

    /// Projector applied to given backbone representations.
    pub fn project(&self, backbone: &Tensor<T>) -> Result<Tensor<T>> {
        if backbone.rank() != 2 || backbone.shape()[1] != self.backbone_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.backbone_dim(),
                got: backbone.shape().last().copied().unwrap_or(0),
            });
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let b = g.constant(backbone.clone());
        let z = self.projector_graph(&mut g, &p, b);
        Ok(g.value(z).clone())
    }
}

impl Encoder<f32> {
    /// Backbone representations.
    pub fn encode(&self, x: &ImageBatch) -> Result<RepBatch> {
        self.encode_source(x, Source::Backbone)
    }

    /// Projector representations.
    pub fn encode_projector(&self, x: &ImageBatch) -> Result<RepBatch> {
        self.encode_source(x, Source::Projector)
    }

    pub fn encode_source(&self, x: &ImageBatch, source: Source) -> Result<RepBatch> {
        let values = self.encode_tensor(x.tensor(), source)?;
        if !values.all_finite() {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(RepBatch {
            values,
            source,
            encoder: self.fingerprint(),
        })
    }

    /// Softmax class probabilities from the classification head.
    pub fn class_probabilities(&self, x: &ImageBatch) -> Result<Tensor<f32>> {
        let b = self.encode(x)?.values;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let bv = g.constant(b);
        let logits = self
            .head_graph(&mut g, &p, bv)
            .ok_or_else(|| Error::Unsupported("encoder has no classification head".into()))?;
        let mut probs = g.value(logits).clone();
        let k = self.cfg.num_classes;
        for row in probs.data_mut().chunks_mut(k) {
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: f32 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(probs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
    pub augment: AugmentPolicy,
    /// Fraction of images kept out of training to measure the contrastive loss.
    pub holdout_fraction: f64,
    /// Required drop of the held-out loss below the random-init encoder's.
    pub margin: f64,
    pub log_every: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 64,
            temperature: 0.1,
            adam: AdamConfig::default(),
            augment: AugmentPolicy::default(),
            holdout_fraction: 0.1,
            margin: 0.1,
            log_every: 50,
        }
    }
}

/// Normalised temperature-scaled cross entropy over `2B` rows where rows
/// `i` and `i + B` are views of the same image.
pub fn nt_xent_graph<T: Real>(g: &mut Graph<T>, z: Var, temperature: f64) -> Var {
    let n = g.shape(z)[0];
    let b = n / 2;
    let zn = g.l2_normalize_rows(z);
    let sim = g.matmul_t(zn, zn);
    let sim = g.scale(sim, T::lit(1.0 / temperature));
    let mask = Tensor::from_fn(&[n, n], |i| if i / n == i % n { T::lit(-1e9) } else { T::zero() });
    let mask = g.constant(mask);
    let logits = g.add(sim, mask);
    let targets: Vec<usize> = (0..n).map(|i| (i + b) % n).collect();
    g.cross_entropy(logits, &targets)
}

fn two_views(images: &ImageBatch, idx: &[usize], policy: &AugmentPolicy, rng: &mut Rng) -> Tensor<f32> {
    let batch = images.select(idx);
    let v1 = policy.apply_batch(&batch, rng);
    let v2 = policy.apply_batch(&batch, rng);
    Tensor::stack_rows(&[v1.tensor(), v2.tensor()])
}

fn contrastive_loss(enc: &Encoder<f32>, views: &Tensor<f32>, temperature: f64) -> f64 {
    let mut g = Graph::new();
    let p = enc.params.bind(&mut g, false);
    let x = g.constant(views.clone());
    let z = enc.forward(&mut g, &p, x, Source::Projector);
    let l = nt_xent_graph(&mut g, z, temperature);
    g.value(l).item() as f64
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss {loss} at step {step}")));
    }
    Ok(())
}

/// Contrastive training with two augmented views per image.
pub fn train_ssl(data: &ImageBatch, enc_cfg: EncoderConfig, cfg: &SslConfig, rng: &mut Rng) -> Result<(Encoder, TrainLog)> {
    if data.count() < 2 {
        return Err(Error::Config(format!(
            "contrastive training needs at least 2 images, got {}",
            data.count()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("contrastive batch size must be at least 2".into()));
    }
    cfg.augment.validate()?;
    let mut enc = Encoder::new(enc_cfg, rng)?;
    enc.check_input(data.tensor().shape())?;
    enc.provenance = Provenance::Ssl;
    enc.augment = Some(cfg.augment.clone());

    let n = data.count();
    let held = ((n as f64 * cfg.holdout_fraction).floor() as usize).min(n);
    let (train_idx, held_idx): (Vec<usize>, Vec<usize>) = if held >= 2 && n - held >= 2 {
        ((0..n - held).collect(), (n - held..n).collect())
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    let eval_idx: Vec<usize> = held_idx.iter().copied().take(cfg.batch_size.max(2)).collect();
    let eval_views = two_views(data, &eval_idx, &cfg.augment, &mut seeded(0x5eed));
    let initial = contrastive_loss(&enc, &eval_views, cfg.temperature);

    let mut log = TrainLog::default();
    let mut adam = Adam::for_store(cfg.adam, &enc.params);
    let bs = cfg.batch_size.min(train_idx.len());
    let mut order = train_idx.clone();
    let mut cursor = order.len();
    for step in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + bs];
        cursor += bs;
        let views = two_views(data, idx, &cfg.augment, rng);
        let mut g = Graph::new();
        let p = enc.params.bind(&mut g, true);
        let x = g.constant(views);
        let z = enc.forward(&mut g, &p, x, Source::Projector);
        let loss = nt_xent_graph(&mut g, z, cfg.temperature);
        let lv = g.value(loss).item() as f64;
        check_finite(lv, step)?;
        let grads = g.backward(loss);
        let gs = p.collect(&g, &grads);
        adam.update(&mut enc.params, &gs);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log.entries.push(TrainLogEntry { step, loss: lv });
        }
    }
    let final_loss = contrastive_loss(&enc, &eval_views, cfg.temperature);
    check_finite(final_loss, cfg.steps)?;
    log.summary.push(("heldout_loss_initial".into(), initial));
    log.summary.push(("heldout_loss_final".into(), final_loss));
    if initial - final_loss < cfg.margin {
        return Err(Error::NotConverged(format!(
            "held-out contrastive loss {final_loss:.4} not below random-init {initial:.4} by margin {}",
            cfg.margin
        )));
    }
    Ok((enc, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Optional augmentation of training batches.
    pub augment: Option<AugmentPolicy>,
    pub log_every: usize,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 64,
            adam: AdamConfig::default(),
            augment: None,
            log_every: 50,
        }
    }
}

/// Cross-entropy training of the backbone with a linear classification head.
pub fn train_supervised(
    data: &Dataset,
    enc_cfg: EncoderConfig,
    cfg: &SupervisedConfig,
    rng: &mut Rng,
) -> Result<(Encoder, TrainLog)> {
    let labels = data
        .labels
        .as_ref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Config("supervised training needs labels".into()))?;
    let classes = data.num_classes();
    if classes == 0 || labels.iter().any(|&l| l >= classes) {
        return Err(Error::Config(format!("labels must lie in 0..{classes}")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut enc = Encoder::new(
        EncoderConfig {
            num_classes: classes,
            ..enc_cfg
        },
        rng,
    )?;
    enc.check_input(data.images.tensor().shape())?;
    enc.provenance = Provenance::Supervised;
    enc.augment = cfg.augment.clone();

    let n = data.len();
    let mut log = TrainLog::default();
    let mut adam = Adam::for_store(cfg.adam, &enc.params);
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for step in 0..cfg.steps {
        if cursor + bs > n {
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + bs];
        cursor += bs;
        let mut batch = data.images.select(idx);
        if let Some(policy) = &cfg.augment {
            batch = policy.apply_batch(&batch, rng);
        }
        let targets: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut g = Graph::new();
        let p = enc.params.bind(&mut g, true);
        let x = g.constant(batch.into_tensor());
        let b = enc.backbone_graph(&mut g, &p, x);
        let logits = enc.head_graph(&mut g, &p, b).expect("head present");
        let loss = g.cross_entropy(logits, &targets);
        let lv = g.value(loss).item() as f64;
        check_finite(lv, step)?;
        let grads = g.backward(loss);
        let gs = p.collect(&g, &grads);
        adam.update(&mut enc.params, &gs);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log.entries.push(TrainLogEntry { step, loss: lv });
        }
    }
    let acc = accuracy(&enc.class_probabilities(&data.images)?, labels);
    log.summary.push(("train_accuracy".into(), acc));
    Ok((enc, log))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(scores: &Tensor<f32>, labels: &[usize]) -> f64 {
    let hits = (0..scores.rows())
        .filter(|&i| argmax(scores.row(i)) == labels[i])
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Index of the largest value; the lower index wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_shapes;

    fn small() -> EncoderConfig {
        EncoderConfig {
            image_size: 16,
            widths: vec![8, 16],
            strides: vec![1, 2],
            projector_hidden: 16,
            projector_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn desk_default_dims() {
        let enc = Encoder::<f32>::new(EncoderConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(enc.backbone_dim(), 128);
        assert_eq!(enc.projector_dim(), 32);
    }

    #[test]
    fn projector_composes_with_backbone() {
        let enc = Encoder::<f32>::new(small(), &mut seeded(1)).unwrap();
        let d = generate_shapes(4, 2, 16).unwrap();
        let b = enc.encode(&d.images).unwrap();
        let z = enc.encode_projector(&d.images).unwrap();
        assert_eq!(enc.project(&b.values).unwrap(), z.values);
        assert_eq!(z.dim(), 8);
        assert_eq!(b.encoder, enc.fingerprint());
    }

    #[test]
    fn duplicated_rows_encode_identically() {
        let enc = Encoder::<f32>::new(small(), &mut seeded(1)).unwrap();
        let d = generate_shapes(1, 2, 16).unwrap();
        let twice = ImageBatch::concat(&[&d.images, &d.images]);
        let h = enc.encode(&twice).unwrap().values;
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn normalized_projector_rows_have_unit_norm() {
        let cfg = EncoderConfig {
            normalize_projector: true,
            ..small()
        };
        let enc = Encoder::<f32>::new(cfg, &mut seeded(1)).unwrap();
        let d = generate_shapes(5, 3, 16).unwrap();
        let z = enc.encode_projector(&d.images).unwrap().values;
        for i in 0..5 {
            let n: f32 = z.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_spatial_size() {
        let enc = Encoder::<f32>::new(small(), &mut seeded(1)).unwrap();
        let d = generate_shapes(1, 2, 32).unwrap();
        assert!(matches!(enc.encode(&d.images), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn degenerate_contrastive_setups_are_config_errors() {
        let d = generate_shapes(1, 2, 16).unwrap();
        let cfg = SslConfig {
            batch_size: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_ssl(&d.images, small(), &cfg, &mut seeded(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unlabeled_supervised_is_config_error() {
        let mut d = generate_shapes(4, 2, 16).unwrap();
        d.labels = None;
        let r = train_supervised(&d, small(), &SupervisedConfig::default(), &mut seeded(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn nt_xent_prefers_matching_views() {
        let mut g = Graph::<f64>::new();
        let good = g.constant(Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]));
        let bad = g.constant(Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]));
        let lg = nt_xent_graph(&mut g, good, 0.1);
        let lb = nt_xent_graph(&mut g, bad, 0.1);
        assert!(g.value(lg).item() < 1e-3);
        assert!(g.value(lb).item() > 10.0);
    }
}
