//! Representation-conditioned noise predictor.
//!
//! A small U-shaped residual network. The representation `h` is projected by
//! one affine layer to a conditioning vector `c`, and every residual block
//! modulates its (instance-)normalised features with `gamma(c) = 1 + W_gamma·c`
//! and `beta(c) = W_beta·c`. Both generators start at zero, so an untrained
//! network ignores `c` entirely.

use rcdm_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::{uniform_init, Adam, AdamConfig, Bound, Fingerprint, ParamId, ParamStore, TrainLog, TrainLogEntry};
use crate::rng::Rng;
use crate::schedule::{draw_noised_batch, make_schedule, NoisePredictor, NoiseSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_channels: usize,
    pub image_size: usize,
    /// Length `K` of the conditioning representation.
    pub rep_dim: usize,
    /// Length `C` of the projected conditioning vector.
    pub cond_dim: usize,
    pub time_dim: usize,
    /// Channel width per resolution level.
    pub widths: Vec<usize>,
    pub blocks_per_level: usize,
    pub norm_eps: f64,
    /// Scalar applied to `h` before projection; keeps `c` well scaled for
    /// encoders with small activations without breaking linearity in `h`.
    pub rep_scale: f64,
    /// Appends two constant channels holding the pixel x and y coordinates
    /// in `[-1, 1]` to the input, giving the network a spatial reference.
    #[serde(default)]
    pub coord_channels: bool,
    /// When set, the output is `√(1−ᾱ_t)·x_t + √ᾱ_t·F` for this schedule, so
    /// the convolutional trunk `F` no longer has to reproduce `x_t` itself.
    /// It is still a noise predictor trained on the same loss.
    #[serde(default)]
    pub output_skip: Option<OutputSkip>,
    /// Fixed per-dimension standardisation applied to `h` before `rep_scale`.
    #[serde(default)]
    pub rep_norm: Option<RepNorm>,
}

/// `(h − mean) ⊙ scale`, fitted once on the training representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl RepNorm {
    /// Per-dimension mean and inverse population std. Constant dimensions
    /// get scale 0.
    pub fn standardize(reps: &Tensor<f32>) -> Result<Self> {
        if reps.rank() != 2 || reps.rows() == 0 {
            return Err(Error::ShapeMismatch(format!("expected (n, K) with n > 0, got {:?}", reps.shape())));
        }
        let (n, k) = (reps.rows(), reps.row_len());
        let mut mean = vec![0.0; k];
        let mut scale = vec![0.0; k];
        for j in 0..k {
            let m = (0..n).map(|i| reps.row(i)[j] as f64).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (reps.row(i)[j] as f64 - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            scale[j] = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        }
        Ok(Self { mean, scale })
    }
}

/// Schedule parameters for [`DenoiserConfig::output_skip`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSkip {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl OutputSkip {
    pub fn of(schedule: &NoiseSchedule) -> Self {
        Self {
            steps: schedule.steps(),
            beta_min: schedule.beta_min(),
            beta_max: schedule.beta_max(),
        }
    }
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            image_size: 32,
            rep_dim: 128,
            cond_dim: 64,
            time_dim: 64,
            widths: vec![32, 64, 128],
            blocks_per_level: 2,
            norm_eps: 1e-5,
            rep_scale: 1.0,
            coord_channels: false,
            output_skip: None,
            rep_norm: None,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be non-empty and positive");
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be positive");
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad("time_dim must be even and positive");
        }
        if self.rep_dim == 0 || self.cond_dim == 0 || self.image_channels == 0 {
            return bad("rep_dim, cond_dim and image_channels must be positive");
        }
        let down = 1usize << (self.widths.len() - 1);
        if self.image_size == 0 || self.image_size % down != 0 {
            return bad("image_size must be divisible by 2^(levels-1)");
        }
        if !(self.norm_eps > 0.0) || !(self.rep_scale > 0.0) {
            return bad("norm_eps and rep_scale must be positive");
        }
        if let Some(r) = &self.rep_norm {
            if r.mean.len() != self.rep_dim || r.scale.len() != self.rep_dim {
                return bad("rep_norm length must equal rep_dim");
            }
            if r.mean.iter().chain(&r.scale).any(|v| !v.is_finite()) {
                return bad("rep_norm must be finite");
            }
        }
        if let Some(o) = self.output_skip {
            make_schedule(o.steps, o.beta_min, o.beta_max)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvParams {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct CondNormParams {
    w_gamma: ParamId,
    w_beta: ParamId,
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvParams,
    cond: CondNormParams,
    time_w: ParamId,
    time_b: ParamId,
    conv2: ConvParams,
    skip: Option<ConvParams>,
}

#[derive(Clone, Debug)]
struct Layout {
    proj_w: ParamId,
    proj_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    input: ConvParams,
    down: Vec<Vec<ResBlock>>,
    mid: ResBlock,
    up: Vec<Vec<ResBlock>>,
    output: ConvParams,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvParams {
        let fan = cin * k * k;
        let w = uniform_init(&[cout, cin, k, k], fan, self.rng);
        let b = uniform_init(&[cout], fan, self.rng);
        ConvParams {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), b),
        }
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> (ParamId, ParamId) {
        let w = uniform_init(&[cout, cin], cin, self.rng);
        let b = uniform_init(&[cout], cin, self.rng);
        (self.store.add(format!("{name}.w"), w), self.store.add(format!("{name}.b"), b))
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, cfg: &DenoiserConfig) -> ResBlock {
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3);
        let cond = CondNormParams {
            w_gamma: self
                .store
                .add(format!("{name}.cond.w_gamma"), Tensor::zeros(&[cout, cfg.cond_dim])),
            w_beta: self
                .store
                .add(format!("{name}.cond.w_beta"), Tensor::zeros(&[cout, cfg.cond_dim])),
        };
        let (time_w, time_b) = self.linear(&format!("{name}.time"), cfg.time_dim, cout);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3);
        let skip = (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1));
        ResBlock {
            conv1,
            cond,
            time_w,
            time_b,
            conv2,
            skip,
        }
    }
}

fn build_layout<T: Real>(cfg: &DenoiserConfig, rng: &mut Rng) -> (Layout, ParamStore<T>) {
    let mut b = Builder {
        store: ParamStore::new(),
        rng,
    };
    let (proj_w, proj_b) = b.linear("proj", cfg.rep_dim, cfg.cond_dim);
    let (time_w, time_b) = b.linear("time", cfg.time_dim, cfg.time_dim);
    let in_ch = cfg.image_channels + if cfg.coord_channels { 2 } else { 0 };
    let input = b.conv("input", in_ch, cfg.widths[0], 3);
    let mut ch = cfg.widths[0];
    let mut down = Vec::new();
    for (l, &w) in cfg.widths.iter().enumerate() {
        let mut level = Vec::new();
        for i in 0..cfg.blocks_per_level {
            level.push(b.block(&format!("down{l}.{i}"), ch, w, cfg));
            ch = w;
        }
        down.push(level);
    }
    let mid = b.block("mid", ch, ch, cfg);
    let mut up = vec![Vec::new(); cfg.widths.len()];
    for (l, &w) in cfg.widths.iter().enumerate().rev() {
        let mut level = Vec::new();
        for i in 0..cfg.blocks_per_level {
            let cin = if i == 0 { ch + w } else { w };
            level.push(b.block(&format!("up{l}.{i}"), cin, w, cfg));
            ch = w;
        }
        up[l] = level;
    }
    let output = b.conv("output", ch, cfg.image_channels, 3);
    let layout = Layout {
        proj_w,
        proj_b,
        time_w,
        time_b,
        input,
        down,
        mid,
        up,
        output,
    };
    (layout, b.store)
}

/// Sinusoidal timestep features: `sin` half followed by `cos` half.
pub fn timestep_embedding<T: Real>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
        out.extend(args.iter().map(|a| T::lit(a.sin())));
        out.extend(args.iter().map(|a| T::lit(a.cos())));
    }
    Tensor::new(vec![steps.len(), dim], out)
}

/// Graph form of the conditional normalisation:
/// `(1 + c·W_gammaᵀ) ⊙ normalize(x) + c·W_betaᵀ`, per channel.
pub fn conditional_norm_graph<T: Real>(g: &mut Graph<T>, x: Var, c: Var, w_gamma: Var, w_beta: Var, eps: T) -> Var {
    let normed = g.instance_norm(x, eps);
    let gamma = g.matmul_t(c, w_gamma);
    let gamma = g.add_scalar(gamma, T::one());
    let beta = g.matmul_t(c, w_beta);
    g.modulate(normed, gamma, beta)
}

/// Conditional normalisation on concrete tensors. `features` is
/// `(n, channels, h, w)`, `c` is `(n, C)`, the generators are `(channels, C)`.
pub fn conditional_norm<T: Real>(
    features: &Tensor<T>,
    c: &Tensor<T>,
    w_gamma: &Tensor<T>,
    w_beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let fs = features.shape();
    if fs.len() != 4 {
        return Err(Error::ShapeMismatch(format!("features must be rank 4, got {fs:?}")));
    }
    if c.rank() != 2 || c.rows() != fs[0] {
        return Err(Error::ShapeMismatch(format!("conditioning {:?} for {} samples", c.shape(), fs[0])));
    }
    let cdim = c.shape()[1];
    for w in [w_gamma, w_beta] {
        if w.shape() != [fs[1], cdim] {
            return Err(Error::DimensionMismatch {
                expected: fs[1] * cdim,
                got: w.numel(),
            });
        }
    }
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let cv = g.constant(c.clone());
    let wg = g.constant(w_gamma.clone());
    let wb = g.constant(w_beta.clone());
    let y = conditional_norm_graph(&mut g, x, cv, wg, wb, T::lit(eps));
    Ok(g.value(y).clone())
}

/// The conditioned denoiser: architecture descriptor plus parameters.
#[derive(Clone, Debug)]
pub struct DenoiserNetwork<T = f32> {
    cfg: DenoiserConfig,
    params: ParamStore<T>,
    layout: Layout,
    /// `ᾱ` of the output-skip schedule.
    skip_alpha_bar: Option<Vec<f64>>,
}

fn skip_alpha_bar(cfg: &DenoiserConfig) -> Option<Vec<f64>> {
    cfg.output_skip
        .map(|o| make_schedule(o.steps, o.beta_min, o.beta_max).expect("validated").alpha_bar().to_vec())
}

impl<T: Real> DenoiserNetwork<T> {
    pub fn new(cfg: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (layout, params) = build_layout(&cfg, rng);
        let skip_alpha_bar = skip_alpha_bar(&cfg);
        Ok(Self {
            cfg,
            params,
            layout,
            skip_alpha_bar,
        })
    }

    /// Rebuilds a network from stored parameters, which must match the
    /// layout implied by `cfg` name for name and shape for shape.
    pub fn from_params(cfg: DenoiserConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let (layout, template) = build_layout::<T>(&cfg, &mut crate::rng::seeded(0));
        check_same_layout(&template, &params)?;
        let skip_alpha_bar = skip_alpha_bar(&cfg);
        Ok(Self {
            cfg,
            params,
            layout,
            skip_alpha_bar,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
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

    pub fn cast<U: Real>(&self) -> DenoiserNetwork<U> {
        DenoiserNetwork {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            skip_alpha_bar: self.skip_alpha_bar.clone(),
        }
    }

    /// Number of conditional normalisation layers (one per residual block).
    pub fn conditional_norm_count(&self) -> usize {
        self.layout.down.iter().chain(&self.layout.up).map(Vec::len).sum::<usize>() + 1
    }

    fn check_rep(&self, h: &Tensor<T>) -> Result<()> {
        if h.rank() != 2 || h.shape()[1] != self.cfg.rep_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.rep_dim,
                got: h.shape().last().copied().unwrap_or(0),
            });
        }
        Ok(())
    }

    fn check_input(&self, x_t: &Tensor<T>, steps: &[usize], rows: usize) -> Result<()> {
        let want = [self.cfg.image_channels, self.cfg.image_size, self.cfg.image_size];
        if x_t.rank() != 4 || x_t.shape()[1..] != want {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects (n, {}, {}, {}), got {:?}",
                want[0],
                want[1],
                want[2],
                x_t.shape()
            )));
        }
        if steps.len() != x_t.rows() || rows != x_t.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} images, {} step indices, {} conditioning rows",
                x_t.rows(),
                steps.len(),
                rows
            )));
        }
        if let Some(ab) = &self.skip_alpha_bar {
            if let Some(t) = steps.iter().find(|&&t| t >= ab.len()) {
                return Err(Error::IndexOutOfRange(format!("step {t} of {}", ab.len())));
            }
        }
        Ok(())
    }

    /// Errors when the output skip was built for a different schedule.
    pub fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        match self.cfg.output_skip {
            Some(o) if o != OutputSkip::of(schedule) => Err(Error::Config(format!(
                "denoiser output skip expects schedule {o:?}, got {:?}",
                OutputSkip::of(schedule)
            ))),
            _ => Ok(()),
        }
    }

    /// `c = W_proj·(s·N(h)) + b_proj` for every row of `h`, where `N` is the
    /// optional fixed standardisation.
    pub fn project_representation(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_rep(h)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let hv = g.constant(h.clone());
        let c = self.project_graph(&mut g, &p, hv);
        Ok(g.value(c).clone())
    }

    pub fn project_graph(&self, g: &mut Graph<T>, p: &Bound, h: Var) -> Var {
        let h = match &self.cfg.rep_norm {
            Some(r) => {
                let n = g.shape(h)[0];
                let k = r.mean.len();
                let mean = g.constant(Tensor::from_fn(&[n, k], |i| T::lit(r.mean[i % k])));
                let scale = g.constant(Tensor::from_fn(&[n, k], |i| T::lit(r.scale[i % k])));
                let centred = g.sub(h, mean);
                g.mul(centred, scale)
            }
            None => h,
        };
        let scaled = g.scale(h, T::lit(self.cfg.rep_scale));
        g.linear(scaled, p.var(self.layout.proj_w), Some(p.var(self.layout.proj_b)))
    }

    /// Noise prediction from already-projected conditioning vectors.
    pub fn denoise(&self, x_t: &Tensor<T>, steps: &[usize], c: &Tensor<T>) -> Result<Tensor<T>> {
        if c.rank() != 2 || c.shape()[1] != self.cfg.cond_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.cond_dim,
                got: c.shape().last().copied().unwrap_or(0),
            });
        }
        self.check_input(x_t, steps, c.rows())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x_t.clone());
        let cv = g.constant(c.clone());
        let out = self.forward_conditioned(&mut g, &p, x, steps, cv);
        Ok(g.value(out).clone())
    }

    /// Projection followed by [`Self::denoise`], in one pass.
    pub fn predict(&self, x_t: &Tensor<T>, steps: &[usize], h: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_rep(h)?;
        self.check_input(x_t, steps, h.rows())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x_t.clone());
        let hv = g.constant(h.clone());
        let out = self.forward(&mut g, &p, x, steps, hv);
        Ok(g.value(out).clone())
    }

    /// Full forward pass on a graph (for training and gradient checks).
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x_t: Var, steps: &[usize], h: Var) -> Var {
        let c = self.project_graph(g, p, h);
        self.forward_conditioned(g, p, x_t, steps, c)
    }

    fn forward_conditioned(&self, g: &mut Graph<T>, p: &Bound, x_t: Var, steps: &[usize], c: Var) -> Var {
        let l = &self.layout;
        let temb = g.constant(timestep_embedding(steps, self.cfg.time_dim));
        let e = g.linear(temb, p.var(l.time_w), Some(p.var(l.time_b)));
        let e = g.silu(e);

        let x_in = if self.cfg.coord_channels {
            let n = g.shape(x_t)[0];
            let coords = g.constant(coordinate_channels(n, self.cfg.image_size));
            g.concat_channels(x_t, coords)
        } else {
            x_t
        };
        let mut x = self.conv(g, p, x_in, &l.input, 1);
        let mut skips = Vec::with_capacity(l.down.len());
        let levels = l.down.len();
        for (lvl, blocks) in l.down.iter().enumerate() {
            for b in blocks {
                x = self.res_block(g, p, x, e, c, b);
            }
            skips.push(x);
            if lvl + 1 < levels {
                x = g.avg_pool2(x);
            }
        }
        x = self.res_block(g, p, x, e, c, &l.mid);
        for lvl in (0..levels).rev() {
            if lvl + 1 < levels {
                x = g.upsample2(x);
            }
            x = g.concat_channels(x, skips[lvl]);
            for b in &l.up[lvl] {
                x = self.res_block(g, p, x, e, c, b);
            }
        }
        let eps = T::lit(self.cfg.norm_eps);
        let x = g.instance_norm(x, eps);
        let x = g.silu(x);
        let out = self.conv(g, p, x, &l.output, 1);
        let Some(ab) = &self.skip_alpha_bar else {
            return out;
        };
        let shape = g.shape(x_t).to_vec();
        let per: usize = shape[1..].iter().product();
        let keep = g.constant(Tensor::from_fn(&shape, |i| T::lit((1.0 - ab[steps[i / per]]).sqrt())));
        let gain = g.constant(Tensor::from_fn(&shape, |i| T::lit(ab[steps[i / per]].sqrt())));
        let passed = g.mul(x_t, keep);
        let scaled = g.mul(out, gain);
        g.add(passed, scaled)
    }

    fn conv(&self, g: &mut Graph<T>, p: &Bound, x: Var, c: &ConvParams, pad: usize) -> Var {
        g.conv2d(x, p.var(c.w), Some(p.var(c.b)), 1, pad)
    }

    fn res_block(&self, g: &mut Graph<T>, p: &Bound, x: Var, e: Var, c: Var, b: &ResBlock) -> Var {
        let eps = T::lit(self.cfg.norm_eps);
        let h = g.instance_norm(x, eps);
        let h = g.silu(h);
        let h = self.conv(g, p, h, &b.conv1, 1);
        let h = conditional_norm_graph(g, h, c, p.var(b.cond.w_gamma), p.var(b.cond.w_beta), eps);
        let te = g.linear(e, p.var(b.time_w), Some(p.var(b.time_b)));
        let h = g.add_channel(h, te);
        let h = g.silu(h);
        let h = self.conv(g, p, h, &b.conv2, 1);
        let skip = match &b.skip {
            Some(s) => self.conv(g, p, x, s, 0),
            None => x,
        };
        g.add(skip, h)
    }
}

impl NoisePredictor for DenoiserNetwork<f32> {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: &[usize], h: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.predict(x_t, t, h)
    }
}

/// `1 / mean per-dimension standard deviation` of a representation bank,
/// or 1 when the bank is constant.
/// `(n, 2, size, size)`: pixel-centre x then y coordinates mapped to `[-1, 1]`.
pub fn coordinate_channels<T: Real>(n: usize, size: usize) -> Tensor<T> {
    let plane = size * size;
    let coord = |i: usize| T::lit((i as f64 + 0.5) / size as f64 * 2.0 - 1.0);
    Tensor::from_fn(&[n, 2, size, size], |idx| {
        let within = idx % plane;
        if (idx / plane) % 2 == 0 {
            coord(within % size)
        } else {
            coord(within / size)
        }
    })
}

pub fn suggest_rep_scale(reps: &Tensor<f32>) -> f64 {
    let (n, k) = (reps.rows(), reps.row_len());
    if n < 2 || k == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for j in 0..k {
        let col: Vec<f64> = (0..n).map(|i| reps.row(i)[j] as f64).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    let mean_std = total / k as f64;
    if mean_std > 0.0 && mean_std.is_finite() {
        1.0 / mean_std
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub log_every: usize,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 32,
            adam: AdamConfig {
                lr: 2e-3,
                clip_norm: 1.0,
                ..Default::default()
            },
            log_every: 100,
        }
    }
}

/// Minimises the noise-prediction loss over `(image, representation)` pairs.
/// `progress` sees every logged `(step, loss)`.
pub fn train_denoiser(
    net: &mut DenoiserNetwork,
    images: &ImageBatch,
    reps: &Tensor<f32>,
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
    rng: &mut Rng,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    let n = images.count();
    if n == 0 {
        return Err(Error::Empty("no training images".into()));
    }
    if reps.rank() != 2 || reps.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} images but representations of shape {:?}",
            reps.shape()
        )));
    }
    if reps.shape()[1] != net.cfg.rep_dim {
        return Err(Error::DimensionMismatch {
            expected: net.cfg.rep_dim,
            got: reps.shape()[1],
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    net.check_input(images.tensor(), &vec![0; n], n)?;
    net.check_schedule(schedule)?;
    let mut adam = Adam::for_store(cfg.adam, &net.params);
    let mut log = TrainLog::default();
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
        let x0 = images.select(idx);
        let noised = draw_noised_batch(&x0, schedule, rng)?;
        let mut g = Graph::new();
        let p = net.params.bind(&mut g, true);
        let xt = g.constant(noised.x_t);
        let h = g.constant(reps.select_rows(idx));
        let pred = net.forward(&mut g, &p, xt, &noised.steps, h);
        let target = g.constant(noised.eps);
        let loss = g.mse(pred, target);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("denoiser loss {lv} at step {step}")));
        }
        let grads = g.backward(loss);
        let gs = p.collect(&g, &grads);
        adam.update(&mut net.params, &gs);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log.entries.push(TrainLogEntry { step, loss: lv });
            progress(step, lv);
        }
    }
    Ok(log)
}

pub(crate) fn check_same_layout<T: Real>(template: &ParamStore<T>, params: &ParamStore<T>) -> Result<()> {
    if template.len() != params.len() {
        return Err(Error::Config(format!(
            "expected {} parameter tensors, found {}",
            template.len(),
            params.len()
        )));
    }
    for ((tn, tt), (pn, pt)) in template.iter().zip(params.iter()) {
        if tn != pn || tt.shape() != pt.shape() {
            return Err(Error::Config(format!(
                "parameter {pn} {:?} does not match expected {tn} {:?}",
                pt.shape(),
                tt.shape()
            )));
        }
    }
    Ok(())
}
