//! Command implementations. Every command reads its settings from a resolved
//! [`Config`], derives all randomness from the run seed and records its
//! outputs in a [`RunManifest`].

use std::path::Path;

use rcdm_core::advprobe::{attack_sweep, train_probe_on_reps, AttackGoal, LinearProbe, ProbeConfig, SweepBank, SweepSampler};
use rcdm_core::augment::{AugmentPolicy, Transform};
use rcdm_core::data::{generate_shapes, load_image, load_image_folder, Dataset};
use rcdm_core::denoiser::{suggest_rep_scale, train_denoiser, DenoiserConfig, DenoiserNetwork, DenoiserTrainConfig, OutputSkip, RepNorm};
use rcdm_core::diffmap::EncoderMap;
use rcdm_core::encoders::{train_ssl, train_supervised, Encoder, EncoderConfig, Source, SslConfig, SupervisedConfig};
use rcdm_core::faitheval::{
    distance_reference_suite, factor_sensitivity, faithfulness, frechet_distance, inception_style_score, invariance_probe,
    ReferenceConfig, ReferenceInputs, ReferenceRow,
};
use rcdm_core::generation::{interpolate, kde_fit, kde_sample, sample_batch};
use rcdm_core::nn::{AdamConfig, Fingerprint, TrainLog};
use rcdm_core::repmatch::{j_table, match_representation, random_init, Distance, JTableConfig, LrSchedule, MatchConfig, Optimizer};
use rcdm_core::repops::{common_nonzero_dims, default_top_m, knn, least_common_nonzero_dims, rep_algebra, swap_dims, zero_dims, Metric, RepresentationBank};
use rcdm_core::rng::{permutation, substream};
use rcdm_core::schedule::make_schedule;
use rcdm_core::{Error, ImageBatch};
use rcdm_tensor::Tensor;
use serde_json::json;

use crate::checkpoint::{
    denoiser_container, denoiser_from_container, encoder_container, encoder_from_container, load_bank, load_tensor,
    probe_container, probe_from_container, save_bank, save_tensor, Component, Container, DenoiserArtifact,
};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::grid::{auto_layout, emit_grid};
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TrainEncoder,
    TrainRcdm,
    Sample,
    Interpolate,
    KdeSample,
    Match,
    Manipulate,
    Attack,
    Evaluate,
}

const DATA: &[(&str, &str)] = &[
    ("data.source", "shapes"),
    ("data.path", ""),
    ("data.count", "2000"),
    ("data.seed", "0"),
    ("data.size", "32"),
    ("data.holdout", "0.25"),
];

const ENCODER_ARCH: &[(&str, &str)] = &[
    ("encoder.widths", "16,32,64,128"),
    ("encoder.strides", "1,2,2,2"),
    ("encoder.projector_hidden", "128"),
    ("encoder.projector_dim", "32"),
    ("encoder.normalize_projector", "false"),
];

const INPUT: &[(&str, &str)] = &[
    ("input.indices", ""),
    ("input.heldout", "0"),
    ("input.image", ""),
    ("input.reps", ""),
];

impl Command {
    pub const ALL: [Command; 9] = [
        Command::TrainEncoder,
        Command::TrainRcdm,
        Command::Sample,
        Command::Interpolate,
        Command::KdeSample,
        Command::Match,
        Command::Manipulate,
        Command::Attack,
        Command::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::TrainEncoder => "train-encoder",
            Command::TrainRcdm => "train-rcdm",
            Command::Sample => "sample",
            Command::Interpolate => "interpolate",
            Command::KdeSample => "kde-sample",
            Command::Match => "match",
            Command::Manipulate => "manipulate",
            Command::Attack => "attack",
            Command::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> CliResult<Command> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown command {s}")))
    }

    pub fn defaults(self) -> Vec<(&'static str, &'static str)> {
        let mut d: Vec<(&str, &str)> = DATA.to_vec();
        let own: &[(&str, &str)] = match self {
            Command::TrainEncoder => &[
                ("encoder.flavor", "ssl"),
                ("train.steps", "300"),
                ("train.batch_size", "64"),
                ("train.lr", "0.001"),
                ("train.temperature", "0.1"),
                ("train.margin", "0.1"),
                ("train.holdout", "0.1"),
                ("train.augment", "true"),
                ("train.log_every", "50"),
            ],
            Command::TrainRcdm => &[
                ("encoder.checkpoint", ""),
                ("encoder.source", "backbone"),
                ("denoiser.widths", "32,64,128"),
                ("denoiser.blocks", "2"),
                ("denoiser.cond_dim", "64"),
                ("denoiser.time_dim", "64"),
                ("denoiser.rep_dim", "0"),
                ("denoiser.rep_scale", "standardize"),
                ("denoiser.coord_channels", "true"),
                ("denoiser.output_skip", "true"),
                ("schedule.steps", "1000"),
                ("schedule.beta_min", "0.0001"),
                ("schedule.beta_max", "0.02"),
                ("train.steps", "10000"),
                ("train.batch_size", "32"),
                ("train.lr", "0.002"),
                ("train.clip_norm", "1.0"),
                ("train.log_every", "100"),
            ],
            Command::Sample => &[
                ("denoiser.checkpoint", ""),
                ("encoder.checkpoint", ""),
                ("sample.count", "4"),
            ],
            Command::Interpolate => &[
                ("denoiser.checkpoint", ""),
                ("encoder.checkpoint", ""),
                ("interpolate.steps", "7"),
            ],
            Command::KdeSample => &[
                ("denoiser.checkpoint", ""),
                ("encoder.checkpoint", ""),
                ("bank.path", ""),
                ("kde.sigma", "0.01"),
                ("sample.count", "16"),
            ],
            Command::Match => &[
                ("encoder.checkpoint", ""),
                ("encoder.source", "backbone"),
                ("match.distance", "l2"),
                ("match.optimizer", "adam"),
                ("match.schedule", "plateau"),
                ("match.steps", "1000"),
                ("match.step_size", "0.01"),
                ("match.table", "false"),
                ("match.table_steps", "1000"),
            ],
            Command::Manipulate => &[
                ("encoder.checkpoint", ""),
                ("denoiser.checkpoint", ""),
                ("manipulate.op", "zero"),
                ("manipulate.dims", ""),
                ("manipulate.mask", "common"),
                ("manipulate.neighbors", "10"),
                ("manipulate.top_m", "0"),
                ("manipulate.metric", "squared-l2"),
                ("manipulate.zero_tol", "0"),
                ("sample.count", "4"),
            ],
            Command::Attack => &[
                ("encoder.checkpoint", ""),
                ("encoder.source", "backbone"),
                ("probe.checkpoint", ""),
                ("probe.steps", "500"),
                ("probe.lr", "0.05"),
                ("denoiser.checkpoint", ""),
                ("attack.epsilons", "0,0.02,0.05,0.1,0.2"),
                ("attack.goal", "untargeted"),
                ("attack.target", ""),
                ("attack.grid_images", "8"),
            ],
            Command::Evaluate => &[
                ("evaluate.kind", "rank"),
                ("evaluate.metric", "squared-l2"),
                ("evaluate.null", "true"),
                ("evaluate.images", "16"),
                ("evaluate.transforms", "vertical-shift,zoom-in,zoom-out,grayscale,color-jitter,horizontal-flip"),
                ("evaluate.rows", "random-bank,same-class,nearest-train,single-augmentation,composite-augmentation,generated-samples"),
                ("evaluate.extractor", ""),
                ("encoder.checkpoint", ""),
                ("samples.path", ""),
            ],
        };
        d.extend_from_slice(own);
        if matches!(self, Command::TrainEncoder | Command::Match) {
            d.extend_from_slice(ENCODER_ARCH);
        }
        if matches!(
            self,
            Command::Sample | Command::Interpolate | Command::Match | Command::Manipulate | Command::Attack
        ) {
            d.extend_from_slice(INPUT);
        }
        d
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_bool(cfg: &Config, key: &str) -> CliResult<bool> {
    match cfg.str(key) {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(usage(format!("config key {key}: expected a boolean, got {v:?}"))),
    }
}

pub fn load_dataset(cfg: &Config) -> CliResult<Dataset> {
    let size: usize = cfg.get("data.size")?;
    match cfg.str("data.source") {
        "shapes" => Ok(generate_shapes(cfg.get("data.count")?, cfg.get("data.seed")?, size)?),
        "folder" => Ok(load_image_folder(Path::new(cfg.required("data.path")?), size)?),
        other => Err(usage(format!("unknown data.source {other}"))),
    }
}

/// Dataset plus the indices of its training and held-out parts.
struct Data {
    set: Dataset,
    train: Vec<usize>,
    held: Vec<usize>,
}

fn load_split(cfg: &Config) -> CliResult<Data> {
    let set = load_dataset(cfg)?;
    let (train, held) = set.split_indices(cfg.get("data.holdout")?)?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()).into());
    }
    Ok(Data { set, train, held })
}

fn load_encoder(path: &str) -> CliResult<Encoder> {
    Ok(encoder_from_container(&Container::load_as(Path::new(path), Component::Encoder)?)?)
}

fn load_denoiser(path: &str) -> CliResult<DenoiserArtifact> {
    Ok(denoiser_from_container(&Container::load_as(Path::new(path), Component::Denoiser)?)?)
}

fn check_pair(encoder: &Encoder, den: &DenoiserArtifact) -> CliResult<()> {
    let fp = encoder.fingerprint();
    if fp != den.encoder {
        return Err(Error::FingerprintMismatch(format!(
            "denoiser was trained on encoder {}, given {}",
            den.encoder, fp
        ))
        .into());
    }
    Ok(())
}

fn source_of(cfg: &Config) -> CliResult<Source> {
    Ok(Source::parse(cfg.str("encoder.source"))?)
}

fn reps_bank(encoder: &Encoder, data: &Dataset, idx: &[usize], source: Source) -> CliResult<RepresentationBank> {
    let reps = encoder.encode_source(&data.images.select(idx), source)?.values;
    let labels = data.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
    let bank = RepresentationBank::new(reps, idx.iter().map(|&i| i as u64).collect(), labels)?;
    Ok(bank.with_origin(source, encoder.fingerprint()))
}

/// Conditioning representations selected by the `input.*` keys, with their
/// dataset indices when they came from the dataset.
struct Conditioning {
    reps: Tensor<f32>,
    images: Option<ImageBatch>,
    ids: Option<Vec<u64>>,
}

fn conditioning(cfg: &Config, encoder: Option<&Encoder>, source: Source, data: Option<&Data>) -> CliResult<Conditioning> {
    let heldout: usize = cfg.get("input.heldout")?;
    let chosen = [
        cfg.opt("input.indices").is_some(),
        heldout > 0,
        cfg.opt("input.image").is_some(),
        cfg.opt("input.reps").is_some(),
    ];
    if chosen.iter().filter(|&&c| c).count() != 1 {
        return Err(usage("set exactly one of input.indices, input.heldout, input.image, input.reps"));
    }
    if let Some(path) = cfg.opt("input.reps") {
        let (reps, _) = load_tensor(Path::new(path))?;
        return Ok(Conditioning {
            reps,
            images: None,
            ids: None,
        });
    }
    let encoder = encoder.ok_or_else(|| usage("encoder.checkpoint is required to encode conditioning images"))?;
    let (images, ids) = if let Some(path) = cfg.opt("input.image") {
        let size = encoder.input_shape()[1];
        (ImageBatch::from_images([3, size, size], &[load_image(Path::new(path), size)?])?, None)
    } else {
        let data = data.ok_or_else(|| usage("dataset required"))?;
        let idx: Vec<usize> = if heldout > 0 {
            if heldout > data.held.len() {
                return Err(Error::InvalidRange(format!("{heldout} held-out items requested, {} available", data.held.len())).into());
            }
            data.held[..heldout].to_vec()
        } else {
            cfg.list("input.indices")?
        };
        if let Some(&i) = idx.iter().find(|&&i| i >= data.set.len()) {
            return Err(Error::IndexOutOfRange(format!("dataset index {i} of {}", data.set.len())).into());
        }
        (data.set.images.select(&idx), Some(idx.iter().map(|&i| i as u64).collect()))
    };
    Ok(Conditioning {
        reps: encoder.encode_source(&images, source)?.values,
        images: Some(images),
        ids,
    })
}

fn needs_dataset(cfg: &Config) -> bool {
    cfg.opt("input.indices").is_some() || cfg.str("input.heldout") != "0"
}

fn repeat_rows(t: &Tensor<f32>, times: usize) -> Tensor<f32> {
    let idx: Vec<usize> = (0..t.rows()).flat_map(|i| std::iter::repeat_n(i, times)).collect();
    t.select_rows(&idx)
}

fn grid(run: &mut Run, name: &str, file: &str, images: &ImageBatch, cols: Option<usize>) -> CliResult<()> {
    let (rows, cols) = match cols {
        Some(c) if c > 0 => (images.count().div_ceil(c).max(1), c),
        _ => auto_layout(images.count()),
    };
    emit_grid(images, rows, cols, &run.path(file))?;
    run.record(name, file)?;
    Ok(())
}

fn save_tensor_artifact(run: &mut Run, name: &str, file: &str, t: &Tensor<f32>, meta: serde_json::Value) -> CliResult<()> {
    save_tensor(t, meta, &run.path(file))?;
    run.record(name, file)?;
    Ok(())
}

fn encoder_config(cfg: &Config, data: &Dataset) -> CliResult<EncoderConfig> {
    let [c, h, _] = data.images.image_shape();
    Ok(EncoderConfig {
        image_channels: c,
        image_size: h,
        widths: cfg.list("encoder.widths")?,
        strides: cfg.list("encoder.strides")?,
        projector_hidden: cfg.get("encoder.projector_hidden")?,
        projector_dim: cfg.get("encoder.projector_dim")?,
        normalize_projector: parse_bool(cfg, "encoder.normalize_projector")?,
        num_classes: 0,
    })
}

fn train_encoder(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let data = load_split(cfg)?;
    let train = data.set.subset(&data.train);
    let enc_cfg = encoder_config(cfg, &data.set)?;
    let mut rng = substream(run.seed, "train-encoder");
    let adam = AdamConfig {
        lr: cfg.get("train.lr")?,
        ..AdamConfig::default()
    };
    let (encoder, log) = match cfg.str("encoder.flavor") {
        "random" => (Encoder::new(enc_cfg, &mut rng)?, TrainLog::default()),
        "ssl" => train_ssl(
            &train.images,
            enc_cfg,
            &SslConfig {
                steps: cfg.get("train.steps")?,
                batch_size: cfg.get("train.batch_size")?,
                temperature: cfg.get("train.temperature")?,
                adam,
                holdout_fraction: cfg.get("train.holdout")?,
                margin: cfg.get("train.margin")?,
                log_every: cfg.get("train.log_every")?,
                ..SslConfig::default()
            },
            &mut rng,
        )?,
        "supervised" => train_supervised(
            &train,
            enc_cfg,
            &SupervisedConfig {
                steps: cfg.get("train.steps")?,
                batch_size: cfg.get("train.batch_size")?,
                adam,
                augment: parse_bool(cfg, "train.augment")?.then(AugmentPolicy::default),
                log_every: cfg.get("train.log_every")?,
            },
            &mut rng,
        )?,
        other => return Err(usage(format!("unknown encoder.flavor {other}"))),
    };
    let meta = json!({ "dataset": data.set.content_hash(), "train_summary": log.summary });
    encoder_container(&encoder, meta).save(&run.path("encoder.ckpt"))?;
    run.record("encoder", "encoder.ckpt")?;
    run.write_json("train_log", "train_log.json", &log)?;
    run.fingerprint("encoder", encoder.fingerprint());
    Ok(())
}

fn train_rcdm(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let encoder = load_encoder(cfg.required("encoder.checkpoint")?)?;
    let source = source_of(cfg)?;
    let data = load_split(cfg)?;
    let k = encoder.dim(source);
    let rep_dim: usize = cfg.get("denoiser.rep_dim")?;
    if rep_dim != 0 && rep_dim != k {
        return Err(Error::DimensionMismatch { expected: rep_dim, got: k }.into());
    }
    let train_images = data.set.images.select(&data.train);
    let reps = encoder.encode_source(&train_images, source)?.values;
    let (rep_scale, rep_norm) = match cfg.str("denoiser.rep_scale") {
        "standardize" => (1.0, Some(RepNorm::standardize(&reps)?)),
        "auto" => (suggest_rep_scale(&reps), None),
        _ => (cfg.get("denoiser.rep_scale")?, None),
    };
    let [c, h, _] = train_images.image_shape();
    let schedule = make_schedule(cfg.get("schedule.steps")?, cfg.get("schedule.beta_min")?, cfg.get("schedule.beta_max")?)?;
    let dcfg = DenoiserConfig {
        image_channels: c,
        image_size: h,
        rep_dim: k,
        cond_dim: cfg.get("denoiser.cond_dim")?,
        time_dim: cfg.get("denoiser.time_dim")?,
        widths: cfg.list("denoiser.widths")?,
        blocks_per_level: cfg.get("denoiser.blocks")?,
        rep_scale,
        rep_norm,
        coord_channels: parse_bool(cfg, "denoiser.coord_channels")?,
        output_skip: parse_bool(cfg, "denoiser.output_skip")?.then(|| OutputSkip::of(&schedule)),
        ..DenoiserConfig::default()
    };
    let mut rng = substream(run.seed, "train-rcdm");
    let mut net = DenoiserNetwork::new(dcfg, &mut rng)?;
    let tcfg = DenoiserTrainConfig {
        steps: cfg.get("train.steps")?,
        batch_size: cfg.get("train.batch_size")?,
        adam: AdamConfig {
            lr: cfg.get("train.lr")?,
            clip_norm: cfg.get("train.clip_norm")?,
            ..AdamConfig::default()
        },
        log_every: cfg.get("train.log_every")?,
    };
    let log = train_denoiser(&mut net, &train_images, &reps, &schedule, &tcfg, &mut rng, |_, _| {})?;
    let artifact = DenoiserArtifact {
        net,
        schedule,
        encoder: encoder.fingerprint(),
        source,
    };
    denoiser_container(&artifact, json!({ "dataset": data.set.content_hash() })).save(&run.path("denoiser.ckpt"))?;
    run.record("denoiser", "denoiser.ckpt")?;
    run.write_json("train_log", "train_log.json", &log)?;
    if !data.held.is_empty() {
        let bank = reps_bank(&encoder, &data.set, &data.held, source)?;
        save_bank(&bank, Metric::SquaredL2, Some(data.set.content_hash()), &run.path("bank.bin"))?;
        run.record("bank", "bank.bin")?;
        run.record("bank_index", "bank.bin.json")?;
    }
    run.fingerprint("encoder", encoder.fingerprint());
    run.fingerprint("denoiser", artifact.net.fingerprint());
    Ok(())
}

/// Loads the denoiser and, when configured, the matching encoder.
fn denoiser_and_encoder(cfg: &Config, run: &mut Run) -> CliResult<(DenoiserArtifact, Option<Encoder>)> {
    let den = load_denoiser(cfg.required("denoiser.checkpoint")?)?;
    let encoder = match cfg.opt("encoder.checkpoint") {
        Some(p) => {
            let e = load_encoder(p)?;
            check_pair(&e, &den)?;
            run.fingerprint("encoder", e.fingerprint());
            Some(e)
        }
        None => None,
    };
    run.fingerprint("denoiser", den.net.fingerprint());
    Ok((den, encoder))
}

fn maybe_data(cfg: &Config) -> CliResult<Option<Data>> {
    if needs_dataset(cfg) {
        Ok(Some(load_split(cfg)?))
    } else {
        Ok(None)
    }
}

fn sample(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let (den, encoder) = denoiser_and_encoder(cfg, run)?;
    let data = maybe_data(cfg)?;
    let cond = conditioning(cfg, encoder.as_ref(), den.source, data.as_ref())?;
    let count: usize = cfg.get("sample.count")?;
    if count == 0 {
        return Err(Error::InvalidRange("sample.count must be at least 1".into()).into());
    }
    let h = repeat_rows(&cond.reps, count);
    let mut rng = substream(run.seed, "sample");
    let samples = sample_batch(&den.net, &h, &den.schedule, &mut rng)?;
    let ids: Option<Vec<u64>> = cond
        .ids
        .as_ref()
        .map(|ids| ids.iter().flat_map(|&i| std::iter::repeat_n(i, count)).collect());
    let meta = json!({
        "conditioning_ids": ids,
        "per_conditioning": count,
        "encoder": den.encoder,
        "source": den.source,
    });
    save_tensor_artifact(run, "samples", "samples.bin", samples.tensor(), meta)?;
    save_tensor_artifact(run, "conditioning", "conditioning.bin", &cond.reps, json!({ "ids": cond.ids }))?;
    grid(run, "grid", "samples.png", &samples, Some(count))?;
    if let Some(images) = &cond.images {
        grid(run, "conditioning_grid", "conditioning.png", images, None)?;
    }
    Ok(())
}

fn interpolate_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let (den, encoder) = denoiser_and_encoder(cfg, run)?;
    let data = maybe_data(cfg)?;
    let cond = conditioning(cfg, encoder.as_ref(), den.source, data.as_ref())?;
    if cond.reps.rows() != 2 {
        return Err(usage(format!("interpolation needs exactly two conditionings, got {}", cond.reps.rows())));
    }
    let steps: usize = cfg.get("interpolate.steps")?;
    if steps < 2 {
        return Err(Error::InvalidRange("interpolate.steps must be at least 2".into()).into());
    }
    let mut outs = Vec::with_capacity(steps);
    let mut reps = Vec::new();
    for i in 0..steps {
        let lam = i as f64 / (steps - 1) as f64;
        let h = interpolate(cond.reps.row(0), cond.reps.row(1), lam)?;
        reps.extend_from_slice(&h);
        // Shared noise across the path isolates the effect of the representation.
        let mut rng = substream(run.seed, "interpolate");
        outs.push(sample_batch(&den.net, &Tensor::new(vec![1, h.len()], h), &den.schedule, &mut rng)?);
    }
    let images = ImageBatch::concat(&outs.iter().collect::<Vec<_>>());
    let k = cond.reps.shape()[1];
    save_tensor_artifact(run, "reps", "interpolation_reps.bin", &Tensor::new(vec![steps, k], reps), json!(null))?;
    save_tensor_artifact(run, "samples", "interpolation.bin", images.tensor(), json!(null))?;
    grid(run, "grid", "interpolation.png", &images, Some(steps))?;
    Ok(())
}

fn kde_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let (den, encoder) = denoiser_and_encoder(cfg, run)?;
    let bank = match cfg.opt("bank.path") {
        Some(p) => load_bank(Path::new(p))?.0,
        None => {
            let encoder = encoder.as_ref().ok_or_else(|| usage("set bank.path or encoder.checkpoint"))?;
            let data = load_split(cfg)?;
            reps_bank(encoder, &data.set, &data.train, den.source)?
        }
    };
    if let Some(fp) = &bank.encoder {
        if *fp != den.encoder {
            return Err(Error::FingerprintMismatch(format!("bank from encoder {fp}, denoiser expects {}", den.encoder)).into());
        }
    }
    let model = kde_fit(bank.reps(), cfg.get("kde.sigma")?)?;
    let mut rng = substream(run.seed, "kde-sample");
    let reps = kde_sample(&model, &mut rng, cfg.get("sample.count")?)?;
    let samples = sample_batch(&den.net, &reps, &den.schedule, &mut rng)?;
    save_tensor_artifact(run, "reps", "kde_reps.bin", &reps, json!({ "sigma": model.sigma() }))?;
    save_tensor_artifact(run, "samples", "samples.bin", samples.tensor(), json!(null))?;
    grid(run, "grid", "samples.png", &samples, None)?;
    Ok(())
}

fn match_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let data = load_split(cfg)?;
    let encoder = match cfg.opt("encoder.checkpoint") {
        Some(p) => load_encoder(p)?,
        None => Encoder::new(encoder_config(cfg, &data.set)?, &mut substream(run.seed, "match-encoder"))?,
    };
    run.fingerprint("encoder", encoder.fingerprint());
    let source = source_of(cfg)?;
    let cond = conditioning(cfg, Some(&encoder), source, Some(&data))?;
    if cond.reps.rows() != 1 {
        return Err(usage("matching needs exactly one target"));
    }
    let target = cond.images.as_ref().ok_or_else(|| usage("matching needs a target image"))?;
    let enc64 = encoder.cast::<f64>();
    let f = EncoderMap::new(&enc64, source);
    let h: Vec<f64> = cond.reps.row(0).iter().map(|&v| v as f64).collect();
    let mut rng = substream(run.seed, "match");
    let x0 = random_init::<f64>(target.image_shape(), &mut rng);
    let mc = MatchConfig {
        distance: Distance::parse(cfg.str("match.distance"))?,
        optimizer: Optimizer::parse(cfg.str("match.optimizer"))?,
        schedule: LrSchedule::parse(cfg.str("match.schedule"))?,
        steps: cfg.get("match.steps")?,
        step_size: cfg.get("match.step_size")?,
        ..MatchConfig::default()
    };
    let res = match_representation(&f, &h, &x0, &mc)?;
    let stride = (res.distances.len() / 100).max(1);
    let curve: Vec<(usize, f64)> = res.distances.iter().copied().enumerate().step_by(stride).collect();
    run.write_json(
        "result",
        "match.json",
        &json!({
            "config": mc,
            "d0": res.d0,
            "d_final": res.d_final,
            "relative_distance_percent": res.relative_distance_percent,
            "converged": res.converged,
            "curve": curve,
        }),
    )?;
    let shown = ImageBatch::concat(&[
        target,
        &ImageBatch::clamped(x0.cast::<f32>())?,
        &ImageBatch::clamped(res.x_final.cast::<f32>())?,
    ]);
    grid(run, "grid", "matched.png", &shown, Some(3))?;
    if parse_bool(cfg, "match.table")? {
        let tc = JTableConfig {
            steps: cfg.get("match.table_steps")?,
            ..JTableConfig::default()
        };
        let source_x = target.tensor().cast::<f64>();
        let table = j_table(&f, &h, &x0, Some(&source_x), &tc)?;
        run.write_text("jtable_csv", "jtable.csv", &table.to_csv())?;
        run.write_json("jtable", "jtable.json", &table)?;
    }
    Ok(())
}

fn manipulate_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let (den, encoder) = denoiser_and_encoder(cfg, run)?;
    let encoder = encoder.ok_or_else(|| usage("encoder.checkpoint is required"))?;
    let data = load_split(cfg)?;
    let cond = conditioning(cfg, Some(&encoder), den.source, Some(&data))?;
    let op = cfg.str("manipulate.op");
    let needed = match op {
        "zero" => 1,
        "swap" => 2,
        "algebra" => 3,
        other => return Err(usage(format!("unknown manipulate.op {other}"))),
    };
    if cond.reps.rows() != needed {
        return Err(usage(format!("manipulate.op {op} needs {needed} inputs, got {}", cond.reps.rows())));
    }
    let base = cond.reps.row(0);
    let k = base.len();
    let dims: Vec<usize> = match cfg.opt("manipulate.dims") {
        Some(_) => cfg.list("manipulate.dims")?,
        None if op == "algebra" => Vec::new(),
        None => {
            let bank = reps_bank(&encoder, &data.set, &data.train, den.source)?;
            let metric = Metric::parse(cfg.str("manipulate.metric")).map_err(CliError::from)?;
            let ids = knn(base, &bank, cfg.get::<usize>("manipulate.neighbors")?.min(bank.len()), metric)?;
            let rows: Vec<usize> = ids.iter().map(|&id| bank.position(id)).collect::<Result<_, _>>()?;
            let hood = bank.reps().select_rows(&rows);
            let top_m = match cfg.get::<usize>("manipulate.top_m")? {
                0 => default_top_m(k),
                m => m,
            };
            let tol: f64 = cfg.get("manipulate.zero_tol")?;
            match cfg.str("manipulate.mask") {
                "common" => common_nonzero_dims(&hood, top_m, tol)?,
                "least-common" => least_common_nonzero_dims(&hood, top_m, tol)?,
                other => return Err(usage(format!("unknown manipulate.mask {other}"))),
            }
        }
    };
    let edited = match op {
        "zero" => zero_dims(base, &dims)?,
        "swap" => swap_dims(base, cond.reps.row(1), &dims)?,
        _ => rep_algebra(base, cond.reps.row(1), cond.reps.row(2))?,
    };
    let count: usize = cfg.get("sample.count")?;
    let pair = Tensor::new(vec![2, k], [base, edited.as_slice()].concat());
    let mut parts = Vec::new();
    for r in 0..2 {
        let mut rng = substream(run.seed, "manipulate");
        let h = repeat_rows(&pair.select_rows(&[r]), count);
        parts.push(sample_batch(&den.net, &h, &den.schedule, &mut rng)?);
    }
    let samples = ImageBatch::concat(&parts.iter().collect::<Vec<_>>());
    save_tensor_artifact(run, "reps", "manipulated.bin", &pair, json!({ "op": op, "dims": dims }))?;
    save_tensor_artifact(run, "samples", "samples.bin", samples.tensor(), json!(null))?;
    grid(run, "grid", "samples.png", &samples, Some(count))?;
    run.write_json("manipulation", "manipulate.json", &json!({ "op": op, "dims": dims }))?;
    Ok(())
}

fn attack_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let encoder = load_encoder(cfg.required("encoder.checkpoint")?)?;
    run.fingerprint("encoder", encoder.fingerprint());
    let data = load_split(cfg)?;
    let labels_all = data
        .set
        .labels
        .clone()
        .ok_or_else(|| CliError::from(Error::MissingLabels("attacks need labelled data".into())))?;
    let mut rng = substream(run.seed, "attack");
    let probe: LinearProbe = match cfg.opt("probe.checkpoint") {
        Some(p) => {
            let probe = probe_from_container(&Container::load_as(Path::new(p), Component::Probe)?)?;
            probe.check_encoder(&encoder)?;
            probe
        }
        None => {
            let source = source_of(cfg)?;
            let reps = encoder.encode_source(&data.set.images.select(&data.train), source)?.values;
            let labels: Vec<usize> = data.train.iter().map(|&i| labels_all[i]).collect();
            let pc = ProbeConfig {
                steps: cfg.get("probe.steps")?,
                adam: AdamConfig {
                    lr: cfg.get("probe.lr")?,
                    ..AdamConfig::default()
                },
                ..ProbeConfig::default()
            };
            let (probe, _) = train_probe_on_reps(&reps, &labels, encoder.fingerprint(), source, &pc, &mut rng)?;
            probe_container(&probe, json!(null)).save(&run.path("probe.ckpt"))?;
            run.record("probe", "probe.ckpt")?;
            probe
        }
    };
    let cond = conditioning(cfg, Some(&encoder), probe.source, Some(&data))?;
    let (images, ids) = match (&cond.images, &cond.ids) {
        (Some(i), Some(ids)) => (i, ids),
        _ => return Err(usage("attacks need dataset inputs (input.indices or input.heldout)")),
    };
    let goal = match cfg.str("attack.goal") {
        "untargeted" => AttackGoal::Untargeted,
        "targeted" => AttackGoal::Targeted,
        other => return Err(usage(format!("unknown attack.goal {other}"))),
    };
    let labels: Vec<usize> = match (goal, cfg.opt("attack.target")) {
        (AttackGoal::Targeted, Some(_)) => vec![cfg.get("attack.target")?; ids.len()],
        (AttackGoal::Targeted, None) => return Err(usage("targeted attacks need attack.target")),
        _ => ids.iter().map(|&i| labels_all[i as usize]).collect(),
    };
    let den = match cfg.opt("denoiser.checkpoint") {
        Some(p) => {
            let d = load_denoiser(p)?;
            check_pair(&encoder, &d)?;
            run.fingerprint("denoiser", d.net.fingerprint());
            Some(d)
        }
        None => None,
    };
    let bank = reps_bank(&encoder, &data.set, &data.held, probe.source)?;
    let sweep_bank = SweepBank {
        bank: &bank,
        ids,
        metric: Metric::SquaredL2,
    };
    let sampler = den.as_ref().map(|d| SweepSampler {
        denoiser: &d.net,
        schedule: &d.schedule,
    });
    let use_bank = data.held.len() >= ids.len() && ids.iter().all(|id| bank.position(*id).is_ok());
    let epsilons: Vec<f64> = cfg.list("attack.epsilons")?;
    let report = attack_sweep(
        images,
        &labels,
        &encoder,
        &probe,
        &epsilons,
        goal,
        use_bank.then_some(&sweep_bank),
        sampler.as_ref(),
        &mut rng,
    )?;
    run.write_json("sweep", "sweep.json", &report)?;
    let shown: usize = cfg.get::<usize>("attack.grid_images")?.min(images.count()).max(1);
    let first: Vec<usize> = (0..shown).collect();
    for (i, row) in report.rows.iter().enumerate() {
        let adv = rcdm_core::advprobe::fgsm(&images.select(&first), &labels[..shown], &encoder, &probe, row.epsilon, goal)?;
        grid(run, &format!("attack_{i}"), &format!("attack_eps{i}.png"), &adv, Some(shown))?;
        if let Some(s) = &row.samples {
            grid(run, &format!("samples_{i}"), &format!("samples_eps{i}.png"), &s.select(&first), Some(shown))?;
        }
    }
    Ok(())
}

fn evaluate_cmd(cfg: &Config, run: &mut Run) -> CliResult<()> {
    let kind = cfg.str("evaluate.kind");
    let data = load_split(cfg)?;
    let samples = || -> CliResult<(ImageBatch, serde_json::Value)> {
        let path = cfg
            .opt("samples.path")
            .ok_or_else(|| CliError::from(Error::MissingArtifact("generated samples (samples.path)".into())))?;
        let (t, meta) = load_tensor(Path::new(path))?;
        let b = ImageBatch::new(t)?;
        if b.count() == 0 {
            return Err(Error::MissingArtifact("generated samples file is empty".into()).into());
        }
        Ok((b, meta))
    };
    let encoder = || -> CliResult<Encoder> { load_encoder(cfg.required("encoder.checkpoint")?) };
    match kind {
        "rank" => {
            let (gen, meta) = samples()?;
            let ids: Vec<u64> = serde_json::from_value(meta["conditioning_ids"].clone())
                .map_err(|_| CliError::from(Error::MissingArtifact("samples carry no conditioning ids".into())))?;
            let source: Source = serde_json::from_value(meta["source"].clone()).unwrap_or(Source::Backbone);
            let encoder = encoder()?;
            run.fingerprint("encoder", encoder.fingerprint());
            if let Ok(fp) = serde_json::from_value::<Fingerprint>(meta["encoder"].clone()) {
                if fp != encoder.fingerprint() {
                    return Err(Error::FingerprintMismatch(format!("samples conditioned on encoder {fp}")).into());
                }
            }
            let metric = Metric::parse(cfg.str("evaluate.metric"))?;
            let mut bank_idx = data.held.clone();
            for &id in &ids {
                if !bank_idx.contains(&(id as usize)) {
                    bank_idx.push(id as usize);
                }
            }
            let bank = reps_bank(&encoder, &data.set, &bank_idx, source)?;
            let reps = encoder.encode_source(&gen, source)?.values;
            let report = faithfulness(&reps, &ids, &bank, metric)?;
            let mut text = format!("{report}\n");
            let null_report = if parse_bool(cfg, "evaluate.null")? {
                let perm = permutation(ids.len(), &mut substream(run.seed, "evaluate-null"));
                let shuffled: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
                let n = faithfulness(&reps, &shuffled, &bank, metric)?;
                text.push_str(&format!("null (shuffled conditioning)\n{n}\n"));
                Some(n)
            } else {
                None
            };
            run.write_json("report", "report.json", &json!({ "faithfulness": report, "null": null_report }))?;
            run.write_text("report_text", "report.txt", &text)?;
        }
        "distance" => {
            let (gen, meta) = samples()?;
            let ids: Vec<u64> = serde_json::from_value(meta["conditioning_ids"].clone())
                .map_err(|_| CliError::from(Error::MissingArtifact("samples carry no conditioning ids".into())))?;
            let first = ids[0];
            let own: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == first).collect();
            let encoder = encoder()?;
            run.fingerprint("encoder", encoder.fingerprint());
            let source: Source = serde_json::from_value(meta["source"].clone()).unwrap_or(Source::Backbone);
            let held = data.set.subset(&data.held);
            let train_images = data.set.images.select(&data.train);
            let cond_img = data.set.images.select(&[first as usize]);
            let generated = gen.select(&own);
            let policy = encoder.augment_policy().cloned().unwrap_or_default();
            let rows: Vec<ReferenceRow> = cfg
                .list::<String>("evaluate.rows")?
                .iter()
                .map(|s| ReferenceRow::parse(s))
                .collect::<Result<_, _>>()?;
            let inputs = ReferenceInputs {
                conditioning: &cond_img,
                conditioning_label: data.set.labels.as_ref().map(|l| l[first as usize]),
                validation: &held,
                train: &train_images,
                generated: &generated,
                policy: &policy,
            };
            let report = distance_reference_suite(
                &inputs,
                &encoder,
                source,
                &rows,
                &ReferenceConfig::default(),
                &mut substream(run.seed, "evaluate-distance"),
            )?;
            run.write_json("report", "report.json", &report)?;
            run.write_text("report_text", "report.txt", &format!("{report}\n"))?;
        }
        "invariance" => {
            let encoder = encoder()?;
            run.fingerprint("encoder", encoder.fingerprint());
            let n: usize = cfg.get::<usize>("evaluate.images")?.min(data.held.len()).max(1);
            let pick = if data.held.is_empty() { vec![0] } else { data.held[..n].to_vec() };
            let transforms: Vec<Transform> = cfg
                .list::<String>("evaluate.transforms")?
                .iter()
                .map(|s| Transform::parse(s))
                .collect::<Result<_, _>>()?;
            let report = invariance_probe(&data.set.images.select(&pick), &transforms, &encoder)?;
            let factors = match &data.set.factors {
                Some(f) => {
                    let base: Vec<_> = pick.iter().map(|&i| f[i]).collect();
                    Some(factor_sensitivity(&encoder, &base, &mut substream(run.seed, "evaluate-factors"))?)
                }
                None => None,
            };
            run.write_json("report", "report.json", &json!({ "invariance": report, "factors": factors }))?;
            run.write_text("report_text", "report.txt", &format!("{report}\n"))?;
        }
        "fid" => {
            let (gen, _) = samples()?;
            let extractor = load_encoder(cfg.required("evaluate.extractor")?)?;
            run.fingerprint("extractor", extractor.fingerprint());
            let real = data.set.images.select(&data.held);
            let fa = extractor.encode_source(&real, Source::Backbone)?.values.cast::<f64>();
            let fb = extractor.encode_source(&gen, Source::Backbone)?.values.cast::<f64>();
            let fid = frechet_distance(&fa, &fb)?;
            let is = if extractor.config().num_classes > 0 {
                Some(inception_style_score(&extractor.class_probabilities(&gen)?.cast::<f64>())?)
            } else {
                None
            };
            let text = format!("{:<12} {:>10}\n{:<12.3} {:>10}\n", "FID", "IS", fid, is.map_or("n/a".into(), |v| format!("{v:.3}")));
            run.write_json(
                "report",
                "report.json",
                &json!({ "fid": fid, "is": is, "extractor": extractor.fingerprint(), "real": real.count(), "generated": gen.count() }),
            )?;
            run.write_text("report_text", "report.txt", &text)?;
        }
        other => return Err(usage(format!("unknown evaluate.kind {other}"))),
    }
    Ok(())
}

/// Runs `command` into `out` and writes its manifest.
pub fn execute(command: Command, cfg: &Config, seed: u64, out: &Path) -> CliResult<RunManifest> {
    let mut run = Run::start(out, seed)?;
    match command {
        Command::TrainEncoder => train_encoder(cfg, &mut run)?,
        Command::TrainRcdm => train_rcdm(cfg, &mut run)?,
        Command::Sample => sample(cfg, &mut run)?,
        Command::Interpolate => interpolate_cmd(cfg, &mut run)?,
        Command::KdeSample => kde_cmd(cfg, &mut run)?,
        Command::Match => match_cmd(cfg, &mut run)?,
        Command::Manipulate => manipulate_cmd(cfg, &mut run)?,
        Command::Attack => attack_cmd(cfg, &mut run)?,
        Command::Evaluate => evaluate_cmd(cfg, &mut run)?,
    }
    run.finish(command.name(), cfg)
}

/// Re-runs the command recorded in a manifest into `out` and checks that
/// every artifact checksum matches.
pub fn replay(manifest: &Path, out: &Path) -> CliResult<RunManifest> {
    let original = RunManifest::load(manifest)?;
    let command = Command::parse(&original.command)?;
    let cfg = Config::from_map(original.config.clone());
    let again = execute(command, &cfg, original.seed, out)?;
    let (a, b) = (original.checksums(), again.checksums());
    if a != b {
        let diff: Vec<&str> = a
            .keys()
            .chain(b.keys())
            .filter(|k| a.get(*k) != b.get(*k))
            .copied()
            .collect();
        return Err(CliError::ReplayMismatch(format!("artifacts differ: {}", diff.join(","))));
    }
    Ok(again)
}
