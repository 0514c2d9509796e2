use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcdm_cli::commands::{execute, replay, Command};
use rcdm_cli::config::{parse_override, Config};
use rcdm_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "rcdm", version, about = "Representation-conditioned diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; one run at a time.
    #[arg(long)]
    out: PathBuf,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an encoder (random, supervised or ssl).
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        flavor: Option<String>,
    },
    /// Train a denoiser conditioned on a frozen encoder.
    TrainRcdm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<String>,
        /// backbone or projector
        #[arg(long)]
        source: Option<String>,
    },
    /// Sample images conditioned on representations.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        denoiser: Option<String>,
        #[arg(long)]
        encoder: Option<String>,
        /// Conditioning image file.
        #[arg(long)]
        image: Option<String>,
        /// Representation tensor file.
        #[arg(long)]
        reps: Option<String>,
        /// Comma-separated dataset indices.
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        count: Option<String>,
    },
    /// Sample along a line between two representations.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        denoiser: Option<String>,
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        indices: Option<String>,
    },
    /// Sample conditionings from a kernel density over a bank.
    KdeSample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        denoiser: Option<String>,
        #[arg(long)]
        bank: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
    },
    /// Optimise an input to reproduce a target representation.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        distance: Option<String>,
        #[arg(long)]
        optimizer: Option<String>,
        /// Also emit the optimiser/distance table.
        #[arg(long)]
        table: bool,
    },
    /// Zero, swap or combine representation dimensions and sample.
    Manipulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        denoiser: Option<String>,
        #[arg(long)]
        encoder: Option<String>,
        /// zero, swap or algebra
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        dims: Option<String>,
        #[arg(long)]
        top_m: Option<String>,
    },
    /// FGSM sweep against a linear probe.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        probe: Option<String>,
        #[arg(long)]
        denoiser: Option<String>,
        #[arg(long)]
        epsilons: Option<String>,
    },
    /// Rank/MRR, distance references, invariance probe or FID/IS.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// rank, distance, invariance or fid
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        encoder: Option<String>,
    },
    /// Re-run a manifest and verify its artifact checksums.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn flags(pairs: &[(&str, &Option<String>)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn run(cli: Cli) -> CliResult<String> {
    let (command, common, named) = match cli.cmd {
        Cmd::Replay { manifest, out } => {
            let m = replay(&manifest, &out)?;
            return Ok(format!("rcdm: ok command=replay replayed={} artifacts={}", m.command, m.artifacts.len()));
        }
        Cmd::TrainEncoder { common, flavor } => (Command::TrainEncoder, common, flags(&[("encoder.flavor", &flavor)])),
        Cmd::TrainRcdm { common, encoder, source } => (
            Command::TrainRcdm,
            common,
            flags(&[("encoder.checkpoint", &encoder), ("encoder.source", &source)]),
        ),
        Cmd::Sample {
            common,
            denoiser,
            encoder,
            image,
            reps,
            indices,
            count,
        } => (
            Command::Sample,
            common,
            flags(&[
                ("denoiser.checkpoint", &denoiser),
                ("encoder.checkpoint", &encoder),
                ("input.image", &image),
                ("input.reps", &reps),
                ("input.indices", &indices),
                ("sample.count", &count),
            ]),
        ),
        Cmd::Interpolate {
            common,
            denoiser,
            encoder,
            indices,
        } => (
            Command::Interpolate,
            common,
            flags(&[
                ("denoiser.checkpoint", &denoiser),
                ("encoder.checkpoint", &encoder),
                ("input.indices", &indices),
            ]),
        ),
        Cmd::KdeSample {
            common,
            denoiser,
            bank,
            sigma,
        } => (
            Command::KdeSample,
            common,
            flags(&[("denoiser.checkpoint", &denoiser), ("bank.path", &bank), ("kde.sigma", &sigma)]),
        ),
        Cmd::Match {
            common,
            encoder,
            indices,
            distance,
            optimizer,
            table,
        } => {
            let mut f = flags(&[
                ("encoder.checkpoint", &encoder),
                ("input.indices", &indices),
                ("match.distance", &distance),
                ("match.optimizer", &optimizer),
            ]);
            if table {
                f.push(("match.table".into(), "true".into()));
            }
            (Command::Match, common, f)
        }
        Cmd::Manipulate {
            common,
            denoiser,
            encoder,
            op,
            indices,
            dims,
            top_m,
        } => (
            Command::Manipulate,
            common,
            flags(&[
                ("denoiser.checkpoint", &denoiser),
                ("encoder.checkpoint", &encoder),
                ("manipulate.op", &op),
                ("input.indices", &indices),
                ("manipulate.dims", &dims),
                ("manipulate.top_m", &top_m),
            ]),
        ),
        Cmd::Attack {
            common,
            encoder,
            probe,
            denoiser,
            epsilons,
        } => (
            Command::Attack,
            common,
            flags(&[
                ("encoder.checkpoint", &encoder),
                ("probe.checkpoint", &probe),
                ("denoiser.checkpoint", &denoiser),
                ("attack.epsilons", &epsilons),
            ]),
        ),
        Cmd::Evaluate {
            common,
            kind,
            samples,
            encoder,
        } => (
            Command::Evaluate,
            common,
            flags(&[
                ("evaluate.kind", &kind),
                ("samples.path", &samples),
                ("encoder.checkpoint", &encoder),
            ]),
        ),
    };
    let mut overrides = named;
    for s in &common.set {
        overrides.push(parse_override(s)?);
    }
    let cfg = Config::resolve(&command.defaults(), common.config.as_deref(), &overrides)?;
    let m = execute(command, &cfg, common.seed, &common.out)?;
    Ok(format!(
        "rcdm: ok command={} out={} artifacts={}",
        m.command,
        common.out.display(),
        m.artifacts.len()
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).reason_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.reason_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
