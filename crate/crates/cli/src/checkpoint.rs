//! Binary container for model parameters and tensors: an 8-byte magic, a
//! little-endian `u32` header length, a JSON header, then raw little-endian
//! f32 blobs each covered by its own SHA-256.

use std::fs;
use std::io::Write;
use std::path::Path;

use rcdm_core::denoiser::{DenoiserConfig, DenoiserNetwork};
use rcdm_core::encoders::{Encoder, EncoderConfig, Provenance, Source};
use rcdm_core::advprobe::LinearProbe;
use rcdm_core::nn::{Fingerprint, ParamStore};
use rcdm_core::repops::{Metric, RepresentationBank};
use rcdm_core::schedule::{make_schedule, NoiseSchedule};
use rcdm_core::augment::AugmentPolicy;
use rcdm_core::{Error, Result};
use rcdm_tensor::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"RCDMCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Denoiser,
    Probe,
    Bank,
    Tensor,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Denoiser => "denoiser",
            Component::Probe => "probe",
            Component::Bank => "bank",
            Component::Tensor => "tensor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    component: Component,
    architecture: Value,
    metadata: Value,
    blobs: Vec<BlobInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub component: Component,
    pub architecture: Value,
    pub metadata: Value,
    pub blobs: Vec<(String, Tensor<f32>)>,
}

fn blob_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Container {
    pub fn new(component: Component, architecture: Value, metadata: Value) -> Self {
        Self {
            component,
            architecture,
            metadata,
            blobs: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.blobs.push((name.into(), t));
    }

    pub fn blob(&self, name: &str) -> Result<&Tensor<f32>> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingArtifact(format!("blob {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut infos = Vec::with_capacity(self.blobs.len());
        let mut body = Vec::new();
        for (name, t) in &self.blobs {
            let bytes = blob_bytes(t);
            infos.push(BlobInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: body.len() as u64,
                sha256: sha256_hex(&bytes),
            });
            body.extend_from_slice(&bytes);
        }
        let header = serde_json::to_vec(&Header {
            schema_version: SCHEMA_VERSION,
            component: self.component,
            architecture: self.architecture.clone(),
            metadata: self.metadata.clone(),
            blobs: infos,
        })?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Config("checkpoint header too large".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint container".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Integrity("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: header.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let body = &bytes[header_end..];
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for info in &header.blobs {
            let n: usize = info.shape.iter().product();
            let start = info.offset as usize;
            let raw = start
                .checked_add(4 * n)
                .and_then(|end| body.get(start..end))
                .ok_or_else(|| Error::Integrity(format!("blob {} out of bounds", info.name)))?;
            if sha256_hex(raw) != info.sha256 {
                return Err(Error::Integrity(format!("checksum mismatch in blob {}", info.name)));
            }
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blobs.push((info.name.clone(), Tensor::new(info.shape.clone(), data)));
        }
        Ok(Self {
            component: header.component,
            architecture: header.architecture,
            metadata: header.metadata,
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the component type.
    pub fn load_as(path: &Path, expected: Component) -> Result<Self> {
        let c = Self::load(path)?;
        c.expect(expected)?;
        Ok(c)
    }

    pub fn expect(&self, expected: Component) -> Result<()> {
        if self.component != expected {
            return Err(Error::ComponentType {
                expected: expected.as_str().into(),
                found: self.component.as_str().into(),
            });
        }
        Ok(())
    }

    fn params(&self) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        for (name, t) in &self.blobs {
            store.add(name.clone(), t.clone());
        }
        store
    }

    fn arch<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .architecture
            .get(key)
            .ok_or_else(|| Error::Integrity(format!("architecture lacks {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Integrity(format!("architecture field {key}: {e}")))
    }
}

fn store_blobs(c: &mut Container, params: &ParamStore<f32>) {
    for (name, t) in params.iter() {
        c.push(name, t.clone());
    }
}

pub fn encoder_container(enc: &Encoder, metadata: Value) -> Container {
    let arch = serde_json::json!({
        "config": enc.config(),
        "provenance": enc.provenance(),
        "augment": enc.augment_policy(),
        "fingerprint": enc.fingerprint(),
    });
    let mut c = Container::new(Component::Encoder, arch, metadata);
    store_blobs(&mut c, enc.params());
    c
}

pub fn encoder_from_container(c: &Container) -> Result<Encoder> {
    c.expect(Component::Encoder)?;
    let cfg: EncoderConfig = c.arch("config")?;
    let prov: Provenance = c.arch("provenance")?;
    let augment: Option<AugmentPolicy> = c.arch("augment")?;
    Encoder::from_params(cfg, prov, augment, c.params())
}

/// Trained denoiser together with its noise schedule and the encoder output
/// it was conditioned on.
#[derive(Clone, Debug)]
pub struct DenoiserArtifact {
    pub net: DenoiserNetwork,
    pub schedule: NoiseSchedule,
    pub encoder: Fingerprint,
    pub source: Source,
}

pub fn denoiser_container(a: &DenoiserArtifact, metadata: Value) -> Container {
    let arch = serde_json::json!({
        "config": a.net.config(),
        "schedule": {
            "steps": a.schedule.steps(),
            "beta_min": a.schedule.beta_min(),
            "beta_max": a.schedule.beta_max(),
        },
        "encoder": a.encoder,
        "source": a.source,
        "fingerprint": a.net.fingerprint(),
    });
    let mut c = Container::new(Component::Denoiser, arch, metadata);
    store_blobs(&mut c, a.net.params());
    c
}

#[derive(Deserialize)]
struct ScheduleSpec {
    steps: usize,
    beta_min: f64,
    beta_max: f64,
}

pub fn denoiser_from_container(c: &Container) -> Result<DenoiserArtifact> {
    c.expect(Component::Denoiser)?;
    let cfg: DenoiserConfig = c.arch("config")?;
    let s: ScheduleSpec = c.arch("schedule")?;
    Ok(DenoiserArtifact {
        net: DenoiserNetwork::from_params(cfg, c.params())?,
        schedule: make_schedule(s.steps, s.beta_min, s.beta_max)?,
        encoder: c.arch("encoder")?,
        source: c.arch("source")?,
    })
}

pub fn probe_container(p: &LinearProbe, metadata: Value) -> Container {
    let arch = serde_json::json!({
        "encoder": p.encoder,
        "source": p.source,
        "train_accuracy": p.train_accuracy,
        "classes": p.num_classes(),
        "dim": p.dim(),
    });
    let mut c = Container::new(Component::Probe, arch, metadata);
    c.push("weight", p.weight.clone());
    c.push("bias", Tensor::new(vec![p.bias.len()], p.bias.clone()));
    c
}

pub fn probe_from_container(c: &Container) -> Result<LinearProbe> {
    c.expect(Component::Probe)?;
    let weight = c.blob("weight")?.clone();
    let bias = c.blob("bias")?.data().to_vec();
    if weight.rank() != 2 || bias.len() != weight.shape()[0] {
        return Err(Error::Integrity("probe blobs have inconsistent shapes".into()));
    }
    Ok(LinearProbe {
        weight,
        bias,
        encoder: c.arch("encoder")?,
        source: c.arch("source")?,
        train_accuracy: c.arch("train_accuracy")?,
    })
}

/// Index sidecar stored next to a bank container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankIndex {
    pub ids: Vec<u64>,
    pub k: usize,
    pub metric: Metric,
    pub labels: Option<Vec<usize>>,
    pub source: Option<Source>,
    pub encoder: Option<Fingerprint>,
    pub dataset_hash: Option<String>,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes the bank container and its JSON index sidecar.
pub fn save_bank(bank: &RepresentationBank, metric: Metric, dataset_hash: Option<String>, path: &Path) -> Result<()> {
    let index = BankIndex {
        ids: bank.ids().to_vec(),
        k: bank.dim(),
        metric,
        labels: bank.labels().map(<[usize]>::to_vec),
        source: bank.source,
        encoder: bank.encoder.clone(),
        dataset_hash,
    };
    let mut c = Container::new(Component::Bank, serde_json::to_value(&index)?, Value::Null);
    c.push("reps", bank.reps().clone());
    c.save(path)?;
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&index)?)
}

pub fn load_bank(path: &Path) -> Result<(RepresentationBank, BankIndex)> {
    let c = Container::load_as(path, Component::Bank)?;
    let index: BankIndex = serde_json::from_value(c.architecture.clone())
        .map_err(|e| Error::Integrity(format!("bank index: {e}")))?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let side: BankIndex = serde_json::from_slice(&fs::read(&sidecar)?)?;
        if side != index {
            return Err(Error::Integrity("bank sidecar disagrees with container".into()));
        }
    }
    let reps = c.blob("reps")?.clone();
    if reps.rank() != 2 || reps.shape()[1] != index.k {
        return Err(Error::Integrity("bank blob shape disagrees with index".into()));
    }
    let mut bank = RepresentationBank::new(reps, index.ids.clone(), index.labels.clone())?;
    bank.source = index.source;
    bank.encoder = index.encoder.clone();
    Ok((bank, index))
}

/// A single named tensor, used for sample batches and representation files.
pub fn save_tensor(t: &Tensor<f32>, metadata: Value, path: &Path) -> Result<()> {
    let mut c = Container::new(Component::Tensor, Value::Null, metadata);
    c.push("data", t.clone());
    c.save(path)
}

pub fn load_tensor(path: &Path) -> Result<(Tensor<f32>, Value)> {
    let c = Container::load_as(path, Component::Tensor)?;
    Ok((c.blob("data")?.clone(), c.metadata))
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
