//! Single-file checkpoints: named tensors plus one JSON metadata block.
//!
//! Tensor names are `generator.<param>`, `discriminator.<param>` and
//! `adam.<model>.{m,v}.<param>`. The metadata key [`METADATA_KEY`] holds the
//! format version, both architecture specs, their hash, training counters
//! and optimizer hyperparameters.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::archive::{encode_archive, parse_archive, ArchiveTensor};
use super::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore, Tensor};
use crate::scalar::Scalar;

pub const METADATA_KEY: &str = "flashgan";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    /// Hash of the run configuration that produced the checkpoint, if any.
    pub run_config_hash: Option<String>,
    /// Opaque trainer bookkeeping needed to resume.
    pub trainer_state: Option<serde_json::Value>,
}

/// Optimizer moments saved alongside the models so training can resume.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub generator: Adam<T>,
    pub discriminator: Option<Adam<T>>,
}

/// Generator, optional discriminator, and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub generator: Generator<T>,
    pub discriminator: Option<Discriminator<T>>,
    pub meta: TrainingMeta,
    pub optimizer: Option<OptimizerState<T>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture_hash: String,
    generator: GeneratorSpec,
    discriminator: Option<DiscriminatorSpec>,
    meta: TrainingMeta,
    adam_generator: Option<AdamHeader>,
    adam_discriminator: Option<AdamHeader>,
}

/// SHA-256 over the canonical JSON of both architecture specs.
pub fn architecture_hash(generator: &GeneratorSpec, discriminator: Option<&DiscriminatorSpec>) -> String {
    let json = serde_json::to_vec(&(generator, discriminator)).expect("specs serialize");
    hex(&Sha256::digest(json))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(generator: Generator<T>, discriminator: Option<Discriminator<T>>) -> Self {
        ModelBundle { generator, discriminator, meta: TrainingMeta::default(), optimizer: None }
    }

    pub fn architecture_hash(&self) -> String {
        architecture_hash(self.generator.spec(), self.discriminator.as_ref().map(|d| d.spec()))
    }

    /// Serializes the bundle; identical bundles give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        push_store(&mut tensors, "generator", self.generator.params());
        if let Some(d) = &self.discriminator {
            push_store(&mut tensors, "discriminator", d.params());
        }
        let (mut adam_g, mut adam_d) = (None, None);
        if let Some(opt) = &self.optimizer {
            push_adam(&mut tensors, "generator", self.generator.params(), &opt.generator)?;
            adam_g = Some(AdamHeader { config: opt.generator.config, steps: opt.generator.steps() });
            match (&opt.discriminator, &self.discriminator) {
                (Some(a), Some(d)) => {
                    push_adam(&mut tensors, "discriminator", d.params(), a)?;
                    adam_d = Some(AdamHeader { config: a.config, steps: a.steps() });
                }
                (None, _) => {}
                (Some(_), None) => return Err(Error::Config("discriminator optimizer without a discriminator".into())),
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture_hash: self.architecture_hash(),
            generator: self.generator.spec().clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.spec().clone()),
            meta: self.meta.clone(),
            adam_generator: adam_g,
            adam_discriminator: adam_d,
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        encode_archive(&tensors, Some(HashMap::from([(METADATA_KEY.to_string(), json)])))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write-then-rename so an interrupted save never clobbers the last
        // good checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::TensorLoad { tensor, reason } => {
                Error::Checkpoint { path: path.to_path_buf(), reason: format!("{tensor}: {reason}") }
            }
            Error::Config(reason) => Error::Checkpoint { path: path.to_path_buf(), reason },
            other => other,
        })
    }

    /// Loads and insists on the given architecture; nothing is returned on
    /// mismatch.
    pub fn load_expecting(
        path: &Path,
        generator: &GeneratorSpec,
        discriminator: Option<&DiscriminatorSpec>,
    ) -> Result<Self> {
        let bundle = Self::load(path)?;
        let found = bundle.architecture_hash();
        let expected = architecture_hash(generator, discriminator);
        if found != expected {
            let describe = |g: &GeneratorSpec, d: Option<&DiscriminatorSpec>| {
                format!(
                    "{:?} generator ({}), discriminator {}",
                    g.arch,
                    &architecture_hash(g, d)[..12],
                    if d.is_some() { "present" } else { "absent" }
                )
            };
            return Err(Error::ArchitectureMismatch {
                expected: describe(generator, discriminator),
                found: describe(bundle.generator.spec(), bundle.discriminator.as_ref().map(|d| d.spec())),
            });
        }
        Ok(bundle)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut tensors, meta) = parse_archive::<T>(bytes)?;
        let json = meta.get(METADATA_KEY).ok_or_else(|| Error::Config(format!("missing `{METADATA_KEY}` metadata")))?;
        let header: Header = serde_json::from_str(json).map_err(|e| Error::Config(format!("bad metadata: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported format version {}", header.format_version)));
        }
        let hash = architecture_hash(&header.generator, header.discriminator.as_ref());
        if hash != header.architecture_hash {
            return Err(Error::Config("architecture hash does not match the embedded specs".into()));
        }

        let mut generator = Generator::zeroed(header.generator)?;
        fill_store(&mut tensors, "generator", generator.params_mut())?;
        let mut discriminator = match header.discriminator {
            Some(spec) => {
                let mut d = Discriminator::zeroed(spec)?;
                fill_store(&mut tensors, "discriminator", d.params_mut())?;
                Some(d)
            }
            None => None,
        };
        let optimizer = match header.adam_generator {
            Some(h) => {
                let g = take_adam(&mut tensors, "generator", generator.params(), h)?;
                let d = match (header.adam_discriminator, discriminator.as_mut()) {
                    (Some(h), Some(d)) => Some(take_adam(&mut tensors, "discriminator", d.params(), h)?),
                    (None, _) => None,
                    (Some(_), None) => return Err(Error::Config("discriminator optimizer without model".into())),
                };
                Some(OptimizerState { generator: g, discriminator: d })
            }
            None => None,
        };
        if let Some(extra) = tensors.keys().min() {
            return Err(Error::Config(format!("unexpected tensor `{extra}`")));
        }
        Ok(ModelBundle { generator, discriminator, meta: header.meta, optimizer })
    }
}

fn push_store<T: Scalar>(out: &mut Vec<(String, ArchiveTensor<T>)>, prefix: &str, store: &ParamStore<T>) {
    for (name, t) in store.iter() {
        out.push((format!("{prefix}.{name}"), ArchiveTensor { shape: t.shape().to_vec(), data: t.data().to_vec() }));
    }
}

fn push_adam<T: Scalar>(
    out: &mut Vec<(String, ArchiveTensor<T>)>,
    model: &str,
    store: &ParamStore<T>,
    adam: &Adam<T>,
) -> Result<()> {
    if adam.first_moments().len() != store.len() {
        return Err(Error::Shape(format!("{model} optimizer does not match its parameters")));
    }
    for (kind, moments) in [("m", adam.first_moments()), ("v", adam.second_moments())] {
        for ((name, t), data) in store.iter().zip(moments) {
            out.push((
                format!("adam.{model}.{kind}.{name}"),
                ArchiveTensor { shape: t.shape().to_vec(), data: data.clone() },
            ));
        }
    }
    Ok(())
}

fn take_tensor<T: Scalar>(
    tensors: &mut HashMap<String, ArchiveTensor<T>>,
    key: String,
    shape: &[usize],
) -> Result<Vec<T>> {
    let t = tensors.remove(&key).ok_or_else(|| Error::TensorLoad { tensor: key.clone(), reason: "missing".into() })?;
    if t.shape != shape {
        return Err(Error::TensorLoad {
            tensor: key,
            reason: format!("expected shape {shape:?}, found {:?}", t.shape),
        });
    }
    Ok(t.data)
}

fn fill_store<T: Scalar>(
    tensors: &mut HashMap<String, ArchiveTensor<T>>,
    prefix: &str,
    store: &mut ParamStore<T>,
) -> Result<()> {
    for id in 0..store.len() {
        let key = format!("{prefix}.{}", store.name(id));
        let shape = store.get(id).shape().to_vec();
        let data = take_tensor(tensors, key, &shape)?;
        *store.get_mut(id) = Tensor::new(shape, data)?;
    }
    Ok(())
}

fn take_adam<T: Scalar>(
    tensors: &mut HashMap<String, ArchiveTensor<T>>,
    model: &str,
    store: &ParamStore<T>,
    header: AdamHeader,
) -> Result<Adam<T>> {
    let mut moments = [Vec::new(), Vec::new()];
    for (kind, dst) in ["m", "v"].into_iter().zip(moments.iter_mut()) {
        for (name, t) in store.iter() {
            dst.push(take_tensor(tensors, format!("adam.{model}.{kind}.{name}"), t.shape())?);
        }
    }
    let [m, v] = moments;
    Ok(Adam::from_parts(header.config, header.steps, m, v))
}
