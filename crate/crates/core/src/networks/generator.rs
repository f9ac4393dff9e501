use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{read_archive, ArchiveTensor};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::metrics::Translator;
use crate::nn::params::normal_tensor;
use crate::nn::{Graph, NodeId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Standard deviation of the Gaussian used for decoder and output layers.
pub const DECODER_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorArch {
    /// VGG-16 convolutional encoder with a mirrored decoder.
    Vgg16Unet,
    /// Plain U-Net trained from scratch.
    UnetScratch,
    /// Returns its input unchanged; for debugging the evaluation path.
    Identity,
}

/// Encoder/decoder layout. Encoder stage `e` runs its convolutions and then
/// halves the resolution; decoder stage `d` doubles it, optionally
/// concatenates the pre-pooling features of encoder stage `S-1-d`, and runs
/// its convolutions. A 3×3 convolution and a logistic map produce the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub arch: GeneratorArch,
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_stages: Vec<Vec<usize>>,
    pub bottleneck: Vec<usize>,
    pub decoder_stages: Vec<Vec<usize>>,
    /// `(encoder stage, decoder stage)` pairs at equal resolution.
    pub skip_connections: Vec<(usize, usize)>,
    /// Encoder initialized from a VGG-16 archive.
    pub pretrained: bool,
}

impl GeneratorSpec {
    /// The 13 VGG-16 convolutions as encoder, one convolution per decoder stage.
    pub fn vgg16(pretrained: bool) -> Self {
        GeneratorSpec {
            arch: GeneratorArch::Vgg16Unet,
            in_channels: 3,
            out_channels: 3,
            encoder_stages: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            bottleneck: vec![],
            decoder_stages: vec![vec![512], vec![256], vec![128], vec![64], vec![32]],
            skip_connections: full_skips(5),
            pretrained,
        }
    }

    /// Two convolutions per level on both paths, no pretrained weights.
    pub fn unet_scratch() -> Self {
        GeneratorSpec {
            arch: GeneratorArch::UnetScratch,
            in_channels: 3,
            out_channels: 3,
            encoder_stages: vec![vec![32, 32], vec![64, 64], vec![128, 128], vec![256, 256], vec![512, 512]],
            bottleneck: vec![512],
            decoder_stages: vec![vec![256, 256], vec![128, 128], vec![64, 64], vec![32, 32], vec![32, 32]],
            skip_connections: full_skips(5),
            pretrained: false,
        }
    }

    pub fn identity() -> Self {
        GeneratorSpec {
            arch: GeneratorArch::Identity,
            in_channels: 3,
            out_channels: 3,
            encoder_stages: vec![],
            bottleneck: vec![],
            decoder_stages: vec![],
            skip_connections: vec![],
            pretrained: false,
        }
    }

    /// Divides every width by `divisor` (minimum 1); for quick experiments.
    pub fn scaled(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        let shrink = |v: &mut Vec<usize>| v.iter_mut().for_each(|c| *c = (*c / d).max(1));
        self.encoder_stages.iter_mut().for_each(shrink);
        shrink(&mut self.bottleneck);
        self.decoder_stages.iter_mut().for_each(shrink);
        self
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.encoder_stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.encoder_stages.len();
        if self.decoder_stages.len() != s {
            return Err(Error::Config(format!("{s} encoder stages but {} decoder stages", self.decoder_stages.len())));
        }
        if self.arch != GeneratorArch::Identity && s == 0 {
            return Err(Error::Config("generator needs at least one stage".into()));
        }
        if self.arch == GeneratorArch::Identity && self.in_channels != self.out_channels {
            return Err(Error::Config("identity generator needs equal channel counts".into()));
        }
        let all = self.encoder_stages.iter().chain(&self.decoder_stages).chain(std::iter::once(&self.bottleneck));
        for stage in all.clone() {
            if stage.contains(&0) {
                return Err(Error::Config("zero-width convolution".into()));
            }
        }
        if self.encoder_stages.iter().chain(&self.decoder_stages).any(Vec::is_empty) {
            return Err(Error::Config("every stage needs at least one convolution".into()));
        }
        for &(e, d) in &self.skip_connections {
            if e >= s || d >= s || e + d + 1 != s {
                return Err(Error::Config(format!("skip connection {e}->{d} does not join equal resolutions")));
            }
        }
        if self.pretrained && self.arch != GeneratorArch::Vgg16Unet {
            return Err(Error::Config("only the VGG-16 encoder can be pretrained".into()));
        }
        Ok(())
    }

    fn skip_for_decoder(&self, d: usize) -> Option<usize> {
        self.skip_connections.iter().find(|&&(_, dd)| dd == d).map(|&(e, _)| e)
    }

    /// `(name, [out, in, k, k], role)` for every convolution, in forward order.
    fn layers(&self) -> Vec<(String, [usize; 4], Role)> {
        let mut out = Vec::new();
        let mut c = self.in_channels;
        let mut enc_widths = Vec::new();
        for (s, stage) in self.encoder_stages.iter().enumerate() {
            for (i, &w) in stage.iter().enumerate() {
                out.push((format!("encoder.conv{}_{}", s + 1, i + 1), [w, c, 3, 3], Role::Encoder));
                c = w;
            }
            enc_widths.push(c);
        }
        for (i, &w) in self.bottleneck.iter().enumerate() {
            out.push((format!("bottleneck.conv{}", i + 1), [w, c, 3, 3], Role::Encoder));
            c = w;
        }
        for (d, stage) in self.decoder_stages.iter().enumerate() {
            if let Some(e) = self.skip_for_decoder(d) {
                c += enc_widths[e];
            }
            for (i, &w) in stage.iter().enumerate() {
                out.push((format!("decoder.stage{}.conv{}", d + 1, i + 1), [w, c, 3, 3], Role::Decoder));
                c = w;
            }
        }
        if self.arch != GeneratorArch::Identity {
            out.push(("output".to_string(), [self.out_channels, c, 3, 3], Role::Decoder));
        }
        out
    }
}

fn full_skips(stages: usize) -> Vec<(usize, usize)> {
    (0..stages).map(|d| (stages - 1 - d, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Encoder,
    Decoder,
}

/// Per-call forward switches.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Decoder stages whose skip input is replaced with zeros.
    pub zeroed_skips: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    params: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    /// Builds a generator. Encoder weights come from `archive` when the spec
    /// is pretrained; everything else is drawn from the seeded initializer
    /// (He-normal for encoder convolutions, `N(0, 0.02²)` for decoder and
    /// output convolutions, zero biases).
    pub fn build(spec: GeneratorSpec, seed: u64, archive: Option<&Path>) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pretrained = match (spec.pretrained, archive) {
            (true, Some(path)) => Some(read_archive::<T>(path)?),
            (true, None) => return Err(Error::Config("pretrained generator needs a weights archive".into())),
            (false, _) => None,
        };
        let mut params = ParamStore::new();
        for (name, shape, role) in spec.layers() {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let weight = match (&pretrained, role) {
                (Some(archive), Role::Encoder) => vgg_kernel(archive, &name, shape)?,
                (_, Role::Encoder) => normal_tensor(&shape, (2.0 / fan_in).sqrt(), &mut rng),
                (_, Role::Decoder) => normal_tensor(&shape, DECODER_INIT_STD, &mut rng),
            };
            let bias = match (&pretrained, role) {
                (Some(archive), Role::Encoder) => vgg_bias(archive, &name, shape[0])?,
                _ => Tensor::zeros(&[shape[0]]),
            };
            params.add(format!("{name}.weight"), weight);
            params.add(format!("{name}.bias"), bias);
        }
        Ok(Generator { spec, params })
    }

    /// Skeleton with every parameter zero; used when loading checkpoints.
    pub(crate) fn zeroed(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in spec.layers() {
            params.add(format!("{name}.weight"), Tensor::zeros(&shape));
            params.add(format!("{name}.bias"), Tensor::zeros(&[shape[0]]));
        }
        Ok(Generator { spec, params })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Names of the parameters initialized from the VGG-16 archive.
    pub fn encoder_param_names(&self) -> Vec<String> {
        self.spec
            .layers()
            .into_iter()
            .filter(|(_, _, r)| *r == Role::Encoder)
            .flat_map(|(n, _, _)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    /// Checks channel count and divisibility before any compute.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!("generator expects [n, {}, h, w], got {shape:?}", self.spec.in_channels)));
        }
        let m = self.spec.size_multiple();
        if !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(Error::Shape(format!("generator input {}x{} is not divisible by {m}", shape[2], shape[3])));
        }
        Ok(())
    }

    /// Records the forward pass on `g`; returns the `[0, 1]` output node.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, input: NodeId, opts: &ForwardOptions) -> Result<NodeId> {
        self.check_input(g.value(input).shape())?;
        if self.spec.arch == GeneratorArch::Identity {
            return Ok(input);
        }
        let p = |name: String| -> (usize, usize) {
            let w = self.params.id(&format!("{name}.weight")).expect("layer registered");
            let b = self.params.id(&format!("{name}.bias")).expect("layer registered");
            (w, b)
        };
        let mut x = input;
        let mut features = Vec::with_capacity(self.spec.encoder_stages.len());
        for (s, stage) in self.spec.encoder_stages.iter().enumerate() {
            for i in 0..stage.len() {
                let (w, b) = p(format!("encoder.conv{}_{}", s + 1, i + 1));
                let c = g.conv(x, w, b, 1, 1)?;
                x = g.relu(c);
            }
            features.push(x);
            x = g.max_pool2(x);
        }
        for i in 0..self.spec.bottleneck.len() {
            let (w, b) = p(format!("bottleneck.conv{}", i + 1));
            let c = g.conv(x, w, b, 1, 1)?;
            x = g.relu(c);
        }
        for (d, stage) in self.spec.decoder_stages.iter().enumerate() {
            x = g.upsample2(x);
            if let Some(e) = self.spec.skip_for_decoder(d) {
                let skip = if opts.zeroed_skips.contains(&d) {
                    let zeros = Tensor::zeros(g.value(features[e]).shape());
                    g.input(zeros, false)
                } else {
                    features[e]
                };
                x = g.concat(x, skip)?;
            }
            for i in 0..stage.len() {
                let (w, b) = p(format!("decoder.stage{}.conv{}", d + 1, i + 1));
                let c = g.conv(x, w, b, 1, 1)?;
                x = g.relu(c);
            }
        }
        let (w, b) = p("output".to_string());
        let logits = g.conv(x, w, b, 1, 1)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward_with(&self, batch: &Tensor<T>, opts: &ForwardOptions) -> Result<Tensor<T>> {
        self.check_input(batch.shape())?;
        let mut g = Graph::new(&self.params);
        let x = g.input(batch.clone(), false);
        let y = self.forward_graph(&mut g, x, opts)?;
        Ok(g.value(y).clone())
    }

    /// Maps a `[n, 3, h, w]` batch in `[0, 1]` to a batch of the same shape.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(batch, &ForwardOptions::default())
    }
}

impl<T: Scalar> Translator<T> for Generator<T> {
    /// Reflect-pads to the next valid size, runs the network and crops back.
    fn translate(&self, flash: &Image<T>) -> Result<Image<T>> {
        let m = self.spec.size_multiple();
        let (h, w, _) = flash.dims();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = flash.pad_reflect(ph, pw)?;
        let out = self.forward(&Tensor::from_images(&[&padded])?)?;
        let img = out.to_images()?.pop().expect("one image");
        img.crop(0, 0, h, w)
    }
}

/// Converts an archive kernel stored `[kh, kw, in, out]` to `[out, in, kh, kw]`.
fn vgg_kernel<T: Scalar>(
    archive: &HashMap<String, ArchiveTensor<T>>,
    layer: &str,
    shape: [usize; 4],
) -> Result<Tensor<T>> {
    let key = format!("{}.weight", archive_name(layer));
    let [o, i, kh, kw] = shape;
    let t = archive
        .get(&key)
        .ok_or_else(|| Error::TensorLoad { tensor: key.clone(), reason: "missing from archive".into() })?;
    if t.shape != [kh, kw, i, o] {
        return Err(Error::TensorLoad {
            tensor: key,
            reason: format!("expected shape {:?}, found {:?}", [kh, kw, i, o], t.shape),
        });
    }
    let mut data = vec![T::zero(); o * i * kh * kw];
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..i {
                for n in 0..o {
                    data[((n * i + c) * kh + y) * kw + x] = t.data[((y * kw + x) * i + c) * o + n];
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), data)
}

fn vgg_bias<T: Scalar>(archive: &HashMap<String, ArchiveTensor<T>>, layer: &str, out: usize) -> Result<Tensor<T>> {
    let key = format!("{}.bias", archive_name(layer));
    let t = archive
        .get(&key)
        .ok_or_else(|| Error::TensorLoad { tensor: key.clone(), reason: "missing from archive".into() })?;
    if t.shape != [out] {
        return Err(Error::TensorLoad { tensor: key, reason: format!("expected shape [{out}], found {:?}", t.shape) });
    }
    Tensor::new(vec![out], t.data.clone())
}

/// `encoder.conv1_1` -> `conv1_1`.
fn archive_name(layer: &str) -> &str {
    layer.strip_prefix("encoder.").unwrap_or(layer)
}

/// Exports the encoder in archive layout (`conv{s}_{i}.weight` as
/// `[kh, kw, in, out]`, `conv{s}_{i}.bias` as `[out]`).
pub fn encoder_archive_tensors<T: Scalar>(generator: &Generator<T>) -> Vec<(String, ArchiveTensor<T>)> {
    let mut out = Vec::new();
    for (name, shape, role) in generator.spec.layers() {
        if role != Role::Encoder || !name.starts_with("encoder.") {
            continue;
        }
        let [o, i, kh, kw] = shape;
        let w = generator.params.by_name(&format!("{name}.weight")).expect("registered");
        let mut data = vec![T::zero(); w.len()];
        for y in 0..kh {
            for x in 0..kw {
                for c in 0..i {
                    for n in 0..o {
                        data[((y * kw + x) * i + c) * o + n] = w.data()[((n * i + c) * kh + y) * kw + x];
                    }
                }
            }
        }
        let b = generator.params.by_name(&format!("{name}.bias")).expect("registered");
        let base = archive_name(&name).to_string();
        out.push((format!("{base}.weight"), ArchiveTensor { shape: vec![kh, kw, i, o], data }));
        out.push((format!("{base}.bias"), ArchiveTensor { shape: vec![o], data: b.data().to_vec() }));
    }
    out
}
