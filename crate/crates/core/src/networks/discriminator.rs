use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::DECODER_INIT_STD;
use crate::error::{Error, Result};
use crate::losses::PatchScores;
use crate::nn::params::normal_tensor;
use crate::nn::{Graph, NodeId, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscLayer {
    pub out_channels: usize,
    pub stride: usize,
    pub instance_norm: bool,
}

/// Fully convolutional patch classifier: every layer is a `kernel`×`kernel`
/// convolution with padding 1 followed by optional instance normalization and
/// a leaky ReLU; a final stride-1 convolution emits one logit per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub layers: Vec<DiscLayer>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        let layer = |out_channels, stride, instance_norm| DiscLayer { out_channels, stride, instance_norm };
        DiscriminatorSpec {
            in_channels: 3,
            kernel: 4,
            leaky_slope: 0.2,
            layers: vec![layer(64, 2, false), layer(128, 2, true), layer(256, 2, true), layer(512, 1, true)],
        }
    }
}

impl DiscriminatorSpec {
    /// Variant that sees the flash image concatenated with the candidate.
    pub fn conditional() -> Self {
        DiscriminatorSpec { in_channels: 6, ..Self::default() }
    }

    pub fn scaled(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        for l in &mut self.layers {
            l.out_channels = (l.out_channels / d).max(1);
        }
        self
    }

    /// Side of the input window that influences one output score.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for stride in self.layers.iter().map(|l| l.stride).chain(std::iter::once(1)) {
            rf += (self.kernel - 1) * jump;
            jump *= stride;
        }
        rf
    }

    /// Score grid size for an `h`×`w` input, or `None` if it collapses.
    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let mut dims = (h, w);
        for stride in self.layers.iter().map(|l| l.stride).chain(std::iter::once(1)) {
            let f = |x: usize| (x + 2).checked_sub(self.kernel).map(|v| v / stride + 1);
            dims = (f(dims.0)?, f(dims.1)?);
        }
        Some(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 {
            return Err(Error::Config("discriminator needs input channels and a kernel".into()));
        }
        if self.layers.iter().any(|l| l.out_channels == 0 || l.stride == 0) {
            return Err(Error::Config("discriminator layer with zero width or stride".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky slope must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    params: ParamStore<T>,
}

impl<T: Scalar> Discriminator<T> {
    /// Weights drawn from `N(0, 0.02²)`, zero biases.
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in Self::layer_shapes(&spec) {
            params.add(format!("{name}.weight"), normal_tensor(&shape, DECODER_INIT_STD, &mut rng));
            params.add(format!("{name}.bias"), Tensor::zeros(&[shape[0]]));
        }
        Ok(Discriminator { spec, params })
    }

    pub(crate) fn zeroed(spec: DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in Self::layer_shapes(&spec) {
            params.add(format!("{name}.weight"), Tensor::zeros(&shape));
            params.add(format!("{name}.bias"), Tensor::zeros(&[shape[0]]));
        }
        Ok(Discriminator { spec, params })
    }

    fn layer_shapes(spec: &DiscriminatorSpec) -> Vec<(String, [usize; 4])> {
        let k = spec.kernel;
        let mut c = spec.in_channels;
        let mut out = Vec::new();
        for (i, l) in spec.layers.iter().enumerate() {
            out.push((format!("conv{}", i + 1), [l.out_channels, c, k, k]));
            c = l.out_channels;
        }
        out.push(("score".to_string(), [1, c, k, k]));
        out
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects [n, {}, h, w], got {shape:?}",
                self.spec.in_channels
            )));
        }
        if self.spec.output_dims(shape[2], shape[3]).is_none_or(|(h, w)| h == 0 || w == 0) {
            return Err(Error::Shape(format!("discriminator input {}x{} is too small", shape[2], shape[3])));
        }
        Ok(())
    }

    /// Records the forward pass; the result node holds `[n, 1, gh, gw]` logits.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, input: NodeId) -> Result<NodeId> {
        self.check_input(g.value(input).shape())?;
        let p = |name: &str| {
            (
                self.params.id(&format!("{name}.weight")).expect("layer registered"),
                self.params.id(&format!("{name}.bias")).expect("layer registered"),
            )
        };
        let mut x = input;
        for (i, l) in self.spec.layers.iter().enumerate() {
            let (w, b) = p(&format!("conv{}", i + 1));
            x = g.conv(x, w, b, l.stride, 1)?;
            if l.instance_norm {
                x = g.instance_norm(x);
            }
            x = g.leaky_relu(x, self.spec.leaky_slope);
        }
        let (w, b) = p("score");
        g.conv(x, w, b, 1, 1)
    }

    /// Patch scores for a batch, flattened in `[n, gh, gw]` order.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<PatchScores<T>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(batch.clone(), false);
        let y = self.forward_graph(&mut g, x)?;
        Ok(PatchScores::from_logits(g.value(y).data().to_vec()))
    }
}
