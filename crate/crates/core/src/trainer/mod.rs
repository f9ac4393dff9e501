//! Alternating adversarial training, resumable checkpoints, and the
//! ablation harness.

mod ablation;
mod config;
mod guard;
mod log;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ablation::{run_ablation_matrix, AblationReport, AblationRow, PUBLISHED_RESULTS};
pub use config::{Ablation, RunConfig};
pub use guard::{DivergenceGuard, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE};
pub use log::{read_log, LogRecord, LOG_HEADER};

use self::log::LogWriter;
use crate::data::{make_training_sample, DatasetManifest, ManifestPairs, PairSource, Split, TrainingSample};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_grad, generator_adversarial_loss_grad, guided_reconstruction, LossBreakdown, PatchScores,
};
use crate::networks::{Discriminator, ForwardOptions, Generator, ModelBundle, OptimizerState, TrainingMeta};
use crate::nn::{Adam, Graph, NodeId, Tensor};
use crate::scalar::Scalar;

/// Derives an independent seed for a named random stream.
fn stream_seed(seed: u64, counter: u64, tag: &[u8; 8]) -> u64 {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&counter.to_le_bytes());
    bytes[16..24].copy_from_slice(tag);
    ChaCha8Rng::from_seed(bytes).random()
}

/// Visiting order of the train split in `epoch` (0-based).
pub fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch, b"shuffle\0")));
    order
}

/// Result of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub bundle: ModelBundle<T>,
    /// Records produced by this invocation (not those before a resume).
    pub history: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Stacked tensors of one batch.
struct Batch<T> {
    flash: Tensor<T>,
    ambient: Tensor<T>,
    /// Attention map broadcast to `[n, 3, h, w]`, or ones when unguided.
    mask: Tensor<T>,
    ids: String,
}

fn assemble<T: Scalar>(samples: &[TrainingSample<T>], guided: bool) -> Result<Batch<T>> {
    if samples.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let flash = Tensor::from_images(&samples.iter().map(|s| &s.flash).collect::<Vec<_>>())?;
    let ambient = Tensor::from_images(&samples.iter().map(|s| &s.ambient).collect::<Vec<_>>())?;
    let (n, c, h, w) = flash.dims4();
    let mut mask = Tensor::filled(&[n, c, h, w], T::one());
    if guided {
        for (b, s) in samples.iter().enumerate() {
            if (s.attention.height(), s.attention.width()) != (h, w) {
                return Err(Error::InvalidPair(format!("attention map of `{}` has the wrong size", s.pair_id)));
            }
            let m = s.attention.as_slice();
            for k in 0..c {
                mask.data_mut()[(b * c + k) * h * w..(b * c + k + 1) * h * w].copy_from_slice(m);
            }
        }
    }
    let ids = samples.iter().map(|s| s.pair_id.as_str()).collect::<Vec<_>>().join(",");
    Ok(Batch { flash, ambient, mask, ids })
}

fn masked<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Discriminator input node: the candidate, preceded by the masked flash
/// image when the discriminator is conditional.
fn disc_input<T: Scalar>(
    g: &mut Graph<'_, T>,
    d: &Discriminator<T>,
    candidate: &Tensor<T>,
    condition: &Tensor<T>,
    requires_grad: bool,
) -> Result<(NodeId, NodeId)> {
    let x = g.input(candidate.clone(), requires_grad);
    if d.spec().in_channels == candidate.shape()[1] {
        return Ok((x, x));
    }
    let c = g.input(condition.clone(), false);
    Ok((g.concat(c, x)?, x))
}

/// Discriminator loss and its parameter gradients on masked real/fake images.
fn discriminator_grads<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    condition: &Tensor<T>,
) -> Result<(T, Vec<Option<Tensor<T>>>)> {
    let mut g = Graph::new(d.params());
    let (ri, _) = disc_input(&mut g, d, real, condition, false)?;
    let (fi, _) = disc_input(&mut g, d, fake, condition, false)?;
    let rs = d.forward_graph(&mut g, ri)?;
    let fs = d.forward_graph(&mut g, fi)?;
    let real_scores = PatchScores::from_logits(g.value(rs).data().to_vec());
    let fake_scores = PatchScores::from_logits(g.value(fs).data().to_vec());
    let (loss, gr, gf) = discriminator_loss_grad(&real_scores, &fake_scores)?;
    let mut grads = g.backward(rs, Tensor::new(g.value(rs).shape().to_vec(), gr)?)?.params;
    let fake_grads = g.backward(fs, Tensor::new(g.value(fs).shape().to_vec(), gf)?)?.params;
    for (a, b) in grads.iter_mut().zip(fake_grads) {
        match (a.as_mut(), b) {
            (Some(a), Some(b)) => a.add_assign(&b),
            (None, b) => *a = b,
            _ => {}
        }
    }
    Ok((loss, grads))
}

/// Generator adversarial loss and its gradient w.r.t. the masked fake image.
fn adversarial_input_grad<T: Scalar>(
    d: &Discriminator<T>,
    fake: &Tensor<T>,
    condition: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let mut g = Graph::new(d.params());
    let (input, fake_node) = disc_input(&mut g, d, fake, condition, true)?;
    let s = d.forward_graph(&mut g, input)?;
    let scores = PatchScores::from_logits(g.value(s).data().to_vec());
    let (loss, gs) = generator_adversarial_loss_grad(&scores)?;
    let mut grads = g.backward(s, Tensor::new(g.value(s).shape().to_vec(), gs)?)?;
    let gx = grads.take_input(fake_node).expect("fake input tracks gradients");
    Ok((loss, gx))
}

fn discriminator_loss_only<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    condition: &Tensor<T>,
) -> Result<(T, T)> {
    let scores = |x: &Tensor<T>| -> Result<PatchScores<T>> {
        let mut g = Graph::new(d.params());
        let (i, _) = disc_input(&mut g, d, x, condition, false)?;
        let s = d.forward_graph(&mut g, i)?;
        Ok(PatchScores::from_logits(g.value(s).data().to_vec()))
    };
    let (r, f) = (scores(real)?, scores(fake)?);
    Ok((crate::losses::discriminator_loss(&r, &f)?, crate::losses::generator_adversarial_loss(&f)?))
}

/// Training state: models, optimizers, counters and telemetry.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    config: RunConfig,
    generator: Generator<T>,
    discriminator: Option<Discriminator<T>>,
    adam_g: Adam<T>,
    adam_d: Option<Adam<T>>,
    epoch: u64,
    step: u64,
    guard: DivergenceGuard,
    history: Vec<LogRecord>,
}

impl<T: Scalar> Trainer<T> {
    /// Initializes models from the config's seed. No discriminator is
    /// allocated in the non-adversarial conditions.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let archive = match config.ablation {
            Ablation::UnetScratch => None,
            _ => config.weights_archive.as_deref(),
        };
        if archive.is_none() && config.ablation != Ablation::UnetScratch {
            ::log::warn!("no weights archive given; the VGG-16 encoder starts from random weights");
        }
        let generator =
            Generator::build(config.generator_spec(), stream_seed(config.seed, 0, b"gen\0\0\0\0\0"), archive)?;
        let discriminator = match config.discriminator_spec() {
            Some(spec) => Some(Discriminator::build(spec, stream_seed(config.seed, 0, b"disc\0\0\0\0"))?),
            None => None,
        };
        let adam_g = Adam::new(config.generator_adam(), generator.params());
        let adam_d = discriminator.as_ref().map(|d| Adam::new(config.discriminator_adam(), d.params()));
        Ok(Trainer {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            epoch: 0,
            step: 0,
            guard: DivergenceGuard::default(),
            history: Vec::new(),
        })
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::bundle`].
    pub fn from_bundle(config: RunConfig, bundle: ModelBundle<T>) -> Result<Self> {
        config.validate()?;
        let expected_g = config.generator_spec();
        let expected_d = config.discriminator_spec();
        let found_hash = bundle.architecture_hash();
        let want_hash = crate::networks::architecture_hash(&expected_g, expected_d.as_ref());
        if found_hash != want_hash {
            return Err(Error::ArchitectureMismatch {
                expected: format!("{} networks ({})", config.ablation, &want_hash[..12]),
                found: format!("{:?} generator ({})", bundle.generator.spec().arch, &found_hash[..12]),
            });
        }
        if bundle.meta.run_config_hash.as_deref().is_some_and(|h| h != config.trajectory_hash()) {
            ::log::warn!("resuming with settings that differ from the checkpoint's run");
        }
        let guard = match &bundle.meta.trainer_state {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("unreadable trainer state in checkpoint: {e}")))?,
            None => DivergenceGuard::default(),
        };
        let ModelBundle { generator, discriminator, meta, optimizer } = bundle;
        let (mut adam_g, mut adam_d) = match optimizer {
            Some(OptimizerState { generator, discriminator }) => (generator, discriminator),
            None => (Adam::new(config.generator_adam(), generator.params()), None),
        };
        adam_g.config = config.generator_adam();
        if let Some(d) = &discriminator {
            let a = adam_d.get_or_insert_with(|| Adam::new(config.discriminator_adam(), d.params()));
            a.config = config.discriminator_adam();
        }
        Ok(Trainer {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            epoch: meta.epoch,
            step: meta.step,
            guard,
            history: Vec::new(),
        })
    }

    pub fn resume(config: RunConfig, checkpoint: &Path) -> Result<Self> {
        Self::from_bundle(config, ModelBundle::load(checkpoint)?)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator<T> {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator<T>> {
        self.discriminator.as_ref()
    }

    pub fn generator_optimizer(&self) -> &Adam<T> {
        &self.adam_g
    }

    pub fn discriminator_optimizer(&self) -> Option<&Adam<T>> {
        self.adam_d.as_ref()
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Records produced since this trainer was created or restored.
    pub fn history(&self) -> &[LogRecord] {
        &self.history
    }

    /// Snapshot with optimizer state and counters, ready to save.
    pub fn bundle(&self) -> ModelBundle<T> {
        ModelBundle {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            meta: TrainingMeta {
                epoch: self.epoch,
                step: self.step,
                run_config_hash: Some(self.config.trajectory_hash()),
                trainer_state: Some(serde_json::to_value(&self.guard).expect("guard serializes")),
            },
            optimizer: Some(OptimizerState { generator: self.adam_g.clone(), discriminator: self.adam_d.clone() }),
        }
    }

    /// Losses on a batch with the current parameters and a given λ; nothing
    /// is updated.
    pub fn evaluate_losses(&self, samples: &[TrainingSample<T>], lambda: f64) -> Result<LossBreakdown> {
        let b = assemble(samples, self.config.guided())?;
        let out = self.generator.forward(&b.flash)?;
        let (rec, _) = guided_reconstruction(b.ambient.data(), out.data(), b.mask.data());
        let (adv_d, adv_g) = match &self.discriminator {
            Some(d) => {
                let cond = masked(&b.flash, &b.mask);
                discriminator_loss_only(d, &masked(&b.ambient, &b.mask), &masked(&out, &b.mask), &cond)?
            }
            None => (T::zero(), T::zero()),
        };
        let (rec, adv_d, adv_g) = (rec.as_f64(), adv_d.as_f64(), adv_g.as_f64());
        Ok(LossBreakdown {
            reconstruction: rec,
            adversarial_d: adv_d,
            adversarial_g: adv_g,
            total_g: rec + lambda * adv_g,
            lambda,
        })
    }

    /// One discriminator update followed by one generator update.
    ///
    /// The generator's adversarial term is evaluated with the discriminator
    /// as it stands after its own update. Without a discriminator only the
    /// reconstruction term is used.
    pub fn train_step(&mut self, samples: &[TrainingSample<T>]) -> Result<LossBreakdown> {
        let started = Instant::now();
        let b = assemble(samples, self.config.guided())?;
        let epoch = self.epoch + 1;
        let diverged = |reason: String| Error::Diverged { step: self.step + 1, epoch, batch: b.ids.clone(), reason };

        let mut graph = Graph::new(self.generator.params());
        let x = graph.input(b.flash.clone(), false);
        let out_node = self.generator.forward_graph(&mut graph, x, &ForwardOptions::default())?;
        let out = graph.value(out_node).clone();
        let (rec, mut d_out) = guided_reconstruction(b.ambient.data(), out.data(), b.mask.data());
        if !rec.is_finite() {
            return Err(diverged(format!("non-finite reconstruction loss {rec}")));
        }

        let lambda = self.config.effective_lambda();
        let (mut adv_d, mut adv_g) = (T::zero(), T::zero());
        if let (Some(d), Some(adam_d)) = (self.discriminator.as_mut(), self.adam_d.as_mut()) {
            let cond = masked(&b.flash, &b.mask);
            let real = masked(&b.ambient, &b.mask);
            let fake = masked(&out, &b.mask);
            let (loss_d, grads_d) = discriminator_grads(d, &real, &fake, &cond)?;
            if !loss_d.is_finite() {
                return Err(diverged(format!("non-finite discriminator loss {loss_d}")));
            }
            adam_d.step(d.params_mut(), &grads_d)?;
            let (loss_g, g_fake) = adversarial_input_grad(d, &fake, &cond)?;
            if !loss_g.is_finite() {
                return Err(diverged(format!("non-finite adversarial loss {loss_g}")));
            }
            let lam = T::lit(lambda);
            for ((o, &gf), &m) in d_out.iter_mut().zip(g_fake.data()).zip(b.mask.data()) {
                *o += lam * m * gf;
            }
            adv_d = loss_d;
            adv_g = loss_g;
        }

        let (rec, adv_d, adv_g) = (rec.as_f64(), adv_d.as_f64(), adv_g.as_f64());
        let losses = LossBreakdown {
            reconstruction: rec,
            adversarial_d: adv_d,
            adversarial_g: adv_g,
            total_g: rec + lambda * adv_g,
            lambda,
        };
        if !losses.is_finite() {
            return Err(diverged(format!("non-finite losses {losses:?}")));
        }
        if let Some(reason) = self.guard.observe(epoch, rec) {
            return Err(diverged(reason));
        }
        let grads = graph.backward(out_node, Tensor::new(out.shape().to_vec(), d_out)?)?;
        drop(graph);
        self.adam_g.step(self.generator.params_mut(), &grads.params)?;
        self.step += 1;
        self.history.push(LogRecord { step: self.step, epoch, losses, wall_ms: started.elapsed().as_secs_f64() * 1e3 });
        Ok(losses)
    }

    /// Trains one pass over `source` in the epoch's shuffled order. Samples
    /// that fail to load are skipped with a warning.
    pub fn train_epoch<S: PairSource<T> + ?Sized>(&mut self, source: &S) -> Result<()> {
        self.train_epoch_logged(source, None)
    }

    fn train_epoch_logged<S: PairSource<T> + ?Sized>(
        &mut self,
        source: &S,
        mut log: Option<&mut LogWriter>,
    ) -> Result<()> {
        let order = epoch_order(self.config.seed, self.epoch, source.len());
        let mut first_failure = None;
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let mut samples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                match make_training_sample(source, i, self.config.seed, self.epoch, self.config.crop) {
                    Ok(s) => samples.push(s),
                    Err(e) => {
                        ::log::warn!("skipping sample: {e}");
                        first_failure.get_or_insert(e);
                    }
                }
            }
            if samples.is_empty() {
                continue;
            }
            self.train_step(&samples)?;
            steps += 1;
            if let Some(log) = log.as_deref_mut() {
                log.append(self.history.last().expect("step recorded"))?;
            }
        }
        if steps == 0 {
            if let Some(e) = first_failure {
                return Err(e);
            }
        }
        self.guard.end_epoch(self.epoch + 1);
        self.epoch += 1;
        if let Some(last) = self.history.last().filter(|r| r.epoch == self.epoch) {
            ::log::info!(
                "epoch {} step {}: reconstruction {:.5}, adversarial_d {:.5}, adversarial_g {:.5}, total {:.5}",
                self.epoch,
                self.step,
                last.losses.reconstruction,
                last.losses.adversarial_d,
                last.losses.adversarial_g,
                last.losses.total_g
            );
        }
        Ok(())
    }

    /// Trains until `config.epochs` epochs are complete, writing the log,
    /// periodic checkpoints and a final checkpoint when `output_dir` is set.
    pub fn run<S: PairSource<T> + ?Sized>(&mut self, source: &S) -> Result<TrainOutcome<T>> {
        if source.is_empty() && self.epoch < self.config.epochs {
            return Err(Error::EmptySplit("train"));
        }
        let out_dir = self.config.output_dir.clone();
        let mut log = match &out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(LogWriter::open(&dir.join("train_log.tsv"), self.step)?)
            }
            None => None,
        };
        let mut checkpoints = Vec::new();
        let first_new = self.history.len();
        while self.epoch < self.config.epochs {
            if let Err(e) = self.train_epoch_logged(source, log.as_mut()) {
                if let (Error::Diverged { .. }, Some(dir)) = (&e, &out_dir) {
                    let path = dir.join("diverged.txt");
                    let last = self.history.last().map(LogRecord::to_line).unwrap_or_default();
                    let _ = std::fs::write(&path, format!("{e}\nlast logged step:\n{LOG_HEADER}\n{last}\n"));
                    ::log::error!("{e}; diagnostics in {}", path.display());
                }
                return Err(e);
            }
            if let Some(dir) = &out_dir {
                if self.config.checkpoint_every > 0 && self.epoch.is_multiple_of(self.config.checkpoint_every) {
                    let path = dir.join("checkpoints").join(format!("epoch_{:04}.ckpt", self.epoch));
                    self.bundle().save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
        if let Some(dir) = &out_dir {
            let path = dir.join("final.ckpt");
            self.bundle().save(&path)?;
            checkpoints.push(path);
        }
        Ok(TrainOutcome {
            bundle: self.bundle(),
            history: self.history[first_new..].to_vec(),
            checkpoints,
            log_path: log.as_ref().map(|l| l.path().to_path_buf()),
        })
    }
}

fn manifest_source(config: &RunConfig) -> Result<ManifestPairs> {
    let path = config.manifest.as_deref().ok_or_else(|| Error::Config("no manifest given".into()))?;
    let manifest = DatasetManifest::load(path)?;
    Ok(ManifestPairs::new(manifest.split(Split::Train)))
}

/// Trains on the train split of `config.manifest`.
pub fn train<T: Scalar>(config: &RunConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let source = manifest_source(config)?;
    Trainer::<T>::new(config.clone())?.run(&source)
}

/// Continues a run from a checkpoint until `config.epochs`.
pub fn resume<T: Scalar>(config: &RunConfig, checkpoint: &Path) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let source = manifest_source(config)?;
    Trainer::<T>::resume(config.clone(), checkpoint)?.run(&source)
}
