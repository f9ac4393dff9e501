//! Generator and patch discriminator, weight archives and checkpoints.

mod archive;
mod checkpoint;
mod discriminator;
mod generator;

pub use archive::{read_archive, write_archive, ArchiveTensor};
pub(crate) use checkpoint::hex;
pub use checkpoint::{architecture_hash, ModelBundle, OptimizerState, TrainingMeta, FORMAT_VERSION, METADATA_KEY};
pub use discriminator::{DiscLayer, Discriminator, DiscriminatorSpec};
pub use generator::{
    encoder_archive_tensors, ForwardOptions, Generator, GeneratorArch, GeneratorSpec, DECODER_INIT_STD,
};
