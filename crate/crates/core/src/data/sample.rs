use crate::data::ManifestEntry;
use crate::error::{Error, Result};
use crate::imagecore::{
    attention_map, load_image, paired_augment, resize_canonical, AttentionMap, Image, PairedAugmentation,
};
use crate::scalar::Scalar;

/// Indexed collection of flash/ambient pairs.
pub trait PairSource<T: Scalar> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pair_id(&self, index: usize) -> &str;

    /// `(flash, ambient)` for pair `index`. Errors carry the pair id.
    fn load_pair(&self, index: usize) -> Result<(Image<T>, Image<T>)>;
}

/// Pairs read from disk and resized to canonical resolution.
#[derive(Debug, Clone)]
pub struct ManifestPairs {
    entries: Vec<ManifestEntry>,
}

impl ManifestPairs {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        ManifestPairs { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }
}

impl<T: Scalar> PairSource<T> for ManifestPairs {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn pair_id(&self, index: usize) -> &str {
        &self.entries[index].pair_id
    }

    fn load_pair(&self, index: usize) -> Result<(Image<T>, Image<T>)> {
        let e = &self.entries[index];
        let wrap = |source: Error| Error::Sample { pair_id: e.pair_id.clone(), source: Box::new(source) };
        let flash = load_image::<T>(&e.flash_path).map_err(wrap)?;
        let ambient = load_image::<T>(&e.ambient_path).map_err(wrap)?;
        if (flash.height(), flash.width()) != (ambient.height(), ambient.width()) {
            return Err(wrap(Error::InvalidPair(format!(
                "flash is {}x{} but ambient is {}x{}",
                flash.height(),
                flash.width(),
                ambient.height(),
                ambient.width()
            ))));
        }
        Ok((resize_canonical(&flash), resize_canonical(&ambient)))
    }
}

/// Pairs held in memory, used as given (no resizing).
#[derive(Debug, Clone, Default)]
pub struct InMemoryPairs<T> {
    pairs: Vec<(String, Image<T>, Image<T>)>,
}

impl<T: Scalar> InMemoryPairs<T> {
    pub fn new() -> Self {
        InMemoryPairs { pairs: Vec::new() }
    }

    pub fn push(&mut self, pair_id: impl Into<String>, flash: Image<T>, ambient: Image<T>) -> Result<()> {
        if flash.dims() != ambient.dims() {
            return Err(Error::InvalidPair(format!("flash is {:?} but ambient is {:?}", flash.dims(), ambient.dims())));
        }
        self.pairs.push((pair_id.into(), flash, ambient));
        Ok(())
    }
}

impl<T: Scalar> PairSource<T> for InMemoryPairs<T> {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn pair_id(&self, index: usize) -> &str {
        &self.pairs[index].0
    }

    fn load_pair(&self, index: usize) -> Result<(Image<T>, Image<T>)> {
        let (_, f, a) = &self.pairs[index];
        Ok((f.clone(), a.clone()))
    }
}

/// Aligned crops of a pair and their attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<T> {
    pub pair_id: String,
    pub flash: Image<T>,
    pub ambient: Image<T>,
    /// `attention_map(ambient, flash)` of the crops above.
    pub attention: AttentionMap<T>,
    pub augmentation: PairedAugmentation,
}

/// Augments pair `index` of `source` with the geometry derived from
/// `(seed, epoch, index)` and computes the attention map on the crops.
pub fn make_training_sample<T: Scalar, S: PairSource<T> + ?Sized>(
    source: &S,
    index: usize,
    seed: u64,
    epoch: u64,
    crop: usize,
) -> Result<TrainingSample<T>> {
    let pair_id = source.pair_id(index).to_string();
    let wrap = |e: Error| match e {
        e @ Error::Sample { .. } => e,
        other => Error::Sample { pair_id: pair_id.clone(), source: Box::new(other) },
    };
    let (flash, ambient) = source.load_pair(index).map_err(wrap)?;
    let aug =
        PairedAugmentation::for_sample(flash.height(), flash.width(), crop, seed, epoch, index as u64).map_err(wrap)?;
    let (flash, ambient) = paired_augment(&flash, &ambient, &aug).map_err(wrap)?;
    let attention = attention_map(&ambient, &flash).map_err(wrap)?;
    Ok(TrainingSample { pair_id, flash, ambient, attention, augmentation: aug })
}
