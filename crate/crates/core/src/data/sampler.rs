use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Permutation stream over `len` items. An epoch ends when fewer than `b`
/// items remain; the remainder is dropped and a fresh permutation drawn.
#[derive(Clone, Debug)]
struct EpochStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl EpochStream {
    fn new(seed: u64, stream: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        EpochStream {
            rng,
            order,
            pos: 0,
            epoch: 0,
        }
    }

    fn take(&mut self, b: usize) -> Vec<usize> {
        if self.pos + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }
}

#[derive(Clone, Debug)]
pub struct DomainBatch {
    /// `[b, 1, h, w]` source images.
    pub x: Tensor<f32>,
    pub y: Vec<usize>,
    pub x_tilde: Option<Tensor<f32>>,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

/// Independent seeded permutations for the source and target pools.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    batch: usize,
    source: EpochStream,
    target: Option<EpochStream>,
}

impl BatchSampler {
    pub fn new(seed: u64, batch: usize, source_len: usize, target_len: Option<usize>) -> Result<Self> {
        if batch == 0 || batch > source_len {
            return Err(Error::invalid(format!(
                "batch size {batch} must lie in [1, {source_len}] (source size)"
            )));
        }
        if let Some(t) = target_len {
            if batch > t {
                return Err(Error::invalid(format!("batch size {batch} exceeds target size {t}")));
            }
        }
        Ok(BatchSampler {
            batch,
            source: EpochStream::new(seed, 1, source_len),
            target: target_len.map(|t| EpochStream::new(seed, 2, t)),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn source_epoch(&self) -> usize {
        self.source.epoch
    }

    pub fn next_indices(&mut self) -> (Vec<usize>, Vec<usize>) {
        let s = self.source.take(self.batch);
        let t = match &mut self.target {
            Some(stream) => stream.take(self.batch),
            None => Vec::new(),
        };
        (s, t)
    }

    pub fn next_batch(&mut self, source: &ImageDataset, target: Option<&ImageDataset>) -> Result<DomainBatch> {
        if target.is_some() != self.target.is_some() {
            return Err(Error::invalid("target dataset presence does not match the sampler"));
        }
        let (si, ti) = self.next_indices();
        Ok(DomainBatch {
            x: source.gather(&si),
            y: source.gather_labels(&si)?,
            x_tilde: target.map(|t| t.gather(&ti)),
            source_indices: si,
            target_indices: ti,
        })
    }
}
