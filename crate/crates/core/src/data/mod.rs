//! Image datasets, file loaders, target-domain splitting and batching.

mod idx;
mod sampler;
mod synthetic;
mod usps;

use std::fmt;
use std::path::{Path, PathBuf};

pub use idx::{load_mnist, IMAGE_MAGIC, LABEL_MAGIC};
pub use sampler::{BatchSampler, DomainBatch};
pub use synthetic::synthetic_digits;
pub use usps::{load_usps, resize_bilinear, USPS_SIDE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 10;
pub const SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Mnist,
    Usps,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Mnist => "mnist",
            Provenance::Usps => "usps",
            Provenance::Synthetic => "synthetic",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Single-channel images with pixels in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub height: usize,
    pub width: usize,
    pixels: Vec<f32>,
    labels: Option<Vec<u8>>,
    pub provenance: Provenance,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Option<Vec<u8>>,
        provenance: Provenance,
        split: Split,
    ) -> Result<Self> {
        let area = height * width;
        if area == 0 || pixels.len() % area != 0 {
            return Err(Error::invalid(format!(
                "{} pixels do not form whole {height}x{width} images",
                pixels.len()
            )));
        }
        let count = pixels.len() / area;
        if let Some(l) = &labels {
            if l.len() != count {
                return Err(Error::invalid(format!("{} labels for {count} images", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&v| v as usize >= NUM_CLASSES) {
                return Err(Error::invalid(format!("label {bad} outside [0, {NUM_CLASSES})")));
            }
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(ImageDataset {
            height,
            width,
            pixels,
            labels,
            provenance,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let a = self.area();
        &self.pixels[i * a..(i + 1) * a]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.area());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageDataset {
            height: self.height,
            width: self.width,
            pixels,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance,
            split: self.split,
        }
    }

    /// Stacks the selected images into a `[b, 1, h, w]` tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.area());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new([indices.len(), 1, self.height, self.width], data).expect("gather shape")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} {} set has no labels", self.provenance, self.split)))?;
        Ok(indices.iter().map(|&i| labels[i] as usize).collect())
    }
}

/// Per-dataset pixel mean and standard deviation, applied at batch time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelStats {
    pub mean: f32,
    pub std: f32,
}

impl PixelStats {
    pub fn of(ds: &ImageDataset) -> Self {
        let n = ds.pixels.len() as f64;
        let mean = ds.pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
        let var = ds.pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
        PixelStats {
            mean: mean as f32,
            std: var.sqrt().max(1e-6) as f32,
        }
    }

    pub fn apply(&self, batch: &Tensor<f32>) -> Tensor<f32> {
        let (m, s) = (self.mean, self.std);
        batch.map(|p| (p - m) / s)
    }
}

/// USPS train becomes the unlabeled adaptation pool; USPS test is shuffled
/// and split into validation (`⌊n/2⌋`) and test (`⌈n/2⌉`) halves.
pub fn split_target(train: ImageDataset, test: &ImageDataset, seed: u64) -> (ImageDataset, ImageDataset, ImageDataset) {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = test.len() / 2;
    let val = test.subset(&order[..half]).with_split(Split::Val);
    let tst = test.subset(&order[half..]).with_split(Split::Test);
    (train.without_labels().with_split(Split::Train), val, tst)
}

/// File names inside a data directory.
pub const MNIST_DIR: &str = "mnist";
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const USPS_DIR: &str = "usps";
pub const USPS_TRAIN: &str = "usps";
pub const USPS_TEST: &str = "usps.t";

#[derive(Clone, Debug)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLayout { root: root.into() }
    }

    pub fn mnist(&self, file: &str) -> PathBuf {
        self.root.join(MNIST_DIR).join(file)
    }

    pub fn usps(&self, file: &str) -> PathBuf {
        self.root.join(USPS_DIR).join(file)
    }

    pub fn load_mnist_train(&self) -> Result<ImageDataset> {
        load_mnist(&self.mnist(MNIST_TRAIN_IMAGES), &self.mnist(MNIST_TRAIN_LABELS))
    }

    pub fn load_mnist_test(&self) -> Result<ImageDataset> {
        Ok(load_mnist(&self.mnist(MNIST_TEST_IMAGES), &self.mnist(MNIST_TEST_LABELS))?.with_split(Split::Test))
    }

    pub fn usps_available(&self) -> bool {
        self.usps(USPS_TRAIN).is_file() && self.usps(USPS_TEST).is_file()
    }

    pub fn mnist_available(&self) -> bool {
        [
            MNIST_TRAIN_IMAGES,
            MNIST_TRAIN_LABELS,
            MNIST_TEST_IMAGES,
            MNIST_TEST_LABELS,
        ]
        .iter()
        .all(|f| self.mnist(f).is_file())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

const RAMP: &[u8] = b" .:-=+*#%@";

/// Character-ramp rendering of one image, one text line per pixel row.
pub fn render_ascii(image: &[f32], width: usize) -> String {
    let mut out = String::with_capacity(image.len() + image.len() / width.max(1));
    for row in image.chunks(width) {
        for &p in row {
            let idx = ((p.clamp(0.0, 1.0) * (RAMP.len() - 1) as f32).round()) as usize;
            out.push(RAMP[idx] as char);
        }
        out.push('\n');
    }
    out
}

/// Up to `per_class` renderings per label, for eyeballing a label mapping.
pub fn render_class_samples(ds: &ImageDataset, per_class: usize) -> Result<String> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::invalid("cannot render class samples of an unlabeled set"))?;
    let mut out = String::new();
    for class in 0..NUM_CLASSES {
        let picks: Vec<usize> = (0..ds.len())
            .filter(|&i| labels[i] as usize == class)
            .take(per_class)
            .collect();
        out.push_str(&format!("== label {class} ({} shown) ==\n", picks.len()));
        for i in picks {
            out.push_str(&render_ascii(ds.image(i), ds.width));
            out.push('\n');
        }
    }
    Ok(out)
}
