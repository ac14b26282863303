use dla_core::data::{load_usps, split_target, synthetic_digits, ImageDataset, Split, USPS_TEST, USPS_TRAIN};

use crate::config::{DataConfig, SourceKind, TargetKind, ValidationKind};
use crate::CliError;

/// Everything a training run reads.
pub struct Datasets {
    pub source: ImageDataset,
    pub target: Option<ImageDataset>,
    pub val: Option<ImageDataset>,
    pub target_test: Option<ImageDataset>,
}

/// Target splits: unlabeled adaptation pool, validation and test halves.
pub struct TargetSplits {
    pub adapt: ImageDataset,
    pub val: ImageDataset,
    pub test: ImageDataset,
}

const SOURCE_SEED: u64 = 11;
const TARGET_SEED: u64 = 12;
const TARGET_TEST_SEED: u64 = 13;
const SOURCE_TEST_SEED: u64 = 14;

/// `side` is the model input side, used only for synthetic images.
pub fn load_source(cfg: &DataConfig, side: usize) -> Result<ImageDataset, CliError> {
    let mut source = match cfg.source {
        SourceKind::Mnist => cfg.layout().load_mnist_train()?,
        SourceKind::Synthetic => synthetic_digits(cfg.synthetic_size, side, SOURCE_SEED, false)?,
    };
    if let Some(limit) = cfg.source_limit {
        if limit < source.len() {
            source = source.subset(&(0..limit).collect::<Vec<_>>());
        }
    }
    Ok(source)
}

pub fn load_source_test(cfg: &DataConfig, side: usize) -> Result<ImageDataset, CliError> {
    Ok(match cfg.source {
        SourceKind::Mnist => cfg.layout().load_mnist_test()?,
        SourceKind::Synthetic => {
            synthetic_digits(cfg.synthetic_size, side, SOURCE_TEST_SEED, false)?.with_split(Split::Test)
        }
    })
}

pub fn load_target(cfg: &DataConfig, side: usize) -> Result<Option<TargetSplits>, CliError> {
    let (train, test) = match cfg.target {
        TargetKind::None => return Ok(None),
        TargetKind::Usps => {
            let layout = cfg.layout();
            (
                load_usps(&layout.usps(USPS_TRAIN))?,
                load_usps(&layout.usps(USPS_TEST))?,
            )
        }
        TargetKind::Synthetic => {
            let n = cfg.synthetic_size;
            (
                synthetic_digits(n, side, TARGET_SEED, true)?,
                synthetic_digits(n, side, TARGET_TEST_SEED, true)?,
            )
        }
    };
    let (adapt, val, test) = split_target(train, &test, cfg.split_seed);
    Ok(Some(TargetSplits { adapt, val, test }))
}

pub fn load(cfg: &DataConfig, side: usize) -> Result<Datasets, CliError> {
    let source = load_source(cfg, side)?;
    let target = load_target(cfg, side)?;
    let val = match cfg.effective_validation() {
        ValidationKind::Target => target.as_ref().map(|t| t.val.clone()),
        ValidationKind::SourceTest => Some(load_source_test(cfg, side)?),
        ValidationKind::None => None,
    };
    let (target, target_test) = match target {
        Some(t) => (Some(t.adapt), Some(t.test)),
        None => (None, None),
    };
    Ok(Datasets {
        source,
        target,
        val,
        target_test,
    })
}
