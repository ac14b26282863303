use std::path::{Path, PathBuf};

use dla_core::data::{
    DataLayout, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS, USPS_TEST, USPS_TRAIN,
};
use dla_core::dla::{ModelSpec, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "DLA_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Mnist,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Usps,
    Synthetic,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    /// Labeled half of the target test split.
    Target,
    /// The source test set.
    SourceTest,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Falls back to `$DLA_DATA_DIR`, then `data`.
    pub dir: Option<PathBuf>,
    pub source: SourceKind,
    pub target: TargetKind,
    pub validation: ValidationKind,
    /// Keeps only the first `n` source images.
    pub source_limit: Option<usize>,
    /// Seed of the target test split into validation and test halves.
    pub split_seed: u64,
    /// Images per synthetic set.
    pub synthetic_size: usize,
    /// TOML file of `[[file]]` entries with `path`, `url` and `sha256`.
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            source: SourceKind::Mnist,
            target: TargetKind::Usps,
            validation: ValidationKind::Target,
            source_limit: None,
            split_seed: 0,
            synthetic_size: 2000,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Rows buffered between metrics flushes.
    pub metrics_every: usize,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
            metrics_every: 50,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DownloadManifest {
    #[serde(default)]
    file: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    path: PathBuf,
    url: String,
    sha256: String,
}

impl DataConfig {
    pub fn root(&self) -> PathBuf {
        match &self.dir {
            Some(d) => d.clone(),
            None => std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
        }
    }

    pub fn layout(&self) -> DataLayout {
        DataLayout::new(self.root())
    }

    pub fn effective_validation(&self) -> ValidationKind {
        match (self.validation, self.target) {
            (ValidationKind::Target, TargetKind::None) => ValidationKind::SourceTest,
            (v, _) => v,
        }
    }

    /// Files the configured sources read, so that missing ones fail before
    /// any training starts.
    pub fn required_files(&self) -> Vec<PathBuf> {
        let layout = self.layout();
        let mut files = Vec::new();
        if self.source == SourceKind::Mnist {
            files.push(layout.mnist(MNIST_TRAIN_IMAGES));
            files.push(layout.mnist(MNIST_TRAIN_LABELS));
            if self.effective_validation() == ValidationKind::SourceTest {
                files.push(layout.mnist(MNIST_TEST_IMAGES));
                files.push(layout.mnist(MNIST_TEST_LABELS));
            }
        }
        if self.target == TargetKind::Usps {
            files.push(layout.usps(USPS_TRAIN));
            files.push(layout.usps(USPS_TEST));
        }
        files
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("invalid config: {}", e.to_string().trim_end())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks every section without touching the data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| invalid(format!("[train] {e}")))?;
        self.model.validate().map_err(|e| invalid(format!("[model] {e}")))?;
        if self.output.metrics_every == 0 {
            return Err(invalid("[output] metrics_every must be >= 1"));
        }
        let d = &self.data;
        if d.source == SourceKind::Synthetic || d.target == TargetKind::Synthetic {
            if d.synthetic_size < self.train.batch_size {
                return Err(invalid("[data] synthetic_size must be >= train.batch_size"));
            }
            if self.model.height != self.model.width || self.model.in_channels != 1 {
                return Err(invalid(
                    "[data] synthetic images need a square single-channel model input",
                ));
            }
        }
        let real = d.source == SourceKind::Mnist || d.target == TargetKind::Usps;
        if real && (self.model.height, self.model.width, self.model.in_channels) != (28, 28, 1) {
            return Err(invalid("[data] MNIST and USPS images need a 1x28x28 model input"));
        }
        if d.source == SourceKind::Synthetic && d.target == TargetKind::Usps {
            return Err(invalid("[data] a synthetic source cannot be paired with USPS"));
        }
        if let Some(limit) = d.source_limit {
            if limit < self.train.batch_size {
                return Err(invalid("[data] source_limit must be >= train.batch_size"));
            }
        }
        if self.train.mode == TrainMode::Dla && d.target == TargetKind::None {
            return Err(invalid(
                "[data] target = \"none\" is only allowed with mode no_adapt or partial_la",
            ));
        }
        Ok(())
    }

    /// Validates the config and resolves every input path it names.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        self.validate()?;
        for f in self.data.required_files() {
            if !f.is_file() {
                return Err(invalid(format!("[data] required file {} not found", f.display())));
            }
        }
        if let Some(m) = &self.data.manifest {
            verify_download_manifest(m, &self.data.root())?;
        }
        Ok(())
    }
}

/// Checks present files against the recorded checksums; absent files are
/// reported with their download URL.
pub fn verify_download_manifest(path: &Path, root: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("[data] cannot read manifest {}: {e}", path.display())))?;
    let manifest: DownloadManifest =
        toml::from_str(&text).map_err(|e| invalid(format!("[data] manifest {}: {e}", path.display())))?;
    for entry in manifest.file {
        let file = root.join(&entry.path);
        let bytes = std::fs::read(&file).map_err(|_| {
            invalid(format!(
                "[data] {} missing; fetch it from {}",
                file.display(),
                entry.url
            ))
        })?;
        let got = hex(&Sha256::digest(&bytes));
        if !got.eq_ignore_ascii_case(&entry.sha256) {
            return Err(invalid(format!(
                "[data] {} has sha256 {got}, manifest expects {}",
                file.display(),
                entry.sha256
            )));
        }
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash: sha256 over `blob <len>\0<content>`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[train]\nlamda = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn negative_lambda_rejected() {
        let cfg = RunConfig::from_toml("[train]\nlambda = -1.0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.seed = 17;
        cfg.data.source_limit = Some(500);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn git_blob_hash() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn dla_without_target_rejected() {
        let mut cfg = RunConfig::default();
        cfg.data.target = TargetKind::None;
        assert!(cfg.validate().is_err());
        cfg.train.mode = TrainMode::PartialLa;
        cfg.validate().unwrap();
        assert_eq!(cfg.data.effective_validation(), ValidationKind::SourceTest);
    }
}
