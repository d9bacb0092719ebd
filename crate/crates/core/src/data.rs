//! Dataset manifests and in-memory example sets.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, ModelInputs};
use crate::rng::keyed_rng;
use crate::tensor::Tensor;
use crate::text::{normalize_text, tokenize, NormalizerConfig, TokenSequence, Vocabulary};
use crate::text_encoder::TokenBatch;
use crate::training::Split;
use crate::vision::{augment, load_and_resize, standardize, AugmentConfig, ImageRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Manifest of a dataset directory together with the directory itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = root.join(MANIFEST_FILE);
        if !manifest.is_file() {
            return Err(Error::Usage(format!(
                "no {MANIFEST_FILE} in {}",
                root.display()
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            records: read_manifest(&manifest)?,
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].image_path)
    }
}

/// Preprocessed examples ready for batching. Images are kept in [0,1] so
/// augmentation can run before standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Examples {
    /// Stable per-sample keys (manifest positions) for augmentation streams.
    pub keys: Vec<u64>,
    pub labels: Vec<usize>,
    pub tokens: Option<Vec<TokenSequence>>,
    pub images: Option<Vec<ImageRecord>>,
}

/// How raw records become model inputs.
#[derive(Clone, Debug)]
pub struct Preprocess<'a> {
    pub modality: Modality,
    pub normalizer: &'a NormalizerConfig,
    pub vocab: Option<&'a Vocabulary>,
    pub max_len: usize,
    pub resolution: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Examples {
    /// Loads the records at `indices` from `data`.
    pub fn load(data: &Dataset, indices: &[usize], pre: &Preprocess) -> Result<Self> {
        let tokens = if pre.modality.uses_text() {
            let vocab = pre
                .vocab
                .ok_or_else(|| Error::Config("text modality needs a vocabulary".into()))?;
            Some(
                indices
                    .iter()
                    .map(|&i| tokenize(&normalize_text(&data.records[i].text, pre.normalizer), vocab, pre.max_len))
                    .collect(),
            )
        } else {
            None
        };
        let images = if pre.modality.uses_image() {
            Some(
                indices
                    .iter()
                    .map(|&i| load_and_resize(&data.image_path(i), pre.resolution))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Examples {
            keys: indices.iter().map(|&i| i as u64).collect(),
            labels: indices.iter().map(|&i| data.records[i].label).collect(),
            tokens,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inputs for the examples at `rows`. With `augmentation = Some((cfg, seed,
    /// epoch))` each image is augmented from the stream keyed on
    /// `(seed, sample key, epoch)`.
    pub fn inputs(
        &self,
        rows: &[usize],
        pre: &Preprocess,
        augmentation: Option<(&AugmentConfig, u64, u64)>,
    ) -> Result<ModelInputs<f32>> {
        let tokens = match &self.tokens {
            Some(t) => {
                let seqs: Vec<&TokenSequence> = rows.iter().map(|&r| &t[r]).collect();
                Some(TokenBatch::from_sequences(&seqs)?)
            }
            None => None,
        };
        let images = match &self.images {
            Some(imgs) => {
                let r = pre.resolution;
                let mut data = Vec::with_capacity(rows.len() * 3 * r * r);
                for &row in rows {
                    let img = match augmentation {
                        Some((cfg, seed, epoch)) if cfg.enabled => {
                            let mut rng = keyed_rng(&[0xA06, seed, self.keys[row], epoch]);
                            augment(&imgs[row], cfg, &mut rng)
                        }
                        _ => imgs[row].clone(),
                    };
                    data.extend(standardize(&img, pre.mean, pre.std)?.into_data());
                }
                Some(Tensor::new(&[rows.len(), 3, r, r], data)?)
            }
            None => None,
        };
        Ok(ModelInputs { tokens, images })
    }
}
