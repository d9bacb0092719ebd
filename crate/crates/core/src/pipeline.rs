//! End-to-end runs: split, vocabulary, training, checkpoints and evaluation.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{Dataset, Examples, Preprocess};
use crate::error::{Error, Result};
use crate::eval::{split_fingerprint, ConfusionMatrix, EvalReport};
use crate::model::Model;
use crate::text::{normalize_text, train_vocabulary, Vocabulary};
use crate::training::{
    history_csv, predict_all, stratified_split, train, EpochRecord, Split, SplitIndices, TrainOutcome,
    TrainSettings,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";

pub struct TrainedRun {
    /// Resolved configuration, with the realized vocabulary size.
    pub config: RunConfig,
    pub model: Model,
    pub vocab: Vocabulary,
    pub split: SplitIndices,
    pub outcome: TrainOutcome,
}

pub fn preprocess<'a>(cfg: &'a RunConfig, vocab: &'a Vocabulary) -> Preprocess<'a> {
    Preprocess {
        modality: cfg.modality,
        normalizer: &cfg.normalizer,
        vocab: Some(vocab),
        max_len: cfg.model.text.max_len,
        resolution: cfg.model.vision.resolution,
        mean: cfg.image.mean,
        std: cfg.image.std,
    }
}

/// Vocabulary trained on the normalized training-split texts only.
pub fn fit_vocabulary(cfg: &RunConfig, data: &Dataset, split: &SplitIndices) -> Result<Vocabulary> {
    let texts: Vec<String> = split
        .train
        .iter()
        .map(|&i| normalize_text(&data.records[i].text, &cfg.normalizer))
        .collect();
    train_vocabulary(&texts, cfg.vocab.target_size)
}

pub fn train_run(cfg: &RunConfig, data: &Dataset, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainedRun> {
    cfg.validate()?;
    let split = stratified_split(&data.labels(), &cfg.split)?;
    let vocab = fit_vocabulary(cfg, data, &split)?;
    let mut config = cfg.clone();
    config.model.text.vocab_size = vocab.len();
    config.validate()?;

    let pre = preprocess(&config, &vocab);
    let train_set = Examples::load(data, &split.train, &pre)?;
    let val_set = Examples::load(data, &split.val, &pre)?;
    let mut model = Model::new(config.modality, &config.model, config.seed)?;
    let settings = TrainSettings {
        optimizer: &config.optimizer,
        seed: config.seed,
        augment: &config.augment,
        preprocess: &pre,
    };
    let outcome = train(&mut model, &train_set, &val_set, &settings, on_epoch)?;
    drop(pre);
    Ok(TrainedRun {
        config,
        model,
        vocab,
        split,
        outcome,
    })
}

impl TrainedRun {
    /// Writes the checkpoint and its sidecar, vocabulary, history and config
    /// snapshot into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        self.model.save(&ckpt)?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let hist = dir.join(HISTORY_FILE);
        std::fs::write(&hist, history_csv(&self.outcome.history)).map_err(|e| Error::io(&hist, e))?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        Ok(ckpt)
    }
}

/// A checkpoint with the vocabulary and config snapshot stored beside it.
pub struct LoadedRun {
    pub config: RunConfig,
    pub model: Model,
    pub vocab: Vocabulary,
}

pub fn load_run(checkpoint: &Path) -> Result<LoadedRun> {
    let model = Model::load(checkpoint)?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    if config.model != model.config || config.modality != model.modality() {
        return Err(Error::Config(format!(
            "{} does not describe the model in {}",
            dir.join(CONFIG_FILE).display(),
            checkpoint.display()
        )));
    }
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != config.model.text.vocab_size {
        return Err(Error::Dimension(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            config.model.text.vocab_size
        )));
    }
    Ok(LoadedRun { config, model, vocab })
}

/// Evaluates `model` on one split of `data`, recomputed from the config's
/// split spec. The report is named after the modality.
pub fn evaluate(
    cfg: &RunConfig,
    model: &Model,
    vocab: &Vocabulary,
    data: &Dataset,
    split: Split,
) -> Result<EvalReport> {
    let indices = stratified_split(&data.labels(), &cfg.split)?;
    evaluate_indices(cfg, model, vocab, data, split, indices.get(split))
}

pub fn evaluate_indices(
    cfg: &RunConfig,
    model: &Model,
    vocab: &Vocabulary,
    data: &Dataset,
    split: Split,
    rows: &[usize],
) -> Result<EvalReport> {
    let pre = preprocess(cfg, vocab);
    let ex = Examples::load(data, rows, &pre)?;
    let preds = predict_all(model, &ex, &pre, 64)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.predicted_class).collect();
    let n_classes = cfg.model.fusion.n_classes;
    let labels: Vec<String> = if cfg.generator.class_names.len() == n_classes {
        cfg.generator.class_names.clone()
    } else {
        (0..n_classes).map(|k| k.to_string()).collect()
    };
    let cm = ConfusionMatrix::from_pairs(labels, &ex.labels, &predicted)?;
    let mut report = EvalReport::from_confusion(model.modality().name(), split.name(), cm)?;
    report.modality = Some(model.modality().name().to_string());
    report.seed = Some(cfg.seed);
    let ids: Vec<&str> = rows.iter().map(|&i| data.records[i].id.as_str()).collect();
    report.split_fingerprint = Some(split_fingerprint(split.name(), &ids));
    Ok(report)
}
