//! Labeled multimodal corpora with controllable per-modality ambiguity and
//! an exact Bayes oracle.
//!
//! Every sample has a true class `y`. Its text is written from the word list
//! of a *text source* class, which is `y` except with probability `α_t`, when
//! it is `text_pairing[y]`. Its image is drawn the same way with `α_v` and
//! `image_pairing`. The two draws are independent.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, ManifestRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::rng::keyed_rng;
use crate::tensor::Tensor;
use crate::training::largest_remainder;
use crate::vision::ImageRecord;

pub const CLASS_NAMES: [&str; 9] = ["AD", "ND", "ID", "LS", "DNL", "FL", "FR", "EL", "OT"];
pub const CLASS_TITLES: [&str; 9] = [
    "Agricultural Damage",
    "Non Damage",
    "Infrastructural Damage",
    "Landslides",
    "Damage to Natural Landscape",
    "Floods",
    "Fires",
    "Economic Loss",
    "Others",
];
/// Per-class sample counts of the reference corpus (5,037 posts).
pub const REFERENCE_COUNTS: [usize; 9] = [800, 650, 450, 400, 600, 500, 300, 400, 937];

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPEC_FILE: &str = "generator.json";

pub fn reference_proportions() -> Vec<f64> {
    let total: usize = REFERENCE_COUNTS.iter().sum();
    REFERENCE_COUNTS.iter().map(|&c| c as f64 / total as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub class_names: Vec<String>,
    pub proportions: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub alpha_text: f64,
    pub alpha_image: f64,
    /// Class whose words a text-ambiguous sample uses.
    pub text_pairing: Vec<usize>,
    /// Class whose pattern an image-ambiguous sample uses.
    pub image_pairing: Vec<usize>,
    pub words_per_class: usize,
    pub filler_words: usize,
    pub sentence_len: usize,
    /// How many of a sentence's words come from the source class's list.
    pub class_words_per_sentence: usize,
    pub resolution: usize,
    pub noise_sigma: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            proportions: reference_proportions(),
            samples: 5037,
            seed: 0,
            alpha_text: 0.4,
            alpha_image: 0.4,
            text_pairing: vec![1, 0, 3, 2, 5, 4, 7, 6, 8],
            image_pairing: vec![0, 2, 1, 4, 3, 6, 5, 8, 7],
            words_per_class: 15,
            filler_words: 24,
            sentence_len: 20,
            class_words_per_sentence: 12,
            resolution: 32,
            noise_sigma: 0.05,
        }
    }
}

fn check_pairing(name: &str, p: &[usize], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::Config(format!("{name} has {} entries for {n} classes", p.len())));
    }
    let seen: BTreeSet<usize> = p.iter().copied().collect();
    if seen.len() != n || p.iter().any(|&c| c >= n) {
        return Err(Error::Config(format!("{name} {p:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes();
        let fail = |m: String| Err(Error::Config(format!("generator: {m}")));
        if n < 2 {
            return fail("at least two classes are required".into());
        }
        if self.proportions.len() != n {
            return fail(format!("{} proportions for {n} classes", self.proportions.len()));
        }
        if self.proportions.iter().any(|&p| !(p >= 0.0)) || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail("proportions must be non-negative and sum to 1".into());
        }
        if self.samples < n {
            return fail(format!("samples must be at least {n}, got {}", self.samples));
        }
        for (name, a) in [("alpha_text", self.alpha_text), ("alpha_image", self.alpha_image)] {
            if !(0.0..=1.0).contains(&a) {
                return fail(format!("{name} must lie in [0,1], got {a}"));
            }
        }
        check_pairing("text_pairing", &self.text_pairing, n)?;
        check_pairing("image_pairing", &self.image_pairing, n)?;
        if self.words_per_class == 0 || self.sentence_len == 0 {
            return fail("words_per_class and sentence_len must be positive".into());
        }
        if self.class_words_per_sentence > self.sentence_len {
            return fail("class_words_per_sentence exceeds sentence_len".into());
        }
        if self.class_words_per_sentence < self.sentence_len && self.filler_words == 0 {
            return fail("sentences need filler words but filler_words is 0".into());
        }
        if self.resolution < 4 || !(self.noise_sigma >= 0.0) {
            return fail("resolution must be at least 4 and noise_sigma non-negative".into());
        }
        Ok(())
    }

    /// Classes moved by both pairings.
    pub fn ambiguous_classes(&self) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&k| self.text_pairing[k] != k && self.image_pairing[k] != k)
            .collect()
    }

    /// Exact class counts (largest-remainder quotas).
    pub fn class_counts(&self) -> Vec<usize> {
        largest_remainder(self.samples, &self.proportions)
    }
}

/// `P(source = s | y)` for a pairing with ambiguity `alpha`.
fn source_prob(pairing: &[usize], alpha: f64, y: usize, s: usize) -> f64 {
    let paired = pairing[y];
    if paired == y {
        f64::from(u8::from(s == y))
    } else if s == y {
        1.0 - alpha
    } else if s == paired {
        alpha
    } else {
        0.0
    }
}

/// Bayes-optimal accuracy. Class words and patterns identify their source
/// class, so a modality's observation is its source class; the oracle sums,
/// over every observable outcome, the largest joint probability
/// `P(y) · P(obs | y)`.
pub fn bayes_oracle(spec: &GeneratorSpec, modality: Modality) -> Result<f64> {
    spec.validate()?;
    let n = spec.n_classes();
    let p = &spec.proportions;
    let text = |y, s| source_prob(&spec.text_pairing, spec.alpha_text, y, s);
    let image = |y, s| source_prob(&spec.image_pairing, spec.alpha_image, y, s);
    let mut acc = 0.0;
    match modality {
        Modality::Text | Modality::Image => {
            for s in 0..n {
                let best = (0..n)
                    .map(|y| p[y] * if modality == Modality::Text { text(y, s) } else { image(y, s) })
                    .fold(0.0, f64::max);
                acc += best;
            }
        }
        Modality::Multimodal => {
            for st in 0..n {
                for sv in 0..n {
                    acc += (0..n).map(|y| p[y] * text(y, st) * image(y, sv)).fold(0.0, f64::max);
                }
            }
        }
    }
    Ok(acc)
}

/// Latent draw for one sample; never shown to models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub label: usize,
    pub text_ambiguous: bool,
    pub image_ambiguous: bool,
    pub text_source: usize,
    pub image_source: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub id: String,
    pub text: String,
    pub image: ImageRecord,
    pub label: usize,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub samples: usize,
    pub class_counts: Vec<(String, usize)>,
    pub realized_text_ambiguity: f64,
    pub realized_image_ambiguity: f64,
    pub bayes_text: f64,
    pub bayes_image: f64,
    pub bayes_multimodal: f64,
}

const CONSONANTS: &[u8] = b"bdghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Per-class word lists and the shared filler list, all distinct.
pub fn lexicon(spec: &GeneratorSpec) -> (Vec<Vec<String>>, Vec<String>) {
    let mut rng = keyed_rng(&[0x1E71C0, spec.seed]);
    let mut seen = BTreeSet::new();
    let mut word = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .flat_map(|_| {
                [
                    CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
                    VOWELS[rng.gen_range(0..VOWELS.len())] as char,
                ]
            })
            .collect();
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let classes = (0..spec.n_classes())
        .map(|_| (0..spec.words_per_class).map(|_| word(&mut rng)).collect())
        .collect();
    let fillers = (0..spec.filler_words).map(|_| word(&mut rng)).collect();
    (classes, fillers)
}

/// Base RGB color and stripe frequency for a class: hues evenly spaced
/// around the color wheel, frequencies cycling through 1..=4.
pub fn class_pattern(class: usize, n_classes: usize) -> ([f32; 3], f32) {
    let h = class as f32 / n_classes as f32 * 6.0;
    let (s, v) = (0.65f32, 0.8f32);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    ([r + m, g + m, b + m], 1.0 + (class % 4) as f32)
}

fn render_image<R: Rng>(source: usize, spec: &GeneratorSpec, rng: &mut R) -> ImageRecord {
    let r = spec.resolution;
    let (base, freq) = class_pattern(source, spec.n_classes());
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("non-negative sigma");
    let mut px = vec![0.0f32; 3 * r * r];
    for c in 0..3 {
        for y in 0..r {
            for x in 0..r {
                let stripe = 0.15 * (std::f32::consts::TAU * freq * x as f32 / r as f32 + phase).sin();
                let v = base[c] + stripe + noise.sample(rng) as f32;
                px[(c * r + y) * r + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageRecord::new(Tensor::new(&[3, r, r], px).expect("3×r×r")).expect("values clamped to [0,1]")
}

fn render_text<R: Rng>(source: usize, spec: &GeneratorSpec, words: &[Vec<String>], fillers: &[String], rng: &mut R) -> String {
    let own = &words[source];
    // Zipf-like weights: the r-th word of a list is drawn ∝ 1/(r+1)
    let zipf = WeightedIndex::new((0..own.len()).map(|r| 1.0 / (r as f64 + 1.0))).expect("non-empty list");
    let mut sentence: Vec<&str> = (0..spec.class_words_per_sentence)
        .map(|_| own[zipf.sample(rng)].as_str())
        .collect();
    for _ in spec.class_words_per_sentence..spec.sentence_len {
        sentence.push(fillers[rng.gen_range(0..fillers.len())].as_str());
    }
    sentence.shuffle(rng);
    sentence.join(" ")
}

/// Generates every sample in memory.
pub fn generate_samples(spec: &GeneratorSpec) -> Result<Vec<MultimodalSample>> {
    spec.validate()?;
    let (words, fillers) = lexicon(spec);
    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    labels.shuffle(&mut keyed_rng(&[0x0DE7, spec.seed]));
    let width = (spec.samples.max(2) - 1).to_string().len().max(5);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let mut rng = keyed_rng(&[0x5A11, spec.seed, i as u64]);
            let text_ambiguous = rng.gen::<f64>() < spec.alpha_text;
            let image_ambiguous = rng.gen::<f64>() < spec.alpha_image;
            let text_source = if text_ambiguous { spec.text_pairing[y] } else { y };
            let image_source = if image_ambiguous { spec.image_pairing[y] } else { y };
            let text = render_text(text_source, spec, &words, &fillers, &mut rng);
            let image = render_image(image_source, spec, &mut rng);
            let id = format!("s{i:0width$}");
            MultimodalSample {
                truth: GroundTruth {
                    id: id.clone(),
                    label: y,
                    text_ambiguous,
                    image_ambiguous,
                    text_source,
                    image_source,
                },
                id,
                text,
                image,
                label: y,
            }
        })
        .collect())
}

/// Writes `manifest.jsonl`, `images/*.ppm`, the ground-truth sidecar, a
/// summary, and a snapshot of the spec into `out`.
pub fn generate(spec: &GeneratorSpec, out: &Path) -> Result<GenerationSummary> {
    let samples = generate_samples(spec)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(samples.len());
    let mut truth = String::new();
    for s in &samples {
        let rel = format!("images/{}.ppm", s.id);
        s.image.save_ppm(&out.join(&rel))?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            image_path: rel,
            label: s.label,
            split: None,
        });
        truth.push_str(&serde_json::to_string(&s.truth)?);
        truth.push('\n');
    }
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    let write = |name: &str, body: String| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(GROUND_TRUTH_FILE, truth)?;
    let summary = summarize(spec, &samples)?;
    write(SUMMARY_FILE, serde_json::to_string_pretty(&summary)? + "\n")?;
    write(SPEC_FILE, serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(summary)
}

fn summarize(spec: &GeneratorSpec, samples: &[MultimodalSample]) -> Result<GenerationSummary> {
    let mut counts = vec![0usize; spec.n_classes()];
    for s in samples {
        counts[s.label] += 1;
    }
    let n = samples.len() as f64;
    let rate = |f: fn(&GroundTruth) -> bool| samples.iter().filter(|s| f(&s.truth)).count() as f64 / n;
    Ok(GenerationSummary {
        samples: samples.len(),
        class_counts: spec.class_names.iter().cloned().zip(counts).collect(),
        realized_text_ambiguity: rate(|t| t.text_ambiguous),
        realized_image_ambiguity: rate(|t| t.image_ambiguous),
        bayes_text: bayes_oracle(spec, Modality::Text)?,
        bayes_image: bayes_oracle(spec, Modality::Image)?,
        bayes_multimodal: bayes_oracle(spec, Modality::Multimodal)?,
    })
}
