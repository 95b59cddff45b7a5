//! One-vs-all linear SVMs per semantic group, ROC-AUC based label
//! selection, and score vectors for the sentence generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Clip, CorpusSplit, Group, GroupedLabel, LabelVocabulary};
use crate::error::{Error, Result};
use crate::io;

pub const BANK_FORMAT: &str = "moviedesc.bank";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmTrainConfig {
    pub reg_lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Weight each class by `n / (2 n_class)` so rare positives are not
    /// swamped by the negative pool.
    pub balanced: bool,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        SvmTrainConfig {
            reg_lambda: 1e-3,
            epochs: 30,
            seed: 0,
            learning_rate: 0.1,
            balanced: true,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_lambda > 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::InvalidInput(
                "svm.reg_lambda must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("svm.epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(
                "svm.learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest f64 below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic squash, kept inside the open interval (0,1) for any finite
/// margin.
pub fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Primal subgradient descent on the L2-regularized hinge loss.
///
/// Samples are visited in a seeded shuffle each epoch with step size
/// `lr / (1 + lr * lambda * t)`. The bias is not regularized.
pub fn train_binary_svm(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    cfg: &SvmTrainConfig,
) -> Result<LinearModel> {
    cfg.validate()?;
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput(format!(
            "svm needs both classes (got {} positives, {} negatives)",
            positives.len(),
            negatives.len()
        )));
    }
    let dim = positives[0].len();
    if positives.iter().chain(negatives).any(|v| v.len() != dim) {
        return Err(Error::Shape(
            "svm training vectors differ in dimension".into(),
        ));
    }
    let n = (positives.len() + negatives.len()) as f64;
    let (wp, wn) = if cfg.balanced {
        (
            n / (2.0 * positives.len() as f64),
            n / (2.0 * negatives.len() as f64),
        )
    } else {
        (1.0, 1.0)
    };
    let mut samples: Vec<(&[f64], f64, f64)> = positives
        .iter()
        .map(|v| (v.as_slice(), 1.0, wp))
        .chain(negatives.iter().map(|v| (v.as_slice(), -1.0, wn)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        samples.shuffle(&mut rng);
        for &(x, y, c) in &samples {
            t += 1;
            let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * cfg.reg_lambda * t as f64);
            let margin = y * (dot(&w, x) + b);
            let shrink = 1.0 - eta * cfg.reg_lambda;
            w.iter_mut().for_each(|wi| *wi *= shrink);
            if margin < 1.0 {
                let step = eta * c * y;
                w.iter_mut().zip(x).for_each(|(wi, xi)| *wi += step * xi);
                b += step;
            }
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numeric("svm weights diverged".into()));
    }
    Ok(LinearModel {
        weights: w,
        bias: b,
    })
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "roc_auc needs positives and negatives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied ranks integral.
    let mut rank2_sum_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled: (i + j + 2)
        let rank2 = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if truth[k] {
                rank2_sum_pos += rank2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank2_sum_pos - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Per-channel z-scoring fitted on the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub channels: BTreeMap<String, ChannelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(
        split: &CorpusSplit,
        channels: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut out = BTreeMap::new();
        for name in channels {
            let dim = split
                .channel_dim(name)
                .ok_or_else(|| Error::MissingChannel {
                    clip_id: "<split>".into(),
                    channel: name.to_string(),
                })?;
            let mut mean = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            let n = split.clips.len().max(1) as f64;
            for clip in &split.clips {
                let v = channel_of(clip, name)?;
                for k in 0..dim {
                    mean[k] += v[k];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for clip in &split.clips {
                let v = channel_of(clip, name)?;
                for k in 0..dim {
                    sq[k] += (v[k] - mean[k]).powi(2);
                }
            }
            let std = sq
                .into_iter()
                .map(|s| {
                    let sd = (s / n).sqrt();
                    if sd > 1e-12 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect();
            out.insert(name.to_string(), ChannelStats { mean, std });
        }
        Ok(Standardizer { channels: out })
    }

    /// Standardized concatenation of `channels` for one clip.
    pub fn features(&self, clip: &Clip, channels: &[String]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for name in channels {
            let raw = channel_of(clip, name)?;
            match self.channels.get(name) {
                Some(st) => {
                    if st.mean.len() != raw.len() {
                        return Err(Error::Dimension {
                            clip_id: clip.clip_id.clone(),
                            channel: name.clone(),
                            expected: st.mean.len(),
                            found: raw.len(),
                        });
                    }
                    out.extend(
                        raw.iter()
                            .zip(&st.mean)
                            .zip(&st.std)
                            .map(|((x, m), s)| (x - m) / s),
                    );
                }
                None => out.extend_from_slice(raw),
            }
        }
        Ok(out)
    }
}

fn channel_of<'a>(clip: &'a Clip, name: &str) -> Result<&'a [f64]> {
    clip.features
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::MissingChannel {
            clip_id: clip.clip_id.clone(),
            channel: name.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// One negative pool for every label: all clips lacking it.
    Retrieved,
    /// Negatives restricted to clips carrying another label of the same group.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub label: GroupedLabel,
    pub model: LinearModel,
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPositives,
    NoNegatives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLabel {
    pub label: GroupedLabel,
    pub reason: SkipReason,
}

/// Classifiers in vocabulary order, plus the standardization they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank {
    pub classifiers: Vec<LinearClassifier>,
    pub mode: TrainingMode,
    pub standardizer: Standardizer,
    pub skipped: Vec<SkippedLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub clip_id: String,
    pub scores: Vec<f64>,
}

/// Label texts per clip, in clip order.
pub fn clip_label_sets(split: &CorpusSplit) -> Vec<BTreeSet<&str>> {
    split
        .annotations
        .iter()
        .map(|a| a.labels.iter().map(|l| l.text.as_str()).collect())
        .collect()
}

/// Clip indices used as negatives for `label` under `mode`.
pub fn negative_pool(
    label: &GroupedLabel,
    label_sets: &[BTreeSet<&str>],
    group_texts: &BTreeMap<Group, BTreeSet<&str>>,
    mode: TrainingMode,
) -> Vec<usize> {
    let same_group = group_texts.get(&label.group);
    label_sets
        .iter()
        .enumerate()
        .filter(|(_, set)| !set.contains(label.text.as_str()))
        .filter(|(_, set)| match mode {
            TrainingMode::Retrieved => true,
            TrainingMode::Trained => {
                same_group.is_some_and(|g| set.iter().any(|t| *t != label.text && g.contains(t)))
            }
        })
        .map(|(i, _)| i)
        .collect()
}

fn label_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one classifier per vocabulary entry. Labels without positives or
/// negatives are recorded in `skipped`.
pub fn train_group_classifiers(
    corpus: &CorpusSplit,
    vocab: &LabelVocabulary,
    cfg: &SvmTrainConfig,
    mode: TrainingMode,
) -> Result<ClassifierBank> {
    cfg.validate()?;
    let channels: BTreeSet<&str> = vocab
        .entries
        .iter()
        .flat_map(|e| e.channels.iter().map(String::as_str))
        .collect();
    let standardizer = Standardizer::fit(corpus, channels.iter().copied())?;

    // Feature matrices per distinct channel list.
    let mut features: BTreeMap<&[String], Vec<Vec<f64>>> = BTreeMap::new();
    for e in &vocab.entries {
        if !features.contains_key(e.channels.as_slice()) {
            let rows = corpus
                .clips
                .iter()
                .map(|c| standardizer.features(c, &e.channels))
                .collect::<Result<Vec<_>>>()?;
            features.insert(e.channels.as_slice(), rows);
        }
    }

    let label_sets = clip_label_sets(corpus);
    let group_texts = vocab.texts_by_group();

    let results: Vec<Result<std::result::Result<LinearClassifier, SkippedLabel>>> = vocab
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, label)| {
            let rows = &features[label.channels.as_slice()];
            let pos: Vec<Vec<f64>> = label_sets
                .iter()
                .zip(rows)
                .filter(|(s, _)| s.contains(label.text.as_str()))
                .map(|(_, r)| r.clone())
                .collect();
            let neg: Vec<Vec<f64>> = negative_pool(label, &label_sets, &group_texts, mode)
                .into_iter()
                .map(|k| rows[k].clone())
                .collect();
            let skip = |reason| {
                Ok(Err(SkippedLabel {
                    label: label.clone(),
                    reason,
                }))
            };
            if pos.is_empty() {
                return skip(SkipReason::NoPositives);
            }
            if neg.is_empty() {
                return skip(SkipReason::NoNegatives);
            }
            let cfg = SvmTrainConfig {
                seed: label_seed(cfg.seed, i),
                ..cfg.clone()
            };
            let model = train_binary_svm(&pos, &neg, &cfg)?;
            Ok(Ok(LinearClassifier {
                label: label.clone(),
                model,
                roc_auc: None,
            }))
        })
        .collect();

    let mut classifiers = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r? {
            Ok(c) => classifiers.push(c),
            Err(s) => skipped.push(s),
        }
    }
    Ok(ClassifierBank {
        classifiers,
        mode,
        standardizer,
        skipped,
    })
}

impl ClassifierBank {
    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_container(path, BANK_FORMAT, BANK_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::load_container(path, BANK_FORMAT, BANK_VERSION)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::to_container(BANK_FORMAT, BANK_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        io::from_container(BANK_FORMAT, BANK_VERSION, bytes)
    }

    /// Computes every classifier's AUC on `split` and stores it. A label
    /// that is all-positive or all-negative there gets 0.5 (no evidence).
    pub fn with_auc_on(&self, split: &CorpusSplit) -> Result<ClassifierBank> {
        let label_sets = clip_label_sets(split);
        let classifiers = self
            .classifiers
            .par_iter()
            .map(|c| {
                let scores = split
                    .clips
                    .iter()
                    .map(|clip| {
                        let x = self.standardizer.features(clip, &c.label.channels)?;
                        Ok(c.model.margin(&x))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let truth: Vec<bool> = label_sets
                    .iter()
                    .map(|s| s.contains(c.label.text.as_str()))
                    .collect();
                let has_both = truth.iter().any(|&t| t) && truth.iter().any(|&t| !t);
                let auc = if has_both {
                    roc_auc(&scores, &truth)?
                } else {
                    0.5
                };
                Ok(LinearClassifier {
                    roc_auc: Some(auc),
                    ..c.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierBank {
            classifiers,
            ..self.clone()
        })
    }

    /// Keeps classifiers whose stored AUC is at least `threshold`; unset AUC
    /// counts as 0.5.
    pub fn retain_by_auc(&self, threshold: f64) -> Result<ClassifierBank> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidInput(format!(
                "roc threshold {threshold} outside [0,1]"
            )));
        }
        Ok(ClassifierBank {
            classifiers: self
                .classifiers
                .iter()
                .filter(|c| c.roc_auc.unwrap_or(0.5) >= threshold)
                .cloned()
                .collect(),
            ..self.clone()
        })
    }

    pub fn score_clip(&self, clip: &Clip) -> Result<ScoreVector> {
        let mut cache: BTreeMap<&[String], Vec<f64>> = BTreeMap::new();
        let mut scores = Vec::with_capacity(self.classifiers.len());
        for c in &self.classifiers {
            let key = c.label.channels.as_slice();
            if !cache.contains_key(key) {
                cache.insert(key, self.standardizer.features(clip, key)?);
            }
            let x = &cache[key];
            if x.len() != c.model.weights.len() {
                return Err(Error::Shape(format!(
                    "classifier `{}` expects {} features, clip `{}` gives {}",
                    c.label.text,
                    c.model.weights.len(),
                    clip.clip_id,
                    x.len()
                )));
            }
            scores.push(logistic(c.model.margin(x)));
        }
        Ok(ScoreVector {
            clip_id: clip.clip_id.clone(),
            scores,
        })
    }
}

/// Retains classifiers whose AUC on the validation split is at least
/// `threshold`, preserving order.
pub fn select_labels(
    bank: &ClassifierBank,
    validation: &CorpusSplit,
    threshold: f64,
) -> Result<ClassifierBank> {
    bank.with_auc_on(validation)?.retain_by_auc(threshold)
}

pub fn score_clip(bank: &ClassifierBank, clip: &Clip) -> Result<ScoreVector> {
    bank.score_clip(clip)
}

pub fn score_split(bank: &ClassifierBank, split: &CorpusSplit) -> Result<Vec<ScoreVector>> {
    split.clips.iter().map(|c| bank.score_clip(c)).collect()
}

/// Score vectors as TSV: `clip_id<TAB>s1,s2,...`.
pub fn write_scores(path: &Path, scores: &[ScoreVector]) -> Result<()> {
    let mut s = String::new();
    for v in scores {
        let vals: Vec<String> = v.scores.iter().map(|x| format!("{x:?}")).collect();
        s.push_str(&format!("{}\t{}\n", v.clip_id, vals.join(",")));
    }
    io::write_atomic(path, s.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreVector>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected clip_id<TAB>scores"))?;
        let scores = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?
        };
        out.push(ScoreVector {
            clip_id: id.to_string(),
            scores,
        });
    }
    Ok(out)
}
