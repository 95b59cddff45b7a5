//! Difficulty analysis: sentence orderings, smoothed difficulty curves,
//! retrieval baselines and verb-topic statistics.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Meteor, MeteorConfig};
use crate::text;

pub const DEFAULT_KNN_K: usize = 10;
pub const NONE_TOPIC: &str = "none";

/// Stable ascending order of indices by token count.
pub fn sort_by_length(sentences: &[Vec<String>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| sentences[i].len());
    order
}

pub fn word_counts<'a, I>(sentences: I) -> HashMap<String, usize>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts = HashMap::new();
    for s in sentences {
        for w in s {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Mean training count of the sentence's tokens; unseen words count 0.
pub fn mean_word_frequency(tokens: &[String], counts: &HashMap<String, usize>) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens
        .iter()
        .map(|t| counts.get(t).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / tokens.len() as f64
}

/// Stable descending order of indices by mean word frequency.
pub fn sort_by_word_frequency(
    sentences: &[Vec<String>],
    train_counts: &HashMap<String, usize>,
) -> Vec<usize> {
    let keys: Vec<f64> = sentences
        .iter()
        .map(|s| mean_word_frequency(s, train_counts))
        .collect();
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    order
}

/// Centered moving average; the window is clipped at the series edges.
pub fn mean_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidInput(
            "mean filter window must be positive".into(),
        ));
    }
    let n = series.len();
    let left = (window - 1) / 2;
    let right = window / 2;
    Ok((0..n)
        .map(|i| {
            let w = &series[i.saturating_sub(left)..(i + right + 1).min(n)];
            // Offsets from the first element make constant windows exact.
            let base = w[0];
            let mean = base + w.iter().map(|v| v - base).sum::<f64>() / w.len() as f64;
            let (lo, hi) = w
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            mean.clamp(lo, hi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyCurve {
    pub key: String,
    pub clip_ids: Vec<String>,
    pub key_values: Vec<f64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub window: usize,
}

impl DifficultyCurve {
    /// Reorders per-clip `scores` by `order` and smooths them.
    pub fn new(
        key: &str,
        order: &[usize],
        clip_ids: &[String],
        key_values: &[f64],
        scores: &[f64],
        window: usize,
    ) -> Result<Self> {
        if clip_ids.len() != scores.len()
            || key_values.len() != scores.len()
            || order.len() != scores.len()
        {
            return Err(Error::Shape(
                "difficulty curve inputs differ in length".into(),
            ));
        }
        let raw: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let smoothed = mean_filter(&raw, window)?;
        Ok(DifficultyCurve {
            key: key.to_string(),
            clip_ids: order.iter().map(|&i| clip_ids[i].clone()).collect(),
            key_values: order.iter().map(|&i| key_values[i]).collect(),
            raw,
            smoothed,
            window,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,clip_id,key_value,score,smoothed\n");
        for i in 0..self.raw.len() {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                i + 1,
                self.clip_ids[i],
                self.key_values[i],
                self.raw[i],
                self.smoothed[i]
            ));
        }
        s
    }
}

/// Best METEOR-lite of any training sentence used as the candidate for
/// `test_ref`. Returns `(score, index)`; earliest index wins ties.
pub fn textual_nn(
    test_ref: &[String],
    train: &[Vec<String>],
    cfg: &MeteorConfig,
) -> Result<(f64, usize)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("textual_nn: empty training set".into()));
    }
    let m = Meteor::new(cfg);
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, s) in train.iter().enumerate() {
        let v = m.score(s, test_ref);
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// [`textual_nn`] for every test reference, in parallel.
pub fn textual_nn_all(
    test_refs: &[Vec<String>],
    train: &[Vec<String>],
    cfg: &MeteorConfig,
) -> Result<Vec<(f64, usize)>> {
    test_refs
        .par_iter()
        .map(|r| textual_nn(r, train, cfg))
        .collect()
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Indices of the `k` training vectors most similar to `query`; ties go
/// to the earlier training index.
pub fn nearest_by_cosine(query: &[f64], train: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > train.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} must be in 1..={}",
            train.len()
        )));
    }
    if let Some(v) = train.iter().find(|v| v.len() != query.len()) {
        return Err(Error::Shape(format!(
            "score vector has {} dims, query has {}",
            v.len(),
            query.len()
        )));
    }
    let sims: Vec<f64> = train.iter().map(|v| cosine_similarity(query, v)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order.truncate(k);
    Ok(order)
}

/// Best METEOR-lite between `test_ref` and the sentences of the `k`
/// visually nearest training clips. Returns the score and the neighbors.
pub fn visual_knn(
    query: &[f64],
    train_vectors: &[Vec<f64>],
    train_sentences: &[Vec<String>],
    k: usize,
    test_ref: &[String],
    cfg: &MeteorConfig,
) -> Result<(f64, Vec<usize>)> {
    if train_vectors.len() != train_sentences.len() {
        return Err(Error::Shape(
            "visual_knn: vectors and sentences differ in count".into(),
        ));
    }
    let nn = nearest_by_cosine(query, train_vectors, k)?;
    let m = Meteor::new(cfg);
    let best = nn
        .iter()
        .map(|&i| m.score(&train_sentences[i], test_ref))
        .fold(0.0, f64::max);
    Ok((best, nn))
}

/// Verb to topic map. Unknown verbs belong to [`NONE_TOPIC`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLexicon {
    pub topics: BTreeMap<String, String>,
}

impl TopicLexicon {
    /// Parses `verb<TAB>topic` lines; `#` starts a comment line.
    pub fn parse(source: &str, path: &Path) -> Result<Self> {
        let mut topics = BTreeMap::new();
        for (n, line) in source.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (verb, topic) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n + 1, "expected `verb<TAB>topic`"))?;
            let verb = text::normalize_phrase(verb);
            let topic = topic.trim().to_string();
            if verb.is_empty() || topic.is_empty() {
                return Err(Error::parse(path, n + 1, "empty verb or topic"));
            }
            if let Some(prev) = topics.insert(verb.clone(), topic.clone()) {
                if prev != topic {
                    return Err(Error::parse(
                        path,
                        n + 1,
                        format!("verb `{verb}` mapped to `{prev}` and `{topic}`"),
                    ));
                }
            }
        }
        Ok(TopicLexicon { topics })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s, path)
    }

    pub fn topic_of(&self, verb: &str) -> &str {
        self.topics
            .get(verb)
            .map(String::as_str)
            .unwrap_or(NONE_TOPIC)
    }
}

/// A scored test sentence with the verbs its annotation carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub clip_id: String,
    pub tokens: Vec<String>,
    pub verbs: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicStats {
    pub topic: String,
    pub count: usize,
    pub mean_meteor: f64,
    /// Bits.
    pub entropy: f64,
    pub top5: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    /// Sorted by topic name.
    pub topics: Vec<TopicStats>,
}

impl TopicReport {
    pub fn total(&self) -> usize {
        self.topics.iter().map(|t| t.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("topic,count,mean_meteor,entropy,top5\n");
        for t in &self.topics {
            let top: Vec<String> = t.top5.iter().map(|(v, c)| format!("{v}:{c}")).collect();
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                t.topic,
                t.count,
                t.mean_meteor,
                t.entropy,
                top.join(";")
            ));
        }
        s
    }
}

/// Shannon entropy in bits of a count distribution.
pub fn entropy_bits<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Per-topic statistics over the sentences that carry exactly one verb.
pub fn topic_report(records: &[ScoredSentence], lexicon: &TopicLexicon) -> TopicReport {
    struct Acc<'a> {
        count: usize,
        score: f64,
        verbs: BTreeMap<&'a str, usize>,
    }
    let mut by_topic: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in records.iter().filter(|r| r.verbs.len() == 1) {
        let verb = r.verbs[0].as_str();
        let acc = by_topic
            .entry(lexicon.topic_of(verb))
            .or_insert_with(|| Acc {
                count: 0,
                score: 0.0,
                verbs: BTreeMap::new(),
            });
        acc.count += 1;
        acc.score += r.score;
        *acc.verbs.entry(verb).or_default() += 1;
    }
    let topics = by_topic
        .into_iter()
        .map(|(topic, acc)| {
            let mut ranked: Vec<(String, usize)> =
                acc.verbs.iter().map(|(v, &c)| (v.to_string(), c)).collect();
            // BTreeMap order is alphabetical, so the stable sort keeps
            // alphabetical ties.
            ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
            ranked.truncate(5);
            TopicStats {
                topic: topic.to_string(),
                count: acc.count,
                mean_meteor: acc.score / acc.count as f64,
                entropy: entropy_bits(acc.verbs.values().copied()),
                top5: ranked,
            }
        })
        .collect();
    TopicReport { topics }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralTag {
    NoVerb,
    /// The sentence opens with its verb.
    NoSubject,
    /// The first token is not the `someone` placeholder.
    NonHumanSubject,
}

impl StructuralTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StructuralTag::NoVerb => "no_verb",
            StructuralTag::NoSubject => "no_subject",
            StructuralTag::NonHumanSubject => "non_human_subject",
        }
    }
}

/// Heuristic structural tags. Verbs are compared after stemming.
pub fn structural_tags(s: &ScoredSentence) -> Vec<StructuralTag> {
    let mut tags = Vec::new();
    if s.verbs.is_empty() {
        tags.push(StructuralTag::NoVerb);
    }
    let verb_stems: Vec<String> = s.verbs.iter().map(|v| text::stem(v)).collect();
    match s.tokens.first() {
        None => tags.push(StructuralTag::NoSubject),
        Some(first) if verb_stems.contains(&text::stem(first)) => {
            tags.push(StructuralTag::NoSubject)
        }
        Some(first) if first != "someone" => tags.push(StructuralTag::NonHumanSubject),
        Some(_) => {}
    }
    tags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeEntry {
    pub clip_id: String,
    pub text: String,
    pub score: f64,
    pub tags: Vec<StructuralTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesReport {
    pub top: Vec<ExtremeEntry>,
    pub bottom: Vec<ExtremeEntry>,
}

impl ExtremesReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("set,rank,clip_id,score,tags,sentence\n");
        for (set, entries) in [("top", &self.top), ("bottom", &self.bottom)] {
            for (i, e) in entries.iter().enumerate() {
                let tags: Vec<&str> = e.tags.iter().map(|t| t.as_str()).collect();
                s.push_str(&format!(
                    "{set},{},{},{:.6},{},\"{}\"\n",
                    i + 1,
                    e.clip_id,
                    e.score,
                    tags.join(";"),
                    e.text.replace('"', "\"\"")
                ));
            }
        }
        s
    }
}

/// The `n` best and `n` worst sentences; equal scores are ordered by
/// clip id in both lists.
pub fn extremes_report(records: &[ScoredSentence], n: usize) -> Result<ExtremesReport> {
    if n == 0 || n > records.len() {
        return Err(Error::InvalidInput(format!(
            "n = {n} must be in 1..={}",
            records.len()
        )));
    }
    let entry = |r: &ScoredSentence| ExtremeEntry {
        clip_id: r.clip_id.clone(),
        text: r.tokens.join(" "),
        score: r.score,
        tags: structural_tags(r),
    };
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        records[b]
            .score
            .total_cmp(&records[a].score)
            .then_with(|| records[a].clip_id.cmp(&records[b].clip_id))
    });
    let top = idx[..n].iter().map(|&i| entry(&records[i])).collect();
    idx.sort_by(|&a, &b| {
        records[a]
            .score
            .total_cmp(&records[b].score)
            .then_with(|| records[a].clip_id.cmp(&records[b].clip_id))
    });
    let bottom = idx[..n].iter().map(|&i| entry(&records[i])).collect();
    Ok(ExtremesReport { top, bottom })
}
