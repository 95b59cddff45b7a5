//! Caption metrics: METEOR-lite, BLEU@4, ROUGE-L and CIDEr.
//!
//! All functions take pre-tokenized sentences. Scores are on the unit
//! scale; reports multiply by 100 for display.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Exact,
    Stem,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeteorConfig {
    /// Precision weight in `F = PR / (αP + (1−α)R)`; 0.9 gives `10PR/(R+9P)`.
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub stages: Vec<MatchStage>,
    /// Synonym sets consulted by the `Synonym` stage.
    pub synonyms: Vec<Vec<String>>,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        MeteorConfig {
            alpha: 0.9,
            gamma: 0.5,
            beta: 3.0,
            stages: vec![MatchStage::Exact, MatchStage::Stem],
            synonyms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub max_n: usize,
    /// Add-one smoothing on the 2..=max_n precisions.
    pub smoothing: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiderConfig {
    pub max_n: usize,
    pub scale: f64,
}

impl Default for CiderConfig {
    fn default() -> Self {
        CiderConfig {
            max_n: 4,
            scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub meteor: MeteorConfig,
    pub bleu: BleuConfig,
    pub cider: CiderConfig,
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.meteor.stages.first() != Some(&MatchStage::Exact) {
            return Err(Error::InvalidInput(
                "metrics.meteor.stages must start with exact".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.meteor.alpha) {
            return Err(Error::InvalidInput(
                "metrics.meteor.alpha must be in [0,1]".into(),
            ));
        }
        if self.bleu.max_n == 0 || self.cider.max_n == 0 {
            return Err(Error::InvalidInput(
                "metrics n-gram order must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Precomputed lookup for one METEOR configuration.
pub struct Meteor<'a> {
    cfg: &'a MeteorConfig,
    synonym_class: HashMap<&'a str, usize>,
}

/// Alignment search enumerates at most this many joint choices per stage
/// before falling back to in-order pairing.
const ALIGNMENT_SEARCH_LIMIT: usize = 20_000;

impl<'a> Meteor<'a> {
    pub fn new(cfg: &'a MeteorConfig) -> Self {
        let mut synonym_class = HashMap::new();
        for (k, set) in cfg.synonyms.iter().enumerate() {
            for w in set {
                synonym_class.entry(w.as_str()).or_insert(k);
            }
        }
        Meteor { cfg, synonym_class }
    }

    fn key(&self, word: &str, stage: MatchStage) -> Option<String> {
        match stage {
            MatchStage::Exact => Some(word.to_string()),
            MatchStage::Stem => Some(text::stem(word)),
            MatchStage::Synonym => self
                .synonym_class
                .get(word)
                .or_else(|| self.synonym_class.get(text::stem(word).as_str()))
                .map(|k| format!("\u{1}{k}")),
        }
    }

    /// Staged unigram alignment maximizing matches, then minimizing chunks.
    /// Returns `(cand_pos, ref_pos)` pairs.
    pub fn align(&self, cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
        let mut aligned: Vec<(usize, usize)> = Vec::new();
        let mut cand_used = vec![false; cand.len()];
        let mut ref_used = vec![false; reference.len()];
        for &stage in &self.cfg.stages {
            let mut classes: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
            for (i, w) in cand.iter().enumerate().filter(|(i, _)| !cand_used[*i]) {
                if let Some(k) = self.key(w, stage) {
                    classes.entry(k).or_default().0.push(i);
                }
            }
            for (j, w) in reference.iter().enumerate().filter(|(j, _)| !ref_used[*j]) {
                if let Some(k) = self.key(w, stage) {
                    if let Some(e) = classes.get_mut(&k) {
                        e.1.push(j);
                    }
                }
            }
            let options: Vec<Vec<Vec<(usize, usize)>>> = classes
                .values()
                .filter(|(c, r)| !c.is_empty() && !r.is_empty())
                .map(|(c, r)| class_pairings(c, r))
                .collect();
            let best = best_combination(&options, &aligned);
            for (i, j) in best {
                cand_used[i] = true;
                ref_used[j] = true;
                aligned.push((i, j));
            }
        }
        aligned.sort_unstable();
        aligned
    }

    pub fn score(&self, cand: &[String], reference: &[String]) -> f64 {
        if cand.is_empty() || reference.is_empty() {
            return 0.0;
        }
        let alignment = self.align(cand, reference);
        let m = alignment.len() as f64;
        if m == 0.0 {
            return 0.0;
        }
        let p = m / cand.len() as f64;
        let r = m / reference.len() as f64;
        let a = self.cfg.alpha;
        let fmean = p * r / (a * p + (1.0 - a) * r);
        let frag = count_chunks(&alignment) as f64 / m;
        let penalty = self.cfg.gamma * frag.powf(self.cfg.beta);
        fmean * (1.0 - penalty)
    }
}

/// Every way of pairing the smaller side of a class injectively into the
/// larger side. Large classes only get the in-order pairing.
fn class_pairings(cand: &[usize], refs: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let k = cand.len().min(refs.len());
    let in_order: Vec<(usize, usize)> = cand.iter().copied().zip(refs.iter().copied()).collect();
    let big = cand.len().max(refs.len());
    let count: usize = (big - k + 1..=big).product();
    if count > 720 {
        return vec![in_order];
    }
    let (small, large, swap) = if cand.len() <= refs.len() {
        (cand, refs, false)
    } else {
        (refs, cand, true)
    };
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; large.len()];
    fn rec(
        small: &[usize],
        large: &[usize],
        swap: bool,
        chosen: &mut Vec<(usize, usize)>,
        used: &mut [bool],
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let depth = chosen.len();
        if depth == small.len() {
            out.push(chosen.clone());
            return;
        }
        for j in 0..large.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            chosen.push(if swap {
                (large[j], small[depth])
            } else {
                (small[depth], large[j])
            });
            rec(small, large, swap, chosen, used, out);
            chosen.pop();
            used[j] = false;
        }
    }
    rec(small, large, swap, &mut chosen, &mut used, &mut out);
    out
}

fn best_combination(
    options: &[Vec<Vec<(usize, usize)>>],
    fixed: &[(usize, usize)],
) -> Vec<(usize, usize)> {
    let total = options
        .iter()
        .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
        .unwrap_or(usize::MAX);
    if total > ALIGNMENT_SEARCH_LIMIT {
        return options.iter().flat_map(|o| o[0].iter().copied()).collect();
    }
    let mut idx = vec![0usize; options.len()];
    let mut best: Option<(usize, Vec<(usize, usize)>)> = None;
    loop {
        let mut pairs: Vec<(usize, usize)> = fixed.to_vec();
        for (o, &k) in options.iter().zip(&idx) {
            pairs.extend_from_slice(&o[k]);
        }
        pairs.sort_unstable();
        let chunks = count_chunks(&pairs);
        if best.as_ref().is_none_or(|(c, _)| chunks < *c) {
            let chosen = options
                .iter()
                .zip(&idx)
                .flat_map(|(o, &k)| o[k].iter().copied())
                .collect();
            best = Some((chunks, chosen));
        }
        // odometer
        let mut d = 0;
        loop {
            if d == idx.len() {
                return best.map(|b| b.1).unwrap_or_default();
            }
            idx[d] += 1;
            if idx[d] < options[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Runs of matches contiguous and identically ordered in both sentences.
/// Expects pairs sorted by candidate position.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Best METEOR-lite score of `candidate` over `references`.
pub fn meteor(candidate: &[String], references: &[Vec<String>], cfg: &MeteorConfig) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::InvalidInput("meteor: empty candidate".into()));
    }
    if references.is_empty() {
        return Err(Error::InvalidInput("meteor: no references".into()));
    }
    let m = Meteor::new(cfg);
    Ok(references
        .iter()
        .map(|r| m.score(candidate, r))
        .fold(0.0, f64::max))
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_default() += 1;
        }
    }
    out
}

/// Corpus-level BLEU: clipped n-gram precisions pooled over the corpus,
/// geometric mean, brevity penalty against the closest reference length.
pub fn bleu(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    cfg: &BleuConfig,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "bleu: {} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let max_n = cfg.max_n;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        let closest = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        ref_len += closest;
        for n in 1..=max_n {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_default();
                    *e = (*e).max(c);
                }
            }
            total[n - 1] += cand.len().saturating_sub(n - 1);
            matched[n - 1] += counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if cfg.smoothing && n > 0 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln() / max_n as f64;
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_sum.exp())
}

/// BLEU with four n-gram orders.
pub fn bleu4(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    smoothing: bool,
) -> Result<f64> {
    bleu(
        candidates,
        references,
        &BleuConfig {
            max_n: 4,
            smoothing,
        },
    )
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure, `(1+β²)PR / (R+β²P)` with β = 1.2.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Best ROUGE-L over several references.
pub fn rouge_l_multi(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| rouge_l(candidate, r))
        .fold(0.0, f64::max)
}

// Ordered so floating-point sums do not depend on hash seeds.
type NgramVec<'a> = BTreeMap<&'a [String], f64>;

fn cosine(a: &NgramVec, b: &NgramVec) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb)
}

fn tfidf_vec<'a>(
    s: &'a [String],
    n: usize,
    df: &HashMap<&[String], usize>,
    n_clips: f64,
) -> NgramVec<'a> {
    ngram_counts(s, n)
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (n_clips / d).ln())
        })
        .collect()
}

/// Per-clip CIDEr without the degenerate-corpus check. With a single clip
/// every idf is zero and every score is zero.
pub fn cider_scores(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    cfg: &CiderConfig,
) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "cider: {} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let n_clips = candidates.len() as f64;
    let mut scores = vec![0.0; candidates.len()];
    for n in 1..=cfg.max_n {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let mut seen: std::collections::HashSet<&[String]> = std::collections::HashSet::new();
            for r in refs {
                if r.len() >= n {
                    seen.extend(r.windows(n));
                }
            }
            for g in seen {
                *df.entry(g).or_default() += 1;
            }
        }
        let tfidf = |s| tfidf_vec(s, n, &df, n_clips);
        for (k, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let cv = tfidf(cand);
            let sim: f64 =
                refs.iter().map(|r| cosine(&cv, &tfidf(r))).sum::<f64>() / refs.len() as f64;
            scores[k] += sim / cfg.max_n as f64;
        }
    }
    scores.iter_mut().for_each(|s| *s *= cfg.scale);
    Ok(scores)
}

/// Corpus CIDEr: mean of per-clip scores. Needs at least two clips.
pub fn cider(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    cfg: &CiderConfig,
) -> Result<f64> {
    if candidates.len() < 2 {
        return Err(Error::InvalidInput(
            "cider needs at least two clips for idf".into(),
        ));
    }
    let s = cider_scores(candidates, references, cfg)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub clip_id: String,
    pub candidate: String,
    pub references: Vec<String>,
    pub meteor: f64,
    pub bleu4_sentence: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub meteor: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: Vec<SentenceScores>,
    pub corpus: CorpusScores,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip_id,meteor,bleu4_sentence,rouge_l,cider_contrib\n");
        for r in &self.sentences {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.clip_id, r.meteor, r.bleu4_sentence, r.rouge_l, r.cider
            ));
        }
        s
    }

    /// Corpus scores in percent.
    pub fn summary(&self) -> String {
        let c = &self.corpus;
        format!(
            "sentences: {}\nCIDEr: {:.2}\nBLEU@4: {:.2}\nROUGE_L: {:.2}\nMETEOR-lite: {:.2}\n",
            self.sentences.len(),
            c.cider * 100.0,
            c.bleu4 * 100.0,
            c.rouge_l * 100.0,
            c.meteor * 100.0
        )
    }
}

/// Scores candidates against references matched by clip id. Candidate
/// order is preserved; every candidate needs at least one reference.
pub fn evaluate_corpus(
    candidates: &[Sentence],
    references: &[Sentence],
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut refs_by_clip: HashMap<&str, Vec<&Sentence>> = HashMap::new();
    for r in references {
        refs_by_clip.entry(r.clip_id.as_str()).or_default().push(r);
    }
    let mut seen = std::collections::HashSet::new();
    let mut cand_tokens = Vec::with_capacity(candidates.len());
    let mut ref_tokens = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !seen.insert(c.clip_id.as_str()) {
            return Err(Error::Duplicate {
                kind: "candidate",
                clip_id: c.clip_id.clone(),
            });
        }
        let refs = refs_by_clip
            .get(c.clip_id.as_str())
            .ok_or_else(|| Error::DanglingClip {
                kind: "candidate",
                clip_id: c.clip_id.clone(),
            })?;
        cand_tokens.push(c.tokens.clone());
        ref_tokens.push(refs.iter().map(|r| r.tokens.clone()).collect::<Vec<_>>());
    }
    let meteor_impl = Meteor::new(&cfg.meteor);
    let cider_per = cider_scores(&cand_tokens, &ref_tokens, &cfg.cider)?;
    let mut sentences = Vec::with_capacity(candidates.len());
    for (k, c) in candidates.iter().enumerate() {
        let refs = &ref_tokens[k];
        let cand = &cand_tokens[k];
        let meteor = refs
            .iter()
            .map(|r| meteor_impl.score(cand, r))
            .fold(0.0, f64::max);
        let bleu4_sentence = bleu(
            std::slice::from_ref(cand),
            std::slice::from_ref(refs),
            &cfg.bleu,
        )?;
        sentences.push(SentenceScores {
            clip_id: c.clip_id.clone(),
            candidate: c.raw_text.clone(),
            references: refs_by_clip[c.clip_id.as_str()]
                .iter()
                .map(|r| r.raw_text.clone())
                .collect(),
            meteor,
            bleu4_sentence,
            rouge_l: rouge_l_multi(cand, refs),
            cider: cider_per[k],
        });
    }
    let n = sentences.len().max(1) as f64;
    let corpus = CorpusScores {
        meteor: sentences.iter().map(|s| s.meteor).sum::<f64>() / n,
        bleu4: bleu(&cand_tokens, &ref_tokens, &cfg.bleu)?,
        rouge_l: sentences.iter().map(|s| s.rouge_l).sum::<f64>() / n,
        cider: cider_per.iter().sum::<f64>() / n,
    };
    Ok(EvalReport { sentences, corpus })
}
