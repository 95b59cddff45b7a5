//! Corpus ingestion and visual-label mining.
//!
//! A split is a set of clips (precomputed feature vectors per channel),
//! their sentence descriptions and the pre-parsed annotations of those
//! sentences. Labels are counted over the annotations, recovered for
//! sentences the parser failed on, and then assigned to one of three
//! semantic groups (verbs, objects, places). Labels that fit no group are
//! dropped as unlikely to be visual.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub features: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub clip_id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(clip_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = text::tokenize(&raw_text);
        Sentence {
            clip_id: clip_id.into(),
            raw_text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedLabel {
    pub text: String,
    pub verb: bool,
}

/// Parser output for one clip. When `parse_ok` is false the parser gave
/// nothing and any labels were recovered by [`match_unparsed`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnnotation {
    pub clip_id: String,
    pub labels: Vec<AnnotatedLabel>,
    pub parse_ok: bool,
}

impl ParsedAnnotation {
    pub fn has_label(&self, text: &str) -> bool {
        self.labels.iter().any(|l| l.text == text)
    }
}

/// One split of the corpus. `annotations[i]` always belongs to `clips[i]`;
/// clips absent from the annotations file get an unparsed placeholder.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub channels: Vec<ChannelSpec>,
    pub clips: Vec<Clip>,
    pub sentences: Vec<Sentence>,
    pub annotations: Vec<ParsedAnnotation>,
}

impl CorpusSplit {
    pub fn clip_index(&self) -> HashMap<&str, usize> {
        self.clips
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clip_id.as_str(), i))
            .collect()
    }

    pub fn channel_dim(&self, name: &str) -> Option<usize> {
        self.channels.iter().find(|c| c.name == name).map(|c| c.dim)
    }

    /// Sentences grouped by clip, in clip order.
    pub fn sentences_by_clip(&self) -> Vec<Vec<&Sentence>> {
        let idx = self.clip_index();
        let mut out = vec![Vec::new(); self.clips.len()];
        for s in &self.sentences {
            if let Some(&i) = idx.get(s.clip_id.as_str()) {
                out[i].push(s);
            }
        }
        out
    }

    /// Checks the cross-record invariants; used after ingestion and after
    /// programmatic construction.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for clip in &self.clips {
            if !seen.insert(clip.clip_id.as_str()) {
                return Err(Error::Duplicate {
                    kind: "clip",
                    clip_id: clip.clip_id.clone(),
                });
            }
            for ch in &self.channels {
                match clip.features.get(&ch.name) {
                    None => {
                        return Err(Error::MissingChannel {
                            clip_id: clip.clip_id.clone(),
                            channel: ch.name.clone(),
                        })
                    }
                    Some(v) if v.len() != ch.dim => {
                        return Err(Error::Dimension {
                            clip_id: clip.clip_id.clone(),
                            channel: ch.name.clone(),
                            expected: ch.dim,
                            found: v.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
        for s in &self.sentences {
            if !seen.contains(s.clip_id.as_str()) {
                return Err(Error::DanglingClip {
                    kind: "sentence",
                    clip_id: s.clip_id.clone(),
                });
            }
        }
        if self.annotations.len() != self.clips.len() {
            return Err(Error::Shape(format!(
                "{} annotations for {} clips",
                self.annotations.len(),
                self.clips.len()
            )));
        }
        for (a, c) in self.annotations.iter().zip(&self.clips) {
            if a.clip_id != c.clip_id {
                return Err(Error::Shape(format!(
                    "annotation for `{}` misaligned with clip `{}`",
                    a.clip_id, c.clip_id
                )));
            }
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a clips file: `#channel:name:dim` header lines followed by
/// `clip_id<TAB>name=v,v,...;name=v,...` records.
pub fn read_clips(path: &Path) -> Result<(Vec<ChannelSpec>, Vec<Clip>)> {
    let content = read_to_string(path)?;
    let mut channels: Vec<ChannelSpec> = Vec::new();
    let mut clips = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(decl) = line.strip_prefix("#channel:") {
            let (name, dim) = decl
                .rsplit_once(':')
                .ok_or_else(|| Error::parse(path, lineno, "expected #channel:name:dim"))?;
            let dim: usize = dim
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad dimension `{dim}`")))?;
            if channels.iter().any(|c| c.name == name) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("channel `{name}` declared twice"),
                ));
            }
            channels.push(ChannelSpec {
                name: name.to_string(),
                dim,
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (clip_id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected clip_id<TAB>features"))?;
        let mut features = BTreeMap::new();
        for part in rest.split(';').filter(|p| !p.trim().is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, format!("bad channel entry `{part}`")))?;
            let spec = channels.iter().find(|c| c.name == name).ok_or_else(|| {
                Error::parse(path, lineno, format!("undeclared channel `{name}`"))
            })?;
            let vec = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, lineno, format!("bad float: {e}")))?;
            if vec.len() != spec.dim {
                return Err(Error::Dimension {
                    clip_id: clip_id.to_string(),
                    channel: name.to_string(),
                    expected: spec.dim,
                    found: vec.len(),
                });
            }
            features.insert(name.to_string(), vec);
        }
        clips.push(Clip {
            clip_id: clip_id.to_string(),
            features,
        });
    }
    Ok((channels, clips))
}

pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (clip_id, raw) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected clip_id<TAB>text"))?;
        out.push(Sentence::new(clip_id, raw));
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<ParsedAnnotation>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let clip_id = fields.next().unwrap_or_default();
        let parse_ok = match fields.next() {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("parse_ok must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let mut labels = Vec::new();
        for item in fields
            .next()
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.trim().is_empty())
        {
            let (label, flag) = item.rsplit_once('|').ok_or_else(|| {
                Error::parse(path, lineno, format!("expected label|flag, got `{item}`"))
            })?;
            let verb = match flag {
                "1" => true,
                "0" => false,
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("bad verb flag `{flag}`"),
                    ))
                }
            };
            labels.push(AnnotatedLabel {
                text: text::normalize_phrase(label),
                verb,
            });
        }
        if !parse_ok && !labels.is_empty() {
            return Err(Error::parse(
                path,
                lineno,
                "unparsed annotation must not carry labels",
            ));
        }
        out.push(ParsedAnnotation {
            clip_id: clip_id.to_string(),
            labels,
            parse_ok,
        });
    }
    Ok(out)
}

/// Loads a split from its three files and aligns annotations to clips.
pub fn ingest_corpus(
    clips_path: &Path,
    sentences_path: &Path,
    annotations_path: &Path,
) -> Result<CorpusSplit> {
    let (channels, clips) = read_clips(clips_path)?;
    let sentences = read_sentences(sentences_path)?;
    let raw_annotations = read_annotations(annotations_path)?;
    let split = assemble_split(channels, clips, sentences, raw_annotations)?;
    Ok(split)
}

/// Aligns loose records into a validated split.
pub fn assemble_split(
    channels: Vec<ChannelSpec>,
    clips: Vec<Clip>,
    sentences: Vec<Sentence>,
    annotations: Vec<ParsedAnnotation>,
) -> Result<CorpusSplit> {
    let mut by_clip: HashMap<String, ParsedAnnotation> = HashMap::new();
    {
        let ids: BTreeSet<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
        for a in annotations {
            if !ids.contains(a.clip_id.as_str()) {
                return Err(Error::DanglingClip {
                    kind: "annotation",
                    clip_id: a.clip_id,
                });
            }
            if by_clip.contains_key(&a.clip_id) {
                return Err(Error::Duplicate {
                    kind: "annotation",
                    clip_id: a.clip_id,
                });
            }
            by_clip.insert(a.clip_id.clone(), a);
        }
    }
    let annotations = clips
        .iter()
        .map(|c| {
            by_clip
                .remove(&c.clip_id)
                .unwrap_or_else(|| ParsedAnnotation {
                    clip_id: c.clip_id.clone(),
                    labels: Vec::new(),
                    parse_ok: false,
                })
        })
        .collect();
    let split = CorpusSplit {
        channels,
        clips,
        sentences,
        annotations,
    };
    split.validate()?;
    Ok(split)
}

fn fmt_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_clips(path: &Path, channels: &[ChannelSpec], clips: &[Clip]) -> Result<()> {
    let mut s = String::new();
    for c in channels {
        s.push_str(&format!("#channel:{}:{}\n", c.name, c.dim));
    }
    for clip in clips {
        let parts: Vec<String> = channels
            .iter()
            .filter_map(|c| {
                clip.features
                    .get(&c.name)
                    .map(|v| format!("{}={}", c.name, fmt_floats(v)))
            })
            .collect();
        s.push_str(&format!("{}\t{}\n", clip.clip_id, parts.join(";")));
    }
    crate::io::write_atomic(path, s.as_bytes())
}

pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let s: String = sentences
        .iter()
        .map(|x| format!("{}\t{}\n", x.clip_id, x.raw_text))
        .collect();
    crate::io::write_atomic(path, s.as_bytes())
}

pub fn write_annotations(path: &Path, annotations: &[ParsedAnnotation]) -> Result<()> {
    let mut s = String::new();
    for a in annotations {
        let labels: Vec<String> = a
            .labels
            .iter()
            .map(|l| format!("{}|{}", l.text, u8::from(l.verb)))
            .collect();
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            a.clip_id,
            u8::from(a.parse_ok),
            labels.join(";")
        ));
    }
    crate::io::write_atomic(path, s.as_bytes())
}

/// Place and object phrase lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLexicon {
    pub places: BTreeSet<String>,
    pub objects: BTreeSet<String>,
}

impl GroupLexicon {
    pub fn new<P, O>(places: P, objects: O) -> Result<Self>
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        O: IntoIterator,
        O::Item: AsRef<str>,
    {
        let places: BTreeSet<String> = places
            .into_iter()
            .map(|p| text::normalize_phrase(p.as_ref()))
            .collect();
        let objects: BTreeSet<String> = objects
            .into_iter()
            .map(|p| text::normalize_phrase(p.as_ref()))
            .collect();
        if let Some(dup) = places.intersection(&objects).next() {
            return Err(Error::InvalidInput(format!(
                "`{dup}` listed both as place and object"
            )));
        }
        Ok(GroupLexicon { places, objects })
    }

    /// Reads `[places]` / `[objects]` sections, one phrase per line.
    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut places = Vec::new();
        let mut objects = Vec::new();
        let mut section: Option<&str> = None;
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[places]" => section = Some("places"),
                "[objects]" => section = Some("objects"),
                _ if line.starts_with('[') => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("unknown section {line}"),
                    ))
                }
                _ => match section {
                    Some("places") => places.push(line.to_string()),
                    Some(_) => objects.push(line.to_string()),
                    None => return Err(Error::parse(path, lineno + 1, "phrase outside a section")),
                },
            }
        }
        Self::new(places, objects)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from("[places]\n");
        for p in &self.places {
            s.push_str(p);
            s.push('\n');
        }
        s.push_str("[objects]\n");
        for o in &self.objects {
            s.push_str(o);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Verb,
    Object,
    Place,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Verb => "verb",
            Group::Object => "object",
            Group::Place => "place",
        })
    }
}

/// Which feature channels each label's classifier sees. Multiple channels
/// are stacked in the listed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureAssignment {
    Grouped {
        verb: Vec<String>,
        object: Vec<String>,
        place: Vec<String>,
    },
    Uniform {
        channels: Vec<String>,
    },
}

impl FeatureAssignment {
    pub fn channels_for(&self, group: Group) -> &[String] {
        match self {
            FeatureAssignment::Grouped {
                verb,
                object,
                place,
            } => match group {
                Group::Verb => verb,
                Group::Object => object,
                Group::Place => place,
            },
            FeatureAssignment::Uniform { channels } => channels,
        }
    }

    pub fn all_channels(&self) -> BTreeSet<&str> {
        [Group::Verb, Group::Object, Group::Place]
            .into_iter()
            .flat_map(|g| self.channels_for(g).iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedLabel {
    pub text: String,
    pub group: Group,
    pub count: usize,
    pub channels: Vec<String>,
}

/// Labels in canonical `(group, text)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub entries: Vec<GroupedLabel>,
    pub min_count: usize,
}

impl LabelVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distinct_texts(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.text.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Texts present per group, for same-group negative pools.
    pub fn texts_by_group(&self) -> BTreeMap<Group, BTreeSet<&str>> {
        let mut out: BTreeMap<Group, BTreeSet<&str>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.group).or_default().insert(e.text.as_str());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStat {
    pub text: String,
    pub count: usize,
    pub verb_count: usize,
}

/// Frequency-filtered labels before group assignment, sorted by text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub entries: Vec<LabelStat>,
    pub min_count: usize,
}

/// Counts each label once per annotation and keeps those seen at least
/// `min_count` times.
pub fn extract_labels(annotations: &[ParsedAnnotation], min_count: usize) -> Result<LabelCounts> {
    if min_count == 0 {
        return Err(Error::InvalidInput("min_count must be at least 1".into()));
    }
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for a in annotations {
        let mut seen: BTreeMap<&str, bool> = BTreeMap::new();
        for l in &a.labels {
            *seen.entry(l.text.as_str()).or_insert(false) |= l.verb;
        }
        for (t, verb) in seen {
            let e = stats.entry(t).or_default();
            e.0 += 1;
            e.1 += usize::from(verb);
        }
    }
    let entries = stats
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(t, (count, verb_count))| LabelStat {
            text: t.to_string(),
            count,
            verb_count,
        })
        .collect();
    Ok(LabelCounts { entries, min_count })
}

/// Labels seen in successfully parsed annotations, with each label's
/// majority role (ties count as verb).
#[derive(Debug, Clone, Default)]
pub struct KnownLabels {
    entries: Vec<(String, Vec<String>, bool)>,
}

impl KnownLabels {
    pub fn from_parsed(annotations: &[ParsedAnnotation]) -> Self {
        let mut roles: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for a in annotations.iter().filter(|a| a.parse_ok) {
            for l in &a.labels {
                let e = roles.entry(l.text.as_str()).or_default();
                if l.verb {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        let entries = roles
            .into_iter()
            .map(|(t, (v, n))| (t.to_string(), text::stem_all(&text::tokenize(t)), v >= n))
            .filter(|(_, toks, _)| !toks.is_empty())
            .collect();
        KnownLabels { entries }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, bool)>,
        S: AsRef<str>,
    {
        let mut entries: Vec<_> = pairs
            .into_iter()
            .map(|(t, v)| {
                let t = text::normalize_phrase(t.as_ref());
                let toks = text::stem_all(&text::tokenize(&t));
                (t, toks, v)
            })
            .filter(|(_, toks, _)| !toks.is_empty())
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries.dedup_by(|a, b| a.0 == b.0);
        KnownLabels { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(text, is_verb)` in text order; feeds [`KnownLabels::from_pairs`].
    pub fn pairs(&self) -> impl Iterator<Item = (&str, bool)> {
        self.entries.iter().map(|(t, _, v)| (t.as_str(), *v))
    }
}

/// Fills annotations the parser failed on by searching each known label
/// as a contiguous run of stemmed tokens in the clip's sentences. Parsed
/// annotations pass through untouched.
pub fn match_unparsed(
    sentences: &[Sentence],
    annotations: &[ParsedAnnotation],
    known: &KnownLabels,
) -> Vec<ParsedAnnotation> {
    let mut stemmed: HashMap<&str, Vec<Vec<String>>> = HashMap::new();
    for s in sentences {
        stemmed
            .entry(s.clip_id.as_str())
            .or_default()
            .push(text::stem_all(&s.tokens));
    }
    annotations
        .iter()
        .map(|a| {
            if a.parse_ok {
                return a.clone();
            }
            let toks = stemmed
                .get(a.clip_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let mut labels = a.labels.clone();
            for (t, phrase, verb) in &known.entries {
                if labels.iter().any(|l| &l.text == t) {
                    continue;
                }
                if toks.iter().any(|s| text::contains_subsequence(s, phrase)) {
                    labels.push(AnnotatedLabel {
                        text: t.clone(),
                        verb: *verb,
                    });
                }
            }
            ParsedAnnotation {
                clip_id: a.clip_id.clone(),
                labels,
                parse_ok: false,
            }
        })
        .collect()
}

/// The phrase followed by each shorter suffix obtained by dropping leading
/// words (`"domestic cat"` → `["domestic cat", "cat"]`).
pub fn base_forms(phrase: &str) -> Vec<String> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    for start in 0..words.len() {
        let s = words[start..].join(" ");
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Assigns groups and channels. A label used both as verb and non-verb
/// yields one entry per role; labels matching no group are dropped.
pub fn assign_groups(
    labels: &LabelCounts,
    lexicon: &GroupLexicon,
    policy: &FeatureAssignment,
) -> LabelVocabulary {
    let mut entries = Vec::new();
    for stat in &labels.entries {
        let mut push = |group: Group| {
            entries.push(GroupedLabel {
                text: stat.text.clone(),
                group,
                count: stat.count,
                channels: policy.channels_for(group).to_vec(),
            })
        };
        if stat.verb_count > 0 {
            push(Group::Verb);
        }
        if stat.count > stat.verb_count {
            let normalized = text::normalize_phrase(&stat.text);
            if lexicon.places.contains(&normalized) {
                push(Group::Place);
            } else if base_forms(&normalized)
                .iter()
                .any(|b| lexicon.objects.contains(b))
            {
                push(Group::Object);
            }
        }
    }
    entries.sort_by(|a, b| (a.group, &a.text).cmp(&(b.group, &b.text)));
    LabelVocabulary {
        entries,
        min_count: labels.min_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(clip: &str, labels: &[(&str, bool)]) -> ParsedAnnotation {
        ParsedAnnotation {
            clip_id: clip.into(),
            labels: labels
                .iter()
                .map(|(t, v)| AnnotatedLabel {
                    text: t.to_string(),
                    verb: *v,
                })
                .collect(),
            parse_ok: true,
        }
    }

    #[test]
    fn min_count_boundary_is_inclusive() {
        let mut anns: Vec<_> = (0..30)
            .map(|i| ann(&format!("c{i}"), &[("door", false)]))
            .collect();
        anns.extend((0..29).map(|i| ann(&format!("d{i}"), &[("car", false)])));
        let v = extract_labels(&anns, 30).unwrap();
        assert_eq!(v.entries.len(), 1);
        assert_eq!(v.entries[0].text, "door");
        assert_eq!(v.entries[0].count, 30);
    }

    #[test]
    fn empty_annotations_give_empty_vocabulary() {
        assert!(extract_labels(&[], 1).unwrap().entries.is_empty());
        assert!(extract_labels(&[], 0).is_err());
    }

    #[test]
    fn counts_match_direct_enumeration() {
        // a appears in 5 annotations, b in 3
        let mut anns = Vec::new();
        for i in 0..5 {
            let mut labels = vec![("a", false)];
            if i < 3 {
                labels.push(("b", true));
            }
            anns.push(ann(&format!("c{i}"), &labels));
        }
        let counted = extract_labels(&anns, 1).unwrap();
        let mut oracle: BTreeMap<String, usize> = BTreeMap::new();
        for a in &anns {
            for l in &a.labels {
                *oracle.entry(l.text.clone()).or_default() += 1;
            }
        }
        for e in &counted.entries {
            assert_eq!(oracle[&e.text], e.count);
        }
        let kept: Vec<_> = extract_labels(&anns, 4)
            .unwrap()
            .entries
            .into_iter()
            .map(|e| e.text)
            .collect();
        assert_eq!(kept, vec!["a"]);
    }

    #[test]
    fn fallback_matches_inflected_phrase() {
        let sentences = vec![Sentence::new("c1", "Someone looks up slowly.")];
        let anns = vec![ParsedAnnotation {
            clip_id: "c1".into(),
            labels: vec![],
            parse_ok: false,
        }];
        let known = KnownLabels::from_pairs([("look up", true), ("door", false)]);
        let out = match_unparsed(&sentences, &anns, &known);
        assert_eq!(
            out[0].labels,
            vec![AnnotatedLabel {
                text: "look up".into(),
                verb: true
            }]
        );
        assert!(!out[0].parse_ok);
    }

    #[test]
    fn fallback_without_shared_phrase_is_empty() {
        let sentences = vec![Sentence::new("c1", "A quiet night.")];
        let anns = vec![ParsedAnnotation {
            clip_id: "c1".into(),
            labels: vec![],
            parse_ok: false,
        }];
        let known = KnownLabels::from_pairs([("look up", true)]);
        assert!(match_unparsed(&sentences, &anns, &known)[0]
            .labels
            .is_empty());
    }

    #[test]
    fn fallback_leaves_parsed_annotations_alone() {
        let sentences = vec![Sentence::new("c1", "Someone looks up at the door.")];
        let anns = vec![ann("c1", &[("look up", true)])];
        let known = KnownLabels::from_pairs([("look up", true), ("door", false)]);
        assert_eq!(match_unparsed(&sentences, &anns, &known), anns);
    }

    #[test]
    fn known_labels_use_majority_role() {
        let anns = vec![
            ann("a", &[("face", true)]),
            ann("b", &[("face", false)]),
            ann("c", &[("face", false)]),
            ann("d", &[("run", true)]),
        ];
        let known = KnownLabels::from_parsed(&anns);
        let face = known.entries.iter().find(|e| e.0 == "face").unwrap();
        assert!(!face.2);
        let run = known.entries.iter().find(|e| e.0 == "run").unwrap();
        assert!(run.2);
    }

    #[test]
    fn base_forms_drop_leading_words() {
        assert_eq!(base_forms("domestic cat"), vec!["domestic cat", "cat"]);
        assert_eq!(base_forms("cat"), vec!["cat"]);
        assert_eq!(
            base_forms("large red car"),
            vec!["large red car", "red car", "car"]
        );
    }

    fn grouped() -> FeatureAssignment {
        FeatureAssignment::Grouped {
            verb: vec!["dt".into()],
            object: vec!["lsda".into()],
            place: vec!["places".into()],
        }
    }

    fn stat(text: &str, count: usize, verb_count: usize) -> LabelStat {
        LabelStat {
            text: text.into(),
            count,
            verb_count,
        }
    }

    #[test]
    fn group_assignment_rules() {
        let lex = GroupLexicon::new(["kitchen"], ["cat", "face"]).unwrap();
        let counts = LabelCounts {
            entries: vec![
                stat("domestic cat", 4, 0),
                stat("face", 6, 2),
                stat("kitchen", 5, 0),
                stat("mood", 9, 0),
                stat("run", 3, 3),
            ],
            min_count: 1,
        };
        let v = assign_groups(&counts, &lex, &grouped());
        let got: Vec<(Group, &str, &[String])> = v
            .entries
            .iter()
            .map(|e| (e.group, e.text.as_str(), e.channels.as_slice()))
            .collect();
        let dt = vec!["dt".to_string()];
        let lsda = vec!["lsda".to_string()];
        let places = vec!["places".to_string()];
        assert_eq!(
            got,
            vec![
                (Group::Verb, "face", dt.as_slice()),
                (Group::Verb, "run", dt.as_slice()),
                (Group::Object, "domestic cat", lsda.as_slice()),
                (Group::Object, "face", lsda.as_slice()),
                (Group::Place, "kitchen", places.as_slice()),
            ]
        );
        // dual-role enumeration: entries exceed distinct texts by the
        // number of labels used in both roles
        let dual = counts
            .entries
            .iter()
            .filter(|s| s.verb_count > 0 && s.count > s.verb_count && s.text == "face")
            .count();
        assert_eq!(v.len(), v.distinct_texts() + dual);
    }

    #[test]
    fn uniform_policy_stacks_channels() {
        let lex = GroupLexicon::new(["kitchen"], ["cat"]).unwrap();
        let counts = LabelCounts {
            entries: vec![stat("cat", 2, 0), stat("run", 2, 2)],
            min_count: 1,
        };
        let all = vec!["dt".to_string(), "lsda".into(), "places".into()];
        let v = assign_groups(
            &counts,
            &lex,
            &FeatureAssignment::Uniform {
                channels: all.clone(),
            },
        );
        assert!(v.entries.iter().all(|e| e.channels == all));
    }

    #[test]
    fn lexicon_rejects_collisions() {
        assert!(GroupLexicon::new(["Bed  Room"], ["bed room"]).is_err());
    }
}
