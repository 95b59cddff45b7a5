//! End-to-end orchestration: configuration, stage artifacts and the
//! in-memory building blocks shared by the CLI and the tests.
//!
//! Every stage writes its artifacts into the output directory and then a
//! manifest `manifests/<stage>.json` holding the stage's config hash and
//! the sha256 of each artifact. A stage checks the manifests of the stages
//! it reads from and refuses to run when one is missing or was produced
//! under a different configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{self, DifficultyCurve, ScoredSentence, TopicLexicon};
use crate::classifiers::{
    self, read_scores, train_group_classifiers, write_scores, ClassifierBank, ScoreVector,
    SvmTrainConfig, TrainingMode,
};
use crate::corpus::{
    self, assign_groups, extract_labels, match_unparsed, CorpusSplit, FeatureAssignment,
    GroupLexicon, KnownLabels, LabelCounts, LabelVocabulary, Sentence,
};
use crate::error::{Error, Result};
use crate::io;
use crate::lstm::{self, Ensemble, Network, NetworkConfig, TrainingExample, Vocabulary};
use crate::metrics::{self, Meteor, MetricConfig};

pub const OUT_DIR_ENV: &str = "MOVIEDESC_OUT_DIR";

const LABELS_FORMAT: &str = "moviedesc.labels";
const MANIFEST_FORMAT: &str = "moviedesc.manifest";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub clips: PathBuf,
    pub sentences: PathBuf,
    pub annotations: PathBuf,
}

impl SplitPaths {
    /// `<dir>/<split>.{clips,sentences,annotations}.tsv`
    pub fn in_dir(dir: &Path, split: &str) -> Self {
        SplitPaths {
            clips: dir.join(format!("{split}.clips.tsv")),
            sentences: dir.join(format!("{split}.sentences.tsv")),
            annotations: dir.join(format!("{split}.annotations.tsv")),
        }
    }

    pub fn load(&self) -> Result<CorpusSplit> {
        corpus::ingest_corpus(&self.clips, &self.sentences, &self.annotations)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.clips, &mut self.sentences, &mut self.annotations] {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train: SplitPaths,
    pub val: SplitPaths,
    pub test: SplitPaths,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub topics: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelsConfig {
    pub min_count: usize,
}

impl Default for LabelsConfig {
    fn default() -> Self {
        LabelsConfig { min_count: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub mode: TrainingMode,
    pub roc_threshold: f64,
    pub assignment: FeatureAssignment,
    pub svm: SvmTrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            mode: TrainingMode::Trained,
            roc_threshold: 0.7,
            assignment: FeatureAssignment::Grouped {
                verb: vec!["dt".into()],
                object: vec!["lsda".into()],
                place: vec!["places".into()],
            },
            svm: SvmTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    /// The first entry is the operating point; `--grid` sweeps all.
    /// `visual_dim` is overwritten with the selected bank's size.
    pub grid: Vec<NetworkConfig>,
    pub ensemble_size: usize,
    pub vocab_min_freq: usize,
    pub max_len: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            grid: vec![NetworkConfig::default()],
            ensemble_size: 3,
            vocab_min_freq: 1,
            max_len: lstm::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub k: usize,
    pub window: usize,
    pub extremes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k: analysis::DEFAULT_KNN_K,
            window: 500,
            extremes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub labels: LabelsConfig,
    #[serde(default)]
    pub classifiers: ClassifierConfig,
    #[serde(default)]
    pub lstm: LstmConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn config_err(field: &str, e: impl fmt::Display) -> Error {
    Error::Config(format!("{field}: {e}"))
}

impl PipelineConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(source: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        let p = &mut cfg.paths;
        p.train.resolve(base);
        p.val.resolve(base);
        p.test.resolve(base);
        p.lexicon = base.join(&p.lexicon);
        p.topics = p.topics.as_ref().map(|t| base.join(t));
        p.out_dir = base.join(&p.out_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&s, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.labels.min_count == 0 {
            return Err(config_err("labels.min_count", "must be at least 1"));
        }
        let t = self.classifiers.roc_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(config_err("classifiers.roc_threshold", "must be in [0,1]"));
        }
        if self.classifiers.assignment.all_channels().is_empty() {
            return Err(config_err("classifiers.assignment", "names no channels"));
        }
        self.classifiers
            .svm
            .validate()
            .map_err(|e| config_err("classifiers.svm", e))?;
        if self.lstm.grid.is_empty() {
            return Err(config_err("lstm.grid", "needs at least one network"));
        }
        for (i, n) in self.lstm.grid.iter().enumerate() {
            n.validate()
                .map_err(|e| config_err(&format!("lstm.grid[{i}]"), e))?;
        }
        if self.lstm.ensemble_size == 0 {
            return Err(config_err("lstm.ensemble_size", "must be at least 1"));
        }
        if self.lstm.max_len == 0 {
            return Err(config_err("lstm.max_len", "must be at least 1"));
        }
        self.metrics
            .validate()
            .map_err(|e| config_err("metrics", e))?;
        if self.analysis.k == 0 || self.analysis.window == 0 || self.analysis.extremes == 0 {
            return Err(config_err(
                "analysis",
                "k, window and extremes must be positive",
            ));
        }
        Ok(())
    }
}

/// Configuration for a corpus written by [`crate::synth::write_corpus`].
///
/// The operating point matches the library defaults except where the
/// corpus size demands otherwise: `min_count` is scaled to the 120-clip
/// training split, and the network is smaller and trained with a larger
/// learning rate for fewer iterations.
pub fn synthetic_config(corpus_dir: &Path, out_dir: &Path) -> PipelineConfig {
    let base = NetworkConfig {
        hidden_dim: 32,
        embed_dim: 32,
        visual_dim: 1,
        schedule: lstm::LrSchedule::Step {
            base_lr: 0.5,
            step_size: 1000,
        },
        max_iters: 2000,
        ..NetworkConfig::default()
    };
    let grid = vec![
        base.clone(),
        NetworkConfig {
            architecture: lstm::Architecture::TwoLayerFactored,
            ..base.clone()
        },
        NetworkConfig {
            dropout_site: lstm::DropoutSite::None,
            ..base.clone()
        },
        NetworkConfig {
            schedule: lstm::LrSchedule::Poly {
                base_lr: 0.5,
                power: 0.5,
                max_iter: 2000,
            },
            ..base
        },
    ];
    PipelineConfig {
        paths: PathsConfig {
            train: SplitPaths::in_dir(corpus_dir, "train"),
            val: SplitPaths::in_dir(corpus_dir, "val"),
            test: SplitPaths::in_dir(corpus_dir, "test"),
            lexicon: corpus_dir.join("lexicon.txt"),
            topics: Some(corpus_dir.join("topics.tsv")),
            out_dir: out_dir.to_path_buf(),
        },
        labels: LabelsConfig { min_count: 10 },
        classifiers: ClassifierConfig::default(),
        lstm: LstmConfig {
            grid,
            ..LstmConfig::default()
        },
        metrics: MetricConfig::default(),
        analysis: AnalysisConfig {
            k: 10,
            window: 5,
            extremes: 10,
        },
    }
}

/// Mined labels plus what later splits need to recover unparsed clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelArtifact {
    pub counts: LabelCounts,
    pub vocabulary: LabelVocabulary,
    pub known: Vec<(String, bool)>,
}

impl LabelArtifact {
    pub fn known_labels(&self) -> KnownLabels {
        KnownLabels::from_pairs(self.known.iter().map(|(t, v)| (t.as_str(), *v)))
    }
}

/// Replaces the split's annotations with fallback-matched ones.
pub fn recover_labels(split: &CorpusSplit, known: &KnownLabels) -> CorpusSplit {
    CorpusSplit {
        annotations: match_unparsed(&split.sentences, &split.annotations, known),
        ..split.clone()
    }
}

/// Label mining on the training split. Returns the artifact and the
/// training split with recovered annotations.
pub fn mine_labels(
    train: &CorpusSplit,
    lexicon: &GroupLexicon,
    min_count: usize,
    assignment: &FeatureAssignment,
) -> Result<(LabelArtifact, CorpusSplit)> {
    let known = KnownLabels::from_parsed(&train.annotations);
    let recovered = recover_labels(train, &known);
    let counts = extract_labels(&recovered.annotations, min_count)?;
    let vocabulary = assign_groups(&counts, lexicon, assignment);
    let known = known.pairs().map(|(t, v)| (t.to_string(), v)).collect();
    Ok((
        LabelArtifact {
            counts,
            vocabulary,
            known,
        },
        recovered,
    ))
}

/// Pairs every sentence of `split` with its clip's score vector.
pub fn lstm_training_data(
    split: &CorpusSplit,
    scores: &[ScoreVector],
) -> Result<Vec<TrainingExample>> {
    let by_clip: BTreeMap<&str, &ScoreVector> =
        scores.iter().map(|s| (s.clip_id.as_str(), s)).collect();
    split
        .sentences
        .iter()
        .map(|s| {
            let v = by_clip
                .get(s.clip_id.as_str())
                .ok_or_else(|| Error::DanglingClip {
                    kind: "sentence without score vector",
                    clip_id: s.clip_id.clone(),
                })?;
            Ok(TrainingExample {
                visual: v.scores.clone(),
                tokens: s.tokens.clone(),
            })
        })
        .collect()
}

pub fn build_vocabulary(split: &CorpusSplit, min_freq: usize) -> Vocabulary {
    Vocabulary::build(
        split.sentences.iter().map(|s| s.tokens.as_slice()),
        min_freq,
    )
}

/// One generated sentence per score vector, in input order.
pub fn generate_sentences(
    ensemble: &Ensemble,
    scores: &[ScoreVector],
    max_len: usize,
) -> Result<Vec<Sentence>> {
    scores
        .par_iter()
        .map(|s| {
            let words = lstm::ensemble_generate(ensemble, &s.scores, max_len)?;
            Ok(Sentence::new(&s.clip_id, words.join(" ")))
        })
        .collect()
}

/// Mean sentence-level METEOR-lite of `generated` against the split's
/// references.
pub fn mean_meteor(
    generated: &[Sentence],
    references: &[Sentence],
    cfg: &MetricConfig,
) -> Result<f64> {
    let mut refs: BTreeMap<&str, Vec<&[String]>> = BTreeMap::new();
    for r in references {
        refs.entry(r.clip_id.as_str()).or_default().push(&r.tokens);
    }
    let m = Meteor::new(&cfg.meteor);
    let mut total = 0.0;
    for g in generated {
        let rs = refs
            .get(g.clip_id.as_str())
            .ok_or_else(|| Error::DanglingClip {
                kind: "generated sentence",
                clip_id: g.clip_id.clone(),
            })?;
        total += rs.iter().map(|r| m.score(&g.tokens, r)).fold(0.0, f64::max);
    }
    Ok(total / generated.len().max(1) as f64)
}

/// Trains a single network per grid entry and scores it on the
/// validation split. Returns `(config, val METEOR-lite)` rows.
pub fn grid_search(
    grid: &[NetworkConfig],
    vocab: &Vocabulary,
    train: &[TrainingExample],
    val_scores: &[ScoreVector],
    val_refs: &[Sentence],
    max_len: usize,
    metrics: &MetricConfig,
) -> Result<Vec<(NetworkConfig, f64)>> {
    grid.par_iter()
        .map(|cfg| {
            let (net, _) = lstm::train(Network::new(cfg.clone(), vocab.clone())?, train)?;
            let ens = Ensemble::new(vec![net])?;
            let generated = generate_sentences(&ens, val_scores, max_len)?;
            Ok((cfg.clone(), mean_meteor(&generated, val_refs, metrics)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    ExtractLabels,
    TrainClassifiers,
    Select,
    Score,
    TrainLstm,
    Generate,
    Evaluate,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::ExtractLabels,
        Stage::TrainClassifiers,
        Stage::Select,
        Stage::Score,
        Stage::TrainLstm,
        Stage::Generate,
        Stage::Evaluate,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::ExtractLabels => "extract-labels",
            Stage::TrainClassifiers => "train-classifiers",
            Stage::Select => "select",
            Stage::Score => "score",
            Stage::TrainLstm => "train-lstm",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self)?;
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// Artifact file name → sha256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn split_digest(p: &SplitPaths) -> Result<serde_json::Value> {
    Ok(json!([
        file_digest(&p.clips)?,
        file_digest(&p.sentences)?,
        file_digest(&p.annotations)?
    ]))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageOptions {
    /// Sweep every `lstm.grid` entry and keep the best on validation.
    pub grid: bool,
}

/// The file-based pipeline rooted at the configured output directory.
pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.paths.out_dir
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out_dir()
            .join("manifests")
            .join(format!("{}.json", stage.name()))
    }

    /// Hash of everything that influences `stage`'s outputs: its own
    /// config section, the content of the inputs it reads, and the hash
    /// of the stage before it. The output directory is excluded.
    pub fn config_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let own = match stage {
            Stage::ExtractLabels => json!({
                "train": split_digest(&c.paths.train)?,
                "lexicon": file_digest(&c.paths.lexicon)?,
                "labels": c.labels,
                "assignment": c.classifiers.assignment,
            }),
            Stage::TrainClassifiers => {
                json!({ "mode": c.classifiers.mode, "svm": c.classifiers.svm })
            }
            Stage::Select => json!({
                "val": split_digest(&c.paths.val)?,
                "roc_threshold": c.classifiers.roc_threshold,
            }),
            Stage::Score => json!({ "test": split_digest(&c.paths.test)? }),
            Stage::TrainLstm => json!({
                "grid": c.lstm.grid,
                "ensemble_size": c.lstm.ensemble_size,
                "vocab_min_freq": c.lstm.vocab_min_freq,
            }),
            Stage::Generate => json!({ "max_len": c.lstm.max_len }),
            Stage::Evaluate => json!({ "metrics": c.metrics }),
            Stage::Analyze => json!({
                "analysis": c.analysis,
                "topics": c.paths.topics.as_deref().map(file_digest).transpose()?,
            }),
        };
        let upstream = match stage.upstream() {
            Some(u) => self.config_hash(u)?,
            None => String::new(),
        };
        let blob = serde_json::to_vec(
            &json!({ "stage": stage.name(), "own": own, "upstream": upstream }),
        )?;
        Ok(sha256_hex(&blob))
    }

    /// Checks that `stage` completed under the current configuration and
    /// that its artifacts are intact.
    pub fn require(&self, stage: Stage) -> Result<()> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.name(),
                path,
            });
        }
        let m: Manifest = io::load_container(&path, MANIFEST_FORMAT, FORMAT_VERSION)?;
        let expected = self.config_hash(stage)?;
        if m.config_hash != expected {
            let stale = self.earliest_stale(stage)?;
            return Err(Error::Config(format!(
                "artifacts of `{stage}` in {} were produced under config hash {}, current config hashes to {expected}; rerun from `{stale}`",
                self.out_dir().display(),
                m.config_hash
            )));
        }
        for (file, digest) in &m.outputs {
            let p = self.out_dir().join(file);
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    stage: stage.name(),
                    path: p,
                });
            }
            if &file_digest(&p)? != digest {
                return Err(Error::Config(format!(
                    "{} changed since `{stage}` wrote it; rerun `{stage}`",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// First stage along the upstream chain of `stage` whose manifest is
    /// missing or disagrees with the current configuration.
    fn earliest_stale(&self, stage: Stage) -> Result<Stage> {
        let mut chain = vec![stage];
        while let Some(up) = chain.last().and_then(|s| s.upstream()) {
            chain.push(up);
        }
        for &s in chain.iter().rev() {
            let path = self.manifest_path(s);
            if !path.exists() {
                return Ok(s);
            }
            let m: Manifest = io::load_container(&path, MANIFEST_FORMAT, FORMAT_VERSION)?;
            if m.config_hash != self.config_hash(s)? {
                return Ok(s);
            }
        }
        Ok(stage)
    }

    fn write(
        &self,
        outputs: &mut BTreeMap<String, String>,
        name: &str,
        bytes: &[u8],
    ) -> Result<PathBuf> {
        let path = self.out_dir().join(name);
        io::write_atomic(&path, bytes)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn record(&self, outputs: &mut BTreeMap<String, String>, name: &str) -> Result<()> {
        let digest = file_digest(&self.out_dir().join(name))?;
        outputs.insert(name.to_string(), digest);
        Ok(())
    }

    fn finish(&self, stage: Stage, outputs: BTreeMap<String, String>) -> Result<()> {
        let m = Manifest {
            stage: stage.name().to_string(),
            config_hash: self.config_hash(stage)?,
            outputs,
        };
        io::save_container(
            &self.manifest_path(stage),
            MANIFEST_FORMAT,
            FORMAT_VERSION,
            &m,
        )
    }

    fn labels(&self) -> Result<LabelArtifact> {
        io::load_container(
            &self.out_dir().join("labels.json"),
            LABELS_FORMAT,
            FORMAT_VERSION,
        )
    }

    fn scores(&self, split: &str) -> Result<Vec<ScoreVector>> {
        read_scores(&self.out_dir().join(format!("scores.{split}.tsv")))
    }

    pub fn run_stage(&self, stage: Stage, opts: StageOptions) -> Result<()> {
        if let Some(u) = stage.upstream() {
            self.require(u)?;
        }
        let c = &self.config;
        let mut out = BTreeMap::new();
        match stage {
            Stage::ExtractLabels => {
                let train = c.paths.train.load()?;
                let lexicon = GroupLexicon::load(&c.paths.lexicon)?;
                let (art, _) = mine_labels(
                    &train,
                    &lexicon,
                    c.labels.min_count,
                    &c.classifiers.assignment,
                )?;
                let bytes = io::to_container(LABELS_FORMAT, FORMAT_VERSION, &art)?;
                self.write(&mut out, "labels.json", &bytes)?;
                let mut tsv = String::from("label\tgroup\tcount\tchannels\n");
                for e in &art.vocabulary.entries {
                    tsv.push_str(&format!(
                        "{}\t{}\t{}\t{}\n",
                        e.text,
                        e.group,
                        e.count,
                        e.channels.join(",")
                    ));
                }
                self.write(&mut out, "labels.tsv", tsv.as_bytes())?;
            }
            Stage::TrainClassifiers => {
                let art = self.labels()?;
                let train = recover_labels(&c.paths.train.load()?, &art.known_labels());
                let bank = train_group_classifiers(
                    &train,
                    &art.vocabulary,
                    &c.classifiers.svm,
                    c.classifiers.mode,
                )?;
                self.write(&mut out, "bank.json", &bank.to_bytes()?)?;
            }
            Stage::Select => {
                let art = self.labels()?;
                let val = recover_labels(&c.paths.val.load()?, &art.known_labels());
                let bank = ClassifierBank::load(&self.out_dir().join("bank.json"))?;
                let scored = bank.with_auc_on(&val)?;
                let selected = scored.retain_by_auc(c.classifiers.roc_threshold)?;
                if selected.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "no classifier reaches roc_threshold {}",
                        c.classifiers.roc_threshold
                    )));
                }
                let mut csv = String::from("label,group,val_auc,kept\n");
                for cl in &scored.classifiers {
                    let auc = cl.roc_auc.unwrap_or(0.5);
                    csv.push_str(&format!(
                        "{},{},{auc:.6},{}\n",
                        cl.label.text,
                        cl.label.group,
                        u8::from(auc >= c.classifiers.roc_threshold)
                    ));
                }
                self.write(&mut out, "selection.csv", csv.as_bytes())?;
                self.write(&mut out, "bank.selected.json", &selected.to_bytes()?)?;
            }
            Stage::Score => {
                let bank = ClassifierBank::load(&self.out_dir().join("bank.selected.json"))?;
                for (name, paths) in [
                    ("train", &c.paths.train),
                    ("val", &c.paths.val),
                    ("test", &c.paths.test),
                ] {
                    let split = paths.load()?;
                    let file = format!("scores.{name}.tsv");
                    write_scores(
                        &self.out_dir().join(&file),
                        &classifiers::score_split(&bank, &split)?,
                    )?;
                    self.record(&mut out, &file)?;
                }
            }
            Stage::TrainLstm => self.train_lstm(opts, &mut out)?,
            Stage::Generate => {
                let ensemble = Ensemble::load(&self.out_dir().join("ensemble.json"))?;
                let generated =
                    generate_sentences(&ensemble, &self.scores("test")?, c.lstm.max_len)?;
                corpus::write_sentences(&self.out_dir().join("generated.tsv"), &generated)?;
                self.record(&mut out, "generated.tsv")?;
            }
            Stage::Evaluate => {
                let generated = corpus::read_sentences(&self.out_dir().join("generated.tsv"))?;
                let test = c.paths.test.load()?;
                let report = metrics::evaluate_corpus(&generated, &test.sentences, &c.metrics)?;
                self.write(&mut out, "report.csv", report.to_csv().as_bytes())?;
                self.write(&mut out, "summary.txt", report.summary().as_bytes())?;
                self.write(
                    &mut out,
                    "report.json",
                    &serde_json::to_vec_pretty(&report)?,
                )?;
            }
            Stage::Analyze => self.analyze(&mut out)?,
        }
        self.finish(stage, out)
    }

    fn train_lstm(&self, opts: StageOptions, out: &mut BTreeMap<String, String>) -> Result<()> {
        let c = &self.config;
        let train = c.paths.train.load()?;
        let train_scores = self.scores("train")?;
        let dim = train_scores.first().map_or(0, |s| s.scores.len());
        let data = lstm_training_data(&train, &train_scores)?;
        let vocab = build_vocabulary(&train, c.lstm.vocab_min_freq);
        let grid: Vec<NetworkConfig> = c
            .lstm
            .grid
            .iter()
            .map(|n| NetworkConfig {
                visual_dim: dim,
                ..n.clone()
            })
            .collect();
        let chosen = if opts.grid {
            let val = c.paths.val.load()?;
            let rows = grid_search(
                &grid,
                &vocab,
                &data,
                &self.scores("val")?,
                &val.sentences,
                c.lstm.max_len,
                &c.metrics,
            )?;
            let mut csv = String::from("index,config,val_meteor\n");
            for (i, (n, m)) in rows.iter().enumerate() {
                csv.push_str(&format!("{i},{},{m:.6}\n", n.describe()));
            }
            self.write(out, "grid_summary.csv", csv.as_bytes())?;
            let best = rows
                .iter()
                .enumerate()
                .fold(0, |b, (i, r)| if r.1 > rows[b].1 { i } else { b });
            grid[best].clone()
        } else {
            grid[0].clone()
        };
        let members = lstm::train_ensemble(&chosen, &vocab, &data, c.lstm.ensemble_size)?;
        let mut nets = Vec::with_capacity(members.len());
        for (k, (net, log)) in members.into_iter().enumerate() {
            self.write(out, &format!("train_log.{k}.csv"), log.to_csv().as_bytes())?;
            nets.push(net);
        }
        let ensemble = Ensemble::new(nets)?;
        ensemble.save(&self.out_dir().join("ensemble.json"))?;
        self.record(out, "ensemble.json")
    }

    fn analyze(&self, out: &mut BTreeMap<String, String>) -> Result<()> {
        let c = &self.config;
        let a = &c.analysis;
        let art = self.labels()?;
        let train = c.paths.train.load()?;
        let test = recover_labels(&c.paths.test.load()?, &art.known_labels());
        let report: metrics::EvalReport = serde_json::from_slice(
            &std::fs::read(self.out_dir().join("report.json"))
                .map_err(|e| Error::io(self.out_dir().join("report.json"), e))?,
        )?;
        let score_of: BTreeMap<&str, f64> = report
            .sentences
            .iter()
            .map(|s| (s.clip_id.as_str(), s.meteor))
            .collect();

        // One record per test reference.
        let refs: Vec<&Sentence> = test
            .sentences
            .iter()
            .filter(|s| score_of.contains_key(s.clip_id.as_str()))
            .collect();
        let ids: Vec<String> = refs.iter().map(|s| s.clip_id.clone()).collect();
        let tokens: Vec<Vec<String>> = refs.iter().map(|s| s.tokens.clone()).collect();
        let scores: Vec<f64> = refs.iter().map(|s| score_of[s.clip_id.as_str()]).collect();

        let lengths: Vec<f64> = tokens.iter().map(|t| t.len() as f64).collect();
        let curve = DifficultyCurve::new(
            "length",
            &analysis::sort_by_length(&tokens),
            &ids,
            &lengths,
            &scores,
            a.window,
        )?;
        self.write(out, "curve_length.csv", curve.to_csv().as_bytes())?;

        let counts = analysis::word_counts(train.sentences.iter().map(|s| s.tokens.as_slice()));
        let freqs: Vec<f64> = tokens
            .iter()
            .map(|t| analysis::mean_word_frequency(t, &counts))
            .collect();
        let order = analysis::sort_by_word_frequency(&tokens, &counts);
        let curve =
            DifficultyCurve::new("word_frequency", &order, &ids, &freqs, &scores, a.window)?;
        self.write(out, "curve_frequency.csv", curve.to_csv().as_bytes())?;

        let train_tokens: Vec<Vec<String>> =
            train.sentences.iter().map(|s| s.tokens.clone()).collect();
        let textual = analysis::textual_nn_all(&tokens, &train_tokens, &c.metrics.meteor)?;
        let train_scores = self.scores("train")?;
        let test_scores: BTreeMap<String, Vec<f64>> = self
            .scores("test")?
            .into_iter()
            .map(|s| (s.clip_id, s.scores))
            .collect();
        let train_index: BTreeMap<&str, usize> = train_scores
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clip_id.as_str(), i))
            .collect();
        // kNN candidates: one (vector, sentence) pair per training sentence.
        let mut knn_vecs = Vec::new();
        let mut knn_sents = Vec::new();
        for s in &train.sentences {
            if let Some(&i) = train_index.get(s.clip_id.as_str()) {
                knn_vecs.push(train_scores[i].scores.clone());
                knn_sents.push(s.tokens.clone());
            }
        }
        let k = a.k.min(knn_vecs.len());
        let mut csv = String::from("clip_id,generated_meteor,textual_nn,visual_knn\n");
        for (i, r) in refs.iter().enumerate() {
            let q = test_scores
                .get(&r.clip_id)
                .ok_or_else(|| Error::DanglingClip {
                    kind: "test reference without score vector",
                    clip_id: r.clip_id.clone(),
                })?;
            let (knn, _) =
                analysis::visual_knn(q, &knn_vecs, &knn_sents, k, &tokens[i], &c.metrics.meteor)?;
            csv.push_str(&format!(
                "{},{:.6},{:.6},{knn:.6}\n",
                r.clip_id, scores[i], textual[i].0
            ));
        }
        self.write(out, "retrieval.csv", csv.as_bytes())?;

        let verbs_of: BTreeMap<&str, Vec<String>> = test
            .annotations
            .iter()
            .map(|an| {
                let v = an
                    .labels
                    .iter()
                    .filter(|l| l.verb)
                    .map(|l| l.text.clone())
                    .collect();
                (an.clip_id.as_str(), v)
            })
            .collect();
        let records: Vec<ScoredSentence> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| ScoredSentence {
                clip_id: r.clip_id.clone(),
                tokens: tokens[i].clone(),
                verbs: verbs_of
                    .get(r.clip_id.as_str())
                    .cloned()
                    .unwrap_or_default(),
                score: scores[i],
            })
            .collect();
        let lexicon = match &c.paths.topics {
            Some(p) => TopicLexicon::load(p)?,
            None => TopicLexicon::default(),
        };
        self.write(
            out,
            "topics.csv",
            analysis::topic_report(&records, &lexicon)
                .to_csv()
                .as_bytes(),
        )?;
        let n = a.extremes.min(records.len());
        if n > 0 {
            let ext = analysis::extremes_report(&records, n)?;
            self.write(out, "extremes.csv", ext.to_csv().as_bytes())?;
        }
        Ok(())
    }

    /// Runs every stage in order.
    pub fn run_all(&self, opts: StageOptions) -> Result<()> {
        for s in Stage::ALL {
            self.run_stage(s, opts)?;
        }
        Ok(())
    }
}
