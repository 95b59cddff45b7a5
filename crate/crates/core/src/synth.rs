//! Synthetic corpora with planted, separable visual evidence.
//!
//! Each clip shows one verb, one object and one place. Every group has its
//! own feature channel in which the active label shifts one coordinate;
//! the remaining coordinates are pure noise. Sentences follow the template
//! `someone <verb>s the <object> in the <place>`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{
    self, AnnotatedLabel, ChannelSpec, Clip, CorpusSplit, FeatureAssignment, GroupLexicon,
    ParsedAnnotation, Sentence,
};
use crate::error::Result;

pub const VERBS: [&str; 4] = ["hold", "kick", "lift", "open"];
pub const OBJECTS: [&str; 4] = ["ball", "box", "chair", "door"];
pub const PLACES: [&str; 4] = ["garden", "hallway", "kitchen", "office"];
/// Object labels the annotations carry at random; nothing visual backs
/// them.
pub const NOISE_OBJECTS: [&str; 2] = ["cup", "lamp"];
/// A frequent label that no group accepts.
pub const DISTRACTOR: &str = "someone";

pub const VERB_CHANNEL: &str = "dt";
pub const OBJECT_CHANNEL: &str = "lsda";
pub const PLACE_CHANNEL: &str = "places";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Mean shift of the active label's coordinate, in noise std units.
    pub signal: f64,
    /// Pure-noise coordinates appended to each channel.
    pub noise_dims: usize,
    pub parse_failure_rate: f64,
    pub noise_label_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2015,
            n_train: 120,
            n_val: 30,
            n_test: 50,
            signal: 4.0,
            noise_dims: 4,
            parse_failure_rate: 0.15,
            noise_label_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: CorpusSplit,
    pub val: CorpusSplit,
    pub test: CorpusSplit,
    pub lexicon: GroupLexicon,
}

pub fn sentence_for(verb: &str, object: &str, place: &str) -> String {
    format!("Someone {verb}s the {object} in the {place}.")
}

/// The grouped assignment matching the generator's channels.
pub fn grouped_assignment() -> FeatureAssignment {
    FeatureAssignment::Grouped {
        verb: vec![VERB_CHANNEL.into()],
        object: vec![OBJECT_CHANNEL.into()],
        place: vec![PLACE_CHANNEL.into()],
    }
}

/// All channels stacked for every group.
pub fn uniform_assignment() -> FeatureAssignment {
    FeatureAssignment::Uniform {
        channels: vec![
            VERB_CHANNEL.into(),
            OBJECT_CHANNEL.into(),
            PLACE_CHANNEL.into(),
        ],
    }
}

pub fn lexicon() -> GroupLexicon {
    GroupLexicon::new(PLACES, OBJECTS.iter().chain(&NOISE_OBJECTS))
        .expect("disjoint synthetic lexicon")
}

fn channel(rng: &mut ChaCha8Rng, active: usize, cfg: &SynthConfig) -> Vec<f64> {
    (0..4 + cfg.noise_dims)
        .map(|d| {
            let z: f64 = StandardNormal.sample(rng);
            if d == active {
                z + cfg.signal
            } else {
                z
            }
        })
        .collect()
}

fn make_split(prefix: &str, n: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> CorpusSplit {
    let dim = 4 + cfg.noise_dims;
    let channels = [VERB_CHANNEL, OBJECT_CHANNEL, PLACE_CHANNEL]
        .iter()
        .map(|c| ChannelSpec {
            name: c.to_string(),
            dim,
        })
        .collect();
    let mut clips = Vec::with_capacity(n);
    let mut sentences = Vec::with_capacity(n);
    let mut annotations = Vec::with_capacity(n);
    for i in 0..n {
        let clip_id = format!("{prefix}{i:04}");
        let (v, o, p) = (
            rng.gen_range(0..4),
            rng.gen_range(0..4),
            rng.gen_range(0..4),
        );
        let mut features = BTreeMap::new();
        features.insert(VERB_CHANNEL.to_string(), channel(rng, v, cfg));
        features.insert(OBJECT_CHANNEL.to_string(), channel(rng, o, cfg));
        features.insert(PLACE_CHANNEL.to_string(), channel(rng, p, cfg));
        clips.push(Clip {
            clip_id: clip_id.clone(),
            features,
        });
        sentences.push(Sentence::new(
            &clip_id,
            sentence_for(VERBS[v], OBJECTS[o], PLACES[p]),
        ));

        let parse_ok = !rng.gen_bool(cfg.parse_failure_rate);
        let mut labels = Vec::new();
        // Drawn unconditionally so the random stream does not depend on
        // parse success.
        let noise: Vec<bool> = NOISE_OBJECTS
            .iter()
            .map(|_| rng.gen_bool(cfg.noise_label_rate))
            .collect();
        if parse_ok {
            let label = |t: &str, verb| AnnotatedLabel {
                text: t.to_string(),
                verb,
            };
            labels.push(label(DISTRACTOR, false));
            labels.push(label(VERBS[v], true));
            labels.push(label(OBJECTS[o], false));
            labels.push(label(PLACES[p], false));
            for (k, on) in noise.iter().enumerate() {
                if *on {
                    labels.push(label(NOISE_OBJECTS[k], false));
                }
            }
        }
        annotations.push(ParsedAnnotation {
            clip_id,
            labels,
            parse_ok,
        });
    }
    CorpusSplit {
        channels,
        clips,
        sentences,
        annotations,
    }
}

/// Generates train, validation and test splits from one seed.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = make_split("train", cfg.n_train, cfg, &mut rng);
    let val = make_split("val", cfg.n_val, cfg, &mut rng);
    let test = make_split("test", cfg.n_test, cfg, &mut rng);
    SynthCorpus {
        train,
        val,
        test,
        lexicon: lexicon(),
    }
}

/// File names written by [`write_corpus`] for one split.
pub fn split_files(dir: &Path, split: &str) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("{split}.clips.tsv")),
        dir.join(format!("{split}.sentences.tsv")),
        dir.join(format!("{split}.annotations.tsv")),
    ]
}

pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    for (name, split) in [
        ("train", &corpus.train),
        ("val", &corpus.val),
        ("test", &corpus.test),
    ] {
        let [clips, sentences, annotations] = split_files(dir, name);
        corpus::write_clips(&clips, &split.channels, &split.clips)?;
        corpus::write_sentences(&sentences, &split.sentences)?;
        corpus::write_annotations(&annotations, &split.annotations)?;
    }
    crate::io::write_atomic(
        &dir.join("lexicon.txt"),
        corpus.lexicon.to_file_string().as_bytes(),
    )?;
    crate::io::write_atomic(&dir.join("topics.tsv"), TOPICS_TSV.as_bytes())
}

/// The bundled miniature verb-topic lexicon.
pub const TOPICS_TSV: &str = include_str!("../data/topics.tsv");
