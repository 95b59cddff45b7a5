use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::{batch_loss_and_grad, EncodedExample, Network, SeqMasks};
use super::schedule::lr_at;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::io;

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;
const DROPOUT_STREAM: u64 = 0x4452_4f50_4f55_5431;

/// A visual input paired with its reference sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub visual: Vec<f64>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,lr,loss\n");
        for e in &self.entries {
            s.push_str(&format!("{},{:?},{:?}\n", e.iter, e.lr, e.loss));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_csv().as_bytes())
    }
}

pub fn encode_examples(
    vocab: &Vocabulary,
    visual_dim: usize,
    data: &[TrainingExample],
) -> Result<Vec<EncodedExample>> {
    data.iter()
        .map(|ex| {
            if ex.visual.len() != visual_dim {
                return Err(Error::Shape(format!(
                    "training visual input has {} dims, network expects {visual_dim}",
                    ex.visual.len()
                )));
            }
            Ok(EncodedExample {
                visual: ex.visual.clone(),
                tokens: vocab.encode(&ex.tokens),
            })
        })
        .collect()
}

/// Minibatch SGD with backpropagation through time.
///
/// The example order is reshuffled every epoch from a stream seeded by the
/// config; dropout masks come from a second, independent stream.
pub fn train(mut net: Network, data: &[TrainingExample]) -> Result<(Network, TrainingLog)> {
    let cfg = net.config.clone();
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let examples = encode_examples(&net.vocab, cfg.visual_dim, data)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;
    let mut log = TrainingLog::default();

    for iter in 0..cfg.max_iters {
        let lr = lr_at(&cfg.schedule, iter);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let masks: Vec<Option<SeqMasks>> = batch
            .iter()
            .map(|e| SeqMasks::sample(&cfg, e.steps(), &mut drop_rng))
            .collect();
        let (loss, mut grad) = batch_loss_and_grad(&net.params, &cfg, &batch, &masks);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at iteration {iter}"
            )));
        }
        if let Some(limit) = cfg.clip_norm {
            let norm = grad.norm();
            if norm > limit {
                grad.scale(limit / norm);
            }
        }
        net.params.axpy(-lr, &grad);
        log.entries.push(LogEntry { iter, lr, loss });
    }
    if !net.params.all_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok((net, log))
}

/// Trains `members` networks with seeds `cfg.seed, cfg.seed + 1, …` in
/// parallel; results come back in seed order.
pub fn train_ensemble(
    cfg: &NetworkConfig,
    vocab: &Vocabulary,
    data: &[TrainingExample],
    members: usize,
) -> Result<Vec<(Network, TrainingLog)>> {
    (0..members as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = NetworkConfig {
                seed: cfg.seed.wrapping_add(k),
                ..cfg.clone()
            };
            train(Network::new(cfg, vocab.clone())?, data)
        })
        .collect()
}
