use serde::{Deserialize, Serialize};
use std::path::Path;

use super::network::Network;
use super::vocab::{BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_MAX_LEN: usize = 30;

pub const ENSEMBLE_FORMAT: &str = "moviedesc.ensemble";
pub const ENSEMBLE_VERSION: u32 = 1;

/// Most probable word other than BOS and UNK; lowest index wins ties.
pub fn pick_word(dist: &[f64]) -> usize {
    let mut best = EOS;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in dist.iter().enumerate() {
        if i == BOS || i == UNK {
            continue;
        }
        if p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

fn greedy(max_len: usize, mut next: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut prev = BOS;
    while out.len() < max_len {
        let w = pick_word(&next(prev)?);
        if w == EOS {
            break;
        }
        out.push(w);
        prev = w;
    }
    Ok(out)
}

/// Greedy decoding from BOS until EOS or `max_len` words.
pub fn generate(net: &Network, visual: &[f64], max_len: usize) -> Result<Vec<String>> {
    let mut state = net.initial_state();
    let idx = greedy(max_len, |w| net.step(visual, w, &mut state))?;
    Ok(net.vocab.decode(&idx))
}

/// Element-wise arithmetic mean of equally sized distributions.
pub fn mean_distribution(dists: &[Vec<f64>]) -> Vec<f64> {
    let n = dists.len().max(1) as f64;
    let mut out = vec![0.0; dists.first().map_or(0, Vec::len)];
    for d in dists {
        out.iter_mut().zip(d).for_each(|(o, p)| *o += p);
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Networks decoded jointly by averaging their word distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<Network>,
}

impl Ensemble {
    pub fn new(members: Vec<Network>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble needs at least one member".into()))?;
        for m in &members[1..] {
            if m.vocab != first.vocab {
                return Err(Error::InvalidInput(
                    "ensemble members have different vocabularies".into(),
                ));
            }
            if m.config.visual_dim != first.config.visual_dim {
                return Err(Error::InvalidInput(
                    "ensemble members have different visual dims".into(),
                ));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[Network] {
        &self.members
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_container(path, ENSEMBLE_FORMAT, ENSEMBLE_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let e: Ensemble = io::load_container(path, ENSEMBLE_FORMAT, ENSEMBLE_VERSION)?;
        Ensemble::new(e.members)
    }
}

/// Greedy decoding over the mean of the members' distributions; every
/// member is fed the same chosen word.
pub fn ensemble_generate(e: &Ensemble, visual: &[f64], max_len: usize) -> Result<Vec<String>> {
    let mut states: Vec<_> = e.members.iter().map(Network::initial_state).collect();
    let idx = greedy(max_len, |w| {
        let dists = e
            .members
            .iter()
            .zip(states.iter_mut())
            .map(|(m, s)| m.step(visual, w, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_distribution(&dists))
    })?;
    Ok(e.members[0].vocab.decode(&idx))
}
