//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use moviedesc::lstm::network::{batch_loss, batch_loss_and_grad, EncodedExample, SeqMasks};
use moviedesc::lstm::{
    lr_at, Architecture, DropoutSite, LrSchedule, Network, NetworkConfig, Params, Vocabulary,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 9] = [
    "a", "ball", "catches", "dog", "door", "man", "opens", "the", "woman",
];

pub fn toy_vocab() -> Vocabulary {
    let mut words: Vec<String> = ["<bos>", "<eos>", "<unk>"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    words.extend(WORDS.iter().map(|s| s.to_string()));
    Vocabulary::from_words(words).unwrap()
}

pub fn toy_config(arch: Architecture, site: DropoutSite, schedule: LrSchedule) -> NetworkConfig {
    NetworkConfig {
        architecture: arch,
        hidden_dim: 8,
        embed_dim: 6,
        visual_dim: 5,
        dropout_site: site,
        dropout_ratio: 0.5,
        schedule,
        max_iters: 10,
        batch_size: 2,
        clip_norm: None,
        init_scale: 0.3,
        seed: 3,
    }
}

pub fn toy_sequences(vocab: &Vocabulary) -> Vec<EncodedExample> {
    let s1: Vec<String> = "the man opens the door"
        .split(' ')
        .map(String::from)
        .collect();
    let s2: Vec<String> = "a dog catches a ball"
        .split(' ')
        .map(String::from)
        .collect();
    vec![
        EncodedExample {
            visual: vec![0.9, -0.2, 0.4, 0.0, 0.3],
            tokens: vocab.encode(&s1),
        },
        EncodedExample {
            visual: vec![-0.5, 0.7, 0.1, 0.8, -0.3],
            tokens: vocab.encode(&s2),
        },
    ]
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

pub fn numeric_grad(
    params: &Params,
    cfg: &NetworkConfig,
    batch: &[&EncodedExample],
    masks: &[Option<SeqMasks>],
) -> Params {
    let eps = 1e-5;
    let mut out = params.zeros_like();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].1.len();
        for k in 0..len {
            let mut p = params.clone();
            p.tensors_mut()[ti].1[k] += eps;
            let up = batch_loss(&p, cfg, batch, masks);
            p.tensors_mut()[ti].1[k] -= 2.0 * eps;
            let down = batch_loss(&p, cfg, batch, masks);
            out.tensors_mut()[ti].1[k] = (up - down) / (2.0 * eps);
        }
    }
    out
}

/// Both schedule kinds used by the gradient check.
pub fn gradcheck_schedules() -> [LrSchedule; 2] {
    [
        LrSchedule::Step {
            base_lr: 0.5,
            step_size: 2,
        },
        LrSchedule::Poly {
            base_lr: 0.5,
            power: 0.5,
            max_iter: 6,
        },
    ]
}

/// Worst relative gradient error over every tensor, for one configuration.
/// Fixed masks; parameters first take four scheduled SGD steps.
pub fn gradcheck(arch: Architecture, site: DropoutSite, schedule: LrSchedule) -> (String, f64) {
    let vocab = toy_vocab();
    let data = toy_sequences(&vocab);
    let batch: Vec<&EncodedExample> = data.iter().collect();
    let cfg = toy_config(arch, site, schedule);
    let net = Network::new(cfg.clone(), vocab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let masks: Vec<Option<SeqMasks>> = batch
        .iter()
        .map(|e| SeqMasks::sample(&cfg, e.steps(), &mut rng))
        .collect();
    assert_eq!(masks.iter().all(Option::is_some), site != DropoutSite::None);

    let mut params = net.params.clone();
    for iter in 0..4 {
        let (_, g) = batch_loss_and_grad(&params, &cfg, &batch, &masks);
        params.axpy(-lr_at(&cfg.schedule, iter), &g);
    }
    let (_, analytic) = batch_loss_and_grad(&params, &cfg, &batch, &masks);
    let numeric = numeric_grad(&params, &cfg, &batch, &masks);
    let mut worst = (String::new(), 0.0);
    for ((name, a), (_, n)) in analytic.tensors().into_iter().zip(numeric.tensors()) {
        let e = rel_err(a, n);
        if e >= worst.1 {
            worst = (name, e);
        }
    }
    worst
}
