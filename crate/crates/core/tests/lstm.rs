mod common;

use common::*;
use moviedesc::lstm::vocab::{EOS, UNK};
use moviedesc::lstm::{
    ensemble_generate, generate, mean_distribution, train, Architecture, DropoutSite, Ensemble,
    LrSchedule, Network, NetworkConfig, TrainingExample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bptt_gradients_match_finite_differences() {
    assert_eq!(toy_vocab().len(), 12);
    for arch in Architecture::ALL {
        for site in DropoutSite::SITES {
            for schedule in gradcheck_schedules() {
                let (name, e) = gradcheck(arch, site, schedule);
                assert!(
                    e < 1e-4,
                    "{arch:?}/{site}/{schedule:?}: {name} relative error {e:e}"
                );
            }
        }
    }
}

#[test]
fn distributions_sum_to_one() {
    let vocab = toy_vocab();
    for arch in Architecture::ALL {
        let cfg = toy_config(arch, DropoutSite::LstmDrop, step_schedule());
        let net = Network::new(cfg, vocab.clone()).unwrap();
        let mut state = net.initial_state();
        let mut word = 0;
        for _ in 0..4 {
            let d = net
                .step(&[0.1, 0.2, 0.3, 0.4, 0.5], word, &mut state)
                .unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|p| *p >= 0.0));
            word = 3 + word % 5;
        }
    }
}

#[test]
fn factored_first_layer_ignores_visual_input() {
    let vocab = toy_vocab();
    let cfg = toy_config(
        Architecture::TwoLayerFactored,
        DropoutSite::None,
        step_schedule(),
    );
    let net = Network::new(cfg, vocab).unwrap();
    let mut s1 = net.initial_state();
    let mut s2 = net.initial_state();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for word in [0, 5, 9, 3] {
        let v1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        net.step(&v1, word, &mut s1).unwrap();
        net.step(&v2, word, &mut s2).unwrap();
        assert_eq!(s1.layers[0], s2.layers[0]);
        assert_ne!(s1.layers[1], s2.layers[1]);
    }
}

/// 50 pairs: the argmax of a 5-dim visual vector picks one of five
/// sentences.
fn learnable_pairs() -> Vec<TrainingExample> {
    let sentences = [
        "the man opens the door",
        "a dog catches a ball",
        "the woman opens a door",
        "the dog catches the ball",
        "a man catches a ball",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..50)
        .map(|i| {
            let k = i % 5;
            let visual = (0..5)
                .map(|j| if j == k { 1.0 } else { 0.0 } + rng.gen_range(-0.1..0.1))
                .collect();
            TrainingExample {
                visual,
                tokens: sentences[k].split(' ').map(String::from).collect(),
            }
        })
        .collect()
}

fn trainer_config(arch: Architecture, site: DropoutSite, iters: usize, seed: u64) -> NetworkConfig {
    NetworkConfig {
        architecture: arch,
        hidden_dim: 16,
        embed_dim: 8,
        visual_dim: 5,
        dropout_site: site,
        dropout_ratio: 0.2,
        schedule: LrSchedule::Step {
            base_lr: 1.0,
            step_size: 100,
        },
        max_iters: iters,
        batch_size: 10,
        clip_norm: Some(5.0),
        init_scale: 0.1,
        seed,
    }
}

#[test]
fn training_reduces_loss() {
    let data = learnable_pairs();
    for arch in Architecture::ALL {
        let cfg = trainer_config(arch, DropoutSite::LstmDrop, 200, 1);
        let net = Network::new(cfg, toy_vocab()).unwrap();
        let (_, log) = train(net, &data).unwrap();
        assert_eq!(log.entries.len(), 200);
        let mean = |s: &[moviedesc::lstm::train::LogEntry]| {
            s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64
        };
        let first = mean(&log.entries[..20]);
        let last = mean(&log.entries[180..]);
        assert!(last < 0.9 * first, "{arch:?}: loss {first} -> {last}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = learnable_pairs();
    let cfg = trainer_config(
        Architecture::TwoLayerFactored,
        DropoutSite::ConcatDrop,
        30,
        4,
    );
    let (a, la) = train(Network::new(cfg.clone(), toy_vocab()).unwrap(), &data).unwrap();
    let (b, lb) = train(Network::new(cfg, toy_vocab()).unwrap(), &data).unwrap();
    assert_eq!(a, b);
    assert_eq!(la.to_csv(), lb.to_csv());
}

#[test]
fn site_none_equals_zero_ratio() {
    let data = learnable_pairs();
    let none = trainer_config(Architecture::OneLayer, DropoutSite::None, 20, 2);
    let zero = NetworkConfig {
        dropout_site: DropoutSite::LstmDrop,
        dropout_ratio: 0.0,
        ..none.clone()
    };
    let (a, _) = train(Network::new(none, toy_vocab()).unwrap(), &data).unwrap();
    let (b, _) = train(Network::new(zero, toy_vocab()).unwrap(), &data).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn network_round_trip_is_bit_exact() {
    let data = learnable_pairs();
    let cfg = trainer_config(
        Architecture::TwoLayerUnfactored,
        DropoutSite::LangDrop,
        15,
        8,
    );
    let (net, _) = train(Network::new(cfg, toy_vocab()).unwrap(), &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    net.save(&path).unwrap();
    let back = Network::load(&path).unwrap();
    assert_eq!(net, back);
    for ((_, a), (_, b)) in net.params.tensors().into_iter().zip(back.params.tensors()) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(Network::from_bytes(&net.to_bytes().unwrap()).unwrap(), net);
}

#[test]
fn generation_bounds() {
    let vocab = toy_vocab();
    let cfg = toy_config(Architecture::OneLayer, DropoutSite::None, step_schedule());
    let mut net = Network::new(cfg, vocab).unwrap();
    let v = [0.0; 5];

    // EOS dominates: nothing is emitted.
    net.params.out_bias[EOS] = 100.0;
    assert!(generate(&net, &v, 30).unwrap().is_empty());

    // EOS suppressed: decoding stops at max_len, never emitting UNK.
    net.params.out_bias[EOS] = -100.0;
    net.params.out_bias[UNK] = 100.0;
    let out = generate(&net, &v, 3).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|w| w != "<unk>" && w != "<bos>"));
    assert!(generate(&net, &[0.0; 4], 3).is_err());
}

#[test]
fn ensemble_of_copies_matches_single_net() {
    let data = learnable_pairs();
    let cfg = trainer_config(Architecture::OneLayer, DropoutSite::None, 60, 3);
    let (net, _) = train(Network::new(cfg, toy_vocab()).unwrap(), &data).unwrap();
    let ens = Ensemble::new(vec![net.clone(), net.clone(), net.clone()]).unwrap();
    for ex in &data[..5] {
        assert_eq!(
            ensemble_generate(&ens, &ex.visual, 30).unwrap(),
            generate(&net, &ex.visual, 30).unwrap()
        );
    }
    let m = mean_distribution(&[vec![0.6, 0.4], vec![0.1, 0.9]]);
    assert!((m[0] - 0.35).abs() < 1e-15 && (m[1] - 0.65).abs() < 1e-15);
    assert!(Ensemble::new(vec![]).is_err());
}

fn step_schedule() -> LrSchedule {
    LrSchedule::Step {
        base_lr: 0.01,
        step_size: 4000,
    }
}
