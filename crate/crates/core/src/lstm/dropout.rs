use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted-dropout mask: each entry is 0 with probability `r`, otherwise
/// `1/(1−r)`. Returns `None` when `r == 0`, without touching the rng.
pub fn sample_mask<R: Rng>(len: usize, r: f64, rng: &mut R) -> Option<Vec<f64>> {
    if r <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - r);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < r { 0.0 } else { keep })
            .collect(),
    )
}

pub fn apply_mask(v: &[f64], mask: &[f64]) -> Vec<f64> {
    v.iter().zip(mask).map(|(x, m)| x * m).collect()
}

/// Zeroes units with probability `r` in training mode and scales the
/// survivors by `1/(1−r)`; identity at inference.
pub fn apply_dropout<R: Rng>(v: &[f64], r: f64, mode: DropoutMode, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&r), "dropout ratio {r} outside [0,1)");
    match mode {
        DropoutMode::Infer => v.to_vec(),
        DropoutMode::Train => match sample_mask(v.len(), r, rng) {
            Some(mask) => apply_mask(v, &mask),
            None => v.to_vec(),
        },
    }
}
