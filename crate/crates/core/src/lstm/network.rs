//! LSTM decoder parameters, forward pass and backpropagation through time.
//!
//! At every step the decoder receives the clip's score vector and the
//! embedding of the previous word, and predicts a distribution over the
//! next word. Gate rows in each layer's weight matrix are ordered
//! input, forget, output, candidate; columns are `[x; h_prev]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, NetworkConfig};
use super::dropout::sample_mask;
use super::tensor::{sigmoid, softmax, Matrix};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::io;

pub const NETWORK_FORMAT: &str = "moviedesc.network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × (input_dim + H)`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmLayer {
            input_dim,
            hidden_dim,
            weights: Matrix::zeros(4 * hidden_dim, input_dim + hidden_dim),
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    fn uniform<R: Rng>(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut R) -> Self {
        LstmLayer {
            weights: Matrix::uniform(4 * hidden_dim, input_dim + hidden_dim, scale, rng),
            ..Self::zeros(input_dim, hidden_dim)
        }
    }
}

/// Activations of one cell step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn cell_forward(layer: &LstmLayer, x: &[f64], h: &[f64], c: &[f64]) -> CellCache {
    let hd = layer.hidden_dim;
    let mut z = Vec::with_capacity(x.len() + h.len());
    z.extend_from_slice(x);
    z.extend_from_slice(h);
    let mut a = vec![0.0; 4 * hd];
    layer.weights.affine(&z, &layer.bias, &mut a);
    let i: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = a[2 * hd..3 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = a[3 * hd..].iter().map(|v| v.tanh()).collect();
    let c_new: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    CellCache {
        z,
        i,
        f,
        o,
        g,
        c_prev: c.to_vec(),
        tanh_c,
        c: c_new,
        h: h_new,
    }
}

/// Accumulates parameter gradients into `grad` and returns
/// `(dx, dh_prev, dc_prev)`.
fn cell_backward(
    layer: &LstmLayer,
    cache: &CellCache,
    dh: &[f64],
    dc_next: &[f64],
    grad: &mut LstmLayer,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = layer.hidden_dim;
    let mut da = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, o, g, tc) = (
            cache.i[k],
            cache.f[k],
            cache.o[k],
            cache.g[k],
            cache.tanh_c[k],
        );
        let d_o = dh[k] * tc;
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        let di = dc * g;
        let dg = dc * i;
        let df = dc * cache.c_prev[k];
        dc_prev[k] = dc * f;
        da[k] = di * i * (1.0 - i);
        da[hd + k] = df * f * (1.0 - f);
        da[2 * hd + k] = d_o * o * (1.0 - o);
        da[3 * hd + k] = dg * (1.0 - g * g);
    }
    grad.weights.outer_acc(&da, &cache.z);
    grad.bias.iter_mut().zip(&da).for_each(|(b, d)| *b += d);
    let mut dz = vec![0.0; layer.input_dim + hd];
    layer.weights.transpose_mul_acc(&da, &mut dz);
    let dh_prev = dz.split_off(layer.input_dim);
    (dz, dh_prev, dc_prev)
}

/// One LSTM cell step: returns `(h', c')`.
pub fn lstm_cell_forward(
    layer: &LstmLayer,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = layer.hidden_dim;
    if x.len() != layer.input_dim || h.len() != hd || c.len() != hd {
        return Err(Error::Shape(format!(
            "cell expects x:{} h:{hd} c:{hd}, got x:{} h:{} c:{}",
            layer.input_dim,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    if layer.weights.rows != 4 * hd
        || layer.weights.cols != layer.input_dim + hd
        || layer.bias.len() != 4 * hd
    {
        return Err(Error::Shape(
            "cell parameters inconsistent with declared dims".into(),
        ));
    }
    let cache = cell_forward(layer, x, h, c);
    Ok((cache.h, cache.c))
}

/// All trainable tensors. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `V × E`
    pub embedding: Matrix,
    pub layers: Vec<LstmLayer>,
    /// `V × H`
    pub out_weights: Matrix,
    pub out_bias: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: &NetworkConfig, vocab_size: usize) -> Self {
        let dims = layer_input_dims(cfg);
        Params {
            embedding: Matrix::zeros(vocab_size, cfg.embed_dim),
            layers: dims
                .iter()
                .map(|&d| LstmLayer::zeros(d, cfg.hidden_dim))
                .collect(),
            out_weights: Matrix::zeros(vocab_size, cfg.hidden_dim),
            out_bias: vec![0.0; vocab_size],
        }
    }

    /// Weights uniform in `[-init_scale, init_scale]`, biases zero.
    pub fn init(cfg: &NetworkConfig, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let s = cfg.init_scale;
        let embedding = Matrix::uniform(vocab_size, cfg.embed_dim, s, rng);
        let layers = layer_input_dims(cfg)
            .into_iter()
            .map(|d| LstmLayer::uniform(d, cfg.hidden_dim, s, rng))
            .collect();
        let out_weights = Matrix::uniform(vocab_size, cfg.hidden_dim, s, rng);
        Params {
            embedding,
            layers,
            out_weights,
            out_bias: vec![0.0; vocab_size],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            embedding: Matrix::zeros(self.embedding.rows, self.embedding.cols),
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer::zeros(l.input_dim, l.hidden_dim))
                .collect(),
            out_weights: Matrix::zeros(self.out_weights.rows, self.out_weights.cols),
            out_bias: vec![0.0; self.out_bias.len()],
        }
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), &self.embedding.data)];
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.weights"), &l.weights.data));
            out.push((format!("layer{k}.bias"), &l.bias));
        }
        out.push(("out.weights".into(), &self.out_weights.data));
        out.push(("out.bias".into(), &self.out_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("embedding".into(), &mut self.embedding.data)];
        for (k, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{k}.weights"), &mut l.weights.data));
            out.push((format!("layer{k}.bias"), &mut l.bias));
        }
        out.push(("out.weights".into(), &mut self.out_weights.data));
        out.push(("out.bias".into(), &mut self.out_bias));
        out
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Input width of each layer for the configured architecture.
pub fn layer_input_dims(cfg: &NetworkConfig) -> Vec<usize> {
    let (d, e, h) = (cfg.visual_dim, cfg.embed_dim, cfg.hidden_dim);
    match cfg.architecture {
        Architecture::OneLayer => vec![d + e],
        Architecture::TwoLayerUnfactored => vec![d + e, h],
        Architecture::TwoLayerFactored => vec![e, h + d],
    }
}

/// Dropout masks for one training sequence, one vector per step for each
/// active site. Empty when the site is inactive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeqMasks {
    pub lang: Vec<Vec<f64>>,
    pub vis: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
}

impl SeqMasks {
    /// Samples masks for `steps` decoding steps; `None` when dropout is off.
    pub fn sample<R: Rng>(cfg: &NetworkConfig, steps: usize, rng: &mut R) -> Option<SeqMasks> {
        let r = cfg.effective_ratio();
        if r <= 0.0 {
            return None;
        }
        let site = cfg.dropout_site;
        let mut m = SeqMasks::default();
        for _ in 0..steps {
            if site.drops_lang() {
                m.lang.extend(sample_mask(cfg.embed_dim, r, rng));
            }
            if site.drops_vis() {
                m.vis.extend(sample_mask(cfg.visual_dim, r, rng));
            }
            if site.drops_output() {
                m.out.extend(sample_mask(cfg.hidden_dim, r, rng));
            }
        }
        Some(m)
    }
}

fn masked(v: &[f64], masks: &[Vec<f64>], t: usize) -> Vec<f64> {
    match masks.get(t) {
        Some(m) => v.iter().zip(m).map(|(x, k)| x * k).collect(),
        None => v.to_vec(),
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

struct StepCache {
    word: usize,
    target: usize,
    cells: Vec<CellCache>,
    top: Vec<f64>,
    probs: Vec<f64>,
}

/// Sum of token cross-entropies of one sequence, with the caches needed
/// for the backward pass.
fn forward_sequence(
    params: &Params,
    cfg: &NetworkConfig,
    visual: &[f64],
    tokens: &[usize],
    masks: Option<&SeqMasks>,
) -> (f64, Vec<StepCache>) {
    let empty = SeqMasks::default();
    let masks = masks.unwrap_or(&empty);
    let hd = cfg.hidden_dim;
    let n_layers = params.layers.len();
    let mut h = vec![vec![0.0; hd]; n_layers];
    let mut c = vec![vec![0.0; hd]; n_layers];
    let mut loss = 0.0;
    let mut steps = Vec::with_capacity(tokens.len().saturating_sub(1));
    for t in 0..tokens.len().saturating_sub(1) {
        let (word, target) = (tokens[t], tokens[t + 1]);
        let e = masked(params.embedding.row(word), &masks.lang, t);
        let v = masked(visual, &masks.vis, t);
        let x1 = match cfg.architecture {
            Architecture::TwoLayerFactored => e,
            _ => concat(&v, &e),
        };
        let mut cells = Vec::with_capacity(n_layers);
        let c0 = cell_forward(&params.layers[0], &x1, &h[0], &c[0]);
        if n_layers == 2 {
            let x2 = match cfg.architecture {
                Architecture::TwoLayerFactored => concat(&c0.h, &v),
                _ => c0.h.clone(),
            };
            let c1 = cell_forward(&params.layers[1], &x2, &h[1], &c[1]);
            cells.push(c0);
            cells.push(c1);
        } else {
            cells.push(c0);
        }
        for (k, cell) in cells.iter().enumerate() {
            h[k].clone_from(&cell.h);
            c[k].clone_from(&cell.c);
        }
        let top = masked(&cells[n_layers - 1].h, &masks.out, t);
        let mut logits = vec![0.0; params.out_bias.len()];
        params
            .out_weights
            .affine(&top, &params.out_bias, &mut logits);
        let probs = softmax(&logits);
        loss -= probs[target].max(f64::MIN_POSITIVE).ln();
        steps.push(StepCache {
            word,
            target,
            cells,
            top,
            probs,
        });
    }
    (loss, steps)
}

/// Backpropagates one sequence's loss (multiplied by `scale`) into `grad`.
fn backward_sequence(
    params: &Params,
    cfg: &NetworkConfig,
    steps: &[StepCache],
    masks: Option<&SeqMasks>,
    scale: f64,
    grad: &mut Params,
) {
    let empty = SeqMasks::default();
    let masks = masks.unwrap_or(&empty);
    let hd = cfg.hidden_dim;
    let n_layers = params.layers.len();
    let mut dh_next = vec![vec![0.0; hd]; n_layers];
    let mut dc_next = vec![vec![0.0; hd]; n_layers];
    for (t, step) in steps.iter().enumerate().rev() {
        let mut dlogits: Vec<f64> = step.probs.iter().map(|p| p * scale).collect();
        dlogits[step.target] -= scale;
        grad.out_weights.outer_acc(&dlogits, &step.top);
        grad.out_bias
            .iter_mut()
            .zip(&dlogits)
            .for_each(|(b, d)| *b += d);
        let mut dtop = vec![0.0; hd];
        params.out_weights.transpose_mul_acc(&dlogits, &mut dtop);
        let mut dh = masked(&dtop, &masks.out, t);

        let mut dx = Vec::new();
        for k in (0..n_layers).rev() {
            dh.iter_mut().zip(&dh_next[k]).for_each(|(a, b)| *a += b);
            let (dxk, dh_prev, dc_prev) = cell_backward(
                &params.layers[k],
                &step.cells[k],
                &dh,
                &dc_next[k],
                &mut grad.layers[k],
            );
            dh_next[k] = dh_prev;
            dc_next[k] = dc_prev;
            if k > 0 {
                // Layer k's input starts with layer k-1's output in both
                // two-layer variants.
                dh = dxk[..hd].to_vec();
            }
            dx = dxk;
        }
        let de = match cfg.architecture {
            Architecture::TwoLayerFactored => dx,
            _ => dx[cfg.visual_dim..].to_vec(),
        };
        let de = masked(&de, &masks.lang, t);
        grad.embedding
            .row_mut(step.word)
            .iter_mut()
            .zip(&de)
            .for_each(|(g, d)| *g += d);
    }
}

/// One training sequence: visual input plus `BOS … EOS` word indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub visual: Vec<f64>,
    pub tokens: Vec<usize>,
}

impl EncodedExample {
    pub fn steps(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }
}

/// Mean per-token cross-entropy over `batch` with the given masks.
pub fn batch_loss(
    params: &Params,
    cfg: &NetworkConfig,
    batch: &[&EncodedExample],
    masks: &[Option<SeqMasks>],
) -> f64 {
    let total: usize = batch.iter().map(|e| e.steps()).sum();
    let sum: f64 = batch
        .iter()
        .zip(masks.iter().chain(std::iter::repeat(&None)))
        .map(|(e, m)| forward_sequence(params, cfg, &e.visual, &e.tokens, m.as_ref()).0)
        .sum();
    sum / total.max(1) as f64
}

/// Mean per-token cross-entropy and its gradient.
pub fn batch_loss_and_grad(
    params: &Params,
    cfg: &NetworkConfig,
    batch: &[&EncodedExample],
    masks: &[Option<SeqMasks>],
) -> (f64, Params) {
    let total: usize = batch.iter().map(|e| e.steps()).sum();
    let scale = 1.0 / total.max(1) as f64;
    let mut grad = params.zeros_like();
    let mut sum = 0.0;
    for (e, m) in batch
        .iter()
        .zip(masks.iter().chain(std::iter::repeat(&None)))
    {
        let (loss, steps) = forward_sequence(params, cfg, &e.visual, &e.tokens, m.as_ref());
        backward_sequence(params, cfg, &steps, m.as_ref(), scale, &mut grad);
        sum += loss;
    }
    (sum * scale, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Recurrent state carried between decoding steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub layers: Vec<LayerState>,
}

/// A trained (or freshly initialized) decoder with its vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub vocab: Vocabulary,
    pub params: Params,
}

impl Network {
    pub fn new(config: NetworkConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, vocab.len(), &mut rng);
        Ok(Network {
            config,
            vocab,
            params,
        })
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerState {
                    h: vec![0.0; l.hidden_dim],
                    c: vec![0.0; l.hidden_dim],
                })
                .collect(),
        }
    }

    /// Inference step: consumes `prev_word`, advances `state` and returns
    /// the next-word distribution.
    pub fn step(
        &self,
        visual: &[f64],
        prev_word: usize,
        state: &mut DecoderState,
    ) -> Result<Vec<f64>> {
        if prev_word >= self.vocab.len() {
            return Err(Error::InvalidInput(format!(
                "word index {prev_word} outside vocabulary of {}",
                self.vocab.len()
            )));
        }
        if visual.len() != self.config.visual_dim {
            return Err(Error::Shape(format!(
                "visual input has {} dims, network expects {}",
                visual.len(),
                self.config.visual_dim
            )));
        }
        let p = &self.params;
        let e = p.embedding.row(prev_word);
        let x1 = match self.config.architecture {
            Architecture::TwoLayerFactored => e.to_vec(),
            _ => concat(visual, e),
        };
        let c0 = cell_forward(&p.layers[0], &x1, &state.layers[0].h, &state.layers[0].c);
        state.layers[0] = LayerState { h: c0.h, c: c0.c };
        if p.layers.len() == 2 {
            let x2 = match self.config.architecture {
                Architecture::TwoLayerFactored => concat(&state.layers[0].h, visual),
                _ => state.layers[0].h.clone(),
            };
            let c1 = cell_forward(&p.layers[1], &x2, &state.layers[1].h, &state.layers[1].c);
            state.layers[1] = LayerState { h: c1.h, c: c1.c };
        }
        let top = &state.layers[p.layers.len() - 1].h;
        let mut logits = vec![0.0; p.out_bias.len()];
        p.out_weights.affine(top, &p.out_bias, &mut logits);
        Ok(softmax(&logits))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_container(path, NETWORK_FORMAT, NETWORK_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::load_container(path, NETWORK_FORMAT, NETWORK_VERSION)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::to_container(NETWORK_FORMAT, NETWORK_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        io::from_container(NETWORK_FORMAT, NETWORK_VERSION, bytes)
    }
}

/// Functional form of [`Network::step`].
pub fn forward_step(
    net: &Network,
    visual: &[f64],
    prev_word: usize,
    state: &DecoderState,
) -> Result<(Vec<f64>, DecoderState)> {
    let mut next = state.clone();
    let dist = net.step(visual, prev_word, &mut next)?;
    Ok((dist, next))
}
