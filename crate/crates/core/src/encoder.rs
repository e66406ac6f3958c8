//! LSTM sentence encoder.
//!
//! A question is the sequence of its token embeddings `x_1..x_T`; the LSTM
//! runs over it from a zero state and the final hidden state `h_T` is the
//! question vector. Two questions are compared by the inner product of their
//! vectors, and the network is fit to labeled pairs by minimizing
//! `Σ_j (S(Q_j, Q'_j) - y_j)²` with backpropagation through time.
//!
//! Step equations (σ = logistic sigmoid, ⊙ = elementwise product):
//!
//! ```text
//! i_t = σ(W_ix x_t + W_ih h_{t-1} + b_i)
//! f_t = σ(W_fx x_t + W_fh h_{t-1} + b_f)
//! o_t = σ(W_ox x_t + W_oh h_{t-1} + b_o)
//! c_t = c_{t-1} ⊙ f_t + tanh(W_cx x_t + W_ch h_{t-1} + b_c) ⊙ i_t
//! h_t = tanh(c_t) ⊙ o_t
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::corpus::QuestionId;
use crate::embed::{dot, sigmoid, EmbeddingTable};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "SIMQ-ENC v1";
pub const DEFAULT_MAX_LEN: usize = 64;

/// Parameter blocks in storage (and file) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Wix,
    Wfx,
    Wox,
    Wcx,
    Wih,
    Wfh,
    Woh,
    Wch,
    Bi,
    Bf,
    Bo,
    Bc,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::Wix,
        Block::Wfx,
        Block::Wox,
        Block::Wcx,
        Block::Wih,
        Block::Wfh,
        Block::Woh,
        Block::Wch,
        Block::Bi,
        Block::Bf,
        Block::Bo,
        Block::Bc,
    ];

    /// `(rows, cols)` for the given dimensions.
    pub fn shape(self, input_dim: usize, hidden_dim: usize) -> (usize, usize) {
        let pos = self as usize;
        match pos {
            0..=3 => (hidden_dim, input_dim),
            4..=7 => (hidden_dim, hidden_dim),
            _ => (hidden_dim, 1),
        }
    }

    pub fn name(self) -> &'static str {
        [
            "W_ix", "W_fx", "W_ox", "W_cx", "W_ih", "W_fh", "W_oh", "W_ch", "b_i", "b_f", "b_o",
            "b_c",
        ][self as usize]
    }
}

/// All LSTM weights in one buffer: the four input matrices stacked as a
/// `4h × in` matrix, then the four recurrent matrices as `4h × h`, then the
/// four biases, gate order i, f, o, c throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let len = 4 * hidden_dim * (input_dim + hidden_dim + 1);
        EncoderParams {
            input_dim,
            hidden_dim,
            data: vec![0.0; len],
        }
    }

    /// Uniform in `±init_range`, forget-gate bias set to `forget_bias`.
    pub fn random<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        init_range: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        if init_range > 0.0 {
            for v in &mut p.data {
                *v = rng.gen_range(-init_range..=init_range);
            }
        }
        p.block_mut(Block::Bf).fill(forget_bias);
        p
    }

    pub fn from_data(input_dim: usize, hidden_dim: usize, data: Vec<f64>) -> Result<Self> {
        let expected = 4 * hidden_dim * (input_dim + hidden_dim + 1);
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for input {input_dim}, hidden {hidden_dim} (expected {expected})",
                data.len()
            )));
        }
        Ok(EncoderParams {
            input_dim,
            hidden_dim,
            data,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, b: Block) -> usize {
        let (h, n) = (self.hidden_dim, self.input_dim);
        let i = b as usize;
        match i {
            0..=3 => i * h * n,
            4..=7 => 4 * h * n + (i - 4) * h * h,
            _ => 4 * h * n + 4 * h * h + (i - 8) * h,
        }
    }

    fn block_len(&self, b: Block) -> usize {
        let (r, c) = b.shape(self.input_dim, self.hidden_dim);
        r * c
    }

    /// One named block, row-major.
    pub fn block(&self, b: Block) -> &[f64] {
        let o = self.offset(b);
        &self.data[o..o + self.block_len(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let o = self.offset(b);
        let len = self.block_len(b);
        &mut self.data[o..o + len]
    }

    fn wx(&self) -> &[f64] {
        &self.data[..4 * self.hidden_dim * self.input_dim]
    }

    fn wh(&self) -> &[f64] {
        let start = 4 * self.hidden_dim * self.input_dim;
        &self.data[start..start + 4 * self.hidden_dim * self.hidden_dim]
    }

    fn bias(&self) -> &[f64] {
        &self.data[self.data.len() - 4 * self.hidden_dim..]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MODEL_MAGIC);
        w.u32(self.input_dim as u32);
        w.u32(self.hidden_dim as u32);
        w.f64s(&self.data);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        binio::check_magic(bytes, MODEL_MAGIC, "model")?;
        let mut r = Reader::after_magic(bytes, "model");
        let input_dim = r.u32()? as usize;
        let hidden_dim = r.u32()? as usize;
        let len = 4 * hidden_dim * (input_dim + hidden_dim + 1);
        let data = r.f64s(len)?;
        r.finish()?;
        let params = Self::from_data(input_dim, hidden_dim, data)?;
        if !params.is_finite() {
            return Err(Error::invalid("model file holds non-finite parameters"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Gate activations of one step; `g` is the tanh candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: LstmState,
    pub gates: Gates,
}

/// Pre-activations `W_x x + W_h h + b` for all four gates, written into `z`.
#[inline]
fn preactivations(params: &EncoderParams, x: &[f64], h_prev: &[f64], z: &mut [f64]) {
    let (n, h) = (params.input_dim, params.hidden_dim);
    let (wx, wh) = (params.wx(), params.wh());
    z.copy_from_slice(params.bias());
    for (r, zr) in z.iter_mut().enumerate() {
        *zr += dot(&wx[r * n..(r + 1) * n], x) + dot(&wh[r * h..(r + 1) * h], h_prev);
    }
}

/// One LSTM step.
pub fn lstm_step(x: &[f64], prev: &LstmState, params: &EncoderParams) -> Result<StepOutput> {
    let h = params.hidden_dim;
    if x.len() != params.input_dim || prev.h.len() != h || prev.c.len() != h {
        return Err(Error::DimensionMismatch(format!(
            "step input {} / state {},{} against params input {} hidden {h}",
            x.len(),
            prev.h.len(),
            prev.c.len(),
            params.input_dim
        )));
    }
    let mut z = vec![0.0; 4 * h];
    preactivations(params, x, &prev.h, &mut z);
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * h..].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..h).map(|k| prev.c[k] * f[k] + g[k] * i[k]).collect();
    let hh: Vec<f64> = (0..h).map(|k| c[k].tanh() * o[k]).collect();
    Ok(StepOutput {
        state: LstmState { h: hh, c },
        gates: Gates { i, f, o, g },
    })
}

/// Per-step activations kept for backpropagation, each `T × h` flattened.
struct Trace {
    hidden: usize,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl Trace {
    fn at<'a>(&self, v: &'a [f64], t: usize) -> &'a [f64] {
        &v[t * self.hidden..(t + 1) * self.hidden]
    }
}

/// Forward pass over vocabulary ids from a zero state.
fn forward(ids: &[usize], table: &EmbeddingTable, params: &EncoderParams, trace: bool) -> (Vec<f64>, Option<Trace>) {
    let h = params.hidden_dim;
    let steps = ids.len();
    let cap = if trace { steps * h } else { 0 };
    let mut tr = Trace {
        hidden: h,
        i: Vec::with_capacity(cap),
        f: Vec::with_capacity(cap),
        o: Vec::with_capacity(cap),
        g: Vec::with_capacity(cap),
        c: Vec::with_capacity(cap),
        tanh_c: Vec::with_capacity(cap),
        h: Vec::with_capacity(cap),
    };
    let mut z = vec![0.0; 4 * h];
    let mut h_state = vec![0.0; h];
    let mut c_state = vec![0.0; h];
    for &id in ids {
        preactivations(params, table.vector(id), &h_state, &mut z);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let o = sigmoid(z[2 * h + k]);
            let g = z[3 * h + k].tanh();
            let c = c_state[k] * f + g * i;
            let tc = c.tanh();
            c_state[k] = c;
            h_state[k] = tc * o;
            if trace {
                tr.i.push(i);
                tr.f.push(f);
                tr.o.push(o);
                tr.g.push(g);
                tr.c.push(c);
                tr.tanh_c.push(tc);
                tr.h.push(h_state[k]);
            }
        }
    }
    (h_state, trace.then_some(tr))
}

/// Accumulated gradient: same layout as [`EncoderParams`], plus sparse
/// embedding rows when embeddings are being fine-tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub params: EncoderParams,
    pub embeddings: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    pub fn zeros(params: &EncoderParams) -> Self {
        Gradient {
            params: EncoderParams::zeros(params.input_dim, params.hidden_dim),
            embeddings: BTreeMap::new(),
        }
    }

    fn add(&mut self, other: &Gradient) {
        for (a, b) in self.params.data.iter_mut().zip(&other.params.data) {
            *a += b;
        }
        for (id, row) in &other.embeddings {
            let dst = self
                .embeddings
                .entry(*id)
                .or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += b;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        let p: f64 = self.params.data.iter().map(|v| v * v).sum();
        let e: f64 = self
            .embeddings
            .values()
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum();
        (p + e).sqrt()
    }

    fn scale(&mut self, s: f64) {
        for v in &mut self.params.data {
            *v *= s;
        }
        for row in self.embeddings.values_mut() {
            for v in row {
                *v *= s;
            }
        }
    }
}

/// Backpropagation through time for one sequence, given `dl/dh_T`.
fn backward(
    ids: &[usize],
    trace: &Trace,
    d_last: &[f64],
    table: &EmbeddingTable,
    params: &EncoderParams,
    grad: &mut Gradient,
    with_embeddings: bool,
) {
    let h = params.hidden_dim;
    let n = params.input_dim;
    let (wx, wh) = (params.wx(), params.wh());
    let gwx_len = 4 * h * n;
    let gwh_len = 4 * h * h;
    let mut dh = d_last.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for t in (0..ids.len()).rev() {
        let (i, f, o, g) = (
            trace.at(&trace.i, t),
            trace.at(&trace.f, t),
            trace.at(&trace.o, t),
            trace.at(&trace.g, t),
        );
        let tanh_c = trace.at(&trace.tanh_c, t);
        let (c_prev, h_prev) = if t == 0 {
            (zeros.as_slice(), zeros.as_slice())
        } else {
            (trace.at(&trace.c, t - 1), trace.at(&trace.h, t - 1))
        };
        for k in 0..h {
            let d_o = dh[k] * tanh_c[k];
            dc[k] += dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
            let d_i = dc[k] * g[k];
            let d_g = dc[k] * i[k];
            let d_f = dc[k] * c_prev[k];
            dz[k] = d_i * i[k] * (1.0 - i[k]);
            dz[h + k] = d_f * f[k] * (1.0 - f[k]);
            dz[2 * h + k] = d_o * o[k] * (1.0 - o[k]);
            dz[3 * h + k] = d_g * (1.0 - g[k] * g[k]);
            dc[k] *= f[k];
        }
        let x = table.vector(ids[t]);
        let gdata = &mut grad.params.data;
        let (gwx, rest) = gdata.split_at_mut(gwx_len);
        let (gwh, gb) = rest.split_at_mut(gwh_len);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (a, &xv) in gwx[r * n..(r + 1) * n].iter_mut().zip(x) {
                *a += d * xv;
            }
            for (a, &hv) in gwh[r * h..(r + 1) * h].iter_mut().zip(h_prev) {
                *a += d * hv;
            }
            gb[r] += d;
        }
        dh.fill(0.0);
        for (r, &d) in dz.iter().enumerate() {
            for (a, &w) in dh.iter_mut().zip(&wh[r * h..(r + 1) * h]) {
                *a += d * w;
            }
        }
        if with_embeddings {
            let row = grad
                .embeddings
                .entry(ids[t])
                .or_insert_with(|| vec![0.0; n]);
            for (r, &d) in dz.iter().enumerate() {
                for (a, &w) in row.iter_mut().zip(&wx[r * n..(r + 1) * n]) {
                    *a += d * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    /// Raw inner product of question vectors.
    #[default]
    Dot,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub max_len: usize,
    pub similarity: SimilarityKind,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            max_len: DEFAULT_MAX_LEN,
            similarity: SimilarityKind::Dot,
        }
    }
}

impl EncodeOptions {
    fn clip<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        &ids[..ids.len().min(self.max_len.max(1))]
    }
}

/// Final hidden state of the encoder over a question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionVector(pub Vec<f64>);

impl QuestionVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn check_dims(table: &EmbeddingTable, params: &EncoderParams) -> Result<()> {
    if table.dim() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "embedding dim {} but encoder input dim {}",
            table.dim(),
            params.input_dim
        )));
    }
    Ok(())
}

/// Encodes a token list with the default options.
pub fn encode<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    params: &EncoderParams,
) -> Result<QuestionVector> {
    encode_with(tokens, table, params, &EncodeOptions::default())
}

pub fn encode_with<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
) -> Result<QuestionVector> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let ids = table.vocab().ids(tokens);
    encode_ids(&ids, table, params, opts)
}

pub fn encode_ids(
    ids: &[usize],
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
) -> Result<QuestionVector> {
    if ids.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    check_dims(table, params)?;
    Ok(QuestionVector(forward(opts.clip(ids), table, params, false).0))
}

/// Inner product of two question vectors.
pub fn similarity(u: &QuestionVector, v: &QuestionVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "question vectors of dim {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(dot(&u.0, &v.0))
}

/// Similarity under the configured kind, with its gradients w.r.t. `u` and `v`.
fn score_and_grad(kind: SimilarityKind, u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    match kind {
        SimilarityKind::Dot => (dot(u, v), v.to_vec(), u.to_vec()),
        SimilarityKind::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
            }
            let s = dot(u, v) / (nu * nv);
            let du = (0..u.len())
                .map(|k| v[k] / (nu * nv) - s * u[k] / (nu * nu))
                .collect();
            let dv = (0..v.len())
                .map(|k| u[k] / (nu * nv) - s * v[k] / (nv * nv))
                .collect();
            (s, du, dv)
        }
    }
}

pub fn score(kind: SimilarityKind, u: &QuestionVector, v: &QuestionVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "question vectors of dim {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(score_and_grad(kind, &u.0, &v.0).0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub q: Vec<String>,
    pub q_prime: Vec<String>,
    pub y: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<QuestionId>,
    /// How the pair was produced, when machine-generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl TrainingPair {
    pub fn new(q: Vec<String>, q_prime: Vec<String>, y: u8) -> Self {
        TrainingPair {
            q,
            q_prime,
            y,
            anchor_id: None,
            origin: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() || self.q_prime.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        if self.y > 1 {
            return Err(Error::invalid(format!("pair label {} is not 0 or 1", self.y)));
        }
        Ok(())
    }
}

/// Reads a line-delimited pair file.
pub fn read_pairs(path: &Path) -> Result<Vec<TrainingPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: TrainingPair = serde_json::from_str(line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        pair.validate().map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A pair mapped to vocabulary ids and clipped to the encoder's length cap.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub q: Vec<usize>,
    pub q_prime: Vec<usize>,
    pub y: f64,
}

impl EncodedPair {
    pub fn new(pair: &TrainingPair, table: &EmbeddingTable, opts: &EncodeOptions) -> Result<Self> {
        pair.validate()?;
        let vocab = table.vocab();
        Ok(EncodedPair {
            q: opts.clip(&vocab.ids(&pair.q)).to_vec(),
            q_prime: opts.clip(&vocab.ids(&pair.q_prime)).to_vec(),
            y: pair.y as f64,
        })
    }
}

fn encode_pairs(
    batch: &[TrainingPair],
    table: &EmbeddingTable,
    opts: &EncodeOptions,
) -> Result<Vec<EncodedPair>> {
    batch.iter().map(|p| EncodedPair::new(p, table, opts)).collect()
}

fn pair_residual(p: &EncodedPair, table: &EmbeddingTable, params: &EncoderParams, kind: SimilarityKind) -> f64 {
    let (u, _) = forward(&p.q, table, params, false);
    let (v, _) = forward(&p.q_prime, table, params, false);
    score_and_grad(kind, &u, &v).0 - p.y
}

/// Loss and gradient contribution of a single pair.
fn pair_gradient(
    p: &EncodedPair,
    table: &EmbeddingTable,
    params: &EncoderParams,
    kind: SimilarityKind,
    with_embeddings: bool,
    grad: &mut Gradient,
) -> f64 {
    let (u, tu) = forward(&p.q, table, params, true);
    let (v, tv) = forward(&p.q_prime, table, params, true);
    let (s, ds_du, ds_dv) = score_and_grad(kind, &u, &v);
    let r = s - p.y;
    if r != 0.0 {
        let du: Vec<f64> = ds_du.iter().map(|d| 2.0 * r * d).collect();
        let dv: Vec<f64> = ds_dv.iter().map(|d| 2.0 * r * d).collect();
        backward(&p.q, &tu.unwrap(), &du, table, params, grad, with_embeddings);
        backward(&p.q_prime, &tv.unwrap(), &dv, table, params, grad, with_embeddings);
    }
    r * r
}

/// `Σ (S(q, q') - y)²` over the batch.
pub fn pair_loss(
    batch: &[TrainingPair],
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    check_dims(table, params)?;
    let encoded = encode_pairs(batch, table, opts)?;
    Ok(encoded
        .iter()
        .map(|p| pair_residual(p, table, params, opts.similarity).powi(2))
        .sum())
}

/// Exact gradient of [`pair_loss`] with respect to every encoder parameter,
/// and the touched embedding rows when `with_embeddings` is set.
pub fn grad(
    batch: &[TrainingPair],
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
    with_embeddings: bool,
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    check_dims(table, params)?;
    let encoded = encode_pairs(batch, table, opts)?;
    let mut total = Gradient::zeros(params);
    for p in &encoded {
        let mut g = Gradient::zeros(params);
        pair_gradient(p, table, params, opts.similarity, with_embeddings, &mut g);
        total.add(&g);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub train_embeddings: bool,
    pub init_range: f64,
    pub forget_bias: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    pub max_len: usize,
    pub similarity: SimilarityKind,
    /// Compute per-pair gradients on the rayon pool. Results are identical
    /// to the sequential path because gradients are summed in batch order.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 100,
            epochs: 10,
            lr: 0.01,
            batch_size: 32,
            seed: 1,
            train_embeddings: false,
            init_range: 0.1,
            forget_bias: 1.0,
            clip_norm: 5.0,
            max_len: DEFAULT_MAX_LEN,
            similarity: SimilarityKind::Dot,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            max_len: self.max_len,
            similarity: self.similarity,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-pass loss before the first update.
    pub initial_loss: f64,
    /// Loss accumulated over each epoch's mini-batches (pre-update values).
    pub epoch_loss: Vec<f64>,
    /// Full-pass loss after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// The embedding table, fine-tuned when `train_embeddings` is set.
    pub table: EmbeddingTable,
    pub report: TrainReport,
}

fn full_loss(
    pairs: &[EncodedPair],
    table: &EmbeddingTable,
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> f64 {
    let residual = |p: &EncodedPair| pair_residual(p, table, params, cfg.similarity).powi(2);
    if cfg.parallel {
        let parts: Vec<f64> = pairs.par_iter().map(residual).collect();
        parts.iter().sum()
    } else {
        pairs.iter().map(residual).sum()
    }
}

/// Mini-batch gradient descent on the squared pair loss.
pub fn train(pairs: &[TrainingPair], table: &EmbeddingTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(pairs, table, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, epoch_loss)` after each epoch.
pub fn train_with_progress(
    pairs: &[TrainingPair],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    if cfg.hidden_dim == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("hidden_dim and batch_size must be at least 1"));
    }
    let opts = cfg.encode_options();
    let encoded = encode_pairs(pairs, table, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EncoderParams::random(
        table.dim(),
        cfg.hidden_dim,
        cfg.init_range,
        cfg.forget_bias,
        &mut rng,
    );
    let mut table = table.clone();
    let mut report = TrainReport {
        initial_loss: full_loss(&encoded, &table, &params, cfg),
        ..Default::default()
    };
    if cfg.epochs == 0 {
        report.final_loss = report.initial_loss;
        return Ok(TrainOutcome {
            params,
            table,
            report,
        });
    }
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let run = |&idx: &usize| {
                let mut g = Gradient::zeros(&params);
                let l = pair_gradient(
                    &encoded[idx],
                    &table,
                    &params,
                    cfg.similarity,
                    cfg.train_embeddings,
                    &mut g,
                );
                (l, g)
            };
            let parts: Vec<(f64, Gradient)> = if cfg.parallel {
                batch.par_iter().map(run).collect()
            } else {
                batch.iter().map(run).collect()
            };
            let mut total = Gradient::zeros(&params);
            for (l, g) in &parts {
                epoch_loss += l;
                total.add(g);
            }
            let norm = total.norm();
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, lr: cfg.lr });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                total.scale(cfg.clip_norm / norm);
            }
            for (p, g) in params.data.iter_mut().zip(&total.params.data) {
                *p -= cfg.lr * g;
            }
            for (id, row) in &total.embeddings {
                for (v, g) in table.vector_mut(*id).iter_mut().zip(row) {
                    *v -= cfg.lr * g;
                }
            }
        }
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch, lr: cfg.lr });
        }
        log::debug!("encoder epoch {epoch}: loss {epoch_loss:.4}");
        progress(epoch, epoch_loss);
        report.epoch_loss.push(epoch_loss);
    }
    report.final_loss = full_loss(&encoded, &table, &params, cfg);
    if !report.final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            lr: cfg.lr,
        });
    }
    Ok(TrainOutcome {
        params,
        table,
        report,
    })
}
