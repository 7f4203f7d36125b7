//! Layer zoo built from tape primitives: 1-D convolution (plain and
//! dilated), max-pooling, GRU and LSTM cells, uni- and bidirectional
//! recurrent runs, dense layers and inverted dropout.
//!
//! Batched tensors are laid out position-major: a batch of sequences is
//! `[B, L, C]`. The single-example helpers (`conv1d`, `gru_step`, ...) take
//! and return the channel-major matrices used in the docs (`N × L`) and run
//! the same tape code with `B = 1`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; `L' = L - (M-1)·dilation`.
    Valid,
    /// `(M-1)·dilation` zeros split across both ends (extra one on the
    /// right); `L' = L`.
    Same,
}

impl Padding {
    pub fn amounts(self, window: usize, dilation: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = window.saturating_sub(1) * dilation;
                (total / 2, total - total / 2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// `K` filters of window `M` over `N` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilterBank {
    /// `[K, M, N]`
    pub weight: Tensor,
    /// `[K]`
    pub bias: Tensor,
    pub dilation: usize,
}

impl ConvFilterBank {
    pub fn new(weight: Tensor, bias: Tensor, dilation: usize) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 3 || s.contains(&0) || bias.shape() != [s[0]] || dilation == 0 {
            return Err(Error::Shape {
                op: "conv_filter_bank",
                left: s.to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(ConvFilterBank { weight, bias, dilation })
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[2]
    }
}

/// Pre-activation convolution of `x` `[B, L, N]` with `w` `[K, M, N]`,
/// `b` `[K]`: `out[b, i, k] = b_k + Σ_{m,n} w[k, m, n] · x[b, i + m·d - pad, n]`.
pub fn conv1d_linear(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    dilation: usize,
    padding: Padding,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[2] {
        return Err(Error::Shape {
            op: "conv1d",
            left: xs,
            right: ws,
        });
    }
    let (batch, (k, m, n)) = (xs[0], (ws[0], ws[1], ws[2]));
    let (pl, pr) = padding.amounts(m, dilation);
    let cols = tape.unfold(x, m, dilation, pl, pr)?;
    let rows = tape.shape(cols)[0];
    let w2 = tape.reshape(w, &[k, m * n])?;
    let y = tape.linear(cols, w2, b)?;
    tape.reshape(y, &[batch, rows / batch.max(1), k])
}

/// ReLU convolution layer.
pub fn conv1d_layer(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    dilation: usize,
    padding: Padding,
) -> Result<Var> {
    let pre = conv1d_linear(tape, x, w, b, dilation, padding)?;
    Ok(tape.relu(pre))
}

fn channel_major_to_batch(tape: &mut Tape, x: &Tensor) -> Result<Var> {
    if x.ndim() != 2 {
        return Err(Error::Shape {
            op: "conv1d",
            left: x.shape().to_vec(),
            right: vec![],
        });
    }
    let t = x.transposed();
    let (l, n) = (t.shape()[0], t.shape()[1]);
    Ok(tape.input(t.reshaped(vec![1, l, n])))
}

fn batch_to_channel_major(t: &Tensor) -> Tensor {
    let (l, k) = (t.shape()[1], t.shape()[2]);
    t.clone().reshaped(vec![l, k]).transposed()
}

/// `X` is `N × L`; returns the `K × L'` ReLU feature map.
pub fn conv1d(x: &Tensor, bank: &ConvFilterBank, padding: Padding) -> Result<Tensor> {
    if x.ndim() != 2 || x.shape()[0] != bank.channels() {
        return Err(Error::Shape {
            op: "conv1d",
            left: x.shape().to_vec(),
            right: bank.weight.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let xv = channel_major_to_batch(&mut tape, x)?;
    let w = tape.input(bank.weight.clone());
    let b = tape.input(bank.bias.clone());
    let y = conv1d_layer(&mut tape, xv, w, b, bank.dilation, padding)?;
    Ok(batch_to_channel_major(tape.value(y)))
}

/// `Y` is `K × L'`; max over windows of `window` with the given stride.
pub fn maxpool1d(y: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = channel_major_to_batch(&mut tape, y)?;
    let p = tape.maxpool(v, window, stride)?;
    Ok(batch_to_channel_major(tape.value(p)))
}

pub use crate::grad::CellKind;

/// Host-side recurrent cell parameters. Every gate matrix is
/// `[H, H + In]` acting on the concatenation `[h_{t-1}, x_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCellParams {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: usize,
    /// GRU: `W_z, W_r, W_h`. LSTM: `W_f, W_i, W_o, W_c`.
    pub weights: Vec<Tensor>,
    /// Same gate order as `weights`.
    pub biases: Vec<Tensor>,
}

impl RecurrentCellParams {
    pub fn gate_names(kind: CellKind) -> &'static [&'static str] {
        match kind {
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["f", "i", "o", "c"],
        }
    }

    pub fn zeros(kind: CellKind, hidden: usize, input: usize) -> Self {
        let g = Self::gate_names(kind).len();
        RecurrentCellParams {
            kind,
            hidden,
            input,
            weights: vec![Tensor::zeros(&[hidden, hidden + input]); g],
            biases: vec![Tensor::zeros(&[hidden]); g],
        }
    }

    pub fn random<R: Rng + ?Sized>(kind: CellKind, hidden: usize, input: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(kind, hidden, input);
        for t in p.weights.iter_mut().chain(p.biases.iter_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v = scale * (2.0 * rng.random::<f64>() - 1.0));
        }
        p
    }

    /// Records the parameters on a tape as constants.
    pub fn record(&self, tape: &mut Tape) -> CellVars {
        CellVars {
            kind: self.kind,
            hidden: self.hidden,
            weights: self.weights.iter().map(|w| tape.input(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.input(b.clone())).collect(),
        }
    }
}

/// Recurrent cell parameters already recorded on a tape.
#[derive(Debug, Clone)]
pub struct CellVars {
    pub kind: CellKind,
    pub hidden: usize,
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl CellVars {
    pub fn from_store(kind: CellKind, hidden: usize, tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for g in RecurrentCellParams::gate_names(kind) {
            let find = |n: String| store.find(&n).ok_or_else(|| Error::invalid(format!("missing parameter {n}")));
            weights.push(tape.param(store, find(format!("{prefix}.W_{g}"))?));
            biases.push(tape.param(store, find(format!("{prefix}.b_{g}"))?));
        }
        Ok(CellVars {
            kind,
            hidden,
            weights,
            biases,
        })
    }
}

/// Recurrent state; `c` is only used by LSTM cells.
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub h: Var,
    pub c: Option<Var>,
}

/// One GRU update on a batch: `x_t` `[B, In]`, `h_prev` `[B, H]`.
pub fn gru_step(tape: &mut Tape, x_t: Var, h_prev: Var, cell: &CellVars) -> Result<Var> {
    let (wz, wr, wh) = (cell.weights[0], cell.weights[1], cell.weights[2]);
    let (bz, br, bh) = (cell.biases[0], cell.biases[1], cell.biases[2]);
    let hx = tape.concat(&[h_prev, x_t])?;
    let z = tape.linear(hx, wz, bz)?;
    let z = tape.sigmoid(z);
    let r = tape.linear(hx, wr, br)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let rhx = tape.concat(&[rh, x_t])?;
    let cand = tape.linear(rhx, wh, bh)?;
    let cand = tape.tanh(cand);
    // (1 - z) ⊙ h + z ⊙ h̃  =  h + z ⊙ (h̃ - h)
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(h_prev, step)
}

/// One LSTM update (forget/input/output gates, no peepholes).
pub fn lstm_step(tape: &mut Tape, x_t: Var, h_prev: Var, c_prev: Var, cell: &CellVars) -> Result<(Var, Var)> {
    let hx = tape.concat(&[h_prev, x_t])?;
    let mut gates = Vec::with_capacity(4);
    for g in 0..4 {
        let pre = tape.linear(hx, cell.weights[g], cell.biases[g])?;
        gates.push(if g == 3 { tape.tanh(pre) } else { tape.sigmoid(pre) });
    }
    let (f, i, o, cand) = (gates[0], gates[1], gates[2], gates[3]);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

fn check_cell_input(tape: &Tape, x_t: Var, h: Var, cell: &CellVars) -> Result<()> {
    let w = tape.shape(cell.weights[0]);
    let (xs, hs) = (tape.shape(x_t), tape.shape(h));
    if xs.len() != 2 || hs.len() != 2 || hs[1] != cell.hidden || w[1] != cell.hidden + xs[1] || xs[0] != hs[0] {
        return Err(Error::Shape {
            op: "recurrent_step",
            left: xs.to_vec(),
            right: w.to_vec(),
        });
    }
    Ok(())
}

/// Single cell application on state `s`.
pub fn cell_step(tape: &mut Tape, x_t: Var, s: State, cell: &CellVars) -> Result<State> {
    check_cell_input(tape, x_t, s.h, cell)?;
    match cell.kind {
        CellKind::Gru => Ok(State {
            h: gru_step(tape, x_t, s.h, cell)?,
            c: None,
        }),
        CellKind::Lstm => {
            let c_prev = s.c.ok_or_else(|| Error::invalid("LSTM step without cell state"))?;
            let (h, c) = lstm_step(tape, x_t, s.h, c_prev, cell)?;
            Ok(State { h, c: Some(c) })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Runs `cell` over `xs` `[B, T, In]` from a zero state and returns the
/// hidden state after the last consumed position. `Backward` consumes
/// positions `T-1, ..., 0`.
pub fn rnn_run(tape: &mut Tape, xs: Var, cell: &CellVars, direction: Direction) -> Result<Var> {
    tape.recurrent(xs, &cell.weights, &cell.biases, cell.kind, direction == Direction::Backward)
}

/// Step-by-step counterpart of [`rnn_run`] built from [`cell_step`];
/// returns the hidden state after every step, in consumption order.
pub fn rnn_run_states(tape: &mut Tape, xs: Var, cell: &CellVars, direction: Direction) -> Result<Vec<Var>> {
    let s = tape.shape(xs).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "rnn_run",
            left: s,
            right: vec![],
        });
    }
    let (b, t_len) = (s[0], s[1]);
    if t_len == 0 {
        return Err(Error::invalid("empty sequence in rnn_run"));
    }
    let zero = tape.constant(Tensor::zeros(&[b, cell.hidden]));
    let mut state = State {
        h: zero,
        c: (cell.kind == CellKind::Lstm).then_some(zero),
    };
    let mut out = Vec::with_capacity(t_len);
    for step in 0..t_len {
        let t = match direction {
            Direction::Forward => step,
            Direction::Backward => t_len - 1 - step,
        };
        let x_t = tape.select(xs, 1, t)?;
        state = cell_step(tape, x_t, state, cell)?;
        out.push(state.h);
    }
    Ok(out)
}

/// `[h_fwd_T ; h_bwd_T]`: forward pass of `fwd` over `xs` and forward pass
/// of `bwd` over the reversed sequence.
pub fn birnn_run(tape: &mut Tape, xs: Var, fwd: &CellVars, bwd: &CellVars) -> Result<Var> {
    if fwd.hidden != bwd.hidden {
        return Err(Error::invalid(format!(
            "bi-RNN hidden sizes differ: {} vs {}",
            fwd.hidden, bwd.hidden
        )));
    }
    let hf = rnn_run(tape, xs, fwd, Direction::Forward)?;
    let hb = rnn_run(tape, xs, bwd, Direction::Backward)?;
    tape.concat(&[hf, hb])
}

/// `activation(x · Wᵀ + b)` for `x` `[B, in]`, `W` `[out, in]`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var, activation: Activation) -> Result<Var> {
    let y = tape.linear(x, w, b)?;
    Ok(match activation {
        Activation::Relu => tape.relu(y),
        Activation::Sigmoid => tape.sigmoid(y),
        Activation::None => y,
    })
}

/// Inverted dropout mask: each entry is `1/keep` with probability `keep`,
/// else 0.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, keep_prob: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / keep_prob;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 })
        .collect()
}

/// Identity at inference or when `keep_prob == 1`.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    keep_prob: f64,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!("keep probability {keep_prob} not in (0, 1]")));
    }
    if !training || keep_prob == 1.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.value(x).len(), keep_prob, rng);
    tape.dropout_mask(x, mask)
}

/// Single-example GRU step on plain vectors.
pub fn gru_step_vec(x: &[f64], h: &[f64], params: &RecurrentCellParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let cell = params.record(&mut tape);
    let xv = tape.input(Tensor::new(vec![1, x.len()], x.to_vec()));
    let hv = tape.input(Tensor::new(vec![1, h.len()], h.to_vec()));
    check_cell_input(&tape, xv, hv, &cell)?;
    let out = gru_step(&mut tape, xv, hv, &cell)?;
    Ok(tape.value(out).data().to_vec())
}

/// Single-example LSTM step on plain vectors; returns `(h, c)`.
pub fn lstm_step_vec(x: &[f64], h: &[f64], c: &[f64], params: &RecurrentCellParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let cell = params.record(&mut tape);
    let xv = tape.input(Tensor::new(vec![1, x.len()], x.to_vec()));
    let hv = tape.input(Tensor::new(vec![1, h.len()], h.to_vec()));
    let cv = tape.input(Tensor::new(vec![1, c.len()], c.to_vec()));
    check_cell_input(&tape, xv, hv, &cell)?;
    let (h2, c2) = lstm_step(&mut tape, xv, hv, cv, &cell)?;
    Ok((tape.value(h2).data().to_vec(), tape.value(c2).data().to_vec()))
}

/// Runs a cell over the rows of `xs` (`T × In`); returns the final hidden
/// state.
pub fn rnn_run_vec(xs: &Tensor, params: &RecurrentCellParams, direction: Direction) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let cell = params.record(&mut tape);
    let (t, d) = (xs.shape()[0], xs.shape()[1]);
    let x = tape.input(xs.clone().reshaped(vec![1, t, d]));
    let h = rnn_run(&mut tape, x, &cell, direction)?;
    Ok(tape.value(h).data().to_vec())
}

/// Bidirectional run over the rows of `xs` (`T × In`).
pub fn birnn_run_vec(xs: &Tensor, fwd: &RecurrentCellParams, bwd: &RecurrentCellParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let f = fwd.record(&mut tape);
    let b = bwd.record(&mut tape);
    let (t, d) = (xs.shape()[0], xs.shape()[1]);
    let x = tape.input(xs.clone().reshaped(vec![1, t, d]));
    let h = birnn_run(&mut tape, x, &f, &b)?;
    Ok(tape.value(h).data().to_vec())
}

/// `activation(W x + b)` on a single vector.
pub fn dense_vec(x: &[f64], w: &Tensor, b: &[f64], activation: Activation) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(vec![1, x.len()], x.to_vec()));
    let wv = tape.input(w.clone());
    let bv = tape.input(Tensor::vector(b.to_vec()));
    let y = dense(&mut tape, xv, wv, bv, activation)?;
    Ok(tape.value(y).data().to_vec())
}
