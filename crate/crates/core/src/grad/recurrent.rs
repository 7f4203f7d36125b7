//! Whole-sequence GRU/LSTM kernel with a hand-written backward pass.
//!
//! Gate weights are `[H, H + In]` matrices acting on `[h, x]`. The input
//! halves of all gates are applied to every time step in one GEMM; only the
//! recurrent halves run per step.

use super::tape::sigmoid;
use super::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Forward intermediates kept for the backward pass. All per-step buffers
/// are in processing order (reversed time for a backward run).
#[derive(Debug)]
pub(crate) struct RecurrentCache {
    kind: CellKind,
    reverse: bool,
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    /// `[T, B, In]`
    xs: Vec<f64>,
    /// `[G·H, In]`
    wx: Vec<f64>,
    /// `[G·H, H]`
    wh: Vec<f64>,
    /// Post-activation gates `[T, B, G·H]`: LSTM `f, i, o, g`; GRU `z, r, h̃`.
    gates: Vec<f64>,
    /// Hidden states `[T + 1, B, H]`, starting from zeros.
    hs: Vec<f64>,
    /// LSTM cell states `[T + 1, B, H]`.
    cs: Vec<f64>,
    /// `tanh` of the LSTM cell states after each step, `[T, B, H]`.
    tcs: Vec<f64>,
}

pub(crate) struct RecurrentGrads {
    /// `[B, T, In]`, when requested.
    pub xs: Option<Vec<f64>>,
    /// Per gate, `[H, H + In]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn split_weights(weights: &[&[f64]], hidden: usize, input: usize) -> (Vec<f64>, Vec<f64>) {
    let g = weights.len();
    let mut wx = Vec::with_capacity(g * hidden * input);
    let mut wh = Vec::with_capacity(g * hidden * hidden);
    for w in weights {
        for row in w.chunks(hidden + input) {
            wh.extend_from_slice(&row[..hidden]);
            wx.extend_from_slice(&row[hidden..]);
        }
    }
    (wx, wh)
}

/// Runs the cell over `x` (`[B, T, In]`) from a zero state; returns the
/// final hidden state `[B, H]` and the cache.
pub(crate) fn forward(
    kind: CellKind,
    x: &[f64],
    (batch, steps, input): (usize, usize, usize),
    weights: &[&[f64]],
    biases: &[&[f64]],
    hidden: usize,
    reverse: bool,
) -> (Vec<f64>, RecurrentCache) {
    let (b, t, h) = (batch, steps, hidden);
    let gh = kind.gates() * h;
    let time = |s: usize| if reverse { t - 1 - s } else { s };

    let mut xs = vec![0.0; t * b * input];
    for s in 0..t {
        for bi in 0..b {
            let src = (bi * t + time(s)) * input;
            xs[(s * b + bi) * input..(s * b + bi + 1) * input].copy_from_slice(&x[src..src + input]);
        }
    }
    let (wx, wh) = split_weights(weights, h, input);
    let bias: Vec<f64> = biases.iter().flat_map(|v| v.iter().copied()).collect();

    // Input projections of every step, bias included.
    let mut gates = vec![0.0; t * b * gh];
    for row in gates.chunks_mut(gh) {
        row.copy_from_slice(&bias);
    }
    gemm(&xs, &wx, &mut gates, t * b, input, gh, false, true, true);

    let mut hs = vec![0.0; (t + 1) * b * h];
    let lstm = kind == CellKind::Lstm;
    let mut cs = if lstm { vec![0.0; (t + 1) * b * h] } else { Vec::new() };
    let mut tcs = if lstm { vec![0.0; t * b * h] } else { Vec::new() };
    let mut rh = vec![0.0; b * h];
    for s in 0..t {
        let (hs_prev, hs_next) = hs.split_at_mut((s + 1) * b * h);
        let h_prev = &hs_prev[s * b * h..];
        let h_next = &mut hs_next[..b * h];
        let g = &mut gates[s * b * gh..(s + 1) * b * gh];
        match kind {
            CellKind::Lstm => {
                gemm(h_prev, &wh, g, b, h, gh, false, true, true);
                let (cs_prev, cs_next) = cs.split_at_mut((s + 1) * b * h);
                let c_prev = &cs_prev[s * b * h..];
                let c_next = &mut cs_next[..b * h];
                for bi in 0..b {
                    let row = &mut g[bi * gh..(bi + 1) * gh];
                    for j in 0..h {
                        let f = sigmoid(row[j]);
                        let i = sigmoid(row[h + j]);
                        let o = sigmoid(row[2 * h + j]);
                        let cand = row[3 * h + j].tanh();
                        row[j] = f;
                        row[h + j] = i;
                        row[2 * h + j] = o;
                        row[3 * h + j] = cand;
                        let c = f * c_prev[bi * h + j] + i * cand;
                        let tc = c.tanh();
                        c_next[bi * h + j] = c;
                        tcs[(s * b + bi) * h + j] = tc;
                        h_next[bi * h + j] = o * tc;
                    }
                }
            }
            CellKind::Gru => {
                // z and r from [h, x]
                let mut zr = vec![0.0; b * 2 * h];
                gemm(h_prev, &wh[..2 * h * h], &mut zr, b, h, 2 * h, false, true, false);
                for bi in 0..b {
                    let row = &mut g[bi * gh..(bi + 1) * gh];
                    for j in 0..2 * h {
                        row[j] = sigmoid(row[j] + zr[bi * 2 * h + j]);
                    }
                    for j in 0..h {
                        rh[bi * h + j] = row[h + j] * h_prev[bi * h + j];
                    }
                }
                let mut cand = vec![0.0; b * h];
                gemm(&rh, &wh[2 * h * h..], &mut cand, b, h, h, false, true, false);
                for bi in 0..b {
                    let row = &mut g[bi * gh..(bi + 1) * gh];
                    for j in 0..h {
                        let hc = (row[2 * h + j] + cand[bi * h + j]).tanh();
                        row[2 * h + j] = hc;
                        let hp = h_prev[bi * h + j];
                        h_next[bi * h + j] = hp + row[j] * (hc - hp);
                    }
                }
            }
        }
    }
    let last = hs[t * b * h..].to_vec();
    let cache = RecurrentCache {
        kind,
        reverse,
        batch: b,
        steps: t,
        input,
        hidden: h,
        xs,
        wx,
        wh,
        gates,
        hs,
        cs,
        tcs,
    };
    (last, cache)
}

/// Backpropagation through time from the gradient of the final hidden
/// state.
pub(crate) fn backward(c: &RecurrentCache, d_last: &[f64], want_dx: bool) -> RecurrentGrads {
    let (b, t, h, input) = (c.batch, c.steps, c.hidden, c.input);
    let ng = c.kind.gates();
    let gh = ng * h;
    let mut dpre = vec![0.0; t * b * gh];
    let mut dwh = vec![0.0; gh * h];
    let mut dh = d_last.to_vec();
    let mut dh_prev = vec![0.0; b * h];
    let mut dc = vec![0.0; b * h];

    for s in (0..t).rev() {
        let g = &c.gates[s * b * gh..(s + 1) * b * gh];
        let h_prev = &c.hs[s * b * h..(s + 1) * b * h];
        let dp = &mut dpre[s * b * gh..(s + 1) * b * gh];
        match c.kind {
            CellKind::Lstm => {
                let c_prev = &c.cs[s * b * h..(s + 1) * b * h];
                let tcs = &c.tcs[s * b * h..(s + 1) * b * h];
                for bi in 0..b {
                    let row = &g[bi * gh..(bi + 1) * gh];
                    let drow = &mut dp[bi * gh..(bi + 1) * gh];
                    for j in 0..h {
                        let k = bi * h + j;
                        let (f, i, o, cand) = (row[j], row[h + j], row[2 * h + j], row[3 * h + j]);
                        let tc = tcs[k];
                        let d_o = dh[k] * tc;
                        let dcell = dc[k] + dh[k] * o * (1.0 - tc * tc);
                        drow[j] = dcell * c_prev[k] * f * (1.0 - f);
                        drow[h + j] = dcell * cand * i * (1.0 - i);
                        drow[2 * h + j] = d_o * o * (1.0 - o);
                        drow[3 * h + j] = dcell * i * (1.0 - cand * cand);
                        dc[k] = dcell * f;
                    }
                }
                gemm(dp, h_prev, &mut dwh, gh, b, h, true, false, true);
                gemm(dp, &c.wh, &mut dh_prev, b, gh, h, false, false, false);
            }
            CellKind::Gru => {
                let mut drh = vec![0.0; b * h];
                let mut rh = vec![0.0; b * h];
                for bi in 0..b {
                    let row = &g[bi * gh..(bi + 1) * gh];
                    let drow = &mut dp[bi * gh..(bi + 1) * gh];
                    for j in 0..h {
                        let k = bi * h + j;
                        let (z, r, hc) = (row[j], row[h + j], row[2 * h + j]);
                        let hp = h_prev[k];
                        drow[j] = dh[k] * (hc - hp) * z * (1.0 - z);
                        drow[2 * h + j] = dh[k] * z * (1.0 - hc * hc);
                        rh[k] = r * hp;
                        dh_prev[k] = dh[k] * (1.0 - z);
                    }
                }
                // Candidate path: pre_h = x·Wxᵀ + (r ⊙ h)·Whhᵀ.
                let mut dcand = vec![0.0; b * h];
                for bi in 0..b {
                    dcand[bi * h..(bi + 1) * h].copy_from_slice(&dp[bi * gh + 2 * h..bi * gh + 3 * h]);
                }
                gemm(&dcand, &rh, &mut dwh[2 * h * h..], h, b, h, true, false, true);
                gemm(&dcand, &c.wh[2 * h * h..], &mut drh, b, h, h, false, false, false);
                for bi in 0..b {
                    let row = &g[bi * gh..(bi + 1) * gh];
                    for j in 0..h {
                        let k = bi * h + j;
                        let r = row[h + j];
                        dp[bi * gh + h + j] = drh[k] * h_prev[k] * r * (1.0 - r);
                        dh_prev[k] += drh[k] * r;
                    }
                }
                let mut dzr = vec![0.0; b * 2 * h];
                for bi in 0..b {
                    dzr[bi * 2 * h..(bi + 1) * 2 * h].copy_from_slice(&dp[bi * gh..bi * gh + 2 * h]);
                }
                gemm(&dzr, h_prev, &mut dwh[..2 * h * h], 2 * h, b, h, true, false, true);
                gemm(&dzr, &c.wh[..2 * h * h], &mut dh_prev, b, 2 * h, h, false, false, true);
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }

    let mut dwx = vec![0.0; gh * input];
    gemm(&dpre, &c.xs, &mut dwx, gh, t * b, input, true, false, false);
    let dx = want_dx.then(|| {
        let mut dxs = vec![0.0; t * b * input];
        gemm(&dpre, &c.wx, &mut dxs, t * b, gh, input, false, false, false);
        let mut dx = vec![0.0; b * t * input];
        for s in 0..t {
            let time = if c.reverse { t - 1 - s } else { s };
            for bi in 0..b {
                let dst = (bi * t + time) * input;
                dx[dst..dst + input].copy_from_slice(&dxs[(s * b + bi) * input..(s * b + bi + 1) * input]);
            }
        }
        dx
    });
    let mut dbias = vec![0.0; gh];
    for row in dpre.chunks(gh) {
        for (d, v) in dbias.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut weights = Vec::with_capacity(ng);
    let mut biases = Vec::with_capacity(ng);
    for gi in 0..ng {
        let mut w = Vec::with_capacity(h * (h + input));
        for j in 0..h {
            let r = gi * h + j;
            w.extend_from_slice(&dwh[r * h..(r + 1) * h]);
            w.extend_from_slice(&dwx[r * input..(r + 1) * input]);
        }
        weights.push(w);
        biases.push(dbias[gi * h..(gi + 1) * h].to_vec());
    }
    RecurrentGrads { xs: dx, weights, biases }
}
