//! Randomized correctness suites shared by the integration tests and the
//! acceptance runner. Every oracle here is written from the formulas,
//! without calling the code path it checks.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqbind::arch::{build_model, ArchSpec, ConvLayerSpec, HeadSpec, InputRepr, RecurrentKind};
use seqbind::eval::{roc_auc, wilcoxon_signed_rank_with, WilcoxonMethod};
use seqbind::grad::{grad_check, CellKind, ParamArray, ParamId, ParamStore, Tape, Tensor, Var};
use seqbind::hyper::HyperConfig;
use seqbind::layers::{
    self, conv1d, gru_step_vec, lstm_step_vec, maxpool1d, CellVars, ConvFilterBank, Direction, Padding,
    RecurrentCellParams,
};
use seqbind::seq::{dinuc_shuffle_str, dinucleotide_counts, RawSequence};
use seqbind::Result;

pub const GRAD_EPS: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Configurations whose kink margin is below this are redrawn.
pub const KINK_FLOOR: f64 = 10.0 * GRAD_EPS;

fn uniform(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn random_tensor(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(r, -scale, scale)).collect())
}

fn bases(r: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| b"ACGT"[r.random_range(0..4)] as char).collect()
}

/// `Σ y ⊙ weights`, a loss whose gradient reaches every output entry.
fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let m = tape.mul(y, w)?;
    Ok(tape.sum(m))
}

fn add_param(store: &mut ParamStore, name: &str, t: Tensor) -> ParamId {
    store.add(ParamArray::new(name, t, false)).unwrap()
}

fn add_cell(store: &mut ParamStore, prefix: &str, kind: CellKind, hidden: usize, input: usize, r: &mut impl Rng) {
    let p = RecurrentCellParams::random(kind, hidden, input, 0.8, r);
    for (g, name) in RecurrentCellParams::gate_names(kind).iter().enumerate() {
        add_param(store, &format!("{prefix}.W_{name}"), p.weights[g].clone());
        add_param(store, &format!("{prefix}.b_{name}"), p.biases[g].clone());
    }
}

pub const GRAD_CASES: [&str; 10] = [
    "conv1d", "maxpool", "gru_step", "lstm_step", "gru_sequence", "bilstm_sequence", "dense_bce", "dropout", "gather",
    "model",
];

#[derive(Debug, Clone)]
pub struct GradSuiteReport {
    pub configs: usize,
    pub entries: usize,
    pub redraws: usize,
    pub max_rel_error: f64,
    pub worst_case: &'static str,
    pub elapsed: Duration,
}

/// Checks one random configuration of `case`; `None` means the draw sat too
/// close to a kink.
fn grad_case(case: &str, r: &mut ChaCha8Rng) -> Result<Option<(f64, usize)>> {
    let mut store = ParamStore::new();
    let report = match case {
        "conv1d" => {
            let (b, n, k, m, d) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
            let padding = if r.random::<bool>() { Padding::Same } else { Padding::Valid };
            let l = (m - 1) * d + r.random_range(1..6);
            let x = add_param(&mut store, "x", random_tensor(r, &[b, l, n], 1.0));
            let w = add_param(&mut store, "w", random_tensor(r, &[k, m, n], 1.0));
            let bias = add_param(&mut store, "b", random_tensor(r, &[k], 0.5));
            let out_len = match padding {
                Padding::Same => l,
                Padding::Valid => l - (m - 1) * d,
            };
            let weights = random_tensor(r, &[b, out_len, k], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let (xv, wv, bv) = (tape.param(s, x), tape.param(s, w), tape.param(s, bias));
                let y = layers::conv1d_layer(tape, xv, wv, bv, d, padding)?;
                weighted_sum(tape, y, &weights)
            })?
        }
        "maxpool" => {
            let (b, c, window) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..5));
            let stride = r.random_range(1..=window);
            let l = window + r.random_range(0..8);
            let x = add_param(&mut store, "x", random_tensor(r, &[b, l, c], 1.0));
            let lo = (l - window) / stride + 1;
            let weights = random_tensor(r, &[b, lo, c], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let xv = tape.param(s, x);
                let y = tape.maxpool(xv, window, stride)?;
                weighted_sum(tape, y, &weights)
            })?
        }
        "gru_step" | "lstm_step" => {
            let kind = if case == "gru_step" { CellKind::Gru } else { CellKind::Lstm };
            let (b, h, input) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            add_cell(&mut store, "cell", kind, h, input, r);
            let x = add_param(&mut store, "x", random_tensor(r, &[b, input], 1.0));
            let h0 = add_param(&mut store, "h", random_tensor(r, &[b, h], 0.9));
            let c0 = (kind == CellKind::Lstm).then(|| add_param(&mut store, "c", random_tensor(r, &[b, h], 1.5)));
            let wh = random_tensor(r, &[b, h], 1.0);
            let wc = random_tensor(r, &[b, h], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let cell = CellVars::from_store(kind, h, tape, s, "cell")?;
                let (xv, hv) = (tape.param(s, x), tape.param(s, h0));
                match c0 {
                    None => {
                        let h1 = layers::gru_step(tape, xv, hv, &cell)?;
                        weighted_sum(tape, h1, &wh)
                    }
                    Some(c0) => {
                        let cv = tape.param(s, c0);
                        let (h1, c1) = layers::lstm_step(tape, xv, hv, cv, &cell)?;
                        let lh = weighted_sum(tape, h1, &wh)?;
                        let lc = weighted_sum(tape, c1, &wc)?;
                        tape.add(lh, lc)
                    }
                }
            })?
        }
        "gru_sequence" | "bilstm_sequence" => {
            let (b, t, h, input) = (r.random_range(1..3), r.random_range(1..6), r.random_range(1..4), r.random_range(1..4));
            let bi = case == "bilstm_sequence";
            let kind = if bi { CellKind::Lstm } else { CellKind::Gru };
            let direction = if r.random::<bool>() { Direction::Forward } else { Direction::Backward };
            add_cell(&mut store, "fwd", kind, h, input, r);
            if bi {
                add_cell(&mut store, "bwd", kind, h, input, r);
            }
            let x = add_param(&mut store, "x", random_tensor(r, &[b, t, input], 1.0));
            let weights = random_tensor(r, &[b, if bi { 2 * h } else { h }], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let fwd = CellVars::from_store(kind, h, tape, s, "fwd")?;
                let xv = tape.param(s, x);
                let y = if bi {
                    let bwd = CellVars::from_store(kind, h, tape, s, "bwd")?;
                    layers::birnn_run(tape, xv, &fwd, &bwd)?
                } else {
                    layers::rnn_run(tape, xv, &fwd, direction)?
                };
                weighted_sum(tape, y, &weights)
            })?
        }
        "dense_bce" => {
            let (b, n, hidden) = (r.random_range(2..6), r.random_range(1..5), r.random_range(1..5));
            let x = add_param(&mut store, "x", random_tensor(r, &[b, n], 1.0));
            let w1 = add_param(&mut store, "w1", random_tensor(r, &[hidden, n], 1.0));
            let b1 = add_param(&mut store, "b1", random_tensor(r, &[hidden], 0.5));
            let w2 = add_param(&mut store, "w2", random_tensor(r, &[1, hidden], 1.0));
            let b2 = add_param(&mut store, "b2", random_tensor(r, &[1], 0.5));
            let labels: Vec<f64> = (0..b).map(|_| f64::from(r.random_range(0..2u8))).collect();
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let (xv, w1v, b1v) = (tape.param(s, x), tape.param(s, w1), tape.param(s, b1));
                let hid = layers::dense(tape, xv, w1v, b1v, layers::Activation::Relu)?;
                let (w2v, b2v) = (tape.param(s, w2), tape.param(s, b2));
                let p = layers::dense(tape, hid, w2v, b2v, layers::Activation::Sigmoid)?;
                let p = tape.reshape(p, &[b])?;
                tape.bce(p, &labels)
            })?
        }
        "dropout" => {
            let (b, n) = (r.random_range(1..4), r.random_range(1..6));
            let keep = uniform(r, 0.3, 1.0);
            let mask = layers::dropout_mask(b * n, keep, r);
            let x = add_param(&mut store, "x", random_tensor(r, &[b, n], 1.0));
            let weights = random_tensor(r, &[b, n], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let xv = tape.param(s, x);
                let y = tape.tanh(xv);
                let y = tape.dropout_mask(y, mask.clone())?;
                weighted_sum(tape, y, &weights)
            })?
        }
        "gather" => {
            let (v, d, count) = (r.random_range(2..8), r.random_range(1..4), r.random_range(1..10));
            let indices: Vec<usize> = (0..count).map(|_| r.random_range(0..v)).collect();
            let table = add_param(&mut store, "table", random_tensor(r, &[v, d], 1.0));
            let weights = random_tensor(r, &[count, d], 1.0);
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let tv = tape.param(s, table);
                let rows = tape.gather(tv, &indices)?;
                let rows = tape.sigmoid(rows);
                weighted_sum(tape, rows, &weights)
            })?
        }
        "model" => {
            let recurrent = [RecurrentKind::None, RecurrentKind::Lstm, RecurrentKind::BiGru][r.random_range(0..3)];
            let spec = ArchSpec {
                name: "gradcheck".into(),
                input: InputRepr::OneHot,
                conv_layers: vec![ConvLayerSpec {
                    filters: Some(2),
                    window: Some(3),
                    dilation: r.random_range(1..3),
                }],
                recurrent,
                rnn_hidden: Some(2),
                head: if r.random::<bool>() { HeadSpec::Hidden(3) } else { HeadSpec::None },
                fine_tune_embedding: false,
            };
            let mut hyper = HyperConfig::default_for(InputRepr::OneHot);
            hyper.weight_init = seqbind::hyper::WeightInit::Normal;
            hyper.init_scale_motif = 0.7;
            hyper.init_scale_rnn = 0.7;
            hyper.init_scale_dense = 0.5;
            let seq_len = 12;
            let model = build_model(&spec, &hyper, seq_len, None, r.random())?;
            let seqs: Vec<RawSequence> = (0..3)
                .map(|i| RawSequence::new(format!("s{i}"), &bases(r, seq_len), (i % 2) as u8))
                .collect::<Result<_>>()?;
            let labels: Vec<f64> = seqs.iter().map(|s| f64::from(s.label)).collect();
            let inputs = model.encode(&seqs)?;
            let batch = model.batch(&inputs, &[0, 1, 2])?;
            let mut store = model.params.clone();
            grad_check(&mut store, GRAD_EPS, |tape, s| {
                let p = model.forward(tape, s, &batch, None::<&mut ChaCha8Rng>)?;
                tape.bce(p, &labels)
            })?
        }
        other => panic!("unknown gradient case {other}"),
    };
    if report.kink_margin < KINK_FLOOR {
        return Ok(None);
    }
    Ok(Some((report.max_rel_error, report.checked)))
}

/// `configs` random configurations, cycling through [`GRAD_CASES`].
pub fn gradient_suite(configs: usize, seed: u64) -> Result<GradSuiteReport> {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradSuiteReport {
        configs,
        entries: 0,
        redraws: 0,
        max_rel_error: 0.0,
        worst_case: GRAD_CASES[0],
        elapsed: Duration::ZERO,
    };
    for i in 0..configs {
        let case = GRAD_CASES[i % GRAD_CASES.len()];
        loop {
            match grad_case(case, &mut r)? {
                None => report.redraws += 1,
                Some((err, n)) => {
                    if err > report.max_rel_error {
                        report.max_rel_error = err;
                        report.worst_case = case;
                    }
                    report.entries += n;
                    break;
                }
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ_j W[row, j] · v[j]` over the concatenation `v = [h, x]`.
fn gate(w: &Tensor, b: &Tensor, row: usize, h: &[f64], x: &[f64]) -> f64 {
    let width = h.len() + x.len();
    let wr = &w.data()[row * width..(row + 1) * width];
    let mut acc = b.data()[row];
    for j in 0..h.len() {
        acc += wr[j] * h[j];
    }
    for j in 0..x.len() {
        acc += wr[h.len() + j] * x[j];
    }
    acc
}

pub fn gru_oracle(x: &[f64], h: &[f64], p: &RecurrentCellParams) -> Vec<f64> {
    let n = p.hidden;
    let z: Vec<f64> = (0..n).map(|i| sig(gate(&p.weights[0], &p.biases[0], i, h, x))).collect();
    let r: Vec<f64> = (0..n).map(|i| sig(gate(&p.weights[1], &p.biases[1], i, h, x))).collect();
    let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
    (0..n)
        .map(|i| {
            let cand = gate(&p.weights[2], &p.biases[2], i, &rh, x).tanh();
            (1.0 - z[i]) * h[i] + z[i] * cand
        })
        .collect()
}

pub fn lstm_oracle(x: &[f64], h: &[f64], c: &[f64], p: &RecurrentCellParams) -> (Vec<f64>, Vec<f64>) {
    let mut h2 = Vec::new();
    let mut c2 = Vec::new();
    for i in 0..p.hidden {
        let f = sig(gate(&p.weights[0], &p.biases[0], i, h, x));
        let ig = sig(gate(&p.weights[1], &p.biases[1], i, h, x));
        let o = sig(gate(&p.weights[2], &p.biases[2], i, h, x));
        let cand = gate(&p.weights[3], &p.biases[3], i, h, x).tanh();
        let cn = f * c[i] + ig * cand;
        c2.push(cn);
        h2.push(o * cn.tanh());
    }
    (h2, c2)
}

/// Direct evaluation of the dilated ReLU convolution on an `N × L` input.
pub fn conv1d_oracle(x: &Tensor, bank: &ConvFilterBank, padding: Padding) -> Vec<Vec<f64>> {
    let (n, l) = (x.shape()[0], x.shape()[1]);
    let w = &bank.weight;
    let (k, m) = (w.shape()[0], w.shape()[1]);
    let d = bank.dilation;
    let span = (m - 1) * d;
    let left = match padding {
        Padding::Same => span / 2,
        Padding::Valid => 0,
    };
    let out_len = match padding {
        Padding::Same => l,
        Padding::Valid => l - span,
    };
    let mut out = vec![vec![0.0; out_len]; k];
    for f in 0..k {
        for i in 0..out_len {
            let mut acc = bank.bias.data()[f];
            for j in 0..m {
                let pos = i as isize + (j * d) as isize - left as isize;
                if pos < 0 || pos >= l as isize {
                    continue;
                }
                for c in 0..n {
                    acc += w.data()[(f * m + j) * n + c] * x.data()[c * l + pos as usize];
                }
            }
            out[f][i] = acc.max(0.0);
        }
    }
    out
}

pub fn maxpool_oracle(y: &Tensor, window: usize, stride: usize) -> Vec<Vec<f64>> {
    let (k, l) = (y.shape()[0], y.shape()[1]);
    let mut out = vec![Vec::new(); k];
    for (f, row) in out.iter_mut().enumerate() {
        let mut start = 0;
        while start + window <= l {
            let vals = &y.data()[f * l + start..f * l + start + window];
            row.push(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            start += stride;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReport {
    pub instances: usize,
    pub conv1d: f64,
    pub maxpool1d: f64,
    pub gru_step: f64,
    pub lstm_step: f64,
}

impl OracleReport {
    pub fn worst(&self) -> f64 {
        self.conv1d.max(self.maxpool1d).max(self.gru_step).max(self.lstm_step)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute deviation from the straight-line oracles over
/// `instances` random draws of each operation.
pub fn oracle_suite(instances: usize, seed: u64) -> Result<OracleReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = OracleReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let (n, k, m, d) = (r.random_range(1..6), r.random_range(1..5), r.random_range(1..8), r.random_range(1..4));
        let padding = if r.random::<bool>() { Padding::Same } else { Padding::Valid };
        let l = (m - 1) * d + r.random_range(1..20);
        let x = random_tensor(&mut r, &[n, l], 2.0);
        let bank = ConvFilterBank::new(random_tensor(&mut r, &[k, m, n], 1.0), random_tensor(&mut r, &[k], 1.0), d)?;
        let got = conv1d(&x, &bank, padding)?;
        let want: Vec<f64> = conv1d_oracle(&x, &bank, padding).concat();
        rep.conv1d = rep.conv1d.max(max_abs_diff(got.data(), &want));

        let (k, window) = (r.random_range(1..5), r.random_range(1..6));
        let stride = r.random_range(1..=window);
        let l = window + r.random_range(0..20);
        let y = random_tensor(&mut r, &[k, l], 3.0);
        let got = maxpool1d(&y, window, stride)?;
        rep.maxpool1d = rep.maxpool1d.max(max_abs_diff(got.data(), &maxpool_oracle(&y, window, stride).concat()));

        let (h, input) = (r.random_range(1..8), r.random_range(1..8));
        let p = RecurrentCellParams::random(CellKind::Gru, h, input, 1.0, &mut r);
        let xs: Vec<f64> = (0..input).map(|_| uniform(&mut r, -2.0, 2.0)).collect();
        let hs: Vec<f64> = (0..h).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        rep.gru_step = rep.gru_step.max(max_abs_diff(&gru_step_vec(&xs, &hs, &p)?, &gru_oracle(&xs, &hs, &p)));

        let p = RecurrentCellParams::random(CellKind::Lstm, h, input, 1.0, &mut r);
        let cs: Vec<f64> = (0..h).map(|_| uniform(&mut r, -3.0, 3.0)).collect();
        let (h2, c2) = lstm_step_vec(&xs, &hs, &cs, &p)?;
        let (oh, oc) = lstm_oracle(&xs, &hs, &cs, &p);
        rep.lstm_step = rep.lstm_step.max(max_abs_diff(&h2, &oh)).max(max_abs_diff(&c2, &oc));
    }
    Ok(rep)
}

/// Twice the pairwise win count: 2 per positive above a negative, 1 per tie.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice: u64 = 0;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

#[derive(Debug, Clone, Copy)]
pub struct AucOracleReport {
    pub sets: usize,
    pub mismatches: usize,
    pub sets_with_ties: usize,
}

pub fn auc_oracle_suite(sets: usize, seed: u64) -> Result<AucOracleReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = AucOracleReport {
        sets,
        mismatches: 0,
        sets_with_ties: 0,
    };
    for s in 0..sets {
        let n = r.random_range(2..=500);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Coarse grids force many tied scores in most sets.
        let levels = [3, 10, 50, 1_000_000][s % 4];
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels)) / f64::from(levels)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            rep.sets_with_ties += 1;
        }
        if roc_auc(&scores, &labels)? != auc_pairwise(&scores, &labels) {
            rep.mismatches += 1;
        }
    }
    Ok(rep)
}

/// Two-sided exact p by listing all `2^n` sign assignments of the midranks
/// of the nonzero `|a - b|`.
pub fn wilcoxon_enumerated(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let mut at_most = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            at_most += 1;
        }
    }
    (w, (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0))
}

#[derive(Debug, Clone, Copy)]
pub struct WilcoxonReport {
    pub cases: usize,
    pub max_p_error: f64,
    pub statistic_mismatches: usize,
    pub five_case_p: f64,
}

/// `per_n` random cases for every n in 1..=12 (ties and zero differences
/// included), plus the `a - b = (1, 2, 3, 4, 5)` case.
pub fn wilcoxon_suite(per_n: usize, seed: u64) -> Result<WilcoxonReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = WilcoxonReport {
        cases: 0,
        max_p_error: 0.0,
        statistic_mismatches: 0,
        five_case_p: f64::NAN,
    };
    for n in 1..=12usize {
        for c in 0..per_n {
            let b: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let mut diffs: Vec<f64> = (0..n)
                .map(|_| {
                    if c % 2 == 0 {
                        f64::from(r.random_range(-4..=4)) / 4.0
                    } else {
                        uniform(&mut r, -1.0, 1.0)
                    }
                })
                .collect();
            if diffs.iter().all(|&d| d == 0.0) {
                diffs[0] = 0.25;
            }
            let a: Vec<f64> = b.iter().zip(&diffs).map(|(x, d)| x + d).collect();
            // Differences as the tested code sees them, after rounding.
            let seen: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let got = wilcoxon_signed_rank_with(&a, &b, WilcoxonMethod::Exact)?;
            let (w, p) = wilcoxon_enumerated(&seen);
            rep.cases += 1;
            rep.max_p_error = rep.max_p_error.max((got.p_value - p).abs());
            if (got.statistic - w).abs() > 1e-9 {
                rep.statistic_mismatches += 1;
            }
        }
    }
    let five = wilcoxon_signed_rank_with(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], WilcoxonMethod::Auto)?;
    rep.five_case_p = five.p_value;
    Ok(rep)
}

#[derive(Debug, Clone, Copy)]
pub struct ShuffleReport {
    pub sequences: usize,
    pub count_failures: usize,
    pub endpoint_failures: usize,
}

pub fn shuffle_suite(sequences: usize, length: usize, seed: u64) -> ShuffleReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ShuffleReport {
        sequences,
        count_failures: 0,
        endpoint_failures: 0,
    };
    for _ in 0..sequences {
        let s = bases(&mut r, length);
        let t = dinuc_shuffle_str(&s, &mut r);
        if dinucleotide_counts(&s) != dinucleotide_counts(&t) || t.len() != s.len() {
            rep.count_failures += 1;
        }
        if s.as_bytes().first() != t.as_bytes().first() || s.as_bytes().last() != t.as_bytes().last() {
            rep.endpoint_failures += 1;
        }
    }
    rep
}
