//! Loss, optimizers, regularization and the checkpointed training loop.

use std::fmt::Write as _;

use crate::arch::{EncodedInputs, Model};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::grad::{bce_term, ParamStore, Tape};
use crate::hyper::OptimizerKind;
use crate::rng;
use crate::seq::{BatchStream, Dataset};

pub const BATCH_SIZE: usize = 128;
pub const MAX_STEPS: usize = 40_000;
pub const EVAL_EVERY: usize = 5_000;
pub const RECURRENT_CLIP_NORM: f64 = 5.0;
pub const ADAGRAD_EPS: f64 = 1e-10;

/// Binary cross-entropy of one prediction, with `p` clamped away from 0
/// and 1.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    bce_term(p, y)
}

pub fn bce_mean(ps: &[f64], ys: &[f64]) -> f64 {
    ps.iter().zip(ys).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / ps.len() as f64
}

/// `v ← μ·v + g; w ← w − lr·v`.
pub fn sgd_step(params: &mut ParamStore, velocity: &mut [Vec<f64>], lr: f64, momentum: f64) {
    for (p, v) in params.iter_mut().zip(velocity) {
        let (w, g) = p.split_mut();
        for ((w, g), v) in w.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
    }
}

/// `G ← G + g²; w ← w − lr·g / (√G + 1e-10)`.
pub fn adagrad_step(params: &mut ParamStore, sum_sq: &mut [Vec<f64>], lr: f64) {
    for (p, acc) in params.iter_mut().zip(sum_sq) {
        let (w, g) = p.split_mut();
        for ((w, g), a) in w.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
            *a += g * g;
            *w -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        }
    }
}

/// Adds the gradient of `λ·‖W‖²` to every decayed parameter.
pub fn apply_weight_decay(params: &mut ParamStore, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for p in params.iter_mut().filter(|p| p.decay) {
        let (w, g) = p.split_mut();
        for (g, w) in g.iter_mut().zip(w.iter()) {
            *g += 2.0 * lambda * w;
        }
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns whether clipping happened.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> bool {
    let norm = params.grad_norm();
    if norm <= max_norm {
        return false;
    }
    let s = max_norm / norm;
    for p in params.iter_mut() {
        p.grad_mut().iter_mut().for_each(|g| *g *= s);
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd { lr: f64, momentum: f64, velocity: Vec<Vec<f64>> },
    Adagrad { lr: f64, sum_sq: Vec<Vec<f64>> },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd {
                lr,
                momentum,
                velocity: zeros,
            },
            OptimizerKind::Adagrad => OptimizerState::Adagrad { lr, sum_sq: zeros },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        match self {
            OptimizerState::Sgd { lr, momentum, velocity } => sgd_step(params, velocity, *lr, *momentum),
            OptimizerState::Adagrad { lr, sum_sq } => adagrad_step(params, sum_sq, *lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: MAX_STEPS,
            eval_every: EVAL_EVERY,
            batch_size: BATCH_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_steps == 0 || self.eval_every == 0 || self.batch_size == 0 {
            return Err(Error::invalid("steps, evaluation interval and batch size must be positive"));
        }
        Ok(())
    }

    /// Checkpoint steps: every multiple of `eval_every` up to `max_steps`.
    pub fn checkpoints(&self) -> Vec<usize> {
        (1..=self.max_steps / self.eval_every).map(|i| i * self.eval_every).collect()
    }

    /// Nearest checkpoint step to `steps` (halves round up), clamped to the
    /// checkpoint grid.
    pub fn round_to_grid(&self, steps: f64) -> usize {
        let cells = (steps / self.eval_every as f64 + 0.5).floor() as usize;
        let max_cells = (self.max_steps / self.eval_every).max(1);
        cells.clamp(1, max_cells) * self.eval_every
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    /// Mean minibatch loss since the previous row.
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub seed: u64,
    pub optimizer: OptimizerState,
    /// Validation AUC at each checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
    pub metrics: Vec<MetricRow>,
    /// `(step, val_auc)` of the retained snapshot.
    pub best: Option<(usize, f64)>,
    pub clipped_steps: usize,
}

impl TrainState {
    pub fn metrics_tsv(&self, header: bool) -> String {
        let mut out = String::new();
        if header {
            out.push_str("step\ttrain_loss\tval_auc\n");
        }
        for m in &self.metrics {
            let auc = m.val_auc.map_or("NA".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(out, "{}\t{:.6}\t{auc}", m.step, m.train_loss);
        }
        out
    }
}

/// Trains `model` in place on `train`. With a validation set the model ends
/// at the parameters of the best checkpoint (ties go to the earlier step)
/// and `trained_steps` records that checkpoint; without one it runs exactly
/// `config.max_steps` steps.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainState> {
    config.check()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let inputs = model.encode(&train.sequences)?;
    let labels: Vec<f64> = train.sequences.iter().map(|s| s.label as f64).collect();
    let val = validation
        .map(|v| -> Result<(EncodedInputs, Vec<u8>)> { Ok((model.encode(&v.sequences)?, v.labels())) })
        .transpose()?;

    let clip = model.plan().cell.is_some().then_some(RECURRENT_CLIP_NORM);
    let hyper = model.hyper.clone();
    let mut state = TrainState {
        step: 0,
        seed,
        optimizer: OptimizerState::new(hyper.optimizer, hyper.learning_rate, hyper.momentum, &model.params),
        checkpoints: Vec::new(),
        metrics: Vec::new(),
        best: None,
        clipped_steps: 0,
    };
    let mut batches = BatchStream::new(train.len(), config.batch_size, rng::derive_seed(seed, &[rng::BATCH]));
    let mut drop_rng = rng::stream(seed, &[rng::DROPOUT]);
    let mut best_params: Option<ParamStore> = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for step in 1..=config.max_steps {
        let idx = batches.next().expect("endless stream");
        let batch = model.batch(&inputs, &idx)?;
        let ys: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let p = model.forward(&mut tape, &model.params, &batch, Some(&mut drop_rng))?;
        let loss = tape.bce(p, &ys)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "training loss".into(),
            });
        }
        tape.backward(loss, &mut model.params)?;
        drop(tape);
        apply_weight_decay(&mut model.params, hyper.weight_decay);
        if !model.params.grad_norm().is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "gradient".into(),
            });
        }
        if let Some(max) = clip {
            if clip_grad_norm(&mut model.params, max) {
                state.clipped_steps += 1;
                log::debug!("step {step}: gradient clipped to norm {max}");
            }
        }
        state.optimizer.step(&mut model.params);
        state.step = step;
        loss_sum += loss_value;
        loss_n += 1;

        if step % config.eval_every == 0 || step == config.max_steps {
            let val_auc = match &val {
                Some((enc, ys)) if step % config.eval_every == 0 => {
                    let all: Vec<usize> = (0..ys.len()).collect();
                    let scores = model.predict_encoded(enc, &all)?;
                    if scores.iter().any(|s| !s.is_finite()) {
                        return Err(Error::NonFinite {
                            step,
                            what: "validation scores".into(),
                        });
                    }
                    let auc = roc_auc(&scores, ys)?;
                    state.checkpoints.push((step, auc));
                    if state.best.is_none_or(|(_, b)| auc > b) {
                        state.best = Some((step, auc));
                        best_params = Some(model.params.clone());
                    }
                    Some(auc)
                }
                _ => None,
            };
            state.metrics.push(MetricRow {
                step,
                train_loss: loss_sum / loss_n as f64,
                val_auc,
            });
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    if state.clipped_steps > 0 {
        log::info!(
            "gradient norm clipped at {RECURRENT_CLIP_NORM} on {} of {} steps",
            state.clipped_steps,
            state.step
        );
    }
    match (best_params, state.best) {
        (Some(p), Some((step, _))) => {
            model.params.copy_values_from(&p)?;
            model.trained_steps = step;
        }
        _ => model.trained_steps = state.step,
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{ParamArray, Tensor};

    fn store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add(ParamArray::new("w", Tensor::vector(vec![w]), true)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.iter_mut().next().unwrap().grad_mut()[0] = g;
    }

    fn w(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().values()[0]
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0, 1.0) < 1e-11);
        let (a, b) = (bce_loss(0.3, 1.0), bce_loss(0.8, 0.0));
        assert!((bce_mean(&[0.3, 0.8], &[1.0, 0.0]) - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn sgd_examples() {
        let mut s = store(1.0);
        let mut v = vec![vec![0.0]];
        set_grad(&mut s, 2.0);
        sgd_step(&mut s, &mut v, 0.1, 0.0);
        assert!((w(&s) - 0.8).abs() < 1e-15);

        let mut s = store(0.0);
        let mut v = vec![vec![0.0]];
        set_grad(&mut s, 1.0);
        sgd_step(&mut s, &mut v, 0.1, 0.9);
        assert!((w(&s) + 0.1).abs() < 1e-15);
        sgd_step(&mut s, &mut v, 0.1, 0.9);
        assert!((w(&s) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adagrad_first_step() {
        let mut s = store(1.0);
        let mut g2 = vec![vec![0.0]];
        set_grad(&mut s, 3.0);
        adagrad_step(&mut s, &mut g2, 0.1);
        assert!((1.0 - w(&s) - 0.1 * 3.0 / (3.0 + 1e-10)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adagrad] {
            let mut s = store(0.7);
            let mut opt = OptimizerState::new(kind, 0.1, 0.9, &s);
            opt.step(&mut s);
            assert_eq!(w(&s), 0.7);
        }
    }

    #[test]
    fn weight_decay_shrinks_monotonically() {
        let mut s = ParamStore::new();
        s.add(ParamArray::new("w", Tensor::vector(vec![1.5, -2.0, 0.3]), true)).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.05, 0.0, &s);
        let mut prev: Vec<f64> = s.iter().next().unwrap().values().iter().map(|v| v.abs()).collect();
        for _ in 0..50 {
            s.zero_grads();
            apply_weight_decay(&mut s, 0.1);
            opt.step(&mut s);
            let now: Vec<f64> = s.iter().next().unwrap().values().iter().map(|v| v.abs()).collect();
            assert!(now.iter().zip(&prev).all(|(a, b)| a < b));
            prev = now;
        }
    }

    #[test]
    fn clipping() {
        let mut s = ParamStore::new();
        s.add(ParamArray::new("w", Tensor::vector(vec![0.0, 0.0]), true)).unwrap();
        s.iter_mut().next().unwrap().grad_mut().copy_from_slice(&[3.0, 4.0]);
        assert!(clip_grad_norm(&mut s, 1.0));
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
        assert!(!clip_grad_norm(&mut s, 5.0));
    }

    #[test]
    fn checkpoint_grid() {
        let c = TrainConfig::default();
        assert_eq!(c.checkpoints().len(), 8);
        assert_eq!(c.round_to_grid(12_500.0), 15_000);
        assert_eq!(c.round_to_grid(12_499.0), 10_000);
        assert_eq!(c.round_to_grid(100.0), 5_000);
        assert_eq!(c.round_to_grid(90_000.0), 40_000);
    }
}
