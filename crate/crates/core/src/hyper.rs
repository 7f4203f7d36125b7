//! Hyperparameter configurations and the random-search sampling space.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::arch::InputRepr;
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightInit {
    Xavier,
    Normal,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::invalid(format!(concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }
    };
}
pub(crate) use text_enum;

text_enum!(OptimizerKind { Sgd => "sgd", Adagrad => "adagrad" });
text_enum!(WeightInit { Xavier => "xavier", Normal => "normal" });

pub const FILTER_CHOICES: [usize; 2] = [16, 32];
pub const RNN_HIDDEN_CHOICES: [usize; 4] = [20, 50, 80, 100];
pub const HEAD_CHOICES: [Option<usize>; 3] = [None, Some(32), Some(64)];
pub const DROPOUT_KEEP_CHOICES: [f64; 5] = [0.4, 0.55, 0.7, 0.85, 1.0];
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-3, 1e-1);
pub const MOMENTUM_RANGE: (f64, f64) = (0.95, 0.99);
pub const MOTIF_SCALE_RANGE: (f64, f64) = (1e-6, 1e-1);
pub const RNN_SCALE_RANGE: (f64, f64) = (1e-6, 1e-1);
pub const DENSE_SCALE_RANGE: (f64, f64) = (1e-5, 1e-1);
pub const WEIGHT_DECAY_RANGE: (f64, f64) = (1e-10, 1e-1);
pub const EMBEDDING_DIM: usize = 50;
pub const KMER_K: usize = 3;
pub const KMER_STRIDE: usize = 1;
pub const POOL_WINDOW: usize = 3;
pub const POOL_STRIDE: usize = 1;
pub const MOTIF_LENGTH_ONEHOT: usize = 24;
pub const MOTIF_LENGTH_EMBEDDING: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    /// Window of the first convolutional layer.
    pub motif_length: usize,
    /// Filters in the first convolutional layer.
    pub n_filters: usize,
    pub rnn_hidden: usize,
    /// Hidden dense layer width; `None` feeds the sigmoid output directly.
    pub head_hidden: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD only.
    pub momentum: f64,
    pub weight_init: WeightInit,
    pub init_scale_motif: f64,
    pub init_scale_rnn: f64,
    pub init_scale_dense: f64,
    pub weight_decay: f64,
    pub dropout_keep: f64,
    /// Learning steps chosen by calibration; `None` before calibration.
    pub selected_steps: Option<usize>,
    pub embedding_dim: usize,
    pub kmer_k: usize,
    pub kmer_stride: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// One draw from the search space. Draw order is fixed, so a seeded
/// generator reproduces the same sequence of configurations.
pub fn sample_hyperparams<R: Rng + ?Sized>(input: InputRepr, rng: &mut R) -> HyperConfig {
    let n_filters = *FILTER_CHOICES.choose(rng).expect("nonempty");
    let rnn_hidden = *RNN_HIDDEN_CHOICES.choose(rng).expect("nonempty");
    let head_hidden = *HEAD_CHOICES.choose(rng).expect("nonempty");
    let optimizer = if rng.random_bool(0.5) {
        OptimizerKind::Sgd
    } else {
        OptimizerKind::Adagrad
    };
    let learning_rate = log_uniform(rng, LEARNING_RATE_RANGE);
    let momentum = MOMENTUM_RANGE.0 + (MOMENTUM_RANGE.1 - MOMENTUM_RANGE.0) * rng.random::<f64>().sqrt();
    let weight_init = if rng.random_bool(0.5) {
        WeightInit::Xavier
    } else {
        WeightInit::Normal
    };
    let init_scale_motif = log_uniform(rng, MOTIF_SCALE_RANGE);
    let init_scale_rnn = log_uniform(rng, RNN_SCALE_RANGE);
    let init_scale_dense = log_uniform(rng, DENSE_SCALE_RANGE);
    let weight_decay = log_uniform(rng, WEIGHT_DECAY_RANGE);
    let dropout_keep = *DROPOUT_KEEP_CHOICES.choose(rng).expect("nonempty");
    HyperConfig {
        motif_length: default_motif_length(input),
        n_filters,
        rnn_hidden,
        head_hidden,
        optimizer,
        learning_rate,
        momentum,
        weight_init,
        init_scale_motif,
        init_scale_rnn,
        init_scale_dense,
        weight_decay,
        dropout_keep,
        selected_steps: None,
        embedding_dim: EMBEDDING_DIM,
        kmer_k: KMER_K,
        kmer_stride: KMER_STRIDE,
        pool_window: POOL_WINDOW,
        pool_stride: POOL_STRIDE,
    }
}

pub fn default_motif_length(input: InputRepr) -> usize {
    match input {
        InputRepr::OneHot => MOTIF_LENGTH_ONEHOT,
        InputRepr::Embedding => MOTIF_LENGTH_EMBEDDING,
    }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

impl HyperConfig {
    /// A mid-space configuration, useful as a starting point for
    /// hand-specified training.
    pub fn default_for(input: InputRepr) -> Self {
        HyperConfig {
            motif_length: default_motif_length(input),
            n_filters: 16,
            rnn_hidden: 20,
            head_hidden: Some(32),
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.01,
            momentum: 0.98,
            weight_init: WeightInit::Xavier,
            init_scale_motif: 1e-2,
            init_scale_rnn: 1e-2,
            init_scale_dense: 1e-2,
            weight_decay: 1e-6,
            dropout_keep: 1.0,
            selected_steps: None,
            embedding_dim: EMBEDDING_DIM,
            kmer_k: KMER_K,
            kmer_stride: KMER_STRIDE,
            pool_window: POOL_WINDOW,
            pool_stride: POOL_STRIDE,
        }
    }

    /// Checks every field against the sampling space for `input`.
    pub fn validate_domain(&self, input: InputRepr) -> Result<()> {
        let mut bad = Vec::new();
        if self.motif_length != default_motif_length(input) {
            bad.push("motif_length");
        }
        if !FILTER_CHOICES.contains(&self.n_filters) {
            bad.push("n_filters");
        }
        if !RNN_HIDDEN_CHOICES.contains(&self.rnn_hidden) {
            bad.push("rnn_hidden");
        }
        if !HEAD_CHOICES.contains(&self.head_hidden) {
            bad.push("head_hidden");
        }
        if !in_range(self.learning_rate, LEARNING_RATE_RANGE) {
            bad.push("learning_rate");
        }
        if !in_range(self.momentum, MOMENTUM_RANGE) {
            bad.push("momentum");
        }
        if !in_range(self.init_scale_motif, MOTIF_SCALE_RANGE) {
            bad.push("init_scale_motif");
        }
        if !in_range(self.init_scale_rnn, RNN_SCALE_RANGE) {
            bad.push("init_scale_rnn");
        }
        if !in_range(self.init_scale_dense, DENSE_SCALE_RANGE) {
            bad.push("init_scale_dense");
        }
        if !in_range(self.weight_decay, WEIGHT_DECAY_RANGE) {
            bad.push("weight_decay");
        }
        if !DROPOUT_KEEP_CHOICES.contains(&self.dropout_keep) {
            bad.push("dropout_keep");
        }
        if self.embedding_dim != EMBEDDING_DIM
            || self.kmer_k != KMER_K
            || self.kmer_stride != KMER_STRIDE
            || self.pool_window != POOL_WINDOW
            || self.pool_stride != POOL_STRIDE
        {
            bad.push("fixed settings");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("hyperparameters out of domain: {}", bad.join(", "))))
        }
    }

    /// Structural sanity independent of the search space.
    pub fn check(&self) -> Result<()> {
        let positive = [
            self.motif_length,
            self.n_filters,
            self.rnn_hidden,
            self.embedding_dim,
            self.kmer_k,
            self.kmer_stride,
            self.pool_window,
            self.pool_stride,
        ];
        if positive.contains(&0) || self.head_hidden == Some(0) {
            return Err(Error::invalid("hyperparameter sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::invalid("learning rate must be > 0 and dropout keep in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("momentum must be in [0, 1) and weight decay >= 0"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
        vec![
            ("motif_length".into(), self.motif_length.to_string()),
            ("n_filters".into(), self.n_filters.to_string()),
            ("rnn_hidden".into(), self.rnn_hidden.to_string()),
            ("head_hidden".into(), opt(self.head_hidden)),
            ("optimizer".into(), self.optimizer.to_string()),
            ("learning_rate".into(), fmt_f64(self.learning_rate)),
            ("momentum".into(), fmt_f64(self.momentum)),
            ("weight_init".into(), self.weight_init.to_string()),
            ("init_scale_motif".into(), fmt_f64(self.init_scale_motif)),
            ("init_scale_rnn".into(), fmt_f64(self.init_scale_rnn)),
            ("init_scale_dense".into(), fmt_f64(self.init_scale_dense)),
            ("weight_decay".into(), fmt_f64(self.weight_decay)),
            ("dropout_keep".into(), fmt_f64(self.dropout_keep)),
            ("selected_steps".into(), opt(self.selected_steps)),
            ("embedding_dim".into(), self.embedding_dim.to_string()),
            ("kmer_k".into(), self.kmer_k.to_string()),
            ("kmer_stride".into(), self.kmer_stride.to_string()),
            ("pool_window".into(), self.pool_window.to_string()),
            ("pool_stride".into(), self.pool_stride.to_string()),
        ]
    }

    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let opt = |k: &str| -> Result<Option<usize>> {
            match kv.raw(&key(k))? {
                "none" => Ok(None),
                _ => Ok(Some(kv.get(&key(k))?)),
            }
        };
        let h = HyperConfig {
            motif_length: kv.get(&key("motif_length"))?,
            n_filters: kv.get(&key("n_filters"))?,
            rnn_hidden: kv.get(&key("rnn_hidden"))?,
            head_hidden: opt("head_hidden")?,
            optimizer: kv.raw(&key("optimizer"))?.parse()?,
            learning_rate: kv.get(&key("learning_rate"))?,
            momentum: kv.get(&key("momentum"))?,
            weight_init: kv.raw(&key("weight_init"))?.parse()?,
            init_scale_motif: kv.get(&key("init_scale_motif"))?,
            init_scale_rnn: kv.get(&key("init_scale_rnn"))?,
            init_scale_dense: kv.get(&key("init_scale_dense"))?,
            weight_decay: kv.get(&key("weight_decay"))?,
            dropout_keep: kv.get(&key("dropout_keep"))?,
            selected_steps: opt("selected_steps")?,
            embedding_dim: kv.get(&key("embedding_dim"))?,
            kmer_k: kv.get(&key("kmer_k"))?,
            kmer_stride: kv.get(&key("kmer_stride"))?,
            pool_window: kv.get(&key("pool_window"))?,
            pool_stride: kv.get(&key("pool_stride"))?,
        };
        h.check()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::render;
    use crate::rng;

    #[test]
    fn samples_stay_in_domain() {
        let mut r = rng::stream(11, &[]);
        let mut log_lr = Vec::new();
        for i in 0..10_000 {
            let input = if i % 2 == 0 { InputRepr::OneHot } else { InputRepr::Embedding };
            let h = sample_hyperparams(input, &mut r);
            h.validate_domain(input).unwrap();
            assert!((1e-3..=1e-1).contains(&h.learning_rate));
            log_lr.push(h.learning_rate.ln());
        }
        let n = log_lr.len() as f64;
        let mean = log_lr.iter().sum::<f64>() / n;
        let var = log_lr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (1e-3f64.ln() + 1e-1f64.ln()) / 2.0;
        assert!((mean - target).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn embedding_input_uses_short_motifs() {
        let mut r = rng::stream(2, &[]);
        for _ in 0..100 {
            assert_eq!(sample_hyperparams(InputRepr::Embedding, &mut r).motif_length, 10);
            assert_eq!(sample_hyperparams(InputRepr::OneHot, &mut r).motif_length, 24);
        }
    }

    #[test]
    fn kv_roundtrip() {
        let mut r = rng::stream(3, &[]);
        let mut h = sample_hyperparams(InputRepr::OneHot, &mut r);
        h.selected_steps = Some(15_000);
        let text = render(&h.to_kv());
        let back = HyperConfig::from_kv(&KvMap::parse(&text).unwrap(), "").unwrap();
        assert_eq!(back, h);
    }
}
