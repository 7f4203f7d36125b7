//! Declarative architecture specs, the nine named presets, and the model
//! they expand into.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grad::{ParamArray, ParamId, ParamStore, Tape, Tensor, Var};
use crate::hyper::{text_enum, HyperConfig, WeightInit};
use crate::kv::KvMap;
use crate::layers::{self, Activation, CellKind, CellVars, ConvFilterBank, Padding};
use crate::rng;
use crate::seq::{num_windows, onehot_positions, tokens_of, RawSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputRepr {
    OneHot,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecurrentKind {
    None,
    Lstm,
    BiLstm,
    Gru,
    BiGru,
}

text_enum!(InputRepr { OneHot => "onehot", Embedding => "embedding" });
text_enum!(RecurrentKind { None => "none", Lstm => "lstm", BiLstm => "bilstm", Gru => "gru", BiGru => "bigru" });

impl RecurrentKind {
    pub fn cell(self) -> Option<CellKind> {
        match self {
            RecurrentKind::None => None,
            RecurrentKind::Lstm | RecurrentKind::BiLstm => Some(CellKind::Lstm),
            RecurrentKind::Gru | RecurrentKind::BiGru => Some(CellKind::Gru),
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, RecurrentKind::BiLstm | RecurrentKind::BiGru)
    }
}

/// One convolutional layer. `None` sizes are filled from the
/// hyperparameters when the model is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filters: Option<usize>,
    pub window: Option<usize>,
    pub dilation: usize,
}

impl ConvLayerSpec {
    pub fn auto(dilation: usize) -> Self {
        ConvLayerSpec {
            filters: None,
            window: None,
            dilation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpec {
    /// Hidden width taken from the hyperparameters.
    Auto,
    /// Sigmoid output directly on the features.
    None,
    Hidden(usize),
}

impl fmt::Display for HeadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadSpec::Auto => f.write_str("auto"),
            HeadSpec::None => f.write_str("none"),
            HeadSpec::Hidden(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for HeadSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(HeadSpec::Auto),
            "none" => Ok(HeadSpec::None),
            n => n
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(HeadSpec::Hidden)
                .ok_or_else(|| Error::invalid(format!("bad head {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub input: InputRepr,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub recurrent: RecurrentKind,
    /// `None` takes the hidden size from the hyperparameters.
    pub rnn_hidden: Option<usize>,
    pub head: HeadSpec,
    /// Train the embedding table along with the network instead of keeping
    /// the word2vec vectors fixed.
    pub fine_tune_embedding: bool,
}

pub const PRESET_NAMES: [&str; 9] = [
    "DeepBind",
    "DeepBind*",
    "Dilated",
    "DanQ",
    "DanQ*",
    "DeepBind-E*",
    "KEGRU",
    "ECLSTM",
    "ECBLSTM",
];

/// Window of every convolutional layer after the first.
pub const LATER_LAYER_WINDOW: usize = 5;

/// Initial bias pushing the recurrent state toward retention: added to the
/// LSTM forget gate and subtracted from the GRU update gate. With zero biases
/// half of the state is lost per step and nothing from mid-sequence survives
/// to the final hidden state.
pub const MEMORY_GATE_BIAS: f64 = 1.0;

pub fn preset(name: &str) -> Result<ArchSpec> {
    use InputRepr::*;
    use RecurrentKind as R;
    let (input, dilations, recurrent): (InputRepr, &[usize], RecurrentKind) = match name {
        "DeepBind" => (OneHot, &[1], R::None),
        "DeepBind*" => (OneHot, &[1, 1, 1], R::None),
        "Dilated" => (OneHot, &[1, 2, 2], R::None),
        "DanQ" => (OneHot, &[1], R::BiLstm),
        "DanQ*" => (OneHot, &[1, 1, 1], R::BiLstm),
        "DeepBind-E*" => (Embedding, &[1, 1, 1], R::None),
        "KEGRU" => (Embedding, &[], R::BiGru),
        "ECLSTM" => (Embedding, &[1], R::Lstm),
        "ECBLSTM" => (Embedding, &[1], R::BiLstm),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(ArchSpec {
        name: name.to_string(),
        input,
        conv_layers: dilations.iter().map(|&d| ConvLayerSpec::auto(d)).collect(),
        recurrent,
        rnn_hidden: None,
        head: HeadSpec::Auto,
        fine_tune_embedding: false,
    })
}

/// `[base, round(base·1.5), round(base·1.5²), ...]`.
pub fn expand_filters(base: usize, layers: usize) -> Vec<usize> {
    (0..layers)
        .map(|i| (base as f64 * 1.5f64.powi(i as i32)).round() as usize)
        .collect()
}

fn auto_or<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or("auto".to_string(), |x| x.to_string())
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers.is_empty() && self.recurrent == RecurrentKind::None {
            return Err(Error::invalid(format!(
                "architecture {:?} has neither convolutional nor recurrent layers",
                self.name
            )));
        }
        for (i, c) in self.conv_layers.iter().enumerate() {
            if c.dilation == 0 || c.filters == Some(0) || c.window == Some(0) {
                return Err(Error::invalid(format!("conv layer {i} has a zero size")));
            }
        }
        if self.rnn_hidden == Some(0) {
            return Err(Error::invalid("recurrent hidden size must be positive"));
        }
        if self.fine_tune_embedding && self.input != InputRepr::Embedding {
            return Err(Error::invalid("fine-tuning requires embedding input"));
        }
        Ok(())
    }

    /// Switches the input representation. Named presets fix their input, so
    /// asking a preset for the other representation is an error.
    pub fn with_input(mut self, input: InputRepr) -> Result<Self> {
        if input != self.input && PRESET_NAMES.contains(&self.name.as_str()) {
            return Err(Error::invalid(format!(
                "preset {} requires {} input",
                self.name, self.input
            )));
        }
        self.input = input;
        Ok(self)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("name".to_string(), self.name.clone()),
            ("input".into(), self.input.to_string()),
            ("recurrent".into(), self.recurrent.to_string()),
            ("rnn_hidden".into(), auto_or(self.rnn_hidden)),
            ("head".into(), self.head.to_string()),
            ("fine_tune_embedding".into(), self.fine_tune_embedding.to_string()),
            ("conv_layers".into(), self.conv_layers.len().to_string()),
        ];
        for (i, c) in self.conv_layers.iter().enumerate() {
            kv.push((format!("conv{i}.filters"), auto_or(c.filters)));
            kv.push((format!("conv{i}.window"), auto_or(c.window)));
            kv.push((format!("conv{i}.dilation"), c.dilation.to_string()));
        }
        kv
    }

    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let auto = |k: String| -> Result<Option<usize>> {
            match kv.raw(&k)? {
                "auto" => Ok(None),
                _ => Ok(Some(kv.get(&k)?)),
            }
        };
        let n: usize = kv.get(&key("conv_layers"))?;
        let conv_layers = (0..n)
            .map(|i| {
                Ok(ConvLayerSpec {
                    filters: auto(key(&format!("conv{i}.filters")))?,
                    window: auto(key(&format!("conv{i}.window")))?,
                    dilation: kv.get(&key(&format!("conv{i}.dilation")))?,
                })
            })
            .collect::<Result<_>>()?;
        let spec = ArchSpec {
            name: kv.raw(&key("name"))?.to_string(),
            input: kv.raw(&key("input"))?.parse()?,
            conv_layers,
            recurrent: kv.raw(&key("recurrent"))?.parse()?,
            rnn_hidden: auto(key("rnn_hidden"))?,
            head: kv.raw(&key("head"))?.parse()?,
            fine_tune_embedding: kv.opt(&key("fine_tune_embedding")).unwrap_or("false") == "true",
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Concrete layer sizes after combining a spec with hyperparameters and an
/// input length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPlan {
    pub filters: usize,
    pub window: usize,
    pub dilation: usize,
    pub in_channels: usize,
    /// Length after pooling.
    pub out_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub in_channels: usize,
    pub in_len: usize,
    pub convs: Vec<ConvPlan>,
    pub cell: Option<CellKind>,
    pub bidirectional: bool,
    pub rnn_hidden: usize,
    pub features: usize,
    pub head: Option<usize>,
}

fn plan(spec: &ArchSpec, hyper: &HyperConfig, seq_len: usize, embed_dim: usize) -> Result<Plan> {
    let (in_channels, in_len) = match spec.input {
        InputRepr::OneHot => (4, seq_len),
        InputRepr::Embedding => {
            if seq_len < hyper.kmer_k {
                return Err(Error::invalid(format!(
                    "sequence length {seq_len} shorter than k-mer length {}",
                    hyper.kmer_k
                )));
            }
            (embed_dim, num_windows(seq_len, hyper.kmer_k, hyper.kmer_stride))
        }
    };
    let auto_filters = expand_filters(hyper.n_filters, spec.conv_layers.len());
    let (mut channels, mut len) = (in_channels, in_len);
    let mut convs = Vec::new();
    for (i, c) in spec.conv_layers.iter().enumerate() {
        let window = c
            .window
            .unwrap_or(if i == 0 { hyper.motif_length } else { LATER_LAYER_WINDOW });
        let filters = c.filters.unwrap_or(auto_filters[i]);
        if len < hyper.pool_window {
            return Err(Error::invalid(format!(
                "input too short: {len} positions before pooling in conv layer {i}"
            )));
        }
        len = (len - hyper.pool_window) / hyper.pool_stride + 1;
        convs.push(ConvPlan {
            filters,
            window,
            dilation: c.dilation,
            in_channels: channels,
            out_len: len,
        });
        channels = filters;
    }
    let cell = spec.recurrent.cell();
    let bidirectional = spec.recurrent.bidirectional();
    let rnn_hidden = spec.rnn_hidden.unwrap_or(hyper.rnn_hidden);
    let features = match cell {
        Some(_) => rnn_hidden * if bidirectional { 2 } else { 1 },
        None => channels * len,
    };
    let head = match spec.head {
        HeadSpec::Auto => hyper.head_hidden,
        HeadSpec::None => None,
        HeadSpec::Hidden(n) => Some(n),
    };
    Ok(Plan {
        in_channels,
        in_len,
        convs,
        cell,
        bidirectional,
        rnn_hidden,
        features,
        head,
    })
}

/// Per-sequence network inputs, ready to be stacked into batches.
#[derive(Debug, Clone)]
pub enum EncodedInputs {
    /// Position-major `L × 4` one-hot rows.
    OneHot(Vec<Vec<f64>>),
    Tokens(Vec<Vec<usize>>),
}

impl EncodedInputs {
    pub fn len(&self) -> usize {
        match self {
            EncodedInputs::OneHot(r) => r.len(),
            EncodedInputs::Tokens(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sequence → probability scoring network plus everything needed to rebuild
/// it.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ArchSpec,
    pub hyper: HyperConfig,
    /// Input length in bases.
    pub seq_len: usize,
    /// Fixed word2vec table for embedding models; when fine-tuning, the
    /// trainable copy lives in `params` as `embedding`.
    pub embedding: Option<EmbeddingTable>,
    pub params: ParamStore,
    pub trained_steps: usize,
    plan: Plan,
}

fn init_tensor<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    init: WeightInit,
    scale: f64,
    rng: &mut R,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        WeightInit::Xavier => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        }
        WeightInit::Normal => {
            let dist = Normal::new(0.0, scale).expect("finite positive scale");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

pub fn build_model(
    spec: &ArchSpec,
    hyper: &HyperConfig,
    seq_len: usize,
    embedding: Option<EmbeddingTable>,
    seed: u64,
) -> Result<Model> {
    spec.validate()?;
    hyper.check()?;
    let embed_dim = match (spec.input, &embedding) {
        (InputRepr::Embedding, None) => {
            return Err(Error::invalid(format!("{} needs an embedding table", spec.name)))
        }
        (InputRepr::Embedding, Some(t)) => {
            if t.dim() != hyper.embedding_dim || t.vocab_size() != crate::seq::unk_index(hyper.kmer_k) + 1 {
                return Err(Error::invalid(format!(
                    "embedding table is {}×{}, configuration expects {}×{}",
                    t.vocab_size(),
                    t.dim(),
                    crate::seq::unk_index(hyper.kmer_k) + 1,
                    hyper.embedding_dim
                )));
            }
            t.dim()
        }
        (InputRepr::OneHot, Some(_)) => return Err(Error::invalid("one-hot models take no embedding table")),
        (InputRepr::OneHot, None) => 0,
    };
    let plan = plan(spec, hyper, seq_len, embed_dim)?;
    let mut r = rng::stream(seed, &[rng::INIT]);
    let init = hyper.weight_init;
    let mut params = ParamStore::new();

    if spec.fine_tune_embedding {
        let t = embedding.as_ref().expect("checked above");
        params.add(ParamArray::new("embedding", t.matrix.clone(), false))?;
    }
    for (i, c) in plan.convs.iter().enumerate() {
        let (k, m, n) = (c.filters, c.window, c.in_channels);
        let w = init_tensor(&[k, m, n], m * n, m * k, init, hyper.init_scale_motif, &mut r);
        params.add(ParamArray::new(format!("conv{i}.W"), w, true))?;
        params.add(ParamArray::new(format!("conv{i}.b"), Tensor::zeros(&[k]), false))?;
    }
    if let Some(kind) = plan.cell {
        let input = plan.convs.last().map_or(plan.in_channels, |c| c.filters);
        let h = plan.rnn_hidden;
        let dirs: &[&str] = if plan.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        for d in dirs {
            for g in layers::RecurrentCellParams::gate_names(kind) {
                let w = init_tensor(&[h, h + input], h + input, h, init, hyper.init_scale_rnn, &mut r);
                params.add(ParamArray::new(format!("rnn.{d}.W_{g}"), w, true))?;
                let bias = match *g {
                    "f" => Tensor::new(vec![h], vec![MEMORY_GATE_BIAS; h]),
                    "z" => Tensor::new(vec![h], vec![-MEMORY_GATE_BIAS; h]),
                    _ => Tensor::zeros(&[h]),
                };
                params.add(ParamArray::new(format!("rnn.{d}.b_{g}"), bias, false))?;
            }
        }
    }
    let mut width = plan.features;
    if let Some(hidden) = plan.head {
        let w = init_tensor(&[hidden, width], width, hidden, init, hyper.init_scale_dense, &mut r);
        params.add(ParamArray::new("dense.hidden.W", w, true))?;
        params.add(ParamArray::new("dense.hidden.b", Tensor::zeros(&[hidden]), false))?;
        width = hidden;
    }
    let w = init_tensor(&[1, width], width, 1, init, hyper.init_scale_dense, &mut r);
    params.add(ParamArray::new("dense.out.W", w, true))?;
    params.add(ParamArray::new("dense.out.b", Tensor::zeros(&[1]), false))?;

    let model = Model {
        spec: spec.clone(),
        hyper: hyper.clone(),
        seq_len,
        embedding,
        params,
        trained_steps: 0,
        plan,
    };
    model.dry_run()?;
    Ok(model)
}

impl Model {
    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Rebuilds a model around stored parameters, checking that every array
    /// the architecture needs is present with the right shape.
    pub fn from_parts(
        spec: ArchSpec,
        hyper: HyperConfig,
        seq_len: usize,
        embedding: Option<EmbeddingTable>,
        params: ParamStore,
        trained_steps: usize,
    ) -> Result<Model> {
        let template = build_model(&spec, &hyper, seq_len, embedding, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter arrays, found {}",
                template.params.len(),
                params.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for p in template.params.iter() {
            let id = params
                .find(p.name())
                .ok_or_else(|| Error::invalid(format!("missing parameter {}", p.name())))?;
            let given = params.get(id);
            if given.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "load_parameters",
                    left: p.shape().to_vec(),
                    right: given.shape().to_vec(),
                });
            }
            ordered.add(ParamArray::new(p.name(), given.value().clone(), p.decay))?;
        }
        Ok(Model {
            params: ordered,
            trained_steps,
            ..template
        })
    }

    fn dry_run(&self) -> Result<()> {
        let x = Tensor::zeros(&[1, self.plan.in_len, self.plan.in_channels]);
        let mut tape = Tape::new();
        let input = if self.spec.fine_tune_embedding {
            BatchInput::Tokens(vec![0; self.plan.in_len], 1)
        } else {
            BatchInput::Dense(x)
        };
        let p = self.forward(&mut tape, &self.params, &input, None::<&mut rng::SeqRng>)?;
        if tape.shape(p) != [1] {
            return Err(Error::Shape {
                op: "build_model",
                left: tape.shape(p).to_vec(),
                right: vec![1],
            });
        }
        Ok(())
    }

    pub fn check_sequence(&self, seq: &RawSequence) -> Result<()> {
        if seq.len() != self.seq_len {
            return Err(Error::invalid(format!(
                "sequence {} has length {}, model expects {}",
                seq.id,
                seq.len(),
                self.seq_len
            )));
        }
        Ok(())
    }

    pub fn encode(&self, seqs: &[RawSequence]) -> Result<EncodedInputs> {
        for s in seqs {
            self.check_sequence(s)?;
        }
        Ok(match self.spec.input {
            InputRepr::OneHot => EncodedInputs::OneHot(
                seqs.iter()
                    .map(|s| {
                        let mut v = Vec::with_capacity(s.len() * 4);
                        onehot_positions(&s.bases, &mut v);
                        v
                    })
                    .collect(),
            ),
            InputRepr::Embedding => EncodedInputs::Tokens(
                seqs.iter()
                    .map(|s| tokens_of(&s.bases, self.hyper.kmer_k, self.hyper.kmer_stride))
                    .collect(),
            ),
        })
    }

    /// Stacks the selected examples into one network input.
    pub fn batch(&self, inputs: &EncodedInputs, indices: &[usize]) -> Result<BatchInput> {
        let (l, c) = (self.plan.in_len, self.plan.in_channels);
        match inputs {
            EncodedInputs::OneHot(rows) => {
                let mut data = Vec::with_capacity(indices.len() * l * c);
                for &i in indices {
                    data.extend_from_slice(&rows[i]);
                }
                Ok(BatchInput::Dense(Tensor::new(vec![indices.len(), l, c], data)))
            }
            EncodedInputs::Tokens(rows) if self.spec.fine_tune_embedding => {
                let mut tokens = Vec::with_capacity(indices.len() * l);
                for &i in indices {
                    tokens.extend_from_slice(&rows[i]);
                }
                Ok(BatchInput::Tokens(tokens, indices.len()))
            }
            EncodedInputs::Tokens(rows) => {
                let table = self.embedding.as_ref().expect("embedding model has a table");
                let mut data = Vec::with_capacity(indices.len() * l * c);
                for &i in indices {
                    for &t in &rows[i] {
                        data.extend_from_slice(table.row(t));
                    }
                }
                Ok(BatchInput::Dense(Tensor::new(vec![indices.len(), l, c], data)))
            }
        }
    }

    fn param(&self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
        let id: ParamId = store
            .find(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        Ok(tape.param(store, id))
    }

    /// Records the network on `tape` and returns the `[B]` probabilities.
    /// Passing a random stream turns on dropout.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &BatchInput,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        let plan = &self.plan;
        let (mut x, batch) = match input {
            BatchInput::Dense(t) => (tape.constant(t.clone()), t.shape()[0]),
            BatchInput::Tokens(tokens, b) => {
                let table = self.param(tape, store, "embedding")?;
                let rows = tape.gather(table, tokens)?;
                (tape.reshape(rows, &[*b, plan.in_len, plan.in_channels])?, *b)
            }
        };
        let keep = self.hyper.dropout_keep;
        for (i, c) in plan.convs.iter().enumerate() {
            let w = self.param(tape, store, &format!("conv{i}.W"))?;
            let b = self.param(tape, store, &format!("conv{i}.b"))?;
            let y = layers::conv1d_layer(tape, x, w, b, c.dilation, Padding::Same)?;
            x = tape.maxpool(y, self.hyper.pool_window, self.hyper.pool_stride)?;
        }
        let mut features = match plan.cell {
            Some(kind) => {
                let h = plan.rnn_hidden;
                let fwd = CellVars::from_store(kind, h, tape, store, "rnn.fwd")?;
                if plan.bidirectional {
                    let bwd = CellVars::from_store(kind, h, tape, store, "rnn.bwd")?;
                    layers::birnn_run(tape, x, &fwd, &bwd)?
                } else {
                    layers::rnn_run(tape, x, &fwd, layers::Direction::Forward)?
                }
            }
            None => tape.reshape(x, &[batch, plan.features])?,
        };
        let training = dropout_rng.is_some();
        if plan.head.is_some() {
            features = match dropout_rng.as_deref_mut() {
                Some(r) => layers::dropout(tape, features, keep, r, training)?,
                None => features,
            };
            let w = self.param(tape, store, "dense.hidden.W")?;
            let b = self.param(tape, store, "dense.hidden.b")?;
            features = layers::dense(tape, features, w, b, Activation::Relu)?;
        }
        if let Some(r) = dropout_rng {
            features = layers::dropout(tape, features, keep, r, training)?;
        }
        let w = self.param(tape, store, "dense.out.W")?;
        let b = self.param(tape, store, "dense.out.b")?;
        let p = layers::dense(tape, features, w, b, Activation::Sigmoid)?;
        tape.reshape(p, &[batch])
    }

    /// Inference-mode probabilities for pre-encoded inputs.
    pub fn predict_encoded(&self, inputs: &EncodedInputs, indices: &[usize]) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(CHUNK) {
            let mut tape = Tape::new();
            let batch = self.batch(inputs, chunk)?;
            let p = self.forward(&mut tape, &self.params, &batch, None::<&mut rng::SeqRng>)?;
            out.extend_from_slice(tape.value(p).data());
        }
        Ok(out)
    }

    pub fn predict(&self, seqs: &[RawSequence]) -> Result<Vec<f64>> {
        let inputs = self.encode(seqs)?;
        let all: Vec<usize> = (0..seqs.len()).collect();
        self.predict_encoded(&inputs, &all)
    }

    /// First convolutional layer as a host-side filter bank.
    pub fn first_conv(&self) -> Result<ConvFilterBank> {
        if self.plan.convs.is_empty() {
            return Err(Error::NoConvolution(self.spec.name.clone()));
        }
        let w = self.params.get(self.params.find("conv0.W").expect("conv0.W")).value().clone();
        let b = self.params.get(self.params.find("conv0.b").expect("conv0.b")).value().clone();
        ConvFilterBank::new(w, b, self.plan.convs[0].dilation)
    }

    /// Channel-major `N × L` input matrix of one sequence as seen by the
    /// first layer.
    pub fn input_matrix(&self, seq: &RawSequence) -> Result<Tensor> {
        let enc = self.encode(std::slice::from_ref(seq))?;
        let table;
        let rows = match (&enc, self.spec.fine_tune_embedding) {
            (EncodedInputs::Tokens(t), true) => {
                table = EmbeddingTable::new(self.params.get(self.params.find("embedding").expect("embedding")).value().clone())?;
                let mut v = Vec::new();
                for &tok in &t[0] {
                    v.extend_from_slice(table.row(tok));
                }
                v
            }
            _ => match self.batch(&enc, &[0])? {
                BatchInput::Dense(t) => t.into_data(),
                BatchInput::Tokens(..) => unreachable!("tokens only when fine-tuning"),
            },
        };
        Ok(Tensor::new(vec![self.plan.in_len, self.plan.in_channels], rows).transposed())
    }
}

/// One stacked network input.
#[derive(Debug, Clone)]
pub enum BatchInput {
    /// `[B, L, C]` features.
    Dense(Tensor),
    /// Flattened `B × T` token ids looked up in the trainable table.
    Tokens(Vec<usize>, usize),
}
