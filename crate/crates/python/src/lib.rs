//! Python bindings: models, training and selection, motif extraction and
//! the evaluation statistics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use seqbind_core::arch::{build_model, preset, InputRepr};
use seqbind_core::grad::Tensor;
use seqbind_core::hyper::HyperConfig;
use seqbind_core::layers::{self, ConvFilterBank, Padding};
use seqbind_core::selection::{self, SelectionConfig};
use seqbind_core::seq::{Dataset, RawSequence};
use seqbind_core::training::{self, TrainConfig};
use seqbind_core::{container, eval, motif, rng, seq, synth, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::NonFinite { .. } | Error::AllTrialsFailed(_) | Error::AllRestartsDiverged(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sequences(seqs: &[String], label: u8, prefix: &str) -> PyResult<Vec<RawSequence>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| RawSequence::new(format!("{prefix}{i}"), s, label).map_err(py_err))
        .collect()
}

fn labeled(pos: &[String], neg: &[String]) -> PyResult<Dataset> {
    let mut all = sequences(pos, 1, "pos")?;
    all.extend(sequences(neg, 0, "neg")?);
    Dataset::new(all).map_err(py_err)
}

/// A trained or freshly initialized network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: seqbind_core::arch::Model,
}

#[pymethods]
impl PyModel {
    /// New model from a preset name with default hyperparameters.
    /// Embedding presets train their k-mer table on `sequences`.
    #[staticmethod]
    #[pyo3(signature = (preset_name, seq_len, seed=0, sequences=None))]
    fn build(preset_name: &str, seq_len: usize, seed: u64, sequences: Option<Vec<String>>) -> PyResult<Self> {
        let spec = preset(preset_name).map_err(py_err)?;
        let hyper = HyperConfig::default_for(spec.input);
        let table = match spec.input {
            InputRepr::OneHot => None,
            InputRepr::Embedding => {
                let seqs = sequences.ok_or_else(|| PyValueError::new_err(format!("{preset_name} needs sequences for its embedding")))?;
                let raw = self::sequences(&seqs, 0, "s")?;
                Some(
                    seqbind_core::embedding::train_on_sequences(&raw, hyper.kmer_k, hyper.kmer_stride, hyper.embedding_dim, rng::derive_seed(seed, &[rng::EMBED]))
                        .map_err(py_err)?,
                )
            }
        };
        let inner = build_model(&spec, &hyper, seq_len, table, rng::derive_seed(seed, &[rng::INIT])).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: container::load_model(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: container::parse_model(text, "<text>").map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        container::save_model(&self.inner, &path).map_err(py_err)
    }

    fn to_text(&self) -> String {
        container::model_text(&self.inner)
    }

    /// Binding probabilities, one per sequence.
    fn predict(&self, py: Python<'_>, sequences: Vec<String>) -> PyResult<Vec<f64>> {
        let raw = self::sequences(&sequences, 0, "s")?;
        py.detach(|| self.inner.predict(&raw)).map_err(py_err)
    }

    /// Trains in place on labeled sequences for `steps` mini-batch updates
    /// and returns the final training AUC.
    #[pyo3(signature = (pos, neg, steps, seed=0))]
    fn fit(&mut self, py: Python<'_>, pos: Vec<String>, neg: Vec<String>, steps: usize, seed: u64) -> PyResult<f64> {
        let data = labeled(&pos, &neg)?;
        let config = TrainConfig {
            max_steps: steps,
            eval_every: steps.min(TrainConfig::default().eval_every),
            ..TrainConfig::default()
        };
        let inner = &mut self.inner;
        py.detach(|| {
            training::train(inner, &data, None, &config, seed)?;
            eval::roc_auc(&inner.predict(&data.sequences)?, &data.labels())
        })
        .map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec.name.clone()
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.seq_len
    }

    #[getter]
    fn trained_steps(&self) -> usize {
        self.inner.trained_steps
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.iter().map(|p| p.len()).sum()
    }

    /// `(name, shape)` of every trainable array.
    fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        self.inner.params.iter().map(|p| (p.name().to_string(), p.shape().to_vec())).collect()
    }

    fn hyperparameters(&self) -> Vec<(String, String)> {
        self.inner.hyper.to_kv()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(name={:?}, seq_len={}, params={}, trained_steps={})",
            self.inner.spec.name,
            self.inner.seq_len,
            self.n_params(),
            self.inner.trained_steps
        )
    }
}

/// Random hyperparameter search with k-fold cross-validation followed by
/// training on all data. Returns the model and the per-trial report (TSV).
#[pyfunction]
#[pyo3(signature = (preset_name, pos, neg, seed, trials=selection::DEFAULT_TRIALS, folds=selection::DEFAULT_FOLDS, restarts=selection::DEFAULT_RESTARTS, max_steps=40000, eval_every=5000, workers=0))]
#[allow(clippy::too_many_arguments)]
fn select(
    py: Python<'_>,
    preset_name: &str,
    pos: Vec<String>,
    neg: Vec<String>,
    seed: u64,
    trials: usize,
    folds: usize,
    restarts: usize,
    max_steps: usize,
    eval_every: usize,
    workers: usize,
) -> PyResult<(PyModel, String)> {
    let spec = preset(preset_name).map_err(py_err)?;
    let data = labeled(&pos, &neg)?;
    let config = SelectionConfig {
        n_trials: trials,
        n_folds: folds,
        n_restarts: restarts,
        train: TrainConfig {
            max_steps,
            eval_every,
            ..TrainConfig::default()
        },
        workers,
    };
    py.detach(|| {
        let cal = selection::calibrate(&data, &spec, &config, seed)?;
        let fin = selection::finalize(&data, &spec, cal.best(), &config, seed)?;
        Ok((PyModel { inner: fin.model }, cal.report_tsv()))
    })
    .map_err(py_err)
}

/// Motifs from first-layer filters: one dict per filter that kept at least
/// one fragment, with `filter`, `consensus`, `nsites`, `counts` (rows of
/// A, C, G, T counts) and `information` (bits per column).
#[pyfunction]
#[pyo3(signature = (model, sequences, threshold=motif::DEFAULT_THRESHOLD))]
fn extract_motifs(py: Python<'_>, model: &PyModel, sequences: Vec<String>, threshold: f64) -> PyResult<Vec<Py<PyAny>>> {
    let raw = self::sequences(&sequences, 1, "s")?;
    let pfms = py
        .detach(|| motif::extract_fragments_at(&model.inner, &raw, threshold).map(|f| motif::pfms_from(&f)))
        .map_err(py_err)?;
    pfms.iter()
        .map(|p| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("filter", p.filter_index)?;
            d.set_item("consensus", p.consensus())?;
            d.set_item("nsites", p.nsites)?;
            d.set_item("counts", p.counts.iter().map(|c| c.to_vec()).collect::<Vec<_>>())?;
            d.set_item("information", p.information())?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// MEME text for the motifs of `model` on `sequences`.
#[pyfunction]
#[pyo3(signature = (model, sequences, threshold=motif::DEFAULT_THRESHOLD))]
fn meme(model: &PyModel, sequences: Vec<String>, threshold: f64) -> PyResult<String> {
    let raw = self::sequences(&sequences, 1, "s")?;
    let frags = motif::extract_fragments_at(&model.inner, &raw, threshold).map_err(py_err)?;
    motif::meme_text(&motif::pfms_from(&frags)).map_err(py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(py_err)
}

/// Two-sided Wilcoxon signed-rank test: `(statistic, p_value)`.
#[pyfunction]
fn wilcoxon(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = eval::wilcoxon_signed_rank(&a, &b).map_err(py_err)?;
    Ok((r.statistic, r.p_value))
}

#[pyfunction]
fn dinuc_shuffle(sequence: &str, seed: u64) -> PyResult<String> {
    let s = RawSequence::new("s", sequence, 0).map_err(py_err)?;
    Ok(seq::dinuc_shuffle(&s, &mut rng::stream(seed, &[rng::SAMPLE])).bases)
}

/// Planted-motif benchmark: `(positives, negatives)`; negatives are
/// dinucleotide shuffles of the positives.
#[pyfunction]
#[pyo3(signature = (motif, length=101, n=2000, mutation=0.1, seed=0))]
fn planted_motif_data(motif: &str, length: usize, n: usize, mutation: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    let mut spec = synth::PlantSpec::new(motif, length, n);
    spec.mutation_prob = mutation;
    let syn = synth::generate(&spec, seed).map_err(py_err)?;
    let (pos, neg): (Vec<_>, Vec<_>) = syn.dataset.sequences.into_iter().partition(|s| s.label == 1);
    Ok((pos.into_iter().map(|s| s.bases).collect(), neg.into_iter().map(|s| s.bases).collect()))
}

/// ReLU convolution of an `N × L` input with `K × M × N` filters.
#[pyfunction]
#[pyo3(signature = (x, weight, bias, dilation=1, same_padding=false))]
fn conv1d(x: Vec<Vec<f64>>, weight: Vec<Vec<Vec<f64>>>, bias: Vec<f64>, dilation: usize, same_padding: bool) -> PyResult<Vec<Vec<f64>>> {
    let rows = |m: &[Vec<f64>]| -> PyResult<(usize, Vec<f64>)> {
        let w = m.first().map_or(0, Vec::len);
        if m.iter().any(|r| r.len() != w) {
            return Err(PyValueError::new_err("ragged matrix"));
        }
        Ok((w, m.concat()))
    };
    let (l, xd) = rows(&x)?;
    let (k, m) = (weight.len(), weight.first().map_or(0, Vec::len));
    let n = weight.first().and_then(|f| f.first()).map_or(0, Vec::len);
    let mut wd = Vec::with_capacity(k * m * n);
    for f in &weight {
        let (w, d) = rows(f)?;
        if f.len() != m || w != n {
            return Err(PyValueError::new_err("ragged filter bank"));
        }
        wd.extend(d);
    }
    let bank = ConvFilterBank::new(Tensor::new(vec![k, m, n], wd), Tensor::new(vec![bias.len()], bias), dilation).map_err(py_err)?;
    let padding = if same_padding { Padding::Same } else { Padding::Valid };
    let y = layers::conv1d(&Tensor::new(vec![x.len(), l], xd), &bank, padding).map_err(py_err)?;
    let lo = y.shape()[1];
    Ok(y.data().chunks(lo.max(1)).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn maxpool1d(y: Vec<Vec<f64>>, window: usize, stride: usize) -> PyResult<Vec<Vec<f64>>> {
    let l = y.first().map_or(0, Vec::len);
    if y.iter().any(|r| r.len() != l) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let out = layers::maxpool1d(&Tensor::new(vec![y.len(), l], y.concat()), window, stride).map_err(py_err)?;
    let lo = out.shape()[1];
    Ok(out.data().chunks(lo.max(1)).map(<[f64]>::to_vec).collect())
}

#[pymodule]
fn seqbind(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(extract_motifs, m)?)?;
    m.add_function(wrap_pyfunction!(meme, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(dinuc_shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(planted_motif_data, m)?)?;
    m.add_function(wrap_pyfunction!(conv1d, m)?)?;
    m.add_function(wrap_pyfunction!(maxpool1d, m)?)?;
    m.add("PRESETS", seqbind_core::arch::PRESET_NAMES.to_vec())?;
    Ok(())
}
