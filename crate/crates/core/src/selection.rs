//! Random-search calibration with k-fold cross-validation, followed by
//! several restarts on the full training set.
//!
//! Every job draws its randomness from the master seed through
//! [`rng::derive_seed`], so results do not depend on the worker count or on
//! the order in which jobs finish.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::arch::{build_model, ArchSpec, InputRepr, Model};
use crate::embedding::{train_on_sequences, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::hyper::{sample_hyperparams, HyperConfig};
use crate::rng;
use crate::seq::{make_folds, Dataset};
use crate::training::{train, TrainConfig, TrainState};

pub const DEFAULT_TRIALS: usize = 40;
pub const DEFAULT_FOLDS: usize = 3;
pub const DEFAULT_RESTARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub n_trials: usize,
    pub n_folds: usize,
    pub n_restarts: usize,
    pub train: TrainConfig,
    /// Size of the worker pool; 0 means the available parallelism.
    pub workers: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_trials: DEFAULT_TRIALS,
            n_folds: DEFAULT_FOLDS,
            n_restarts: DEFAULT_RESTARTS,
            train: TrainConfig::default(),
            workers: 0,
        }
    }
}

impl SelectionConfig {
    pub fn check(&self) -> Result<()> {
        self.train.check()?;
        if self.n_trials == 0 || self.n_restarts == 0 {
            return Err(Error::invalid("trials and restarts must be positive"));
        }
        if self.n_folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if self.train.max_steps < self.train.eval_every {
            return Err(Error::invalid(format!(
                "max steps {} below the evaluation interval {}",
                self.train.max_steps, self.train.eval_every
            )));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let workers = if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))
    }
}

/// Result of training one trial on one fold.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldOutcome {
    /// Best-checkpoint validation AUC and its step.
    Done { auc: f64, step: usize },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    /// Sampled configuration; `selected_steps` holds this trial's own
    /// aggregated step count when every fold finished.
    pub hyper: HyperConfig,
    pub folds: Vec<FoldOutcome>,
    /// Mean fold AUC, or 0 when any fold failed.
    pub score: f64,
}

impl TrialOutcome {
    pub fn failed(&self) -> bool {
        self.folds.iter().any(|f| matches!(f, FoldOutcome::Failed(_)))
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub trials: Vec<TrialOutcome>,
    pub best_index: usize,
}

impl Calibration {
    pub fn best(&self) -> &HyperConfig {
        &self.trials[self.best_index].hyper
    }

    /// One row per trial: trial index, hyperparameters, per-fold AUC,
    /// mean AUC, selected steps and status.
    pub fn report_tsv(&self) -> String {
        let n_folds = self.trials.first().map_or(0, |t| t.folds.len());
        let hyper_keys: Vec<String> = HyperConfig::default_for(InputRepr::OneHot)
            .to_kv()
            .into_iter()
            .map(|(k, _)| k)
            .filter(|k| k != "selected_steps")
            .collect();
        let mut out = String::from("trial");
        for k in &hyper_keys {
            let _ = write!(out, "\t{k}");
        }
        for f in 0..n_folds {
            let _ = write!(out, "\tfold{f}_auc");
        }
        out.push_str("\tmean_auc\tselected_steps\tstatus\n");
        for t in &self.trials {
            let _ = write!(out, "{}", t.trial);
            for (k, v) in t.hyper.to_kv() {
                if k != "selected_steps" {
                    let _ = write!(out, "\t{v}");
                }
            }
            for f in &t.folds {
                match f {
                    FoldOutcome::Done { auc, .. } => {
                        let _ = write!(out, "\t{auc:.6}");
                    }
                    FoldOutcome::Failed(_) => out.push_str("\tNA"),
                }
            }
            let steps = t.hyper.selected_steps.map_or("NA".to_string(), |s| s.to_string());
            let status = match t.folds.iter().find_map(|f| match f {
                FoldOutcome::Failed(msg) => Some(msg.as_str()),
                _ => None,
            }) {
                Some(msg) => format!("failed: {}", msg.replace(['\t', '\n'], " ")),
                None if t.trial == self.trials[self.best_index].trial => "best".to_string(),
                None => "ok".to_string(),
            };
            let _ = writeln!(out, "\t{:.6}\t{steps}\t{status}", t.score);
        }
        out
    }
}

/// Median of the fold step counts, snapped to the checkpoint grid.
pub fn aggregate_steps(steps: &[usize], config: &TrainConfig) -> usize {
    let s: Vec<f64> = steps.iter().map(|&x| x as f64).collect();
    config.round_to_grid(crate::eval::median(&s))
}

/// Index of the first maximal score.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Word2vec table for the given sequences, or `None` for one-hot models.
pub fn embedding_for(
    spec: &ArchSpec,
    hyper: &HyperConfig,
    data: &Dataset,
    seed: u64,
) -> Result<Option<EmbeddingTable>> {
    match spec.input {
        InputRepr::OneHot => Ok(None),
        InputRepr::Embedding => train_on_sequences(
            &data.sequences,
            hyper.kmer_k,
            hyper.kmer_stride,
            hyper.embedding_dim,
            seed,
        )
        .map(Some),
    }
}

fn run_fold(
    spec: &ArchSpec,
    hyper: &HyperConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    embedding: Option<EmbeddingTable>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(f64, usize)> {
    let mut model = build_model(spec, hyper, train_set.fixed_length, embedding, rng::derive_seed(seed, &[rng::INIT]))?;
    let state = train(&mut model, train_set, Some(val_set), config, seed)?;
    let (step, auc) = state.best.ok_or_else(|| Error::invalid("no validation checkpoint reached"))?;
    Ok((auc, step))
}

/// Samples `n_trials` configurations and scores each by its mean
/// best-checkpoint validation AUC over `n_folds` stratified folds. The
/// winner is the first trial with the maximal score; its `selected_steps` is
/// the median of the fold best steps on the checkpoint grid.
pub fn calibrate(dataset: &Dataset, spec: &ArchSpec, config: &SelectionConfig, seed: u64) -> Result<Calibration> {
    config.check()?;
    spec.validate()?;
    let folds = make_folds(&dataset.labels(), config.n_folds, rng::derive_seed(seed, &[rng::SPLIT]))?;
    let hypers: Vec<HyperConfig> = (0..config.n_trials)
        .map(|t| sample_hyperparams(spec.input, &mut rng::stream(seed, &[rng::TRIAL, t as u64])))
        .collect();
    let splits: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|f| (dataset.subset(&f.train), dataset.subset(&f.validation)))
        .collect();

    let pool = config.pool()?;
    let embeddings: Vec<Option<EmbeddingTable>> = pool.install(|| {
        splits
            .par_iter()
            .enumerate()
            .map(|(f, (tr, _))| {
                embedding_for(spec, &hypers[0], tr, rng::derive_seed(seed, &[rng::FOLD, f as u64, rng::EMBED]))
            })
            .collect::<Result<_>>()
    })?;

    let jobs: Vec<(usize, usize)> = (0..config.n_trials)
        .flat_map(|t| (0..config.n_folds).map(move |f| (t, f)))
        .collect();
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(t, f)| {
                let (tr, val) = &splits[f];
                let job_seed = rng::derive_seed(seed, &[rng::TRIAL, t as u64, rng::FOLD, f as u64]);
                match run_fold(spec, &hypers[t], tr, val, embeddings[f].clone(), &config.train, job_seed) {
                    Ok((auc, step)) => {
                        log::info!("trial {t} fold {f}: best AUC {auc:.4} at step {step}");
                        FoldOutcome::Done { auc, step }
                    }
                    Err(e) => {
                        log::warn!("trial {t} fold {f} failed: {e}");
                        FoldOutcome::Failed(e.to_string())
                    }
                }
            })
            .collect()
    });

    let mut trials = Vec::with_capacity(config.n_trials);
    for (t, (mut hyper, chunk)) in hypers.into_iter().zip(outcomes.chunks(config.n_folds)).enumerate() {
        let done: Vec<(f64, usize)> = chunk
            .iter()
            .filter_map(|o| match o {
                FoldOutcome::Done { auc, step } => Some((*auc, *step)),
                FoldOutcome::Failed(_) => None,
            })
            .collect();
        let score = if done.len() == chunk.len() {
            let steps: Vec<usize> = done.iter().map(|d| d.1).collect();
            hyper.selected_steps = Some(aggregate_steps(&steps, &config.train));
            done.iter().map(|d| d.0).sum::<f64>() / done.len() as f64
        } else {
            0.0
        };
        trials.push(TrialOutcome {
            trial: t,
            hyper,
            folds: chunk.to_vec(),
            score,
        });
    }
    if trials.iter().all(TrialOutcome::failed) {
        return Err(Error::AllTrialsFailed(trials.len()));
    }
    let scores: Vec<f64> = trials.iter().map(|t| if t.failed() { f64::NEG_INFINITY } else { t.score }).collect();
    let best_index = argmax_first(&scores).expect("nonempty");
    Ok(Calibration { trials, best_index })
}

#[derive(Debug)]
pub struct Finalized {
    pub model: Model,
    pub state: TrainState,
    /// Training-set AUC per restart; `None` for restarts that diverged.
    pub restart_aucs: Vec<Option<f64>>,
    pub chosen: usize,
}

/// Trains `n_restarts` models on the full dataset for exactly
/// `best.selected_steps` steps and keeps the one with the highest
/// training-set AUC (first on ties). Restarts that hit non-finite values are
/// skipped.
pub fn finalize(
    dataset: &Dataset,
    spec: &ArchSpec,
    best: &HyperConfig,
    config: &SelectionConfig,
    seed: u64,
) -> Result<Finalized> {
    config.check()?;
    let steps = best
        .selected_steps
        .ok_or_else(|| Error::invalid("configuration has no selected step count"))?;
    let train_config = TrainConfig {
        max_steps: steps,
        eval_every: config.train.eval_every.min(steps),
        ..config.train
    };
    let embedding = embedding_for(spec, best, dataset, rng::derive_seed(seed, &[rng::EMBED]))?;
    let labels = dataset.labels();
    let pool = config.pool()?;
    let runs: Vec<Result<(Model, TrainState, f64)>> = pool.install(|| {
        (0..config.n_restarts)
            .into_par_iter()
            .map(|r| {
                let run_seed = rng::derive_seed(seed, &[rng::RESTART, r as u64]);
                let mut model = build_model(
                    spec,
                    best,
                    dataset.fixed_length,
                    embedding.clone(),
                    rng::derive_seed(run_seed, &[rng::INIT]),
                )?;
                let state = train(&mut model, dataset, None, &train_config, run_seed)?;
                let auc = roc_auc(&model.predict(&dataset.sequences)?, &labels)?;
                log::info!("restart {r}: training AUC {auc:.4}");
                Ok((model, state, auc))
            })
            .collect()
    });

    let mut restart_aucs = Vec::with_capacity(runs.len());
    let mut kept = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                restart_aucs.push(Some(run.2));
                kept.push(Some(run));
            }
            Err(e @ Error::NonFinite { .. }) => {
                log::warn!("restart {r} diverged: {e}");
                restart_aucs.push(None);
                kept.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = restart_aucs.iter().map(|a| a.unwrap_or(f64::NEG_INFINITY)).collect();
    if restart_aucs.iter().all(Option::is_none) {
        return Err(Error::AllRestartsDiverged(config.n_restarts));
    }
    let chosen = argmax_first(&scores).expect("nonempty");
    let (model, state, _) = kept.swap_remove(chosen).expect("chosen restart finished");
    Ok(Finalized {
        model,
        state,
        restart_aucs,
        chosen,
    })
}
