use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seqbind::arch::{build_model, preset, ArchSpec, InputRepr};
use seqbind::container::{load_embedding, load_model, save_embedding, save_model, EmbeddingFile};
use seqbind::embedding::train_on_sequences;
use seqbind::eval::{compare_models, roc_auc, stratify_by_size, AucTable, SIZE_THRESHOLD};
use seqbind::hyper::{HyperConfig, EMBEDDING_DIM, KMER_K, KMER_STRIDE};
use seqbind::io::{write_atomic, write_fasta, write_tsv};
use seqbind::kv::KvMap;
use seqbind::motif::{self, ActivationProfile, DEFAULT_THRESHOLD};
use seqbind::rng;
use seqbind::selection::{self, SelectionConfig};
use seqbind::seq::{dinuc_shuffle, parse_input, read_fasta, read_tsv, DataSource, Dataset, RawSequence};
use seqbind::synth::{self, Placement, PlantSpec};
use seqbind::training::{self, TrainConfig, EVAL_EVERY, MAX_STEPS};

#[derive(Parser)]
#[command(name = "seqbind", version, about = "Protein-binding site prediction for DNA/RNA sequences")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random-search calibration, then final restarts on the full data.
    Select(SelectArgs),
    /// Train one model with fixed hyperparameters.
    Train(TrainArgs),
    /// Score sequences with a saved model.
    Predict(PredictArgs),
    /// Extract first-layer motifs, activation histogram and text logos.
    Motifs(MotifArgs),
    /// Pairwise Wilcoxon comparison of per-dataset AUCs.
    Compare(CompareArgs),
    /// Dinucleotide-preserving shuffle of a FASTA file.
    Shuffle(ShuffleArgs),
    /// Train a k-mer embedding table only.
    Embed(EmbedArgs),
    /// Write a planted-motif synthetic dataset.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    FastaPair,
    Tsv,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "fasta-pair")]
    data_format: DataFormat,
    /// Positive sequences (fasta-pair).
    #[arg(long)]
    pos: Option<PathBuf>,
    /// Negative sequences (fasta-pair).
    #[arg(long)]
    neg: Option<PathBuf>,
    /// SEQ<TAB>LABEL file (tsv).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> Result<DataSource> {
        match self.data_format {
            DataFormat::FastaPair => match (&self.pos, &self.neg) {
                (Some(p), Some(n)) => Ok(DataSource::FastaPair {
                    positives: p.clone(),
                    negatives: n.clone(),
                }),
                _ => bail!("--data-format fasta-pair needs --pos and --neg"),
            },
            DataFormat::Tsv => match &self.data {
                Some(d) => Ok(DataSource::Tsv(d.clone())),
                None => bail!("--data-format tsv needs --data"),
            },
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        Ok(parse_input(&self.source()?)?)
    }

    /// Sequences to score: lengths are kept as read, `--pos` alone counts
    /// as positives and TSV labels are optional.
    fn sequences(&self) -> Result<Vec<RawSequence>> {
        match (self.data_format, &self.pos, &self.neg, &self.data) {
            (DataFormat::FastaPair, Some(p), Some(n), _) => {
                let mut s = labeled_fasta(p, 1)?;
                s.extend(labeled_fasta(n, 0)?);
                Ok(s)
            }
            (DataFormat::FastaPair, Some(p), None, _) => labeled_fasta(p, 1),
            (DataFormat::Tsv, _, _, Some(d)) => Ok(read_tsv(d, false)?),
            (DataFormat::FastaPair, ..) => bail!("--data-format fasta-pair needs --pos (and optionally --neg)"),
            (DataFormat::Tsv, ..) => bail!("--data-format tsv needs --data"),
        }
    }
}

fn labeled_fasta(path: &Path, label: u8) -> Result<Vec<RawSequence>> {
    read_fasta(path)?
        .into_iter()
        .map(|(id, bases)| Ok(RawSequence::new(id, &bases, label)?))
        .collect()
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    Onehot,
    Embedding,
}

#[derive(Args)]
struct ArchArgs {
    /// Named architecture preset.
    #[arg(long, conflicts_with = "spec_file")]
    arch: Option<String>,
    /// Architecture description as key=value lines.
    #[arg(long)]
    spec_file: Option<PathBuf>,
    /// Input representation; presets accept only their own.
    #[arg(long, value_enum)]
    input: Option<InputArg>,
}

impl ArchArgs {
    fn spec(&self) -> Result<ArchSpec> {
        let spec = match (&self.arch, &self.spec_file) {
            (Some(name), _) => preset(name)?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let kv = KvMap::parse(&text).with_context(|| path.display().to_string())?;
                ArchSpec::from_kv(&kv, "").with_context(|| path.display().to_string())?
            }
            (None, None) => bail!("give --arch or --spec-file"),
        };
        let spec = match self.input {
            Some(InputArg::Onehot) => spec.with_input(InputRepr::OneHot)?,
            Some(InputArg::Embedding) => spec.with_input(InputRepr::Embedding)?,
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = MAX_STEPS)]
    max_steps: usize,
    /// Steps between validation checkpoints.
    #[arg(long, default_value_t = EVAL_EVERY)]
    eval_every: usize,
}

impl BudgetArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = selection::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = selection::DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = selection::DEFAULT_RESTARTS)]
    restarts: usize,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    /// Exact number of training steps.
    #[arg(long, default_value_t = MAX_STEPS)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    /// Hyperparameters as key=value lines; defaults are used otherwise.
    #[arg(long)]
    hyper_file: Option<PathBuf>,
    /// Pre-trained embedding table (from `embed`) for embedding models.
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output TSV of id and probability.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MotifArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Fraction of each filter's maximum activation a placement must exceed.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// TSV with a header of model names; first column is the dataset name.
    #[arg(long)]
    table: PathBuf,
    /// Optional TSV of dataset<TAB>positive count for size stratification.
    #[arg(long)]
    sizes: Option<PathBuf>,
    #[arg(long, default_value_t = SIZE_THRESHOLD)]
    size_threshold: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShuffleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = KMER_K)]
    k: usize,
    #[arg(long, default_value_t = KMER_STRIDE)]
    stride: usize,
    #[arg(long, default_value_t = EMBEDDING_DIM)]
    dim: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Center,
    Uniform,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "TGACTCA")]
    motif: String,
    /// Second motif; switches to the spaced two-motif benchmark.
    #[arg(long)]
    second_motif: Option<String>,
    /// Gap range between the two motifs, as MIN-MAX or a single number.
    #[arg(long, default_value = "10")]
    gap: String,
    #[arg(long, default_value_t = 101)]
    length: usize,
    /// Positives (and negatives) to generate.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    mutation: f64,
    #[arg(long, value_enum, default_value = "center")]
    placement: PlacementArg,
    #[arg(long)]
    seed: u64,
    /// Output directory for pos.fa, neg.fa and data.tsv.
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    let data = a.data.dataset()?;
    let spec = a.arch.spec()?;
    let config = SelectionConfig {
        n_trials: a.trials,
        n_folds: a.folds,
        n_restarts: a.restarts,
        train: a.budget.config(),
        workers: a.workers.unwrap_or(0),
    };
    let cal = selection::calibrate(&data, &spec, &config, a.seed)?;
    write(&a.out.join("calibration.tsv"), &cal.report_tsv())?;
    let best = cal.best().clone();
    let fin = selection::finalize(&data, &spec, &best, &config, a.seed)?;
    save_model(&fin.model, &a.out.join("model.txt"))?;
    write(&a.out.join("metrics.tsv"), &fin.state.metrics_tsv(true))?;
    println!(
        "selected trial {} (mean AUC {:.4}, {} steps); restart {} training AUC {:.4}",
        cal.best_index,
        cal.trials[cal.best_index].score,
        fin.model.trained_steps,
        fin.chosen,
        fin.restart_aucs[fin.chosen].unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = a.data.dataset()?;
    let spec = a.arch.spec()?;
    let mut hyper = match &a.hyper_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            HyperConfig::from_kv(&KvMap::parse(&text)?, "").with_context(|| path.display().to_string())?
        }
        None => HyperConfig::default_for(spec.input),
    };
    hyper.selected_steps = Some(a.steps);
    hyper.validate_domain(spec.input)?;
    let embedding = match (&a.embedding, spec.input) {
        (Some(path), InputRepr::Embedding) => {
            let e = load_embedding(path)?;
            if e.k != hyper.kmer_k || e.stride != hyper.kmer_stride {
                bail!("{}: table is for k={} stride={}, model uses k={} stride={}", path.display(), e.k, e.stride, hyper.kmer_k, hyper.kmer_stride);
            }
            Some(e.table)
        }
        (Some(_), InputRepr::OneHot) => bail!("{} takes one-hot input; --embedding does not apply", spec.name),
        (None, _) => selection::embedding_for(&spec, &hyper, &data, rng::derive_seed(a.seed, &[rng::EMBED]))?,
    };
    let mut model = build_model(&spec, &hyper, data.fixed_length, embedding, rng::derive_seed(a.seed, &[rng::INIT]))?;
    let config = TrainConfig {
        max_steps: a.steps,
        eval_every: EVAL_EVERY.min(a.steps),
        ..TrainConfig::default()
    };
    let state = training::train(&mut model, &data, None, &config, a.seed)?;
    save_model(&model, &a.out.join("model.txt"))?;
    write(&a.out.join("metrics.tsv"), &state.metrics_tsv(true))?;
    let auc = roc_auc(&model.predict(&data.sequences)?, &data.labels())?;
    println!("trained {} for {} steps; training AUC {auc:.4}", spec.name, model.trained_steps);
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let seqs = a.data.sequences()?;
    let probs = model.predict(&seqs)?;
    let mut out = String::from("id\tprobability\n");
    for (s, p) in seqs.iter().zip(&probs) {
        out.push_str(&format!("{}\t{p:.16e}\n", s.id));
    }
    write(&a.out, &out)?;
    let labels: Vec<u8> = seqs.iter().map(|s| s.label).collect();
    if let Ok(auc) = roc_auc(&probs, &labels) {
        log::info!("AUC {auc:.4} over {} labeled sequences", seqs.len());
    }
    Ok(())
}

fn cmd_motifs(a: &MotifArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let seqs = a.data.sequences()?;
    let scan = motif::scan(&model, &seqs)?;
    let fragments = scan.fragments(&seqs, a.threshold);
    let pfms = motif::pfms_from(&fragments);
    let empty = fragments.len() - pfms.len();
    let histogram = ActivationProfile::from_fragments(&fragments, &seqs, scan.geometry);
    write(&a.out.join("histogram.tsv"), &histogram.tsv())?;
    if pfms.is_empty() {
        bail!("none of the {} filters kept a fragment", fragments.len());
    }
    motif::export_meme(&pfms, &a.out.join("motifs.meme"))?;
    let logos: String = pfms.iter().map(|p| motif::text_logo(p) + "\n").collect();
    write(&a.out.join("logos.txt"), &logos)?;
    println!("{} motifs written; {empty} filters without fragments omitted", pfms.len());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let table = AucTable::read_tsv(&a.table)?;
    let cmp = compare_models(&table)?;
    write(&a.out.join("pvalues.tsv"), &cmp.p_value_tsv())?;
    write(&a.out.join("mean_diff.tsv"), &cmp.mean_diff_tsv())?;
    write(&a.out.join("pairs.tsv"), &cmp.pairs_tsv())?;
    if let Some(path) = &a.sizes {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut counts = Vec::with_capacity(table.datasets.len());
        for d in &table.datasets {
            let line = text
                .lines()
                .enumerate()
                .find(|(_, l)| l.split('\t').next() == Some(d.as_str()))
                .with_context(|| format!("{}: no size for dataset {d}", path.display()))?;
            let n: usize = line
                .1
                .split('\t')
                .nth(1)
                .and_then(|v| v.trim().parse().ok())
                .with_context(|| format!("{}:{}: bad positive count", path.display(), line.0 + 1))?;
            counts.push(n);
        }
        let strata = stratify_by_size(&table, &counts, a.size_threshold)?;
        for (name, g) in [("small", &strata.small), ("large", &strata.large)] {
            if g.is_empty() {
                log::warn!("{name} group (threshold {}) is empty", a.size_threshold);
            }
        }
        write(&a.out.join("strata.tsv"), &strata.tsv(&table.models))?;
    }
    println!("{} pairs compared over {} datasets", cmp.pairs.len(), table.datasets.len());
    Ok(())
}

fn cmd_shuffle(a: &ShuffleArgs) -> Result<()> {
    let records = labeled_fasta(&a.input, 0)?;
    let mut r = rng::stream(a.seed, &[rng::SAMPLE]);
    let shuffled: Vec<RawSequence> = records
        .iter()
        .map(|s| RawSequence {
            id: s.id.clone(),
            ..dinuc_shuffle(s, &mut r)
        })
        .collect();
    write_fasta(&a.out, &shuffled)?;
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let seqs = a.data.sequences()?;
    let table = train_on_sequences(&seqs, a.k, a.stride, a.dim, rng::derive_seed(a.seed, &[rng::EMBED]))?;
    save_embedding(
        &EmbeddingFile {
            k: a.k,
            stride: a.stride,
            table,
        },
        &a.out,
    )?;
    Ok(())
}

fn parse_gap(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = s.split_once('-').unwrap_or((s, s));
    let lo: usize = lo.trim().parse().with_context(|| format!("bad gap {s:?}"))?;
    let hi: usize = hi.trim().parse().with_context(|| format!("bad gap {s:?}"))?;
    if lo > hi {
        bail!("empty gap range {s:?}");
    }
    Ok(lo..=hi)
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut spec = PlantSpec::new(&a.motif, a.length, a.n);
    spec.mutation_prob = a.mutation;
    spec.placement = match a.placement {
        PlacementArg::Center => Placement::Center,
        PlacementArg::Uniform => Placement::Uniform,
    };
    let syn = match &a.second_motif {
        Some(b) => {
            let mut other = PlantSpec::new(b, a.length, a.n);
            other.mutation_prob = a.mutation;
            synth::two_motif_spaced(&spec, &other, parse_gap(&a.gap)?, a.seed)?
        }
        None => synth::generate(&spec, a.seed)?,
    };
    let seqs = &syn.dataset.sequences;
    let (pos, neg): (Vec<RawSequence>, Vec<RawSequence>) = seqs.iter().cloned().partition(|s| s.label == 1);
    write_fasta(&a.out.join("pos.fa"), &pos)?;
    write_fasta(&a.out.join("neg.fa"), &neg)?;
    write_tsv(&a.out.join("data.tsv"), seqs)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Motifs(a) => cmd_motifs(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Shuffle(a) => cmd_shuffle(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("seqbind: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
