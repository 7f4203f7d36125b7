//! Sequence ingestion and encoding: FASTA/TSV parsing, one-hot and k-mer
//! representations, dinucleotide-preserving shuffles, stratified folds and
//! minibatch streams.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng;

/// Nucleotide alphabet in channel order.
pub const ALPHABET: [u8; 4] = *b"ACGT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSequence {
    pub id: String,
    /// Uppercase, over `{A,C,G,T,N}`.
    pub bases: String,
    pub label: u8,
}

impl RawSequence {
    pub fn new(id: impl Into<String>, bases: &str, label: u8) -> Result<Self> {
        let id = id.into();
        let bases = normalize_bases(&id, bases)?;
        if bases.is_empty() {
            return Err(Error::invalid(format!("sequence {id} is empty")));
        }
        Ok(RawSequence { id, bases, label })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

/// Uppercases and maps `U` to `T`; rejects anything outside `ACGTUN`.
pub fn normalize_bases(id: &str, raw: &str) -> Result<String> {
    raw.chars()
        .map(|c| match c.to_ascii_uppercase() {
            'U' => Ok('T'),
            u @ ('A' | 'C' | 'G' | 'T' | 'N') => Ok(u),
            _ => Err(Error::InvalidBase {
                id: id.to_string(),
                ch: c,
            }),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    /// `4 × L`, rows A, C, G, T.
    OneHot(Tensor),
    /// k-mer vocabulary indices.
    Tokens(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub encoding: Encoding,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<RawSequence>,
    pub fixed_length: usize,
}

impl Dataset {
    /// Harmonizes lengths to the modal length and checks both classes are
    /// present.
    pub fn new(sequences: Vec<RawSequence>) -> Result<Self> {
        let ds = Self::harmonized(sequences)?;
        let pos = ds.num_positives();
        if pos == 0 || pos == ds.len() {
            return Err(Error::SingleClass);
        }
        Ok(ds)
    }

    /// Like [`Dataset::new`] but without the two-class requirement, for
    /// prediction inputs.
    pub fn unlabeled(sequences: Vec<RawSequence>) -> Result<Self> {
        Self::harmonized(sequences)
    }

    /// Harmonizes to an explicit length.
    pub fn with_length(sequences: Vec<RawSequence>, length: usize) -> Self {
        let sequences = sequences
            .into_iter()
            .map(|mut s| {
                s.bases = fit_length(&s.bases, length);
                s
            })
            .collect();
        Dataset {
            sequences,
            fixed_length: length,
        }
    }

    fn harmonized(sequences: Vec<RawSequence>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("no sequences"));
        }
        let length = modal_length(sequences.iter().map(RawSequence::len));
        Ok(Self::with_length(sequences, length))
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.sequences.iter().filter(|s| s.label == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    /// Sub-dataset with the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            fixed_length: self.fixed_length,
        }
    }
}

/// Most frequent length; ties go to the longer length.
fn modal_length(lengths: impl Iterator<Item = usize>) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in lengths {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(len, c)| (c, len))
        .map(|(len, _)| len)
        .unwrap_or(0)
}

/// Right-pads with `N` or trims equally from both ends (extra base from the
/// right) to reach `length`.
pub fn fit_length(bases: &str, length: usize) -> String {
    let n = bases.len();
    if n == length {
        bases.to_string()
    } else if n < length {
        let mut s = bases.to_string();
        s.extend(std::iter::repeat_n('N', length - n));
        s
    } else {
        let left = (n - length) / 2;
        bases[left..left + length].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Positives and negatives in separate FASTA files.
    FastaPair { positives: PathBuf, negatives: PathBuf },
    /// `SEQ<TAB>LABEL` per line.
    Tsv(PathBuf),
}

fn read_text(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(text)
}

/// FASTA records as `(id, normalized bases)`. Multi-line records are joined.
pub fn read_fasta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut records: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            records.push((id, String::new()));
        } else if !line.trim().is_empty() {
            let Some((id, seq)) = records.last_mut() else {
                return Err(Error::parse(path, lineno + 1, "sequence data before first '>' header"));
            };
            seq.push_str(&normalize_bases(id, line.trim())?);
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    for (i, (id, seq)) in records.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::invalid(format!("{}: record {} ({id}) is empty", path.display(), i + 1)));
        }
    }
    Ok(records)
}

fn read_fasta_labeled(path: &Path, label: u8) -> Result<Vec<RawSequence>> {
    read_fasta(path)?
        .into_iter()
        .map(|(id, bases)| RawSequence::new(id, &bases, label))
        .collect()
}

/// `SEQ<TAB>LABEL` lines. With `require_label = false` a bare `SEQ` line is
/// accepted and labeled 0.
pub fn read_tsv(path: &Path, require_label: bool) -> Result<Vec<RawSequence>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let seq = fields.next().unwrap_or("").trim();
        let label = match fields.next().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            Some(other) => {
                return Err(Error::parse(path, lineno + 1, format!("label {other:?} is not 0 or 1")));
            }
            None if require_label => return Err(Error::parse(path, lineno + 1, "missing label column")),
            None => 0,
        };
        let id = format!("line{}", lineno + 1);
        let rec = RawSequence::new(id, seq, label).map_err(|e| match e {
            Error::InvalidBase { ch, .. } => {
                Error::parse(path, lineno + 1, format!("invalid character {ch:?}"))
            }
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Labeled records exactly as read, without length harmonization.
pub fn read_sequences(source: &DataSource) -> Result<Vec<RawSequence>> {
    match source {
        DataSource::FastaPair { positives, negatives } => {
            let mut s = read_fasta_labeled(positives, 1)?;
            s.extend(read_fasta_labeled(negatives, 0)?);
            Ok(s)
        }
        DataSource::Tsv(path) => read_tsv(path, true),
    }
}

/// Reads a labeled training/test dataset.
pub fn parse_input(source: &DataSource) -> Result<Dataset> {
    Dataset::new(read_sequences(source)?)
}

/// Reads sequences to score. FASTA records get label 0; TSV labels are
/// optional.
pub fn parse_unlabeled(path: &Path, tsv: bool) -> Result<Vec<RawSequence>> {
    if tsv {
        read_tsv(path, false)
    } else {
        read_fasta_labeled(path, 0)
    }
}

pub fn base_index(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// One-hot rows for positions (`L × 4`, position-major) appended to `out`.
pub(crate) fn onehot_positions(bases: &str, out: &mut Vec<f64>) {
    for b in bases.bytes() {
        let mut col = [0.0; 4];
        if let Some(i) = base_index(b) {
            col[i] = 1.0;
        }
        out.extend_from_slice(&col);
    }
}

/// `4 × L` indicator matrix; `N` gives an all-zero column.
pub fn encode_onehot(seq: &RawSequence) -> EncodedSequence {
    let l = seq.len();
    let mut data = vec![0.0; 4 * l];
    for (j, b) in seq.bases.bytes().enumerate() {
        if let Some(i) = base_index(b) {
            data[i * l + j] = 1.0;
        }
    }
    EncodedSequence {
        encoding: Encoding::OneHot(Tensor::new(vec![4, l], data)),
        label: seq.label,
    }
}

/// Lexicographic index of a k-mer over `ACGT`, or `None` if it contains `N`.
pub fn kmer_index(kmer: &[u8]) -> Option<usize> {
    kmer.iter().try_fold(0usize, |acc, &b| base_index(b).map(|i| acc * 4 + i))
}

/// Index reserved for k-mers containing `N`.
pub fn unk_index(k: usize) -> usize {
    4usize.pow(k as u32)
}

pub fn num_windows(len: usize, k: usize, stride: usize) -> usize {
    (len - k) / stride + 1
}

pub(crate) fn tokens_of(bases: &str, k: usize, stride: usize) -> Vec<usize> {
    let bytes = bases.as_bytes();
    let unk = unk_index(k);
    (0..num_windows(bytes.len(), k, stride))
        .map(|t| kmer_index(&bytes[t * stride..t * stride + k]).unwrap_or(unk))
        .collect()
}

/// Overlapping k-mers with window stride `stride`; trailing bases that do not
/// fill a window are dropped.
pub fn tokenize_kmers(seq: &RawSequence, k: usize, stride: usize) -> Result<EncodedSequence> {
    if k == 0 || stride == 0 {
        return Err(Error::invalid("k and stride must be at least 1"));
    }
    if seq.len() < k {
        return Err(Error::invalid(format!(
            "sequence {} of length {} is shorter than k={k}",
            seq.id,
            seq.len()
        )));
    }
    Ok(EncodedSequence {
        encoding: Encoding::Tokens(tokens_of(&seq.bases, k, stride)),
        label: seq.label,
    })
}

/// Random sequence with the same dinucleotide counts and the same first and
/// last characters (Altschul–Erickson Euler-path shuffle). The result is
/// labeled 0.
pub fn dinuc_shuffle<R: Rng + ?Sized>(seq: &RawSequence, rng: &mut R) -> RawSequence {
    RawSequence {
        id: format!("{}_shuf", seq.id),
        bases: dinuc_shuffle_str(&seq.bases, rng),
        label: 0,
    }
}

pub fn dinuc_shuffle_str<R: Rng + ?Sized>(bases: &str, rng: &mut R) -> String {
    let s = bases.as_bytes();
    if s.len() <= 2 {
        return bases.to_string();
    }
    let last = *s.last().unwrap();
    // Outgoing edge lists per vertex, kept in a deterministic vertex order.
    let mut edges: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    for w in s.windows(2) {
        edges.entry(w[0]).or_default().push(w[1]);
    }
    edges.entry(last).or_default();

    // Pick a last exit edge for each non-root vertex so that the exits form
    // an arborescence into `last`; resample until they do.
    let vertices: Vec<u8> = edges.keys().copied().collect();
    let mut last_edge: HashMap<u8, usize> = HashMap::new();
    loop {
        last_edge.clear();
        for &v in &vertices {
            if v != last {
                let n = edges[&v].len();
                last_edge.insert(v, rng.random_range(0..n));
            }
        }
        let reaches_root = vertices.iter().all(|&v| {
            let mut cur = v;
            for _ in 0..=vertices.len() {
                if cur == last {
                    return true;
                }
                cur = edges[&cur][last_edge[&cur]];
            }
            false
        });
        if reaches_root {
            break;
        }
    }

    for (&v, list) in edges.iter_mut() {
        if let Some(&ix) = last_edge.get(&v) {
            let exit = list.remove(ix);
            list.shuffle(rng);
            list.push(exit);
        } else {
            list.shuffle(rng);
        }
    }

    let mut cursor: HashMap<u8, usize> = HashMap::new();
    let mut out = Vec::with_capacity(s.len());
    let mut cur = s[0];
    out.push(cur);
    for _ in 1..s.len() {
        let c = cursor.entry(cur).or_default();
        let next = edges[&cur][*c];
        *c += 1;
        out.push(next);
        cur = next;
    }
    String::from_utf8(out).expect("ascii")
}

/// Counts of the 16 `ACGT` dinucleotides, row-major by first letter.
pub fn dinucleotide_counts(bases: &str) -> [usize; 16] {
    let mut counts = [0; 16];
    for w in bases.as_bytes().windows(2) {
        if let (Some(a), Some(b)) = (base_index(w[0]), base_index(w[1])) {
            counts[a * 4 + b] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Label-stratified k-fold partition. Positives and then negatives are dealt
/// round-robin after a seeded shuffle, so fold sizes differ by at most one
/// overall and per class.
pub fn make_folds(labels: &[u8], n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if pos.len() < n_folds || neg.len() < n_folds {
        return Err(Error::invalid(format!(
            "{} positives / {} negatives cannot fill {n_folds} folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut r = rng::stream(seed, &[rng::SPLIT]);
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);
    let mut assignment = vec![0usize; labels.len()];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = slot % n_folds;
    }
    Ok((0..n_folds)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, validation }
        })
        .collect())
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::BATCH, epoch]));
    idx
}

/// Consecutive chunks of one epoch's permutation; the last may be short.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64) -> impl Iterator<Item = Vec<usize>> {
    let perm = epoch_permutation(n, seed, epoch);
    let size = batch_size.max(1);
    (0..n.div_ceil(size)).map(move |b| perm[b * size..((b + 1) * size).min(n)].to_vec())
}

/// Endless minibatch stream across epochs.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchStream {
            n,
            batch_size: batch_size.max(1),
            seed,
            epoch: 0,
            perm: epoch_permutation(n, seed, 0),
            cursor: 0,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.n == 0 {
            return None;
        }
        if self.cursor >= self.n {
            self.epoch += 1;
            self.perm = epoch_permutation(self.n, self.seed, self.epoch);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let batch = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(bases: &str) -> RawSequence {
        RawSequence::new("s", bases, 1).unwrap()
    }

    #[test]
    fn fasta_record_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let pos = dir.path().join("pos.fa");
        let neg = dir.path().join("neg.fa");
        fs::write(&pos, ">s1\nacgu\n").unwrap();
        fs::write(&neg, ">n1\nTTTT\n").unwrap();
        let ds = parse_input(&DataSource::FastaPair {
            positives: pos,
            negatives: neg,
        })
        .unwrap();
        assert_eq!(ds.sequences[0].bases, "ACGT");
        assert_eq!(ds.sequences[0].label, 1);
        assert_eq!(ds.sequences[1].label, 0);
    }

    #[test]
    fn tsv_line_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "ACGT\t0\nAAAA\t1\n").unwrap();
        let ds = parse_input(&DataSource::Tsv(p)).unwrap();
        assert_eq!(ds.sequences[0].bases, "ACGT");
        assert_eq!(ds.sequences[0].label, 0);
    }

    #[test]
    fn tsv_bad_label_and_bad_char_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "ACGT\t0\nACGT\t2\n").unwrap();
        let err = parse_input(&DataSource::Tsv(p.clone())).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        fs::write(&p, "ACXT\t0\n").unwrap();
        assert!(parse_input(&DataSource::Tsv(p.clone())).is_err());
        fs::File::create(&p).unwrap().write_all(b"").unwrap();
        assert!(matches!(parse_input(&DataSource::Tsv(p)), Err(Error::EmptyFile { .. })));
    }

    #[test]
    fn shorter_sequence_padded_right() {
        let mut seqs: Vec<RawSequence> = (0..3)
            .map(|i| RawSequence::new(format!("p{i}"), &"A".repeat(101), 1).unwrap())
            .collect();
        seqs.push(RawSequence::new("short", &"C".repeat(99), 0).unwrap());
        let ds = Dataset::new(seqs).unwrap();
        assert_eq!(ds.fixed_length, 101);
        assert_eq!(ds.sequences[3].bases, format!("{}NN", "C".repeat(99)));
    }

    #[test]
    fn longer_sequence_center_trimmed() {
        assert_eq!(fit_length("AACGTTT", 3), "CGT");
        assert_eq!(fit_length("ACGTA", 4), "ACGT");
    }

    #[test]
    fn onehot_examples() {
        let e = encode_onehot(&raw("ACGT"));
        let Encoding::OneHot(m) = e.encoding else { panic!() };
        assert_eq!(m.shape(), &[4, 4]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.at2(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let Encoding::OneHot(m) = encode_onehot(&raw("AAA")).encoding else { panic!() };
        assert_eq!(m.data(), &[1., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        let Encoding::OneHot(m) = encode_onehot(&raw("AN")).encoding else { panic!() };
        assert_eq!(m.rows(), vec![vec![1., 0.], vec![0., 0.], vec![0., 0.], vec![0., 0.]]);
    }

    #[test]
    fn kmer_examples() {
        let toks = |s: &str, k, st| match tokenize_kmers(&raw(s), k, st).unwrap().encoding {
            Encoding::Tokens(t) => t,
            _ => unreachable!(),
        };
        let idx = |k: &str| kmer_index(k.as_bytes()).unwrap();
        assert_eq!(toks("ACGTA", 3, 1), vec![idx("ACG"), idx("CGT"), idx("GTA")]);
        assert_eq!(toks("ACG", 3, 1), vec![idx("ACG")]);
        assert_eq!(toks("ACGTAC", 3, 2), vec![idx("ACG"), idx("GTA")]);
        assert_eq!(toks("ANGT", 2, 1), vec![unk_index(2), unk_index(2), idx("GT")]);
        assert!(tokenize_kmers(&raw("AC"), 3, 1).is_err());
    }

    #[test]
    fn shuffle_fixed_points() {
        let mut r = rng::stream(1, &[]);
        assert_eq!(dinuc_shuffle(&raw("AAAA"), &mut r).bases, "AAAA");
        for _ in 0..20 {
            assert_eq!(dinuc_shuffle(&raw("ACGT"), &mut r).bases, "ACGT");
        }
        assert_eq!(dinuc_shuffle(&raw("ACGT"), &mut r).label, 0);
    }

    #[test]
    fn folds_stratified_and_deterministic() {
        let labels = [1, 1, 1, 0, 0, 0];
        let folds = make_folds(&labels, 3, 5).unwrap();
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.validation.iter().filter(|&&i| labels[i] == 1).count(), 1);
        }
        assert_eq!(folds, make_folds(&labels, 3, 5).unwrap());
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(make_folds(&[1, 1, 0, 0], 3, 0).is_err());
    }

    #[test]
    fn batches() {
        let b: Vec<_> = batch_iter(10, 128, 0, 0).collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 10);
        let b: Vec<_> = batch_iter(256, 128, 0, 0).collect();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..256).collect::<Vec<_>>());
        let (e0, e1) = (epoch_permutation(50, 3, 0), epoch_permutation(50, 3, 1));
        assert_ne!(e0, e1);
        let mut s = e1.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stream_rolls_over_epochs() {
        let mut s = BatchStream::new(5, 2, 9);
        let first: Vec<Vec<usize>> = (&mut s).take(3).collect();
        assert_eq!(first.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(s.next().unwrap().len(), 2);
        assert_eq!(s.epoch(), 1);
    }
}
