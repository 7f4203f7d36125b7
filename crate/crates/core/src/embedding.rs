//! k-mer vocabulary and skip-gram (negative sampling) embeddings.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{sigmoid, Tensor};
use crate::rng;
use crate::seq::{kmer_index, tokens_of, unk_index, RawSequence, ALPHABET};

/// All `4^k` k-mers in lexicographic order, followed by `UNK`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    k: usize,
}

impl Vocab {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        unk_index(self.k) + 1
    }

    pub fn unk(&self) -> usize {
        unk_index(self.k)
    }

    /// Index of `kmer`; anything that is not a length-k `ACGT` word maps to
    /// `UNK`.
    pub fn index(&self, kmer: &str) -> usize {
        if kmer.len() != self.k {
            return self.unk();
        }
        kmer_index(kmer.as_bytes()).unwrap_or(self.unk())
    }

    pub fn kmer(&self, index: usize) -> Option<String> {
        if index > self.unk() {
            return None;
        }
        if index == self.unk() {
            return Some("UNK".to_string());
        }
        let mut out = vec![b'A'; self.k];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = ALPHABET[rest % 4];
            rest /= 4;
        }
        Some(String::from_utf8(out).expect("ascii"))
    }
}

pub fn build_vocab(k: usize) -> Result<Vocab> {
    if !(1..=8).contains(&k) {
        return Err(Error::invalid(format!("k-mer length {k} outside 1..=8")));
    }
    Ok(Vocab { k })
}

/// `vocab_size × d` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor) -> Result<Self> {
        if matrix.ndim() != 2 || !matrix.all_finite() {
            return Err(Error::invalid("embedding table must be a finite 2-D matrix"));
        }
        Ok(EmbeddingTable { matrix })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Word2VecConfig {
    pub dim: usize,
    /// Maximum context distance on each side.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting rate; decays linearly to `learning_rate · 1e-4`.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig {
            dim: 50,
            window: 5,
            negatives: 5,
            epochs: 10,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Word2VecResult {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Skip-gram with negative sampling. Each center token's input vector is
/// trained to score its context tokens above `negatives` draws from the
/// unigram^0.75 distribution. Per position the context radius is drawn
/// uniformly from `1..=window`.
pub fn train_word2vec(corpus: &[Vec<usize>], vocab_size: usize, config: &Word2VecConfig) -> Result<Word2VecResult> {
    let total: usize = corpus.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::invalid("empty embedding corpus"));
    }
    if config.dim == 0 || config.window == 0 || config.epochs == 0 {
        return Err(Error::invalid("embedding dim, window and epochs must be positive"));
    }
    let d = config.dim;
    let mut counts = vec![0f64; vocab_size];
    for &t in corpus.iter().flatten() {
        if t >= vocab_size {
            return Err(Error::IndexOutOfRange {
                index: t,
                size: vocab_size,
            });
        }
        counts[t] += 1.0;
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75))).map_err(|e| Error::invalid(e.to_string()))?;

    let mut r = rng::stream(config.seed, &[rng::EMBED]);
    let mut input: Vec<f64> = (0..vocab_size * d).map(|_| (r.random::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0; vocab_size * d];
    let mut grad_in = vec![0.0; d];

    let schedule_len = (config.epochs * total) as f64 + 1.0;
    let mut processed = 0usize;
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let (mut loss_sum, mut pairs) = (0.0, 0usize);
        for sentence in corpus {
            for (i, &center) in sentence.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / schedule_len).max(1e-4);
                processed += 1;
                let radius = r.random_range(1..=config.window);
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(sentence.len() - 1);
                for (j, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * d;
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut r);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * d;
                        let dot: f64 = (0..d).map(|q| input[v + q] * output[u + q]).sum();
                        let p = sigmoid(dot);
                        loss_sum -= if label == 1.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                        let g = (label - p) * lr;
                        for q in 0..d {
                            grad_in[q] += g * output[u + q];
                            output[u + q] += g * input[v + q];
                        }
                    }
                    for q in 0..d {
                        input[v + q] += grad_in[q];
                    }
                    pairs += 1;
                }
            }
        }
        epoch_loss.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
    }

    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: processed,
            what: "embedding table".into(),
        });
    }
    Ok(Word2VecResult {
        table: EmbeddingTable::new(Tensor::new(vec![vocab_size, d], input))?,
        epoch_loss,
    })
}

/// Skip-gram table over the k-mer tokens of `seqs`, sized for the full
/// vocabulary of `k`-mers plus `UNK`.
pub fn train_on_sequences(
    seqs: &[RawSequence],
    k: usize,
    stride: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let vocab = build_vocab(k)?;
    let corpus: Vec<Vec<usize>> = seqs.iter().map(|s| tokens_of(&s.bases, k, stride)).collect();
    let config = Word2VecConfig {
        dim,
        seed,
        ..Word2VecConfig::default()
    };
    Ok(train_word2vec(&corpus, vocab.size(), &config)?.table)
}

/// `d × T` matrix whose column `t` is the table row of `tokens[t]`.
pub fn embed_sequence(tokens: &[usize], table: &EmbeddingTable) -> Result<Tensor> {
    let (v, d) = (table.vocab_size(), table.dim());
    let mut rows = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        if t >= v {
            return Err(Error::IndexOutOfRange { index: t, size: v });
        }
        rows.extend_from_slice(table.row(t));
    }
    Ok(Tensor::new(vec![tokens.len(), d], rows).transposed())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    #[test]
    fn vocab_examples() {
        let v = build_vocab(1).unwrap();
        assert_eq!(
            ["A", "C", "G", "T"].map(|k| v.index(k)),
            [0, 1, 2, 3]
        );
        assert_eq!(v.unk(), 4);
        assert_eq!(build_vocab(3).unwrap().size(), 65);
        assert_eq!(build_vocab(3).unwrap().index("AAC"), 1);
        assert_eq!(build_vocab(3).unwrap().kmer(1).unwrap(), "AAC");
        assert_eq!(build_vocab(3).unwrap().index("ANA"), 64);
        assert!(build_vocab(0).is_err() && build_vocab(9).is_err());
        let v3 = build_vocab(3).unwrap();
        for i in 0..64 {
            assert_eq!(v3.index(&v3.kmer(i).unwrap()), i);
        }
    }

    fn small_config(seed: u64) -> Word2VecConfig {
        Word2VecConfig {
            dim: 16,
            window: 2,
            negatives: 5,
            epochs: 10,
            learning_rate: 0.025,
            seed,
        }
    }

    #[test]
    fn degenerate_corpus_loss_does_not_increase() {
        let corpus = vec![vec![0usize; 50]; 4];
        let res = train_word2vec(&corpus, 1, &small_config(1)).unwrap();
        assert!(res.table.matrix.all_finite());
        assert!(res.epoch_loss.last().unwrap() <= res.epoch_loss.first().unwrap());
    }

    #[test]
    fn deterministic_given_seed() {
        let corpus: Vec<Vec<usize>> = (0..20).map(|i| (0..30).map(|j| (i * 7 + j * 3) % 65).collect()).collect();
        let a = train_word2vec(&corpus, 65, &small_config(9)).unwrap();
        let b = train_word2vec(&corpus, 65, &small_config(9)).unwrap();
        assert_eq!(a.table, b.table);
        assert!(train_word2vec(&[], 65, &small_config(9)).is_err());
    }

    #[test]
    fn cooccurring_tokens_are_closer() {
        // Tokens 0 (X) and 1 (Y) share sentences with 2, 3; token 4 (Z)
        // lives only with 5, 6, 7.
        let mut wins = 0;
        for seed in 0..10 {
            let mut r = rng::stream(seed, &[99]);
            let mut corpus = Vec::new();
            for s in 0..200 {
                let pool: &[usize] = if s % 2 == 0 { &[0, 1, 2, 3] } else { &[4, 5, 6, 7] };
                let mut sent: Vec<usize> = (0..12).map(|i| pool[i % pool.len()]).collect();
                sent.shuffle(&mut r);
                corpus.push(sent);
            }
            let res = train_word2vec(&corpus, 8, &small_config(seed)).unwrap();
            let t = &res.table;
            if cosine(t.row(0), t.row(1)) > cosine(t.row(0), t.row(4)) {
                wins += 1;
            }
        }
        assert!(wins >= 9, "{wins}/10");
    }

    #[test]
    fn embed_lookup() {
        let table = EmbeddingTable::new(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.])).unwrap();
        let m = embed_sequence(&[2], &table).unwrap();
        assert_eq!(m.shape(), &[2, 1]);
        assert_eq!(m.data(), &[5., 6.]);
        let m = embed_sequence(&[0, 1, 2, 1], &table).unwrap();
        assert_eq!(m.shape(), &[2, 4]);
        let swapped = embed_sequence(&[1, 0, 2, 1], &table).unwrap();
        for row in 0..2 {
            assert_eq!(m.at2(row, 0), swapped.at2(row, 1));
            assert_eq!(m.at2(row, 1), swapped.at2(row, 0));
        }
        assert!(embed_sequence(&[3], &table).is_err());
    }
}
