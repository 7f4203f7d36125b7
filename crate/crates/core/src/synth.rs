//! Planted-motif synthetic datasets.

use std::ops::RangeInclusive;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SeqRng};
use crate::seq::{dinuc_shuffle, Dataset, RawSequence, ALPHABET};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Motif starts at `(length - motif_len) / 2`.
    Center,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub motif: String,
    /// Chance that each planted base is replaced by one of the other three.
    pub mutation_prob: f64,
    pub length: usize,
    pub n_positives: usize,
    pub n_negatives: usize,
    pub placement: Placement,
}

impl PlantSpec {
    pub fn new(motif: &str, length: usize, n: usize) -> Self {
        PlantSpec {
            motif: motif.to_string(),
            mutation_prob: 0.0,
            length,
            n_positives: n,
            n_negatives: n,
            placement: Placement::Center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.motif.is_empty() || !self.motif.bytes().all(|b| ALPHABET.contains(&b)) {
            return Err(Error::invalid(format!("motif {:?} must be a nonempty ACGT word", self.motif)));
        }
        if self.motif.len() >= self.length {
            return Err(Error::invalid(format!(
                "motif length {} not shorter than sequence length {}",
                self.motif.len(),
                self.length
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::invalid(format!("mutation probability {} not in [0, 1]", self.mutation_prob)));
        }
        if self.n_positives == 0 || self.n_negatives == 0 {
            return Err(Error::invalid("need at least one positive and one negative"));
        }
        Ok(())
    }

    pub fn center_start(&self) -> usize {
        (self.length - self.motif.len()) / 2
    }
}

fn background(len: usize, r: &mut SeqRng) -> Vec<u8> {
    (0..len).map(|_| ALPHABET[r.random_range(0..4)]).collect()
}

fn plant(seq: &mut [u8], start: usize, motif: &str, mutation_prob: f64, r: &mut SeqRng) {
    for (i, &m) in motif.as_bytes().iter().enumerate() {
        seq[start + i] = if mutation_prob > 0.0 && r.random::<f64>() < mutation_prob {
            let others: Vec<u8> = ALPHABET.iter().copied().filter(|&b| b != m).collect();
            others[r.random_range(0..3)]
        } else {
            m
        };
    }
}

fn raw(id: String, bytes: Vec<u8>, label: u8) -> RawSequence {
    RawSequence {
        id,
        bases: String::from_utf8(bytes).expect("ACGT"),
        label,
    }
}

/// Dataset plus the planted start position of each positive.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub sites: Vec<usize>,
}

fn negatives_by_shuffle(positives: &[RawSequence], n: usize, r: &mut SeqRng) -> Vec<RawSequence> {
    (0..n)
        .map(|i| {
            let mut s = dinuc_shuffle(&positives[i % positives.len()], r);
            s.id = format!("neg{i}");
            s
        })
        .collect()
}

/// Positives carry one planted motif in a uniform background; negatives are
/// dinucleotide shuffles of the positives (cycled when there are more
/// negatives than positives). Positives come first.
pub fn generate(spec: &PlantSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let mut r = rng::stream(seed, &[rng::SAMPLE]);
    let mut positives = Vec::with_capacity(spec.n_positives);
    let mut sites = Vec::with_capacity(spec.n_positives);
    for i in 0..spec.n_positives {
        let mut s = background(spec.length, &mut r);
        let start = match spec.placement {
            Placement::Center => spec.center_start(),
            Placement::Uniform => r.random_range(0..=spec.length - spec.motif.len()),
        };
        plant(&mut s, start, &spec.motif, spec.mutation_prob, &mut r);
        positives.push(raw(format!("pos{i}"), s, 1));
        sites.push(start);
    }
    let negatives = negatives_by_shuffle(&positives, spec.n_negatives, &mut r);
    positives.extend(negatives);
    Ok(Synthetic {
        dataset: Dataset::new(positives)?,
        sites,
    })
}

/// Positives hold motif `a` followed by motif `b` after a gap drawn from
/// `gap`; negatives hold both motifs at independent uniform positions (the
/// later one wins where they overlap). Sizes, counts and mutation rate come
/// from `a`; `b` supplies only its motif and mutation rate.
pub fn two_motif_spaced(a: &PlantSpec, b: &PlantSpec, gap: RangeInclusive<usize>, seed: u64) -> Result<Synthetic> {
    a.validate()?;
    let len = a.length;
    let (la, lb) = (a.motif.len(), b.motif.len());
    if gap.is_empty() || la + gap.end() + lb > len {
        return Err(Error::invalid(format!(
            "motifs of length {la} and {lb} with gap up to {} do not fit in {len} bases",
            gap.end()
        )));
    }
    PlantSpec { length: len, ..b.clone() }.validate()?;
    let mut r = rng::stream(seed, &[rng::SAMPLE]);
    let mut seqs = Vec::with_capacity(a.n_positives + a.n_negatives);
    let mut sites = Vec::with_capacity(a.n_positives);
    for i in 0..a.n_positives {
        let g = r.random_range(gap.clone());
        let start = r.random_range(0..=len - (la + g + lb));
        let mut s = background(len, &mut r);
        plant(&mut s, start, &a.motif, a.mutation_prob, &mut r);
        plant(&mut s, start + la + g, &b.motif, b.mutation_prob, &mut r);
        seqs.push(raw(format!("pos{i}"), s, 1));
        sites.push(start);
    }
    for i in 0..a.n_negatives {
        let mut s = background(len, &mut r);
        let sa = r.random_range(0..=len - la);
        let sb = r.random_range(0..=len - lb);
        plant(&mut s, sa, &a.motif, a.mutation_prob, &mut r);
        plant(&mut s, sb, &b.motif, b.mutation_prob, &mut r);
        seqs.push(raw(format!("neg{i}"), s, 0));
    }
    Ok(Synthetic {
        dataset: Dataset::new(seqs)?,
        sites,
    })
}
