//! Motifs from first-layer convolution filters.
//!
//! Each filter is scanned over a set of sequences. Placements whose ReLU
//! activation exceeds a fraction (one half by default) of the filter's
//! maximum over all sequences are kept, and the nucleotides under each kept
//! placement are stacked into a position frequency matrix.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::arch::{InputRepr, Model};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::layers::{conv1d, Padding};
use crate::seq::{base_index, RawSequence, ALPHABET};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Where a first-layer placement sits in nucleotide coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    /// Nucleotides per input step (the k-mer stride, or 1 for one-hot).
    pub step: usize,
    /// Nucleotides covered by one placement.
    pub span: usize,
    /// Number of placements that do not touch the padding.
    pub placements: usize,
}

impl Geometry {
    pub fn of(model: &Model) -> Result<Self> {
        let bank = model.first_conv()?;
        let (m, d) = (bank.window(), bank.dilation);
        let reach = (m - 1) * d;
        let in_len = model.plan().in_len;
        if reach >= in_len {
            return Err(Error::invalid(format!(
                "filter reach {} exceeds input length {in_len}",
                reach + 1
            )));
        }
        let (step, span) = match model.spec.input {
            InputRepr::OneHot => (1, reach + 1),
            InputRepr::Embedding => (model.hyper.kmer_stride, model.hyper.kmer_k + reach * model.hyper.kmer_stride),
        };
        Ok(Geometry {
            step,
            span,
            placements: in_len - reach,
        })
    }

    /// First nucleotide under placement `p`.
    pub fn start(&self, p: usize) -> usize {
        p * self.step
    }

    /// Nucleotide at the middle of placement `p` (left of middle for even
    /// spans).
    pub fn center(&self, p: usize) -> usize {
        self.start(p) + (self.span - 1) / 2
    }
}

/// ReLU activations of every first-layer filter at every placement that
/// avoids the padding: `values[seq][filter][placement]`.
#[derive(Debug, Clone)]
pub struct ActivationScan {
    pub geometry: Geometry,
    pub filters: usize,
    pub values: Vec<Vec<Vec<f64>>>,
}

pub fn scan(model: &Model, seqs: &[RawSequence]) -> Result<ActivationScan> {
    let geometry = Geometry::of(model)?;
    let bank = model.first_conv()?;
    let values = seqs
        .par_iter()
        .map(|s| -> Result<Vec<Vec<f64>>> {
            let x = model.input_matrix(s)?;
            let y = conv1d(&x, &bank, Padding::Valid)?;
            let p = y.shape()[1];
            Ok(y.data().chunks(p).map(<[f64]>::to_vec).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationScan {
        geometry,
        filters: bank.filters(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub seq_index: usize,
    pub placement: usize,
    pub activation: f64,
    pub bases: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterFragments {
    pub filter: usize,
    pub max_activation: f64,
    pub fragments: Vec<Fragment>,
}

impl FilterFragments {
    /// The filter never fired on any sequence.
    pub fn inactive(&self) -> bool {
        self.max_activation <= 0.0
    }
}

impl ActivationScan {
    /// Placements with activation strictly above `fraction` of each filter's
    /// maximum. Filters whose maximum is not positive keep nothing.
    pub fn fragments(&self, seqs: &[RawSequence], fraction: f64) -> Vec<FilterFragments> {
        let g = self.geometry;
        (0..self.filters)
            .map(|k| {
                let max = self
                    .values
                    .iter()
                    .flat_map(|v| v[k].iter().copied())
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut fragments = Vec::new();
                if max > 0.0 {
                    let threshold = fraction * max;
                    for (i, v) in self.values.iter().enumerate() {
                        for (p, &a) in v[k].iter().enumerate() {
                            if a > threshold {
                                let start = g.start(p);
                                fragments.push(Fragment {
                                    seq_index: i,
                                    placement: p,
                                    activation: a,
                                    bases: seqs[i].bases[start..start + g.span].to_string(),
                                });
                            }
                        }
                    }
                }
                FilterFragments {
                    filter: k,
                    max_activation: max,
                    fragments,
                }
            })
            .collect()
    }
}

/// Half-max fragments for every first-layer filter.
pub fn extract_fragments(model: &Model, seqs: &[RawSequence]) -> Result<Vec<FilterFragments>> {
    extract_fragments_at(model, seqs, DEFAULT_THRESHOLD)
}

pub fn extract_fragments_at(model: &Model, seqs: &[RawSequence], fraction: f64) -> Result<Vec<FilterFragments>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("threshold fraction {fraction} not in [0, 1)")));
    }
    Ok(scan(model, seqs)?.fragments(seqs, fraction))
}

/// Nucleotide counts per column, rows A, C, G, T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pfm {
    pub filter_index: usize,
    pub counts: Vec<[u64; 4]>,
    pub nsites: u64,
}

impl Pfm {
    pub fn width(&self) -> usize {
        self.counts.len()
    }

    pub fn probabilities(&self) -> Vec<[f64; 4]> {
        let n = self.nsites as f64;
        self.counts.iter().map(|c| c.map(|x| x as f64 / n)).collect()
    }

    /// Most frequent letter per column (first in ACGT order on ties).
    pub fn consensus(&self) -> String {
        self.counts
            .iter()
            .map(|c| {
                let best = (0..4).fold(0, |b, i| if c[i] > c[b] { i } else { b });
                ALPHABET[best] as char
            })
            .collect()
    }

    /// Information content per column in bits: `2 + Σ p log2 p`.
    pub fn information(&self) -> Vec<f64> {
        self.probabilities()
            .iter()
            .map(|p| 2.0 + p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>())
            .collect()
    }

    pub fn total_information(&self) -> f64 {
        self.information().iter().sum()
    }
}

/// Stacks equal-length fragments; fragments containing anything other than
/// A, C, G, T are skipped and do not count toward `nsites`.
pub fn build_pfm<S: AsRef<str>>(fragments: &[S], filter_index: usize) -> Result<Pfm> {
    let width = fragments
        .first()
        .map(|f| f.as_ref().len())
        .ok_or_else(|| Error::invalid("no fragments to stack"))?;
    let mut counts = vec![[0u64; 4]; width];
    let mut nsites = 0;
    for f in fragments {
        let f = f.as_ref().as_bytes();
        if f.len() != width {
            return Err(Error::invalid(format!("fragment lengths {width} and {} differ", f.len())));
        }
        let idx: Option<Vec<usize>> = f.iter().map(|&b| base_index(b)).collect();
        if let Some(idx) = idx {
            for (col, i) in counts.iter_mut().zip(idx) {
                col[i] += 1;
            }
            nsites += 1;
        }
    }
    if nsites == 0 {
        return Err(Error::invalid("every fragment contains an ambiguous base"));
    }
    Ok(Pfm {
        filter_index,
        counts,
        nsites,
    })
}

/// PFMs of the filters that kept at least one unambiguous fragment.
pub fn pfms_from(fragments: &[FilterFragments]) -> Vec<Pfm> {
    fragments
        .iter()
        .filter_map(|f| {
            let bases: Vec<&str> = f.fragments.iter().map(|x| x.bases.as_str()).collect();
            build_pfm(&bases, f.filter).ok()
        })
        .collect()
}

const MEME_HEADER: &str = "MEME version 4\n\nALPHABET= ACGT\n\nstrands: + -\n\nBackground letter frequencies\nA 0.25 C 0.25 G 0.25 T 0.25\n";

const MICRO: u64 = 1_000_000;

/// Column probabilities in millionths, rounded by largest remainder so that
/// the printed row sums to exactly 1.
fn micro_units(counts: &[u64; 4]) -> [u64; 4] {
    let total: u64 = counts.iter().sum::<u64>().max(1);
    let scaled = counts.map(|c| u128::from(c) * u128::from(MICRO));
    let mut units = scaled.map(|s| (s / u128::from(total)) as u64);
    let mut order = [0, 1, 2, 3];
    order.sort_by_key(|&i| std::cmp::Reverse(scaled[i] % u128::from(total)));
    let short = MICRO.saturating_sub(units.iter().sum());
    for &i in order.iter().take(short as usize) {
        units[i] += 1;
    }
    units
}

/// MEME minimal motif format with uniform background.
pub fn meme_text(pfms: &[Pfm]) -> Result<String> {
    if pfms.is_empty() {
        return Err(Error::invalid("no motifs to write"));
    }
    let mut out = String::from(MEME_HEADER);
    for pfm in pfms {
        let _ = write!(
            out,
            "\nMOTIF filter_{}\nletter-probability matrix: alength= 4 w= {} nsites= {} E= 0\n",
            pfm.filter_index,
            pfm.width(),
            pfm.nsites
        );
        for counts in &pfm.counts {
            let row: Vec<String> = micro_units(counts)
                .iter()
                .map(|u| format!("{}.{:06}", u / MICRO, u % MICRO))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    Ok(out)
}

pub fn export_meme(pfms: &[Pfm], path: &Path) -> Result<()> {
    write_atomic(path, meme_text(pfms)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemeMotif {
    pub name: String,
    pub nsites: u64,
    pub probabilities: Vec<[f64; 4]>,
}

/// Reads motifs back from MEME minimal format. Only the ACGT alphabet is
/// accepted.
pub fn parse_meme(text: &str, origin: &str) -> Result<Vec<MemeMotif>> {
    let err = |line: usize, msg: String| Error::parse(origin, line, msg);
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim()) != Some("MEME version 4") {
        return Err(err(1, "missing \"MEME version 4\" header".into()));
    }
    if !lines.iter().any(|l| l.trim() == "ALPHABET= ACGT") {
        return Err(err(1, "alphabet is not ACGT".into()));
    }
    let mut motifs = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(name) = lines[i].trim().strip_prefix("MOTIF ") else {
            i += 1;
            continue;
        };
        let name = name.split_whitespace().next().unwrap_or("").to_string();
        let header_line = i + 2;
        let header = lines
            .get(i + 1)
            .and_then(|l| l.trim().strip_prefix("letter-probability matrix:"))
            .ok_or_else(|| err(header_line, "expected letter-probability matrix line".into()))?;
        let field = |key: &str| -> Result<u64> {
            let toks: Vec<&str> = header.split_whitespace().collect();
            toks.iter()
                .position(|t| *t == key)
                .and_then(|p| toks.get(p + 1))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(header_line, format!("missing or bad {key}")))
        };
        if field("alength=")? != 4 {
            return Err(err(header_line, "alength must be 4".into()));
        }
        let w = field("w=")? as usize;
        let nsites = field("nsites=")?;
        let mut probabilities = Vec::with_capacity(w);
        for r in 0..w {
            let ln = i + 2 + r;
            let row: Vec<f64> = lines
                .get(ln)
                .ok_or_else(|| err(ln + 1, "truncated matrix".into()))?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln + 1, format!("bad probability: {e}")))?;
            let row: [f64; 4] = row
                .try_into()
                .map_err(|_| err(ln + 1, "expected 4 probabilities".into()))?;
            probabilities.push(row);
        }
        motifs.push(MemeMotif {
            name,
            nsites,
            probabilities,
        });
        i += 2 + w;
    }
    Ok(motifs)
}

/// Kept placements per position, split by label. Positions are the
/// nucleotide at the middle of each placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationProfile {
    pub positions: Vec<usize>,
    pub pos_counts: Vec<u64>,
    pub neg_counts: Vec<u64>,
}

impl ActivationProfile {
    pub fn from_fragments(fragments: &[FilterFragments], seqs: &[RawSequence], geometry: Geometry) -> Self {
        let n = geometry.placements;
        let mut pos_counts = vec![0; n];
        let mut neg_counts = vec![0; n];
        for f in fragments.iter().flat_map(|f| &f.fragments) {
            if seqs[f.seq_index].label == 1 {
                pos_counts[f.placement] += 1;
            } else {
                neg_counts[f.placement] += 1;
            }
        }
        ActivationProfile {
            positions: (0..n).map(|p| geometry.center(p)).collect(),
            pos_counts,
            neg_counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.pos_counts.iter().chain(&self.neg_counts).sum()
    }

    /// Position with the most positive-label placements (first on ties);
    /// `None` when there are none.
    pub fn positive_mode(&self) -> Option<usize> {
        let best = (0..self.positions.len()).fold(0, |b, i| if self.pos_counts[i] > self.pos_counts[b] { i } else { b });
        (self.pos_counts.get(best).copied().unwrap_or(0) > 0).then(|| self.positions[best])
    }

    pub fn tsv(&self) -> String {
        let mut out = String::from("position\tpos_count\tneg_count\n");
        for ((p, a), b) in self.positions.iter().zip(&self.pos_counts).zip(&self.neg_counts) {
            let _ = writeln!(out, "{p}\t{a}\t{b}");
        }
        out
    }
}

/// Histogram of half-max placements over all first-layer filters.
pub fn activation_histogram(model: &Model, seqs: &[RawSequence]) -> Result<ActivationProfile> {
    let s = scan(model, seqs)?;
    let fragments = s.fragments(seqs, DEFAULT_THRESHOLD);
    Ok(ActivationProfile::from_fragments(&fragments, seqs, s.geometry))
}

/// Consensus letter and information content (bits) of each column.
pub fn logo_columns(pfm: &Pfm) -> Vec<(char, f64)> {
    pfm.consensus().chars().zip(pfm.information()).collect()
}

/// Plain-text logo: a header line, then one line per column with the
/// consensus letter, its bits, and a bar of `#` (one per quarter bit).
pub fn text_logo(pfm: &Pfm) -> String {
    let mut out = format!("filter_{} nsites={} consensus={}\n", pfm.filter_index, pfm.nsites, pfm.consensus());
    for (i, (c, bits)) in logo_columns(pfm).into_iter().enumerate() {
        let bar = "#".repeat((bits * 4.0).round() as usize);
        let _ = writeln!(out, "{:>3} {c} {bits:.3} {bar}", i + 1);
    }
    out
}
