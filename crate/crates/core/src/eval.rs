//! ROC analysis, Wilcoxon signed-rank comparisons and dataset-size strata.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn check_scored(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    order
}

/// Groups of equal scores in `order`, as `(positives, negatives)` per group.
fn tie_groups(scores: &[f64], labels: &[u8], order: &[usize]) -> Vec<(u64, u64)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        groups.push((p, n));
        i = j;
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_scored(scores, labels)?;
    let order = ascending(scores);
    // Twice the Mann-Whitney U, kept integral so the result is the
    // correctly rounded quotient.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for (p, n) in tie_groups(scores, labels, &order) {
        twice_u += 2 * p as u128 * neg_below + p as u128 * n as u128;
        neg_below += n as u128;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Threshold sweep from the highest score down; starts at (0, 0) and ends at
/// (1, 1), one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_scored(scores, labels)?;
    let mut order = ascending(scores);
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in tie_groups(scores, labels, &order) {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact for `n ≤ 25`, normal approximation above.
    Auto,
    Exact,
    Normal,
}

pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Nonzero differences.
    pub n: usize,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, doubled so that they are integers.
pub fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let order = ascending(values);
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged, times two
        let twice = (i + 1 + j) as u64;
        for &o in &order[i..j] {
            ranks[o] = twice;
        }
        i = j;
    }
    ranks
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(a, b, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| d.is_nan()) {
        return Err(Error::invalid("paired samples contain NaN"));
    }
    if diffs.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w2 = plus.min(total - plus);
    let exact = match method {
        WilcoxonMethod::Auto => n <= EXACT_MAX_N,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p_value = if exact {
        exact_p(&ranks, w2)
    } else {
        normal_p(&abs, w2 as f64 / 2.0)
    };
    Ok(WilcoxonResult {
        statistic: w2 as f64 / 2.0,
        p_value,
        n,
        exact,
    })
}

/// Share of the `2^n` sign assignments whose `min(W+, W-)` is at most the
/// observed value, counted by dynamic programming over the attainable
/// positive-rank sums.
fn exact_p(doubled_ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut ways = vec![0u64; total as usize + 1];
    ways[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if ways[s] > 0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    let hits: u64 = ways
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as u64).min(total - s as u64) <= observed)
        .map(|(_, &c)| c)
        .sum();
    hits as f64 / 2f64.powi(doubled_ranks.len() as i32)
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
fn normal_p(abs_diffs: &[f64], w: f64) -> f64 {
    let n = abs_diffs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs_diffs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

/// Per-dataset AUCs: rows are datasets, columns models.
#[derive(Debug, Clone, PartialEq)]
pub struct AucTable {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl AucTable {
    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[m]).collect()
    }

    pub fn read_tsv(path: &Path) -> Result<AucTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, &path.display().to_string())
    }

    pub fn parse_tsv(text: &str, origin: &str) -> Result<AucTable> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::EmptyFile { path: origin.into() })?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        if cols.len() < 2 || cols[1..].iter().any(|c| c.is_empty()) {
            return Err(Error::parse(origin, hline + 1, "header must be: dataset<TAB>model1<TAB>model2..."));
        }
        let models: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut datasets = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != models.len() + 1 {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {} fields, found {}", models.len() + 1, fields.len()),
                ));
            }
            let row = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(origin, i + 1, format!("bad AUC value {f:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            datasets.push(fields[0].to_string());
            values.push(row);
        }
        Ok(AucTable {
            models,
            datasets,
            values,
        })
    }
}

pub const MIN_DATASETS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub a: usize,
    pub b: usize,
    /// `None` when the two columns are identical.
    pub test: Option<WilcoxonResult>,
    pub p_value: f64,
    /// Mean of `a - b` over datasets.
    pub mean_diff: f64,
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    /// Symmetric; `None` on the diagonal.
    pub p_values: Vec<Vec<Option<f64>>>,
    /// Antisymmetric; `None` on the diagonal.
    pub mean_diff: Vec<Vec<Option<f64>>>,
    /// One entry per unordered pair, `a < b`.
    pub pairs: Vec<PairComparison>,
}

pub fn compare_models(table: &AucTable) -> Result<ComparisonTable> {
    let m = table.models.len();
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 models, found {m}")));
    }
    if table.datasets.len() < MIN_DATASETS {
        return Err(Error::invalid(format!(
            "need at least {MIN_DATASETS} datasets, found {}",
            table.datasets.len()
        )));
    }
    let mut p_values = vec![vec![None; m]; m];
    let mut mean_diff = vec![vec![None; m]; m];
    let mut pairs = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let (ca, cb) = (table.column(a), table.column(b));
            let diff = ca.iter().zip(&cb).map(|(x, y)| x - y).sum::<f64>() / ca.len() as f64;
            let (test, p, identical) = match wilcoxon_signed_rank(&ca, &cb) {
                Ok(r) => (Some(r), r.p_value, false),
                Err(Error::AllZeroDifferences) => (None, 1.0, true),
                Err(e) => return Err(e),
            };
            p_values[a][b] = Some(p);
            p_values[b][a] = Some(p);
            mean_diff[a][b] = Some(diff);
            mean_diff[b][a] = Some(-diff);
            pairs.push(PairComparison {
                a,
                b,
                test,
                p_value: p,
                mean_diff: diff,
                identical,
            });
        }
    }
    Ok(ComparisonTable {
        models: table.models.clone(),
        p_values,
        mean_diff,
        pairs,
    })
}

fn matrix_tsv(models: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let mut out = format!("model\t{}\n", models.join("\t"));
    for (name, row) in models.iter().zip(cells) {
        out.push_str(name);
        for c in row {
            out.push('\t');
            if let Some(v) = c {
                out.push_str(&format!("{v:.6e}"));
            }
        }
        out.push('\n');
    }
    out
}

impl ComparisonTable {
    pub fn p_value_tsv(&self) -> String {
        matrix_tsv(&self.models, &self.p_values)
    }

    pub fn mean_diff_tsv(&self) -> String {
        matrix_tsv(&self.models, &self.mean_diff)
    }

    pub fn pairs_tsv(&self) -> String {
        let mut out = String::from("model_a\tmodel_b\tn\tstatistic\tp_value\tmean_diff\tnote\n");
        for p in &self.pairs {
            let (n, w) = p.test.map_or((0, String::new()), |t| (t.n, format!("{}", t.statistic)));
            let note = if p.identical {
                "identical"
            } else if p.test.is_some_and(|t| t.exact) {
                "exact"
            } else {
                "normal"
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{n}\t{w}\t{:.6e}\t{:.6e}\t{note}",
                self.models[p.a], self.models[p.b], p.p_value, p.mean_diff
            );
        }
        out
    }
}

pub const SIZE_THRESHOLD: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeGroup {
    pub datasets: Vec<String>,
    /// One per model; empty when the group has no datasets.
    pub summaries: Vec<ModelSummary>,
}

impl SizeGroup {
    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeStrata {
    pub threshold: usize,
    /// Fewer than `threshold` positive training examples.
    pub small: SizeGroup,
    pub large: SizeGroup,
}

impl SizeStrata {
    /// Rows `group, model, datasets, median_auc, mean_auc`; an empty group
    /// gets one row per model with `NA` summaries.
    pub fn tsv(&self, models: &[String]) -> String {
        let mut out = String::from("group\tmodel\tdatasets\tmedian_auc\tmean_auc\n");
        for (name, g) in [("small", &self.small), ("large", &self.large)] {
            for (m, model) in models.iter().enumerate() {
                let (med, mean) = g
                    .summaries
                    .get(m)
                    .map_or(("NA".to_string(), "NA".to_string()), |s| (format!("{:.6}", s.median), format!("{:.6}", s.mean)));
                let _ = writeln!(out, "{name}\t{model}\t{}\t{med}\t{mean}", g.datasets.len());
            }
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Splits datasets by their positive-example counts (parallel to
/// `table.datasets`) and summarizes each model's AUCs per group.
pub fn stratify_by_size(table: &AucTable, positives: &[usize], threshold: usize) -> Result<SizeStrata> {
    if positives.len() != table.datasets.len() {
        return Err(Error::invalid(format!(
            "{} positive counts for {} datasets",
            positives.len(),
            table.datasets.len()
        )));
    }
    let group = |keep: &dyn Fn(usize) -> bool| {
        let rows: Vec<usize> = (0..positives.len()).filter(|&i| keep(positives[i])).collect();
        let summaries = if rows.is_empty() {
            Vec::new()
        } else {
            (0..table.models.len())
                .map(|m| {
                    let v: Vec<f64> = rows.iter().map(|&r| table.values[r][m]).collect();
                    ModelSummary {
                        median: median(&v),
                        mean: v.iter().sum::<f64>() / v.len() as f64,
                    }
                })
                .collect()
        };
        SizeGroup {
            datasets: rows.iter().map(|&r| table.datasets[r].clone()).collect(),
            summaries,
        }
    };
    Ok(SizeStrata {
        threshold,
        small: group(&|c| c < threshold),
        large: group(&|c| c >= threshold),
    })
}
