//! Evaluation: majority-vote precision, label histograms, rank correlation
//! between system and annotator orderings, and the salient-word probe.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionId;
use crate::embed::EmbeddingTable;
use crate::encoder::{encode_with, score, EncodeOptions, EncoderParams};
use crate::error::{Error, Result};
use crate::pipeline::RankedResult;
use crate::text::join_units;

pub const HISTOGRAM_BINS: usize = 10;

/// One worker's judgement of one (query, candidate) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub query_id: QuestionId,
    pub candidate_id: QuestionId,
    pub worker_id: String,
    pub label: u8,
    #[serde(default)]
    pub rejected: bool,
}

/// Counts of accepted labels for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairLabels {
    pub similar: usize,
    pub total: usize,
}

impl PairLabels {
    pub fn fraction(&self) -> f64 {
        self.similar as f64 / self.total as f64
    }

    /// Strictly more than half the workers said similar.
    pub fn majority_similar(&self) -> bool {
        2 * self.similar > self.total
    }
}

/// Worker labels per (query, candidate), rejected workers already removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    pairs: BTreeMap<(QuestionId, QuestionId), PairLabels>,
}

impl LabelSet {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a LabelRecord>) -> Result<Self> {
        let mut pairs: BTreeMap<_, PairLabels> = BTreeMap::new();
        for r in records {
            if r.label > 1 {
                return Err(Error::invalid(format!(
                    "label {} for pair ({}, {}) is not 0 or 1",
                    r.label, r.query_id, r.candidate_id
                )));
            }
            if r.rejected {
                continue;
            }
            let p = pairs.entry((r.query_id, r.candidate_id)).or_default();
            p.total += 1;
            p.similar += r.label as usize;
        }
        Ok(LabelSet { pairs })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.label > 1 {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("label {} is not 0 or 1", r.label),
                });
            }
            records.push(r);
        }
        Self::from_records(&records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, query: QuestionId, candidate: QuestionId) -> Option<&PairLabels> {
        self.pairs.get(&(query, candidate))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((QuestionId, QuestionId), &PairLabels)> {
        self.pairs.iter().map(|(&k, v)| (k, v))
    }
}

/// System output per query id.
pub type ResultSet = BTreeMap<QuestionId, Vec<RankedResult>>;

/// Reads `{"query_id", "id", "score", "rank"}` records into per-query lists
/// ordered by rank.
pub fn read_results(text: &str) -> Result<ResultSet> {
    #[derive(Deserialize)]
    struct Row {
        query_id: QuestionId,
        id: QuestionId,
        score: f64,
        rank: usize,
    }
    let mut out: ResultSet = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(row.query_id).or_default().push(RankedResult {
            id: row.id,
            score: row.score,
            rank: row.rank,
        });
    }
    for list in out.values_mut() {
        list.sort_by_key(|r| r.rank);
    }
    Ok(out)
}

fn require_labels<'a>(labels: &'a LabelSet, results: &ResultSet) -> Result<Vec<&'a PairLabels>> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for (&q, list) in results {
        for r in list {
            match labels.get(q, r.id) {
                Some(p) => found.push(p),
                None => missing.push((q, r.id)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(found)
}

/// Share of returned pairs whose majority ground truth is "similar".
pub fn precision(labels: &LabelSet, results: &ResultSet) -> Result<f64> {
    let found = require_labels(labels, results)?;
    if found.is_empty() {
        return Err(Error::invalid("no returned pairs to evaluate"));
    }
    let similar = found.iter().filter(|p| p.majority_similar()).count();
    Ok(similar as f64 / found.len() as f64)
}

fn bin_of(p: &PairLabels) -> usize {
    (p.similar * HISTOGRAM_BINS / p.total).min(HISTOGRAM_BINS - 1)
}

/// Pair counts by share of "similar" labels, in bins of width 10 points;
/// the last bin includes 100%.
pub fn label_histogram(labels: &LabelSet) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for (_, p) in labels.iter() {
        bins[bin_of(p)] += 1;
    }
    bins
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rankings of different lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least 2 items"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid("ranking contains NaN"));
    }
    Ok(())
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// Kendall's tau between two rank (or score) vectors over the same items:
/// `(concordant − discordant) / (n(n−1)/2)`. Tied pairs count as neither.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let pairs = (n * (n - 1) / 2) as f64;
    if has_ties(a) || has_ties(b) {
        let mut net = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
                if a[i] != a[j] && b[i] != b[j] {
                    net += s as i64;
                }
            }
        }
        return Ok(net as f64 / pairs);
    }
    // order by a, then count inversions in b
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut seq: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let discordant = count_inversions(&mut seq) as f64;
    Ok((pairs - 2.0 * discordant) / pairs)
}

fn count_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            merged.push(v[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    inv
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho, `1 − 6·Σd² / (n(n²−1))` over average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCorrelation {
    pub query_id: QuestionId,
    pub n: usize,
    pub tau: f64,
    pub rho: f64,
    /// Some candidates shared a label percentage; their order was decided by id.
    pub ties: bool,
}

/// Correlation between each query's system order and its annotator order
/// (descending share of "similar" labels, ties by ascending candidate id).
/// Queries with fewer than two results are skipped.
pub fn query_correlations(labels: &LabelSet, results: &ResultSet) -> Result<Vec<QueryCorrelation>> {
    require_labels(labels, results)?;
    let mut out = Vec::new();
    for (&q, list) in results {
        if list.len() < 2 {
            continue;
        }
        let mut truth: Vec<(QuestionId, f64)> = list
            .iter()
            .map(|r| (r.id, labels.get(q, r.id).unwrap().fraction()))
            .collect();
        truth.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let ties = truth.windows(2).any(|w| w[0].1 == w[1].1);
        let truth_rank: BTreeMap<QuestionId, usize> =
            truth.iter().enumerate().map(|(i, (id, _))| (*id, i + 1)).collect();
        let system: Vec<f64> = (1..=list.len()).map(|r| r as f64).collect();
        let annot: Vec<f64> = list.iter().map(|r| truth_rank[&r.id] as f64).collect();
        out.push(QueryCorrelation {
            query_id: q,
            n: list.len(),
            tau: kendall_tau(&system, &annot)?,
            rho: spearman_rho(&system, &annot)?,
            ties,
        });
    }
    Ok(out)
}

/// Five-number summary, quartiles by linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Summary {
        min: v[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub precision: f64,
    pub histogram: [usize; HISTOGRAM_BINS],
    pub correlations: Vec<QueryCorrelation>,
    pub tau: Option<Summary>,
    pub rho: Option<Summary>,
}

pub fn evaluate(labels: &LabelSet, results: &ResultSet) -> Result<EvalReport> {
    let precision = precision(labels, results)?;
    let correlations = query_correlations(labels, results)?;
    let taus: Vec<f64> = correlations.iter().map(|c| c.tau).collect();
    let rhos: Vec<f64> = correlations.iter().map(|c| c.rho).collect();
    Ok(EvalReport {
        pairs: results.values().map(Vec::len).sum(),
        precision,
        histogram: label_histogram(labels),
        tau: summarize(&taus),
        rho: summarize(&rhos),
        correlations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub position: usize,
    pub replacement: String,
    pub text: String,
    pub similarity: f64,
}

/// Re-encodes the question once per substitution and scores it against the
/// original encoding. Sorted by similarity descending; equal scores keep
/// their input order.
pub fn probe_saliency<S: AsRef<str>>(
    tokens: &[S],
    substitutions: &[(usize, String)],
    table: &EmbeddingTable,
    params: &EncoderParams,
    opts: &EncodeOptions,
) -> Result<Vec<ProbeResult>> {
    let original: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    let v = encode_with(&original, table, params, opts)?;
    let mut out = Vec::with_capacity(substitutions.len());
    for (pos, rep) in substitutions {
        if *pos >= original.len() {
            return Err(Error::invalid(format!(
                "substitution position {pos} outside a question of {} tokens",
                original.len()
            )));
        }
        let mut modified = original.clone();
        modified[*pos] = rep.clone();
        let vm = encode_with(&modified, table, params, opts)?;
        out.push(ProbeResult {
            position: *pos,
            replacement: rep.clone(),
            text: join_units(&modified),
            similarity: score(opts.similarity, &v, &vm)?,
        });
    }
    out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    Ok(out)
}
