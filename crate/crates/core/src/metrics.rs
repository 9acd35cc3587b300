//! Rank agreement between formal explanations and attribution rankings.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::axp::Explanation;
use crate::error::{Error, Result};
use crate::model::FeatureSpace;

pub const DEFAULT_RBO_P: f64 = 0.9;

/// Dense ranks (1 is most important, ties allowed) plus the best-first order
/// with ties broken by feature index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    ranks: Vec<u32>,
    order: Vec<usize>,
}

impl Ranking {
    /// Accepts any positive ranks and renumbers them densely from 1.
    pub fn from_ranks(raw: &[u32]) -> Result<Self> {
        if raw.contains(&0) {
            return Err(Error::Ranking("ranks must be positive".into()));
        }
        let levels: Vec<u32> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let ranks: Vec<u32> = raw
            .iter()
            .map(|r| levels.binary_search(r).unwrap() as u32 + 1)
            .collect();
        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by_key(|&f| (ranks[f], f));
        Ok(Self { ranks, order })
    }

    /// Strict ranking from a best-first list. Features missing from the list
    /// share the rank after the last listed one.
    pub fn from_order(order: &[usize], num_features: usize) -> Result<Self> {
        let mut ranks = vec![0u32; num_features];
        for (pos, &f) in order.iter().enumerate() {
            match ranks.get_mut(f) {
                None => return Err(Error::Ranking(format!("feature index {f} out of range"))),
                Some(r) if *r != 0 => return Err(Error::Ranking(format!("feature index {f} listed twice"))),
                Some(r) => *r = pos as u32 + 1,
            }
        }
        let tail = order.len() as u32 + 1;
        for r in ranks.iter_mut().filter(|r| **r == 0) {
            *r = tail;
        }
        Self::from_ranks(&ranks)
    }

    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Average ranks over tie groups, as used by Spearman's coefficient.
    pub fn fractional_ranks(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut start = 0;
        while start < self.order.len() {
            let level = self.ranks[self.order[start]];
            let end = start + self.order[start..].iter().take_while(|&&f| self.ranks[f] == level).count();
            let avg = (start + end + 1) as f64 / 2.0;
            for &f in &self.order[start..end] {
                out[f] = avg;
            }
            start = end;
        }
        out
    }
}

/// Kept features share rank 1, every other feature rank 2.
pub fn formal_ranking(explanation: &Explanation, features: &FeatureSpace) -> Ranking {
    let ranks: Vec<u32> = (0..features.len())
        .map(|f| if explanation.contains(f) { 1 } else { 2 })
        .collect();
    Ranking::from_ranks(&ranks).expect("two-level ranks are positive")
}

/// A correlation value, or the marker for rankings where it is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    Degenerate,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Degenerate => None,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v}"),
            Score::Degenerate => f.write_str("degenerate"),
        }
    }
}

fn check_lengths(a: &Ranking, b: &Ranking) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Ranking(format!("rankings cover {} and {} features", a.len(), b.len())));
    }
    Ok(())
}

pub fn spearman(a: &Ranking, b: &Ranking) -> Result<Score> {
    check_lengths(a, b)?;
    let (x, y) = (a.fractional_ranks(), b.fractional_ranks());
    let n = x.len() as f64;
    // both rank vectors have the same mean (n + 1) / 2
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(&y) {
        let (dx, dy) = (xi - mean, yi - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Score::Degenerate);
    }
    let den = if sxx == syy { sxx } else { (sxx * syy).sqrt() };
    Ok(Score::Value((sxy / den).clamp(-1.0, 1.0)))
}

/// Counts inversions of `v` while merge-sorting it.
fn merge_count(v: &mut [u32], buf: &mut Vec<u32>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

fn tied_pairs<I: Iterator<Item = usize>>(group_sizes: I) -> u64 {
    group_sizes.map(|m| (m * m.saturating_sub(1) / 2) as u64).sum()
}

fn group_sizes<T: PartialEq>(sorted: &[T]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let run = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        out.push(run);
        i += run;
    }
    out
}

/// Tie-corrected Kendall tau (tau-b), in O(n log n).
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<Score> {
    check_lengths(a, b)?;
    let n = a.len();
    let mut pairs: Vec<(u32, u32)> = a.ranks.iter().copied().zip(b.ranks.iter().copied()).collect();
    pairs.sort_unstable();
    let n0 = (n * n.saturating_sub(1) / 2) as u64;
    let ties_a = tied_pairs(group_sizes(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).into_iter());
    let ties_ab = tied_pairs(group_sizes(&pairs).into_iter());
    let mut ys: Vec<u32> = pairs.iter().map(|p| p.1).collect();
    let discordant = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let ties_b = tied_pairs(group_sizes(&ys).into_iter());
    // pairs tied in neither ranking are either concordant or discordant
    let untied = n0 + ties_ab - ties_a - ties_b;
    let concordant = untied - discordant;
    if n0 == ties_a || n0 == ties_b {
        return Ok(Score::Degenerate);
    }
    let num = concordant as f64 - discordant as f64;
    let den = (((n0 - ties_a) as f64) * ((n0 - ties_b) as f64)).sqrt();
    Ok(Score::Value((num / den).clamp(-1.0, 1.0)))
}

/// Extrapolated rank-biased overlap evaluated at the depth of the shorter list.
pub fn rbo(l1: &[usize], l2: &[usize], p: f64) -> f64 {
    let depth = l1.len().min(l2.len());
    if depth == 0 {
        return 1.0;
    }
    let (mut seen1, mut seen2) = (HashSet::new(), HashSet::new());
    let mut overlap = 0usize;
    let mut weight = 1.0;
    let mut shortfall = 0.0;
    let mut agreement = 0.0;
    for d in 1..=depth {
        let (x, y) = (l1[d - 1], l2[d - 1]);
        if x == y {
            overlap += 1;
        } else {
            overlap += usize::from(seen2.contains(&x)) + usize::from(seen1.contains(&y));
        }
        seen1.insert(x);
        seen2.insert(y);
        agreement = overlap as f64 / d as f64;
        shortfall += weight * (1.0 - agreement);
        weight *= p;
    }
    // weight is now p^depth; written as 1 minus the deficit so identical lists give exactly 1
    (1.0 - (1.0 - p) * shortfall - weight * (1.0 - agreement)).clamp(0.0, 1.0)
}

/// Fraction of aligned instances whose rankings are identical.
pub fn consistency(run1: &[Ranking], run2: &[Ranking]) -> Result<f64> {
    if run1.len() != run2.len() {
        return Err(Error::Ranking(format!("runs have {} and {} instances", run1.len(), run2.len())));
    }
    if run1.is_empty() {
        return Ok(1.0);
    }
    let same = run1.iter().zip(run2).filter(|(a, b)| a == b).count();
    Ok(same as f64 / run1.len() as f64)
}

/// Rankings supplied by another explainer, keyed by dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRanking {
    pub instance: usize,
    pub ranking: Ranking,
}

#[derive(Deserialize)]
struct OrderRecord {
    instance: usize,
    order: Vec<String>,
}

fn feature_index(features: &FeatureSpace, name: &str) -> Result<usize> {
    features
        .index_of(name)
        .ok_or_else(|| Error::Ranking(format!("unknown feature {name:?}")))
}

/// JSON list of `{"instance": i, "order": [names, best first]}`.
pub fn parse_rankings_json(text: &str, features: &FeatureSpace) -> Result<Vec<ExternalRanking>> {
    let records: Vec<OrderRecord> = serde_json::from_str(text)?;
    let out = records
        .into_iter()
        .map(|r| {
            let order = r
                .order
                .iter()
                .map(|name| feature_index(features, name))
                .collect::<Result<Vec<_>>>()?;
            Ok(ExternalRanking {
                instance: r.instance,
                ranking: Ranking::from_order(&order, features.len())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique(&out)?;
    Ok(out)
}

/// Wide CSV: an `instance` column and one rank column per feature, in any order.
pub fn parse_rankings_csv<R: Read>(reader: R, features: &FeatureSpace) -> Result<Vec<ExternalRanking>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("instance") {
        return Err(Error::Ranking("first column must be \"instance\"".into()));
    }
    let columns = header
        .iter()
        .skip(1)
        .map(|name| feature_index(features, name))
        .collect::<Result<Vec<_>>>()?;
    if columns.iter().collect::<HashSet<_>>().len() != features.len() || columns.len() != features.len() {
        return Err(Error::Ranking("rank columns must name every feature exactly once".into()));
    }
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::Ranking(format!("row {}: bad {what} {s:?}", row + 1)))
        };
        let instance = parse(&record[0], "instance id")? as usize;
        let mut ranks = vec![0u32; features.len()];
        for (col, &f) in columns.iter().enumerate() {
            ranks[f] = parse(&record[col + 1], "rank")?;
        }
        out.push(ExternalRanking {
            instance,
            ranking: Ranking::from_ranks(&ranks)?,
        });
    }
    check_unique(&out)?;
    Ok(out)
}

fn check_unique(rankings: &[ExternalRanking]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in rankings {
        if !seen.insert(r.instance) {
            return Err(Error::Ranking(format!("instance {} appears twice", r.instance)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    pub instance: usize,
    pub spearman: Score,
    pub kendall_tau: Score,
    pub rbo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    /// Rows that contributed a value.
    pub count: usize,
    pub degenerate: usize,
}

impl Aggregate {
    fn over(values: impl Iterator<Item = Score>) -> Option<Self> {
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let (mut count, mut degenerate) = (0, 0);
        for s in values {
            match s {
                Score::Value(v) => {
                    min = min.min(v);
                    max = max.max(v);
                    sum += v;
                    count += 1;
                }
                Score::Degenerate => degenerate += 1,
            }
        }
        (count > 0).then(|| Self { min, avg: sum / count as f64, max, count, degenerate })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<InstanceMetrics>,
    pub spearman: Option<Aggregate>,
    pub kendall_tau: Option<Aggregate>,
    pub rbo: Option<Aggregate>,
}

/// Compares formal rankings (indexed by dataset row) with external ones.
/// Rows are reported in the order of the external file.
pub fn compare(formal: &[Ranking], external: &[ExternalRanking], p: f64) -> Result<MetricsReport> {
    let rows = external
        .iter()
        .map(|ext| {
            let ours = formal.get(ext.instance).ok_or_else(|| {
                Error::Ranking(format!("instance {} is not in the dataset ({} rows)", ext.instance, formal.len()))
            })?;
            Ok(InstanceMetrics {
                instance: ext.instance,
                spearman: spearman(ours, &ext.ranking)?,
                kendall_tau: kendall_tau(ours, &ext.ranking)?,
                rbo: rbo(ours.order(), ext.ranking.order(), p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        spearman: Aggregate::over(rows.iter().map(|r| r.spearman)),
        kendall_tau: Aggregate::over(rows.iter().map(|r| r.kendall_tau)),
        rbo: Aggregate::over(rows.iter().map(|r| Score::Value(r.rbo))),
        rows,
    })
}

impl MetricsReport {
    /// Per-row values followed by `min`, `avg` and `max` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["instance", "spearman", "kendall_tau", "rbo"])?;
        for r in &self.rows {
            w.write_record([
                r.instance.to_string(),
                r.spearman.to_string(),
                r.kendall_tau.to_string(),
                r.rbo.to_string(),
            ])?;
        }
        let cell = |a: &Option<Aggregate>, pick: fn(&Aggregate) -> f64| {
            a.as_ref().map_or_else(|| "degenerate".to_string(), |a| pick(a).to_string())
        };
        for (label, pick) in [
            ("min", (|a: &Aggregate| a.min) as fn(&Aggregate) -> f64),
            ("avg", |a: &Aggregate| a.avg),
            ("max", |a: &Aggregate| a.max),
        ] {
            w.write_record([
                label.to_string(),
                cell(&self.spearman, pick),
                cell(&self.kendall_tau, pick),
                cell(&self.rbo, pick),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn formal_rankings(explanations: &[Explanation], features: &FeatureSpace) -> Vec<Ranking> {
    explanations.iter().map(|e| formal_ranking(e, features)).collect()
}
