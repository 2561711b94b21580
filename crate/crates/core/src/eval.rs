//! Retrieval evaluation: Recall@K against ground-truth pairs, Spearman rank
//! correlation between models, and the match-rate curve from human verdicts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::rank_correlation_inputs;
use crate::table::ScoreTable;
use crate::textio::read_text;

/// Probe indices of the published quality curve.
pub const DEFAULT_PROBES: [u64; 7] = [100, 2_000, 8_000, 32_000, 128_000, 512_000, 2_048_000];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn by_query(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (q, g) in &self.pairs {
            out.entry(q.as_str()).or_default().insert(g.as_str());
        }
        out
    }

    /// `query_id\tgallery_id` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let (q, g) = line
                .split_once('\t')
                .filter(|(q, g)| !q.is_empty() && !g.is_empty() && !g.contains('\t'))
                .ok_or_else(|| Error::parse("ground truth", i + 1, "expected query_id\\tgallery_id"))?;
            pairs.insert((q.to_string(), g.to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?)
    }
}

/// Per-query gallery ids, best first.
pub type Ranking = BTreeMap<String, Vec<String>>;

/// Orders each query's row by (score desc, gallery id asc).
pub fn ranking_from_table(table: &ScoreTable) -> Ranking {
    table
        .rows()
        .into_iter()
        .map(|(q, mut row)| {
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            (q.to_string(), row.into_iter().map(|(g, _)| g.to_string()).collect())
        })
        .collect()
}

/// Fraction of truth queries with at least one true match in their top `k`.
pub fn recall_at_k(ranking: &Ranking, truth: &GroundTruth, k: usize) -> Result<f64> {
    let by_query = truth.by_query();
    if by_query.is_empty() {
        return Err(Error::InsufficientData("ground truth has no pairs".into()));
    }
    let mut hits = 0usize;
    for (q, targets) in &by_query {
        let ranked = ranking.get(*q).ok_or_else(|| Error::MissingQuery(q.to_string()))?;
        if ranked.iter().take(k).any(|g| targets.contains(g.as_str())) {
            hits += 1;
        }
    }
    Ok(hits as f64 / by_query.len() as f64)
}

/// 1-based ranks, tied values sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("{} observations", x.len())));
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::ConstantVector)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub models: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Number of common pairs the correlations were computed on.
    pub sample_size: usize,
}

/// Pairwise Spearman over a seeded sample of the pairs every table scores.
#[allow(clippy::needless_range_loop)]
pub fn correlation_matrix(tables: &[ScoreTable], sample: usize, seed: u64) -> Result<CorrelationMatrix> {
    let paired = rank_correlation_inputs(tables, sample, seed)?;
    let n = tables.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let r = spearman(&paired.scores[i], &paired.scores[j])?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        models: paired.models,
        values,
        sample_size: paired.pairs.len(),
    })
}

/// Two-decimal rendering that never prints a negative zero.
pub fn fmt_two_decimals(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

impl CorrelationMatrix {
    /// Heatmap-style grid, values rounded to two decimals.
    pub fn render_heatmap(&self) -> String {
        let width = self.models.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "");
        for m in &self.models {
            let _ = write!(out, " {m:>width$}");
        }
        out.push('\n');
        for (m, row) in self.models.iter().zip(&self.values) {
            let _ = write!(out, "{m:width$}");
            for v in row {
                let _ = write!(out, " {:>width$}", fmt_two_decimals(*v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    NoMatch,
}

/// One human verdict; serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub query_id: String,
    pub gallery_id: String,
    pub probe_index: u64,
    pub verdict: Verdict,
    pub annotator: String,
    /// RFC 3339 instant.
    pub timestamp: String,
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| Error::parse("annotation file", i + 1, e.to_string()))?;
        if !seen.insert((rec.query_id.clone(), rec.gallery_id.clone(), rec.annotator.clone())) {
            return Err(Error::DuplicateVerdict {
                query: rec.query_id,
                gallery: rec.gallery_id,
                annotator: rec.annotator,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn render_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(&read_text(path.as_ref())?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub probe_index: u64,
    pub matches: usize,
    pub total: usize,
    /// `matches / total`; `None` when the probe has no verdicts.
    pub fraction: Option<f64>,
}

/// Match fraction per probe, in the order the probes are given.
pub fn quality_curve(annotations: &[AnnotationRecord], probes: &[u64]) -> Result<Vec<CurvePoint>> {
    let mut counts: BTreeMap<u64, (usize, usize)> = probes.iter().map(|&p| (p, (0, 0))).collect();
    for a in annotations {
        let c = counts
            .get_mut(&a.probe_index)
            .ok_or(Error::UnknownProbe(a.probe_index))?;
        c.1 += 1;
        if a.verdict == Verdict::Match {
            c.0 += 1;
        }
    }
    let mut seen = HashSet::new();
    Ok(probes
        .iter()
        .filter(|p| seen.insert(**p))
        .map(|&p| {
            let (matches, total) = counts[&p];
            CurvePoint {
                probe_index: p,
                matches,
                total,
                fraction: (total > 0).then(|| matches as f64 / total as f64),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(rows: &[(&str, &[&str])]) -> Ranking {
        rows.iter()
            .map(|(q, gs)| (q.to_string(), gs.iter().map(|g| g.to_string()).collect()))
            .collect()
    }

    fn truth(pairs: &[(&str, &str)]) -> GroundTruth {
        GroundTruth {
            pairs: pairs.iter().map(|(q, g)| (q.to_string(), g.to_string())).collect(),
        }
    }

    #[test]
    fn rank_one_hits_everywhere() {
        let r = ranking(&[("q1", &["a", "b"]), ("q2", &["c", "a"])]);
        let t = truth(&[("q1", "a"), ("q2", "c")]);
        assert_eq!(recall_at_k(&r, &t, 1).unwrap(), 1.0);
    }

    #[test]
    fn planted_rank_seven() {
        let list: Vec<String> = (1..=12).map(|i| format!("g{i:02}")).collect();
        let refs: Vec<&str> = list.iter().map(String::as_str).collect();
        let r = ranking(&[("q1", &refs), ("q2", &refs)]);
        let t = truth(&[("q1", "g07"), ("q2", "g07")]);
        assert_eq!(recall_at_k(&r, &t, 5).unwrap(), 0.0);
        assert_eq!(recall_at_k(&r, &t, 10).unwrap(), 1.0);
    }

    #[test]
    fn any_true_match_counts() {
        let r = ranking(&[("q1", &["x", "b", "a"])]);
        let t = truth(&[("q1", "a"), ("q1", "b")]);
        assert_eq!(recall_at_k(&r, &t, 2).unwrap(), 1.0);
    }

    #[test]
    fn missing_query_is_an_error() {
        let r = ranking(&[("q1", &["a"])]);
        let t = truth(&[("q2", "a")]);
        assert!(matches!(recall_at_k(&r, &t, 1), Err(Error::MissingQuery(q)) if q == "q2"));
    }

    #[test]
    fn ranking_breaks_ties_by_gallery_id() {
        let t = ScoreTable::from_entries(
            "m",
            crate::table::Completeness::Dense,
            [
                (("q".into(), "b".into()), 0.5),
                (("q".into(), "a".into()), 0.5),
                (("q".into(), "c".into()), 0.9),
            ],
        )
        .unwrap();
        assert_eq!(ranking_from_table(&t)["q"], vec!["c", "a", "b"]);
    }

    #[test]
    fn spearman_extremes() {
        let x = [0.3, -1.0, 2.5, 0.7, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantVector)
        ));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn two_decimal_format() {
        assert_eq!(fmt_two_decimals(0.4812), "0.48");
        assert_eq!(fmt_two_decimals(-0.0012), "0.00");
        assert_eq!(fmt_two_decimals(-0.187), "-0.19");
        assert_eq!(fmt_two_decimals(1.0), "1.00");
    }

    fn ann(q: &str, probe: u64, v: Verdict) -> AnnotationRecord {
        AnnotationRecord {
            query_id: q.into(),
            gallery_id: "g".into(),
            probe_index: probe,
            verdict: v,
            annotator: "ann".into(),
            timestamp: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn curve_at_index_100() {
        let records: Vec<_> = (0..200)
            .map(|i| {
                ann(
                    &format!("q{i}"),
                    100,
                    if i < 142 { Verdict::Match } else { Verdict::NoMatch },
                )
            })
            .collect();
        let curve = quality_curve(&records, &[100]).unwrap();
        assert_eq!(curve[0].fraction, Some(0.71));
        assert_eq!(curve[0].total, 200);
    }

    #[test]
    fn curve_zero_matches_and_unknown_probe() {
        let records = vec![ann("q1", 2000, Verdict::NoMatch)];
        let curve = quality_curve(&records, &[100, 2000]).unwrap();
        assert_eq!(curve[0].fraction, None);
        assert_eq!(curve[1].fraction, Some(0.0));
        assert!(matches!(
            quality_curve(&records, &[100]),
            Err(Error::UnknownProbe(2000))
        ));
    }

    #[test]
    fn annotation_lines_round_trip_and_reject_duplicates() {
        let records = vec![ann("q1", 100, Verdict::Match), ann("q2", 100, Verdict::NoMatch)];
        let text = render_annotations(&records);
        assert!(text.contains("\"verdict\":\"no_match\""));
        assert_eq!(parse_annotations(&text).unwrap(), records);
        let dup = render_annotations(&[records[0].clone(), records[0].clone()]);
        assert!(matches!(parse_annotations(&dup), Err(Error::DuplicateVerdict { .. })));
    }

    #[test]
    fn truth_file_parses() {
        let t = GroundTruth::parse("q1\tg1\nq1\tg2\n").unwrap();
        assert_eq!(t.pairs.len(), 2);
        assert!(GroundTruth::parse("q1 g1\n").is_err());
    }
}
