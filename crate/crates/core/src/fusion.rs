//! Ensemble fusion of standardized per-model score tables.
//!
//! Two modes: an arithmetic mean over dense tables for benchmark scoring, and
//! the second-highest available member score over truncated candidate tables
//! for large-scale curation, where a pair must be scored by at least
//! `min_support` members to survive.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Completeness, PairKey, ScoreTable};
use crate::textio::read_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    MeanDense,
    SecondHighestTruncated,
}

fn default_min_support() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub name: String,
    pub mode: FusionMode,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
    pub members: Vec<String>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidSpec("empty ensemble name".into()));
        }
        if self.members.is_empty() {
            return Err(Error::InvalidSpec("no members".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.members.iter().find(|m| !seen.insert(m.as_str())) {
            return Err(Error::InvalidSpec(format!("member {dup:?} listed twice")));
        }
        if self.mode == FusionMode::SecondHighestTruncated && self.min_support < 2 {
            return Err(Error::InvalidSpec(format!(
                "min_support must be at least 2 in second-highest mode, got {}",
                self.min_support
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: EnsembleSpec = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_text(path.as_ref())?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// Picks the member tables in spec order.
fn select_members<'a>(tables: &'a [ScoreTable], spec: &EnsembleSpec) -> Result<Vec<&'a ScoreTable>> {
    spec.members
        .iter()
        .map(|m| {
            tables
                .iter()
                .find(|t| &t.model == m)
                .ok_or_else(|| Error::MissingMember(m.clone()))
        })
        .collect()
}

/// Mean of standardized member scores over a shared dense domain.
pub fn fuse_mean(tables: &[ScoreTable], spec: &EnsembleSpec) -> Result<ScoreTable> {
    spec.validate()?;
    if spec.mode != FusionMode::MeanDense {
        return Err(Error::InvalidSpec(format!("{:?} is not a mean_dense spec", spec.name)));
    }
    let members = select_members(tables, spec)?;
    let first = members[0];
    for t in &members {
        if t.completeness != Completeness::Dense {
            return Err(Error::DomainMismatch(format!("member {:?} is not dense", t.model)));
        }
        t.check_dense()?;
        if !t.same_keys(first) {
            return Err(Error::DomainMismatch(format!(
                "members {:?} and {:?} cover different pairs",
                first.model, t.model
            )));
        }
    }

    let n = members.len() as f64;
    let mut iters: Vec<_> = members.iter().map(|t| t.iter()).collect();
    let mut entries = Vec::with_capacity(first.len());
    let mut buf = Vec::with_capacity(members.len());
    for (key, _) in first.iter() {
        buf.clear();
        for it in iters.iter_mut() {
            let (_, s) = it.next().expect("same key sets");
            buf.push(s);
        }
        // Summing in sorted order makes the mean independent of member order.
        buf.sort_by(f64::total_cmp);
        entries.push((key.clone(), buf.iter().sum::<f64>() / n));
    }
    ScoreTable::from_entries(spec.name.clone(), Completeness::Dense, entries)
}

/// Second-largest of a multiset of scores; `None` for fewer than two.
pub fn second_highest(scores: &[f64]) -> Option<f64> {
    if scores.len() < 2 {
        return None;
    }
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &s in scores {
        if s > top {
            second = top;
            top = s;
        } else if s > second {
            second = s;
        }
    }
    Some(second)
}

/// Second-highest available member score per pair, for pairs scored by at
/// least `min_support` members.
pub fn fuse_second_highest(tables: &[ScoreTable], spec: &EnsembleSpec) -> Result<ScoreTable> {
    spec.validate()?;
    if spec.mode != FusionMode::SecondHighestTruncated {
        return Err(Error::InvalidSpec(format!(
            "{:?} is not a second_highest_truncated spec",
            spec.name
        )));
    }
    let members = select_members(tables, spec)?;

    let mut support: BTreeMap<&PairKey, Vec<f64>> = BTreeMap::new();
    for t in &members {
        for (key, s) in t.iter() {
            support.entry(key).or_default().push(s);
        }
    }
    let entries = support.into_iter().filter_map(|(key, scores)| {
        if scores.len() < spec.min_support {
            return None;
        }
        second_highest(&scores).map(|s| (key.clone(), s))
    });
    ScoreTable::from_entries(spec.name.clone(), Completeness::Truncated, entries.collect::<Vec<_>>())
}

/// Aligned score vectors over sampled pairs present in every table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    pub models: Vec<String>,
    pub pairs: Vec<PairKey>,
    /// One vector per table, aligned with `pairs`.
    pub scores: Vec<Vec<f64>>,
}

/// Draws up to `sample` pairs (seeded, without replacement) from the pairs
/// every table scores, returned in ascending pair order.
pub fn rank_correlation_inputs(tables: &[ScoreTable], sample: usize, seed: u64) -> Result<PairedScores> {
    if tables.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "rank correlation needs at least 2 tables, got {}",
            tables.len()
        )));
    }
    let mut common: BTreeSet<&PairKey> = tables[0].keys().collect();
    for t in &tables[1..] {
        common.retain(|k| t.get_key(k).is_some());
    }
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let common: Vec<&PairKey> = common.into_iter().collect();
    let chosen: Vec<&PairKey> = if sample >= common.len() {
        common
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, common.len(), sample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| common[i]).collect()
    };

    let scores = tables
        .iter()
        .map(|t| chosen.iter().map(|k| t.get_key(k).expect("common key")).collect())
        .collect();
    Ok(PairedScores {
        models: tables.iter().map(|t| t.model.clone()).collect(),
        pairs: chosen.into_iter().cloned().collect(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: FusionMode, members: &[&str]) -> EnsembleSpec {
        EnsembleSpec {
            name: "ens".into(),
            mode,
            min_support: 2,
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn table(model: &str, c: Completeness, rows: &[(&str, &str, f64)]) -> ScoreTable {
        ScoreTable::from_entries(
            model,
            c,
            rows.iter().map(|(q, g, s)| ((q.to_string(), g.to_string()), *s)),
        )
        .unwrap()
    }

    #[test]
    fn mean_of_opposites_is_zero() {
        let a = table("a", Completeness::Dense, &[("q", "g", 1.0)]);
        let b = table("b", Completeness::Dense, &[("q", "g", -1.0)]);
        let f = fuse_mean(&[a, b], &spec(FusionMode::MeanDense, &["a", "b"])).unwrap();
        assert_eq!(f.get("q", "g"), Some(0.0));
        assert_eq!(f.model, "ens");
    }

    #[test]
    fn single_member_mean_is_identity() {
        let a = table("a", Completeness::Dense, &[("q", "g1", 0.3), ("q", "g2", -1.7)]);
        let f = fuse_mean(std::slice::from_ref(&a), &spec(FusionMode::MeanDense, &["a"])).unwrap();
        assert!(f.same_keys(&a));
        assert!(f.scores().eq(a.scores()));
    }

    #[test]
    fn mean_requires_members_and_shared_domain() {
        let a = table("a", Completeness::Dense, &[("q", "g1", 0.3)]);
        let b = table("b", Completeness::Dense, &[("q", "g2", 0.3)]);
        let s = spec(FusionMode::MeanDense, &["a", "b"]);
        assert!(matches!(fuse_mean(std::slice::from_ref(&a), &s), Err(Error::MissingMember(m)) if m == "b"));
        assert!(matches!(fuse_mean(&[a, b], &s), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn second_highest_order_statistic() {
        assert_eq!(second_highest(&[2.1, 0.5, 1.7]), Some(1.7));
        assert_eq!(second_highest(&[1.0, 1.0]), Some(1.0));
        assert_eq!(second_highest(&[4.0]), None);
    }

    #[test]
    fn single_support_pairs_dropped() {
        let a = table("a", Completeness::Truncated, &[("q", "g1", 2.1), ("q", "g2", 3.0)]);
        let b = table("b", Completeness::Truncated, &[("q", "g1", 0.5)]);
        let c = table("c", Completeness::Truncated, &[("q", "g1", 1.7)]);
        let f = fuse_second_highest(&[a, b, c], &spec(FusionMode::SecondHighestTruncated, &["a", "b", "c"])).unwrap();
        assert_eq!(f.get("q", "g1"), Some(1.7));
        assert_eq!(f.get("q", "g2"), None);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(FusionMode::SecondHighestTruncated, &["a", "b"]);
        s.min_support = 1;
        assert!(s.validate().is_err());
        assert!(spec(FusionMode::MeanDense, &[]).validate().is_err());
        assert!(spec(FusionMode::MeanDense, &["a", "a"]).validate().is_err());
        assert!(spec(FusionMode::MeanDense, &["a"]).validate().is_ok());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = spec(
            FusionMode::SecondHighestTruncated,
            &["i2i", "t2i", "proxynca", "hypdino"],
        );
        let text = s.to_toml();
        assert!(text.contains("mode = \"second_highest_truncated\""));
        assert_eq!(EnsembleSpec::from_toml(&text).unwrap(), s);
        let defaulted = EnsembleSpec::from_toml("name = \"e\"\nmode = \"mean_dense\"\nmembers = [\"a\"]\n").unwrap();
        assert_eq!(defaulted.min_support, 2);
    }

    #[test]
    fn correlation_inputs_align_and_detect_disjoint() {
        let a = table("a", Completeness::Dense, &[("q", "g1", 0.1), ("q", "g2", 0.2)]);
        let b = table("b", Completeness::Dense, &[("q", "g1", 1.0), ("q", "g2", 2.0)]);
        let p = rank_correlation_inputs(&[a, b], usize::MAX, 0).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!(p.scores[1], vec![1.0, 2.0]);

        let c = table("c", Completeness::Truncated, &[("q", "g1", 0.1)]);
        let d = table("d", Completeness::Truncated, &[("q", "g9", 0.1)]);
        assert!(matches!(
            rank_correlation_inputs(&[c, d], 10, 0),
            Err(Error::EmptyIntersection)
        ));
    }
}
