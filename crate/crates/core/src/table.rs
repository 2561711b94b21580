//! Score tables: (query, gallery) → raw or standardized similarity for one model.
//!
//! File format: a `#model=<name>\tcompleteness=<dense|truncated>` header
//! (further `key=value` provenance fields may follow), then
//! `query_id\tgallery_id\tscore` lines with 9 significant digits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::textio::{fmt_sig, parse_f64, read_text, write_atomic, Header};

pub const SCORE_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completeness {
    Dense,
    Truncated,
}

impl fmt::Display for Completeness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Completeness::Dense => "dense",
            Completeness::Truncated => "truncated",
        })
    }
}

impl FromStr for Completeness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Completeness::Dense),
            "truncated" => Ok(Completeness::Truncated),
            other => Err(format!("unknown completeness {other:?}")),
        }
    }
}

pub type PairKey = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub model: String,
    pub completeness: Completeness,
    entries: BTreeMap<PairKey, f64>,
}

impl ScoreTable {
    pub fn new(model: impl Into<String>, completeness: Completeness) -> Self {
        Self {
            model: model.into(),
            completeness,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries(
        model: impl Into<String>,
        completeness: Completeness,
        entries: impl IntoIterator<Item = (PairKey, f64)>,
    ) -> Result<Self> {
        let mut t = Self::new(model, completeness);
        for ((q, g), s) in entries {
            t.insert(q, g, s)?;
        }
        if completeness == Completeness::Dense {
            t.check_dense()?;
        }
        Ok(t)
    }

    /// Adds an entry; a second score for the same pair is an error.
    pub fn insert(&mut self, query: impl Into<String>, gallery: impl Into<String>, score: f64) -> Result<()> {
        let key = (query.into(), gallery.into());
        if self.entries.contains_key(&key) {
            return Err(Error::DomainMismatch(format!(
                "table {:?} scores ({}, {}) twice",
                self.model, key.0, key.1
            )));
        }
        self.entries.insert(key, score);
        Ok(())
    }

    pub fn get(&self, query: &str, gallery: &str) -> Option<f64> {
        // BTreeMap<(String, String)> cannot be probed with borrowed tuples.
        self.entries.get(&(query.to_string(), gallery.to_string())).copied()
    }

    pub fn get_key(&self, key: &PairKey) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending (query, gallery) order.
    pub fn iter(&self) -> impl Iterator<Item = (&PairKey, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PairKey> {
        self.entries.keys()
    }

    pub fn query_ids(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(q, _)| q.as_str()).collect()
    }

    pub fn gallery_ids(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(_, g)| g.as_str()).collect()
    }

    /// Entries of one query, in ascending gallery order.
    pub fn row<'a>(&'a self, query: &'a str) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        let start = (query.to_string(), String::new());
        self.entries
            .range(start..)
            .take_while(move |((q, _), _)| q == query)
            .map(|((_, g), &s)| (g.as_str(), s))
    }

    /// Groups entries by query: `query -> [(gallery, score)]`.
    pub fn rows(&self) -> BTreeMap<&str, Vec<(&str, f64)>> {
        let mut out: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
        for ((q, g), &s) in &self.entries {
            out.entry(q.as_str()).or_default().push((g.as_str(), s));
        }
        out
    }

    pub fn check_dense(&self) -> Result<()> {
        let expected = self.query_ids().len() * self.gallery_ids().len();
        if self.entries.len() == expected {
            Ok(())
        } else {
            Err(Error::DomainMismatch(format!(
                "table {:?} has {} entries, a dense table over its ids needs {expected}",
                self.model,
                self.entries.len()
            )))
        }
    }

    pub fn same_keys(&self, other: &ScoreTable) -> bool {
        self.entries.len() == other.entries.len() && self.entries.keys().zip(other.entries.keys()).all(|(a, b)| a == b)
    }

    /// Applies `f` to every score, keeping the entry set.
    pub fn map_scores(&self, model: impl Into<String>, f: impl Fn(f64) -> f64) -> ScoreTable {
        ScoreTable {
            model: model.into(),
            completeness: self.completeness,
            entries: self.entries.iter().map(|(k, &v)| (k.clone(), f(v))).collect(),
        }
    }

    pub fn renamed(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn header(&self) -> Header {
        Header::new()
            .with("model", &self.model)
            .with("completeness", self.completeness)
    }

    pub fn render(&self, provenance: &[(String, String)]) -> String {
        let mut out = self.header().extend(provenance).render();
        out.push('\n');
        for ((q, g), s) in &self.entries {
            out.push_str(q);
            out.push('\t');
            out.push_str(g);
            out.push('\t');
            out.push_str(&fmt_sig(*s, SCORE_DIGITS));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<(Self, Header)> {
        const WHAT: &str = "score table";
        let mut lines = text.split_terminator('\n');
        let header = Header::parse(lines.next().unwrap_or(""), WHAT, 1)?;
        let model = header.require("model", WHAT, 1)?.to_string();
        let completeness: Completeness = header
            .require("completeness", WHAT, 1)?
            .parse()
            .map_err(|e: String| Error::parse(WHAT, 1, e))?;
        let mut table = ScoreTable::new(model, completeness);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let mut f = line.split('\t');
            let (Some(q), Some(g), Some(s), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(Error::parse(WHAT, line_no, "expected 3 fields"));
            };
            table
                .insert(q, g, parse_f64(s, WHAT, line_no)?)
                .map_err(|e| Error::parse(WHAT, line_no, e.to_string()))?;
        }
        if completeness == Completeness::Dense {
            table.check_dense()?;
        }
        Ok((table, header))
    }
}

pub fn write_table(table: &ScoreTable, provenance: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), table.render(provenance).as_bytes())
}

pub fn read_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    read_table_with_header(path).map(|(t, _)| t)
}

pub fn read_table_with_header(path: impl AsRef<Path>) -> Result<(ScoreTable, Header)> {
    ScoreTable::parse(&read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(q: &str, g: &str) -> PairKey {
        (q.into(), g.into())
    }

    #[test]
    fn text_round_trip() {
        let t = ScoreTable::from_entries(
            "fi2i",
            Completeness::Dense,
            [
                (k("q1", "g1"), 0.25),
                (k("q1", "g2"), -0.123456789123),
                (k("q2", "g1"), 1.0),
                (k("q2", "g2"), 0.0),
            ],
        )
        .unwrap();
        let text = t.render(&[("seed".into(), "7".into())]);
        assert!(text.starts_with("#model=fi2i\tcompleteness=dense\tseed=7\n"));
        assert!(text.contains("q1\tg2\t-0.123456789\n"));
        let (back, header) = ScoreTable::parse(&text).unwrap();
        assert_eq!(header.get("seed"), Some("7"));
        assert_eq!(back.get("q1", "g1"), Some(0.25));
        assert_eq!(back.len(), 4);
    }

    #[test]
    fn dense_requires_full_grid() {
        let r = ScoreTable::from_entries("m", Completeness::Dense, [(k("q1", "g1"), 0.1), (k("q2", "g2"), 0.2)]);
        assert!(matches!(r, Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let mut t = ScoreTable::new("m", Completeness::Truncated);
        t.insert("q", "g", 0.1).unwrap();
        assert!(t.insert("q", "g", 0.2).is_err());
    }

    #[test]
    fn row_iterates_one_query() {
        let t = ScoreTable::from_entries(
            "m",
            Completeness::Truncated,
            [
                (k("a", "g2"), 0.1),
                (k("a", "g1"), 0.2),
                (k("ab", "g1"), 0.3),
                (k("b", "g1"), 0.4),
            ],
        )
        .unwrap();
        let row: Vec<_> = t.row("a").collect();
        assert_eq!(row, vec![("g1", 0.2), ("g2", 0.1)]);
    }
}
