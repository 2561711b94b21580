//! Exact top-K retrieval with brand prefiltering.
//!
//! Candidate lists are ordered by (score desc, gallery id asc), so results do
//! not depend on scan order or worker count.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::group_parts;
use crate::corpus::{Corpus, ImageRecord};
use crate::embedding::{dot, BlockKind, EmbeddingBlock};
use crate::error::{Error, Result};
use crate::fuzzy::{ratio, Canonicalization};
use crate::table::{Completeness, ScoreTable, SCORE_DIGITS};
use crate::textio::{fmt_sig, parse_f64, parse_u64, read_text, write_atomic, Header};

pub const DEFAULT_K: usize = 2000;
pub const DEFAULT_BRAND_THRESHOLD: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrandFilter {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(flatten)]
    pub canonicalization: Canonicalization,
}

fn default_threshold() -> f64 {
    DEFAULT_BRAND_THRESHOLD
}

impl Default for BrandFilter {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_BRAND_THRESHOLD,
            canonicalization: Canonicalization::default(),
        }
    }
}

impl BrandFilter {
    pub fn new(threshold: f64) -> Result<Self> {
        let f = Self {
            threshold,
            ..Self::default()
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=100.0).contains(&self.threshold) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "brand threshold {} outside [0, 100]",
                self.threshold
            )))
        }
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        ratio(&self.canonicalization.apply(a), &self.canonicalization.apply(b))
    }
}

/// Gallery ids whose brand is similar enough to the query's. Records with an
/// empty brand, on either side, never pass.
pub fn prefilter(query: &ImageRecord, gallery: &[ImageRecord], filter: &BrandFilter) -> BTreeSet<String> {
    let canon = filter.canonicalization;
    let q = canon.apply(&query.brand);
    if q.is_empty() {
        return BTreeSet::new();
    }
    gallery
        .iter()
        .filter(|g| {
            let b = canon.apply(&g.brand);
            !b.is_empty() && ratio(&q, &b) >= filter.threshold
        })
        .map(|g| g.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub gallery_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub query_id: String,
    pub model: String,
    pub capacity: usize,
    pub entries: Vec<Candidate>,
}

/// Heap item ordered so that "greater" means "ranks higher".
struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

/// Keeps the `k` best of a stream of (id, score) with a bounded min-heap.
fn select_top<'a>(items: impl Iterator<Item = (&'a str, f64)>, k: usize) -> Vec<Candidate> {
    let mut heap: BinaryHeap<Reverse<Ranked<'a>>> = BinaryHeap::with_capacity(k + 1);
    for (id, score) in items {
        let item = Ranked { score, id };
        if heap.len() < k {
            heap.push(Reverse(item));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if item > *worst {
                heap.pop();
                heap.push(Reverse(item));
            }
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    best.sort_unstable_by(|a, b| b.cmp(a));
    best.into_iter()
        .map(|r| Candidate {
            gallery_id: r.id.to_string(),
            score: r.score,
        })
        .collect()
}

/// Exact top-`k` gallery rows by dot product with `query`, restricted to
/// `mask` when given. Part blocks (text, crops) score each gallery image by
/// its best part.
pub fn topk(
    query: &[f32],
    gallery: &EmbeddingBlock,
    k: usize,
    mask: Option<&BTreeSet<String>>,
) -> Result<Vec<Candidate>> {
    if query.len() != gallery.dim() {
        return Err(Error::DimMismatch(format!(
            "query has dim {}, gallery block has dim {}",
            query.len(),
            gallery.dim()
        )));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let allowed = |id: &str| mask.is_none_or(|m| m.contains(id));
    if let Some(m) = mask {
        if m.is_empty() || !gallery.keys().iter().any(|key| m.contains(&key.id)) {
            return Err(Error::EmptyMask);
        }
    }

    match gallery.kind() {
        BlockKind::GalleryImage => {
            let items = gallery
                .iter_rows()
                .filter(|(key, _)| allowed(&key.id))
                .map(|(key, v)| (key.id.as_str(), dot(query, v)));
            Ok(select_top(items, k))
        }
        BlockKind::GalleryText | BlockKind::GalleryBbox => {
            let items = group_parts(gallery)
                .into_iter()
                .filter(|(id, _)| allowed(id))
                .map(|(id, rows)| {
                    let best = rows
                        .iter()
                        .map(|&r| dot(query, gallery.row(r)))
                        .fold(f64::NEG_INFINITY, f64::max);
                    (id, best)
                });
            Ok(select_top(items, k))
        }
        BlockKind::QueryImage => Err(Error::KindMismatch {
            expected: BlockKind::GalleryImage.name(),
            found: BlockKind::QueryImage.name(),
        }),
    }
}

/// Top-`k` of one query's row in a precomputed score table.
pub fn topk_from_table(
    table: &ScoreTable,
    query_id: &str,
    k: usize,
    mask: Option<&BTreeSet<String>>,
) -> Result<Vec<Candidate>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let items = table.row(query_id).filter(|(g, _)| mask.is_none_or(|m| m.contains(*g)));
    Ok(select_top(items, k))
}

pub enum ModelSource<'a> {
    /// Scores computed on the fly against a gallery-side block.
    Embedding(&'a EmbeddingBlock),
    /// Scores looked up in a precomputed table.
    Table(&'a ScoreTable),
}

pub struct RetrievalModel<'a> {
    pub name: String,
    pub source: ModelSource<'a>,
}

/// Candidate lists for every (query, model), queries in block order and models
/// in the given order. Queries whose brand mask is empty get empty lists.
pub fn build_candidates(
    queries: &EmbeddingBlock,
    query_corpus: &Corpus,
    gallery_corpus: &Corpus,
    models: &[RetrievalModel<'_>],
    k: usize,
    filter: Option<&BrandFilter>,
) -> Result<Vec<CandidateList>> {
    queries.expect_kind(BlockKind::QueryImage)?;
    if let Some(f) = filter {
        f.validate()?;
    }
    for m in models {
        if let ModelSource::Embedding(block) = m.source {
            block.check_keys(gallery_corpus)?;
        }
    }

    let per_query: Vec<Result<Vec<CandidateList>>> = (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let qid = &queries.keys()[qi].id;
            let mask = match filter {
                Some(f) => {
                    let record = query_corpus
                        .get(qid)
                        .ok_or_else(|| Error::UnresolvedKey { key: qid.clone() })?;
                    Some(prefilter(record, gallery_corpus.records(), f))
                }
                None => None,
            };
            let skip = mask.as_ref().is_some_and(BTreeSet::is_empty);
            models
                .iter()
                .map(|m| {
                    let entries = if skip {
                        Vec::new()
                    } else {
                        match m.source {
                            ModelSource::Embedding(block) => match topk(queries.row(qi), block, k, mask.as_ref()) {
                                Err(Error::EmptyMask) => Vec::new(),
                                other => other?,
                            },
                            ModelSource::Table(table) => topk_from_table(table, qid, k, mask.as_ref())?,
                        }
                    };
                    Ok(CandidateList {
                        query_id: qid.clone(),
                        model: m.name.clone(),
                        capacity: k,
                        entries,
                    })
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(queries.rows() * models.len());
    for lists in per_query {
        out.extend(lists?);
    }
    Ok(out)
}

/// Flattens one model's candidate lists into a truncated score table.
pub fn candidates_to_table(model: &str, lists: &[CandidateList]) -> Result<ScoreTable> {
    let mut table = ScoreTable::new(model, Completeness::Truncated);
    for list in lists.iter().filter(|l| l.model == model) {
        for c in &list.entries {
            table.insert(list.query_id.clone(), c.gallery_id.clone(), c.score)?;
        }
    }
    Ok(table)
}

/// Candidate file: optional file-level `#` provenance line, then per list a
/// `#query=<id>\tmodel=<name>\tk=<k>` header followed by `gallery_id\tscore` lines.
pub fn render_candidates(lists: &[CandidateList], provenance: &[(String, String)]) -> String {
    let mut out = String::new();
    if !provenance.is_empty() {
        out.push_str(&Header(provenance.to_vec()).render());
        out.push('\n');
    }
    for list in lists {
        let h = Header::new()
            .with("query", &list.query_id)
            .with("model", &list.model)
            .with("k", list.capacity);
        out.push_str(&h.render());
        out.push('\n');
        for c in &list.entries {
            out.push_str(&c.gallery_id);
            out.push('\t');
            out.push_str(&fmt_sig(c.score, SCORE_DIGITS));
            out.push('\n');
        }
    }
    out
}

pub fn parse_candidates(text: &str) -> Result<(Vec<CandidateList>, Header)> {
    const WHAT: &str = "candidate file";
    let mut provenance = Header::new();
    let mut lists: Vec<CandidateList> = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') {
            let h = Header::parse(line, WHAT, line_no)?;
            if h.get("query").is_some() {
                lists.push(CandidateList {
                    query_id: h.require("query", WHAT, line_no)?.to_string(),
                    model: h.require("model", WHAT, line_no)?.to_string(),
                    capacity: parse_u64(h.require("k", WHAT, line_no)?, WHAT, line_no)? as usize,
                    entries: Vec::new(),
                });
            } else if lists.is_empty() {
                provenance = h;
            } else {
                return Err(Error::parse(WHAT, line_no, "provenance header after the first list"));
            }
            continue;
        }
        let list = lists
            .last_mut()
            .ok_or_else(|| Error::parse(WHAT, line_no, "entry before any list header"))?;
        let (g, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(WHAT, line_no, "expected gallery_id\\tscore"))?;
        list.entries.push(Candidate {
            gallery_id: g.to_string(),
            score: parse_f64(s, WHAT, line_no)?,
        });
        if list.entries.len() > list.capacity {
            return Err(Error::parse(WHAT, line_no, "list longer than its k"));
        }
    }
    Ok((lists, provenance))
}

pub fn write_candidates(
    lists: &[CandidateList],
    provenance: &[(String, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path.as_ref(), render_candidates(lists, provenance).as_bytes())
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateList>> {
    parse_candidates(&read_text(path.as_ref())?).map(|(l, _)| l)
}
