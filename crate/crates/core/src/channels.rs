//! The four similarity channels between garment queries and lookbook images:
//! full image (FI2I), description text (T2I), detector crops (BB2I), and the
//! max-aggregation of full image with crops (I2I).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::embedding::{dot, BlockKind, EmbeddingBlock};
use crate::error::{Error, Result};
use crate::table::{Completeness, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelId {
    Fi2i,
    T2i,
    Bb2i,
    I2i,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [ChannelId::Fi2i, ChannelId::T2i, ChannelId::Bb2i, ChannelId::I2i];

    /// Model identifier used in score tables.
    pub fn model_name(self) -> &'static str {
        match self {
            ChannelId::Fi2i => "fi2i",
            ChannelId::T2i => "t2i",
            ChannelId::Bb2i => "bb2i",
            ChannelId::I2i => "i2i",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.model_name())
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.model_name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

fn check_dims(a: &EmbeddingBlock, b: &EmbeddingBlock) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::DimMismatch(format!(
            "{} block has dim {}, {} block has dim {}",
            a.kind(),
            a.dim(),
            b.kind(),
            b.dim()
        )))
    }
}

/// Full-image cosine: every query against every gallery image. Dense.
pub fn score_fi2i(queries: &EmbeddingBlock, gallery: &EmbeddingBlock) -> Result<ScoreTable> {
    queries.expect_kind(BlockKind::QueryImage)?;
    gallery.expect_kind(BlockKind::GalleryImage)?;
    check_dims(queries, gallery)?;

    let rows: Vec<Vec<f64>> = (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            (0..gallery.rows()).map(|gi| dot(q, gallery.row(gi))).collect()
        })
        .collect();

    let mut table = ScoreTable::new(ChannelId::Fi2i.model_name(), Completeness::Dense);
    for (qkey, scores) in queries.keys().iter().zip(rows) {
        for (gkey, s) in gallery.keys().iter().zip(scores) {
            table.insert(qkey.id.clone(), gkey.id.clone(), s)?;
        }
    }
    Ok(table)
}

/// Description-text similarity: per gallery image, the best description.
pub fn score_t2i(queries: &EmbeddingBlock, texts: &EmbeddingBlock, gallery: &Corpus) -> Result<ScoreTable> {
    texts.expect_kind(BlockKind::GalleryText)?;
    score_max_over_parts(ChannelId::T2i, queries, texts, gallery)
}

/// Crop similarity: per gallery image, the best detector crop.
pub fn score_bb2i(queries: &EmbeddingBlock, crops: &EmbeddingBlock, gallery: &Corpus) -> Result<ScoreTable> {
    crops.expect_kind(BlockKind::GalleryBbox)?;
    score_max_over_parts(ChannelId::Bb2i, queries, crops, gallery)
}

/// Groups part rows by gallery id, in first-seen order.
pub(crate) fn group_parts(parts: &EmbeddingBlock) -> Vec<(&str, Vec<usize>)> {
    let mut order: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    for (row, key) in parts.keys().iter().enumerate() {
        let i = *slot.entry(key.id.as_str()).or_insert_with(|| {
            order.push((key.id.as_str(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(row);
    }
    order
}

fn score_max_over_parts(
    channel: ChannelId,
    queries: &EmbeddingBlock,
    parts: &EmbeddingBlock,
    gallery: &Corpus,
) -> Result<ScoreTable> {
    queries.expect_kind(BlockKind::QueryImage)?;
    check_dims(queries, parts)?;
    parts.check_keys(gallery)?;

    let groups = group_parts(parts);
    let completeness = if groups.len() == gallery.len() {
        Completeness::Dense
    } else {
        Completeness::Truncated
    };

    let rows: Vec<Vec<f64>> = (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            groups
                .iter()
                .map(|(_, rows)| {
                    rows.iter()
                        .map(|&r| dot(q, parts.row(r)))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect();

    let mut table = ScoreTable::new(channel.model_name(), completeness);
    for (qkey, scores) in queries.keys().iter().zip(rows) {
        for ((gid, _), s) in groups.iter().zip(scores) {
            table.insert(qkey.id.clone(), *gid, s)?;
        }
    }
    Ok(table)
}

/// Elementwise max of the full-image and crop channels; galleries without
/// crops keep their full-image score. Dense over the full-image domain.
pub fn aggregate_i2i(fi2i: &ScoreTable, bb2i: &ScoreTable) -> Result<ScoreTable> {
    if fi2i.completeness != Completeness::Dense {
        return Err(Error::DomainMismatch("full-image table must be dense".into()));
    }
    if let Some((q, g)) = bb2i.keys().find(|k| fi2i.get_key(k).is_none()) {
        return Err(Error::DomainMismatch(format!(
            "crop table scores ({q}, {g}) which the full-image table does not cover"
        )));
    }
    let merged = fi2i
        .iter()
        .map(|(k, s)| (k.clone(), bb2i.get_key(k).map_or(s, |crop| crop.max(s))));
    ScoreTable::from_entries(ChannelId::I2i.model_name(), Completeness::Dense, merged)
}
