//! Pair formation, rank-ordered manifests with quality tiers, and sampling
//! of pairs around probe ranks for human annotation.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::table::{ScoreTable, SCORE_DIGITS};
use crate::textio::{fmt_sig, join_list, parse_f64, parse_list, parse_u64, read_text, write_atomic, Header};

pub const DEFAULT_CUTOFFS: [usize; 3] = [10_000, 50_000, 300_000];
pub const DEFAULT_PER_PROBE: usize = 200;
/// Probe windows cover ranks `[probe - HALF_WINDOW, probe + HALF_WINDOW)`.
pub const HALF_WINDOW: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub query_id: String,
    pub gallery_id: String,
    pub score: f64,
}

/// Best gallery per query (ties go to the smaller gallery id).
pub fn form_pairs(fused: &ScoreTable) -> Vec<Pair> {
    fused
        .rows()
        .into_iter()
        .filter_map(|(q, row)| {
            // Rows come in ascending gallery order, so a strict `>` keeps the
            // smallest id among equal scores.
            let mut best: Option<(&str, f64)> = None;
            for (g, s) in row {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((g, s));
                }
            }
            best.map(|(g, s)| Pair {
                query_id: q.to_string(),
                gallery_id: g.to_string(),
                score: s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    High,
    Medium,
    Low,
    Unreleased,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
            Tier::Unreleased => "unreleased",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "high" => Tier::High,
            "medium" => Tier::Medium,
            "low" => Tier::Low,
            "unreleased" => Tier::Unreleased,
            other => return Err(format!("unknown tier {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TierCutoffs {
    pub high: usize,
    pub medium: usize,
    pub low: usize,
}

impl Default for TierCutoffs {
    fn default() -> Self {
        let [high, medium, low] = DEFAULT_CUTOFFS;
        Self { high, medium, low }
    }
}

impl TierCutoffs {
    pub fn new(high: usize, medium: usize, low: usize) -> Result<Self> {
        if high == 0 || high >= medium || medium >= low {
            return Err(Error::BadCutoffs(vec![high, medium, low]));
        }
        Ok(Self { high, medium, low })
    }

    pub fn from_slice(c: &[usize]) -> Result<Self> {
        match *c {
            [h, m, l] => Self::new(h, m, l),
            _ => Err(Error::BadCutoffs(c.to_vec())),
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.high, self.medium, self.low]
    }

    /// Tier of a 1-based rank.
    pub fn tier(&self, rank: usize) -> Tier {
        if rank <= self.high {
            Tier::High
        } else if rank <= self.medium {
            Tier::Medium
        } else if rank <= self.low {
            Tier::Low
        } else {
            Tier::Unreleased
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub rank: usize,
    pub query_id: String,
    pub gallery_id: String,
    pub score: f64,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub cutoffs: TierCutoffs,
    pub rows: Vec<ManifestRow>,
}

/// Ranks pairs by score (desc), ties by query id (asc), and labels tiers.
pub fn build_manifest(pairs: &[Pair], cutoffs: TierCutoffs) -> Result<PairManifest> {
    TierCutoffs::new(cutoffs.high, cutoffs.medium, cutoffs.low)?;
    let mut seen = HashSet::with_capacity(pairs.len());
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.query_id.as_str())) {
        return Err(Error::DuplicateId(dup.query_id.clone()));
    }
    let mut order: Vec<&Pair> = pairs.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.query_id.cmp(&b.query_id)));
    let rows = order
        .into_iter()
        .enumerate()
        .map(|(i, p)| ManifestRow {
            rank: i + 1,
            query_id: p.query_id.clone(),
            gallery_id: p.gallery_id.clone(),
            score: p.score,
            tier: cutoffs.tier(i + 1),
        })
        .collect();
    Ok(PairManifest { cutoffs, rows })
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tier_rows(&self, tier: Tier) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.tier == tier)
    }

    /// Rows released at `tier` or better; tiers are nested rank prefixes.
    pub fn released(&self, tier: Tier) -> &[ManifestRow] {
        let n = self.rows.iter().take_while(|r| r.tier <= tier).count();
        &self.rows[..n]
    }

    pub fn render(&self, provenance: &[(String, String)]) -> String {
        let header = Header::new()
            .with("cutoffs", join_list(&self.cutoffs.as_array()))
            .with("pairs", self.rows.len())
            .extend(provenance);
        let mut out = header.render();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.rank,
                r.query_id,
                r.gallery_id,
                fmt_sig(r.score, SCORE_DIGITS),
                r.tier
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<(Self, Header)> {
        const WHAT: &str = "pair manifest";
        let mut lines = text.split_terminator('\n');
        let header = Header::parse(lines.next().unwrap_or(""), WHAT, 1)?;
        let cutoffs = parse_list::<usize>(header.require("cutoffs", WHAT, 1)?)
            .ok_or_else(|| Error::parse(WHAT, 1, "bad cutoffs"))?;
        let cutoffs = TierCutoffs::from_slice(&cutoffs)?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(WHAT, n, "expected 5 fields"));
            }
            let rank = parse_u64(f[0], WHAT, n)? as usize;
            if rank != rows.len() + 1 {
                return Err(Error::parse(WHAT, n, format!("rank {rank} out of sequence")));
            }
            rows.push(ManifestRow {
                rank,
                query_id: f[1].to_string(),
                gallery_id: f[2].to_string(),
                score: parse_f64(f[3], WHAT, n)?,
                tier: f[4].parse().map_err(|e: String| Error::parse(WHAT, n, e))?,
            });
        }
        Ok((PairManifest { cutoffs, rows }, header))
    }
}

pub fn write_manifest(m: &PairManifest, provenance: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), m.render(provenance).as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    PairManifest::parse(&read_text(path.as_ref())?).map(|(m, _)| m)
}

/// 1-based rank window `[probe - 100, probe + 100)` clamped to the manifest.
pub fn probe_window(probe: u64, len: usize) -> std::ops::Range<usize> {
    let start = probe.saturating_sub(HALF_WINDOW).max(1) as usize;
    let end = (probe.saturating_add(HALF_WINDOW) as usize).min(len + 1);
    start..end.max(start)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTask {
    pub probe_index: u64,
    pub rank: usize,
    pub query_id: String,
    pub gallery_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSample {
    pub tasks: Vec<AnnotationTask>,
    /// Probes beyond the manifest length.
    pub skipped: Vec<u64>,
    /// Probes whose window held fewer than `per_probe` pairs: (probe, drawn).
    pub short: Vec<(u64, usize)>,
}

/// Draws `per_probe` pairs without replacement from each probe's window.
/// Every probe gets its own stream derived from `seed`, so adding a probe
/// does not change the pairs drawn for the others.
pub fn draw_annotation_samples(
    manifest: &PairManifest,
    probes: &[u64],
    per_probe: usize,
    seed: u64,
) -> AnnotationSample {
    let mut out = AnnotationSample::default();
    for &probe in probes {
        if probe == 0 || probe as usize > manifest.len() {
            out.skipped.push(probe);
            continue;
        }
        let window = probe_window(probe, manifest.len());
        let size = window.len();
        let mut picked: Vec<usize> = if per_probe >= size {
            out.short.push((probe, size));
            (0..size).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ probe.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            index::sample(&mut rng, size, per_probe).into_vec()
        };
        picked.sort_unstable();
        for offset in picked {
            let row = &manifest.rows[window.start + offset - 1];
            out.tasks.push(AnnotationTask {
                probe_index: probe,
                rank: row.rank,
                query_id: row.query_id.clone(),
                gallery_id: row.gallery_id.clone(),
            });
        }
    }
    out
}

/// Task file lines: `probe_index\tquery_id\tgallery_id\tquery_image_uri\tgallery_image_uri`,
/// after a `#` provenance line. URIs are empty when no corpus is supplied.
pub fn render_tasks(
    sample: &AnnotationSample,
    queries: Option<&Corpus>,
    gallery: Option<&Corpus>,
    provenance: &[(String, String)],
) -> String {
    let mut out = String::new();
    if !provenance.is_empty() {
        out.push_str(&Header(provenance.to_vec()).render());
        out.push('\n');
    }
    let uri = |c: Option<&Corpus>, id: &str| {
        c.and_then(|c| c.get(id))
            .map(|r| r.image_uri.clone())
            .unwrap_or_default()
    };
    for t in &sample.tasks {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.probe_index,
            t.query_id,
            t.gallery_id,
            uri(queries, &t.query_id),
            uri(gallery, &t.gallery_id)
        ));
    }
    out
}

pub fn write_tasks(
    sample: &AnnotationSample,
    queries: Option<&Corpus>,
    gallery: Option<&Corpus>,
    provenance: &[(String, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(
        path.as_ref(),
        render_tasks(sample, queries, gallery, provenance).as_bytes(),
    )
}
