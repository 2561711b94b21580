//! End-to-end run: score, calibrate, standardize, retrieve, fuse, curate,
//! sample. Every stage writes its output under the run directory and the
//! next stage reads it back from disk, so a resumed run and a fresh run see
//! the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tracing::{info, warn};

use crate::channels::{aggregate_i2i, score_bb2i, score_fi2i, score_t2i, ChannelId};
use crate::config::RunConfig;
use crate::corpus::{parse_boxes, parse_descriptions, validate_links, Corpus, Role};
use crate::curation::{
    build_manifest, draw_annotation_samples, form_pairs, read_manifest, write_manifest, write_tasks, Tier,
};
use crate::embedding::{read_block, BlockKind, EmbeddingBlock};
use crate::error::{Error, Result};
use crate::fusion::fuse_second_highest;
use crate::retrieval::{
    build_candidates, candidates_to_table, read_candidates, write_candidates, ModelSource, RetrievalModel,
};
use crate::standardize::{calibrate, read_stats, standardize, write_stats};
use crate::table::{read_table, write_table, Completeness, ScoreTable};
use crate::textio::{read_text, Header};

pub const STAGES: [&str; 7] = [
    "score",
    "calibrate",
    "standardize",
    "retrieve",
    "fuse",
    "curate",
    "sample",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Reuse stage outputs whose header carries the current config hash.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub config_hash: String,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub link_issues: usize,
    pub pairs: usize,
    /// Released pairs per tier, high to low.
    pub tiers: [usize; 3],
    pub tasks: usize,
    pub skipped_probes: Vec<u64>,
    pub short_probes: Vec<(u64, usize)>,
}

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn score(&self, model: &str) -> PathBuf {
        self.root.join("scores").join(format!("{model}.tsv"))
    }

    pub fn stats(&self, model: &str) -> PathBuf {
        self.root.join("stats").join(format!("{model}.tsv"))
    }

    pub fn standardized(&self, model: &str) -> PathBuf {
        self.root.join("standardized").join(format!("{model}.tsv"))
    }

    pub fn candidates(&self, model: &str) -> PathBuf {
        self.root.join("candidates").join(format!("{model}.tsv"))
    }

    pub fn fused(&self) -> PathBuf {
        self.root.join("fused.tsv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.tsv")
    }

    pub fn tasks(&self) -> PathBuf {
        self.root.join("annotation_tasks.tsv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("run.json")
    }

    fn dirs(&self) -> [PathBuf; 5] {
        [
            self.root.clone(),
            self.root.join("scores"),
            self.root.join("stats"),
            self.root.join("standardized"),
            self.root.join("candidates"),
        ]
    }
}

struct Inputs {
    queries: Corpus,
    gallery: Corpus,
    query_block: EmbeddingBlock,
    image_block: EmbeddingBlock,
    text_block: Option<EmbeddingBlock>,
    bbox_block: Option<EmbeddingBlock>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let queries = Corpus::load(&cfg.corpus.queries, Role::Query)?;
    let gallery = Corpus::load(&cfg.corpus.gallery, Role::Gallery)?;
    let load = |path: &Path, kind: BlockKind, corpus: &Corpus| -> Result<EmbeddingBlock> {
        let block = read_block(path)?;
        block.expect_kind(kind)?;
        block.check_keys(corpus)?;
        Ok(block)
    };
    let query_block = load(&cfg.embeddings.query_image, BlockKind::QueryImage, &queries)?;
    let image_block = load(&cfg.embeddings.gallery_image, BlockKind::GalleryImage, &gallery)?;
    let text_block = cfg
        .embeddings
        .gallery_text
        .as_deref()
        .map(|p| load(p, BlockKind::GalleryText, &gallery))
        .transpose()?;
    let bbox_block = cfg
        .embeddings
        .gallery_bbox
        .as_deref()
        .map(|p| load(p, BlockKind::GalleryBbox, &gallery))
        .transpose()?;
    for b in [Some(&image_block), text_block.as_ref(), bbox_block.as_ref()]
        .into_iter()
        .flatten()
    {
        if b.dim() != query_block.dim() {
            return Err(Error::DimMismatch(format!(
                "{} block has dim {}, queries have {}",
                b.kind().name(),
                b.dim(),
                query_block.dim()
            )));
        }
    }
    Ok(Inputs {
        queries,
        gallery,
        query_block,
        image_block,
        text_block,
        bbox_block,
    })
}

fn check_links(cfg: &RunConfig, gallery: &Corpus) -> Result<usize> {
    let descriptions = match &cfg.corpus.descriptions {
        Some(p) => parse_descriptions(&read_text(p)?)?,
        None => Vec::new(),
    };
    let boxes = match &cfg.corpus.boxes {
        Some(p) => parse_boxes(&read_text(p)?)?,
        None => Vec::new(),
    };
    let issues = validate_links(&descriptions, &boxes, gallery.records());
    for issue in issues.iter().take(20) {
        warn!(?issue, "dangling annotation link");
    }
    Ok(issues.len())
}

/// True when `path` exists and its first line is a header carrying `hash`.
fn checkpoint_current(path: &Path, hash: &str) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return false;
    };
    let first = text.lines().next().unwrap_or("");
    Header::parse(first, "checkpoint", 1)
        .ok()
        .is_some_and(|h| h.get("config") == Some(hash))
}

/// Runs the whole pipeline. Rayon work inside runs on the current pool, so
/// callers control parallelism with `ThreadPool::install`.
pub fn run_pipeline(cfg: &RunConfig, opts: RunOptions) -> Result<PipelineReport> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.output_dir);
    for d in layout.dirs() {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let prov = cfg.provenance();
    let hash = cfg.hash();
    let members = &cfg.ensemble.members;
    let mut stages = Vec::new();

    let inputs = load_inputs(cfg).map_err(|e| e.in_stage("load"))?;
    let link_issues = check_links(cfg, &inputs.gallery).map_err(|e| e.in_stage("load"))?;

    // Once a stage reruns, everything downstream reruns too.
    let mut dirty = !opts.resume;
    let mut stage = |name: &'static str, outputs: Vec<PathBuf>, run: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        let reused = !dirty && outputs.iter().all(|p| checkpoint_current(p, &hash));
        dirty |= !reused;
        if reused {
            info!(stage = name, "reusing checkpoint");
        } else {
            info!(stage = name, "running");
            run().map_err(|e| e.in_stage(name))?;
        }
        stages.push(StageOutcome { stage: name, reused });
        Ok(())
    };

    let models = cfg.available_models();
    stage("score", models.iter().map(|m| layout.score(m)).collect(), &mut || {
        let fi2i = score_fi2i(&inputs.query_block, &inputs.image_block)?;
        write_table(&fi2i, &prov, layout.score(ChannelId::Fi2i.model_name()))?;
        if let Some(text) = &inputs.text_block {
            let t2i = score_t2i(&inputs.query_block, text, &inputs.gallery)?;
            write_table(&t2i, &prov, layout.score(ChannelId::T2i.model_name()))?;
        }
        let bb2i = match &inputs.bbox_block {
            Some(crops) => {
                let t = score_bb2i(&inputs.query_block, crops, &inputs.gallery)?;
                write_table(&t, &prov, layout.score(ChannelId::Bb2i.model_name()))?;
                t
            }
            None => ScoreTable::new(ChannelId::Bb2i.model_name(), Completeness::Truncated),
        };
        write_table(
            &aggregate_i2i(&fi2i, &bb2i)?,
            &prov,
            layout.score(ChannelId::I2i.model_name()),
        )?;
        for ext in &cfg.external {
            let t = read_table(&ext.path)?.renamed(ext.model.clone());
            write_table(&t, &prov, layout.score(&ext.model))?;
        }
        Ok(())
    })?;

    stage(
        "calibrate",
        members.iter().map(|m| layout.stats(m)).collect(),
        &mut || {
            for m in members {
                let table = read_table(layout.score(m))?;
                let stats = calibrate(&table, cfg.calibration.sample_size, cfg.calibration.seed)?;
                info!(model = %m, mu = stats.mu, sigma = stats.sigma, "calibrated");
                write_stats(&stats, &prov, layout.stats(m))?;
            }
            Ok(())
        },
    )?;

    stage(
        "standardize",
        members.iter().map(|m| layout.standardized(m)).collect(),
        &mut || {
            for m in members {
                let table = read_table(layout.score(m))?;
                let stats = read_stats(layout.stats(m))?;
                write_table(&standardize(&table, &stats)?, &prov, layout.standardized(m))?;
            }
            Ok(())
        },
    )?;

    stage(
        "retrieve",
        members.iter().map(|m| layout.candidates(m)).collect(),
        &mut || {
            // Raw and standardized scores order identically, so raw scores select
            // the candidates and standardization happens at fusion time.
            let mut tables = Vec::new();
            for m in members {
                let via_block = match m.parse::<ChannelId>() {
                    Ok(ChannelId::Fi2i) => Some(&inputs.image_block),
                    Ok(ChannelId::T2i) => inputs.text_block.as_ref(),
                    Ok(ChannelId::Bb2i) => inputs.bbox_block.as_ref(),
                    _ => None,
                };
                tables.push((
                    m,
                    via_block,
                    if via_block.is_none() {
                        Some(read_table(layout.score(m))?)
                    } else {
                        None
                    },
                ));
            }
            let sources: Vec<RetrievalModel> = tables
                .iter()
                .map(|(m, block, table)| RetrievalModel {
                    name: m.to_string(),
                    source: match (block, table) {
                        (Some(b), _) => ModelSource::Embedding(b),
                        (None, Some(t)) => ModelSource::Table(t),
                        (None, None) => unreachable!("every member has a source"),
                    },
                })
                .collect();
            let lists = build_candidates(
                &inputs.query_block,
                &inputs.queries,
                &inputs.gallery,
                &sources,
                cfg.retrieval.k,
                cfg.brand.as_ref(),
            )?;
            for m in members {
                let mine: Vec<_> = lists.iter().filter(|l| &l.model == m).cloned().collect();
                write_candidates(&mine, &prov, layout.candidates(m))?;
            }
            Ok(())
        },
    )?;

    stage("fuse", vec![layout.fused()], &mut || {
        let mut standardized = Vec::new();
        for m in members {
            let lists = read_candidates(layout.candidates(m))?;
            let raw = candidates_to_table(m, &lists)?;
            standardized.push(standardize(&raw, &read_stats(layout.stats(m))?)?);
        }
        let fused = fuse_second_highest(&standardized, &cfg.ensemble)?;
        info!(pairs = fused.len(), "fused");
        write_table(&fused, &prov, layout.fused())
    })?;

    let cutoffs = cfg.cutoffs()?;
    stage("curate", vec![layout.manifest()], &mut || {
        let fused = read_table(layout.fused())?;
        let manifest = build_manifest(&form_pairs(&fused), cutoffs)?;
        write_manifest(&manifest, &prov, layout.manifest())
    })?;

    let manifest = read_manifest(layout.manifest()).map_err(|e| e.in_stage("curate"))?;
    let sample = draw_annotation_samples(
        &manifest,
        &cfg.curation.probes,
        cfg.curation.per_probe,
        cfg.curation.seed,
    );
    for p in &sample.skipped {
        warn!(probe = p, pairs = manifest.len(), "probe beyond the manifest; skipped");
    }
    stage("sample", vec![layout.tasks()], &mut || {
        write_tasks(
            &sample,
            Some(&inputs.queries),
            Some(&inputs.gallery),
            &prov,
            layout.tasks(),
        )
    })?;

    let report = PipelineReport {
        config_hash: hash.clone(),
        output_dir: layout.root.clone(),
        stages,
        link_issues,
        pairs: manifest.len(),
        tiers: [Tier::High, Tier::Medium, Tier::Low].map(|t| manifest.released(t).len()),
        tasks: sample.tasks.len(),
        skipped_probes: sample.skipped.clone(),
        short_probes: sample.short.clone(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(layout.report(), json + "\n").map_err(|e| Error::io(layout.report(), e))?;
    Ok(report)
}
