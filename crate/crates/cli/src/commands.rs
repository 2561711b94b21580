use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lookmatch_core::channels::{aggregate_i2i, score_bb2i, score_fi2i, score_t2i, ChannelId};
use lookmatch_core::config::RunConfig;
use lookmatch_core::corpus::{Corpus, Role};
use lookmatch_core::curation::{
    build_manifest, draw_annotation_samples, form_pairs, read_manifest, write_manifest, write_tasks, Tier, TierCutoffs,
};
use lookmatch_core::embedding::{read_block, BlockKind, EmbeddingBlock};
use lookmatch_core::eval::{
    correlation_matrix, load_annotations, quality_curve, ranking_from_table, recall_at_k, GroundTruth,
};
use lookmatch_core::fixture::{generate, write_fixture, FixtureParams};
use lookmatch_core::fusion::{fuse_mean, fuse_second_highest, EnsembleSpec, FusionMode};
use lookmatch_core::pipeline::{run_pipeline, RunOptions};
use lookmatch_core::retrieval::{
    build_candidates, candidates_to_table, parse_candidates, write_candidates, BrandFilter, ModelSource, RetrievalModel,
};
use lookmatch_core::standardize::{calibrate, read_stats, standardize, write_stats};
use lookmatch_core::table::{write_table, ScoreTable};
use lookmatch_core::textio::{parse_list, Header};
use serde_json::json;
use tracing::info;

use crate::{Command, EvalCommand};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::EmbedCheck { path, corpus } => embed_check(&path, corpus.as_deref()),
        Command::Score {
            channel,
            queries,
            gallery,
            text,
            crops,
            corpus,
            output,
        } => score(&channel, &queries, gallery, text, crops, corpus, &output),
        Command::Calibrate {
            input,
            sample_size,
            seed,
            output,
        } => {
            let table = read_scores(&input)?;
            let stats = calibrate(&table, sample_size, seed)?;
            println!(
                "{}: mu={} sigma={} n={}",
                stats.model, stats.mu, stats.sigma, stats.sample_size
            );
            write_stats(&stats, &[], &output)?;
            Ok(())
        }
        Command::Standardize { input, stats, output } => {
            let table = read_scores(&input)?;
            let stats = read_stats(&stats)?;
            write_table(&standardize(&table, &stats)?, &[], &output)?;
            Ok(())
        }
        Command::Retrieve {
            queries,
            gallery,
            k,
            brand_threshold,
            corpus,
            model,
            output,
        } => retrieve(&queries, &gallery, k, brand_threshold, &corpus, model, &output),
        Command::Fuse { spec, input, output } => {
            let spec = EnsembleSpec::load(&spec)?;
            let tables = input.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
            let fused = match spec.mode {
                FusionMode::MeanDense => fuse_mean(&tables, &spec)?,
                FusionMode::SecondHighestTruncated => fuse_second_highest(&tables, &spec)?,
            };
            info!(pairs = fused.len(), "fused {}", spec.name);
            write_table(&fused, &[], &output)?;
            Ok(())
        }
        Command::Eval { metric } => eval(metric),
        Command::Curate { fused, cutoffs, output } => {
            let cutoffs = parse_cutoffs(&cutoffs)?;
            let table = read_scores(&fused)?;
            let manifest = build_manifest(&form_pairs(&table), cutoffs)?;
            write_manifest(&manifest, &[], &output)?;
            let [h, m, l] = [Tier::High, Tier::Medium, Tier::Low].map(|t| manifest.released(t).len());
            println!("pairs={} high={h} medium={m} low={l}", manifest.len());
            Ok(())
        }
        Command::Sample {
            manifest,
            probes,
            per_probe,
            seed,
            queries,
            gallery,
            output,
        } => {
            let probes = parse_probes(&probes)?;
            let manifest = read_manifest(&manifest)?;
            let sample = draw_annotation_samples(&manifest, &probes, per_probe, seed);
            let queries = queries.map(|p| Corpus::load(p, Role::Query)).transpose()?;
            let gallery = gallery.map(|p| Corpus::load(p, Role::Gallery)).transpose()?;
            let prov = [
                ("seed".to_string(), seed.to_string()),
                ("per_probe".to_string(), per_probe.to_string()),
            ];
            write_tasks(&sample, queries.as_ref(), gallery.as_ref(), &prov, &output)?;
            for p in &sample.skipped {
                eprintln!("probe {p} is beyond the manifest ({} pairs); skipped", manifest.len());
            }
            for (p, n) in &sample.short {
                eprintln!("probe {p}: window holds only {n} pairs");
            }
            println!("tasks={}", sample.tasks.len());
            Ok(())
        }
        Command::Pipeline { config, resume } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_pipeline(&cfg, RunOptions { resume })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Fixture {
            output,
            queries,
            gallery,
            dim,
            seed,
        } => {
            fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            let fixture = generate(FixtureParams {
                queries,
                gallery,
                dim,
                seed,
            })?;
            let paths = write_fixture(&fixture, &output)?;
            println!("{}", paths.config.display());
            Ok(())
        }
    }
}

/// Reads either a score table or a candidate file as a table.
fn read_scores(path: &Path) -> Result<ScoreTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("");
    let is_table = Header::parse(first, "score file", 1)
        .map(|h| h.get("completeness").is_some())
        .unwrap_or(false);
    let table = if is_table {
        ScoreTable::parse(&text)?.0
    } else {
        let (lists, _) = parse_candidates(&text)?;
        let Some(model) = lists.first().map(|l| l.model.clone()) else {
            bail!("{} holds no score table or candidate lists", path.display());
        };
        if let Some(other) = lists.iter().find(|l| l.model != model) {
            bail!("{} mixes models {model:?} and {:?}", path.display(), other.model);
        }
        candidates_to_table(&model, &lists)?
    };
    Ok(table)
}

fn parse_cutoffs(s: &str) -> Result<TierCutoffs> {
    let Some(c) = parse_list::<usize>(s) else {
        bail!("cutoffs {s:?} are not a comma-separated list of counts");
    };
    Ok(TierCutoffs::from_slice(&c)?)
}

fn parse_probes(s: &str) -> Result<Vec<u64>> {
    parse_list::<u64>(s).with_context(|| format!("probes {s:?} are not a comma-separated list of ranks"))
}

fn embed_check(path: &Path, corpus: Option<&Path>) -> Result<()> {
    let block = read_block(path)?;
    if let Some(c) = corpus {
        let role = if block.kind() == BlockKind::QueryImage {
            Role::Query
        } else {
            Role::Gallery
        };
        block.check_keys(&Corpus::load(c, role)?)?;
    }
    let ids: std::collections::BTreeSet<&str> = block.keys().iter().map(|k| k.id.as_str()).collect();
    println!(
        "{}: kind={} dim={} rows={} ids={} ok",
        path.display(),
        block.kind().name(),
        block.dim(),
        block.rows(),
        ids.len()
    );
    Ok(())
}

fn require<'a>(arg: &'a Option<PathBuf>, flag: &str, channel: &str) -> Result<&'a Path> {
    arg.as_deref()
        .with_context(|| format!("--{flag} is required for channel {channel}"))
}

fn score(
    channel: &str,
    queries: &Path,
    gallery: Option<PathBuf>,
    text: Option<PathBuf>,
    crops: Option<PathBuf>,
    corpus: Option<PathBuf>,
    output: &Path,
) -> Result<()> {
    let channel: ChannelId = channel.parse().map_err(anyhow::Error::msg)?;
    let name = channel.model_name();
    let q = read_block(queries)?;
    let load_corpus = || -> Result<Corpus> { Ok(Corpus::load(require(&corpus, "corpus", name)?, Role::Gallery)?) };
    let table = match channel {
        ChannelId::Fi2i => score_fi2i(&q, &read_block(require(&gallery, "gallery", name)?)?)?,
        ChannelId::T2i => score_t2i(&q, &read_block(require(&text, "text", name)?)?, &load_corpus()?)?,
        ChannelId::Bb2i => score_bb2i(&q, &read_block(require(&crops, "crops", name)?)?, &load_corpus()?)?,
        ChannelId::I2i => {
            let fi2i = score_fi2i(&q, &read_block(require(&gallery, "gallery", name)?)?)?;
            let bb2i = score_bb2i(&q, &read_block(require(&crops, "crops", name)?)?, &load_corpus()?)?;
            aggregate_i2i(&fi2i, &bb2i)?
        }
    };
    info!(entries = table.len(), "scored {name}");
    write_table(&table, &[], output)?;
    Ok(())
}

fn retrieve(
    queries: &Path,
    gallery: &Path,
    k: usize,
    brand_threshold: Option<f64>,
    corpus: &[PathBuf],
    model: Option<String>,
    output: &Path,
) -> Result<()> {
    let q = read_block(queries)?;
    let g: EmbeddingBlock = read_block(gallery)?;
    let model = match model {
        Some(m) => m,
        None => match g.kind() {
            BlockKind::GalleryImage => ChannelId::Fi2i.model_name().to_string(),
            BlockKind::GalleryText => ChannelId::T2i.model_name().to_string(),
            BlockKind::GalleryBbox => ChannelId::Bb2i.model_name().to_string(),
            BlockKind::QueryImage => bail!("{} is a query block, not a gallery block", gallery.display()),
        },
    };
    let (qc, gc) = match corpus {
        [qp, gp] => (Corpus::load(qp, Role::Query)?, Corpus::load(gp, Role::Gallery)?),
        _ => bail!("--corpus takes the query manifest and the gallery manifest"),
    };
    let filter = brand_threshold.map(BrandFilter::new).transpose()?;
    let models = [RetrievalModel {
        name: model.clone(),
        source: ModelSource::Embedding(&g),
    }];
    let lists = build_candidates(&q, &qc, &gc, &models, k, filter.as_ref())?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut prov = vec![("k".to_string(), k.to_string())];
    if let Some(t) = brand_threshold {
        prov.push(("brand_threshold".to_string(), t.to_string()));
    }
    let path = output.join(format!("{model}.tsv"));
    write_candidates(&lists, &prov, &path)?;
    let empty = lists.iter().filter(|l| l.entries.is_empty()).count();
    println!("{}: {} lists, {} empty", path.display(), lists.len(), empty);
    Ok(())
}

fn write_json(path: &Option<PathBuf>, value: &serde_json::Value) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn eval(metric: EvalCommand) -> Result<()> {
    match metric {
        EvalCommand::Recall { input, truth, k, json } => {
            let ks = parse_list::<usize>(&k).with_context(|| format!("bad k list {k:?}"))?;
            let truth = GroundTruth::load(&truth)?;
            let mut rows = Vec::new();
            print!("{:<16}", "model");
            for k in &ks {
                print!(" {:>8}", format!("R@{k}"));
            }
            println!();
            for path in &input {
                let table = read_scores(path)?;
                let ranking = ranking_from_table(&table);
                let values = ks
                    .iter()
                    .map(|&k| recall_at_k(&ranking, &truth, k))
                    .collect::<lookmatch_core::Result<Vec<f64>>>()?;
                print!("{:<16}", table.model);
                for v in &values {
                    print!(" {:>8.2}", v * 100.0);
                }
                println!();
                rows.push(json!({ "model": table.model, "k": ks, "recall": values }));
            }
            write_json(&json, &json!({ "recall": rows }))
        }
        EvalCommand::Corr {
            input,
            sample,
            seed,
            json,
        } => {
            let tables = input.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
            let m = correlation_matrix(&tables, sample, seed)?;
            print!("{}", m.render_heatmap());
            println!("pairs={}", m.sample_size);
            write_json(
                &json,
                &json!({ "models": m.models, "spearman": m.values, "pairs": m.sample_size, "seed": seed }),
            )
        }
        EvalCommand::Curve {
            annotations,
            probes,
            json,
        } => {
            let probes = parse_probes(&probes)?;
            let records = load_annotations(&annotations)?;
            let curve = quality_curve(&records, &probes)?;
            println!("{:>10} {:>8} {:>8} {:>8}", "probe", "matches", "total", "match%");
            for p in &curve {
                let pct = p.fraction.map_or("-".to_string(), |f| format!("{:.2}", f * 100.0));
                println!("{:>10} {:>8} {:>8} {:>8}", p.probe_index, p.matches, p.total, pct);
            }
            write_json(&json, &json!({ "curve": curve }))
        }
    }
}
