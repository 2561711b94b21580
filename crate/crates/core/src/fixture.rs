//! Deterministic synthetic corpus with planted garment–lookbook matches.
//!
//! Mock embeddings follow the sidecar's mock mode: each vector is drawn from a
//! ChaCha8 stream keyed by SHA-256 of `(seed, id, ordinal)`, with components
//! uniform in [-1, 1), then normalized. Planted gallery images, descriptions
//! and crops are blends of the query vector with their own mock vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{write_corpus, BoundingBox, GarmentDescription, ImageRecord, Role};
use crate::embedding::{dot, normalize_rows, write_block, BlockKind, EmbeddingBlock, RowKey};
use crate::error::{Error, Result};
use crate::table::{write_table, Completeness, ScoreTable};

const BRANDS: [&str; 12] = [
    "Maison Margiela",
    "Comme des Garcons",
    "Dries Van Noten",
    "Jil Sander",
    "Bottega Veneta",
    "Prada",
    "Gucci",
    "Loewe",
    "Acne Studios",
    "Alexander McQueen",
    "Rick Owens",
    "Sacai",
];

const GARMENTS: [&str; 8] = [
    "black wool coat",
    "white cotton shirt",
    "pleated midi skirt",
    "wide-leg trousers",
    "leather ankle boots",
    "cropped denim jacket",
    "silk slip dress",
    "chunky knit sweater",
];

/// External metric-learning stand-ins: (name, scale, offset). Different
/// scales make the need for standardization visible.
pub const EXTERNAL_MODELS: [(&str, f64, f64); 2] = [("proxynca", 1.0, 0.0), ("hypdino", 40.0, -20.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureParams {
    pub queries: usize,
    pub gallery: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            queries: 200,
            gallery: 1000,
            dim: 64,
            seed: 7,
        }
    }
}

/// Normalized pseudorandom vector keyed by (seed, id, ordinal).
pub fn mock_vector(seed: u64, id: &str, ordinal: Option<u32>, dim: usize) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    hasher.update([0x1f]);
    match ordinal {
        Some(o) => hasher.update(o.to_le_bytes()),
        None => hasher.update(b"-"),
    }
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    normalize_rows(&mut v, dim).expect("a uniform draw is never all zeros");
    v
}

fn blend(a: &[f32], wa: f32, b: &[f32]) -> Vec<f32> {
    let mut v: Vec<f32> = a.iter().zip(b).map(|(x, y)| wa * x + (1.0 - wa) * y).collect();
    let dim = v.len();
    normalize_rows(&mut v, dim).expect("blend of two unit vectors with positive weights");
    v
}

pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

pub fn gallery_id(j: usize) -> String {
    format!("g{j:05}")
}

fn brand_variant(brand: &str, variant: usize) -> String {
    match variant % 4 {
        0 => brand.to_string(),
        1 => brand.to_uppercase(),
        2 => format!(" {}", brand.replace(' ', "  ")),
        _ if brand.len() >= 10 => {
            // one inserted character keeps the ratio above 95
            let mid = brand.len() / 2;
            let mut s = brand.to_string();
            let c = s.as_bytes()[mid] as char;
            s.insert(mid, c);
            s
        }
        _ => brand.to_lowercase(),
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: FixtureParams,
    pub queries: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
    pub descriptions: Vec<GarmentDescription>,
    pub boxes: Vec<BoundingBox>,
    pub query_block: EmbeddingBlock,
    pub gallery_block: EmbeddingBlock,
    pub text_block: EmbeddingBlock,
    pub bbox_block: EmbeddingBlock,
    pub external: Vec<ScoreTable>,
    /// query id → planted gallery id, with the planted blend weight.
    pub planted: BTreeMap<String, (String, f32)>,
}

impl Fixture {
    pub fn is_planted(&self, query: &str) -> bool {
        self.planted.contains_key(query)
    }
}

/// Every fifth query (index ≡ 4 mod 5) has no planted match; every tenth of
/// those also has an empty brand. Gallery `j` of a planted query `i` is
/// `(i * 919) mod |G|`, a bijection for `|G| = 1000`.
pub fn generate(params: FixtureParams) -> Result<Fixture> {
    let FixtureParams {
        queries: nq,
        gallery: ng,
        dim,
        seed,
    } = params;
    if nq == 0 || ng < nq || dim < 4 {
        return Err(Error::Config(format!(
            "fixture needs 0 < queries <= gallery and dim >= 4, got {nq}/{ng}/{dim}"
        )));
    }

    let mut planted = BTreeMap::new();
    let mut planted_for_gallery: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..nq {
        if i % 5 == 4 {
            continue;
        }
        let mut j = (i * 919) % ng;
        while planted_for_gallery.contains_key(&j) {
            j = (j + 1) % ng;
        }
        planted_for_gallery.insert(j, i);
        // weights spread over [0.45, 0.85)
        let w = 0.45 + 0.4 * ((i * 37) % 100) as f32 / 100.0;
        planted.insert(query_id(i), (gallery_id(j), w));
    }

    let queries: Vec<ImageRecord> = (0..nq)
        .map(|i| ImageRecord {
            id: query_id(i),
            role: Role::Query,
            brand: if i % 50 == 4 {
                String::new()
            } else {
                BRANDS[i % BRANDS.len()].to_string()
            },
            image_uri: format!("fixture://garments/{}.jpg", query_id(i)),
            source: "fixture-shop".into(),
        })
        .collect();

    let gallery: Vec<ImageRecord> = (0..ng)
        .map(|j| {
            let brand = match planted_for_gallery.get(&j) {
                Some(&i) => brand_variant(BRANDS[i % BRANDS.len()], j),
                None if j % 50 == 17 => String::new(),
                None => brand_variant(BRANDS[(j * 5) % BRANDS.len()], j / 3),
            };
            ImageRecord {
                id: gallery_id(j),
                role: Role::Gallery,
                brand,
                image_uri: format!("fixture://lookbook/{}.jpg", gallery_id(j)),
                source: "fixture-editorial".into(),
            }
        })
        .collect();

    let qvecs: Vec<Vec<f32>> = queries.iter().map(|r| mock_vector(seed, &r.id, None, dim)).collect();

    let mut gallery_vecs = Vec::with_capacity(ng * dim);
    let mut text_vecs = Vec::new();
    let mut text_keys = Vec::new();
    let mut bbox_vecs = Vec::new();
    let mut bbox_keys = Vec::new();
    let mut descriptions = Vec::new();
    let mut boxes = Vec::new();

    for (j, rec) in gallery.iter().enumerate() {
        let own = mock_vector(seed, &rec.id, None, dim);
        let plant = planted_for_gallery
            .get(&j)
            .map(|&i| (&qvecs[i], planted[&query_id(i)].1));
        match plant {
            Some((q, w)) => gallery_vecs.extend(blend(q, w * 0.6, &own)),
            None => gallery_vecs.extend(own),
        }

        // planted galleries always carry parts; others have 0..=3
        let n_parts = if plant.is_some() { 2 + j % 2 } else { j % 4 };
        for o in 0..n_parts as u32 {
            let text = mock_vector(seed ^ 0x7465_7874, &rec.id, Some(o), dim);
            let crop = mock_vector(seed ^ 0x6262_6f78, &rec.id, Some(o), dim);
            let (text, crop) = match plant {
                Some((q, w)) if o == 1 => (blend(q, w * 0.8, &text), blend(q, w + 0.1, &crop)),
                _ => (text, crop),
            };
            text_vecs.extend(text);
            text_keys.push(RowKey::part(&rec.id, o));
            descriptions.push(GarmentDescription {
                gallery_id: rec.id.clone(),
                index: o,
                text: GARMENTS[(j + o as usize * 3) % GARMENTS.len()].to_string(),
            });
            // detector keeps every other description's box on unplanted images
            if plant.is_some() || o % 2 == 0 {
                bbox_vecs.extend(crop);
                bbox_keys.push(RowKey::part(&rec.id, o));
                let x0 = 10.0 + 20.0 * o as f64;
                boxes.push(BoundingBox {
                    gallery_id: rec.id.clone(),
                    description_index: o,
                    x0,
                    y0: 40.0,
                    x1: x0 + 180.0,
                    y1: 600.0,
                    confidence: 0.5 + 0.1 * o as f64,
                });
            }
        }
    }

    let query_block = EmbeddingBlock::new(
        BlockKind::QueryImage,
        dim,
        qvecs.concat(),
        queries.iter().map(|r| RowKey::image(&r.id)).collect(),
    )?;
    let gallery_block = EmbeddingBlock::new(
        BlockKind::GalleryImage,
        dim,
        gallery_vecs,
        gallery.iter().map(|r| RowKey::image(&r.id)).collect(),
    )?;
    let text_block = EmbeddingBlock::new(BlockKind::GalleryText, dim, text_vecs, text_keys)?;
    let bbox_block = EmbeddingBlock::new(BlockKind::GalleryBbox, dim, bbox_vecs, bbox_keys)?;

    let external = EXTERNAL_MODELS
        .iter()
        .enumerate()
        .map(|(m, &(name, scale, offset))| {
            let model_seed = seed.wrapping_add(1000 + m as u64);
            let gvecs: Vec<Vec<f32>> = gallery
                .iter()
                .map(|r| mock_vector(model_seed, &r.id, None, dim))
                .collect();
            let mut table = ScoreTable::new(name, Completeness::Dense);
            for q in &queries {
                let qv = mock_vector(model_seed, &q.id, None, dim);
                for (g, gv) in gallery.iter().zip(&gvecs) {
                    let boost = match planted.get(&q.id) {
                        Some((pg, w)) if *pg == g.id => 0.9 * *w as f64,
                        _ => 0.0,
                    };
                    table.insert(q.id.clone(), g.id.clone(), offset + scale * (dot(&qv, gv) + boost))?;
                }
            }
            Ok(table)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Fixture {
        params,
        queries,
        gallery,
        descriptions,
        boxes,
        query_block,
        gallery_block,
        text_block,
        bbox_block,
        external,
        planted,
    })
}

/// Paths of a fixture written to disk.
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub config: PathBuf,
}

/// Writes corpora, blocks, external tables, descriptions, boxes, planted
/// truth, and a ready-to-run `pipeline.toml` into `dir`.
pub fn write_fixture(fixture: &Fixture, dir: impl AsRef<Path>) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_corpus(&fixture.queries, dir.join("queries.tsv"))?;
    write_corpus(&fixture.gallery, dir.join("gallery.tsv"))?;
    write_block(&fixture.query_block, dir.join("query_image.emb"))?;
    write_block(&fixture.gallery_block, dir.join("gallery_image.emb"))?;
    write_block(&fixture.text_block, dir.join("gallery_text.emb"))?;
    write_block(&fixture.bbox_block, dir.join("gallery_bbox.emb"))?;
    for t in &fixture.external {
        write_table(t, &[], dir.join(format!("{}.tsv", t.model)))?;
    }

    let mut desc = String::new();
    for d in &fixture.descriptions {
        desc.push_str(&format!("{}\t{}\t{}\n", d.gallery_id, d.index, d.text));
    }
    write_text(&dir.join("descriptions.tsv"), &desc)?;
    let mut boxes = String::new();
    for b in &fixture.boxes {
        boxes.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            b.gallery_id, b.description_index, b.x0, b.y0, b.x1, b.y1, b.confidence
        ));
    }
    write_text(&dir.join("boxes.tsv"), &boxes)?;
    let mut truth = String::new();
    for (q, (g, _)) in &fixture.planted {
        truth.push_str(&format!("{q}\t{g}\n"));
    }
    write_text(&dir.join("truth.tsv"), &truth)?;

    let externals: String = EXTERNAL_MODELS
        .iter()
        .map(|(name, _, _)| format!("\n[[external]]\nmodel = \"{name}\"\npath = \"{name}.tsv\"\n"))
        .collect();
    let config = format!(
        r#"output_dir = "out"

[corpus]
queries = "queries.tsv"
gallery = "gallery.tsv"
descriptions = "descriptions.tsv"
boxes = "boxes.tsv"

[embeddings]
query_image = "query_image.emb"
gallery_image = "gallery_image.emb"
gallery_text = "gallery_text.emb"
gallery_bbox = "gallery_bbox.emb"
{externals}
[ensemble]
name = "total-ensemble"
mode = "second_highest_truncated"
min_support = 2
members = ["i2i", "t2i", "proxynca", "hypdino"]

[brand]
threshold = 90.0

[retrieval]
k = 50

[calibration]
sample_size = 100000
seed = {seed}

[curation]
cutoffs = [20, 60, 120]
probes = [10, 50, 100, 150]
per_probe = 20
seed = {seed}
"#,
        seed = fixture.params.seed
    );
    let config_path = dir.join("pipeline.toml");
    write_text(&config_path, &config)?;
    Ok(FixturePaths {
        dir: dir.to_path_buf(),
        config: config_path,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
