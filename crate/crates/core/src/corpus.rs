//! Corpus records: garment (query) and lookbook (gallery) images, plus the
//! garment descriptions and detector boxes attached to gallery images.
//!
//! Manifests are tab-separated, one record per line:
//! `id \t role \t brand \t image_uri \t source`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textio::{parse_f64, parse_u64, read_text, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Query,
    Gallery,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Query => "query",
            Role::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(Role::Query),
            "gallery" => Ok(Role::Gallery),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub role: Role,
    /// Stored verbatim; may be empty, in which case the record never passes
    /// the brand prefilter.
    pub brand: String,
    /// Opaque locator, never dereferenced here.
    pub image_uri: String,
    pub source: String,
}

impl ImageRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.id, self.role, self.brand, self.image_uri, self.source
        )
    }
}

/// A loaded, immutable corpus of one role with an id index.
#[derive(Debug, Clone)]
pub struct Corpus {
    role: Role,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(role: Role, records: Vec<ImageRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.role != role {
                return Err(Error::MalformedManifest {
                    line: i + 1,
                    reason: format!("record {:?} has role {}, expected {role}", rec.id, rec.role),
                });
            }
            if rec.id.is_empty() {
                return Err(Error::MalformedManifest {
                    line: i + 1,
                    reason: "empty id".into(),
                });
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
        }
        Ok(Self { role, records, index })
    }

    pub fn load(path: impl AsRef<Path>, role: Role) -> Result<Self> {
        Self::new(role, load_corpus(path, role)?)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }
}

/// Parses a corpus manifest, requiring every row to carry `role`.
pub fn parse_corpus(text: &str, role: Role) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let line_no = i + 1;
        let malformed = |reason: String| Error::MalformedManifest { line: line_no, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("expected 5 fields, found {}", fields.len())));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        let row_role: Role = fields[1].parse().map_err(malformed)?;
        if row_role != role {
            return Err(malformed(format!("role {row_role}, expected {role}")));
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        records.push(ImageRecord {
            id: id.to_string(),
            role,
            brand: fields[2].to_string(),
            image_uri: fields[3].to_string(),
            source: fields[4].to_string(),
        });
    }
    Ok(records)
}

pub fn load_corpus(path: impl AsRef<Path>, role: Role) -> Result<Vec<ImageRecord>> {
    parse_corpus(&read_text(path.as_ref())?, role)
}

pub fn render_corpus(records: &[ImageRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, rec) in records.iter().enumerate() {
        let fields = [&rec.id, &rec.brand, &rec.image_uri, &rec.source];
        if fields.iter().any(|f| f.contains(['\t', '\n'])) {
            return Err(Error::MalformedManifest {
                line: i + 1,
                reason: format!("record {:?} has a tab or newline inside a field", rec.id),
            });
        }
        out.push_str(&rec.to_line());
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(records: &[ImageRecord], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), render_corpus(records)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GarmentDescription {
    pub gallery_id: String,
    pub index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub gallery_id: String,
    pub description_index: u32,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && (0.0..=1.0).contains(&self.confidence)
    }
}

/// Descriptions file: `gallery_id \t index \t text` per line.
pub fn parse_descriptions(text: &str) -> Result<Vec<GarmentDescription>> {
    const WHAT: &str = "description file";
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        if line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(gid), Some(idx), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(WHAT, i + 1, "expected 3 fields"));
        };
        let index = parse_u64(idx, WHAT, i + 1)? as u32;
        if body.is_empty() {
            return Err(Error::parse(WHAT, i + 1, "empty description text"));
        }
        if !seen.insert((gid.to_string(), index)) {
            return Err(Error::parse(WHAT, i + 1, format!("duplicate ({gid}, {index})")));
        }
        out.push(GarmentDescription {
            gallery_id: gid.to_string(),
            index,
            text: body.to_string(),
        });
    }
    Ok(out)
}

/// Boxes file: `gallery_id \t description_index \t x0 \t y0 \t x1 \t y1 \t confidence`.
pub fn parse_boxes(text: &str) -> Result<Vec<BoundingBox>> {
    const WHAT: &str = "bounding box file";
    let mut out = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        if line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(WHAT, i + 1, "expected 7 fields"));
        }
        let bbox = BoundingBox {
            gallery_id: f[0].to_string(),
            description_index: parse_u64(f[1], WHAT, i + 1)? as u32,
            x0: parse_f64(f[2], WHAT, i + 1)?,
            y0: parse_f64(f[3], WHAT, i + 1)?,
            x1: parse_f64(f[4], WHAT, i + 1)?,
            y1: parse_f64(f[5], WHAT, i + 1)?,
            confidence: parse_f64(f[6], WHAT, i + 1)?,
        };
        if !bbox.is_valid() {
            return Err(Error::parse(WHAT, i + 1, "degenerate box or confidence outside [0,1]"));
        }
        out.push(bbox);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkIssue {
    DescriptionMissingGallery { gallery_id: String, index: u32 },
    BoxMissingGallery { gallery_id: String, description_index: u32 },
    BoxMissingDescription { gallery_id: String, description_index: u32 },
}

impl LinkIssue {
    pub fn gallery_id(&self) -> &str {
        match self {
            LinkIssue::DescriptionMissingGallery { gallery_id, .. }
            | LinkIssue::BoxMissingGallery { gallery_id, .. }
            | LinkIssue::BoxMissingDescription { gallery_id, .. } => gallery_id,
        }
    }
}

/// Reports dangling references. A box whose gallery is missing is reported
/// once, as a missing gallery.
pub fn validate_links(
    descriptions: &[GarmentDescription],
    boxes: &[BoundingBox],
    gallery: &[ImageRecord],
) -> Vec<LinkIssue> {
    let gallery_ids: HashSet<&str> = gallery.iter().map(|r| r.id.as_str()).collect();
    let desc_keys: HashSet<(&str, u32)> = descriptions.iter().map(|d| (d.gallery_id.as_str(), d.index)).collect();

    let mut issues = Vec::new();
    for d in descriptions {
        if !gallery_ids.contains(d.gallery_id.as_str()) {
            issues.push(LinkIssue::DescriptionMissingGallery {
                gallery_id: d.gallery_id.clone(),
                index: d.index,
            });
        }
    }
    for b in boxes {
        let gid = b.gallery_id.as_str();
        if !gallery_ids.contains(gid) {
            issues.push(LinkIssue::BoxMissingGallery {
                gallery_id: b.gallery_id.clone(),
                description_index: b.description_index,
            });
        } else if !desc_keys.contains(&(gid, b.description_index)) {
            issues.push(LinkIssue::BoxMissingDescription {
                gallery_id: b.gallery_id.clone(),
                description_index: b.description_index,
            });
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, role: Role, brand: &str) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            role,
            brand: brand.into(),
            image_uri: format!("file:///{id}.jpg"),
            source: "test".into(),
        }
    }

    #[test]
    fn loads_well_formed_gallery_rows() {
        let text = "g1\tgallery\tPrada\tu1\ts\ng2\tgallery\t\tu2\ts\ng3\tgallery\tGucci\tu3\ts\n";
        let recs = parse_corpus(text, Role::Gallery).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.role == Role::Gallery));
        assert_eq!(recs[1].brand, "");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "g1\tgallery\tA\tu\ts\ng1\tgallery\tB\tu\ts\n";
        assert!(matches!(
            parse_corpus(text, Role::Gallery),
            Err(Error::DuplicateId(id)) if id == "g1"
        ));
    }

    #[test]
    fn malformed_rows_rejected() {
        for bad in [
            "g1\tgallery\tA\tu\n",
            "\tgallery\tA\tu\ts\n",
            "g1\tquery\tA\tu\ts\n",
            "g1\tshop\tA\tu\ts\n",
            "g1\tgallery\tA\tu\ts\textra\n",
        ] {
            assert!(
                matches!(
                    parse_corpus(bad, Role::Gallery),
                    Err(Error::MalformedManifest { line: 1, .. })
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn render_rejects_embedded_tabs() {
        let mut r = rec("q1", Role::Query, "A");
        r.brand = "A\tB".into();
        assert!(render_corpus(&[r]).is_err());
    }

    #[test]
    fn links_all_resolve() {
        let gallery = vec![rec("g1", Role::Gallery, "A")];
        let descs = vec![GarmentDescription {
            gallery_id: "g1".into(),
            index: 0,
            text: "red coat".into(),
        }];
        let boxes = vec![BoundingBox {
            gallery_id: "g1".into(),
            description_index: 0,
            x0: 0.0,
            y0: 0.0,
            x1: 10.0,
            y1: 20.0,
            confidence: 0.8,
        }];
        assert!(validate_links(&descs, &boxes, &gallery).is_empty());
    }

    #[test]
    fn box_with_missing_gallery_reported_once() {
        let gallery = vec![rec("g1", Role::Gallery, "A")];
        let boxes = vec![BoundingBox {
            gallery_id: "g404".into(),
            description_index: 0,
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
            confidence: 0.5,
        }];
        let report = validate_links(&[], &boxes, &gallery);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].gallery_id(), "g404");
    }

    #[test]
    fn description_and_box_files_parse() {
        let d = parse_descriptions("g1\t0\tblack wool coat\ng1\t1\twhite shirt\n").unwrap();
        assert_eq!(d.len(), 2);
        assert!(parse_descriptions("g1\t0\tx\ng1\t0\ty\n").is_err());
        assert!(parse_descriptions("g1\t0\t\n").is_err());
        let b = parse_boxes("g1\t0\t1\t2\t30\t40\t0.9\n").unwrap();
        assert_eq!(b[0].x1, 30.0);
        assert!(parse_boxes("g1\t0\t5\t2\t3\t40\t0.9\n").is_err());
        assert!(parse_boxes("g1\t0\t1\t2\t3\t40\t1.5\n").is_err());
    }
}
