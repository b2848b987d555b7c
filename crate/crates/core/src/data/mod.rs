//! Cross-regional dataset plumbing: manifests of labelled images, the
//! raw-label mapping, region holdout splits and coverage tables.
//!
//! Source datasets are expected in image-folder layout,
//! `<source dir>/<raw label>/<image file>`. Every raw label found on disk
//! must be mapped either to a canonical class id or to `DROP`.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::pixels_to_inputs;

pub use synthetic::{generate_synthetic_regions, SyntheticSpec};

pub const MAPPING_TEMPLATE_TOML: &str = include_str!("../../assets/mapping_template.toml");

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "ppm", "pgm", "pbm", "bmp"];
const MANIFEST_FILE: &str = "manifest.jsonl";
const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_ref: String,
    pub source_id: String,
    pub region: String,
    pub raw_label: String,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub region: String,
    pub year: Option<u32>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<SampleRecord>,
    provenance: BTreeMap<String, Provenance>,
}

impl Manifest {
    /// Validates and sorts records by `(source_id, image_ref)`.
    pub fn new(mut records: Vec<SampleRecord>, provenance: BTreeMap<String, Provenance>) -> Result<Self> {
        records.sort_by(|a, b| (&a.source_id, &a.image_ref).cmp(&(&b.source_id, &b.image_ref)));
        let mut seen = BTreeSet::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            if r.region.trim().is_empty() {
                return Err(Error::Data(format!("record `{}` has an empty region", r.image_ref)));
            }
            if !seen.insert(r.image_ref.as_str()) {
                return Err(Error::Duplicate(r.image_ref.clone()));
            }
            *counts.entry(r.source_id.as_str()).or_default() += 1;
        }
        for (source, p) in &provenance {
            let found = counts.get(source.as_str()).copied().unwrap_or(0);
            if found != p.count {
                return Err(Error::Data(format!(
                    "source `{source}` declares {} records, manifest has {found}",
                    p.count
                )));
            }
        }
        if let Some(source) = counts.keys().find(|s| !provenance.contains_key(**s)) {
            return Err(Error::Data(format!("source `{source}` has no provenance entry")));
        }
        Ok(Self { records, provenance })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &BTreeMap<String, Provenance> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn regions(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.region.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 over the record lines and the provenance header.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_jsonl().as_bytes());
        h.update(serde_json::to_string(&self.provenance).expect("provenance serializes").as_bytes());
        hex::encode(h.finalize())
    }

    /// Writes `manifest.jsonl` and `provenance.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), self.to_jsonl())?;
        fs::write(dir.join(PROVENANCE_FILE), serde_json::to_string_pretty(&self.provenance)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file = fs::File::open(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Data(format!("cannot open manifest in {}: {e}", dir.display())))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let provenance = serde_json::from_str(&fs::read_to_string(dir.join(PROVENANCE_FILE))?)?;
        Self::new(records, provenance)
    }
}

/// Target of a raw label in the mapping config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelTarget {
    Class(usize),
    Drop,
}

impl Serialize for LabelTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LabelTarget::Class(id) => s.serialize_u64(*id as u64),
            LabelTarget::Drop => s.serialize_str("DROP"),
        }
    }
}

impl<'de> Deserialize<'de> for LabelTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u64),
            Marker(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(LabelTarget::Class(id as usize)),
            Raw::Marker(m) if m == "DROP" => Ok(LabelTarget::Drop),
            Raw::Marker(m) => Err(serde::de::Error::custom(format!(
                "expected a class id or \"DROP\", found \"{m}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub region: String,
    pub year: Option<u32>,
}

/// `{source_id -> {raw_label -> class_id | DROP}}` plus per-source region.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MappingConfig {
    #[serde(default)]
    pub sources: BTreeMap<String, SourceInfo>,
    #[serde(default)]
    pub mapping: BTreeMap<String, BTreeMap<String, LabelTarget>>,
}

impl MappingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read mapping {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The shipped template: GTSRB filled in, other sources empty.
    pub fn template() -> Self {
        Self::from_toml(MAPPING_TEMPLATE_TOML).expect("bundled mapping template is valid")
    }

    pub fn resolve(&self, source_id: &str, raw_label: &str) -> Result<LabelTarget> {
        self.mapping
            .get(source_id)
            .and_then(|m| m.get(raw_label))
            .cloned()
            .ok_or_else(|| Error::Mapping {
                source_id: source_id.to_owned(),
                label: raw_label.to_owned(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestBuild {
    pub manifest: Manifest,
    /// `(source_id, raw_label) -> images dropped`.
    pub dropped: BTreeMap<(String, String), usize>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion {
            path: dir.to_owned(),
            reason: e.to_string(),
        })?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Scans `(source_id, directory)` pairs and maps every image to its
/// canonical class. Images under `DROP` labels are counted, not emitted.
pub fn build_manifest(sources: &[(String, PathBuf)], mapping: &MappingConfig) -> Result<ManifestBuild> {
    let mut records = Vec::new();
    let mut provenance = BTreeMap::new();
    let mut dropped = BTreeMap::new();
    for (source_id, root) in sources {
        let info = mapping
            .sources
            .get(source_id)
            .ok_or_else(|| Error::Config(format!("source `{source_id}` is missing from the mapping config")))?;
        let mut count = 0;
        for label_dir in sorted_entries(root)? {
            if !label_dir.is_dir() {
                continue;
            }
            let raw_label = label_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Ingestion {
                    path: label_dir.clone(),
                    reason: "label directory name is not utf-8".into(),
                })?
                .to_owned();
            let images: Vec<PathBuf> = sorted_entries(&label_dir)?
                .into_iter()
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            if images.is_empty() {
                continue;
            }
            let class_id = match mapping.resolve(source_id, &raw_label)? {
                LabelTarget::Drop => {
                    *dropped.entry((source_id.clone(), raw_label)).or_default() += images.len();
                    continue;
                }
                LabelTarget::Class(id) => id,
            };
            for path in images {
                image::image_dimensions(&path).map_err(|e| Error::Ingestion {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                let canonical = fs::canonicalize(&path)?;
                records.push(SampleRecord {
                    image_ref: canonical.to_string_lossy().into_owned(),
                    source_id: source_id.clone(),
                    region: info.region.clone(),
                    raw_label: raw_label.clone(),
                    class_id,
                });
                count += 1;
            }
        }
        let previous = provenance.insert(
            source_id.clone(),
            Provenance {
                region: info.region.clone(),
                year: info.year,
                count,
            },
        );
        if previous.is_some() {
            return Err(Error::Config(format!("source `{source_id}` listed twice")));
        }
    }
    Ok(ManifestBuild {
        manifest: Manifest::new(records, provenance)?,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSplit {
    pub train_regions: BTreeSet<String>,
    pub test_regions: BTreeSet<String>,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub warnings: Vec<String>,
}

/// Partitions records by region: listed regions train, all others test.
pub fn split_by_region(manifest: &Manifest, train_regions: &[&str]) -> Result<RegionSplit> {
    let present = manifest.regions();
    let train_set: BTreeSet<String> = train_regions.iter().map(|s| s.to_string()).collect();
    if let Some(unknown) = train_set.iter().find(|r| !present.contains(*r)) {
        return Err(Error::Region(unknown.clone()));
    }
    let (train, test): (Vec<_>, Vec<_>) = manifest
        .records()
        .iter()
        .cloned()
        .partition(|r| train_set.contains(&r.region));
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let test_regions: BTreeSet<String> = present.difference(&train_set).cloned().collect();
    let mut warnings = Vec::new();
    if test.is_empty() {
        let msg = "every region is used for training; the test split is empty".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(RegionSplit {
        train_regions: train_set,
        test_regions,
        train,
        test,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub region: String,
    pub classes_present: BTreeSet<usize>,
    pub image_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// Classes in `0..n_classes` that no region provides.
    pub missing_classes: BTreeSet<usize>,
}

pub fn coverage_check(manifest: &Manifest, n_classes: usize) -> CoverageReport {
    let mut by_region: BTreeMap<&str, CoverageRow> = BTreeMap::new();
    for r in manifest.records() {
        let row = by_region.entry(r.region.as_str()).or_insert_with(|| CoverageRow {
            region: r.region.clone(),
            classes_present: BTreeSet::new(),
            image_count: 0,
        });
        row.classes_present.insert(r.class_id);
        row.image_count += 1;
    }
    let union: BTreeSet<usize> = by_region.values().flat_map(|r| r.classes_present.iter().copied()).collect();
    CoverageReport {
        rows: by_region.into_values().collect(),
        missing_classes: (0..n_classes).filter(|c| !union.contains(c)).collect(),
    }
}

/// One row of the published regional source table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegistryRow {
    pub no: u32,
    pub region: &'static str,
    pub source: &'static str,
    pub categories: u32,
    pub images: u32,
    pub year: u32,
}

pub const REGION_REGISTRY: [RegistryRow; 10] = [
    RegistryRow { no: 1, region: "China", source: "TT100", categories: 36, images: 13012, year: 2016 },
    RegistryRow { no: 2, region: "Germany", source: "GTSRB", categories: 31, images: 35939, year: 2013 },
    RegistryRow { no: 3, region: "Iran", source: "PTSD", categories: 26, images: 11198, year: 2024 },
    RegistryRow { no: 4, region: "India", source: "IndiaTS", categories: 41, images: 3723, year: 2022 },
    RegistryRow { no: 5, region: "Turkey", source: "TurkeyTS", categories: 43, images: 9663, year: 2020 },
    RegistryRow { no: 6, region: "Belgium", source: "BelgiumTS", categories: 36, images: 4194, year: 2014 },
    RegistryRow { no: 7, region: "Russia", source: "RTSD", categories: 44, images: 56138, year: 2016 },
    RegistryRow { no: 8, region: "World", source: "MTSD", categories: 45, images: 37053, year: 2020 },
    RegistryRow { no: 9, region: "Slovenia", source: "DFG", categories: 42, images: 4769, year: 2019 },
    RegistryRow { no: 10, region: "America", source: "ARTS", categories: 27, images: 15393, year: 2019 },
];

pub fn registry_row(region: &str) -> Option<&'static RegistryRow> {
    REGION_REGISTRY.iter().find(|r| r.region == region)
}

/// Square 8-bit RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub side: u32,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.rgb))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::RgbImage::from_raw(self.side, self.side, self.rgb.clone())
            .ok_or_else(|| Error::Data("raster buffer does not match its side".into()))?;
        img.save(path)?;
        Ok(())
    }

    /// Loads any supported image and resamples it to `side x side` RGB.
    pub fn load(path: impl AsRef<Path>, side: u32) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Ingestion {
                path: path.to_owned(),
                reason: e.to_string(),
            })?
            .to_rgb8();
        let img = if img.width() == side && img.height() == side {
            img
        } else {
            image::imageops::resize(&img, side, side, image::imageops::FilterType::Triangle)
        };
        Ok(Self {
            side,
            rgb: img.into_raw(),
        })
    }
}

/// Model-ready view of a list of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    /// One row per image, values centred on zero.
    pub pixels: Array2<f64>,
    pub labels: Vec<usize>,
    pub regions: Vec<String>,
    pub ids: Vec<String>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Samples {
        Samples {
            pixels: self.pixels.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            regions: indices.iter().map(|&i| self.regions[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Deterministic holdout: every `k`-th sample (by position) goes to the
    /// second part, where `k = round(1 / fraction)`.
    pub fn holdout(&self, fraction: f64) -> Result<(Samples, Samples)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Range(format!("holdout fraction {fraction} must be in (0, 1)")));
        }
        let k = ((1.0 / fraction).round() as usize).max(2);
        let (held, kept): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|i| i % k == k - 1);
        Ok((self.select(&kept), self.select(&held)))
    }
}

/// A manifest plus the rasters its records refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub side: u32,
    images: BTreeMap<String, Raster>,
}

impl Dataset {
    pub fn from_parts(manifest: Manifest, side: u32, images: BTreeMap<String, Raster>) -> Result<Self> {
        for r in manifest.records() {
            match images.get(&r.image_ref) {
                Some(img) if img.side == side => {}
                Some(_) => return Err(Error::Data(format!("`{}` has the wrong raster size", r.image_ref))),
                None => return Err(Error::Data(format!("no raster for `{}`", r.image_ref))),
            }
        }
        Ok(Self {
            manifest,
            side,
            images,
        })
    }

    /// Loads a saved manifest and reads every image it references. Relative
    /// image references resolve against `dir`.
    pub fn load(dir: impl AsRef<Path>, side: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::load(dir)?;
        let mut images = BTreeMap::new();
        for r in manifest.records() {
            images.insert(r.image_ref.clone(), Raster::load(dir.join(&r.image_ref), side)?);
        }
        Self::from_parts(manifest, side, images)
    }

    /// Saves the manifest and, for relative references, the rasters as PNG.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.manifest.save(dir)?;
        for r in self.manifest.records() {
            if Path::new(&r.image_ref).is_absolute() {
                continue;
            }
            let path = dir.join(&r.image_ref);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            self.images[&r.image_ref].save_png(path)?;
        }
        Ok(())
    }

    pub fn raster(&self, image_ref: &str) -> Option<&Raster> {
        self.images.get(image_ref)
    }

    pub fn samples(&self, records: &[SampleRecord]) -> Result<Samples> {
        let width = 3 * (self.side * self.side) as usize;
        let mut pixels = Array2::zeros((records.len(), width));
        for (row, r) in records.iter().enumerate() {
            let raster = self
                .images
                .get(&r.image_ref)
                .ok_or_else(|| Error::Data(format!("no raster for `{}`", r.image_ref)))?;
            pixels.row_mut(row).assign(&pixels_to_inputs(&raster.rgb));
        }
        Ok(Samples {
            pixels,
            labels: records.iter().map(|r| r.class_id).collect(),
            regions: records.iter().map(|r| r.region.clone()).collect(),
            ids: records.iter().map(|r| r.image_ref.clone()).collect(),
        })
    }
}

/// Writes a coverage table as aligned text.
pub fn write_coverage<W: Write>(report: &CoverageReport, mut out: W) -> Result<()> {
    writeln!(out, "{:<16} {:>8} {:>8}", "region", "classes", "images")?;
    for row in &report.rows {
        writeln!(out, "{:<16} {:>8} {:>8}", row.region, row.classes_present.len(), row.image_count)?;
    }
    if !report.missing_classes.is_empty() {
        writeln!(out, "classes absent from every region: {:?}", report.missing_classes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(source: &str, region: &str, name: &str, class_id: usize) -> SampleRecord {
        SampleRecord {
            image_ref: format!("{source}/{name}"),
            source_id: source.into(),
            region: region.into(),
            raw_label: class_id.to_string(),
            class_id,
        }
    }

    fn registry_manifest() -> Manifest {
        let mut records = Vec::new();
        let mut provenance = BTreeMap::new();
        for row in &REGION_REGISTRY {
            for i in 0..3 {
                records.push(record(row.source, row.region, &format!("{i}.png"), i));
            }
            provenance.insert(
                row.source.to_string(),
                Provenance {
                    region: row.region.into(),
                    year: Some(row.year),
                    count: 3,
                },
            );
        }
        Manifest::new(records, provenance).unwrap()
    }

    #[test]
    fn holdout_on_two_registry_regions_tests_the_other_eight() {
        let manifest = registry_manifest();
        let split = split_by_region(&manifest, &["China", "Slovenia"]).unwrap();
        let expected: BTreeSet<String> = ["Germany", "Iran", "India", "Turkey", "Belgium", "Russia", "World", "America"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(split.test_regions, expected);
        assert_eq!(split.train.len() + split.test.len(), manifest.len());
        assert!(split.train.iter().all(|r| split.train_regions.contains(&r.region)));
        assert!(split.test.iter().all(|r| split.test_regions.contains(&r.region)));
    }

    #[test]
    fn degenerate_and_invalid_splits() {
        let manifest = registry_manifest();
        let all: Vec<&str> = REGION_REGISTRY.iter().map(|r| r.region).collect();
        let split = split_by_region(&manifest, &all).unwrap();
        assert!(split.test.is_empty());
        assert_eq!(split.warnings.len(), 1);
        assert!(matches!(split_by_region(&manifest, &["Atlantis"]), Err(Error::Region(_))));
        assert!(matches!(split_by_region(&manifest, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn registry_rows_match_published_table() {
        let china = registry_row("China").unwrap();
        assert_eq!((china.source, china.categories, china.images), ("TT100", 36, 13012));
        let germany = registry_row("Germany").unwrap();
        assert_eq!((germany.source, germany.categories, germany.images), ("GTSRB", 31, 35939));
        assert_eq!(REGION_REGISTRY.len(), 10);
    }

    #[test]
    fn coverage_flags_missing_classes() {
        let manifest = registry_manifest();
        let report = coverage_check(&manifest, 5);
        assert_eq!(report.rows.len(), 10);
        assert!(report.rows.iter().all(|r| r.image_count == 3 && r.classes_present.len() == 3));
        assert_eq!(report.missing_classes, BTreeSet::from([3, 4]));
        assert!(coverage_check(&manifest, 3).missing_classes.is_empty());
    }

    #[test]
    fn manifest_invariants() {
        let a = record("S", "R", "x.png", 0);
        let prov = BTreeMap::from([(
            "S".to_string(),
            Provenance {
                region: "R".into(),
                year: None,
                count: 2,
            },
        )]);
        assert!(matches!(
            Manifest::new(vec![a.clone(), a.clone()], prov.clone()),
            Err(Error::Duplicate(_))
        ));
        assert!(matches!(Manifest::new(vec![a], prov), Err(Error::Data(_))));
    }

    #[test]
    fn mapping_template_agrees_with_taxonomy_aliases() {
        let mapping = MappingConfig::template();
        let taxonomy = crate::prompts::Taxonomy::default_signs();
        let gtsrb = &mapping.mapping["GTSRB"];
        for entry in taxonomy.entries() {
            for alias in entry.aliases.get("GTSRB").into_iter().flatten() {
                assert_eq!(gtsrb[alias], LabelTarget::Class(entry.class_id), "{alias}");
            }
        }
        assert_eq!(gtsrb.len(), 43);
        assert_eq!(mapping.sources.len(), 10);
        let regions: BTreeSet<&str> = mapping.sources.values().map(|s| s.region.as_str()).collect();
        let registry: BTreeSet<&str> = REGION_REGISTRY.iter().map(|r| r.region).collect();
        assert_eq!(regions, registry);
    }

    #[test]
    fn samples_holdout_is_deterministic_partition() {
        let s = Samples {
            pixels: Array2::zeros((10, 3)),
            labels: (0..10).collect(),
            regions: vec!["r".into(); 10],
            ids: (0..10).map(|i| i.to_string()).collect(),
        };
        let (kept, held) = s.holdout(0.2).unwrap();
        assert_eq!(held.labels, vec![4, 9]);
        assert_eq!(kept.len(), 8);
        assert!(s.holdout(0.0).is_err());
    }
}
