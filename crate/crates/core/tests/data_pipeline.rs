use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use signtune_core::data::*;
use signtune_core::Error;

fn write_png(path: &Path, shade: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    Raster {
        side: 4,
        rgb: vec![shade; 48],
    }
    .save_png(path)
    .unwrap();
}

fn mapping(text: &str) -> MappingConfig {
    MappingConfig::from_toml(text).unwrap()
}

const TWO_SOURCES: &str = r#"
[sources.TT100]
region = "China"
year = 2016

[sources.DFG]
region = "Slovenia"
year = 2019

[mapping.TT100]
"pl30" = 15
"pn" = 4
"io" = "DROP"

[mapping.DFG]
"II-2" = 0
"#;

fn fixture(root: &Path) -> Vec<(String, PathBuf)> {
    write_png(&root.join("tt100/pl30/a.png"), 10);
    write_png(&root.join("tt100/pn/b.png"), 20);
    write_png(&root.join("tt100/io/c.png"), 30);
    write_png(&root.join("dfg/II-2/d.png"), 40);
    fs::write(root.join("tt100/pn/notes.txt"), "not an image").unwrap();
    vec![
        ("TT100".to_string(), root.join("tt100")),
        ("DFG".to_string(), root.join("dfg")),
    ]
}

#[test]
fn builds_manifest_with_drop_report() {
    let dir = tempfile::tempdir().unwrap();
    let sources = fixture(dir.path());
    let built = build_manifest(&sources, &mapping(TWO_SOURCES)).unwrap();
    assert_eq!(built.manifest.len(), 3);
    assert_eq!(built.manifest.regions().len(), 2);
    assert_eq!(built.dropped, BTreeMap::from([(("TT100".to_string(), "io".to_string()), 1)]));
    assert_eq!(built.manifest.provenance()["TT100"].count, 2);
    assert_eq!(built.manifest.provenance()["DFG"].year, Some(2019));
    let ids: Vec<usize> = built.manifest.records().iter().map(|r| r.class_id).collect();
    assert_eq!(ids, vec![0, 15, 4]);
}

#[test]
fn rebuild_is_idempotent_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let sources = fixture(dir.path());
    let a = build_manifest(&sources, &mapping(TWO_SOURCES)).unwrap().manifest;
    let b = build_manifest(&sources, &mapping(TWO_SOURCES)).unwrap().manifest;
    assert_eq!(a.digest(), b.digest());
    let out = dir.path().join("manifest");
    a.save(&out).unwrap();
    assert_eq!(Manifest::load(&out).unwrap().digest(), a.digest());
}

#[test]
fn unmapped_label_names_label_and_source() {
    let dir = tempfile::tempdir().unwrap();
    let sources = fixture(dir.path());
    write_png(&dir.path().join("tt100/pm30/e.png"), 50);
    match build_manifest(&sources, &mapping(TWO_SOURCES)) {
        Err(Error::Mapping { source_id, label }) => {
            assert_eq!((source_id.as_str(), label.as_str()), ("TT100", "pm30"));
        }
        other => panic!("expected a mapping error, got {other:?}"),
    }
}

#[test]
fn unreadable_image_is_an_ingestion_error() {
    let dir = tempfile::tempdir().unwrap();
    let sources = fixture(dir.path());
    fs::write(dir.path().join("dfg/II-2/broken.png"), b"not a png").unwrap();
    assert!(matches!(
        build_manifest(&sources, &mapping(TWO_SOURCES)),
        Err(Error::Ingestion { .. })
    ));
}

#[test]
fn duplicate_image_across_sources_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("shared/II-2/x.png"), 1);
    let cfg = mapping(
        r#"
[sources.A]
region = "North"
[sources.B]
region = "South"
[mapping.A]
"II-2" = 1
[mapping.B]
"II-2" = 1
"#,
    );
    let sources = vec![
        ("A".to_string(), dir.path().join("shared")),
        ("B".to_string(), dir.path().join("shared")),
    ];
    assert!(matches!(build_manifest(&sources, &cfg), Err(Error::Duplicate(_))));
}

#[test]
fn bad_mapping_marker_is_rejected() {
    assert!(MappingConfig::from_toml("[mapping.X]\n\"a\" = \"SKIP\"\n").is_err());
}

#[test]
fn split_conserves_and_separates_regions() {
    let ds = generate_synthetic_regions(4, 4, 3, 0.5, 2).unwrap();
    for train in [vec!["region-0"], vec!["region-1", "region-3"]] {
        let split = split_by_region(&ds.manifest, &train).unwrap();
        assert_eq!(split.train.len() + split.test.len(), ds.manifest.len());
        assert!(split.train_regions.is_disjoint(&split.test_regions));
        assert!(split.test.iter().all(|r| !split.train_regions.contains(&r.region)));
    }
}

#[test]
fn synthetic_full_coverage_has_no_flags() {
    let ds = generate_synthetic_regions(46, 2, 1, 1.0, 0).unwrap();
    let report = coverage_check(&ds.manifest, 46);
    assert!(report.missing_classes.is_empty());
    assert!(report.rows.iter().all(|r| r.classes_present.len() == 46));
}

/// Nearest-centroid probe on raw pixels, fitted on even sample indices and
/// scored on odd ones within each region.
fn nearest_centroid_accuracy(samples: &Samples, n_classes: usize) -> f64 {
    let train: Vec<usize> = (0..samples.len()).step_by(2).collect();
    let test: Vec<usize> = (1..samples.len()).step_by(2).collect();
    let width = samples.pixels.ncols();
    let mut centroids = Array2::<f64>::zeros((n_classes, width));
    let mut counts = vec![0.0; n_classes];
    for &i in &train {
        let c = samples.labels[i];
        centroids.row_mut(c).scaled_add(1.0, &samples.pixels.row(i));
        counts[c] += 1.0;
    }
    for (c, n) in counts.iter().enumerate() {
        centroids.row_mut(c).mapv_inplace(|v| v / n);
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let x = samples.pixels.row(i);
            let dists: Array1<f64> = centroids.map_axis(Axis(1), |c| (&c - &x).mapv(|v| v * v).sum());
            let best = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .unwrap();
            best == samples.labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn synthetic_classes_are_separable_within_a_region() {
    let ds = generate_synthetic_regions(6, 3, 20, 0.0, 4).unwrap();
    for region in ds.manifest.regions() {
        let records: Vec<SampleRecord> =
            ds.manifest.records().iter().filter(|r| r.region == region).cloned().collect();
        let samples = ds.samples(&records).unwrap();
        let acc = nearest_centroid_accuracy(&samples, 6);
        assert!(acc >= 0.95, "{region}: {acc}");
    }
}

#[test]
fn synthetic_dataset_saves_and_reloads() {
    let ds = generate_synthetic_regions(3, 2, 2, 0.4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("synthetic-seed9");
    ds.save(&root).unwrap();
    assert!(root.join("r1/c02/0001.png").is_file());
    let back = Dataset::load(&root, 32).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.manifest.digest(), ds.manifest.digest());
}

#[test]
fn same_seed_same_digest_different_seed_differs() {
    let a = generate_synthetic_regions(6, 3, 4, 0.4, 1).unwrap();
    let b = generate_synthetic_regions(6, 3, 4, 0.4, 1).unwrap();
    let c = generate_synthetic_regions(6, 3, 4, 0.4, 2).unwrap();
    let pixels = |d: &Dataset| d.samples(d.manifest.records()).unwrap().pixels;
    assert_eq!(a.manifest.digest(), b.manifest.digest());
    assert_eq!(pixels(&a), pixels(&b));
    assert_ne!(pixels(&a), pixels(&c));
}
