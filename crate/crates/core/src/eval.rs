//! Cross-region accuracy reports, deltas against a baseline, and embedding
//! export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, RegionSplit, Samples};
use crate::error::{Error, Result};
use crate::model::ImageClassifier;
use crate::weights::{write_archive, ParameterSet, Tensor};

const AVERAGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunInfo {
    pub strategy: String,
    pub seed: u64,
    pub checkpoint_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub per_region: BTreeMap<String, f64>,
    pub n_per_region: BTreeMap<String, usize>,
    /// Unweighted mean over the reported regions.
    pub average: f64,
    /// Mean weighted by per-region sample counts. Not the headline number.
    pub sample_weighted_average: f64,
    /// Test regions left out because they had no samples.
    #[serde(default)]
    pub excluded: Vec<String>,
    pub run: RunInfo,
}

impl RegionReport {
    pub fn from_accuracies(
        per_region: BTreeMap<String, f64>,
        n_per_region: BTreeMap<String, usize>,
        run: RunInfo,
    ) -> Result<Self> {
        if per_region.is_empty() {
            return Err(Error::Data("a report needs at least one region".into()));
        }
        if per_region.keys().ne(n_per_region.keys()) {
            return Err(Error::Data("accuracy and count tables cover different regions".into()));
        }
        if let Some((region, acc)) = per_region.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Range(format!("accuracy {acc} for `{region}` is outside [0, 1]")));
        }
        let average = per_region.values().sum::<f64>() / per_region.len() as f64;
        let total: usize = n_per_region.values().sum();
        let sample_weighted_average = if total == 0 {
            average
        } else {
            per_region.iter().map(|(r, a)| a * n_per_region[r] as f64).sum::<f64>() / total as f64
        };
        Ok(Self {
            per_region,
            n_per_region,
            average,
            sample_weighted_average,
            excluded: Vec::new(),
            run,
        })
    }

    /// Rejects reports whose average is not the mean of their regions.
    pub fn validate(&self) -> Result<()> {
        let recomputed = Self::from_accuracies(self.per_region.clone(), self.n_per_region.clone(), self.run.clone())?;
        if (recomputed.average - self.average).abs() > AVERAGE_TOLERANCE {
            return Err(Error::Data(format!(
                "report average {} differs from the mean of its regions {}",
                self.average, recomputed.average
            )));
        }
        Ok(())
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.per_region.keys().map(String::as_str).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Top-1 accuracy per test region. Regions without samples are excluded
/// with a warning rather than scored as zero.
pub fn evaluate(
    classifier: &dyn ImageClassifier,
    test: &Samples,
    test_regions: &BTreeSet<String>,
    run: RunInfo,
) -> Result<RegionReport> {
    let preds = if test.is_empty() {
        Vec::new()
    } else {
        classifier.classify(test.pixels.view())?
    };
    let mut hits: BTreeMap<String, (usize, usize)> = test_regions.iter().map(|r| (r.clone(), (0, 0))).collect();
    for ((pred, &label), region) in preds.iter().zip(&test.labels).zip(&test.regions) {
        if let Some(entry) = hits.get_mut(region) {
            entry.0 += usize::from(pred.class_id == label);
            entry.1 += 1;
        }
    }
    let mut excluded = Vec::new();
    let mut per_region = BTreeMap::new();
    let mut n_per_region = BTreeMap::new();
    for (region, (correct, total)) in hits {
        if total == 0 {
            log::warn!("test region `{region}` has no samples and is excluded");
            excluded.push(region);
            continue;
        }
        per_region.insert(region.clone(), correct as f64 / total as f64);
        n_per_region.insert(region, total);
    }
    if per_region.is_empty() {
        return Err(Error::Data("no test region has samples".into()));
    }
    let mut report = RegionReport::from_accuracies(per_region, n_per_region, run)?;
    report.excluded = excluded;
    Ok(report)
}

/// Scores the test side of `split`.
pub fn evaluate_split(
    classifier: &dyn ImageClassifier,
    dataset: &Dataset,
    split: &RegionSplit,
    run: RunInfo,
) -> Result<RegionReport> {
    let test = dataset.samples(&split.test)?;
    evaluate(classifier, &test, &split.test_regions, run)
}

/// Difference of two averages in percentage points.
pub fn delta_points(candidate_average: f64, baseline_average: f64) -> f64 {
    100.0 * (candidate_average - baseline_average)
}

pub fn compare(candidate: &RegionReport, baseline: &RegionReport) -> Result<f64> {
    if candidate.regions() != baseline.regions() {
        return Err(Error::Comparability(format!(
            "regions {:?} vs {:?}",
            candidate.regions(),
            baseline.regions()
        )));
    }
    Ok(delta_points(candidate.average, baseline.average))
}

/// Aligned text table: one row per method, regions as columns, then
/// `Avg.` and the delta against `baseline` (or `-` when absent).
pub fn render_table(rows: &[(&str, &RegionReport)], baseline: Option<&RegionReport>) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Err(Error::Data("nothing to render".into()));
    };
    let regions: Vec<&str> = first.regions().into_iter().collect();
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Method".len());
    let col = |r: &str| r.len().max(6);
    let mut out = String::new();
    write!(out, "{:<name_width$}", "Method").expect("string write");
    for r in &regions {
        write!(out, "  {:>w$}", r, w = col(r)).expect("string write");
    }
    writeln!(out, "  {:>6}  {:>7}", "Avg.", "Δ (%)").expect("string write");
    for (name, report) in rows {
        if report.regions() != first.regions() {
            return Err(Error::Comparability(format!("`{name}` covers different regions")));
        }
        write!(out, "{name:<name_width$}").expect("string write");
        for r in &regions {
            write!(out, "  {:>w$.4}", report.per_region[*r], w = col(r)).expect("string write");
        }
        let delta = match baseline {
            Some(b) if !std::ptr::eq(*report, b) && *report != b => format!("{:+.2}", compare(report, b)?),
            _ => "-".to_string(),
        };
        writeln!(out, "  {:>6.4}  {:>7}", report.average, delta).expect("string write");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingExport {
    pub rows: usize,
    pub dim: usize,
    pub array_digest: String,
    pub table_digest: String,
}

/// Writes `embeddings.bin` (a named-array archive holding one `(n, d)`
/// float32 array called `embeddings`) and `embeddings.csv` with
/// `sample_id,region,class_id,predicted_id` per row.
pub fn export_embeddings(classifier: &dyn ImageClassifier, samples: &Samples, dir: impl AsRef<Path>) -> Result<EmbeddingExport> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to export".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let embs = classifier.embed(samples.pixels.view())?;
    let preds = classifier.classify(samples.pixels.view())?;
    let (rows, dim) = embs.dim();
    let tensor = Tensor::new(vec![rows, dim], embs.iter().map(|&v| v as f32).collect())?;
    let set = ParameterSet::new().with("embeddings", tensor)?;
    let array_path = dir.join("embeddings.bin");
    write_archive(&array_path, &set)?;
    let table_path = dir.join("embeddings.csv");
    let mut writer = csv::Writer::from_path(&table_path)?;
    writer.write_record(["sample_id", "region", "class_id", "predicted_id"])?;
    for i in 0..rows {
        writer.write_record([
            samples.ids[i].as_str(),
            samples.regions[i].as_str(),
            &samples.labels[i].to_string(),
            &preds[i].class_id.to_string(),
        ])?;
    }
    writer.flush()?;
    drop(writer);
    let digest = |p: &Path| -> Result<String> { Ok(hex::encode(Sha256::digest(fs::read(p)?))) };
    Ok(EmbeddingExport {
        rows,
        dim,
        array_digest: digest(&array_path)?,
        table_digest: digest(&table_path)?,
    })
}
