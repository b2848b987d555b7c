#![allow(dead_code)]

use signtune_core::data::{split_by_region, Dataset, RegionSplit, Samples, SyntheticSpec};
use signtune_core::model::{EncoderConfig, ReferenceEncoders};
use signtune_core::prompts::{generate_prompt_set, PromptMode, PromptSet, ScenarioPools, Taxonomy};
use signtune_core::training::TrainData;

pub const DESK_CLASSES: usize = 6;
pub const DESK_REGIONS: usize = 3;

/// Synthetic cross-region setup: train on region 0, test on the others.
pub struct Desk {
    pub dataset: Dataset,
    pub split: RegionSplit,
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub prompts: PromptSet,
    pub encoders: ReferenceEncoders,
}

impl Desk {
    pub fn new(seed: u64, samples_per_class_region: usize, shift: f64) -> Self {
        let dataset = SyntheticSpec {
            n_classes: DESK_CLASSES,
            n_regions: DESK_REGIONS,
            samples_per_class_region,
            style_shift_strength: shift,
            seed,
        }
        .generate()
        .unwrap();
        let split = split_by_region(&dataset.manifest, &[SyntheticSpec::region_name(0).as_str()]).unwrap();
        let (train, val) = dataset.samples(&split.train).unwrap().holdout(0.2).unwrap();
        let test = dataset.samples(&split.test).unwrap();
        let taxonomy = Taxonomy::default_signs().truncated(DESK_CLASSES).unwrap();
        let prompts =
            generate_prompt_set(&taxonomy, &ScenarioPools::default_english(), 8, PromptMode::Combined, seed).unwrap();
        let encoders = ReferenceEncoders::init(&encoder_config(), seed).unwrap();
        Self {
            dataset,
            split,
            train,
            val,
            test,
            prompts,
            encoders,
        }
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            val: &self.val,
            prompts: &self.prompts,
        }
    }
}

pub fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        n_classes: DESK_CLASSES,
        ..EncoderConfig::default()
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max(max |a|, max |b|)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
